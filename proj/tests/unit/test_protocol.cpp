#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>

#include <chrono>
#include <cstring>
#include <thread>

#include "meshdiff/errors.hpp"
#include "meshdiff/protocol.hpp"
#include "meshdiff/remote_backend.hpp"
#include "meshdiff/rng.hpp"
#include "meshdiff/toy_backend.hpp"
#include "scene.hpp"

using namespace meshdiff;
using namespace std::chrono_literals;
namespace proto = meshdiff::protocol;

namespace {

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_f32(std::vector<std::uint8_t>& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

// Listening socket on an ephemeral loopback port.
struct RawListener {
    Socket sock;
    std::uint16_t port = 0;
    RawListener() {
        sock = Socket(::socket(AF_INET, SOCK_STREAM, 0));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        REQUIRE(::bind(sock.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
        REQUIRE(::listen(sock.fd(), 4) == 0);
        socklen_t len = sizeof addr;
        ::getsockname(sock.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
        port = ntohs(addr.sin_port);
    }
};

// Backend wrapper that can misbehave on demand.
class FaultyBackend : public Backend {
public:
    enum class Mode { wrong_shape, throws, slow, no_pullback };
    explicit FaultyBackend(Mode m) : mode_(m) {}
    std::vector<Image> predict_noise(const DenoiseRequest& r) override {
        if (mode_ == Mode::wrong_shape) return {Image(r.latents[0].height + 1, r.latents[0].width, 4)};
        if (mode_ == Mode::throws) throw std::runtime_error("model exploded");
        if (mode_ == Mode::slow) std::this_thread::sleep_for(400ms);
        return toy_.predict_noise(r);
    }
    std::vector<Image> decode(const DecodeRequest& r) override { return toy_.decode(r); }
    std::vector<Image> decode_pullback(const PullbackRequest& r) override {
        if (mode_ == Mode::no_pullback) throw PullbackUnsupported("no gradients here");
        return toy_.decode_pullback(r);
    }
    std::string name() const override { return "faulty"; }

private:
    Mode mode_;
    ToyTargetBackend toy_;
};

DenoiseRequest sample_denoise() {
    DenoiseRequest r;
    r.latents = {gaussian_image(2, 3, 4, 1), gaussian_image(2, 3, 4, 2)};
    r.prompts = {"a chair, front view", "a chair, side view"};
    r.depth_maps = std::vector<Image>{Image(16, 24, 1, 0.25), Image(16, 24, 1, 0.75)};
    r.timestep_index = 3;
    r.timestep = 61;
    r.alpha_bar_t = 0.8;
    r.guidance_scale = 9.0;
    r.request_id = 42;
    return r;
}

} // namespace

TEST_CASE("frame layout is bit-exact") {
    proto::Message m;
    m.header = {{"type", "decode"}, {"request_id", 7}};
    m.tensors.push_back({"latents", {1, 1, 1, 4}, {1.0f, -2.5f, 0.0f, 3.25f}});
    std::vector<std::uint8_t> expected;
    const std::string header = R"({"request_id":7,"tensors":[{"name":"latents","shape":[1,1,1,4]}],"type":"decode"})";
    append_u64(expected, header.size() + 1 + 16);
    expected.insert(expected.end(), header.begin(), header.end());
    expected.push_back(0);
    for (float f : {1.0f, -2.5f, 0.0f, 3.25f}) append_f32(expected, f);
    CHECK(proto::encode_frame(m) == expected);

    auto back = proto::decode_payload(expected.data() + 8, expected.size() - 8);
    CHECK(back.type() == "decode");
    CHECK(back.request_id() == 7);
    CHECK(back.tensor("latents").data == m.tensors[0].data);
    CHECK_FALSE(back.header.contains("tensors"));
}

TEST_CASE("requests survive the wire") {
    DenoiseRequest r = sample_denoise();
    auto payload = proto::encode_payload(proto::to_message(r));
    auto m = proto::decode_payload(payload.data(), payload.size());
    CHECK(m.tensor("latents").shape == std::vector<std::int64_t>{2, 2, 3, 4});
    CHECK(m.tensor("depth_maps").shape == std::vector<std::int64_t>{2, 16, 24});
    DenoiseRequest back = proto::denoise_request_from(m);
    CHECK(back.prompts == r.prompts);
    CHECK(back.timestep_index == 3);
    CHECK(back.timestep == 61);
    CHECK(back.alpha_bar_t == 0.8);
    CHECK(back.guidance_scale == 9.0);
    CHECK(back.request_id == 42);
    REQUIRE(back.depth_maps.has_value());
    CHECK((*back.depth_maps)[1].data[5] == 0.75);
    for (std::size_t i = 0; i < r.latents[0].size(); ++i)
        CHECK(back.latents[0].data[i] == static_cast<double>(static_cast<float>(r.latents[0].data[i])));

    PullbackRequest pb{{Image(1, 1, 4, 0.5)}, {Image(8, 8, 3, -1.0)}, 9};
    auto pm = proto::decode_payload(proto::encode_payload(proto::to_message(pb)).data(),
                                    proto::encode_payload(proto::to_message(pb)).size());
    auto pback = proto::pullback_request_from(pm);
    CHECK(pback.cotangents[0].data[10] == -1.0);
    CHECK(pback.request_id == 9);
}

TEST_CASE("malformed payloads are rejected") {
    auto bad = [](const std::string& text, std::size_t extra = 0) {
        std::vector<std::uint8_t> p(text.begin(), text.end());
        p.push_back(0);
        p.resize(p.size() + extra, 0);
        return proto::decode_payload(p.data(), p.size());
    };
    CHECK_THROWS_AS(proto::decode_payload(nullptr, 0), proto::ProtocolError);
    CHECK_THROWS_AS(bad("{not json"), proto::ProtocolError);
    CHECK_THROWS_AS(bad("[1,2]"), proto::ProtocolError);
    CHECK_THROWS_AS(bad(R"({"type":"decode","tensors":[{"name":"latents","shape":[1,2]}]})", 4), proto::ProtocolError);
    CHECK_THROWS_AS(bad(R"({"type":"decode"})", 4), proto::ProtocolError);
    CHECK_THROWS_AS(bad(R"({"tensors":[{"shape":[1]}]})", 4), proto::ProtocolError);
    std::vector<std::uint8_t> no_nul = {'{', '}'};
    CHECK_THROWS_AS(proto::decode_payload(no_nul.data(), no_nul.size()), proto::ProtocolError);
}

TEST_CASE("dispatch answers every request type and reports failures") {
    ToyTargetBackend toy;
    auto reply = proto::dispatch(toy, proto::to_message(sample_denoise()));
    CHECK(reply.type() == "predict_noise_result");
    CHECK(reply.request_id() == 42);
    CHECK(reply.tensor("noise").shape == std::vector<std::int64_t>{2, 2, 3, 4});

    auto dec = proto::dispatch(toy, proto::to_message(DecodeRequest{{Image(2, 2, 4)}, 5}));
    CHECK(dec.tensor("images").shape == std::vector<std::int64_t>{1, 16, 16, 3});

    proto::Message unknown;
    unknown.header = {{"type", "train"}, {"request_id", 3}};
    auto err = proto::dispatch(toy, unknown);
    CHECK(err.type() == "error");
    CHECK(err.request_id() == 3);
    CHECK(err.header["message"].get<std::string>().find("train") != std::string::npos);

    proto::Message missing;
    missing.header = {{"type", "decode"}, {"request_id", 4}};
    CHECK(proto::dispatch(toy, missing).type() == "error");
}

TEST_CASE("endpoints") {
    auto ep = parse_endpoint("localhost:8123");
    CHECK(ep.host == "localhost");
    CHECK(ep.port == 8123);
    CHECK(parse_endpoint(":9000").port == 9000);
    CHECK_THROWS(parse_endpoint("localhost"));
    CHECK_THROWS(parse_endpoint("host:99999"));
}

TEST_CASE("remote backend over a local server matches the in-process toy") {
    ToyTargetBackend toy;
    ProtocolServer server(toy, Endpoint{"127.0.0.1", 0});
    REQUIRE(server.endpoint().port != 0);
    auto remote = make_backend("remote:" + server.endpoint().to_string());
    CHECK(remote->name() == "remote:" + server.endpoint().to_string());

    DenoiseRequest r = sample_denoise();
    r.request_id = 0;
    auto local_eps = toy.predict_noise(r);
    auto wire_eps = remote->predict_noise(r);
    REQUIRE(wire_eps.size() == 2);
    // float32 on the wire.
    for (std::size_t i = 0; i < local_eps[0].size(); ++i)
        CHECK(wire_eps[0].data[i] == doctest::Approx(local_eps[0].data[i]).epsilon(1e-5));

    auto imgs = remote->decode(DecodeRequest{{Image(2, 2, 4, 0.0)}, 0});
    CHECK(imgs[0].data[0] == 0.5);
    auto grad = remote->decode_pullback(PullbackRequest{{Image(2, 2, 4)}, {Image(16, 16, 3, 1.0)}, 0});
    CHECK(grad[0].at(1, 1, 0) == doctest::Approx(64.0 * (0.298 + 0.207 + 0.208)).epsilon(1e-6));
}

TEST_CASE("concurrent clients share one server") {
    ToyTargetBackend toy;
    ProtocolServer server(toy, Endpoint{"127.0.0.1", 0});
    std::vector<std::thread> threads;
    std::atomic<int> ok{0};
    for (int t = 0; t < 4; ++t)
        threads.emplace_back([&, t] {
            RemoteBackend remote(server.endpoint(), 10s);
            for (int i = 0; i < 5; ++i) {
                auto out = remote.decode(DecodeRequest{{Image(1, 1, 4, 0.1 * t)}, 0});
                if (out.size() == 1 && out[0].height == 8) ++ok;
            }
        });
    for (auto& th : threads) th.join();
    CHECK(ok == 20);
}

TEST_CASE("empty frames get an error frame and the connection stays open") {
    ToyTargetBackend toy;
    ProtocolServer server(toy, Endpoint{"127.0.0.1", 0});
    ProtocolClient client(server.endpoint());
    client.send_raw(std::vector<std::uint8_t>(8, 0));
    auto err = client.next_unclaimed(5s);
    CHECK(err.type() == "error");
    auto ok = client.call(proto::to_message(DecodeRequest{{Image(1, 1, 4)}, 77}), 5s);
    CHECK(ok.type() == "decode_result");
    CHECK(ok.request_id() == 77);
}

TEST_CASE("responses are matched by request id, not arrival order") {
    RawListener listener;
    std::thread server([&] {
        Socket conn(::accept(listener.sock.fd(), nullptr, nullptr));
        std::vector<std::uint8_t> a, b;
        REQUIRE(read_frame(conn.fd(), a));
        REQUIRE(read_frame(conn.fd(), b));
        ToyTargetBackend toy;
        auto ma = proto::decode_payload(a.data(), a.size());
        auto mb = proto::decode_payload(b.data(), b.size());
        write_frame(conn.fd(), proto::encode_frame(proto::dispatch(toy, mb)));
        write_frame(conn.fd(), proto::encode_frame(proto::dispatch(toy, ma)));
        std::vector<std::uint8_t> rest;
        read_frame(conn.fd(), rest);
    });
    {
        ProtocolClient client(Endpoint{"127.0.0.1", listener.port});
        auto fa = client.submit(proto::to_message(DecodeRequest{{Image(1, 1, 4, 0.0)}, 1}));
        auto fb = client.submit(proto::to_message(DecodeRequest{{Image(2, 2, 4, 0.0)}, 2}));
        auto ra = fa.get();
        auto rb = fb.get();
        CHECK(ra.request_id() == 1);
        CHECK(ra.tensor("images").shape[1] == 8);
        CHECK(rb.request_id() == 2);
        CHECK(rb.tensor("images").shape[1] == 16);
    }
    server.join();
}

TEST_CASE("remote failures map to backend errors") {
    SUBCASE("wrong shape") {
        FaultyBackend bad(FaultyBackend::Mode::wrong_shape);
        ProtocolServer server(bad, Endpoint{"127.0.0.1", 0});
        RemoteBackend remote(server.endpoint(), 5s);
        CHECK_THROWS_AS(remote.predict_noise(sample_denoise()), BackendShapeError);
    }
    SUBCASE("server-side exception") {
        FaultyBackend bad(FaultyBackend::Mode::throws);
        ProtocolServer server(bad, Endpoint{"127.0.0.1", 0});
        RemoteBackend remote(server.endpoint(), 5s);
        CHECK_THROWS_AS(remote.predict_noise(sample_denoise()), RemoteError);
        // The connection is still usable afterwards.
        CHECK(remote.decode(DecodeRequest{{Image(1, 1, 4)}, 0}).size() == 1);
    }
    SUBCASE("timeout") {
        FaultyBackend slow(FaultyBackend::Mode::slow);
        ProtocolServer server(slow, Endpoint{"127.0.0.1", 0});
        RemoteBackend remote(server.endpoint(), 50ms);
        CHECK_THROWS_AS(remote.predict_noise(sample_denoise()), BackendTimeout);
    }
    SUBCASE("pullback not offered") {
        FaultyBackend nograd(FaultyBackend::Mode::no_pullback);
        ProtocolServer server(nograd, Endpoint{"127.0.0.1", 0});
        RemoteBackend remote(server.endpoint(), 5s);
        CHECK_THROWS_AS(remote.decode_pullback(PullbackRequest{{Image(1, 1, 4)}, {Image(8, 8, 3)}, 0}),
                        PullbackUnsupported);
    }
    SUBCASE("server goes away") {
        auto toy = std::make_unique<ToyTargetBackend>();
        auto server = std::make_unique<ProtocolServer>(*toy, Endpoint{"127.0.0.1", 0});
        RemoteBackend remote(server->endpoint(), 5s);
        server->stop();
        CHECK_THROWS_AS(remote.decode(DecodeRequest{{Image(1, 1, 4)}, 0}), BackendError);
    }
    SUBCASE("nothing listening") {
        RawListener l;
        const auto port = l.port;
        l.sock.close();
        CHECK_THROWS_AS(RemoteBackend(Endpoint{"127.0.0.1", port}), BackendUnavailable);
    }
}

TEST_CASE("conformance probe") {
    auto local = backend_check("toy", 10s);
    REQUIRE(local.size() == 4);
    for (const auto& r : local) CHECK_MESSAGE(r.ok, r.name << ": " << r.detail);

    ToyTargetBackend toy;
    ProtocolServer server(toy, Endpoint{"127.0.0.1", 0});
    for (const auto& r : backend_check("remote:" + server.endpoint().to_string(), 10s))
        CHECK_MESSAGE(r.ok, r.name << ": " << r.detail);

    FaultyBackend bad(FaultyBackend::Mode::wrong_shape);
    ProtocolServer bad_server(bad, Endpoint{"127.0.0.1", 0});
    auto res = backend_check("remote:" + bad_server.endpoint().to_string(), 10s);
    CHECK_FALSE(res[0].ok);
    CHECK(res[1].ok);
}
