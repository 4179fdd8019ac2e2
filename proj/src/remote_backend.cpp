#include "meshdiff/remote_backend.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>

#include "meshdiff/errors.hpp"
#include "meshdiff/rng.hpp"
#include "meshdiff/toy_backend.hpp"

namespace meshdiff {

using protocol::Message;

Endpoint parse_endpoint(const std::string& text) {
    auto colon = text.rfind(':');
    if (colon == std::string::npos) throw ConfigError("endpoint '" + text + "' must be host:port");
    Endpoint ep;
    if (colon > 0) ep.host = text.substr(0, colon);
    try {
        std::size_t used = 0;
        int port = std::stoi(text.substr(colon + 1), &used);
        if (used != text.size() - colon - 1 || port < 0 || port > 65535) throw std::out_of_range("port");
        ep.port = static_cast<std::uint16_t>(port);
    } catch (const std::logic_error&) {
        throw ConfigError("bad port in endpoint '" + text + "'");
    }
    return ep;
}

Socket& Socket::operator=(Socket&& o) noexcept {
    if (this != &o) {
        close();
        fd_ = o.release();
    }
    return *this;
}

int Socket::release() {
    int fd = fd_;
    fd_ = -1;
    return fd;
}

void Socket::close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
}

void Socket::shutdown() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

namespace {

addrinfo* resolve(const Endpoint& ep, bool passive) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    if (passive) hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    int rc = ::getaddrinfo(ep.host.empty() ? nullptr : ep.host.c_str(), std::to_string(ep.port).c_str(),
                           &hints, &res);
    if (rc != 0) throw BackendUnavailable("cannot resolve " + ep.to_string() + ": " + gai_strerror(rc));
    return res;
}

void read_exact(int fd, std::uint8_t* dst, std::size_t n, bool& eof_at_start) {
    std::size_t got = 0;
    eof_at_start = false;
    while (got < n) {
        ssize_t r = ::recv(fd, dst + got, n - got, 0);
        if (r == 0) {
            if (got == 0) {
                eof_at_start = true;
                return;
            }
            throw BackendUnavailable("connection closed mid-frame");
        }
        if (r < 0) {
            if (errno == EINTR) continue;
            throw BackendUnavailable(std::string("recv failed: ") + std::strerror(errno));
        }
        got += static_cast<std::size_t>(r);
    }
}

} // namespace

Socket connect_to(const Endpoint& ep) {
    addrinfo* res = resolve(ep, false);
    std::string last = "no address";
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
        Socket s(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
        if (!s.valid()) continue;
        if (::connect(s.fd(), ai->ai_addr, ai->ai_addrlen) == 0) {
            int one = 1;
            ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            ::freeaddrinfo(res);
            return s;
        }
        last = std::strerror(errno);
    }
    ::freeaddrinfo(res);
    throw BackendUnavailable("cannot connect to " + ep.to_string() + ": " + last);
}

void write_frame(int fd, const std::vector<std::uint8_t>& frame) {
    std::size_t sent = 0;
    while (sent < frame.size()) {
        ssize_t r = ::send(fd, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
        if (r < 0) {
            if (errno == EINTR) continue;
            throw BackendUnavailable(std::string("send failed: ") + std::strerror(errno));
        }
        sent += static_cast<std::size_t>(r);
    }
}

bool read_frame(int fd, std::vector<std::uint8_t>& payload) {
    std::uint8_t len_bytes[8];
    bool eof = false;
    read_exact(fd, len_bytes, 8, eof);
    if (eof) return false;
    std::uint64_t len = 0;
    for (int i = 7; i >= 0; --i) len = (len << 8) | len_bytes[i];
    if (len > protocol::kMaxPayload) throw protocol::ProtocolError("frame exceeds maximum payload size");
    payload.resize(static_cast<std::size_t>(len));
    if (len == 0) return true;
    read_exact(fd, payload.data(), payload.size(), eof);
    if (eof) throw BackendUnavailable("connection closed mid-frame");
    return true;
}

ProtocolClient::ProtocolClient(const Endpoint& ep) : socket_(connect_to(ep)) {
    reader_ = std::thread([this] { reader_loop(); });
}

ProtocolClient::~ProtocolClient() {
    socket_.shutdown();
    if (reader_.joinable()) reader_.join();
}

void ProtocolClient::fail_all(const std::string& why) {
    std::lock_guard lock(pending_mutex_);
    closed_ = true;
    close_reason_ = why;
    for (auto& [id, promise] : pending_)
        promise.set_exception(std::make_exception_ptr(BackendUnavailable(why)));
    pending_.clear();
    unclaimed_cv_.notify_all();
}

void ProtocolClient::reader_loop() {
    std::vector<std::uint8_t> payload;
    try {
        while (read_frame(socket_.fd(), payload)) {
            Message msg = protocol::decode_payload(payload.data(), payload.size());
            std::lock_guard lock(pending_mutex_);
            auto it = pending_.find(msg.request_id());
            if (it != pending_.end()) {
                it->second.set_value(std::move(msg));
                pending_.erase(it);
            } else {
                unclaimed_.push_back(std::move(msg));
                unclaimed_cv_.notify_all();
            }
        }
        fail_all("backend closed the connection");
    } catch (const std::exception& e) {
        fail_all(e.what());
    }
}

std::future<Message> ProtocolClient::submit(const Message& request) {
    std::future<Message> fut;
    {
        std::lock_guard lock(pending_mutex_);
        if (closed_) throw BackendUnavailable(close_reason_);
        auto [it, inserted] = pending_.try_emplace(request.request_id());
        if (!inserted) throw BackendError("request_id already in flight");
        fut = it->second.get_future();
    }
    auto frame = protocol::encode_frame(request);
    std::lock_guard lock(write_mutex_);
    write_frame(socket_.fd(), frame);
    return fut;
}

Message ProtocolClient::call(const Message& request, std::chrono::milliseconds timeout) {
    auto fut = submit(request);
    if (fut.wait_for(timeout) != std::future_status::ready) {
        std::lock_guard lock(pending_mutex_);
        pending_.erase(request.request_id());
        throw BackendTimeout("no response to request " + std::to_string(request.request_id()) + " within " +
                             std::to_string(timeout.count()) + " ms");
    }
    return fut.get();
}

void ProtocolClient::send_raw(const std::vector<std::uint8_t>& frame) {
    std::lock_guard lock(write_mutex_);
    write_frame(socket_.fd(), frame);
}

Message ProtocolClient::next_unclaimed(std::chrono::milliseconds timeout) {
    std::unique_lock lock(pending_mutex_);
    if (!unclaimed_cv_.wait_for(lock, timeout, [&] { return !unclaimed_.empty() || closed_; }))
        throw BackendTimeout("no unsolicited frame arrived");
    if (unclaimed_.empty()) throw BackendUnavailable(close_reason_);
    Message m = std::move(unclaimed_.front());
    unclaimed_.erase(unclaimed_.begin());
    return m;
}

RemoteBackend::RemoteBackend(const Endpoint& ep, std::chrono::milliseconds timeout)
    : endpoint_(ep), timeout_(timeout), client_(std::make_unique<ProtocolClient>(ep)) {}

std::vector<Image> RemoteBackend::roundtrip(Message msg, const std::string& result_name,
                                            const Image& expect_shape, std::size_t batch) {
    const std::string type = msg.type();
    std::uint64_t id = msg.request_id();
    if (id == 0) {
        id = client_->next_request_id();
        msg.header["request_id"] = id;
    }
    Message reply = client_->call(msg, timeout_);
    if (reply.type() == protocol::type::error)
        throw RemoteError("backend error: " + reply.header.value("message", std::string("unknown")));
    if (reply.type() != protocol::result_type(type) || reply.request_id() != id)
        throw protocol::ProtocolError("unexpected response '" + reply.type() + "'");
    if (!reply.has_tensor(result_name)) throw BackendShapeError("response lacks '" + result_name + "'");
    auto out = protocol::to_images(reply.tensor(result_name));
    if (out.size() != batch) throw BackendShapeError("response batch size differs from request");
    for (const auto& img : out)
        if (!img.same_shape(expect_shape)) throw BackendShapeError("response tensor has the wrong shape");
    return out;
}

std::vector<Image> RemoteBackend::predict_noise(const DenoiseRequest& request) {
    validate(request);
    return roundtrip(protocol::to_message(request), "noise", request.latents.front(), request.latents.size());
}

std::vector<Image> RemoteBackend::decode(const DecodeRequest& request) {
    validate(request);
    const Image& l = request.latents.front();
    Image expect(l.height * kLatentScale, l.width * kLatentScale, 3);
    return roundtrip(protocol::to_message(request), "images", expect, request.latents.size());
}

std::vector<Image> RemoteBackend::decode_pullback(const PullbackRequest& request) {
    validate(request);
    try {
        return roundtrip(protocol::to_message(request), "gradient", request.latents.front(),
                         request.latents.size());
    } catch (const RemoteError& e) {
        throw PullbackUnsupported(e.what());
    }
}

ProtocolServer::ProtocolServer(Backend& backend, const Endpoint& listen) : backend_(backend) {
    addrinfo* res = resolve(listen, true);
    std::string last = "no address";
    for (addrinfo* ai = res; ai && !listener_.valid(); ai = ai->ai_next) {
        Socket s(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
        if (!s.valid()) continue;
        int one = 1;
        ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        if (::bind(s.fd(), ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(s.fd(), 16) == 0)
            listener_ = std::move(s);
        else
            last = std::strerror(errno);
    }
    ::freeaddrinfo(res);
    if (!listener_.valid()) throw BackendUnavailable("cannot listen on " + listen.to_string() + ": " + last);
    sockaddr_storage addr{};
    socklen_t len = sizeof addr;
    ::getsockname(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    bound_.host = listen.host;
    bound_.port = ntohs(addr.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port
                                                   : reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
    acceptor_ = std::thread([this] { accept_loop(); });
}

ProtocolServer::~ProtocolServer() { stop(); }

void ProtocolServer::stop() {
    if (stopping_.exchange(true)) return;
    listener_.shutdown();
    if (acceptor_.joinable()) acceptor_.join();
    {
        std::lock_guard lock(conn_mutex_);
        for (int fd : connections_) ::shutdown(fd, SHUT_RDWR);
    }
    for (auto& t : workers_)
        if (t.joinable()) t.join();
    listener_.close();
}

void ProtocolServer::accept_loop() {
    while (!stopping_) {
        int fd = ::accept(listener_.fd(), nullptr, nullptr);
        if (fd < 0) {
            if (errno == EINTR) continue;
            return;
        }
        if (stopping_) {
            ::close(fd);
            return;
        }
        std::lock_guard lock(conn_mutex_);
        connections_.push_back(fd);
        workers_.emplace_back([this, fd] { serve_connection(fd); });
    }
}

void ProtocolServer::serve_connection(int fd) {
    Socket conn(fd);
    std::vector<std::uint8_t> payload;
    try {
        while (read_frame(conn.fd(), payload)) {
            Message reply;
            if (payload.empty()) {
                reply = protocol::make_error(0, "empty payload");
            } else {
                try {
                    Message request = protocol::decode_payload(payload.data(), payload.size());
                    std::lock_guard lock(backend_mutex_);
                    reply = protocol::dispatch(backend_, request);
                } catch (const std::exception& e) {
                    reply = protocol::make_error(0, e.what());
                }
            }
            write_frame(conn.fd(), protocol::encode_frame(reply));
        }
    } catch (const std::exception&) {
        // Peer vanished or sent an unrecoverable frame; drop the connection.
    }
    std::lock_guard lock(conn_mutex_);
    std::erase(connections_, fd);
}

namespace {

std::vector<Image> probe_batch(int h, int w, int c, std::uint64_t seed, double scale = 1.0) {
    std::vector<Image> out;
    for (int b = 0; b < 2; ++b) {
        Image img = gaussian_image(h, w, c, derive_seed(seed, b));
        for (double& v : img.data) v *= scale;
        out.push_back(std::move(img));
    }
    return out;
}

CheckResult check_reply(const std::string& name, const Message& reply, std::uint64_t id,
                        const std::string& tensor, const std::vector<std::int64_t>& shape) {
    CheckResult r{name, false, {}};
    if (reply.type() == protocol::type::error) {
        r.detail = "error frame: " + reply.header.value("message", std::string{});
        return r;
    }
    if (reply.type() != protocol::result_type(name)) {
        r.detail = "unexpected type '" + reply.type() + "'";
        return r;
    }
    if (reply.request_id() != id) {
        r.detail = "request_id not echoed";
        return r;
    }
    if (!reply.has_tensor(tensor)) {
        r.detail = "missing tensor '" + tensor + "'";
        return r;
    }
    const auto& t = reply.tensor(tensor);
    if (t.shape != shape) {
        r.detail = "shape " + protocol::json(t.shape).dump() + " != " + protocol::json(shape).dump();
        return r;
    }
    r.ok = true;
    r.detail = "shape " + protocol::json(shape).dump() + ", request_id " + std::to_string(id);
    return r;
}

} // namespace

std::vector<CheckResult> backend_check(const std::string& backend_spec, std::chrono::milliseconds timeout) {
    // The toy backend is probed through an in-process server so the wire path
    // is exercised either way.
    std::unique_ptr<ToyTargetBackend> toy;
    std::unique_ptr<ProtocolServer> server;
    Endpoint ep;
    if (backend_spec == "toy") {
        toy = std::make_unique<ToyTargetBackend>();
        server = std::make_unique<ProtocolServer>(*toy, Endpoint{"127.0.0.1", 0});
        ep = server->endpoint();
    } else if (backend_spec.rfind("remote:", 0) == 0) {
        ep = parse_endpoint(backend_spec.substr(7));
    } else {
        throw ConfigError("unknown backend '" + backend_spec + "'");
    }

    std::vector<CheckResult> results;
    ProtocolClient client(ep);
    const int h = 8, w = 8;

    DenoiseRequest dn;
    dn.latents = probe_batch(h, w, kLatentChannels, 1);
    dn.prompts = {"a probe, front view", "a probe, back view"};
    dn.depth_maps = probe_batch(h * kLatentScale, w * kLatentScale, 1, 2, 0.0);
    for (auto& d : *dn.depth_maps)
        for (double& v : d.data) v = 0.5;
    dn.timestep_index = 10;
    dn.timestep = 201;
    dn.alpha_bar_t = 0.75;
    dn.guidance_scale = 7.5;
    dn.request_id = 1001;
    auto run = [&](const std::string& name, const Message& msg, const std::string& tensor,
                   const std::vector<std::int64_t>& shape) {
        try {
            results.push_back(check_reply(name, client.call(msg, timeout), msg.request_id(), tensor, shape));
        } catch (const std::exception& e) {
            results.push_back({name, false, e.what()});
        }
    };
    run(protocol::type::predict_noise, protocol::to_message(dn), "noise", {2, h, w, kLatentChannels});

    DecodeRequest dc{probe_batch(h, w, kLatentChannels, 3), 1002};
    run(protocol::type::decode, protocol::to_message(dc), "images", {2, h * kLatentScale, w * kLatentScale, 3});

    PullbackRequest pb{probe_batch(h, w, kLatentChannels, 4),
                       probe_batch(h * kLatentScale, w * kLatentScale, 3, 5), 1003};
    run(protocol::type::decode_pullback, protocol::to_message(pb), "gradient", {2, h, w, kLatentChannels});

    // An empty frame must be answered with an error frame and leave the
    // connection usable.
    CheckResult empty{"empty_frame", false, {}};
    try {
        client.send_raw(std::vector<std::uint8_t>(8, 0));
        Message err = client.next_unclaimed(timeout);
        DecodeRequest again{probe_batch(h, w, kLatentChannels, 6), 1004};
        Message ok = client.call(protocol::to_message(again), timeout);
        empty.ok = err.type() == protocol::type::error && ok.type() == protocol::result_type("decode");
        empty.detail = empty.ok ? "error frame returned, connection kept" : "unexpected reply";
    } catch (const std::exception& e) {
        empty.detail = e.what();
    }
    results.push_back(empty);
    return results;
}

} // namespace meshdiff
