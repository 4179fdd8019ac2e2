#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "meshdiff/backend.hpp"
#include "meshdiff/protocol.hpp"

namespace meshdiff {

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;
    std::string to_string() const { return host + ":" + std::to_string(port); }
};

// "host:port" or ":port".
Endpoint parse_endpoint(const std::string& text);

// Environment variable consulted when no --backend is given.
inline constexpr const char* kBackendEnvVar = "MESHDIFF_BACKEND";

// Owning socket descriptor.
class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(Socket&& o) noexcept : fd_(o.release()) {}
    Socket& operator=(Socket&& o) noexcept;
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    ~Socket() { close(); }

    int fd() const { return fd_; }
    bool valid() const { return fd_ >= 0; }
    int release();
    void close();
    // Wakes blocked readers without releasing the descriptor.
    void shutdown();

private:
    int fd_ = -1;
};

Socket connect_to(const Endpoint& ep);

// Blocking frame I/O. read_frame returns false on orderly EOF before a frame
// starts.
void write_frame(int fd, const std::vector<std::uint8_t>& frame);
bool read_frame(int fd, std::vector<std::uint8_t>& payload);

// Pipelined client: any number of requests in flight, responses matched by
// request_id regardless of arrival order.
class ProtocolClient {
public:
    explicit ProtocolClient(const Endpoint& ep);
    ~ProtocolClient();
    ProtocolClient(const ProtocolClient&) = delete;
    ProtocolClient& operator=(const ProtocolClient&) = delete;

    std::future<protocol::Message> submit(const protocol::Message& request);
    // submit + wait; BackendTimeout after `timeout`.
    protocol::Message call(const protocol::Message& request, std::chrono::milliseconds timeout);

    // Sends bytes as-is (conformance probes).
    void send_raw(const std::vector<std::uint8_t>& frame);
    // Next response that was not claimed by submit().
    protocol::Message next_unclaimed(std::chrono::milliseconds timeout);

    std::uint64_t next_request_id() { return ++id_counter_; }

private:
    void reader_loop();
    void fail_all(const std::string& why);

    Socket socket_;
    std::mutex write_mutex_;
    std::mutex pending_mutex_;
    std::map<std::uint64_t, std::promise<protocol::Message>> pending_;
    std::vector<protocol::Message> unclaimed_;
    std::condition_variable unclaimed_cv_;
    bool closed_ = false;
    std::string close_reason_;
    std::atomic<std::uint64_t> id_counter_{0};
    std::thread reader_;
};

// Backend speaking the wire protocol to an external model server.
class RemoteBackend : public Backend {
public:
    explicit RemoteBackend(const Endpoint& ep,
                           std::chrono::milliseconds timeout = std::chrono::seconds(120));

    std::vector<Image> predict_noise(const DenoiseRequest& request) override;
    std::vector<Image> decode(const DecodeRequest& request) override;
    std::vector<Image> decode_pullback(const PullbackRequest& request) override;
    std::string name() const override { return "remote:" + endpoint_.to_string(); }

private:
    std::vector<Image> roundtrip(protocol::Message msg, const std::string& result_name,
                                 const Image& expect_shape, std::size_t batch);

    Endpoint endpoint_;
    std::chrono::milliseconds timeout_;
    std::unique_ptr<ProtocolClient> client_;
};

// Serves any Backend over the wire protocol, one thread per connection and
// one backend invocation at a time.
class ProtocolServer {
public:
    ProtocolServer(Backend& backend, const Endpoint& listen);
    ~ProtocolServer();
    ProtocolServer(const ProtocolServer&) = delete;
    ProtocolServer& operator=(const ProtocolServer&) = delete;

    // Actual bound endpoint (port 0 resolves to an ephemeral port).
    const Endpoint& endpoint() const { return bound_; }
    void stop();

private:
    void accept_loop();
    void serve_connection(int fd);

    Backend& backend_;
    Endpoint bound_;
    Socket listener_;
    std::mutex backend_mutex_;
    std::mutex conn_mutex_;
    std::vector<int> connections_;
    std::vector<std::thread> workers_;
    std::atomic<bool> stopping_{false};
    std::thread acceptor_;
};

// Conformance probe covering the three message types.
struct CheckResult {
    std::string name;
    bool ok = false;
    std::string detail;
};
std::vector<CheckResult> backend_check(const std::string& backend_spec,
                                       std::chrono::milliseconds timeout = std::chrono::seconds(120));

} // namespace meshdiff
