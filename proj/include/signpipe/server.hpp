// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "signpipe/dialogue.hpp"
#include "signpipe/pipeline.hpp"
#include "signpipe/protocol.hpp"

namespace signpipe::net {

inline constexpr std::uint16_t kDefaultPort = 9470;

struct ServerConfig {
    std::string host = "127.0.0.1";
    std::uint16_t port = kDefaultPort; // 0 picks a free port
    double deadline_s = 10.0;
    BackendConfig backend;
    /// Overrides `backend` when set; called once per connection and again
    /// after a request times out.
    std::function<std::unique_ptr<LlmBackend>()> backend_factory;
    std::function<void(const std::string&)> log;
};

/// Threaded TCP server: one handler thread per connection.
class Server {
public:
    Server(std::shared_ptr<const PipelineResources> resources, ServerConfig cfg);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds and starts accepting. Throws TransportError when binding fails.
    void start();
    std::uint16_t port() const noexcept { return port_; }
    /// Closes the listener and every open connection, then joins handlers
    /// and waits for abandoned requests to finish.
    void stop();
    /// Blocks until stop() is called from elsewhere.
    void wait();

private:
    void accept_loop();
    void handle(int fd);
    std::shared_ptr<LlmBackend> new_backend() const;
    void log(const std::string& line) const;

    std::shared_ptr<const PipelineResources> resources_;
    ServerConfig cfg_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> stopping_{false};
    std::thread acceptor_;
    std::mutex mu_;
    std::condition_variable stopped_cv_;
    bool stopped_ = false;
    std::set<int> open_fds_;
    std::vector<std::thread> handlers_;
    std::shared_ptr<std::atomic<int>> pending_tasks_ = std::make_shared<std::atomic<int>>(0);
};

/// Blocking client end of one connection.
class Connection {
public:
    /// Throws TransportError when the connection is refused.
    static Connection open(const std::string& host, std::uint16_t port,
                           std::chrono::milliseconds receive_timeout = std::chrono::seconds(60));
    Connection(Connection&& other) noexcept;
    Connection& operator=(Connection&& other) noexcept;
    ~Connection();

    void send(const Message& m);
    void send_raw(std::string_view bytes);
    /// Next message. Throws TransportError on EOF, reset or timeout, and
    /// ProtocolError on a malformed frame.
    Message receive();
    void close();

private:
    explicit Connection(int fd) : fd_(fd) {}
    int fd_ = -1;
    FrameDecoder decoder_;
};

struct RobotSimConfig {
    std::string host = "127.0.0.1";
    std::uint16_t port = kDefaultPort;
    std::vector<SignSample> samples;
    std::filesystem::path log_path;
    bool realtime = false;
};

struct RobotSimReport {
    std::size_t results = 0;
    std::size_t scripts = 0;
    std::size_t errors = 0;
};

/// Log lines for one SCRIPT: the tagged text, every event with its start
/// time, then the warnings.
std::vector<std::string> render_script(const Script& s);

/// Handshakes, sends every sample, and writes one block of log lines per
/// reply, flushing as it goes. Throws TransportError if the link fails; the
/// log keeps whatever was written.
RobotSimReport robot_sim(const RobotSimConfig& cfg);

} // namespace signpipe::net
