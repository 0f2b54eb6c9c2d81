// SPDX-License-Identifier: Apache-2.0
#include "signpipe/server.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <future>

#include "signpipe/error.hpp"

namespace signpipe::net {

namespace {

std::string errno_text()
{
    return std::strerror(errno);
}

void send_all(int fd, std::string_view bytes)
{
    while (!bytes.empty()) {
        const auto n = ::send(fd, bytes.data(), bytes.size(), MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR)
                continue;
            throw TransportError("send failed: " + errno_text());
        }
        bytes.remove_prefix(static_cast<std::size_t>(n));
    }
}

addrinfo* resolve(const std::string& host, std::uint16_t port, bool passive)
{
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    if (passive)
        hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    const auto service = std::to_string(port);
    const int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &res);
    if (rc != 0)
        throw TransportError("cannot resolve " + host + ": " + ::gai_strerror(rc));
    return res;
}

std::string format_fixed(double v, int digits)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

} // namespace

Server::Server(std::shared_ptr<const PipelineResources> resources, ServerConfig cfg)
    : resources_(std::move(resources)), cfg_(std::move(cfg))
{
    if (!resources_)
        throw ArgumentError("server needs pipeline resources");
    resources_->validate();
    if (!(cfg_.deadline_s > 0.0))
        throw ArgumentError("request deadline must be positive");
}

Server::~Server()
{
    stop();
}

void Server::start()
{
    addrinfo* ai = resolve(cfg_.host, cfg_.port, true);
    const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) {
        ::freeaddrinfo(ai);
        throw TransportError("socket: " + errno_text());
    }
    const int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd, ai->ai_addr, ai->ai_addrlen) != 0 || ::listen(fd, 16) != 0) {
        const auto msg = errno_text();
        ::freeaddrinfo(ai);
        ::close(fd);
        throw TransportError("cannot listen on " + cfg_.host + ":" + std::to_string(cfg_.port) + ": " + msg);
    }
    ::freeaddrinfo(ai);

    sockaddr_in bound{};
    socklen_t len = sizeof bound;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
    listen_fd_ = fd;
    log("listening on " + cfg_.host + ":" + std::to_string(port_));
    acceptor_ = std::thread([this] { accept_loop(); });
}

void Server::stop()
{
    if (stopping_.exchange(true))
        return;
    if (acceptor_.joinable())
        acceptor_.join();
    if (listen_fd_ >= 0)
        ::close(listen_fd_);
    listen_fd_ = -1;

    std::vector<std::thread> handlers;
    {
        std::lock_guard lock(mu_);
        for (int fd : open_fds_)
            ::shutdown(fd, SHUT_RDWR);
        handlers.swap(handlers_);
    }
    for (auto& t : handlers)
        t.join();
    while (pending_tasks_->load() > 0)
        std::this_thread::sleep_for(std::chrono::milliseconds(5));

    std::lock_guard lock(mu_);
    stopped_ = true;
    stopped_cv_.notify_all();
}

void Server::wait()
{
    std::unique_lock lock(mu_);
    stopped_cv_.wait(lock, [this] { return stopped_; });
}

void Server::accept_loop()
{
    while (!stopping_) {
        pollfd p{listen_fd_, POLLIN, 0};
        const int rc = ::poll(&p, 1, 50);
        if (rc <= 0)
            continue;
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0)
            continue;
        const int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        std::lock_guard lock(mu_);
        if (stopping_) {
            ::close(fd);
            break;
        }
        open_fds_.insert(fd);
        handlers_.emplace_back([this, fd] { handle(fd); });
    }
}

std::shared_ptr<LlmBackend> Server::new_backend() const
{
    if (cfg_.backend_factory)
        return cfg_.backend_factory();
    return make_backend(cfg_.backend);
}

void Server::log(const std::string& line) const
{
    if (cfg_.log)
        cfg_.log(line);
}

void Server::handle(int fd)
{
    FrameDecoder decoder;
    SessionState state = SessionState::await_hello;
    std::shared_ptr<LlmBackend> backend;
    char buf[65536];

    const auto reply = [fd](const Message& m) { send_all(fd, encode_frame(m)); };
    const auto fail = [&](std::string_view code, const std::string& message) {
        reply(ErrorMsg{std::string(code), message});
    };

    try {
        backend = new_backend();
        while (state != SessionState::closed) {
            auto out = decoder.next();
            if (out.status == FrameDecoder::Status::need_more) {
                const auto n = ::recv(fd, buf, sizeof buf, 0);
                if (n < 0 && errno == EINTR)
                    continue;
                if (n <= 0)
                    break;
                decoder.feed(std::span<const char>(buf, static_cast<std::size_t>(n)));
                continue;
            }
            if (out.status == FrameDecoder::Status::error) {
                log("bad frame: " + out.error);
                fail(codes::bad_frame, out.error);
                break;
            }

            const Message& msg = *out.message;
            const auto tr = session_transition(state, msg);
            switch (tr.action) {
            case Transition::Action::greet:
                reply(Hello{kProtocolVersion});
                break;
            case Transition::Action::finish:
                break;
            case Transition::Action::reject:
                if (const auto* h = std::get_if<Hello>(&msg);
                    h && state == SessionState::await_hello)
                    fail(codes::protocol,
                         "unsupported protocol version " + std::to_string(h->protocol_version));
                else
                    fail(codes::protocol, std::string(type_name(type_of(msg))) +
                                              " is not allowed in state " + std::string(state_name(state)));
                break;
            case Transition::Action::process: {
                auto task = std::make_shared<std::packaged_task<TurnResponse()>>(
                    [res = resources_, backend, sample = std::get<Landmarks>(msg).sample] {
                        return respond(*res, sample, *backend);
                    });
                auto fut = task->get_future();
                ++*pending_tasks_;
                std::thread([task, pending = pending_tasks_] {
                    (*task)();
                    --*pending;
                }).detach();
                const auto deadline = std::chrono::duration<double>(cfg_.deadline_s);
                if (fut.wait_for(deadline) != std::future_status::ready) {
                    log("request timed out");
                    fail(codes::timeout, "processing exceeded " + format_fixed(cfg_.deadline_s, 3) + " s");
                    backend = new_backend();
                    break;
                }
                try {
                    auto r = fut.get();
                    reply(r.result);
                    reply(r.script);
                } catch (const TransportError&) {
                    throw;
                } catch (const std::exception& e) {
                    log(std::string("request failed: ") + e.what());
                    fail(codes::internal, e.what());
                }
                break;
            }
            }
            state = tr.next;
        }
    } catch (const std::exception& e) {
        log(std::string("connection dropped: ") + e.what());
    }

    std::lock_guard lock(mu_);
    open_fds_.erase(fd);
    ::close(fd);
}

Connection Connection::open(const std::string& host, std::uint16_t port,
                            std::chrono::milliseconds receive_timeout)
{
    addrinfo* ai = resolve(host, port, false);
    const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) {
        ::freeaddrinfo(ai);
        throw TransportError("socket: " + errno_text());
    }
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) != 0) {
        const auto msg = errno_text();
        ::freeaddrinfo(ai);
        ::close(fd);
        throw TransportError("cannot connect to " + host + ":" + std::to_string(port) + ": " + msg);
    }
    ::freeaddrinfo(ai);
    timeval tv{};
    tv.tv_sec = static_cast<time_t>(receive_timeout.count() / 1000);
    tv.tv_usec = static_cast<suseconds_t>((receive_timeout.count() % 1000) * 1000);
    ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return Connection(fd);
}

Connection::Connection(Connection&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)), decoder_(std::move(other.decoder_))
{
}

Connection& Connection::operator=(Connection&& other) noexcept
{
    if (this != &other) {
        close();
        fd_ = std::exchange(other.fd_, -1);
        decoder_ = std::move(other.decoder_);
    }
    return *this;
}

Connection::~Connection()
{
    close();
}

void Connection::close()
{
    if (fd_ >= 0)
        ::close(fd_);
    fd_ = -1;
}

void Connection::send(const Message& m)
{
    send_raw(encode_frame(m));
}

void Connection::send_raw(std::string_view bytes)
{
    if (fd_ < 0)
        throw TransportError("connection is closed");
    send_all(fd_, bytes);
}

Message Connection::receive()
{
    if (fd_ < 0)
        throw TransportError("connection is closed");
    char buf[65536];
    for (;;) {
        auto out = decoder_.next();
        if (out.status == FrameDecoder::Status::frame)
            return std::move(*out.message);
        if (out.status == FrameDecoder::Status::error)
            throw ProtocolError(out.error);
        const auto n = ::recv(fd_, buf, sizeof buf, 0);
        if (n < 0 && errno == EINTR)
            continue;
        if (n < 0)
            throw TransportError("receive failed: " + errno_text());
        if (n == 0)
            throw TransportError("connection closed by peer");
        decoder_.feed(std::span<const char>(buf, static_cast<std::size_t>(n)));
    }
}

std::vector<std::string> render_script(const Script& s)
{
    std::vector<std::string> lines;
    lines.push_back("SCRIPT " + s.tagged_text);
    for (const auto& e : s.events) {
        std::string line = "  t=" + format_fixed(e.start_s, 3) + " ";
        if (e.kind == ScriptEvent::Kind::speech) {
            line += "speech \"" + e.text + "\"";
        } else {
            line += "gesture " + e.text + " parts=";
            for (std::size_t i = 0; i < e.body_parts.size(); ++i)
                line += (i ? "," : "") + e.body_parts[i];
        }
        line += " dur=" + format_fixed(e.duration_s, 3);
        lines.push_back(std::move(line));
    }
    for (const auto& w : s.warnings)
        lines.push_back("  WARNING " + w);
    return lines;
}

RobotSimReport robot_sim(const RobotSimConfig& cfg)
{
    std::ofstream log(cfg.log_path, std::ios::binary | std::ios::trunc);
    if (!log)
        throw IoError("cannot write robot log " + cfg.log_path.string());
    const auto write = [&log](const std::string& line) {
        log << line << '\n';
        log.flush();
    };

    auto conn = Connection::open(cfg.host, cfg.port);
    conn.send(Hello{kProtocolVersion});
    const auto greeting = conn.receive();
    if (const auto* err = std::get_if<ErrorMsg>(&greeting))
        throw ProtocolError("server refused handshake: " + err->code + " " + err->message);
    if (!std::holds_alternative<Hello>(greeting))
        throw ProtocolError("server did not answer HELLO");

    RobotSimReport report;
    for (const auto& sample : cfg.samples) {
        Landmarks lm{sample};
        lm.sample.label.reset();
        conn.send(lm);
        write("sample " + sample.sample_id);
        for (bool done = false; !done;) {
            const auto msg = conn.receive();
            if (const auto* r = std::get_if<Result>(&msg)) {
                ++report.results;
                write("RESULT gloss=" + r->gloss + " confidence=" + format_fixed(r->confidence_pct, 2));
            } else if (const auto* s = std::get_if<Script>(&msg)) {
                ++report.scripts;
                const auto start = std::chrono::steady_clock::now();
                const auto lines = render_script(*s);
                for (std::size_t i = 0; i < lines.size(); ++i) {
                    if (cfg.realtime && i >= 1 && i <= s->events.size())
                        std::this_thread::sleep_until(
                            start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                        std::chrono::duration<double>(s->events[i - 1].start_s)));
                    write(lines[i]);
                }
                done = true;
            } else if (const auto* e = std::get_if<ErrorMsg>(&msg)) {
                ++report.errors;
                write("ERROR " + e->code + " " + e->message);
                done = true;
                if (e->code == codes::protocol || e->code == codes::bad_frame)
                    throw ProtocolError("server closed the session: " + e->code + " " + e->message);
            } else {
                throw ProtocolError("unexpected " + std::string(type_name(type_of(msg))) + " from server");
            }
        }
    }
    conn.send(Bye{});
    conn.close();
    return report;
}

} // namespace signpipe::net
