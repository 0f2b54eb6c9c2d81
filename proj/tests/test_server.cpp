// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <fstream>
#include <sstream>
#include <thread>

#include "pipeline_fixture.hpp"
#include "signpipe/error.hpp"
#include "signpipe/server.hpp"
#include "test_support.hpp"

using namespace signpipe;
using namespace signpipe::net;

namespace {

const std::filesystem::path kSource = SIGNPIPE_SOURCE_DIR;

ServerConfig local_config()
{
    ServerConfig cfg;
    cfg.port = 0;
    cfg.backend.seed = 5;
    return cfg;
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<SignSample> some_samples(std::size_t n)
{
    Rng rng(3);
    std::vector<SignSample> out;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(testing::random_sample(rng, "s" + std::to_string(i), 6 + i, 1));
    return out;
}

class SlowBackend : public LlmBackend {
public:
    std::string complete(const std::string&) override
    {
        std::this_thread::sleep_for(std::chrono::milliseconds(800));
        return "Hi.";
    }
};

} // namespace

TEST_CASE("handshake and a full turn")
{
    Server server(testing::seeded_pipeline(kSource), local_config());
    server.start();
    REQUIRE(server.port() != 0);

    auto conn = Connection::open("127.0.0.1", server.port());
    conn.send(Hello{1});
    CHECK(conn.receive() == Message{Hello{1}});

    const auto sample = some_samples(1)[0];
    conn.send(Landmarks{sample});
    const auto first = conn.receive();
    const auto second = conn.receive();
    REQUIRE(std::holds_alternative<Result>(first));
    REQUIRE(std::holds_alternative<Script>(second));
    const auto& r = std::get<Result>(first);
    CHECK(LabelMap({"cloud", "sky", "hello", "yes", "no"}).id(r.gloss).has_value());
    CHECK(r.confidence_pct > 0.0);
    CHECK(r.confidence_pct <= 100.0);
    const auto& s = std::get<Script>(second);
    CHECK_FALSE(s.tagged_text.empty());
    CHECK_FALSE(s.events.empty());

    // a second request on the same connection
    conn.send(Landmarks{sample});
    CHECK(conn.receive() == first);
    CHECK(conn.receive() == second);
    conn.send(Bye{});
    CHECK_THROWS_AS(conn.receive(), TransportError);
    server.stop();
}

TEST_CASE("protocol violations close the session")
{
    Server server(testing::seeded_pipeline(kSource), local_config());
    server.start();

    auto early = Connection::open("127.0.0.1", server.port());
    early.send(Landmarks{some_samples(1)[0]});
    const auto e1 = early.receive();
    REQUIRE(std::holds_alternative<ErrorMsg>(e1));
    CHECK(std::get<ErrorMsg>(e1).code == "PROTOCOL");
    CHECK_THROWS_AS(early.receive(), TransportError);

    auto twice = Connection::open("127.0.0.1", server.port());
    twice.send(Hello{1});
    twice.receive();
    twice.send(Hello{1});
    CHECK(std::get<ErrorMsg>(twice.receive()).code == "PROTOCOL");
    CHECK_THROWS_AS(twice.receive(), TransportError);

    auto version = Connection::open("127.0.0.1", server.port());
    version.send(Hello{2});
    const auto e2 = std::get<ErrorMsg>(version.receive());
    CHECK(e2.code == "PROTOCOL");
    CHECK(e2.message.find("version 2") != std::string::npos);

    auto garbage = Connection::open("127.0.0.1", server.port());
    garbage.send_raw(std::string("\0\0\0\x03{x}", 7));
    CHECK(std::get<ErrorMsg>(garbage.receive()).code == "BAD_FRAME");
    CHECK_THROWS_AS(garbage.receive(), TransportError);

    auto invalid = Connection::open("127.0.0.1", server.port());
    invalid.send(Hello{1});
    invalid.receive();
    invalid.send_raw(std::string("\0\0\0\x19", 4) + R"({"type":"NOPE","body":{}})");
    CHECK(std::get<ErrorMsg>(invalid.receive()).code == "BAD_FRAME");
    server.stop();
}

TEST_CASE("concurrent connections")
{
    Server server(testing::seeded_pipeline(kSource), local_config());
    server.start();
    const auto samples = some_samples(3);
    std::vector<std::thread> clients;
    std::vector<int> ok(3, 0);
    for (int c = 0; c < 3; ++c)
        clients.emplace_back([&, c] {
            auto conn = Connection::open("127.0.0.1", server.port());
            conn.send(Hello{1});
            conn.receive();
            for (const auto& s : samples) {
                conn.send(Landmarks{s});
                const auto a = conn.receive();
                const auto b = conn.receive();
                if (std::holds_alternative<Result>(a) && std::holds_alternative<Script>(b))
                    ++ok[c];
            }
            conn.send(Bye{});
        });
    for (auto& t : clients)
        t.join();
    CHECK(ok == std::vector<int>{3, 3, 3});
    server.stop();
}

TEST_CASE("slow requests time out")
{
    auto cfg = local_config();
    cfg.deadline_s = 0.2;
    int made = 0;
    cfg.backend_factory = [&made] {
        ++made;
        return std::make_unique<SlowBackend>();
    };
    Server server(testing::seeded_pipeline(kSource), cfg);
    server.start();
    auto conn = Connection::open("127.0.0.1", server.port());
    conn.send(Hello{1});
    conn.receive();
    conn.send(Landmarks{some_samples(1)[0]});
    const auto reply = conn.receive();
    REQUIRE(std::holds_alternative<ErrorMsg>(reply));
    CHECK(std::get<ErrorMsg>(reply).code == "TIMEOUT");
    // the session stays usable
    conn.send(Bye{});
    CHECK_THROWS_AS(conn.receive(), TransportError);
    server.stop();
    CHECK(made == 2);
}

TEST_CASE("robot simulator log is deterministic")
{
    testing::TempDir dir;
    const auto samples = some_samples(2);
    std::string logs[3];
    for (int run = 0; run < 3; ++run) {
        Server server(testing::seeded_pipeline(kSource), local_config());
        server.start();
        RobotSimConfig sim;
        sim.port = server.port();
        sim.samples = samples;
        sim.log_path = dir / ("run" + std::to_string(run) + ".log");
        const auto report = robot_sim(sim);
        CHECK(report.results == 2);
        CHECK(report.scripts == 2);
        CHECK(report.errors == 0);
        if (run == 2) {
            // same server, second session
            sim.log_path = dir / "again.log";
            robot_sim(sim);
            CHECK(slurp(sim.log_path) == logs[0]);
        }
        server.stop();
        logs[run] = slurp(dir / ("run" + std::to_string(run) + ".log"));
    }
    CHECK(logs[0] == logs[1]);
    CHECK(logs[0] == logs[2]);

    const auto& log = logs[0];
    CHECK(log.rfind("sample s0\nRESULT gloss=", 0) == 0);
    std::size_t results = 0, speech = 0;
    for (std::size_t p = 0; (p = log.find("RESULT ", p)) != std::string::npos; ++p)
        ++results;
    for (std::size_t p = 0; (p = log.find(" speech \"", p)) != std::string::npos; ++p)
        ++speech;
    CHECK(results == 2);
    CHECK(speech >= 2);
    CHECK(log.find("\nSCRIPT ") != std::string::npos);
}

TEST_CASE("robot simulator with no samples")
{
    testing::TempDir dir;
    Server server(testing::seeded_pipeline(kSource), local_config());
    server.start();
    RobotSimConfig sim;
    sim.port = server.port();
    sim.log_path = dir / "empty.log";
    const auto report = robot_sim(sim);
    CHECK(report.results == 0);
    CHECK(std::filesystem::exists(sim.log_path));
    CHECK(std::filesystem::file_size(sim.log_path) == 0);
    server.stop();
}

TEST_CASE("render_script lines")
{
    Script s;
    s.tagged_text = "[Yes] Hi. [/Yes]";
    s.events.push_back({ScriptEvent::Kind::speech, 0.0, 0.4, "Hi.", {}});
    s.events.push_back({ScriptEvent::Kind::gesture, 0.0, 1.35, "Yes", {"Head", "Neck"}});
    s.warnings.push_back("late");
    const auto lines = render_script(s);
    REQUIRE(lines.size() == 4);
    CHECK(lines[0] == "SCRIPT [Yes] Hi. [/Yes]");
    CHECK(lines[1] == "  t=0.000 speech \"Hi.\" dur=0.400");
    CHECK(lines[2] == "  t=0.000 gesture Yes parts=Head,Neck dur=1.350");
    CHECK(lines[3] == "  WARNING late");
}

TEST_CASE("transport failures")
{
    // nothing listening
    int probe = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    REQUIRE(::bind(probe, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
    socklen_t len = sizeof addr;
    ::getsockname(probe, reinterpret_cast<sockaddr*>(&addr), &len);
    const auto dead_port = ntohs(addr.sin_port);
    ::close(probe);
    CHECK_THROWS_AS(Connection::open("127.0.0.1", dead_port), TransportError);

    // a peer that answers one RESULT and then dies
    int lfd = ::socket(AF_INET, SOCK_STREAM, 0);
    addr.sin_port = 0;
    REQUIRE(::bind(lfd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
    REQUIRE(::listen(lfd, 1) == 0);
    len = sizeof addr;
    ::getsockname(lfd, reinterpret_cast<sockaddr*>(&addr), &len);
    std::thread peer([lfd] {
        const int fd = ::accept(lfd, nullptr, nullptr);
        FrameDecoder dec;
        char buf[65536];
        int seen = 0;
        while (seen < 2) {
            const auto n = ::recv(fd, buf, sizeof buf, 0);
            if (n <= 0)
                break;
            dec.feed(std::span<const char>(buf, static_cast<std::size_t>(n)));
            while (dec.next().status == FrameDecoder::Status::frame) {
                ++seen;
                const auto out = seen == 1 ? encode_frame(Hello{1}) : encode_frame(Result{"cloud", 90.0});
                ::send(fd, out.data(), out.size(), MSG_NOSIGNAL);
            }
        }
        ::close(fd);
        ::close(lfd);
    });

    testing::TempDir dir;
    RobotSimConfig sim;
    sim.port = ntohs(addr.sin_port);
    sim.samples = some_samples(2);
    sim.log_path = dir / "partial.log";
    CHECK_THROWS_AS(robot_sim(sim), TransportError);
    peer.join();
    CHECK(slurp(sim.log_path) == "sample s0\nRESULT gloss=cloud confidence=90.00\n");
}
