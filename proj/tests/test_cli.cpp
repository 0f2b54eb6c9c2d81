// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "pipeline_fixture.hpp"
#include "signpipe/cli.hpp"
#include "signpipe/model.hpp"
#include "signpipe/server.hpp"
#include "signpipe/synth.hpp"
#include "test_support.hpp"

using namespace signpipe;

namespace {

const std::filesystem::path kSource = SIGNPIPE_SOURCE_DIR;

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "signpipe");
    std::vector<const char*> argv;
    for (const auto& a : args)
        argv.push_back(a.c_str());
    std::ostringstream out, err;
    Run r;
    r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t line_count(const std::string& s)
{
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

std::string source(const char* rel)
{
    return (kSource / rel).string();
}

/// Writes the small server model with seed-2024 weights and its sidecar.
std::string write_small_weights(const testing::TempDir& dir)
{
    const auto cfg = testing::small_model();
    const auto path = dir / "small.bin";
    nn::save_weights(nn::init_weights(cfg, 2024), path);
    std::ofstream(path.string() + ".json") << cfg.to_json();
    return path.string();
}

struct EnvGuard {
    explicit EnvGuard(const char* n, const char* v) : name(n) { ::setenv(n, v, 1); }
    ~EnvGuard() { ::unsetenv(name); }
    const char* name;
};

} // namespace

TEST_CASE("usage errors exit 2")
{
    CHECK(cli({}).code == 2);
    CHECK(cli({"nope"}).code == 2);
    CHECK(cli({"stats", "--bogus"}).code == 2);
    CHECK(cli({"synth"}).code == 2); // --out is required
    CHECK(cli({"--help"}).code == 0);
    CHECK(cli({"stats", "--descriptors", "/no/such.json"}).code == 2);
    CHECK(cli({"stats"}).code == 2);
    CHECK(cli({"params", "--model", "/no/such.json"}).code == 2);
    CHECK(cli({"compose", "--gloss", "x", "--confidence", "9", "--backend", "carrier-pigeon",
               "--descriptors", source("data/gestures.json"), "--templates", source("configs/templates")})
              .code == 2);
    CHECK(cli({"synth", "--out", "/no/such/dir/x.csv"}).code == 2);
}

TEST_CASE("synth is seeded")
{
    testing::TempDir dir;
    const auto a = dir / "a.csv", b = dir / "b.csv", c = dir / "c.csv";
    REQUIRE(cli({"synth", "--out", a.string(), "--count", "10", "--seed", "4"}).code == 0);
    REQUIRE(cli({"synth", "--out", b.string(), "--count", "10", "--seed", "4"}).code == 0);
    REQUIRE(cli({"synth", "--out", c.string(), "--count", "10", "--seed", "5"}).code == 0);
    CHECK(slurp(a) == slurp(b));
    CHECK(slurp(a) != slurp(c));
    CHECK(read_corpus(a).size() == 10);
}

TEST_CASE("settings precedence: flag, then environment, then config file")
{
    testing::TempDir dir;
    const auto expect = [&](std::uint64_t seed) {
        SynthConfig cfg;
        cfg.seed = seed;
        return format_corpus(synth_corpus(cfg, 3));
    };
    std::ofstream(dir / "cfg.json") << R"({"seed": 11, "descriptors": "db.json"})";
    std::filesystem::copy_file(kSource / "data/gestures.json", dir / "db.json");
    const auto out = (dir / "o.csv").string();
    const auto cfg = (dir / "cfg.json").string();

    REQUIRE(cli({"synth", "--config", cfg, "--out", out, "--count", "3"}).code == 0);
    CHECK(slurp(out) == expect(11));
    {
        EnvGuard env("SIGNPIPE_SEED", "12");
        REQUIRE(cli({"synth", "--config", cfg, "--out", out, "--count", "3"}).code == 0);
        CHECK(slurp(out) == expect(12));
        REQUIRE(cli({"synth", "--config", cfg, "--seed", "13", "--out", out, "--count", "3"}).code == 0);
        CHECK(slurp(out) == expect(13));
    }
    {
        EnvGuard env("SIGNPIPE_SEED", "twelve");
        CHECK(cli({"synth", "--out", out}).code == 2);
    }

    // relative paths in the config file resolve against its directory
    CHECK(cli({"stats", "--config", cfg}).code == 0);

    std::ofstream(dir / "bad.json") << R"({"colour": "blue"})";
    const auto bad = cli({"stats", "--config", (dir / "bad.json").string()});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("colour") != std::string::npos);
    std::ofstream(dir / "broken.json") << "{";
    CHECK(cli({"stats", "--config", (dir / "broken.json").string()}).code == 2);
}

TEST_CASE("preprocess writes one tensor per sample")
{
    testing::TempDir dir;
    const auto corpus = dir / "c.csv";
    REQUIRE(cli({"synth", "--out", corpus.string(), "--count", "7"}).code == 0);
    const auto f1 = dir / "f1.bin", f2 = dir / "f2.bin";
    const auto r = cli({"preprocess", "--corpus", corpus.string(), "--out", f1.string(), "--augment",
                        "--seed", "3", "--frames", "16"});
    REQUIRE(r.code == 0);
    CHECK(r.out == "samples\tframes\tfeatures\n7\t16\t176\n");
    const auto tensors = load_tensors(f1);
    CHECK(tensors.size() == 7);
    for (const auto& [name, t] : tensors)
        CHECK(t.shape == std::vector<std::uint32_t>{16, 176});
    REQUIRE(cli({"preprocess", "--corpus", corpus.string(), "--out", f2.string(), "--augment", "--seed",
                 "3", "--frames", "16"})
                .code == 0);
    CHECK(slurp(f1) == slurp(f2));

    const auto bad = cli({"preprocess", "--corpus", corpus.string(), "--out", f1.string(), "--spec",
                          (dir / "missing.json").string()});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("missing.json") != std::string::npos);
    CHECK(cli({"preprocess", "--corpus", (dir / "none.csv").string(), "--out", f1.string()}).code == 2);

    std::ofstream(dir / "broken.csv") << "garbage\n";
    CHECK(cli({"preprocess", "--corpus", (dir / "broken.csv").string(), "--out", f1.string()}).code == 1);
}

TEST_CASE("train: zero epochs keeps the init and the loss table is reproducible")
{
    testing::TempDir dir;
    const auto corpus = dir / "c.csv";
    REQUIRE(cli({"synth", "--out", corpus.string(), "--count", "20", "--seed", "1"}).code == 0);
    const auto model = source("configs/tiny_model.json");
    const auto w0 = dir / "w0.bin";
    auto r = cli({"train", "--model", model, "--corpus", corpus.string(), "--out", w0.string(), "--epochs",
                  "0", "--seed", "9"});
    REQUIRE(r.code == 0);
    CHECK(r.out == "epoch,train_loss,train_acc,val_loss,val_acc\n");
    const auto cfg = nn::ModelConfig::load(model);
    CHECK(nn::load_weights(w0) == nn::init_weights(cfg, 9));
    CHECK(nn::ModelConfig::load(w0.string() + ".json") == cfg);

    const auto w1 = dir / "w1.bin", w2 = dir / "w2.bin";
    const std::vector<std::string> base = {"train", "--model", model, "--corpus", corpus.string(),
                                           "--val", corpus.string(), "--epochs", "3", "--seed", "9"};
    auto a1 = base, a2 = base;
    a1.insert(a1.end(), {"--out", w1.string()});
    a2.insert(a2.end(), {"--out", w2.string()});
    const auto t1 = cli(a1), t2 = cli(a2);
    REQUIRE(t1.code == 0);
    CHECK(line_count(t1.out) == 4);
    CHECK(t1.out == t2.out);
    CHECK(slurp(w1) == slurp(w2));

    CHECK(cli({"train", "--model", model, "--corpus", corpus.string(), "--out", w1.string(), "--batch-size",
               "0"})
              .code == 2);
    std::ofstream(dir / "empty.csv") << "sample_id,frame,kind,landmark_index,x,y,z,label\n";
    CHECK(cli({"train", "--model", model, "--corpus", (dir / "empty.csv").string(), "--out", w1.string()})
              .code == 1);
}

TEST_CASE("infer prints one line per sample")
{
    testing::TempDir dir;
    const auto weights = write_small_weights(dir);
    Rng rng(21);
    std::vector<SignSample> samples;
    for (int i = 0; i < 4; ++i)
        samples.push_back(testing::random_sample(rng, "q" + std::to_string(i), 5 + i));
    const auto input = dir / "q.csv";
    write_corpus(samples, input);

    const auto r = cli({"infer", "--weights", weights, "--input", input.string()});
    REQUIRE(r.code == 0);
    REQUIRE(line_count(r.out) == 4);

    // same answers as the library path, in input order
    const auto cfg = testing::small_model();
    const auto w = nn::init_weights(cfg, 2024);
    const auto labels = LabelMap::numbered(5);
    std::istringstream lines(r.out);
    for (const auto& s : samples) {
        std::string line;
        std::getline(lines, line);
        const auto p = nn::predict(preprocess_pipeline(s, SelectionSpec::defaults(), cfg.max_seq_len), w, cfg,
                                   labels);
        char expect[64];
        std::snprintf(expect, sizeof expect, "%s\t%.6f", p.gloss.c_str(), p.confidence);
        CHECK(line == expect);
    }

    // recorded fixture for the first sample
    CHECK(r.out.substr(0, r.out.find('\n')) == "class_0\t0.333727");

    const auto named = cli({"infer", "--weights", weights, "--input", input.string(), "--labels",
                            source("data/synth_labels.txt")});
    CHECK(named.out.substr(0, named.out.find('\n')) == "cloud\t0.333727");

    CHECK(cli({"infer", "--weights", (dir / "none.bin").string(), "--input", input.string()}).code == 2);
    CHECK(cli({"infer", "--weights", weights, "--input", input.string(), "--labels", source("data/labels.txt")})
              .code == 2);
    std::ofstream(dir / "junk.bin") << "not weights";
    std::ofstream(dir / "junk.bin.json") << testing::small_model().to_json();
    CHECK(cli({"infer", "--weights", (dir / "junk.bin").string(), "--input", input.string()}).code == 2);
}

TEST_CASE("eval reports accuracy and per-class counts")
{
    testing::TempDir dir;
    const auto corpus = dir / "c.csv";
    REQUIRE(cli({"synth", "--out", corpus.string(), "--count", "5", "--seed", "2"}).code == 0);
    const auto w = dir / "w.bin";
    REQUIRE(cli({"train", "--model", source("configs/tiny_model.json"), "--corpus", corpus.string(), "--out",
                 w.string(), "--epochs", "400", "--batch-size", "5", "--seed", "1"})
                .code == 0);
    const auto r = cli({"eval", "--weights", w.string(), "--corpus", corpus.string(), "--labels",
                        source("data/synth_labels.txt")});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("samples,5\ntop1,1.000000\ntop5,1.000000\n") != std::string::npos);
    CHECK(r.out.find("class_id,gloss,support,correct\n0,cloud,1,1\n") != std::string::npos);

    std::ofstream(dir / "empty.csv") << "sample_id,frame,kind,landmark_index,x,y,z,label\n";
    const auto empty = cli({"eval", "--weights", w.string(), "--corpus", (dir / "empty.csv").string()});
    CHECK(empty.code == 1);
    CHECK(empty.err.find("no samples") != std::string::npos);

    Rng rng(5);
    std::vector<SignSample> unlabelled = {testing::random_sample(rng, "u", 3)};
    write_corpus(unlabelled, dir / "u.csv");
    CHECK(cli({"eval", "--weights", w.string(), "--corpus", (dir / "u.csv").string()}).code == 1);
}

TEST_CASE("eval of random weights on 250 classes is near chance")
{
    testing::TempDir dir;
    auto cfg = testing::small_model();
    cfg.num_classes = 250;
    const auto weights = dir / "r.bin";
    nn::save_weights(nn::init_weights(cfg, 77), weights);
    std::ofstream(weights.string() + ".json") << cfg.to_json();

    const std::size_t n = 750;
    Rng rng(8);
    std::vector<SignSample> samples;
    for (std::size_t i = 0; i < n; ++i)
        samples.push_back(testing::random_sample(rng, "r" + std::to_string(i), 2,
                                                 static_cast<int>(rng.below(250))));
    write_corpus(samples, dir / "r.csv");
    const auto r = cli({"eval", "--weights", weights.string(), "--corpus", (dir / "r.csv").string()});
    REQUIRE(r.code == 0);
    const auto pos = r.out.find("top1,");
    REQUIRE(pos != std::string::npos);
    const double top1 = std::stod(r.out.substr(pos + 5));
    const double p = 1.0 / 250.0;
    const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(n));
    CHECK(std::abs(top1 - p) <= 3 * sigma);
}

TEST_CASE("stats, compose, bench and params")
{
    const auto stats = cli({"stats", "--descriptors", source("data/gestures_430.json")});
    REQUIRE(stats.code == 0);
    CHECK(stats.out == "stat,value\nmean,4.0902\nstd,3.2403\nmin,0.5100\np25,2.0200\np50,2.9000\n"
                       "p75,4.9000\nmax,24.4000\n");

    const std::vector<std::string> compose = {"compose",       "--backend",   "mock",
                                              "--gloss",       "cloud",       "--confidence",
                                              "90",            "--descriptors", source("data/gestures.json"),
                                              "--templates",   source("configs/templates")};
    const auto c1 = cli(compose), c2 = cli(compose);
    REQUIRE(c1.code == 0);
    CHECK(c1.out == c2.out);
    CHECK(c1.out.rfind("SCRIPT [", 0) == 0);
    CHECK(c1.out.find(" speech \"") != std::string::npos);
    auto seeded = compose;
    seeded.insert(seeded.end(), {"--seed", "3"});
    CHECK(cli(seeded).out == cli(seeded).out);
    auto no_templates = compose;
    no_templates.back() = "/no/such/dir";
    CHECK(cli(no_templates).code == 2);

    testing::TempDir dir;
    std::ofstream(dir / "small.json") << testing::small_model().to_json();
    const auto bench = cli({"bench", "--model", (dir / "small.json").string(), "--runs", "5"});
    REQUIRE(bench.code == 0);
    CHECK(bench.out.rfind("runs\tp50_ms\tp99_ms\t", 0) == 0);
    CHECK(line_count(bench.out) == 2);

    CHECK(cli({"params"}).out == "parameters\t2562970\n");
    CHECK(cli({"params", "--model", source("configs/default_model.json")}).out == "parameters\t2562970\n");
}

TEST_CASE("serve and robot-sim")
{
    testing::TempDir dir;
    const auto weights = write_small_weights(dir);
    CHECK(cli({"serve", "--weights", (dir / "none.bin").string(), "--descriptors",
               source("data/gestures.json"), "--templates", source("configs/templates")})
              .code == 2);
    CHECK(cli({"serve", "--weights", weights, "--templates", source("configs/templates")}).code == 2);

    Run served;
    std::thread th([&] {
        served = cli({"serve", "--weights", weights, "--descriptors", source("data/gestures.json"),
                      "--templates", source("configs/templates"), "--port", "0", "--duration", "0.5"});
    });
    th.join();
    CHECK(served.code == 0);
    CHECK(served.out.rfind("listening\t127.0.0.1\t", 0) == 0);

    // a live server from the library, driven by the command
    net::ServerConfig scfg;
    scfg.port = 0;
    net::Server server(testing::seeded_pipeline(kSource), scfg);
    server.start();
    Rng rng(3);
    write_corpus({testing::random_sample(rng, "a", 4)}, dir / "a.csv");
    const auto log = dir / "robot.log";
    const auto r = cli({"robot-sim", "--port", std::to_string(server.port()), "--samples",
                        (dir / "a.csv").string(), "--log", log.string()});
    CHECK(r.code == 0);
    CHECK(r.out == "results\tscripts\terrors\n1\t1\t0\n");
    CHECK(slurp(log).find("RESULT gloss=") != std::string::npos);
    const auto port = server.port();
    server.stop();

    const auto dead = cli({"robot-sim", "--port", std::to_string(port), "--samples", (dir / "a.csv").string(),
                           "--log", log.string()});
    CHECK(dead.code == 1);
    CHECK_FALSE(dead.err.empty());
}
