// SPDX-License-Identifier: Apache-2.0
#include "signpipe/cli.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "io_util.hpp"
#include "signpipe/bench.hpp"
#include "signpipe/dialogue.hpp"
#include "signpipe/error.hpp"
#include "signpipe/gesture.hpp"
#include "signpipe/landmark.hpp"
#include "signpipe/model.hpp"
#include "signpipe/pipeline.hpp"
#include "signpipe/preprocess.hpp"
#include "signpipe/rng.hpp"
#include "signpipe/server.hpp"
#include "signpipe/synth.hpp"
#include "signpipe/train.hpp"

namespace signpipe {

namespace {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string fixed(double v, int digits)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

/// Options shared by every subcommand, as given on the command line.
struct Flags {
    std::optional<std::string> config, weights, labels, spec, descriptors, templates, model, backend, host;
    std::optional<std::uint64_t> seed;
    std::optional<double> wpm;
    std::optional<std::uint16_t> port;
    bool realtime = false;
};

/// Merged settings.
struct Settings {
    std::uint64_t seed = 0;
    std::optional<fs::path> weights, labels, spec, descriptors, templates, model;
    double wpm = kDefaultWordsPerMinute;
    std::string host = "127.0.0.1";
    std::uint16_t port = net::kDefaultPort;
    BackendConfig::Kind backend = BackendConfig::Kind::mock;
    HttpBackendConfig http;
    bool realtime = false;
};

std::optional<std::string> env(const char* name)
{
    const char* v = std::getenv(name);
    if (!v || !*v)
        return std::nullopt;
    return std::string(v);
}

template <class T>
T parse_number(const std::string& text, const std::string& what)
{
    T v{};
    std::istringstream in(text);
    in >> v;
    if (!in || !in.eof())
        throw UsageError("invalid " + what + " '" + text + "'");
    return v;
}

BackendConfig::Kind parse_backend(const std::string& s)
{
    if (s == "mock")
        return BackendConfig::Kind::mock;
    if (s == "http")
        return BackendConfig::Kind::http;
    throw UsageError("unknown backend '" + s + "' (expected mock or http)");
}

Settings resolve(const Flags& f)
{
    nlohmann::json file = nlohmann::json::object();
    fs::path base;
    if (const auto cfg = f.config ? f.config : env("SIGNPIPE_CONFIG")) {
        if (!fs::is_regular_file(*cfg))
            throw UsageError("config file not found: " + *cfg);
        try {
            file = nlohmann::json::parse(detail::read_text_file(*cfg, "config"));
        } catch (const nlohmann::json::exception& e) {
            throw UsageError("config " + *cfg + ": " + e.what());
        }
        if (!file.is_object())
            throw UsageError("config " + *cfg + ": expected a JSON object");
        base = fs::path(*cfg).parent_path();
    }
    static const std::set<std::string> known = {"seed", "weights", "labels", "spec", "descriptors",
                                                "templates", "model", "wpm", "host", "port",
                                                "backend", "realtime", "http"};
    for (const auto& [key, value] : file.items())
        if (!known.count(key))
            throw UsageError("unknown config key '" + key + "'");

    // flag, then environment, then config file
    const auto text = [&](const std::optional<std::string>& flag, const char* var,
                          const char* key) -> std::optional<std::string> {
        if (flag)
            return flag;
        if (auto e = env(var))
            return e;
        if (file.contains(key)) {
            const auto& v = file[key];
            return v.is_string() ? v.get<std::string>() : v.dump();
        }
        return std::nullopt;
    };
    const auto path = [&](const std::optional<std::string>& flag, const char* var,
                          const char* key) -> std::optional<fs::path> {
        if (flag)
            return fs::path(*flag);
        if (auto e = env(var))
            return fs::path(*e);
        if (file.contains(key)) {
            if (!file[key].is_string())
                throw UsageError(std::string("config key '") + key + "' must be a string");
            fs::path p = file[key].get<std::string>();
            return p.is_relative() ? base / p : p;
        }
        return std::nullopt;
    };

    Settings s;
    s.weights = path(f.weights, "SIGNPIPE_WEIGHTS", "weights");
    s.labels = path(f.labels, "SIGNPIPE_LABELS", "labels");
    s.spec = path(f.spec, "SIGNPIPE_SPEC", "spec");
    s.descriptors = path(f.descriptors, "SIGNPIPE_DESCRIPTORS", "descriptors");
    s.templates = path(f.templates, "SIGNPIPE_TEMPLATES", "templates");
    s.model = path(f.model, "SIGNPIPE_MODEL", "model");
    if (f.seed)
        s.seed = *f.seed;
    else if (auto v = text(std::nullopt, "SIGNPIPE_SEED", "seed"))
        s.seed = parse_number<std::uint64_t>(*v, "seed");
    if (f.wpm)
        s.wpm = *f.wpm;
    else if (auto v = text(std::nullopt, "SIGNPIPE_WPM", "wpm"))
        s.wpm = parse_number<double>(*v, "wpm");
    if (!(s.wpm > 0.0))
        throw UsageError("wpm must be positive");
    if (f.port)
        s.port = *f.port;
    else if (auto v = text(std::nullopt, "SIGNPIPE_PORT", "port"))
        s.port = parse_number<std::uint16_t>(*v, "port");
    if (auto v = text(f.host, "SIGNPIPE_HOST", "host"))
        s.host = *v;
    if (auto v = text(f.backend, "SIGNPIPE_BACKEND", "backend"))
        s.backend = parse_backend(*v);
    s.realtime = f.realtime;
    if (!s.realtime && file.contains("realtime")) {
        if (!file["realtime"].is_boolean())
            throw UsageError("config key 'realtime' must be a boolean");
        s.realtime = file["realtime"].get<bool>();
    }
    if (file.contains("http")) {
        const auto& h = file["http"];
        try {
            s.http.base_url = h.value("base_url", s.http.base_url);
            s.http.model = h.value("model", s.http.model);
            s.http.api_key_env = h.value("api_key_env", s.http.api_key_env);
            s.http.timeout_s = h.value("timeout_s", s.http.timeout_s);
        } catch (const nlohmann::json::exception& e) {
            throw UsageError(std::string("config key 'http': ") + e.what());
        }
    }
    return s;
}

fs::path need_file(const std::optional<fs::path>& p, const std::string& what)
{
    if (!p)
        throw UsageError("no " + what + " given");
    if (!fs::is_regular_file(*p))
        throw UsageError(what + " not found: " + p->string());
    return *p;
}

fs::path need_dir(const std::optional<fs::path>& p, const std::string& what)
{
    if (!p)
        throw UsageError("no " + what + " given");
    if (!fs::is_directory(*p))
        throw UsageError(what + " directory not found: " + p->string());
    return *p;
}

fs::path output_path(const std::string& p, const std::string& what)
{
    const fs::path out(p);
    const auto parent = out.parent_path();
    if (!parent.empty() && !fs::is_directory(parent))
        throw UsageError(what + " directory does not exist: " + parent.string());
    return out;
}

/// Runs a loading step, reporting bad configuration as a usage error.
template <class F>
auto load(F&& f) -> decltype(f())
{
    try {
        return f();
    } catch (const UsageError&) {
        throw;
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
}

fs::path sidecar_of(const fs::path& weights)
{
    return fs::path(weights.string() + ".json");
}

SelectionSpec load_spec(const Settings& s)
{
    if (!s.spec)
        return SelectionSpec::defaults();
    const auto p = need_file(s.spec, "selection spec");
    return load([&] { return SelectionSpec::load(p); });
}

/// --model wins; otherwise the sidecar next to the weights; otherwise defaults.
nn::ModelConfig load_model_config(const Settings& s)
{
    if (s.model) {
        const auto p = need_file(s.model, "model config");
        return load([&] { return nn::ModelConfig::load(p); });
    }
    if (s.weights && fs::is_regular_file(sidecar_of(*s.weights)))
        return load([&] { return nn::ModelConfig::load(sidecar_of(*s.weights)); });
    return nn::ModelConfig{};
}

nn::WeightStore load_trained(const Settings& s, const nn::ModelConfig& cfg)
{
    const auto p = need_file(s.weights, "weights file");
    return load([&] {
        auto w = nn::load_weights(p);
        nn::check_weights(w, cfg);
        return w;
    });
}

LabelMap load_labels(const Settings& s, const nn::ModelConfig& cfg)
{
    if (!s.labels)
        return LabelMap::numbered(static_cast<int>(cfg.num_classes));
    const auto p = need_file(s.labels, "label map");
    auto labels = load([&] { return LabelMap::load(p); });
    if (labels.size() != cfg.num_classes)
        throw UsageError("label map has " + std::to_string(labels.size()) + " glosses but the model has " +
                         std::to_string(cfg.num_classes) + " classes");
    return labels;
}

void check_spec_fits(const SelectionSpec& spec, const nn::ModelConfig& cfg)
{
    if (spec.feature_dim() != cfg.input_dim)
        throw UsageError("selection spec yields " + std::to_string(spec.feature_dim()) +
                         " features but the model expects " + std::to_string(cfg.input_dim));
}

GestureDb load_db(const Settings& s)
{
    const auto p = need_file(s.descriptors, "descriptor DB");
    return load([&] { return GestureDb::load(p); });
}

PromptTemplate load_templates(const Settings& s)
{
    const auto p = need_dir(s.templates, "templates");
    return load([&] { return PromptTemplate::load(p); });
}

BackendConfig backend_config(const Settings& s)
{
    BackendConfig b;
    b.kind = s.backend;
    b.seed = s.seed;
    b.http = s.http;
    return b;
}

std::vector<SignSample> load_corpus(const fs::path& p, std::size_t num_classes)
{
    return read_corpus(p, static_cast<int>(num_classes));
}

std::atomic<bool> g_stop{false};
extern "C" void on_stop_signal(int)
{
    g_stop = true;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Sign recognition to co-speech gesture pipeline", "signpipe"};
    app.require_subcommand(1);
    app.fallthrough();

    Flags f;
    app.add_option("--config", f.config, "JSON settings file");
    app.add_option("--seed", f.seed, "Random seed");
    app.add_option("--weights", f.weights, "Weight file");
    app.add_option("--labels", f.labels, "Label map, one gloss per line");
    app.add_option("--spec", f.spec, "Landmark selection spec");
    app.add_option("--descriptors", f.descriptors, "Gesture descriptor DB");
    app.add_option("--templates", f.templates, "Prompt template directory");
    app.add_option("--model", f.model, "Model config");
    app.add_option("--wpm", f.wpm, "Speech rate in words per minute");
    app.add_option("--host", f.host, "Server host");
    app.add_option("--port", f.port, "Server port");
    app.add_option("--backend", f.backend, "LLM backend: mock or http");
    app.add_flag("--realtime", f.realtime, "Pace the robot log in real time");

    // synth
    auto* synth = app.add_subcommand("synth", "Write a synthetic landmark corpus");
    std::string synth_out, synth_prefix = "synth_";
    std::size_t synth_count = 200;
    SynthConfig synth_cfg;
    synth->add_option("--out", synth_out, "Output corpus CSV")->required();
    synth->add_option("--count", synth_count, "Number of samples")->capture_default_str();
    synth->add_option("--classes", synth_cfg.num_classes, "Number of classes")->capture_default_str();
    synth->add_option("--prefix", synth_prefix, "Sample id prefix")->capture_default_str();
    synth->add_option("--noise", synth_cfg.noise, "Per-point noise")->capture_default_str();

    // preprocess
    auto* prep = app.add_subcommand("preprocess", "Turn a corpus into feature tensors");
    std::string prep_corpus, prep_out;
    std::size_t prep_len = kDefaultTargetLen;
    bool prep_augment = false;
    prep->add_option("--corpus", prep_corpus, "Landmark corpus CSV")->required();
    prep->add_option("--out", prep_out, "Output tensor file")->required();
    prep->add_option("--frames", prep_len, "Target sequence length")->capture_default_str();
    prep->add_flag("--augment", prep_augment, "Apply seeded augmentation");

    // train
    auto* train = app.add_subcommand("train", "Train a classifier");
    std::string train_corpus, train_out;
    std::optional<std::string> train_val;
    nn::TrainOptions topts;
    train->add_option("--corpus", train_corpus, "Training corpus CSV")->required();
    train->add_option("--val", train_val, "Validation corpus CSV");
    train->add_option("--out", train_out, "Output weight file")->required();
    train->add_option("--epochs", topts.epochs, "Epochs")->capture_default_str();
    train->add_option("--lr", topts.lr, "Learning rate")->capture_default_str();
    train->add_option("--batch-size", topts.batch_size, "Batch size")->capture_default_str();
    train->add_flag("--augment", topts.augment, "Augment training samples");

    // infer
    auto* infer = app.add_subcommand("infer", "Predict a gloss per sample");
    std::string infer_input;
    infer->add_option("--input", infer_input, "Corpus CSV with one or more samples")->required();

    // eval
    auto* eval = app.add_subcommand("eval", "Accuracy on a labelled corpus");
    std::string eval_corpus;
    eval->add_option("--corpus", eval_corpus, "Labelled corpus CSV")->required();

    // serve
    auto* serve = app.add_subcommand("serve", "Run the recognition server");
    double deadline_s = 10.0, duration_s = 0.0;
    std::size_t max_retries = 2;
    serve->add_option("--deadline", deadline_s, "Per-request deadline in seconds")->capture_default_str();
    serve->add_option("--max-retries", max_retries, "Markup retries")->capture_default_str();
    serve->add_option("--duration", duration_s, "Stop after this many seconds (0 runs until signalled)");

    // robot-sim
    auto* robot = app.add_subcommand("robot-sim", "Stream samples to a server and log the replies");
    std::string robot_samples, robot_log;
    robot->add_option("--samples", robot_samples, "Corpus CSV to send")->required();
    robot->add_option("--log", robot_log, "Event log path")->required();

    // compose
    auto* comp = app.add_subcommand("compose", "Compose a tagged reply for one recognition");
    std::string gloss;
    double confidence = 0.0;
    comp->add_option("--gloss", gloss, "Recognized gloss")->required();
    comp->add_option("--confidence", confidence, "Confidence in percent")->required();
    comp->add_option("--max-retries", max_retries, "Markup retries")->capture_default_str();

    auto* stats = app.add_subcommand("stats", "Playtime statistics of a descriptor DB");

    auto* bench = app.add_subcommand("bench", "Forward-pass latency");
    std::size_t bench_runs = 100;
    bench->add_option("--runs", bench_runs, "Timed runs")->capture_default_str();

    auto* params = app.add_subcommand("params", "Parameter count of a model config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        const auto s = resolve(f);

        if (synth->parsed()) {
            if (synth_cfg.num_classes == 0)
                throw UsageError("--classes must be positive");
            synth_cfg.seed = s.seed;
            const auto path = output_path(synth_out, "corpus");
            const auto corpus = synth_corpus(synth_cfg, synth_count, synth_prefix);
            write_corpus(corpus, path);
            err << "wrote " << corpus.size() << " samples to " << path.string() << "\n";
            return kExitOk;
        }

        if (prep->parsed()) {
            const auto spec = load_spec(s);
            const auto corpus_path = need_file(fs::path(prep_corpus), "corpus");
            const auto path = output_path(prep_out, "feature");
            if (prep_len == 0)
                throw UsageError("--frames must be positive");
            const auto corpus = read_corpus(corpus_path);
            Rng rng(s.seed);
            TensorMap features;
            for (const auto& sample : corpus) {
                std::optional<AugmentConfig> aug;
                if (prep_augment)
                    aug = AugmentConfig::training_defaults(rng.next_u64());
                const auto x = preprocess_pipeline(sample, spec, prep_len, aug);
                features[sample.sample_id] = Tensor{{static_cast<std::uint32_t>(x.rows()),
                                                     static_cast<std::uint32_t>(x.cols())},
                                                    x.values()};
            }
            save_tensors(features, path);
            out << "samples\tframes\tfeatures\n"
                << features.size() << "\t" << prep_len << "\t" << spec.feature_dim() << "\n";
            return kExitOk;
        }

        if (train->parsed()) {
            const auto cfg = load_model_config(s);
            const auto spec = load_spec(s);
            check_spec_fits(spec, cfg);
            const auto corpus_path = need_file(fs::path(train_corpus), "training corpus");
            std::optional<fs::path> val_path;
            if (train_val)
                val_path = need_file(fs::path(*train_val), "validation corpus");
            const auto path = output_path(train_out, "weights");
            if (topts.batch_size == 0)
                throw UsageError("--batch-size must be positive");
            if (!(topts.lr >= 0.0))
                throw UsageError("--lr must be non-negative");

            const auto train_set = load_corpus(corpus_path, cfg.num_classes);
            const auto val_set = val_path ? load_corpus(*val_path, cfg.num_classes) : std::vector<SignSample>{};
            if (train_set.empty())
                throw ValidationError("training corpus is empty");
            topts.seed = s.seed;
            auto w = nn::init_weights(cfg, s.seed);
            out << "epoch,train_loss,train_acc,val_loss,val_acc\n" << std::flush;
            nn::fit(train_set, val_set, spec, cfg, w, topts, [&](const nn::EpochReport& r) {
                out << r.epoch << "," << fixed(r.train_loss, 6) << "," << fixed(r.train_acc, 4) << ",";
                if (!val_set.empty())
                    out << fixed(r.val_loss, 6) << "," << fixed(r.val_acc, 4);
                else
                    out << ",";
                out << "\n" << std::flush;
            });
            nn::save_weights(w, path);
            detail::write_text_file(sidecar_of(path), cfg.to_json());
            err << "saved weights to " << path.string() << "\n";
            return kExitOk;
        }

        if (infer->parsed() || eval->parsed()) {
            const auto cfg = load_model_config(s);
            const auto w = load_trained(s, cfg);
            const auto labels = load_labels(s, cfg);
            const auto spec = load_spec(s);
            check_spec_fits(spec, cfg);
            if (infer->parsed()) {
                const auto input = need_file(fs::path(infer_input), "input corpus");
                for (const auto& sample : load_corpus(input, cfg.num_classes)) {
                    const auto x = preprocess_pipeline(sample, spec, cfg.max_seq_len);
                    const auto p = nn::predict(x, w, cfg, labels);
                    out << p.gloss << "\t" << fixed(p.confidence, 6) << "\n";
                }
                return kExitOk;
            }
            const auto input = need_file(fs::path(eval_corpus), "corpus");
            const auto corpus = load_corpus(input, cfg.num_classes);
            if (corpus.empty())
                throw ValidationError("corpus " + input.string() + " has no samples");
            const auto examples = nn::make_examples(corpus, spec, cfg);
            const auto r = nn::evaluate(examples, w, cfg);
            out << "metric,value\n"
                << "samples," << r.total << "\n"
                << "top1," << fixed(r.top1_accuracy(), 6) << "\n"
                << "top5," << fixed(r.top5_accuracy(), 6) << "\n"
                << "loss," << fixed(r.loss, 6) << "\n"
                << "class_id,gloss,support,correct\n";
            for (std::size_t c = 0; c < r.class_support.size(); ++c)
                if (r.class_support[c] > 0)
                    out << c << "," << labels.gloss(static_cast<int>(c)) << "," << r.class_support[c] << ","
                        << r.class_correct[c] << "\n";
            return kExitOk;
        }

        if (serve->parsed()) {
            auto res = std::make_shared<PipelineResources>();
            res->model = load_model_config(s);
            res->weights = load_trained(s, res->model);
            res->labels = load_labels(s, res->model);
            res->spec = load_spec(s);
            res->gestures = load_db(s);
            res->templates = load_templates(s);
            res->words_per_minute = s.wpm;
            res->max_retries = max_retries;
            load([&] {
                res->validate();
                return 0;
            });
            if (!(deadline_s > 0.0))
                throw UsageError("--deadline must be positive");

            net::ServerConfig cfg;
            cfg.host = s.host;
            cfg.port = s.port;
            cfg.deadline_s = deadline_s;
            cfg.backend = backend_config(s);
            cfg.log = [&err](const std::string& line) { err << line << "\n" << std::flush; };
            net::Server server(res, cfg);
            server.start();
            out << "listening\t" << s.host << "\t" << server.port() << "\n" << std::flush;

            g_stop = false;
            auto old_int = std::signal(SIGINT, on_stop_signal);
            auto old_term = std::signal(SIGTERM, on_stop_signal);
            const auto until = std::chrono::steady_clock::now() + std::chrono::duration<double>(duration_s);
            while (!g_stop && (duration_s <= 0.0 || std::chrono::steady_clock::now() < until))
                std::this_thread::sleep_for(std::chrono::milliseconds(50));
            std::signal(SIGINT, old_int);
            std::signal(SIGTERM, old_term);
            server.stop();
            return kExitOk;
        }

        if (robot->parsed()) {
            net::RobotSimConfig cfg;
            cfg.host = s.host;
            cfg.port = s.port;
            cfg.realtime = s.realtime;
            cfg.log_path = output_path(robot_log, "log");
            cfg.samples = read_corpus(need_file(fs::path(robot_samples), "sample corpus"));
            const auto r = net::robot_sim(cfg);
            out << "results\tscripts\terrors\n" << r.results << "\t" << r.scripts << "\t" << r.errors << "\n";
            return r.errors == 0 ? kExitOk : kExitFailure;
        }

        if (comp->parsed()) {
            const auto db = load_db(s);
            const auto tmpl = load_templates(s);
            auto backend = make_backend(backend_config(s));
            const auto r = compose({gloss, confidence}, db, *backend, tmpl, max_retries);
            const auto timeline = schedule(r.script, db, s.wpm);
            for (const auto& w : r.warnings)
                err << "warning: " << w << "\n";
            for (const auto& line : net::render_script(to_wire(r, timeline)))
                out << line << "\n";
            return kExitOk;
        }

        if (stats->parsed()) {
            const auto st = playtime_stats(load_db(s));
            out << "stat,value\n"
                << "mean," << fixed(st.mean, 4) << "\n"
                << "std," << fixed(st.std, 4) << "\n"
                << "min," << fixed(st.min, 4) << "\n"
                << "p25," << fixed(st.p25, 4) << "\n"
                << "p50," << fixed(st.p50, 4) << "\n"
                << "p75," << fixed(st.p75, 4) << "\n"
                << "max," << fixed(st.max, 4) << "\n";
            return kExitOk;
        }

        if (bench->parsed()) {
            const auto cfg = load_model_config(s);
            const auto w = s.weights ? load_trained(s, cfg) : nn::init_weights(cfg, s.seed);
            if (bench_runs == 0)
                throw UsageError("--runs must be positive");
            const auto r = nn::benchmark_inference(w, cfg, bench_runs, s.seed);
            out << "runs\tp50_ms\tp99_ms\tmean_ms\tmin_ms\tmax_ms\n"
                << r.runs << "\t" << fixed(r.p50_ms, 3) << "\t" << fixed(r.p99_ms, 3) << "\t"
                << fixed(r.mean_ms, 3) << "\t" << fixed(r.min_ms, 3) << "\t" << fixed(r.max_ms, 3) << "\n";
            return kExitOk;
        }

        if (params->parsed()) {
            const auto cfg = load_model_config(s);
            load([&] {
                cfg.validate();
                return 0;
            });
            out << "parameters\t" << nn::count_parameters(cfg) << "\n";
            return kExitOk;
        }
    } catch (const UsageError& e) {
        err << "signpipe: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "signpipe: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

} // namespace signpipe
