// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>

#include "signpipe/error.hpp"
#include "signpipe/train.hpp"
#include "test_support.hpp"

using namespace signpipe;
using namespace signpipe::nn;

namespace {

ModelConfig grad_config()
{
    ModelConfig cfg;
    cfg.input_dim = 5;
    cfg.extractor_dims = {7, 8};
    cfg.model_dim = 8;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.ff_dim = 6;
    cfg.num_classes = 3;
    cfg.max_seq_len = 4;
    return cfg;
}

template <class T>
std::vector<BasicExample<T>> random_batch(Rng& rng, const ModelConfig& cfg, std::size_t n)
{
    std::vector<BasicExample<T>> batch;
    for (std::size_t i = 0; i < n; ++i) {
        BasicExample<T> ex;
        ex.features = BasicMatrix<T>(cfg.max_seq_len, cfg.input_dim);
        for (auto& v : ex.features.values())
            v = static_cast<T>(rng.normal());
        ex.label = static_cast<int>(rng.below(cfg.num_classes));
        batch.push_back(std::move(ex));
    }
    return batch;
}

BasicWeightStore<double> perturbed_weights(const ModelConfig& cfg, std::uint64_t seed)
{
    auto w = convert_weights<double>(init_weights(cfg, seed));
    Rng rng(seed + 1);
    for (auto& [name, t] : w)
        for (auto& v : t.values)
            v += rng.normal(0.0, 0.2);
    return w;
}

double relative_error(double a, double n)
{
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-7});
}

} // namespace

TEST_CASE("analytic gradients agree with central differences")
{
    const auto cfg = grad_config();
    Rng rng(5);
    const auto batch = random_batch<double>(rng, cfg, 3);
    auto w = perturbed_weights(cfg, 17);
    const auto analytic = compute_gradients<double>(batch, w, cfg);
    CHECK(analytic.loss == doctest::Approx(batch_loss<double>(batch, w, cfg)).epsilon(1e-12));

    std::vector<std::string> names;
    for (const auto& [name, t] : w)
        names.push_back(name);

    const double eps = 1e-4;
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const auto& name = names[rng.below(names.size())];
        auto& values = w.at(name).values;
        const std::size_t idx = rng.below(values.size());
        const double saved = values[idx];
        values[idx] = saved + eps;
        const double up = batch_loss<double>(batch, w, cfg);
        values[idx] = saved - eps;
        const double down = batch_loss<double>(batch, w, cfg);
        values[idx] = saved;
        const double numeric = (up - down) / (2 * eps);
        const double a = analytic.grads.at(name).values[idx];
        const double err = relative_error(a, numeric);
        worst = std::max(worst, err);
        CAPTURE(name);
        CAPTURE(idx);
        CHECK(err < 1e-3);
    }
    MESSAGE("worst relative error " << worst);
}

TEST_CASE("every parameter receives gradient signal")
{
    const auto cfg = grad_config();
    Rng rng(8);
    const auto batch = random_batch<double>(rng, cfg, 2);
    const auto w = perturbed_weights(cfg, 3);
    const auto g = compute_gradients<double>(batch, w, cfg);
    for (const auto& [name, t] : g.grads) {
        double norm = 0;
        for (double v : t.values)
            norm += v * v;
        CAPTURE(name);
        CHECK(norm > 0.0);
    }
}

TEST_CASE("zero learning rate leaves weights unchanged")
{
    const auto cfg = grad_config();
    Rng rng(2);
    const auto batch = random_batch<float>(rng, cfg, 4);
    auto w = init_weights(cfg, 4);
    const auto before = w;
    train_step(batch, w, cfg, 0.0);
    CHECK(w == before);
}

TEST_CASE("loss decreases on a fixed batch")
{
    const auto cfg = grad_config();
    Rng rng(21);
    const auto batch = random_batch<float>(rng, cfg, 6);
    auto w = init_weights(cfg, 9);
    double prev = std::numeric_limits<double>::infinity();
    for (int step = 0; step < 10; ++step) {
        const auto r = train_step(batch, w, cfg, 0.05);
        CHECK(r.loss < prev);
        prev = r.loss;
    }
}

TEST_CASE("non-finite loss raises divergence and keeps weights")
{
    const auto cfg = grad_config();
    Rng rng(1);
    auto batch = random_batch<float>(rng, cfg, 2);
    batch[0].features(0, 0) = std::numeric_limits<float>::infinity();
    auto w = init_weights(cfg, 1);
    const auto before = w;
    CHECK_THROWS_AS(train_step(batch, w, cfg, 0.1), DivergenceError);
    CHECK(w == before);
}

TEST_CASE("labels and batches are validated")
{
    const auto cfg = grad_config();
    Rng rng(4);
    auto batch = random_batch<float>(rng, cfg, 1);
    auto w = init_weights(cfg, 1);
    batch[0].label = 3;
    CHECK_THROWS_AS(train_step(batch, w, cfg, 0.1), ValidationError);
    CHECK_THROWS_AS(train_step({}, w, cfg, 0.1), ArgumentError);
}

TEST_CASE("evaluation counts top-1 and top-5")
{
    ModelConfig cfg = grad_config();
    cfg.num_classes = 7;
    auto w = init_weights(cfg, 1);
    auto& hw = w.at("head.weight").values;
    std::fill(hw.begin(), hw.end(), 0.0f);
    // bias ordering: class 6 best, then 5, 4, ...
    w.at("head.bias").values = {0, 1, 2, 3, 4, 5, 6};
    std::vector<Example> ex(3);
    for (auto& e : ex)
        e.features = Matrix(2, cfg.input_dim, 0.5f);
    ex[0].label = 6;
    ex[1].label = 2;
    ex[2].label = 1;
    const auto r = evaluate(ex, w, cfg);
    CHECK(r.total == 3);
    CHECK(r.top1 == 1);
    CHECK(r.top5 == 2);
    CHECK(r.class_support[2] == 1);
    CHECK(r.class_correct[6] == 1);
    CHECK(r.top1_accuracy() == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("fit is deterministic and learns separable data")
{
    ModelConfig cfg;
    cfg.input_dim = SelectionSpec::defaults().feature_dim();
    cfg.extractor_dims = {32, 16};
    cfg.model_dim = 16;
    cfg.num_layers = 1;
    cfg.num_heads = 2;
    cfg.ff_dim = 16;
    cfg.num_classes = 2;
    cfg.max_seq_len = 8;

    Rng rng(6);
    std::vector<SignSample> train;
    for (int i = 0; i < 8; ++i) {
        auto s = testing::random_sample(rng, "s" + std::to_string(i), 4, i % 2, false);
        // class 1 keeps its right hand high, class 0 low
        for (auto& row : s.frames)
            if (row.kind == LandmarkKind::right_hand)
                row.y = i % 2 ? 0.1f : 0.9f;
        train.push_back(std::move(s));
    }

    TrainOptions opts;
    opts.epochs = 15;
    opts.lr = 0.1;
    opts.batch_size = 4;
    opts.seed = 3;
    auto w1 = init_weights(cfg, 2);
    auto w2 = w1;
    std::size_t calls = 0;
    const auto r1 = fit(train, train, SelectionSpec::defaults(), cfg, w1, opts,
                        [&](const EpochReport&) { ++calls; });
    const auto r2 = fit(train, train, SelectionSpec::defaults(), cfg, w2, opts);
    CHECK(calls == 15);
    CHECK(w1 == w2);
    CHECK(r1.back().val_acc == 1.0);
    CHECK(r1.back().train_loss < r1.front().train_loss);
}
