// SPDX-License-Identifier: Apache-2.0
#include "signpipe/bench.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include "signpipe/error.hpp"
#include "signpipe/rng.hpp"
#include "signpipe/stats.hpp"

namespace signpipe::nn {

namespace {
constexpr int kWarmupRuns = 3;
} // namespace

LatencyStats summarize_latencies(std::span<const double> samples_ms)
{
    if (samples_ms.empty())
        throw ArgumentError("no latency samples");
    std::vector<double> sorted(samples_ms.begin(), samples_ms.end());
    std::sort(sorted.begin(), sorted.end());
    LatencyStats s;
    s.runs = sorted.size();
    s.p50_ms = quantile_sorted(sorted, 0.50);
    s.p99_ms = quantile_sorted(sorted, 0.99);
    s.mean_ms = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(s.runs);
    s.min_ms = sorted.front();
    s.max_ms = sorted.back();
    return s;
}

LatencyStats benchmark_inference(const WeightStore& w, const ModelConfig& cfg, std::size_t n_runs,
                                 std::uint64_t input_seed)
{
    if (n_runs == 0)
        throw ArgumentError("n_runs must be positive");
    check_weights(w, cfg);
    Rng rng(input_seed);
    Matrix x(cfg.max_seq_len, cfg.input_dim);
    for (auto& v : x.values())
        v = static_cast<float>(rng.normal());

    volatile float sink = 0.0f;
    for (int i = 0; i < kWarmupRuns; ++i)
        sink = sink + forward(x, w, cfg)[0];

    std::vector<double> times;
    times.reserve(n_runs);
    for (std::size_t i = 0; i < n_runs; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto logits = forward(x, w, cfg);
        const auto t1 = std::chrono::steady_clock::now();
        sink = sink + logits[0];
        times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return summarize_latencies(times);
}

} // namespace signpipe::nn
