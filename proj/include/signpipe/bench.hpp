// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "signpipe/model.hpp"

namespace signpipe::nn {

struct LatencyStats {
    double p50_ms = 0.0;
    double p99_ms = 0.0;
    double mean_ms = 0.0;
    double min_ms = 0.0;
    double max_ms = 0.0;
    std::size_t runs = 0;
};

/// Percentiles by linear interpolation between order statistics.
LatencyStats summarize_latencies(std::span<const double> samples_ms);

/// Times `n_runs` forward passes on a fixed random input after 3 warm-up runs.
LatencyStats benchmark_inference(const WeightStore& w, const ModelConfig& cfg, std::size_t n_runs,
                                 std::uint64_t input_seed = 0);

} // namespace signpipe::nn
