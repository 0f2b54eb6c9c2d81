// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "signpipe/landmark.hpp"

namespace signpipe {

/// Synthetic signing corpus: each class moves the right hand along its own
/// path with its own hand pose; samples vary in length, placement, scale and
/// per-point noise. Faces carry only the default lip points.
struct SynthConfig {
    std::size_t num_classes = 5;
    std::size_t frames_lo = 12;
    std::size_t frames_hi = 28;
    double noise = 0.01;
    double left_hand_missing_prob = 0.3;
    std::uint64_t seed = 0;
};

/// `count` samples with labels cycling through the classes, ids
/// "<prefix><n>". Deterministic in the config.
std::vector<SignSample> synth_corpus(const SynthConfig& cfg, std::size_t count,
                                     const std::string& id_prefix = "synth_");

} // namespace signpipe
