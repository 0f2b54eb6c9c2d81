// SPDX-License-Identifier: Apache-2.0
#include "signpipe/synth.hpp"

#include <cmath>
#include <numbers>

#include "signpipe/error.hpp"
#include "signpipe/preprocess.hpp"
#include "signpipe/rng.hpp"

namespace signpipe {

namespace {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

// Wrist at the origin, fingers fanning upwards; unit scale.
std::vector<Vec2> hand_template()
{
    std::vector<Vec2> pts = {{0.0, 0.0}};
    const double base_angles[5] = {-1.0, -0.45, -0.1, 0.25, 0.6};
    const double lengths[5] = {0.55, 0.85, 0.9, 0.85, 0.7};
    for (int f = 0; f < 5; ++f) {
        const double a = base_angles[f] - std::numbers::pi / 2;
        for (int j = 1; j <= 4; ++j) {
            const double r = 0.25 + lengths[f] * j / 4.0;
            pts.push_back({r * std::cos(a), r * std::sin(a)});
        }
    }
    return pts;
}

Vec2 rotate(Vec2 p, double a)
{
    return {p.x * std::cos(a) - p.y * std::sin(a), p.x * std::sin(a) + p.y * std::cos(a)};
}

// Canonical pose skeleton, image coordinates with y down.
Vec2 pose_point(std::uint32_t i)
{
    switch (i) {
    case 11: return {0.62, 0.62};
    case 12: return {0.38, 0.62};
    case 13: return {0.68, 0.78};
    case 14: return {0.32, 0.78};
    case 15: return {0.64, 0.9};
    case 16: return {0.36, 0.9};
    default: break;
    }
    if (i <= 10)
        return {0.44 + 0.012 * i, 0.3 + 0.01 * (i % 3)};
    return {0.4 + 0.01 * (i - 17), 0.95 + 0.005 * (i - 17)};
}

// Closed path for class c of n at phase p in [0, 1].
Vec2 class_path(std::size_t c, std::size_t n, double p)
{
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(n);
    const double sweep = 0.16 * (p - 0.5);
    Vec2 v{std::cos(theta) * sweep, std::sin(theta) * sweep};
    if (c % 2 == 1) {
        v.x += 0.05 * std::cos(2.0 * std::numbers::pi * p);
        v.y += 0.05 * std::sin(2.0 * std::numbers::pi * p);
    }
    return v;
}

} // namespace

std::vector<SignSample> synth_corpus(const SynthConfig& cfg, std::size_t count, const std::string& id_prefix)
{
    if (cfg.num_classes == 0)
        throw ArgumentError("synthetic corpus needs at least one class");
    if (cfg.num_classes > static_cast<std::size_t>(kDefaultNumClasses))
        throw ArgumentError("synthetic corpus supports at most 250 classes");
    if (cfg.frames_lo == 0 || cfg.frames_hi < cfg.frames_lo)
        throw ArgumentError("synthetic frame range must satisfy 1 <= lo <= hi");
    if (!(cfg.noise >= 0.0))
        throw ArgumentError("noise must be non-negative");

    Rng rng(cfg.seed);
    const auto hand = hand_template();
    const auto spec = SelectionSpec::defaults();

    std::vector<SignSample> out;
    out.reserve(count);
    for (std::size_t n = 0; n < count; ++n) {
        const std::size_t c = n % cfg.num_classes;
        SignSample s;
        s.sample_id = id_prefix + std::to_string(n);
        s.label = static_cast<int>(c);

        const auto frames =
            cfg.frames_lo + static_cast<std::size_t>(rng.below(cfg.frames_hi - cfg.frames_lo + 1));
        const Vec2 shift{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
        const double scale = rng.uniform(0.9, 1.1);
        const bool left_missing = rng.bernoulli(cfg.left_hand_missing_prob);
        const double hand_angle =
            0.5 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(cfg.num_classes);
        const double phase0 = rng.uniform(-0.05, 0.05);

        const auto emit = [&](std::uint32_t f, LandmarkKind kind, std::uint32_t idx, Vec2 p) {
            LandmarkFrame row;
            row.frame_index = f;
            row.kind = kind;
            row.landmark_index = idx;
            row.x = static_cast<float>(0.5 + (p.x - 0.5) * scale + shift.x + rng.normal(0.0, cfg.noise));
            row.y = static_cast<float>(0.5 + (p.y - 0.5) * scale + shift.y + rng.normal(0.0, cfg.noise));
            row.z = static_cast<float>(rng.normal(0.0, 0.02));
            s.frames.push_back(row);
        };

        for (std::uint32_t f = 0; f < frames; ++f) {
            const double p = frames == 1 ? 0.5 : phase0 + static_cast<double>(f) / double(frames - 1);
            for (std::size_t k = 0; k < spec.lips().size(); ++k) {
                const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / double(spec.lips().size());
                emit(f, LandmarkKind::face, spec.lips()[k], {0.5 + 0.04 * std::cos(a), 0.4 + 0.015 * std::sin(a)});
            }
            if (!left_missing)
                for (std::uint32_t i = 0; i < hand.size(); ++i)
                    emit(f, LandmarkKind::left_hand, i, {0.3 - 0.07 * hand[i].x, 0.75 + 0.07 * hand[i].y});
            for (std::uint32_t i = 0; i < kind_capacity(LandmarkKind::pose); ++i)
                emit(f, LandmarkKind::pose, i, pose_point(i));
            const Vec2 centre = class_path(c, cfg.num_classes, p);
            for (std::uint32_t i = 0; i < hand.size(); ++i) {
                const Vec2 h = rotate(hand[i], hand_angle);
                emit(f, LandmarkKind::right_hand, i, {0.62 + centre.x + 0.07 * h.x, 0.55 + centre.y + 0.07 * h.y});
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace signpipe
