// SPDX-License-Identifier: Apache-2.0
#include "signpipe/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "signpipe/error.hpp"
#include "signpipe/rng.hpp"

namespace signpipe {

namespace {

constexpr double kStdFloor = 1e-8;

// Mediapipe face-mesh lip contour (outer and inner), sorted.
const std::vector<std::uint32_t> kDefaultLips = {
    0,   13,  14,  17,  37,  39,  40,  61,  78,  80,  81,  82,  84,  87,
    88,  91,  95,  146, 178, 181, 185, 191, 267, 269, 270, 291, 308, 310,
    311, 312, 314, 317, 318, 321, 324, 375, 402, 405, 409, 415};

const std::vector<std::uint32_t> kDefaultPose = {11, 12, 13, 14, 15, 16};

// Left/right counterparts among the arm pose landmarks.
constexpr std::pair<std::uint32_t, std::uint32_t> kPosePairs[] = {{11, 12}, {13, 14}, {15, 16}};

void check_indices(const std::vector<std::uint32_t>& idx, LandmarkKind kind, const char* name)
{
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= kind_capacity(kind))
            throw ValidationError(std::string(name) + " index " + std::to_string(idx[i]) +
                                  " out of range");
        if (i > 0 && idx[i] <= idx[i - 1])
            throw ValidationError(std::string(name) + " indices must be sorted and unique");
    }
}

std::optional<std::size_t> find_index(const std::vector<std::uint32_t>& idx, std::uint32_t v)
{
    const auto it = std::lower_bound(idx.begin(), idx.end(), v);
    if (it == idx.end() || *it != v)
        return std::nullopt;
    return static_cast<std::size_t>(it - idx.begin());
}

float lerp_missing(float a, float b, double frac)
{
    if (frac == 0.0)
        return a;
    if (is_missing(a) || is_missing(b))
        return kMissing;
    return static_cast<float>(a + (static_cast<double>(b) - a) * frac);
}

// Position of output step t over [0, L-1]: (index, fraction).
std::pair<std::size_t, double> source_position(std::size_t t, std::size_t target_len,
                                               std::size_t len)
{
    if (target_len == 1 || len == 1)
        return {0, 0.0};
    const double p = static_cast<double>(t) * static_cast<double>(len - 1) /
                     static_cast<double>(target_len - 1);
    auto i0 = static_cast<std::size_t>(std::floor(p));
    double frac = p - static_cast<double>(i0);
    if (i0 >= len - 1) {
        i0 = len - 1;
        frac = 0.0;
    }
    return {i0, frac};
}

} // namespace

SelectionSpec::SelectionSpec(std::vector<std::uint32_t> lips, std::vector<std::uint32_t> pose)
    : lips_(std::move(lips)), pose_(std::move(pose))
{
    check_indices(lips_, LandmarkKind::face, "lips");
    check_indices(pose_, LandmarkKind::pose, "pose");
}

SelectionSpec SelectionSpec::defaults()
{
    return SelectionSpec(kDefaultLips, kDefaultPose);
}

SelectionSpec SelectionSpec::parse(std::string_view json_text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("selection spec is not valid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("lips") || !j.contains("pose"))
        throw ValidationError("selection spec must be an object with 'lips' and 'pose'");
    try {
        return SelectionSpec(j.at("lips").get<std::vector<std::uint32_t>>(),
                             j.at("pose").get<std::vector<std::uint32_t>>());
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("selection spec: ") + e.what());
    }
}

SelectionSpec SelectionSpec::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open selection spec " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::optional<std::size_t> SelectionSpec::row_of(LandmarkKind kind, std::uint32_t index) const
{
    switch (kind) {
    case LandmarkKind::face:
        return find_index(lips_, index);
    case LandmarkKind::left_hand:
        if (index < kHandPoints)
            return left_hand_offset() + index;
        return std::nullopt;
    case LandmarkKind::right_hand:
        if (index < kHandPoints)
            return right_hand_offset() + index;
        return std::nullopt;
    case LandmarkKind::pose:
        if (auto i = find_index(pose_, index))
            return pose_offset() + *i;
        return std::nullopt;
    }
    return std::nullopt;
}

AugmentConfig AugmentConfig::training_defaults(std::uint64_t seed)
{
    AugmentConfig cfg;
    cfg.resample_lo = 0.8;
    cfg.resample_hi = 1.2;
    cfg.mask_prob = 0.05;
    cfg.flip_prob = 0.5;
    cfg.scale_lo = 0.9;
    cfg.scale_hi = 1.1;
    cfg.shift_max = 0.05;
    cfg.rotate_max_deg = 10.0;
    cfg.shear_max = 0.1;
    cfg.rng_seed = seed;
    return cfg;
}

void AugmentConfig::validate() const
{
    const auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!(resample_lo > 0.0 && resample_lo <= resample_hi))
        throw ValidationError("resample range must satisfy 0 < lo <= hi");
    if (!(scale_lo > 0.0 && scale_lo <= scale_hi))
        throw ValidationError("scale range must satisfy 0 < lo <= hi");
    if (!prob(mask_prob) || !prob(flip_prob))
        throw ValidationError("probabilities must lie in [0, 1]");
    if (shift_max < 0.0 || rotate_max_deg < 0.0 || shear_max < 0.0)
        throw ValidationError("affine ranges must be non-negative");
}

FrameSequence select_and_drop_z(const SignSample& sample, const SelectionSpec& spec)
{
    FrameSequence frames;
    const std::size_t k = spec.num_points();
    for (std::size_t i = 0; i < sample.frames.size(); ++i) {
        const auto& row = sample.frames[i];
        if (i == 0 || row.frame_index != sample.frames[i - 1].frame_index)
            frames.emplace_back(k);
        if (auto r = spec.row_of(row.kind, row.landmark_index))
            frames.back()[*r] = Point2{row.x, row.y};
    }
    return frames;
}

NormalizationStats normalization_stats(const FrameSequence& frames)
{
    NormalizationStats st;
    double sum = 0.0;
    for (const auto& f : frames)
        for (const auto& p : f)
            for (float v : {p.x, p.y})
                if (!is_missing(v)) {
                    sum += v;
                    ++st.count;
                }
    if (st.count == 0)
        throw DegenerateInputError("sample has no observed landmark coordinates");
    st.mean = sum / static_cast<double>(st.count);

    double sq = 0.0;
    for (const auto& f : frames)
        for (const auto& p : f)
            for (float v : {p.x, p.y})
                if (!is_missing(v)) {
                    const double d = v - st.mean;
                    sq += d * d;
                }
    st.stddev = std::sqrt(sq / static_cast<double>(st.count));
    if (st.stddev < kStdFloor)
        st.stddev = 1.0;
    return st;
}

FrameSequence normalize(const FrameSequence& frames)
{
    const auto st = normalization_stats(frames);
    const auto scale = [&](float v) {
        return is_missing(v) ? 0.0f : static_cast<float>((v - st.mean) / st.stddev);
    };
    FrameSequence out = frames;
    for (auto& f : out)
        for (auto& p : f)
            p = Point2{scale(p.x), scale(p.y)};
    return out;
}

FrameSequence resample_frames(const FrameSequence& frames, std::size_t target_len)
{
    if (target_len == 0)
        throw ArgumentError("resample target length must be positive");
    if (frames.empty())
        throw DegenerateInputError("cannot resample an empty sequence");
    if (frames.size() == target_len)
        return frames;
    FrameSequence out(target_len);
    for (std::size_t t = 0; t < target_len; ++t) {
        const auto [i0, frac] = source_position(t, target_len, frames.size());
        const auto& a = frames[i0];
        const auto& b = frames[std::min(i0 + 1, frames.size() - 1)];
        out[t].resize(a.size());
        for (std::size_t k = 0; k < a.size(); ++k)
            out[t][k] = Point2{lerp_missing(a[k].x, b[k].x, frac), lerp_missing(a[k].y, b[k].y, frac)};
    }
    return out;
}

FeatureTensor resample(const FrameSequence& frames, std::size_t target_len)
{
    const auto seq = resample_frames(frames, target_len);
    const std::size_t k = seq.front().size();
    FeatureTensor out(target_len, 2 * k);
    for (std::size_t t = 0; t < target_len; ++t) {
        if (seq[t].size() != k)
            throw ShapeError("ragged frame widths in sequence");
        for (std::size_t i = 0; i < k; ++i) {
            out(t, 2 * i) = seq[t][i].x;
            out(t, 2 * i + 1) = seq[t][i].y;
        }
    }
    return out;
}

FrameSequence horizontal_flip(const FrameSequence& frames, const SelectionSpec& spec)
{
    const std::size_t hand = SelectionSpec::kHandPoints;
    std::vector<std::pair<std::size_t, std::size_t>> pose_swaps;
    for (auto [l, r] : kPosePairs) {
        auto a = spec.row_of(LandmarkKind::pose, l);
        auto b = spec.row_of(LandmarkKind::pose, r);
        if (a && b)
            pose_swaps.emplace_back(*a, *b);
    }

    FrameSequence out = frames;
    for (auto& f : out) {
        for (auto& p : f)
            if (!is_missing(p.x))
                p.x = 1.0f - p.x;
        for (std::size_t i = 0; i < hand; ++i)
            std::swap(f[spec.left_hand_offset() + i], f[spec.right_hand_offset() + i]);
        for (auto [a, b] : pose_swaps)
            std::swap(f[a], f[b]);
    }
    return out;
}

Point2 apply_affine(const AffineParams& params, Point2 p) noexcept
{
    if (is_missing(p.x) || is_missing(p.y))
        return p;
    const double theta = params.rotate_deg * std::numbers::pi / 180.0;
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    const double sx = params.scale * p.x;
    const double sy = params.scale * p.y;
    const double hx = sx + params.shear * sy;
    const double hy = sy;
    return Point2{static_cast<float>(c * hx - s * hy + params.shift_x),
                  static_cast<float>(s * hx + c * hy + params.shift_y)};
}

FrameSequence apply_affine(const FrameSequence& frames, const AffineParams& params)
{
    FrameSequence out = frames;
    for (auto& f : out)
        for (auto& p : f)
            p = apply_affine(params, p);
    return out;
}

FrameSequence augment(const FrameSequence& frames, const SelectionSpec& spec,
                      const AugmentConfig& cfg)
{
    cfg.validate();
    Rng rng(cfg.rng_seed);

    const double u = rng.uniform(cfg.resample_lo, cfg.resample_hi);
    const auto new_len = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(static_cast<double>(frames.size()) * u)));
    FrameSequence out = resample_frames(frames, new_len);

    for (auto& f : out)
        if (rng.bernoulli(cfg.mask_prob))
            std::fill(f.begin(), f.end(), Point2{});

    if (rng.bernoulli(cfg.flip_prob))
        out = horizontal_flip(out, spec);

    AffineParams affine;
    affine.scale = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    affine.rotate_deg = rng.uniform(-cfg.rotate_max_deg, cfg.rotate_max_deg);
    affine.shear = rng.uniform(-cfg.shear_max, cfg.shear_max);
    affine.shift_x = rng.uniform(-cfg.shift_max, cfg.shift_max);
    affine.shift_y = rng.uniform(-cfg.shift_max, cfg.shift_max);
    return apply_affine(out, affine);
}

FeatureTensor preprocess_pipeline(const SignSample& sample, const SelectionSpec& spec,
                                  std::size_t target_len, const std::optional<AugmentConfig>& cfg)
{
    if (target_len == 0)
        throw ArgumentError("target length must be positive");
    auto frames = select_and_drop_z(sample, spec);
    if (frames.empty())
        throw DegenerateInputError("sample '" + sample.sample_id + "' has no frames");
    if (cfg)
        frames = augment(frames, spec, *cfg);
    return resample(normalize(frames), target_len);
}

} // namespace signpipe
