// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "signpipe/landmark.hpp"
#include "signpipe/tensor.hpp"

namespace signpipe {

/// Which landmarks feed the model. Rows are laid out lips, left hand (21),
/// right hand (21), pose, each block in ascending landmark index.
class SelectionSpec {
public:
    static constexpr std::size_t kHandPoints = 21;

    SelectionSpec(std::vector<std::uint32_t> lips, std::vector<std::uint32_t> pose);

    /// 40-point lip contour and shoulders/elbows/wrists (pose 11..16).
    static SelectionSpec defaults();
    /// JSON object `{"lips":[...],"pose":[...]}`.
    static SelectionSpec load(const std::filesystem::path& path);
    static SelectionSpec parse(std::string_view json_text);

    const std::vector<std::uint32_t>& lips() const noexcept { return lips_; }
    const std::vector<std::uint32_t>& pose() const noexcept { return pose_; }

    /// K, the number of selected landmarks per frame.
    std::size_t num_points() const noexcept { return lips_.size() + 2 * kHandPoints + pose_.size(); }
    /// D = 2K, the per-frame feature width.
    std::size_t feature_dim() const noexcept { return 2 * num_points(); }

    std::size_t left_hand_offset() const noexcept { return lips_.size(); }
    std::size_t right_hand_offset() const noexcept { return lips_.size() + kHandPoints; }
    std::size_t pose_offset() const noexcept { return lips_.size() + 2 * kHandPoints; }

    /// Row of a landmark in the per-frame block, or nullopt if not selected.
    std::optional<std::size_t> row_of(LandmarkKind kind, std::uint32_t index) const;

private:
    std::vector<std::uint32_t> lips_;
    std::vector<std::uint32_t> pose_;
};

struct Point2 {
    float x = kMissing;
    float y = kMissing;
    friend bool operator==(const Point2& a, const Point2& b) noexcept
    {
        const auto eq = [](float u, float v) { return (is_missing(u) && is_missing(v)) || u == v; };
        return eq(a.x, b.x) && eq(a.y, b.y);
    }
};

/// K points of one frame.
using PointFrame = std::vector<Point2>;
/// Variable-length sequence of frames, all with the same K.
using FrameSequence = std::vector<PointFrame>;

/// Fixed-shape model input, T rows by D = 2K columns (x, y interleaved per point).
using FeatureTensor = Matrix;

/// One concrete affine map: scale, then shear along x, then rotation, then shift.
struct AffineParams {
    double scale = 1.0;
    double rotate_deg = 0.0;
    double shear = 0.0;
    double shift_x = 0.0;
    double shift_y = 0.0;
};

struct AugmentConfig {
    double resample_lo = 1.0;
    double resample_hi = 1.0;
    double mask_prob = 0.0;
    double flip_prob = 0.0;
    double scale_lo = 1.0;
    double scale_hi = 1.0;
    double shift_max = 0.0;
    double rotate_max_deg = 0.0;
    double shear_max = 0.0;
    std::uint64_t rng_seed = 0;

    /// Moderate settings used for training.
    static AugmentConfig training_defaults(std::uint64_t seed);
    void validate() const;
};

struct NormalizationStats {
    double mean = 0.0;
    double stddev = 1.0;
    std::size_t count = 0;
};

/// Picks the selected landmarks per distinct frame and drops z. Unobserved
/// landmarks stay missing.
FrameSequence select_and_drop_z(const SignSample& sample, const SelectionSpec& spec);

/// Mean and population std over every non-missing x and y value jointly.
/// Throws DegenerateInputError when nothing is observed.
NormalizationStats normalization_stats(const FrameSequence& frames);

/// (v - mean) / std with std < 1e-8 treated as 1; missing values become 0.
FrameSequence normalize(const FrameSequence& frames);

/// Linear interpolation onto `target_len` evenly spaced positions over [0, L-1].
/// Returns a copy when L == target_len.
FeatureTensor resample(const FrameSequence& frames, std::size_t target_len);

/// Same interpolation on raw frames, keeping missing markers (used by augment).
FrameSequence resample_frames(const FrameSequence& frames, std::size_t target_len);

/// x -> 1 - x, swaps the hand blocks and the left/right pose pairs.
FrameSequence horizontal_flip(const FrameSequence& frames, const SelectionSpec& spec);

Point2 apply_affine(const AffineParams& params, Point2 p) noexcept;
FrameSequence apply_affine(const FrameSequence& frames, const AffineParams& params);

/// Temporal resampling and masking, then flip and affine; pure given cfg.rng_seed.
FrameSequence augment(const FrameSequence& frames, const SelectionSpec& spec,
                      const AugmentConfig& cfg);

/// select -> (augment) -> normalize -> resample.
FeatureTensor preprocess_pipeline(const SignSample& sample, const SelectionSpec& spec,
                                  std::size_t target_len,
                                  const std::optional<AugmentConfig>& cfg = std::nullopt);

inline constexpr std::size_t kDefaultTargetLen = 32;

} // namespace signpipe
