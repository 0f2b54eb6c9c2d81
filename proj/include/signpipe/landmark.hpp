// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace signpipe {

/// Landmark group produced by the holistic estimator. Integer codes are stable.
enum class LandmarkKind : std::uint8_t { face = 0, left_hand = 1, pose = 2, right_hand = 3 };

inline constexpr int kNumKinds = 4;
inline constexpr int kDefaultNumClasses = 250;

/// Number of landmark indices a kind provides (face 468, pose 33, hands 21).
constexpr std::uint32_t kind_capacity(LandmarkKind kind) noexcept
{
    switch (kind) {
    case LandmarkKind::face: return 468;
    case LandmarkKind::pose: return 33;
    case LandmarkKind::left_hand:
    case LandmarkKind::right_hand: return 21;
    }
    return 0;
}

std::string_view to_string(LandmarkKind kind) noexcept;
std::optional<LandmarkKind> parse_kind(std::string_view text) noexcept;

/// Sentinel for an absent coordinate.
inline constexpr float kMissing = std::numeric_limits<float>::quiet_NaN();
inline bool is_missing(float v) noexcept { return std::isnan(v); }

/// One landmark observation in one video frame.
struct LandmarkFrame {
    std::uint32_t frame_index = 0;
    LandmarkKind kind = LandmarkKind::face;
    std::uint32_t landmark_index = 0;
    float x = kMissing;
    float y = kMissing;
    float z = kMissing;

    /// Field-wise equality where two missing coordinates compare equal.
    friend bool operator==(const LandmarkFrame& a, const LandmarkFrame& b) noexcept;
};

/// A labelled (or unlabelled) clip of one sign: landmark rows ordered by frame.
struct SignSample {
    std::string sample_id;
    std::vector<LandmarkFrame> frames;
    std::optional<int> label;

    std::size_t distinct_frame_count() const noexcept;

    friend bool operator==(const SignSample&, const SignSample&) = default;
};

/// Throws ValidationError if a sample breaks its invariants.
void validate_sample(const SignSample& sample, int num_classes = kDefaultNumClasses);

/// Reads the portable CSV corpus. Rows are grouped by sample_id in order of first
/// appearance; row order inside a sample is preserved.
std::vector<SignSample> read_corpus(const std::filesystem::path& path,
                                    int num_classes = kDefaultNumClasses);
std::vector<SignSample> parse_corpus(std::string_view text, int num_classes = kDefaultNumClasses);

void write_corpus(const std::vector<SignSample>& samples, const std::filesystem::path& path);
std::string format_corpus(const std::vector<SignSample>& samples);

/// Bidirectional class id <-> gloss map. Ids are dense from zero.
class LabelMap {
public:
    LabelMap() = default;
    explicit LabelMap(std::vector<std::string> glosses);

    /// One gloss per line; the line number (from 0) is the class id.
    static LabelMap load(const std::filesystem::path& path);
    /// Glosses "class_0" .. "class_{n-1}", used when no map is configured.
    static LabelMap numbered(int n);

    std::size_t size() const noexcept { return glosses_.size(); }
    const std::string& gloss(int id) const;
    std::optional<int> id(std::string_view gloss) const;
    const std::vector<std::string>& glosses() const noexcept { return glosses_; }

private:
    std::vector<std::string> glosses_;
    std::unordered_map<std::string, int> ids_;
};

} // namespace signpipe
