// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace signpipe {

struct GestureDescriptor {
    std::string tag;
    std::string description;
    double playtime_s = 0.0;
    std::vector<std::string> body_parts; // unique, in file order

    bool uses(std::string_view part) const;
    friend bool operator==(const GestureDescriptor&, const GestureDescriptor&) = default;
};

/// Throws ValidationError when the tag is empty or holds whitespace or
/// brackets, the playtime is not a positive finite number, or body_parts is
/// empty or repeats an entry.
void validate_descriptor(const GestureDescriptor& d);

/// Immutable, insertion-ordered descriptor set with unique tags.
class GestureDb {
public:
    GestureDb() = default;
    explicit GestureDb(std::vector<GestureDescriptor> entries);

    /// JSON array of {"tag","description","playtime_s","body_parts"}.
    static GestureDb parse(std::string_view json_text);
    static GestureDb load(const std::filesystem::path& path);
    std::string to_json() const;

    const GestureDescriptor* find(std::string_view tag) const;
    bool contains(std::string_view tag) const { return find(tag) != nullptr; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const std::vector<GestureDescriptor>& entries() const noexcept { return entries_; }
    auto begin() const noexcept { return entries_.begin(); }
    auto end() const noexcept { return entries_.end(); }

private:
    std::vector<GestureDescriptor> entries_;
};

struct PlaytimeStats {
    double mean = 0.0;
    double std = 0.0; // sample (n - 1); 0 for a single entry
    double min = 0.0;
    double p25 = 0.0;
    double p50 = 0.0;
    double p75 = 0.0;
    double max = 0.0;
};

/// Throws ArgumentError on an empty input.
PlaytimeStats playtime_stats(std::span<const double> playtimes);
PlaytimeStats playtime_stats(const GestureDb& db);

struct PlainText {
    std::string text;
    friend bool operator==(const PlainText&, const PlainText&) = default;
};

struct GestureSpan {
    std::string tag;
    std::string text;
    friend bool operator==(const GestureSpan&, const GestureSpan&) = default;
};

using Segment = std::variant<PlainText, GestureSpan>;

struct TaggedScript {
    std::vector<Segment> segments;

    std::size_t span_count() const;
    std::vector<std::string> tags() const;
    friend bool operator==(const TaggedScript&, const TaggedScript&) = default;
};

/// `[Tag]` opens a span and `[/Tag]` closes it. Spans are flat. A '[' that
/// does not start a well-formed bracket token is ordinary text. Throws
/// MarkupError for an unknown tag, an unclosed span, a mismatched or stray
/// close, or an open inside an open span.
TaggedScript parse_markup(std::string_view text, const GestureDb& db);

/// Inverse of parse_markup.
std::string to_markup(const TaggedScript& script);

/// Collapses whitespace runs to one space, trims, and drops a space that
/// precedes closing punctuation.
std::string normalize_spacing(std::string_view text);

/// Plain text of the script with spans unwrapped, spacing normalized.
std::string strip_tags(const TaggedScript& script);

/// Removes every bracket token, known or not, then normalizes spacing.
std::string strip_bracket_tokens(std::string_view text);

/// Whitespace-delimited words across the concatenated segment text. Tokens
/// made only of punctuation are not words.
std::size_t word_count(const TaggedScript& script);

constexpr double kDefaultWordsPerMinute = 150.0;
constexpr double kOverrunSlackSeconds = 0.5;

struct SpeechEvent {
    std::string text;
    double start_s = 0.0;
    double duration_s = 0.0;
};

struct GestureEvent {
    std::string tag;
    double start_s = 0.0;
    double duration_s = 0.0;
    std::vector<std::string> body_parts;
};

using TimelineEvent = std::variant<SpeechEvent, GestureEvent>;

double event_start(const TimelineEvent& e);
double event_duration(const TimelineEvent& e);

struct TimelineWarning {
    enum class Kind { overrun, conflict };
    Kind kind = Kind::overrun;
    std::string message;
};

struct Timeline {
    std::vector<TimelineEvent> events; // sorted by start; ties keep speech first
    std::vector<TimelineWarning> warnings;
    double speech_duration_s = 0.0;

    std::size_t count(TimelineWarning::Kind kind) const;
};

/// Speech runs back to back at 60 / wpm seconds per word; a word belongs to
/// the segment where it starts. Bare punctuation takes no time and joins the
/// preceding speech event. Each gesture starts with the first word of
/// its span (or at the current speech time for a span with no words).
Timeline schedule(const TaggedScript& script, const GestureDb& db,
                  double words_per_minute = kDefaultWordsPerMinute);

} // namespace signpipe
