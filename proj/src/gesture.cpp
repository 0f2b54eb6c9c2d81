// SPDX-License-Identifier: Apache-2.0
#include "signpipe/gesture.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include <json.hpp>

#include "io_util.hpp"
#include "signpipe/error.hpp"
#include "signpipe/stats.hpp"

namespace signpipe {

namespace {

bool is_space(char c)
{
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_tag_char(char c)
{
    return !is_space(c) && c != '[' && c != ']';
}

bool is_closing_punct(char c)
{
    return std::string_view(".,!?;:)").find(c) != std::string_view::npos;
}

std::vector<std::string_view> split_words(std::string_view text)
{
    std::vector<std::string_view> words;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i]))
            ++i;
        const std::size_t start = i;
        while (i < text.size() && !is_space(text[i]))
            ++i;
        if (i > start)
            words.push_back(text.substr(start, i - start));
    }
    return words;
}

// Bytes >= 0x80 belong to multi-byte letters.
bool is_spoken(std::string_view token)
{
    return std::any_of(token.begin(), token.end(), [](char c) {
        const auto u = static_cast<unsigned char>(c);
        return u >= 0x80 || std::isalnum(u);
    });
}

std::vector<std::string_view> spoken_tokens(std::string_view text)
{
    auto tokens = split_words(text);
    std::erase_if(tokens, [](std::string_view t) { return !is_spoken(t); });
    return tokens;
}

struct BracketToken {
    std::size_t begin = 0;
    std::size_t end = 0; // one past ']'
    bool closing = false;
    std::string_view tag;
};

// A well-formed token at `pos` ('[' already seen), or nullopt.
std::optional<BracketToken> read_token(std::string_view text, std::size_t pos)
{
    BracketToken tok;
    tok.begin = pos;
    std::size_t i = pos + 1;
    if (i < text.size() && text[i] == '/') {
        tok.closing = true;
        ++i;
    }
    const std::size_t tag_start = i;
    while (i < text.size() && is_tag_char(text[i]))
        ++i;
    if (i == tag_start || i >= text.size() || text[i] != ']')
        return std::nullopt;
    tok.tag = text.substr(tag_start, i - tag_start);
    tok.end = i + 1;
    return tok;
}

std::string format_seconds(double s)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", s);
    return buf;
}

const std::string& segment_text(const Segment& s)
{
    return std::visit([](const auto& v) -> const std::string& { return v.text; }, s);
}

} // namespace

bool GestureDescriptor::uses(std::string_view part) const
{
    return std::find(body_parts.begin(), body_parts.end(), part) != body_parts.end();
}

void validate_descriptor(const GestureDescriptor& d)
{
    if (d.tag.empty())
        throw ValidationError("gesture tag is empty");
    if (!std::all_of(d.tag.begin(), d.tag.end(), is_tag_char) || d.tag.front() == '/')
        throw ValidationError("gesture tag '" + d.tag + "' contains whitespace, brackets or a leading '/'");
    if (!(d.playtime_s > 0.0) || !std::isfinite(d.playtime_s))
        throw ValidationError("gesture '" + d.tag + "' has non-positive playtime");
    if (d.body_parts.empty())
        throw ValidationError("gesture '" + d.tag + "' lists no body parts");
    std::set<std::string> seen;
    for (const auto& p : d.body_parts)
        if (p.empty() || !seen.insert(p).second)
            throw ValidationError("gesture '" + d.tag + "' has an empty or repeated body part");
}

GestureDb::GestureDb(std::vector<GestureDescriptor> entries) : entries_(std::move(entries))
{
    std::set<std::string_view> tags;
    for (const auto& d : entries_) {
        validate_descriptor(d);
        if (!tags.insert(d.tag).second)
            throw ValidationError("duplicate gesture tag '" + d.tag + "'");
    }
}

GestureDb GestureDb::parse(std::string_view json_text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("descriptor DB is not valid JSON: ") + e.what());
    }
    if (!j.is_array())
        throw ValidationError("descriptor DB must be a JSON array");
    std::vector<GestureDescriptor> entries;
    try {
        for (const auto& item : j) {
            GestureDescriptor d;
            d.tag = item.at("tag").get<std::string>();
            d.description = item.value("description", std::string());
            d.playtime_s = item.at("playtime_s").get<double>();
            d.body_parts = item.at("body_parts").get<std::vector<std::string>>();
            entries.push_back(std::move(d));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("descriptor DB: ") + e.what());
    }
    return GestureDb(std::move(entries));
}

GestureDb GestureDb::load(const std::filesystem::path& path)
{
    return parse(detail::read_text_file(path, "descriptor DB"));
}

std::string GestureDb::to_json() const
{
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& d : entries_) {
        nlohmann::ordered_json j;
        j["tag"] = d.tag;
        j["description"] = d.description;
        j["playtime_s"] = d.playtime_s;
        j["body_parts"] = d.body_parts;
        arr.push_back(std::move(j));
    }
    return arr.dump(2) + "\n";
}

const GestureDescriptor* GestureDb::find(std::string_view tag) const
{
    for (const auto& d : entries_)
        if (d.tag == tag)
            return &d;
    return nullptr;
}

PlaytimeStats playtime_stats(std::span<const double> playtimes)
{
    if (playtimes.empty())
        throw ArgumentError("playtime statistics need at least one gesture");
    std::vector<double> v(playtimes.begin(), playtimes.end());
    std::sort(v.begin(), v.end());
    const double n = static_cast<double>(v.size());

    PlaytimeStats s;
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v)
            ss += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(ss / (n - 1.0));
    }
    s.min = v.front();
    s.p25 = quantile_sorted(v, 0.25);
    s.p50 = quantile_sorted(v, 0.50);
    s.p75 = quantile_sorted(v, 0.75);
    s.max = v.back();
    return s;
}

PlaytimeStats playtime_stats(const GestureDb& db)
{
    std::vector<double> v;
    v.reserve(db.size());
    for (const auto& d : db)
        v.push_back(d.playtime_s);
    return playtime_stats(v);
}

std::size_t TaggedScript::span_count() const
{
    return static_cast<std::size_t>(std::count_if(segments.begin(), segments.end(), [](const auto& s) {
        return std::holds_alternative<GestureSpan>(s);
    }));
}

std::vector<std::string> TaggedScript::tags() const
{
    std::vector<std::string> out;
    for (const auto& s : segments)
        if (const auto* g = std::get_if<GestureSpan>(&s))
            out.push_back(g->tag);
    return out;
}

TaggedScript parse_markup(std::string_view text, const GestureDb& db)
{
    TaggedScript script;
    std::string buffer;
    std::optional<BracketToken> open;

    const auto flush_plain = [&] {
        if (!buffer.empty())
            script.segments.emplace_back(PlainText{std::move(buffer)});
        buffer.clear();
    };

    std::size_t i = 0;
    while (i < text.size()) {
        const auto tok = text[i] == '[' ? read_token(text, i) : std::nullopt;
        if (!tok) {
            buffer.push_back(text[i++]);
            continue;
        }
        const std::string tag(tok->tag);
        if (!db.contains(tag))
            throw MarkupError(tok->begin, tag, "unknown gesture tag");
        if (!tok->closing) {
            if (open)
                throw MarkupError(tok->begin, tag,
                                  "nested span inside '" + std::string(open->tag) + "':");
            flush_plain();
            open = tok;
        } else {
            if (!open)
                throw MarkupError(tok->begin, tag, "close without open span");
            if (open->tag != tok->tag)
                throw MarkupError(tok->begin, tag,
                                  "close does not match open '" + std::string(open->tag) + "':");
            script.segments.emplace_back(GestureSpan{tag, std::move(buffer)});
            buffer.clear();
            open.reset();
        }
        i = tok->end;
    }
    if (open)
        throw MarkupError(open->begin, std::string(open->tag), "unclosed span");
    flush_plain();
    return script;
}

std::string to_markup(const TaggedScript& script)
{
    std::string out;
    for (const auto& seg : script.segments) {
        if (const auto* g = std::get_if<GestureSpan>(&seg))
            out += "[" + g->tag + "]" + g->text + "[/" + g->tag + "]";
        else
            out += std::get<PlainText>(seg).text;
    }
    return out;
}

std::string normalize_spacing(std::string_view text)
{
    std::string out;
    for (auto word : split_words(text)) {
        if (!out.empty() && !is_closing_punct(word.front()))
            out.push_back(' ');
        out += word;
    }
    return out;
}

std::string strip_tags(const TaggedScript& script)
{
    std::string joined;
    for (const auto& seg : script.segments)
        joined += segment_text(seg);
    return normalize_spacing(joined);
}

std::string strip_bracket_tokens(std::string_view text)
{
    std::string out;
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '[') {
            if (auto tok = read_token(text, i)) {
                i = tok->end;
                continue;
            }
        }
        out.push_back(text[i++]);
    }
    return normalize_spacing(out);
}

std::size_t word_count(const TaggedScript& script)
{
    std::string joined;
    for (const auto& seg : script.segments)
        joined += segment_text(seg);
    return spoken_tokens(joined).size();
}

double event_start(const TimelineEvent& e)
{
    return std::visit([](const auto& v) { return v.start_s; }, e);
}

double event_duration(const TimelineEvent& e)
{
    return std::visit([](const auto& v) { return v.duration_s; }, e);
}

std::size_t Timeline::count(TimelineWarning::Kind kind) const
{
    return static_cast<std::size_t>(std::count_if(warnings.begin(), warnings.end(),
                                                  [&](const auto& w) { return w.kind == kind; }));
}

Timeline schedule(const TaggedScript& script, const GestureDb& db, double words_per_minute)
{
    if (!(words_per_minute > 0.0) || !std::isfinite(words_per_minute))
        throw ArgumentError("speech rate must be a positive number of words per minute");
    const double per_word = 60.0 / words_per_minute;

    std::string joined;
    std::vector<std::size_t> seg_end;
    for (const auto& seg : script.segments) {
        joined += segment_text(seg);
        seg_end.push_back(joined.size());
    }
    const auto tokens = split_words(joined);

    Timeline tl;
    std::vector<GestureEvent> gestures;
    std::size_t t = 0;
    std::size_t spoken_words = 0;
    for (std::size_t si = 0; si < script.segments.size(); ++si) {
        const auto& seg = script.segments[si];
        const std::size_t first_word = spoken_words;
        std::string spoken;
        for (; t < tokens.size() && static_cast<std::size_t>(tokens[t].data() - joined.data()) < seg_end[si];
             ++t) {
            if (is_spoken(tokens[t])) {
                ++spoken_words;
            } else if (spoken.empty()) {
                // bare punctuation trails the previous utterance
                for (auto it = tl.events.rbegin(); it != tl.events.rend(); ++it)
                    if (auto* prev = std::get_if<SpeechEvent>(&*it)) {
                        prev->text += tokens[t];
                        break;
                    }
                continue;
            }
            if (!spoken.empty())
                spoken.push_back(' ');
            spoken += tokens[t];
        }
        const std::size_t n_words = spoken_words - first_word;
        const double start_s = static_cast<double>(first_word) * per_word;
        const double span_s = static_cast<double>(n_words) * per_word;
        if (n_words > 0)
            tl.events.emplace_back(SpeechEvent{std::move(spoken), start_s, span_s});

        const auto* g = std::get_if<GestureSpan>(&seg);
        if (!g)
            continue;
        const auto* d = db.find(g->tag);
        if (!d)
            throw ValidationError("gesture tag '" + g->tag + "' is not in the descriptor DB");
        GestureEvent ev{d->tag, start_s, d->playtime_s, d->body_parts};
        if (d->playtime_s > span_s + kOverrunSlackSeconds)
            tl.warnings.push_back(
                {TimelineWarning::Kind::overrun,
                 "gesture " + d->tag + " plays " + format_seconds(d->playtime_s) + " s over " +
                     format_seconds(span_s) + " s of speech"});
        for (const auto& prev : gestures) {
            const bool overlap = prev.start_s < ev.start_s + ev.duration_s &&
                                 ev.start_s < prev.start_s + prev.duration_s;
            if (!overlap)
                continue;
            for (const auto& part : ev.body_parts) {
                if (std::find(prev.body_parts.begin(), prev.body_parts.end(), part) ==
                    prev.body_parts.end())
                    continue;
                tl.warnings.push_back({TimelineWarning::Kind::conflict,
                                       "gestures " + prev.tag + " and " + ev.tag +
                                           " overlap at " + format_seconds(ev.start_s) +
                                           " s and share " + part});
                break;
            }
        }
        gestures.push_back(ev);
        tl.events.emplace_back(std::move(ev));
    }
    tl.speech_duration_s = static_cast<double>(spoken_words) * per_word;
    std::stable_sort(tl.events.begin(), tl.events.end(), [](const auto& a, const auto& b) {
        return event_start(a) < event_start(b);
    });
    return tl;
}

} // namespace signpipe
