// SPDX-License-Identifier: Apache-2.0
#include "signpipe/dialogue.hpp"

#include <cmath>
#include <cstdio>
#include <regex>

#include "io_util.hpp"
#include "signpipe/error.hpp"
#include "signpipe/rng.hpp"

namespace signpipe {

namespace {

std::size_t count_occurrences(std::string_view text, std::string_view needle)
{
    std::size_t n = 0;
    for (auto pos = text.find(needle); pos != std::string_view::npos;
         pos = text.find(needle, pos + needle.size()))
        ++n;
    return n;
}

void require_placeholder(const std::string& text, std::string_view name, const char* step)
{
    const std::string ph = "{" + std::string(name) + "}";
    const auto n = count_occurrences(text, ph);
    if (n != 1)
        throw TemplateError(std::string(step) + " template must contain " + ph + " exactly once (found " +
                            std::to_string(n) + ")");
}

std::vector<std::string_view> lines_of(std::string_view text)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos)
            end = text.size();
        auto line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        out.push_back(line);
        start = end + 1;
    }
    return out;
}

bool has_delimiter_line(std::string_view text)
{
    for (auto line : lines_of(text))
        if (line == kPromptDelimiter)
            return true;
    return false;
}

std::string replace_once(std::string text, std::string_view placeholder, std::string_view value)
{
    const std::string ph = "{" + std::string(placeholder) + "}";
    const auto pos = text.find(ph);
    text.replace(pos, ph.size(), value);
    return text;
}

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string format_playtime(double s)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", s);
    return buf;
}

// FNV-1a over the seed bytes, then the prompt.
std::uint64_t fnv1a(std::uint64_t seed, std::string_view text)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto mix = [&h](unsigned char b) {
        h ^= b;
        h *= 0x100000001b3ULL;
    };
    for (int i = 0; i < 8; ++i)
        mix(static_cast<unsigned char>(seed >> (8 * i)));
    for (char c : text)
        mix(static_cast<unsigned char>(c));
    return h;
}

// Text after the last delimiter line, up to the first blank line.
std::string prompt_payload(std::string_view prompt)
{
    const auto lines = lines_of(prompt);
    std::size_t start = lines.size();
    for (std::size_t i = 0; i < lines.size(); ++i)
        if (lines[i] == kPromptDelimiter)
            start = i + 1;
    std::string out;
    for (std::size_t i = start; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) {
            if (!out.empty())
                break;
            continue;
        }
        if (!out.empty())
            out.push_back(' ');
        out += lines[i];
    }
    return trim(out);
}

std::vector<std::string> listed_tags(std::string_view prompt)
{
    static const std::regex tag_line(R"(^\[([^\s\[\]/][^\s\[\]]*)\]$)");
    std::vector<std::string> tags;
    for (auto line : lines_of(prompt)) {
        if (line == kPromptDelimiter)
            break;
        std::match_results<std::string_view::const_iterator> m;
        if (std::regex_match(line.begin(), line.end(), m, tag_line))
            tags.push_back(m[1].str());
    }
    return tags;
}

std::string mock_reaction(Rng& rng, std::string_view payload)
{
    static const std::regex report(R"(depicted an? (.+?) with (?:an? )?(\d+)%)");
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_search(payload.begin(), payload.end(), m, report))
        return "Thank you! Let's practise together.";
    const std::string gloss = m[1].str();
    if (std::stoi(m[2].str()) < 50)
        return "Hmm, I think that was " + gloss + ", but I am not sure. Could you sign it once more?";
    static const char* const kTemplates[][2] = {
        {"Great! You signed ", " really well. Let's keep going with the next one."},
        {"Nice work! That was a clear ", " sign. Can you show me another?"},
        {"Well done, I saw ", ". Your hands were very steady that time."},
    };
    const auto& t = kTemplates[rng.below(std::size(kTemplates))];
    return t[0] + gloss + t[1];
}

std::vector<std::string> split_sentences(const std::string& text)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c != '.' && c != '!' && c != '?')
            continue;
        while (i + 1 < text.size() && (text[i + 1] == '.' || text[i + 1] == '!' || text[i + 1] == '?'))
            ++i;
        if (i + 1 == text.size() || text[i + 1] == ' ') {
            out.push_back(trim(std::string_view(text).substr(start, i + 1 - start)));
            start = i + 1;
        }
    }
    auto rest = trim(std::string_view(text).substr(start));
    if (!rest.empty())
        out.push_back(std::move(rest));
    return out;
}

std::string mock_annotate(Rng& rng, const std::string& dialogue, const std::vector<std::string>& tags)
{
    const auto sentences = split_sentences(dialogue);
    std::vector<bool> wrap(sentences.size());
    bool any = false;
    for (std::size_t i = 0; i < wrap.size(); ++i)
        any |= wrap[i] = rng.bernoulli(0.6);
    if (!any && !wrap.empty())
        wrap[0] = true;

    std::string out;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        const auto& s = sentences[i];
        if (!out.empty())
            out.push_back(' ');
        if (!wrap[i]) {
            out += s;
            continue;
        }
        const auto& tag = tags[rng.below(tags.size())];
        std::size_t body_end = s.size();
        while (body_end > 0 && std::string_view(".!?,;:").find(s[body_end - 1]) != std::string_view::npos)
            --body_end;
        // a one-word sentence keeps its punctuation inside the span
        if (s.find(' ') == std::string::npos || body_end == 0)
            body_end = s.size();
        out += "[" + tag + "] " + s.substr(0, body_end) + " [/" + tag + "]" + s.substr(body_end);
    }
    return out;
}

} // namespace

void PromptTemplate::validate() const
{
    require_placeholder(step1, "gloss", "step 1");
    require_placeholder(step1, "confidence", "step 1");
    require_placeholder(step2, "descriptors", "step 2");
    require_placeholder(step2, "dialogue", "step 2");
    if (!has_delimiter_line(step1))
        throw TemplateError("step 1 template has no '####' delimiter line");
    if (!has_delimiter_line(step2))
        throw TemplateError("step 2 template has no '####' delimiter line");
}

PromptTemplate PromptTemplate::parse(std::string step1_text, std::string step2_text)
{
    PromptTemplate t{std::move(step1_text), std::move(step2_text)};
    t.validate();
    return t;
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& dir)
{
    return parse(detail::read_text_file(dir / "step1.txt", "prompt template"),
                 detail::read_text_file(dir / "step2.txt", "prompt template"));
}

std::string render_step1(const RecognitionEvent& event, const PromptTemplate& tmpl)
{
    if (trim(event.gloss).empty())
        throw ValidationError("recognized gloss is empty");
    if (!(event.confidence_pct >= 0.0 && event.confidence_pct <= 100.0))
        throw ValidationError("confidence must lie in [0, 100]");
    const long pct = std::lround(event.confidence_pct);
    return replace_once(replace_once(tmpl.step1, "gloss", event.gloss), "confidence",
                        std::to_string(pct));
}

std::string format_descriptors(const GestureDb& db)
{
    std::string out;
    for (const auto& d : db) {
        if (!out.empty())
            out += "\n";
        out += "[" + d.tag + "]\n";
        out += "description: " + d.description + "\n";
        out += "playtime_s: " + format_playtime(d.playtime_s) + "\n";
        out += "body_parts: ";
        for (std::size_t i = 0; i < d.body_parts.size(); ++i)
            out += (i ? ", " : "") + d.body_parts[i];
        out += "\n";
    }
    return out;
}

RenderedPrompt render_step2(std::string_view dialogue, const GestureDb& db,
                            const PromptTemplate& tmpl)
{
    RenderedPrompt r;
    auto listing = format_descriptors(db);
    if (!listing.empty() && listing.back() == '\n')
        listing.pop_back();
    if (db.empty())
        r.warnings.push_back("descriptor DB is empty; the prompt lists no gestures");
    r.text = replace_once(replace_once(tmpl.step2, "descriptors", listing), "dialogue", dialogue);
    return r;
}

MockBackend::MockBackend(std::uint64_t seed, std::vector<std::string> scripted)
    : seed_(seed), scripted_(scripted.begin(), scripted.end())
{
}

std::string MockBackend::complete(const std::string& prompt)
{
    ++calls_;
    prompts_.push_back(prompt);
    if (!scripted_.empty()) {
        auto reply = std::move(scripted_.front());
        scripted_.pop_front();
        return reply;
    }
    return generate(seed_, prompt);
}

std::string MockBackend::generate(std::uint64_t seed, std::string_view prompt)
{
    Rng rng(fnv1a(seed, prompt));
    const auto payload = prompt_payload(prompt);
    const auto tags = listed_tags(prompt);
    if (tags.empty())
        return mock_reaction(rng, payload);
    return mock_annotate(rng, payload, tags);
}

std::unique_ptr<LlmBackend> make_backend(const BackendConfig& cfg)
{
    if (cfg.kind == BackendConfig::Kind::http)
        return std::make_unique<HttpBackend>(cfg.http);
    return std::make_unique<MockBackend>(cfg.seed);
}

ComposeResult compose(const RecognitionEvent& event, const GestureDb& db, LlmBackend& backend,
                      const PromptTemplate& tmpl, std::size_t max_retries)
{
    ComposeResult result;
    result.dialogue = trim(backend.complete(render_step1(event, tmpl)));

    const auto step2 = render_step2(result.dialogue, db, tmpl);
    result.warnings = step2.warnings;
    std::string prompt = step2.text;
    std::string reply;
    std::string last_error;
    for (std::size_t attempt = 0;; ++attempt) {
        reply = backend.complete(prompt);
        try {
            result.script = parse_markup(reply, db);
            result.tagged_text = to_markup(result.script);
            return result;
        } catch (const MarkupError& e) {
            last_error = e.what();
        }
        if (attempt == max_retries)
            break;
        ++result.retries;
        prompt = step2.text + "\n\nYour previous reply was rejected: " + last_error +
                 ". Reply again using only the listed tags, each closed and none nested.";
    }

    result.degraded = true;
    const auto plain = strip_bracket_tokens(reply);
    if (!plain.empty())
        result.script.segments.emplace_back(PlainText{plain});
    result.tagged_text = plain;
    result.warnings.push_back("gesture markup rejected after " + std::to_string(result.retries) +
                              " retries (" + last_error + "); speaking without gestures");
    return result;
}

} // namespace signpipe
