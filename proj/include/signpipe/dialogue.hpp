// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "signpipe/gesture.hpp"

namespace signpipe {

struct RecognitionEvent {
    std::string gloss;
    double confidence_pct = 0.0; // [0, 100]
};

/// Line separating instructions from the payload in both prompts.
inline constexpr std::string_view kPromptDelimiter = "####";

/// Step 1 holds {gloss} and {confidence}; step 2 holds {descriptors} and
/// {dialogue}. Each placeholder appears exactly once and each text has a
/// delimiter line.
struct PromptTemplate {
    std::string step1;
    std::string step2;

    /// Throws TemplateError.
    void validate() const;
    static PromptTemplate parse(std::string step1_text, std::string step2_text);
    /// Reads step1.txt and step2.txt from a directory.
    static PromptTemplate load(const std::filesystem::path& dir);
};

struct RenderedPrompt {
    std::string text;
    std::vector<std::string> warnings;
};

/// Confidence is rounded to a whole percent. Throws ValidationError for an
/// empty gloss or a confidence outside [0, 100].
std::string render_step1(const RecognitionEvent& event, const PromptTemplate& tmpl);

/// One block per descriptor in DB order: a "[Tag]" line followed by
/// description, playtime and body-part lines.
std::string format_descriptors(const GestureDb& db);

RenderedPrompt render_step2(std::string_view dialogue, const GestureDb& db,
                            const PromptTemplate& tmpl);

class LlmBackend {
public:
    virtual ~LlmBackend() = default;
    /// Throws BackendError on transport failure.
    virtual std::string complete(const std::string& prompt) = 0;
};

/// Deterministic stand-in. Scripted replies are served first, in order; after
/// that, each reply is a pure function of (seed, prompt). A prompt listing
/// descriptor tags gets its payload wrapped in some of those tags; any other
/// prompt gets a short spoken reaction to the payload.
class MockBackend final : public LlmBackend {
public:
    explicit MockBackend(std::uint64_t seed = 0, std::vector<std::string> scripted = {});

    std::string complete(const std::string& prompt) override;
    std::size_t calls() const noexcept { return calls_; }
    const std::vector<std::string>& prompts() const noexcept { return prompts_; }

    /// The generated reply, ignoring any script.
    static std::string generate(std::uint64_t seed, std::string_view prompt);

private:
    std::uint64_t seed_;
    std::deque<std::string> scripted_;
    std::size_t calls_ = 0;
    std::vector<std::string> prompts_;
};

struct HttpBackendConfig {
    std::string base_url = "https://api.openai.com/v1";
    std::string model = "gpt-4o-mini";
    std::string api_key_env = "SIGNPIPE_API_KEY";
    double timeout_s = 30.0;
};

/// Chat-completions client: POSTs {model, messages} to base_url +
/// "/chat/completions" with a bearer token read from `api_key_env`.
class HttpBackend final : public LlmBackend {
public:
    explicit HttpBackend(HttpBackendConfig cfg);
    std::string complete(const std::string& prompt) override;

private:
    HttpBackendConfig cfg_;
    std::string origin_; // scheme://host[:port]
    std::string path_prefix_;
};

struct BackendConfig {
    enum class Kind { mock, http };
    Kind kind = Kind::mock;
    std::uint64_t seed = 0;
    HttpBackendConfig http;
};

std::unique_ptr<LlmBackend> make_backend(const BackendConfig& cfg);

struct ComposeResult {
    std::string dialogue;    // step 1 reply
    std::string tagged_text; // markup of `script`
    TaggedScript script;
    std::size_t retries = 0;
    bool degraded = false;
    std::vector<std::string> warnings;
};

/// Two backend calls, plus one per retry of step 2 after a markup error (the
/// error text is appended to the retried prompt). When retries run out the
/// last reply loses its bracket tokens and is returned as plain text with
/// `degraded` set.
ComposeResult compose(const RecognitionEvent& event, const GestureDb& db, LlmBackend& backend,
                      const PromptTemplate& tmpl, std::size_t max_retries = 2);

} // namespace signpipe
