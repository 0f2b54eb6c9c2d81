// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "signpipe/landmark.hpp"

namespace signpipe::net {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::size_t kMaxFrameBytes = 16u << 20;
inline constexpr std::size_t kLengthPrefixBytes = 4;

struct Hello {
    int protocol_version = kProtocolVersion;
    friend bool operator==(const Hello&, const Hello&) = default;
};

/// The sample travels without its label.
struct Landmarks {
    SignSample sample;
    friend bool operator==(const Landmarks&, const Landmarks&) = default;
};

struct Result {
    std::string gloss;
    double confidence_pct = 0.0;
    friend bool operator==(const Result&, const Result&) = default;
};

struct ScriptEvent {
    enum class Kind { speech, gesture };
    Kind kind = Kind::speech;
    double start_s = 0.0;
    double duration_s = 0.0;
    std::string text; // spoken words, or the gesture tag
    std::vector<std::string> body_parts;
    friend bool operator==(const ScriptEvent&, const ScriptEvent&) = default;
};

struct Script {
    std::string tagged_text;
    std::vector<ScriptEvent> events;
    std::vector<std::string> warnings;
    friend bool operator==(const Script&, const Script&) = default;
};

struct ErrorMsg {
    std::string code; // BAD_FRAME, PROTOCOL, TIMEOUT or INTERNAL
    std::string message;
    friend bool operator==(const ErrorMsg&, const ErrorMsg&) = default;
};

struct Bye {
    friend bool operator==(const Bye&, const Bye&) = default;
};

using Message = std::variant<Hello, Landmarks, Result, Script, ErrorMsg, Bye>;

enum class MessageType { hello, landmarks, result, script, error, bye };
inline constexpr MessageType kAllMessageTypes[] = {MessageType::hello,  MessageType::landmarks,
                                                   MessageType::result, MessageType::script,
                                                   MessageType::error,  MessageType::bye};

MessageType type_of(const Message& m) noexcept;
std::string_view type_name(MessageType t) noexcept;

namespace codes {
inline constexpr std::string_view bad_frame = "BAD_FRAME";
inline constexpr std::string_view protocol = "PROTOCOL";
inline constexpr std::string_view timeout = "TIMEOUT";
inline constexpr std::string_view internal = "INTERNAL";
} // namespace codes

/// `{"type":...,"body":{...}}`, keys in that order.
std::string encode_payload(const Message& m);
/// Throws ProtocolError for bad JSON, an unknown type or a malformed body.
Message decode_payload(std::string_view json);

/// Big-endian u32 length, then the JSON payload. Throws ProtocolError when
/// the payload exceeds kMaxFrameBytes.
std::string encode_frame(const Message& m);

/// Incremental frame reader for one byte stream.
class FrameDecoder {
public:
    enum class Status { need_more, frame, error };
    struct Output {
        Status status = Status::need_more;
        std::optional<Message> message;
        std::string error;
    };

    void feed(std::span<const char> bytes);
    void feed(std::string_view bytes) { feed(std::span<const char>(bytes.data(), bytes.size())); }
    void feed(const std::string& bytes) { feed(std::string_view(bytes)); }

    /// Next complete frame, a need-more signal, or an error. After an error
    /// the decoder stays failed.
    Output next();

    std::size_t buffered() const noexcept { return buffer_.size() - pos_; }

private:
    std::string buffer_;
    std::size_t pos_ = 0;
    std::string failure_;
};

enum class SessionState { await_hello, ready, closed };
std::string_view state_name(SessionState s) noexcept;

/// Server reaction to one client message.
struct Transition {
    enum class Action { greet, process, finish, reject };
    Action action = Action::reject;
    SessionState next = SessionState::closed;
};

/// HELLO (version 1) is legal only while awaiting it; LANDMARKS only when
/// ready; BYE ends the session from either live state. Everything else is a
/// protocol violation that closes the session.
Transition session_transition(SessionState s, const Message& m);
Transition session_transition(SessionState s, MessageType t);

} // namespace signpipe::net
