// SPDX-License-Identifier: Apache-2.0
#include "signpipe/protocol.hpp"

#include <cmath>

#include <json.hpp>

#include "signpipe/error.hpp"

namespace signpipe::net {

namespace {

using ojson = nlohmann::ordered_json;

constexpr std::string_view kTypeNames[] = {"HELLO", "LANDMARKS", "RESULT", "SCRIPT", "ERROR", "BYE"};

ojson coord(float v)
{
    if (is_missing(v))
        return nullptr;
    return static_cast<double>(v);
}

float coord_from(const nlohmann::json& j)
{
    if (j.is_null())
        return kMissing;
    if (!j.is_number())
        throw ProtocolError("landmark coordinate must be a number or null");
    return static_cast<float>(j.get<double>());
}

ojson body_of(const Message& m)
{
    return std::visit(
        [](const auto& v) -> ojson {
            using T = std::decay_t<decltype(v)>;
            ojson b = ojson::object();
            if constexpr (std::is_same_v<T, Hello>) {
                b["protocol_version"] = v.protocol_version;
            } else if constexpr (std::is_same_v<T, Landmarks>) {
                b["sample_id"] = v.sample.sample_id;
                ojson rows = ojson::array();
                for (const auto& f : v.sample.frames)
                    rows.push_back(ojson::array({f.frame_index, std::string(to_string(f.kind)),
                                                 f.landmark_index, coord(f.x), coord(f.y), coord(f.z)}));
                b["rows"] = std::move(rows);
            } else if constexpr (std::is_same_v<T, Result>) {
                b["gloss"] = v.gloss;
                b["confidence_pct"] = v.confidence_pct;
            } else if constexpr (std::is_same_v<T, Script>) {
                b["tagged_text"] = v.tagged_text;
                ojson events = ojson::array();
                for (const auto& e : v.events) {
                    ojson je;
                    je["kind"] = e.kind == ScriptEvent::Kind::speech ? "speech" : "gesture";
                    je["start_s"] = e.start_s;
                    je["duration_s"] = e.duration_s;
                    je["text"] = e.text;
                    je["body_parts"] = e.body_parts;
                    events.push_back(std::move(je));
                }
                b["timeline"] = {{"events", std::move(events)}, {"warnings", v.warnings}};
            } else if constexpr (std::is_same_v<T, ErrorMsg>) {
                b["code"] = v.code;
                b["message"] = v.message;
            }
            return b;
        },
        m);
}

Landmarks landmarks_from(const nlohmann::json& b)
{
    Landmarks out;
    out.sample.sample_id = b.at("sample_id").get<std::string>();
    for (const auto& row : b.at("rows")) {
        if (!row.is_array() || row.size() != 6)
            throw ProtocolError("landmark row must have 6 fields");
        LandmarkFrame f;
        f.frame_index = row[0].get<std::uint32_t>();
        const auto kind = parse_kind(row[1].get<std::string>());
        if (!kind)
            throw ProtocolError("unknown landmark kind '" + row[1].get<std::string>() + "'");
        f.kind = *kind;
        f.landmark_index = row[2].get<std::uint32_t>();
        f.x = coord_from(row[3]);
        f.y = coord_from(row[4]);
        f.z = coord_from(row[5]);
        out.sample.frames.push_back(f);
    }
    try {
        validate_sample(out.sample);
    } catch (const ValidationError& e) {
        throw ProtocolError(std::string("invalid sample: ") + e.what());
    }
    return out;
}

Script script_from(const nlohmann::json& b)
{
    Script s;
    s.tagged_text = b.at("tagged_text").get<std::string>();
    const auto& tl = b.at("timeline");
    for (const auto& je : tl.at("events")) {
        ScriptEvent e;
        const auto kind = je.at("kind").get<std::string>();
        if (kind == "speech")
            e.kind = ScriptEvent::Kind::speech;
        else if (kind == "gesture")
            e.kind = ScriptEvent::Kind::gesture;
        else
            throw ProtocolError("unknown timeline event kind '" + kind + "'");
        e.start_s = je.at("start_s").get<double>();
        e.duration_s = je.at("duration_s").get<double>();
        e.text = je.at("text").get<std::string>();
        e.body_parts = je.at("body_parts").get<std::vector<std::string>>();
        s.events.push_back(std::move(e));
    }
    s.warnings = tl.at("warnings").get<std::vector<std::string>>();
    return s;
}

} // namespace

MessageType type_of(const Message& m) noexcept
{
    return static_cast<MessageType>(m.index());
}

std::string_view type_name(MessageType t) noexcept
{
    return kTypeNames[static_cast<std::size_t>(t)];
}

std::string encode_payload(const Message& m)
{
    ojson j;
    j["type"] = std::string(type_name(type_of(m)));
    j["body"] = body_of(m);
    return j.dump();
}

Message decode_payload(std::string_view text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ProtocolError(std::string("frame is not valid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("type") || !j.contains("body") || !j["type"].is_string() ||
        !j["body"].is_object())
        throw ProtocolError("frame must be an object with a string type and an object body");
    const auto type = j["type"].get<std::string>();
    const auto& b = j["body"];
    try {
        if (type == "HELLO")
            return Hello{b.at("protocol_version").get<int>()};
        if (type == "LANDMARKS")
            return landmarks_from(b);
        if (type == "RESULT")
            return Result{b.at("gloss").get<std::string>(), b.at("confidence_pct").get<double>()};
        if (type == "SCRIPT")
            return script_from(b);
        if (type == "ERROR")
            return ErrorMsg{b.at("code").get<std::string>(), b.at("message").get<std::string>()};
        if (type == "BYE")
            return Bye{};
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError("malformed " + type + " body: " + e.what());
    }
    throw ProtocolError("unknown message type '" + type + "'");
}

std::string encode_frame(const Message& m)
{
    const auto payload = encode_payload(m);
    if (payload.size() > kMaxFrameBytes)
        throw ProtocolError("frame payload of " + std::to_string(payload.size()) +
                            " bytes exceeds the 16 MiB limit");
    const auto n = static_cast<std::uint32_t>(payload.size());
    std::string out;
    out.reserve(kLengthPrefixBytes + payload.size());
    out.push_back(static_cast<char>((n >> 24) & 0xff));
    out.push_back(static_cast<char>((n >> 16) & 0xff));
    out.push_back(static_cast<char>((n >> 8) & 0xff));
    out.push_back(static_cast<char>(n & 0xff));
    out += payload;
    return out;
}

void FrameDecoder::feed(std::span<const char> bytes)
{
    if (pos_ > 0) {
        buffer_.erase(0, pos_);
        pos_ = 0;
    }
    buffer_.append(bytes.data(), bytes.size());
}

FrameDecoder::Output FrameDecoder::next()
{
    if (!failure_.empty())
        return {Status::error, std::nullopt, failure_};
    if (buffered() < kLengthPrefixBytes)
        return {};
    const auto* p = reinterpret_cast<const unsigned char*>(buffer_.data() + pos_);
    const std::uint32_t n = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
                            (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
    if (n > kMaxFrameBytes) {
        failure_ = "declared frame length " + std::to_string(n) + " exceeds the 16 MiB limit";
        return {Status::error, std::nullopt, failure_};
    }
    if (buffered() < kLengthPrefixBytes + n)
        return {};
    const std::string_view payload(buffer_.data() + pos_ + kLengthPrefixBytes, n);
    pos_ += kLengthPrefixBytes + n;
    try {
        auto msg = decode_payload(payload);
        if (pos_ == buffer_.size()) {
            buffer_.clear();
            pos_ = 0;
        }
        return {Status::frame, std::move(msg), {}};
    } catch (const ProtocolError& e) {
        failure_ = e.what();
        return {Status::error, std::nullopt, failure_};
    }
}

std::string_view state_name(SessionState s) noexcept
{
    switch (s) {
    case SessionState::await_hello:
        return "AwaitHello";
    case SessionState::ready:
        return "Ready";
    case SessionState::closed:
        return "Closed";
    }
    return "?";
}

Transition session_transition(SessionState s, MessageType t)
{
    using A = Transition::Action;
    if (s == SessionState::await_hello && t == MessageType::hello)
        return {A::greet, SessionState::ready};
    if (s == SessionState::ready && t == MessageType::landmarks)
        return {A::process, SessionState::ready};
    if (s != SessionState::closed && t == MessageType::bye)
        return {A::finish, SessionState::closed};
    return {A::reject, SessionState::closed};
}

Transition session_transition(SessionState s, const Message& m)
{
    if (const auto* h = std::get_if<Hello>(&m); h && h->protocol_version != kProtocolVersion)
        return {Transition::Action::reject, SessionState::closed};
    return session_transition(s, type_of(m));
}

} // namespace signpipe::net
