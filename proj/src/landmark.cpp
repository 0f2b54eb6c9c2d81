// SPDX-License-Identifier: Apache-2.0
#include "signpipe/landmark.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "signpipe/error.hpp"

namespace signpipe {

namespace {

constexpr std::string_view kHeader = "sample_id,frame,kind,landmark_index,x,y,z,label";

bool same_coord(float a, float b) noexcept
{
    return (is_missing(a) && is_missing(b)) || a == b;
}

std::vector<std::string_view> split_fields(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

template <class Int>
Int parse_uint(std::string_view field, std::size_t line, const char* column)
{
    Int value{};
    const auto* end = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(field.data(), end, value);
    if (field.empty() || ec != std::errc{} || ptr != end)
        throw ParseError(line, std::string("bad ") + column + " '" + std::string(field) + "'");
    return value;
}

float parse_coord(std::string_view field, std::size_t line, const char* column)
{
    if (field.empty())
        return kMissing;
    float value = 0.0f;
    const auto* end = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(field.data(), end, value);
    if (ec != std::errc{} || ptr != end)
        throw ParseError(line, std::string("bad ") + column + " '" + std::string(field) + "'");
    if (std::isinf(value))
        throw ValidationError("line " + std::to_string(line) + ": non-finite " + column);
    return value;
}

void append_coord(std::string& out, float v)
{
    if (is_missing(v))
        return;
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, ptr);
}

} // namespace

std::string_view to_string(LandmarkKind kind) noexcept
{
    switch (kind) {
    case LandmarkKind::face: return "face";
    case LandmarkKind::left_hand: return "left_hand";
    case LandmarkKind::pose: return "pose";
    case LandmarkKind::right_hand: return "right_hand";
    }
    return "?";
}

std::optional<LandmarkKind> parse_kind(std::string_view text) noexcept
{
    for (int code = 0; code < kNumKinds; ++code) {
        const auto kind = static_cast<LandmarkKind>(code);
        if (text == to_string(kind))
            return kind;
    }
    return std::nullopt;
}

bool operator==(const LandmarkFrame& a, const LandmarkFrame& b) noexcept
{
    return a.frame_index == b.frame_index && a.kind == b.kind &&
           a.landmark_index == b.landmark_index && same_coord(a.x, b.x) && same_coord(a.y, b.y) &&
           same_coord(a.z, b.z);
}

std::size_t SignSample::distinct_frame_count() const noexcept
{
    std::size_t count = 0;
    for (std::size_t i = 0; i < frames.size(); ++i)
        if (i == 0 || frames[i].frame_index != frames[i - 1].frame_index)
            ++count;
    return count;
}

void validate_sample(const SignSample& sample, int num_classes)
{
    const auto where = "sample '" + sample.sample_id + "': ";
    if (sample.sample_id.empty())
        throw ValidationError("empty sample_id");
    if (sample.sample_id.find_first_of(",\r\n") != std::string::npos)
        throw ValidationError(where + "sample_id contains a separator");
    if (sample.frames.empty())
        throw ValidationError(where + "no frames");
    if (sample.label && (*sample.label < 0 || *sample.label >= num_classes))
        throw ValidationError(where + "label " + std::to_string(*sample.label) + " out of range");
    for (std::size_t i = 0; i < sample.frames.size(); ++i) {
        const auto& f = sample.frames[i];
        if (f.landmark_index >= kind_capacity(f.kind))
            throw ValidationError(where + "landmark_index " + std::to_string(f.landmark_index) +
                                  " exceeds " + std::string(to_string(f.kind)) + " capacity");
        if (i > 0 && f.frame_index < sample.frames[i - 1].frame_index)
            throw ValidationError(where + "frame_index decreases");
        if (std::isinf(f.x) || std::isinf(f.y) || std::isinf(f.z))
            throw ValidationError(where + "non-finite coordinate");
    }
}

std::vector<SignSample> parse_corpus(std::string_view text, int num_classes)
{
    std::vector<SignSample> samples;
    std::unordered_map<std::string, std::size_t> by_id;

    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool seen_header = false;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos)
            eol = text.size();
        auto line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);

        if (!seen_header) {
            if (line != kHeader)
                throw ParseError(line_no, "expected header '" + std::string(kHeader) + "'");
            seen_header = true;
            continue;
        }
        if (line.empty())
            continue;

        const auto fields = split_fields(line);
        if (fields.size() != 8)
            throw ParseError(line_no, "expected 8 fields, got " + std::to_string(fields.size()));
        if (fields[0].empty())
            throw ParseError(line_no, "empty sample_id");

        LandmarkFrame row;
        row.frame_index = parse_uint<std::uint32_t>(fields[1], line_no, "frame");
        const auto kind = parse_kind(fields[2]);
        if (!kind)
            throw ParseError(line_no, "unknown landmark kind '" + std::string(fields[2]) + "'");
        row.kind = *kind;
        row.landmark_index = parse_uint<std::uint32_t>(fields[3], line_no, "landmark_index");
        if (row.landmark_index >= kind_capacity(row.kind))
            throw ValidationError("line " + std::to_string(line_no) + ": landmark_index " +
                                  std::to_string(row.landmark_index) + " out of range for " +
                                  std::string(fields[2]));
        row.x = parse_coord(fields[4], line_no, "x");
        row.y = parse_coord(fields[5], line_no, "y");
        row.z = parse_coord(fields[6], line_no, "z");

        std::optional<int> label;
        if (!fields[7].empty()) {
            const int value = parse_uint<int>(fields[7], line_no, "label");
            if (value >= num_classes)
                throw ValidationError("line " + std::to_string(line_no) + ": label " +
                                      std::to_string(value) + " out of range");
            label = value;
        }

        std::string id(fields[0]);
        auto [it, inserted] = by_id.try_emplace(id, samples.size());
        if (inserted) {
            samples.push_back(SignSample{std::move(id), {}, label});
        } else {
            auto& s = samples[it->second];
            if (s.label != label)
                throw ParseError(line_no, "label disagrees with earlier rows of sample '" +
                                              s.sample_id + "'");
            if (row.frame_index < s.frames.back().frame_index)
                throw ValidationError("line " + std::to_string(line_no) +
                                      ": frame index decreases within sample '" + s.sample_id + "'");
        }
        samples[it->second].frames.push_back(row);
    }
    if (!seen_header)
        throw ParseError(1, "missing header");
    return samples;
}

std::vector<SignSample> read_corpus(const std::filesystem::path& path, int num_classes)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open corpus " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_corpus(buf.str(), num_classes);
}

std::string format_corpus(const std::vector<SignSample>& samples)
{
    std::string out(kHeader);
    out += '\n';
    for (const auto& s : samples) {
        validate_sample(s, std::numeric_limits<int>::max());
        const auto label = s.label ? std::to_string(*s.label) : std::string();
        for (const auto& f : s.frames) {
            out += s.sample_id;
            out += ',';
            out += std::to_string(f.frame_index);
            out += ',';
            out += to_string(f.kind);
            out += ',';
            out += std::to_string(f.landmark_index);
            out += ',';
            append_coord(out, f.x);
            out += ',';
            append_coord(out, f.y);
            out += ',';
            append_coord(out, f.z);
            out += ',';
            out += label;
            out += '\n';
        }
    }
    return out;
}

void write_corpus(const std::vector<SignSample>& samples, const std::filesystem::path& path)
{
    const auto text = format_corpus(samples);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write corpus " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out)
        throw IoError("write failed for " + path.string());
}

LabelMap::LabelMap(std::vector<std::string> glosses) : glosses_(std::move(glosses))
{
    for (std::size_t i = 0; i < glosses_.size(); ++i) {
        if (glosses_[i].empty())
            throw ValidationError("empty gloss for class " + std::to_string(i));
        if (!ids_.emplace(glosses_[i], static_cast<int>(i)).second)
            throw ValidationError("duplicate gloss '" + glosses_[i] + "'");
    }
}

LabelMap LabelMap::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open label map " + path.string());
    std::vector<std::string> glosses;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        glosses.push_back(line);
    }
    return LabelMap(std::move(glosses));
}

LabelMap LabelMap::numbered(int n)
{
    std::vector<std::string> glosses;
    glosses.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        glosses.push_back("class_" + std::to_string(i));
    return LabelMap(std::move(glosses));
}

const std::string& LabelMap::gloss(int id) const
{
    if (id < 0 || static_cast<std::size_t>(id) >= glosses_.size())
        throw ValidationError("class id " + std::to_string(id) + " not in label map");
    return glosses_[static_cast<std::size_t>(id)];
}

std::optional<int> LabelMap::id(std::string_view gloss) const
{
    const auto it = ids_.find(std::string(gloss));
    if (it == ids_.end())
        return std::nullopt;
    return it->second;
}

} // namespace signpipe
