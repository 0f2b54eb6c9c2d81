// SPDX-License-Identifier: Apache-2.0
#include "signpipe/tensor.hpp"

#include <bit>
#include <fstream>
#include <limits>
#include <sstream>

#include "signpipe/error.hpp"

namespace signpipe {

namespace {

constexpr char kMagic[4] = {'S', 'G', 'N', 'W'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::numeric_limits<float>::is_iec559);

template <class U>
void put_le(std::string& out, U value)
{
    for (std::size_t i = 0; i < sizeof(U); ++i)
        out.push_back(static_cast<char>((value >> (8 * i)) & 0xFFu));
}

class Reader {
public:
    explicit Reader(std::span<const char> bytes) : bytes_(bytes) {}

    template <class U>
    U get(const char* what)
    {
        need(sizeof(U), what);
        U value = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            value |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i]))
                                    << (8 * i));
        pos_ += sizeof(U);
        return value;
    }

    std::string take(std::size_t n, const char* what)
    {
        need(n, what);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    void read_floats(std::vector<float>& out, std::size_t n, const std::string& name)
    {
        if (n > remaining() / sizeof(float))
            throw FormatError("payload of '" + name + "' is shorter than its shape (" +
                              std::to_string(n) + " floats declared)");
        out.resize(n);
        for (auto& v : out)
            v = std::bit_cast<float>(get<std::uint32_t>("payload"));
    }

    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) const
    {
        if (remaining() < n)
            throw FormatError(std::string("truncated tensor file while reading ") + what);
    }

    std::span<const char> bytes_;
    std::size_t pos_ = 0;
};

} // namespace

std::string encode_tensors(const TensorMap& tensors)
{
    std::string out(kMagic, sizeof kMagic);
    put_le<std::uint32_t>(out, kVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > std::numeric_limits<std::uint16_t>::max())
            throw FormatError("tensor name too long: " + name.substr(0, 64));
        if (t.shape.size() > std::numeric_limits<std::uint8_t>::max())
            throw FormatError("tensor rank too large for '" + name + "'");
        if (t.element_count() != t.values.size())
            throw ShapeError("tensor '" + name + "' has " + std::to_string(t.values.size()) +
                             " values but shape implies " + std::to_string(t.element_count()));
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out += name;
        out.push_back(static_cast<char>(t.shape.size()));
        for (auto d : t.shape)
            put_le<std::uint32_t>(out, d);
        for (float v : t.values)
            put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

TensorMap decode_tensors(std::span<const char> bytes)
{
    Reader in(bytes);
    if (in.take(4, "magic") != std::string(kMagic, sizeof kMagic))
        throw FormatError("bad magic: not a tensor file");
    const auto version = in.get<std::uint32_t>("version");
    if (version != kVersion)
        throw FormatError("unsupported tensor file version " + std::to_string(version));
    const auto count = in.get<std::uint32_t>("tensor count");

    TensorMap tensors;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = in.get<std::uint16_t>("name length");
        auto name = in.take(name_len, "name");
        const auto rank = in.get<std::uint8_t>("rank");
        Tensor t;
        std::size_t elements = 1;
        for (std::uint8_t r = 0; r < rank; ++r) {
            t.shape.push_back(in.get<std::uint32_t>("dims"));
            if (t.shape.back() != 0 && elements > in.remaining() / t.shape.back())
                throw FormatError("shape of '" + name + "' exceeds the remaining payload");
            elements *= t.shape.back();
        }
        in.read_floats(t.values, elements, name);
        if (!tensors.emplace(name, std::move(t)).second)
            throw FormatError("duplicate tensor name '" + name + "'");
    }
    if (in.remaining() != 0)
        throw FormatError(std::to_string(in.remaining()) + " trailing bytes after last tensor");
    return tensors;
}

void save_tensors(const TensorMap& tensors, const std::filesystem::path& path)
{
    const auto bytes = encode_tensors(tensors);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError("write failed for " + path.string());
}

TensorMap load_tensors(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    const auto bytes = buf.str();
    return decode_tensors(bytes);
}

} // namespace signpipe
