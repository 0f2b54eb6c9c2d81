// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace signpipe {

/// Dense row-major matrix.
template <class T>
class BasicMatrix {
public:
    using value_type = T;

    BasicMatrix() = default;
    BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::vector<T>& values() noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }

    friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

using Matrix = BasicMatrix<float>;

/// Named n-dimensional tensor as stored in a tensor container file.
template <class T>
struct BasicTensor {
    std::vector<std::uint32_t> shape;
    std::vector<T> values;

    std::size_t element_count() const noexcept
    {
        std::size_t n = 1;
        for (auto d : shape)
            n *= d;
        return n;
    }

    friend bool operator==(const BasicTensor&, const BasicTensor&) = default;
};

using Tensor = BasicTensor<float>;

/// Ordered name -> tensor map; the on-disk order is the map order.
template <class T>
using BasicTensorMap = std::map<std::string, BasicTensor<T>>;

using TensorMap = BasicTensorMap<float>;

/// Tensor container: magic "SGNW", u32 version 1, u32 count, then per tensor
/// u16 name length, name bytes, u8 rank, u32 dims, float32 payload. All
/// integers and floats are little-endian.
std::string encode_tensors(const TensorMap& tensors);
TensorMap decode_tensors(std::span<const char> bytes);

void save_tensors(const TensorMap& tensors, const std::filesystem::path& path);
TensorMap load_tensors(const std::filesystem::path& path);

} // namespace signpipe
