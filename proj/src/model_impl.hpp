// SPDX-License-Identifier: Apache-2.0
// Kernels and the cached forward pass shared by inference and training.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "signpipe/error.hpp"
#include "signpipe/model.hpp"

namespace signpipe::nn::detail {

inline constexpr double kLayerNormFloor = 1e-8;

std::string shape_string(const std::vector<std::uint32_t>& shape);

std::string extractor_name(std::size_t i, const char* leaf);
std::string layer_name(std::size_t layer, const char* leaf);

template <class T>
const BasicTensor<T>& param(const BasicWeightStore<T>& w, const std::string& name,
                            const std::vector<std::uint32_t>& shape)
{
    const auto it = w.find(name);
    if (it == w.end())
        throw ShapeError("missing weight tensor '" + name + "'");
    if (it->second.shape != shape || it->second.values.size() != it->second.element_count())
        throw ShapeError("weight tensor '" + name + "' has shape " +
                         shape_string(it->second.shape) + ", expected " + shape_string(shape));
    return it->second;
}

inline std::uint32_t u32(std::size_t v) { return static_cast<std::uint32_t>(v); }

/// y = x W + b with W stored [in, out]. Accumulates each output sequentially over k.
template <class T>
void dense(const BasicMatrix<T>& x, const T* __restrict w, const T* __restrict b, std::size_t out_dim,
           BasicMatrix<T>& y)
{
    const std::size_t in_dim = x.cols();
    y = BasicMatrix<T>(x.rows(), out_dim);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        T* __restrict yr = y.data() + i * out_dim;
        const T* xr = x.data() + i * in_dim;
        for (std::size_t j = 0; j < out_dim; ++j)
            yr[j] = b[j];
        for (std::size_t k = 0; k < in_dim; ++k) {
            const T a = xr[k];
            if (a == T(0))
                continue;
            const T* __restrict wr = w + k * out_dim;
            for (std::size_t j = 0; j < out_dim; ++j)
                yr[j] += a * wr[j];
        }
    }
}

template <class T>
struct LayerNormCache {
    BasicMatrix<T> xhat;
    std::vector<T> inv_std;
    std::vector<bool> floored;
};

/// In-place LayerNorm; fills the cache when given.
template <class T>
void layer_norm(BasicMatrix<T>& x, const T* gain, const T* bias, LayerNormCache<T>* cache)
{
    const std::size_t n = x.cols();
    if (cache) {
        cache->xhat = BasicMatrix<T>(x.rows(), n);
        cache->inv_std.assign(x.rows(), T(1));
        cache->floored.assign(x.rows(), false);
    }
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto r = x.row(i);
        T mean = 0;
        for (T v : r)
            mean += v;
        mean /= static_cast<T>(n);
        T var = 0;
        for (T v : r)
            var += (v - mean) * (v - mean);
        var /= static_cast<T>(n);
        T sd = std::sqrt(var);
        const bool floored = !(sd >= static_cast<T>(kLayerNormFloor));
        if (floored)
            sd = T(1);
        for (std::size_t c = 0; c < n; ++c) {
            const T xh = (r[c] - mean) / sd;
            if (cache)
                cache->xhat(i, c) = xh;
            r[c] = xh * gain[c] + bias[c];
        }
        if (cache) {
            cache->inv_std[i] = T(1) / sd;
            cache->floored[i] = floored;
        }
    }
}

template <class T>
void relu(BasicMatrix<T>& x)
{
    for (auto& v : x.values())
        if (v < T(0))
            v = T(0);
}

template <class T>
void softmax_row(std::span<T> r)
{
    T mx = r[0];
    for (T v : r)
        mx = v > mx ? v : mx;
    T sum = 0;
    for (auto& v : r) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (auto& v : r)
        v /= sum;
}

/// Sums rows [0, n) of `m` into row 0 by a pairwise tree. Deterministic and
/// exact for identical rows when n is a power of two.
template <class T>
void tree_reduce_rows(BasicMatrix<T>& m, std::size_t n)
{
    const std::size_t cols = m.cols();
    for (std::size_t stride = 1; stride < n; stride *= 2)
        for (std::size_t j = 0; j + stride < n; j += 2 * stride) {
            T* dst = m.data() + j * cols;
            const T* src = m.data() + (j + stride) * cols;
            for (std::size_t c = 0; c < cols; ++c)
                dst[c] += src[c];
        }
}

template <class T>
struct ExtractorCache {
    BasicMatrix<T> input;  // input to the dense layer
    LayerNormCache<T> ln;
    BasicMatrix<T> output; // after ReLU
};

template <class T>
struct EncoderCache {
    BasicMatrix<T> input;
    LayerNormCache<T> ln1;
    BasicMatrix<T> ln1_out;
    BasicMatrix<T> q, k, v;
    std::vector<BasicMatrix<T>> attn; // per head, T x T
    BasicMatrix<T> context;
    BasicMatrix<T> h1;
    LayerNormCache<T> ln2;
    BasicMatrix<T> ln2_out;
    BasicMatrix<T> ff_hidden; // after ReLU
};

template <class T>
struct ForwardCache {
    std::vector<ExtractorCache<T>> extractor;
    std::vector<EncoderCache<T>> layers;
    BasicMatrix<T> final_hidden;
    std::vector<T> pooled;
    std::vector<T> logits;
};

template <class T>
BasicMatrix<T> extract_cached(const BasicMatrix<T>& x, const BasicWeightStore<T>& w,
                              const ModelConfig& cfg, std::vector<ExtractorCache<T>>* cache);

template <class T>
BasicMatrix<T> encoder_cached(const BasicMatrix<T>& h, const BasicWeightStore<T>& w,
                              const ModelConfig& cfg, std::size_t layer, EncoderCache<T>* cache);

template <class T>
std::vector<T> forward_cached(const BasicMatrix<T>& x, const BasicWeightStore<T>& w,
                              const ModelConfig& cfg, ForwardCache<T>* cache);

} // namespace signpipe::nn::detail
