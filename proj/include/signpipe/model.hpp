// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "signpipe/landmark.hpp"
#include "signpipe/tensor.hpp"

namespace signpipe::nn {

/// Architecture hyperparameters. The defaults describe the shipped model:
/// 2,562,970 parameters for 88 selected landmarks over 32 frames.
struct ModelConfig {
    std::size_t input_dim = 176;
    /// Widths of the dense -> LayerNorm -> ReLU stack; the last equals model_dim.
    std::vector<std::size_t> extractor_dims = {840, 240};
    std::size_t model_dim = 240;
    std::size_t num_layers = 4;
    std::size_t num_heads = 4;
    std::size_t ff_dim = 630;
    std::size_t num_classes = 250;
    std::size_t max_seq_len = 32;

    void validate() const;
    std::size_t head_dim() const noexcept { return model_dim / num_heads; }

    static ModelConfig parse(std::string_view json_text);
    static ModelConfig load(const std::filesystem::path& path);
    std::string to_json() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class T>
using BasicWeightStore = BasicTensorMap<T>;
using WeightStore = TensorMap;

/// Parameter names and shapes in construction order.
struct ParamSpec {
    std::string name;
    std::vector<std::uint32_t> shape;
};
std::vector<ParamSpec> parameter_layout(const ModelConfig& cfg);

/// Closed-form parameter count.
std::size_t count_parameters(const ModelConfig& cfg);

/// Dense weights ~ U[-sqrt(1/fan_in), +sqrt(1/fan_in)], biases 0, LayerNorm
/// gain 1 and bias 0, positional embedding ~ N(0, 0.02).
WeightStore init_weights(const ModelConfig& cfg, std::uint64_t seed);

/// Throws ShapeError naming the first missing or misshapen tensor.
template <class T>
void check_weights(const BasicWeightStore<T>& w, const ModelConfig& cfg);

template <class T>
BasicWeightStore<T> convert_weights(const WeightStore& w)
{
    BasicWeightStore<T> out;
    for (const auto& [name, t] : w)
        out[name] = BasicTensor<T>{t.shape, std::vector<T>(t.values.begin(), t.values.end())};
    return out;
}

/// Row-wise LayerNorm without epsilon; a row with std < 1e-8 uses std = 1.
template <class T>
void layer_norm_rows(BasicMatrix<T>& x, std::span<const T> gain, std::span<const T> bias);

/// Row-wise numerically stable softmax.
template <class T>
void softmax_rows(BasicMatrix<T>& x);

/// [dense -> LayerNorm -> ReLU] per extractor width; output T x model_dim.
template <class T>
BasicMatrix<T> feature_extract(const BasicMatrix<T>& x, const BasicWeightStore<T>& w,
                               const ModelConfig& cfg);

/// Pre-norm block: h + MHA(LN(h)), then + FFN(LN(.)). Bidirectional attention.
template <class T>
BasicMatrix<T> encoder_layer(const BasicMatrix<T>& h, const BasicWeightStore<T>& w,
                             const ModelConfig& cfg, std::size_t layer);

/// Unnormalized class scores for one T x input_dim feature tensor, where
/// 1 <= T <= max_seq_len.
template <class T>
std::vector<T> forward(const BasicMatrix<T>& x, const BasicWeightStore<T>& w,
                       const ModelConfig& cfg);

struct Prediction {
    int class_id = 0;
    std::string gloss;
    double confidence = 0.0;
};

/// Softmax in double precision.
std::vector<double> softmax(std::span<const float> logits);
/// Index of the largest value; ties resolve to the lowest index.
int argmax(std::span<const float> logits);

Prediction predict_from_logits(std::span<const float> logits, const LabelMap& labels);
Prediction predict(const Matrix& x, const WeightStore& w, const ModelConfig& cfg,
                   const LabelMap& labels);

void save_weights(const WeightStore& w, const std::filesystem::path& path);
WeightStore load_weights(const std::filesystem::path& path);

} // namespace signpipe::nn
