// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "signpipe/model.hpp"
#include "signpipe/preprocess.hpp"

namespace signpipe::nn {

template <class T>
struct BasicExample {
    BasicMatrix<T> features;
    int label = 0;
};

using Example = BasicExample<float>;

template <class T>
struct GradientResult {
    double loss = 0.0;         // mean cross-entropy over the batch
    std::size_t correct = 0;   // top-1 hits among the batch, from the same forward pass
    BasicWeightStore<T> grads; // d loss / d parameter, same names and shapes as the weights
};

/// Zero-filled store shaped like the model's parameters.
template <class T>
BasicWeightStore<T> zero_like(const ModelConfig& cfg);

/// Mean cross-entropy of the batch via the plain forward pass.
template <class T>
double batch_loss(std::span<const BasicExample<T>> batch, const BasicWeightStore<T>& w,
                  const ModelConfig& cfg);

/// Forward with caches, then manual backpropagation through every op.
template <class T>
GradientResult<T> compute_gradients(std::span<const BasicExample<T>> batch,
                                    const BasicWeightStore<T>& w, const ModelConfig& cfg);

struct StepResult {
    double loss = 0.0;
    std::size_t correct = 0;
};

/// One plain gradient-descent step in place. The reported loss is measured
/// before the update. Throws DivergenceError on a non-finite loss and leaves
/// the weights untouched in that case.
StepResult train_step(std::span<const Example> batch, WeightStore& w, const ModelConfig& cfg,
                      double lr);

struct EvalReport {
    std::size_t total = 0;
    std::size_t top1 = 0;
    std::size_t top5 = 0;
    double loss = 0.0;
    std::vector<std::size_t> class_support; // samples per true class
    std::vector<std::size_t> class_correct; // top-1 hits per true class

    double top1_accuracy() const noexcept { return total ? double(top1) / double(total) : 0.0; }
    double top5_accuracy() const noexcept { return total ? double(top5) / double(total) : 0.0; }
};

EvalReport evaluate(std::span<const Example> examples, const WeightStore& w, const ModelConfig& cfg);

struct TrainOptions {
    std::size_t epochs = 50;
    double lr = 0.05;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    bool augment = false;
};

struct EpochReport {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
};

/// Preprocesses labelled samples into model inputs. Throws ValidationError for
/// an unlabelled sample.
std::vector<Example> make_examples(std::span<const SignSample> samples, const SelectionSpec& spec,
                                   const ModelConfig& cfg);

/// Mini-batch SGD over shuffled training samples; `on_epoch` sees each epoch's
/// report as soon as it is complete. Deterministic for a given seed.
std::vector<EpochReport> fit(std::span<const SignSample> train, std::span<const SignSample> val,
                             const SelectionSpec& spec, const ModelConfig& cfg, WeightStore& w,
                             const TrainOptions& opts,
                             const std::function<void(const EpochReport&)>& on_epoch = {});

} // namespace signpipe::nn
