// SPDX-License-Identifier: Apache-2.0
#include "signpipe/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "model_impl.hpp"
#include "signpipe/error.hpp"
#include "signpipe/rng.hpp"

namespace signpipe::nn {

using detail::extractor_name;
using detail::layer_name;

namespace {

template <class T>
T* grad_of(BasicWeightStore<T>& g, const std::string& name)
{
    return g.at(name).values.data();
}

template <class T>
const T* weight_of(const BasicWeightStore<T>& w, const std::string& name)
{
    return w.at(name).values.data();
}

// Given y = x W + b: accumulates dW += x^T dy and db += colsum(dy); writes dx = dy W^T.
template <class T>
void dense_backward(const BasicMatrix<T>& x, const T* w, const BasicMatrix<T>& dy, T* dw, T* db,
                    BasicMatrix<T>* dx)
{
    const std::size_t in = x.cols();
    const std::size_t out = dy.cols();
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const T* dyr = dy.data() + i * out;
        for (std::size_t j = 0; j < out; ++j)
            db[j] += dyr[j];
        for (std::size_t k = 0; k < in; ++k) {
            const T a = x(i, k);
            if (a == T(0))
                continue;
            T* dwr = dw + k * out;
            for (std::size_t j = 0; j < out; ++j)
                dwr[j] += a * dyr[j];
        }
    }
    if (!dx)
        return;
    *dx = BasicMatrix<T>(x.rows(), in);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const T* dyr = dy.data() + i * out;
        for (std::size_t k = 0; k < in; ++k) {
            const T* wr = w + k * out;
            T s = 0;
            for (std::size_t j = 0; j < out; ++j)
                s += dyr[j] * wr[j];
            (*dx)(i, k) = s;
        }
    }
}

template <class T>
BasicMatrix<T> layer_norm_backward(const detail::LayerNormCache<T>& cache, const T* gain,
                                   const BasicMatrix<T>& dy, T* dgain, T* dbias)
{
    const std::size_t n = dy.cols();
    BasicMatrix<T> dx(dy.rows(), n);
    std::vector<T> dxhat(n);
    for (std::size_t i = 0; i < dy.rows(); ++i) {
        T m1 = 0;
        T m2 = 0;
        for (std::size_t c = 0; c < n; ++c) {
            const T g = dy(i, c);
            const T xh = cache.xhat(i, c);
            dgain[c] += g * xh;
            dbias[c] += g;
            dxhat[c] = g * gain[c];
            m1 += dxhat[c];
            m2 += dxhat[c] * xh;
        }
        m1 /= static_cast<T>(n);
        m2 /= static_cast<T>(n);
        if (cache.floored[i]) {
            for (std::size_t c = 0; c < n; ++c)
                dx(i, c) = dxhat[c] - m1;
        } else {
            const T inv = cache.inv_std[i];
            for (std::size_t c = 0; c < n; ++c)
                dx(i, c) = inv * (dxhat[c] - m1 - cache.xhat(i, c) * m2);
        }
    }
    return dx;
}

template <class T>
void relu_backward(const BasicMatrix<T>& activated, BasicMatrix<T>& dy)
{
    for (std::size_t i = 0; i < dy.size(); ++i)
        if (!(activated.values()[i] > T(0)))
            dy.values()[i] = T(0);
}

template <class T>
void add_into(BasicMatrix<T>& dst, const BasicMatrix<T>& src)
{
    for (std::size_t i = 0; i < dst.size(); ++i)
        dst.values()[i] += src.values()[i];
}

template <class T>
BasicMatrix<T> encoder_backward(const detail::EncoderCache<T>& c, const BasicWeightStore<T>& w,
                                BasicWeightStore<T>& g, const ModelConfig& cfg, std::size_t layer,
                                const BasicMatrix<T>& dout)
{
    const std::size_t d = cfg.model_dim;
    const std::size_t steps = dout.rows();
    const std::size_t hd = cfg.head_dim();
    const auto name = [&](const char* leaf) { return layer_name(layer, leaf); };

    // out = h1 + FFN(LN2(h1))
    BasicMatrix<T> dhidden;
    dense_backward(c.ff_hidden, weight_of(w, name("ffn.down.weight")), dout,
                   grad_of(g, name("ffn.down.weight")), grad_of(g, name("ffn.down.bias")), &dhidden);
    relu_backward(c.ff_hidden, dhidden);
    BasicMatrix<T> dln2;
    dense_backward(c.ln2_out, weight_of(w, name("ffn.up.weight")), dhidden,
                   grad_of(g, name("ffn.up.weight")), grad_of(g, name("ffn.up.bias")), &dln2);
    BasicMatrix<T> dh1 = layer_norm_backward(c.ln2, weight_of(w, name("norm2.gain")), dln2,
                                             grad_of(g, name("norm2.gain")),
                                             grad_of(g, name("norm2.bias")));
    add_into(dh1, dout);

    // h1 = h + MHA(LN1(h))
    BasicMatrix<T> dcontext;
    dense_backward(c.context, weight_of(w, name("attn.output.weight")), dh1,
                   grad_of(g, name("attn.output.weight")), grad_of(g, name("attn.output.bias")),
                   &dcontext);

    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    BasicMatrix<T> dq(steps, d), dk(steps, d), dv(steps, d);
    BasicMatrix<T> ds(steps, steps);
    for (std::size_t hh = 0; hh < cfg.num_heads; ++hh) {
        const std::size_t off = hh * hd;
        const auto& a = c.attn[hh];
        for (std::size_t i = 0; i < steps; ++i) {
            T dot = 0;
            for (std::size_t j = 0; j < steps; ++j) {
                T da = 0;
                for (std::size_t cc = 0; cc < hd; ++cc)
                    da += dcontext(i, off + cc) * c.v(j, off + cc);
                ds(i, j) = da;
                dot += a(i, j) * da;
            }
            for (std::size_t j = 0; j < steps; ++j)
                ds(i, j) = a(i, j) * (ds(i, j) - dot) * scale;
        }
        for (std::size_t i = 0; i < steps; ++i)
            for (std::size_t j = 0; j < steps; ++j) {
                const T aij = a(i, j);
                const T sij = ds(i, j);
                for (std::size_t cc = 0; cc < hd; ++cc) {
                    dv(j, off + cc) += aij * dcontext(i, off + cc);
                    dq(i, off + cc) += sij * c.k(j, off + cc);
                    dk(j, off + cc) += sij * c.q(i, off + cc);
                }
            }
    }

    BasicMatrix<T> dln1;
    BasicMatrix<T> part;
    dense_backward(c.ln1_out, weight_of(w, name("attn.query.weight")), dq,
                   grad_of(g, name("attn.query.weight")), grad_of(g, name("attn.query.bias")), &dln1);
    dense_backward(c.ln1_out, weight_of(w, name("attn.key.weight")), dk,
                   grad_of(g, name("attn.key.weight")), grad_of(g, name("attn.key.bias")), &part);
    add_into(dln1, part);
    dense_backward(c.ln1_out, weight_of(w, name("attn.value.weight")), dv,
                   grad_of(g, name("attn.value.weight")), grad_of(g, name("attn.value.bias")), &part);
    add_into(dln1, part);

    BasicMatrix<T> dh = layer_norm_backward(c.ln1, weight_of(w, name("norm1.gain")), dln1,
                                            grad_of(g, name("norm1.gain")),
                                            grad_of(g, name("norm1.bias")));
    add_into(dh, dh1);
    return dh;
}

// Backpropagates one example, scaling the loss gradient by `weight`.
template <class T>
void backward(const detail::ForwardCache<T>& cache, int label, const BasicWeightStore<T>& w,
              BasicWeightStore<T>& g, const ModelConfig& cfg, T weight)
{
    const std::size_t d = cfg.model_dim;
    const std::size_t classes = cfg.num_classes;
    const std::size_t steps = cache.final_hidden.rows();

    BasicMatrix<T> probs(1, classes);
    std::copy(cache.logits.begin(), cache.logits.end(), probs.data());
    softmax_rows(probs);
    BasicMatrix<T> dlogits(1, classes);
    for (std::size_t j = 0; j < classes; ++j)
        dlogits(0, j) = (probs(0, j) - (static_cast<int>(j) == label ? T(1) : T(0))) * weight;

    BasicMatrix<T> pooled(1, d);
    std::copy(cache.pooled.begin(), cache.pooled.end(), pooled.data());
    BasicMatrix<T> dpooled;
    dense_backward(pooled, weight_of(w, "head.weight"), dlogits, grad_of(g, "head.weight"),
                   grad_of(g, "head.bias"), &dpooled);

    BasicMatrix<T> dh(steps, d);
    for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t c = 0; c < d; ++c)
            dh(t, c) = dpooled(0, c) / static_cast<T>(steps);

    for (std::size_t l = cfg.num_layers; l-- > 0;)
        dh = encoder_backward(cache.layers[l], w, g, cfg, l, dh);

    T* dpos = grad_of(g, "pos_embedding");
    for (std::size_t i = 0; i < steps * d; ++i)
        dpos[i] += dh.values()[i];

    for (std::size_t i = cfg.extractor_dims.size(); i-- > 0;) {
        const auto& ec = cache.extractor[i];
        relu_backward(ec.output, dh);
        BasicMatrix<T> dz = layer_norm_backward(ec.ln, weight_of(w, extractor_name(i, "norm.gain")),
                                                dh, grad_of(g, extractor_name(i, "norm.gain")),
                                                grad_of(g, extractor_name(i, "norm.bias")));
        BasicMatrix<T> dx;
        dense_backward(ec.input, weight_of(w, extractor_name(i, "weight")), dz,
                       grad_of(g, extractor_name(i, "weight")), grad_of(g, extractor_name(i, "bias")),
                       i > 0 ? &dx : nullptr);
        dh = std::move(dx);
    }
}

template <class T>
double cross_entropy(std::span<const T> logits, int label)
{
    double mx = logits[0];
    for (T v : logits)
        mx = std::max<double>(mx, v);
    double sum = 0.0;
    for (T v : logits)
        sum += std::exp(static_cast<double>(v) - mx);
    return std::log(sum) + mx - static_cast<double>(logits[static_cast<std::size_t>(label)]);
}

template <class T>
void check_label(int label, const ModelConfig& cfg)
{
    if (label < 0 || static_cast<std::size_t>(label) >= cfg.num_classes)
        throw ValidationError("label " + std::to_string(label) + " outside [0, " +
                              std::to_string(cfg.num_classes) + ")");
}

template <class T>
int argmax_of(std::span<const T> v)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best])
            best = i;
    return static_cast<int>(best);
}

} // namespace

template <class T>
BasicWeightStore<T> zero_like(const ModelConfig& cfg)
{
    BasicWeightStore<T> g;
    for (auto& spec : parameter_layout(cfg)) {
        BasicTensor<T> t;
        t.shape = spec.shape;
        t.values.assign(t.element_count(), T(0));
        g.emplace(std::move(spec.name), std::move(t));
    }
    return g;
}

template <class T>
double batch_loss(std::span<const BasicExample<T>> batch, const BasicWeightStore<T>& w,
                  const ModelConfig& cfg)
{
    if (batch.empty())
        throw ArgumentError("empty batch");
    double total = 0.0;
    for (const auto& ex : batch) {
        check_label<T>(ex.label, cfg);
        const auto logits = forward(ex.features, w, cfg);
        total += cross_entropy<T>(logits, ex.label);
    }
    return total / static_cast<double>(batch.size());
}

template <class T>
GradientResult<T> compute_gradients(std::span<const BasicExample<T>> batch,
                                    const BasicWeightStore<T>& w, const ModelConfig& cfg)
{
    if (batch.empty())
        throw ArgumentError("empty batch");
    check_weights(w, cfg);
    GradientResult<T> result;
    result.grads = zero_like<T>(cfg);
    const T weight = T(1) / static_cast<T>(batch.size());
    for (const auto& ex : batch) {
        check_label<T>(ex.label, cfg);
        detail::ForwardCache<T> cache;
        detail::forward_cached(ex.features, w, cfg, &cache);
        result.loss += cross_entropy<T>(cache.logits, ex.label);
        if (argmax_of(std::span<const T>(cache.logits)) == ex.label)
            ++result.correct;
        backward(cache, ex.label, w, result.grads, cfg, weight);
    }
    result.loss /= static_cast<double>(batch.size());
    return result;
}

StepResult train_step(std::span<const Example> batch, WeightStore& w, const ModelConfig& cfg,
                      double lr)
{
    auto result = compute_gradients<float>(batch, w, cfg);
    if (!std::isfinite(result.loss))
        throw DivergenceError("training loss is not finite");
    const auto step = static_cast<float>(lr);
    for (auto& [name, t] : w) {
        const auto& gv = result.grads.at(name).values;
        for (std::size_t i = 0; i < t.values.size(); ++i)
            t.values[i] -= step * gv[i];
    }
    return {result.loss, result.correct};
}

EvalReport evaluate(std::span<const Example> examples, const WeightStore& w, const ModelConfig& cfg)
{
    EvalReport r;
    r.class_support.assign(cfg.num_classes, 0);
    r.class_correct.assign(cfg.num_classes, 0);
    for (const auto& ex : examples) {
        check_label<float>(ex.label, cfg);
        const auto logits = forward(ex.features, w, cfg);
        r.loss += cross_entropy<float>(logits, ex.label);
        const int top = argmax(logits);
        // Rank of the true class: count scores that beat it (ties go to the lower id).
        std::size_t rank = 0;
        const float own = logits[static_cast<std::size_t>(ex.label)];
        for (std::size_t j = 0; j < logits.size(); ++j)
            if (logits[j] > own || (logits[j] == own && static_cast<int>(j) < ex.label))
                ++rank;
        ++r.total;
        ++r.class_support[static_cast<std::size_t>(ex.label)];
        if (top == ex.label) {
            ++r.top1;
            ++r.class_correct[static_cast<std::size_t>(ex.label)];
        }
        if (rank < 5)
            ++r.top5;
    }
    if (r.total)
        r.loss /= static_cast<double>(r.total);
    return r;
}

std::vector<Example> make_examples(std::span<const SignSample> samples, const SelectionSpec& spec,
                                   const ModelConfig& cfg)
{
    if (spec.feature_dim() != cfg.input_dim)
        throw ShapeError("selection yields " + std::to_string(spec.feature_dim()) +
                         " features but the model expects " + std::to_string(cfg.input_dim));
    std::vector<Example> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        if (!s.label)
            throw ValidationError("sample '" + s.sample_id + "' has no label");
        out.push_back({preprocess_pipeline(s, spec, cfg.max_seq_len), *s.label});
    }
    return out;
}

std::vector<EpochReport> fit(std::span<const SignSample> train, std::span<const SignSample> val,
                             const SelectionSpec& spec, const ModelConfig& cfg, WeightStore& w,
                             const TrainOptions& opts,
                             const std::function<void(const EpochReport&)>& on_epoch)
{
    if (train.empty())
        throw ArgumentError("training set is empty");
    if (opts.batch_size == 0)
        throw ArgumentError("batch size must be positive");
    check_weights(w, cfg);

    auto train_examples = make_examples(train, spec, cfg);
    const auto val_examples = make_examples(val, spec, cfg);

    Rng rng(opts.seed);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::vector<EpochReport> reports;
    for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::vector<Example> batch;
        for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
            batch.clear();
            const std::size_t end = std::min(order.size(), start + opts.batch_size);
            for (std::size_t i = start; i < end; ++i) {
                const std::size_t idx = order[i];
                if (opts.augment) {
                    const auto aug = AugmentConfig::training_defaults(rng.next_u64());
                    try {
                        batch.push_back(
                            {preprocess_pipeline(train[idx], spec, cfg.max_seq_len, aug),
                             train_examples[idx].label});
                        continue;
                    } catch (const DegenerateInputError&) {
                        // every frame masked; fall back to the clean sample
                    }
                }
                batch.push_back(train_examples[idx]);
            }
            const auto step = train_step(batch, w, cfg, opts.lr);
            loss_sum += step.loss * static_cast<double>(batch.size());
            correct += step.correct;
        }

        EpochReport rep;
        rep.epoch = epoch;
        rep.train_loss = loss_sum / static_cast<double>(order.size());
        rep.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
        if (!val_examples.empty()) {
            const auto ev = evaluate(val_examples, w, cfg);
            rep.val_loss = ev.loss;
            rep.val_acc = ev.top1_accuracy();
        }
        reports.push_back(rep);
        if (on_epoch)
            on_epoch(rep);
    }
    return reports;
}

template BasicWeightStore<float> zero_like<float>(const ModelConfig&);
template BasicWeightStore<double> zero_like<double>(const ModelConfig&);
template double batch_loss<float>(std::span<const BasicExample<float>>, const BasicWeightStore<float>&,
                                  const ModelConfig&);
template double batch_loss<double>(std::span<const BasicExample<double>>,
                                   const BasicWeightStore<double>&, const ModelConfig&);
template GradientResult<float> compute_gradients<float>(std::span<const BasicExample<float>>,
                                                        const BasicWeightStore<float>&,
                                                        const ModelConfig&);
template GradientResult<double> compute_gradients<double>(std::span<const BasicExample<double>>,
                                                          const BasicWeightStore<double>&,
                                                          const ModelConfig&);

} // namespace signpipe::nn
