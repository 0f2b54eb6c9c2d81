// SPDX-License-Identifier: Apache-2.0
#include "signpipe/model.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "model_impl.hpp"
#include "signpipe/error.hpp"
#include "signpipe/rng.hpp"

namespace signpipe::nn {

using detail::u32;

namespace {

constexpr double kPositionalStd = 0.02;

const char* const kConfigKeys[] = {"input_dim", "extractor_dims", "model_dim", "num_layers",
                                   "num_heads", "ff_dim",         "num_classes", "max_seq_len"};

std::vector<std::uint32_t> row_shape(std::size_t rows, std::size_t cols)
{
    return {u32(rows), u32(cols)};
}

} // namespace

namespace detail {

std::string shape_string(const std::vector<std::uint32_t>& shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i)
            s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

std::string extractor_name(std::size_t i, const char* leaf)
{
    return "extractor." + std::to_string(i) + "." + leaf;
}

std::string layer_name(std::size_t layer, const char* leaf)
{
    return "encoder." + std::to_string(layer) + "." + leaf;
}

} // namespace detail

void ModelConfig::validate() const
{
    if (input_dim == 0 || model_dim == 0 || num_layers == 0 || num_heads == 0 || ff_dim == 0 ||
        num_classes == 0 || max_seq_len == 0)
        throw ValidationError("model dimensions must be positive");
    if (model_dim % num_heads != 0)
        throw ValidationError("model_dim " + std::to_string(model_dim) +
                              " is not divisible by num_heads " + std::to_string(num_heads));
    if (extractor_dims.empty() || extractor_dims.back() != model_dim)
        throw ValidationError("extractor_dims must be non-empty and end with model_dim");
    if (std::find(extractor_dims.begin(), extractor_dims.end(), 0u) != extractor_dims.end())
        throw ValidationError("extractor widths must be positive");
}

ModelConfig ModelConfig::parse(std::string_view json_text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("model config is not valid JSON: ") + e.what());
    }
    if (!j.is_object())
        throw ValidationError("model config must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (std::find(std::begin(kConfigKeys), std::end(kConfigKeys), key) == std::end(kConfigKeys))
            throw ValidationError("unknown model config key '" + key + "'");

    ModelConfig cfg;
    try {
        cfg.input_dim = j.value("input_dim", cfg.input_dim);
        cfg.extractor_dims = j.value("extractor_dims", cfg.extractor_dims);
        cfg.model_dim = j.value("model_dim", cfg.model_dim);
        cfg.num_layers = j.value("num_layers", cfg.num_layers);
        cfg.num_heads = j.value("num_heads", cfg.num_heads);
        cfg.ff_dim = j.value("ff_dim", cfg.ff_dim);
        cfg.num_classes = j.value("num_classes", cfg.num_classes);
        cfg.max_seq_len = j.value("max_seq_len", cfg.max_seq_len);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("model config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

ModelConfig ModelConfig::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open model config " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::string ModelConfig::to_json() const
{
    nlohmann::ordered_json j;
    j["input_dim"] = input_dim;
    j["extractor_dims"] = extractor_dims;
    j["model_dim"] = model_dim;
    j["num_layers"] = num_layers;
    j["num_heads"] = num_heads;
    j["ff_dim"] = ff_dim;
    j["num_classes"] = num_classes;
    j["max_seq_len"] = max_seq_len;
    return j.dump(2) + "\n";
}

std::vector<ParamSpec> parameter_layout(const ModelConfig& cfg)
{
    cfg.validate();
    using detail::extractor_name;
    using detail::layer_name;
    const std::size_t d = cfg.model_dim;

    std::vector<ParamSpec> out;
    const auto vec = [](std::size_t n) { return std::vector<std::uint32_t>{u32(n)}; };

    std::size_t in = cfg.input_dim;
    for (std::size_t i = 0; i < cfg.extractor_dims.size(); ++i) {
        const std::size_t o = cfg.extractor_dims[i];
        out.push_back({extractor_name(i, "weight"), row_shape(in, o)});
        out.push_back({extractor_name(i, "bias"), vec(o)});
        out.push_back({extractor_name(i, "norm.gain"), vec(o)});
        out.push_back({extractor_name(i, "norm.bias"), vec(o)});
        in = o;
    }
    out.push_back({"pos_embedding", row_shape(cfg.max_seq_len, d)});
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        out.push_back({layer_name(l, "norm1.gain"), vec(d)});
        out.push_back({layer_name(l, "norm1.bias"), vec(d)});
        for (const char* proj : {"query", "key", "value", "output"}) {
            const std::string base = std::string("attn.") + proj;
            out.push_back({layer_name(l, (base + ".weight").c_str()), row_shape(d, d)});
            out.push_back({layer_name(l, (base + ".bias").c_str()), vec(d)});
        }
        out.push_back({layer_name(l, "norm2.gain"), vec(d)});
        out.push_back({layer_name(l, "norm2.bias"), vec(d)});
        out.push_back({layer_name(l, "ffn.up.weight"), row_shape(d, cfg.ff_dim)});
        out.push_back({layer_name(l, "ffn.up.bias"), vec(cfg.ff_dim)});
        out.push_back({layer_name(l, "ffn.down.weight"), row_shape(cfg.ff_dim, d)});
        out.push_back({layer_name(l, "ffn.down.bias"), vec(d)});
    }
    out.push_back({"head.weight", row_shape(d, cfg.num_classes)});
    out.push_back({"head.bias", vec(cfg.num_classes)});
    return out;
}

std::size_t count_parameters(const ModelConfig& cfg)
{
    cfg.validate();
    const auto dense = [](std::size_t i, std::size_t o) { return i * o + o; };
    const auto norm = [](std::size_t n) { return 2 * n; };
    const std::size_t d = cfg.model_dim;

    std::size_t total = 0;
    std::size_t in = cfg.input_dim;
    for (std::size_t o : cfg.extractor_dims) {
        total += dense(in, o) + norm(o);
        in = o;
    }
    total += cfg.max_seq_len * d;
    const std::size_t attention = 4 * dense(d, d);
    const std::size_t ffn = dense(d, cfg.ff_dim) + dense(cfg.ff_dim, d);
    total += cfg.num_layers * (2 * norm(d) + attention + ffn);
    total += dense(d, cfg.num_classes);
    return total;
}

WeightStore init_weights(const ModelConfig& cfg, std::uint64_t seed)
{
    Rng rng(seed);
    WeightStore w;
    for (auto& spec : parameter_layout(cfg)) {
        Tensor t;
        t.shape = spec.shape;
        t.values.assign(t.element_count(), 0.0f);
        const auto ends_with = [&](std::string_view suffix) {
            return spec.name.size() >= suffix.size() &&
                   spec.name.compare(spec.name.size() - suffix.size(), suffix.size(), suffix) == 0;
        };
        if (spec.name == "pos_embedding") {
            for (auto& v : t.values)
                v = static_cast<float>(rng.normal(0.0, kPositionalStd));
        } else if (ends_with("gain")) {
            std::fill(t.values.begin(), t.values.end(), 1.0f);
        } else if (ends_with("weight")) {
            const double bound = std::sqrt(1.0 / static_cast<double>(spec.shape[0]));
            for (auto& v : t.values)
                v = static_cast<float>(rng.uniform(-bound, bound));
        }
        w.emplace(std::move(spec.name), std::move(t));
    }
    return w;
}

template <class T>
void check_weights(const BasicWeightStore<T>& w, const ModelConfig& cfg)
{
    for (const auto& spec : parameter_layout(cfg))
        detail::param(w, spec.name, spec.shape);
}

template <class T>
void layer_norm_rows(BasicMatrix<T>& x, std::span<const T> gain, std::span<const T> bias)
{
    if (gain.size() != x.cols() || bias.size() != x.cols())
        throw ShapeError("LayerNorm parameters do not match row width");
    detail::layer_norm<T>(x, gain.data(), bias.data(), nullptr);
}

template <class T>
void softmax_rows(BasicMatrix<T>& x)
{
    for (std::size_t i = 0; i < x.rows(); ++i)
        detail::softmax_row(x.row(i));
}

namespace detail {

template <class T>
BasicMatrix<T> extract_cached(const BasicMatrix<T>& x, const BasicWeightStore<T>& w,
                              const ModelConfig& cfg, std::vector<ExtractorCache<T>>* cache)
{
    if (x.cols() != cfg.input_dim)
        throw ShapeError("input feature tensor has shape [" + std::to_string(x.rows()) + ", " +
                         std::to_string(x.cols()) + "], expected [*, " +
                         std::to_string(cfg.input_dim) + "]");
    if (cache)
        cache->assign(cfg.extractor_dims.size(), {});
    BasicMatrix<T> h = x;
    std::size_t in = cfg.input_dim;
    for (std::size_t i = 0; i < cfg.extractor_dims.size(); ++i) {
        const std::size_t o = cfg.extractor_dims[i];
        const auto& wt = param(w, extractor_name(i, "weight"), row_shape(in, o));
        const auto& b = param(w, extractor_name(i, "bias"), {u32(o)});
        const auto& g = param(w, extractor_name(i, "norm.gain"), {u32(o)});
        const auto& nb = param(w, extractor_name(i, "norm.bias"), {u32(o)});
        BasicMatrix<T> y;
        dense(h, wt.values.data(), b.values.data(), o, y);
        layer_norm(y, g.values.data(), nb.values.data(), cache ? &(*cache)[i].ln : nullptr);
        relu(y);
        if (cache) {
            (*cache)[i].input = std::move(h);
            (*cache)[i].output = y;
        }
        h = std::move(y);
        in = o;
    }
    return h;
}

template <class T>
BasicMatrix<T> encoder_cached(const BasicMatrix<T>& h, const BasicWeightStore<T>& w,
                              const ModelConfig& cfg, std::size_t layer, EncoderCache<T>* cache)
{
    const std::size_t d = cfg.model_dim;
    const std::size_t steps = h.rows();
    const std::size_t heads = cfg.num_heads;
    const std::size_t hd = cfg.head_dim();
    if (h.cols() != d)
        throw ShapeError("encoder input has width " + std::to_string(h.cols()) + ", expected " +
                         std::to_string(d));
    const auto p = [&](const char* leaf, std::vector<std::uint32_t> shape) -> const BasicTensor<T>& {
        return param(w, layer_name(layer, leaf), shape);
    };
    const std::vector<std::uint32_t> vd = {u32(d)};
    const std::vector<std::uint32_t> dd = row_shape(d, d);

    BasicMatrix<T> ln1 = h;
    layer_norm(ln1, p("norm1.gain", vd).values.data(), p("norm1.bias", vd).values.data(),
               cache ? &cache->ln1 : nullptr);

    BasicMatrix<T> q, k, v;
    dense(ln1, p("attn.query.weight", dd).values.data(), p("attn.query.bias", vd).values.data(), d, q);
    dense(ln1, p("attn.key.weight", dd).values.data(), p("attn.key.bias", vd).values.data(), d, k);
    dense(ln1, p("attn.value.weight", dd).values.data(), p("attn.value.bias", vd).values.data(), d, v);

    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    BasicMatrix<T> context(steps, d);
    BasicMatrix<T> terms(steps, hd);
    std::vector<BasicMatrix<T>> attn_maps;
    for (std::size_t hh = 0; hh < heads; ++hh) {
        const std::size_t off = hh * hd;
        BasicMatrix<T> a(steps, steps);
        for (std::size_t i = 0; i < steps; ++i)
            for (std::size_t j = 0; j < steps; ++j) {
                T s = 0;
                for (std::size_t c = 0; c < hd; ++c)
                    s += q(i, off + c) * k(j, off + c);
                a(i, j) = s * scale;
            }
        softmax_rows(a);
        for (std::size_t i = 0; i < steps; ++i) {
            for (std::size_t j = 0; j < steps; ++j)
                for (std::size_t c = 0; c < hd; ++c)
                    terms(j, c) = a(i, j) * v(j, off + c);
            tree_reduce_rows(terms, steps);
            for (std::size_t c = 0; c < hd; ++c)
                context(i, off + c) = terms(0, c);
        }
        if (cache)
            attn_maps.push_back(std::move(a));
    }

    BasicMatrix<T> attn_out;
    dense(context, p("attn.output.weight", dd).values.data(), p("attn.output.bias", vd).values.data(),
          d, attn_out);
    BasicMatrix<T> h1 = h;
    for (std::size_t i = 0; i < h1.size(); ++i)
        h1.values()[i] += attn_out.values()[i];

    BasicMatrix<T> ln2 = h1;
    layer_norm(ln2, p("norm2.gain", vd).values.data(), p("norm2.bias", vd).values.data(),
               cache ? &cache->ln2 : nullptr);
    BasicMatrix<T> hidden;
    dense(ln2, p("ffn.up.weight", row_shape(d, cfg.ff_dim)).values.data(),
          p("ffn.up.bias", {u32(cfg.ff_dim)}).values.data(), cfg.ff_dim, hidden);
    relu(hidden);
    BasicMatrix<T> ff_out;
    dense(hidden, p("ffn.down.weight", row_shape(cfg.ff_dim, d)).values.data(),
          p("ffn.down.bias", vd).values.data(), d, ff_out);

    BasicMatrix<T> out = h1;
    for (std::size_t i = 0; i < out.size(); ++i)
        out.values()[i] += ff_out.values()[i];

    if (cache) {
        cache->input = h;
        cache->ln1_out = std::move(ln1);
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->attn = std::move(attn_maps);
        cache->context = std::move(context);
        cache->h1 = std::move(h1);
        cache->ln2_out = std::move(ln2);
        cache->ff_hidden = std::move(hidden);
    }
    return out;
}

template <class T>
std::vector<T> forward_cached(const BasicMatrix<T>& x, const BasicWeightStore<T>& w,
                              const ModelConfig& cfg, ForwardCache<T>* cache)
{
    if (x.rows() == 0 || x.rows() > cfg.max_seq_len)
        throw ShapeError("input has " + std::to_string(x.rows()) + " frames, expected 1.." +
                         std::to_string(cfg.max_seq_len));
    const std::size_t d = cfg.model_dim;
    const std::size_t steps = x.rows();

    BasicMatrix<T> h = extract_cached(x, w, cfg, cache ? &cache->extractor : nullptr);
    const auto& pos = param(w, "pos_embedding", row_shape(cfg.max_seq_len, d));
    for (std::size_t i = 0; i < steps * d; ++i)
        h.values()[i] += pos.values[i];

    if (cache)
        cache->layers.assign(cfg.num_layers, {});
    for (std::size_t l = 0; l < cfg.num_layers; ++l)
        h = encoder_cached(h, w, cfg, l, cache ? &cache->layers[l] : nullptr);

    BasicMatrix<T> pooled = h;
    tree_reduce_rows(pooled, steps);
    BasicMatrix<T> mean(1, d);
    for (std::size_t c = 0; c < d; ++c)
        mean(0, c) = pooled(0, c) / static_cast<T>(steps);

    const auto& hw = param(w, "head.weight", row_shape(d, cfg.num_classes));
    const auto& hb = param(w, "head.bias", {u32(cfg.num_classes)});
    BasicMatrix<T> logits;
    dense(mean, hw.values.data(), hb.values.data(), cfg.num_classes, logits);

    if (cache) {
        cache->final_hidden = std::move(h);
        cache->pooled = mean.values();
        cache->logits = logits.values();
    }
    return logits.values();
}

} // namespace detail

template <class T>
BasicMatrix<T> feature_extract(const BasicMatrix<T>& x, const BasicWeightStore<T>& w,
                               const ModelConfig& cfg)
{
    return detail::extract_cached<T>(x, w, cfg, nullptr);
}

template <class T>
BasicMatrix<T> encoder_layer(const BasicMatrix<T>& h, const BasicWeightStore<T>& w,
                             const ModelConfig& cfg, std::size_t layer)
{
    if (layer >= cfg.num_layers)
        throw ArgumentError("layer index " + std::to_string(layer) + " out of range");
    return detail::encoder_cached<T>(h, w, cfg, layer, nullptr);
}

template <class T>
std::vector<T> forward(const BasicMatrix<T>& x, const BasicWeightStore<T>& w,
                       const ModelConfig& cfg)
{
    return detail::forward_cached<T>(x, w, cfg, nullptr);
}

std::vector<double> softmax(std::span<const float> logits)
{
    std::vector<double> p(logits.begin(), logits.end());
    if (!p.empty())
        detail::softmax_row(std::span<double>(p));
    return p;
}

int argmax(std::span<const float> logits)
{
    if (logits.empty())
        throw ArgumentError("argmax of empty logits");
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best])
            best = i;
    return static_cast<int>(best);
}

Prediction predict_from_logits(std::span<const float> logits, const LabelMap& labels)
{
    Prediction p;
    p.class_id = argmax(logits);
    p.confidence = softmax(logits)[static_cast<std::size_t>(p.class_id)];
    p.gloss = static_cast<std::size_t>(p.class_id) < labels.size()
                  ? labels.gloss(p.class_id)
                  : "class_" + std::to_string(p.class_id);
    return p;
}

Prediction predict(const Matrix& x, const WeightStore& w, const ModelConfig& cfg,
                   const LabelMap& labels)
{
    const auto logits = forward(x, w, cfg);
    for (float v : logits)
        if (!std::isfinite(v))
            throw DivergenceError("non-finite logits");
    return predict_from_logits(logits, labels);
}

void save_weights(const WeightStore& w, const std::filesystem::path& path)
{
    save_tensors(w, path);
}

WeightStore load_weights(const std::filesystem::path& path)
{
    return load_tensors(path);
}

#define SIGNPIPE_INSTANTIATE(T)                                                                    \
    template void check_weights<T>(const BasicWeightStore<T>&, const ModelConfig&);                \
    template void layer_norm_rows<T>(BasicMatrix<T>&, std::span<const T>, std::span<const T>);     \
    template void softmax_rows<T>(BasicMatrix<T>&);                                                \
    template BasicMatrix<T> feature_extract<T>(const BasicMatrix<T>&, const BasicWeightStore<T>&,  \
                                               const ModelConfig&);                                \
    template BasicMatrix<T> encoder_layer<T>(const BasicMatrix<T>&, const BasicWeightStore<T>&,    \
                                             const ModelConfig&, std::size_t);                     \
    template std::vector<T> forward<T>(const BasicMatrix<T>&, const BasicWeightStore<T>&,          \
                                       const ModelConfig&);                                        \
    template std::vector<T> detail::forward_cached<T>(const BasicMatrix<T>&,                       \
                                                      const BasicWeightStore<T>&,                  \
                                                      const ModelConfig&, detail::ForwardCache<T>*);

SIGNPIPE_INSTANTIATE(float)
SIGNPIPE_INSTANTIATE(double)

#undef SIGNPIPE_INSTANTIATE

} // namespace signpipe::nn
