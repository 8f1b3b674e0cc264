#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "regtext/corpus/batch.hpp"
#include "regtext/error.hpp"
#include "regtext/graph.hpp"
#include "regtext/rng.hpp"
#include "regtext/tensor.hpp"

namespace regtext::encoders {

enum class EncoderKind { SwemConcat, Cnn, Bilstm, BilstmMax };

inline const char* encoder_name(EncoderKind k) {
    switch (k) {
        case EncoderKind::SwemConcat: return "swem";
        case EncoderKind::Cnn: return "cnn";
        case EncoderKind::Bilstm: return "bilstm";
        case EncoderKind::BilstmMax: return "bilstm_max";
    }
    return "?";
}

inline EncoderKind encoder_from_name(const std::string& name) {
    if (name == "swem") return EncoderKind::SwemConcat;
    if (name == "cnn") return EncoderKind::Cnn;
    if (name == "bilstm") return EncoderKind::Bilstm;
    if (name == "bilstm_max") return EncoderKind::BilstmMax;
    fail("unknown encoder '", name, "' (want swem|cnn|bilstm|bilstm_max)");
}

struct ModelSpec {
    EncoderKind encoder = EncoderKind::SwemConcat;
    std::size_t embedding_dim = 300;
    std::size_t hidden_state = 256;  // LSTM variants
    std::size_t num_kernel = 300;    // CNN
    std::size_t context_size = 7;    // CNN
    std::size_t stride = 2;          // CNN
    std::size_t classifier_dim = 300;
    double dropout_rate = 0.5;
    int num_classes = 2;

    std::size_t feature_dim() const {
        switch (encoder) {
            case EncoderKind::SwemConcat: return 2 * embedding_dim;
            case EncoderKind::Cnn: return num_kernel;
            case EncoderKind::Bilstm:
            case EncoderKind::BilstmMax: return 2 * hidden_state;
        }
        return 0;
    }

    void validate() const {
        check(embedding_dim >= 1, "model: embedding_dim must be positive");
        check(num_classes >= 2, "model: need at least 2 classes");
        check(classifier_dim >= 1, "model: classifier_dim must be positive");
        check(dropout_rate >= 0.0 && dropout_rate < 1.0, "model: dropout_rate ", dropout_rate,
              " outside [0,1)");
        if (encoder == EncoderKind::Cnn)
            check(num_kernel >= 1 && context_size >= 1 && stride >= 1,
                  "model: CNN needs positive num_kernel/context_size/stride");
        if (encoder == EncoderKind::Bilstm || encoder == EncoderKind::BilstmMax)
            check(hidden_state >= 1, "model: LSTM needs positive hidden_state");
    }
};

// All trainable tensors. The SWEM encoder contributes none beyond the
// embedding table and classifier.
template <typename T>
struct ModelState {
    ModelSpec spec;
    TensorPtr<T> embedding;  // [V, d]
    std::map<std::string, TensorPtr<T>> params;
    bool train_embedding = true;

    static ModelState init(const ModelSpec& spec, TensorPtr<T> embedding, Rng& rng) {
        spec.validate();
        check(embedding && embedding->shape.size() == 2 &&
                  embedding->shape[1] == spec.embedding_dim,
              "model: embedding table must be [V,", spec.embedding_dim, "]");
        ModelState st;
        st.spec = spec;
        st.embedding = std::move(embedding);
        st.embedding->requires_grad = true;
        st.embedding->ensure_grad();

        auto add = [&](const std::string& name, Shape shape, bool glorot_init) {
            auto t = make_tensor<T>(shape);
            if (glorot_init) {
                const double fan_in = static_cast<double>(shape[0]);
                const double fan_out = static_cast<double>(shape.back());
                const double limit = std::sqrt(6.0 / (fan_in + fan_out));
                for (auto& v : t->data) v = static_cast<T>(rng.uniform(-limit, limit));
            }
            t->requires_grad = true;
            t->ensure_grad();
            st.params[name] = t;
            return t;
        };

        const std::size_t d = spec.embedding_dim, h = spec.hidden_state;
        switch (spec.encoder) {
            case EncoderKind::SwemConcat:
                break;  // parameter-free composition
            case EncoderKind::Cnn:
                add("cnn.kernel", {spec.context_size * d, spec.num_kernel}, true);
                add("cnn.bias", {spec.num_kernel}, false);
                break;
            case EncoderKind::Bilstm:
            case EncoderKind::BilstmMax:
                for (const char* dir : {"fwd", "bwd"}) {
                    add(std::string("lstm.") + dir + ".wx", {d, 4 * h}, true);
                    add(std::string("lstm.") + dir + ".wh", {h, 4 * h}, true);
                    auto b = add(std::string("lstm.") + dir + ".b", {4 * h}, false);
                    // forget-gate bias starts at +1 (gate order: i, f, g, o)
                    for (std::size_t j = h; j < 2 * h; ++j) b->data[j] = T(1);
                }
                break;
        }
        add("clf.w1", {spec.feature_dim(), spec.classifier_dim}, true);
        add("clf.b1", {spec.classifier_dim}, false);
        add("clf.w2", {spec.classifier_dim, static_cast<std::size_t>(spec.num_classes)}, true);
        add("clf.b2", {static_cast<std::size_t>(spec.num_classes)}, false);
        return st;
    }

    // name -> tensor for every tensor the optimizer updates, in a fixed order
    std::vector<std::pair<std::string, TensorPtr<T>>> trainables() const {
        std::vector<std::pair<std::string, TensorPtr<T>>> out;
        if (train_embedding) out.emplace_back("embedding", embedding);
        for (const auto& [name, t] : params) out.emplace_back(name, t);
        return out;
    }

    void zero_grads() {
        embedding->zero_grad();
        for (auto& [name, t] : params) t->zero_grad();
    }

    // The padding row never trains: its gradient is cleared between backward
    // and the optimizer step.
    void freeze_pad_row() {
        if (embedding->grad.empty()) return;
        const std::size_t d = embedding->shape[1];
        std::fill_n(embedding->grad.begin(), d, T(0));
    }

    ModelState clone() const {
        ModelState out;
        out.spec = spec;
        out.train_embedding = train_embedding;
        out.embedding = make_tensor<T>(embedding->shape, std::vector<T>(embedding->data));
        out.embedding->requires_grad = true;
        for (const auto& [name, t] : params) {
            auto copy = make_tensor<T>(t->shape, std::vector<T>(t->data));
            copy->requires_grad = true;
            out.params[name] = copy;
        }
        return out;
    }

    const TensorPtr<T>& param(const std::string& name) const {
        auto it = params.find(name);
        check(it != params.end(), "model: no parameter named '", name, "'");
        return it->second;
    }
};

// Dropout sites: after the composition function and after the classifier's
// hidden relu. Drawn once per loss evaluation so clean and perturbed
// branches can share the same masks.
template <typename T>
struct DropoutMasks {
    std::vector<T> after_encoder;  // [b * feature_dim]
    std::vector<T> hidden;         // [b * classifier_dim]

    static DropoutMasks draw(const ModelSpec& spec, std::size_t batch, Rng& rng) {
        DropoutMasks m;
        m.after_encoder =
            make_dropout_mask<T>(batch * spec.feature_dim(), spec.dropout_rate, rng);
        m.hidden = make_dropout_mask<T>(batch * spec.classifier_dim, spec.dropout_rate, rng);
        return m;
    }
};

template <typename T>
struct Forward {
    TensorPtr<T> embedded;  // [b,T,d]; gradient target for input perturbations
    TensorPtr<T> features;  // [b, feature_dim]
    TensorPtr<T> logits;    // [b, k]
    std::vector<std::size_t> argmax_timesteps;  // BilstmMax: per (example, feature)
};

namespace detail {

// Additive mask sending padded positions to -1e30 so a max over the time
// axis can never select them. Applied to a [b,T,f] tensor.
template <typename T>
std::vector<T> pad_to_neg_inf(std::size_t b, std::size_t t_max, std::size_t f,
                              const std::vector<int>& lengths) {
    std::vector<T> offs(b * t_max * f, T(0));
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t t = static_cast<std::size_t>(lengths[i]); t < t_max; ++t)
            std::fill_n(offs.begin() + static_cast<std::ptrdiff_t>((i * t_max + t) * f), f,
                        T(-1e30));
    return offs;
}

template <typename T>
TensorPtr<T> swem_encode(Graph<T>& g, const TensorPtr<T>& x, const std::vector<int>& lengths,
                         std::vector<std::size_t>* argmax_out) {
    const std::size_t b = x->shape[0], t_max = x->shape[1], d = x->shape[2];
    auto avg = g.masked_mean_time(x, lengths);
    auto masked = g.add_constant(x, pad_to_neg_inf<T>(b, t_max, d, lengths));
    auto mx = g.max(masked, 1);
    if (argmax_out) *argmax_out = mx.argmax;
    return g.concat_cols(avg, mx.value);
}

template <typename T>
TensorPtr<T> cnn_encode(Graph<T>& g, const ModelState<T>& state, const TensorPtr<T>& x,
                        const std::vector<int>& lengths) {
    const ModelSpec& spec = state.spec;
    const std::size_t b = x->shape[0], t_max = x->shape[1];
    const std::size_t pad = spec.context_size / 2;
    auto cols = g.im2col_time(x, spec.context_size, spec.stride, pad);
    auto act = g.relu(g.add_bias(g.matmul(cols, state.param("cnn.kernel")),
                                 state.param("cnn.bias")));
    const std::size_t windows = act->shape[0] / b;
    auto cube = g.reshape(act, {b, windows, spec.num_kernel});
    // a window is poolable iff it covers at least one real token
    std::vector<T> offs(b * windows * spec.num_kernel, T(0));
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t w = 0; w < windows; ++w) {
            const std::ptrdiff_t start =
                static_cast<std::ptrdiff_t>(w * spec.stride) - static_cast<std::ptrdiff_t>(pad);
            const bool valid = start < static_cast<std::ptrdiff_t>(lengths[i]) &&
                               start + static_cast<std::ptrdiff_t>(spec.context_size) > 0;
            if (!valid)
                std::fill_n(offs.begin() + static_cast<std::ptrdiff_t>(
                                               (i * windows + w) * spec.num_kernel),
                            spec.num_kernel, T(-1e30));
        }
    (void)t_max;
    return g.max(g.add_constant(cube, offs), 1).value;
}

// One LSTM direction; returns the hidden state at every timestep, indexed in
// original time order. Padded positions never update the state, so the last
// stored forward state equals the state at the last real token and the
// backward state at t=0 reads the whole document.
template <typename T>
std::vector<TensorPtr<T>> run_lstm_direction(Graph<T>& g, const ModelState<T>& state,
                                             const TensorPtr<T>& x,
                                             const std::vector<int>& lengths, bool reverse) {
    const std::size_t b = x->shape[0], t_max = x->shape[1];
    const std::size_t h = state.spec.hidden_state;
    const std::string prefix = reverse ? "lstm.bwd." : "lstm.fwd.";
    const auto& wx = state.param(prefix + "wx");
    const auto& wh = state.param(prefix + "wh");
    const auto& bias = state.param(prefix + "b");

    auto h_prev = g.constant({b, h}, std::vector<T>(b * h, T(0)));
    auto c_prev = h_prev;
    std::vector<TensorPtr<T>> hidden(t_max);
    for (std::size_t step = 0; step < t_max; ++step) {
        const std::size_t t = reverse ? t_max - 1 - step : step;
        auto x_t = g.slice_time(x, t);
        auto z = g.add_bias(g.add(g.matmul(x_t, wx), g.matmul(h_prev, wh)), bias);
        auto i_gate = g.sigmoid(g.slice_cols(z, 0, h));
        auto f_gate = g.sigmoid(g.slice_cols(z, h, 2 * h));
        auto g_cell = g.tanh_(g.slice_cols(z, 2 * h, 3 * h));
        auto o_gate = g.sigmoid(g.slice_cols(z, 3 * h, 4 * h));
        auto c_new = g.add(g.mul(f_gate, c_prev), g.mul(i_gate, g_cell));
        auto h_new = g.mul(o_gate, g.tanh_(c_new));

        std::vector<T> mask(b);
        for (std::size_t i = 0; i < b; ++i)
            mask[i] = t < static_cast<std::size_t>(lengths[i]) ? T(1) : T(0);
        c_prev = g.blend_rows(c_new, c_prev, mask);
        h_prev = g.blend_rows(h_new, h_prev, mask);
        hidden[t] = h_prev;
    }
    return hidden;
}

template <typename T>
TensorPtr<T> bilstm_encode(Graph<T>& g, const ModelState<T>& state, const TensorPtr<T>& x,
                           const std::vector<int>& lengths) {
    const std::size_t t_max = x->shape[1];
    auto fwd = run_lstm_direction(g, state, x, lengths, false);
    auto bwd = run_lstm_direction(g, state, x, lengths, true);
    return g.concat_cols(fwd[t_max - 1], bwd[0]);
}

template <typename T>
TensorPtr<T> bilstm_max_encode(Graph<T>& g, const ModelState<T>& state, const TensorPtr<T>& x,
                               const std::vector<int>& lengths,
                               std::vector<std::size_t>* argmax_out) {
    const std::size_t b = x->shape[0], t_max = x->shape[1];
    const std::size_t h = state.spec.hidden_state;
    auto fwd = run_lstm_direction(g, state, x, lengths, false);
    auto bwd = run_lstm_direction(g, state, x, lengths, true);
    std::vector<TensorPtr<T>> per_step(t_max);
    for (std::size_t t = 0; t < t_max; ++t) per_step[t] = g.concat_cols(fwd[t], bwd[t]);
    auto stacked = g.stack_time(per_step);  // [b, T, 2h]
    auto masked = g.add_constant(stacked, pad_to_neg_inf<T>(b, t_max, 2 * h, lengths));
    auto mx = g.max(masked, 1);
    if (argmax_out) *argmax_out = mx.argmax;
    return mx.value;
}

}  // namespace detail

template <typename T>
TensorPtr<T> embed(Graph<T>& g, const ModelState<T>& state, const corpus::DocumentBatch& batch) {
    return g.lookup(state.embedding, batch.token_ids, batch.batch, batch.t_max);
}

// Composition function + classifier from already-embedded input, so callers
// can perturb the embedding output before encoding.
template <typename T>
Forward<T> encode_classify(Graph<T>& g, const ModelState<T>& state, const TensorPtr<T>& x,
                           const std::vector<int>& lengths,
                           const DropoutMasks<T>* masks = nullptr) {
    check(x->shape.size() == 3 && x->shape[2] == state.spec.embedding_dim,
          "encode: want [b,T,", state.spec.embedding_dim, "], got ", shape_str(x->shape));
    check(lengths.size() == x->shape[0], "encode: ", lengths.size(), " lengths for batch ",
          x->shape[0]);
    for (std::size_t i = 0; i < lengths.size(); ++i)
        check(lengths[i] >= 1 && static_cast<std::size_t>(lengths[i]) <= x->shape[1],
              "encode: document ", i, " has invalid length ", lengths[i]);

    Forward<T> out;
    out.embedded = x;
    switch (state.spec.encoder) {
        case EncoderKind::SwemConcat:
            out.features = detail::swem_encode(g, x, lengths, nullptr);
            break;
        case EncoderKind::Cnn:
            out.features = detail::cnn_encode(g, state, x, lengths);
            break;
        case EncoderKind::Bilstm:
            out.features = detail::bilstm_encode(g, state, x, lengths);
            break;
        case EncoderKind::BilstmMax:
            out.features = detail::bilstm_max_encode(g, state, x, lengths, &out.argmax_timesteps);
            break;
    }

    check(out.features->shape[1] == state.spec.feature_dim(), "classify: feature width ",
          out.features->shape[1], " does not match classifier input ", state.spec.feature_dim());
    auto z = masks ? g.apply_mask(out.features, masks->after_encoder) : out.features;
    auto a1 = g.relu(g.add_bias(g.matmul(z, state.param("clf.w1")), state.param("clf.b1")));
    if (masks) a1 = g.apply_mask(a1, masks->hidden);
    out.logits = g.add_bias(g.matmul(a1, state.param("clf.w2")), state.param("clf.b2"));
    return out;
}

template <typename T>
Forward<T> forward(Graph<T>& g, const ModelState<T>& state, const corpus::DocumentBatch& batch,
                   const DropoutMasks<T>* masks = nullptr) {
    return encode_classify(g, state, embed(g, state, batch), batch.lengths, masks);
}

// Class distribution (softmax over logits); rows sum to 1.
template <typename T>
TensorPtr<T> classify(Graph<T>& g, const ModelState<T>& state, const corpus::DocumentBatch& batch,
                      const DropoutMasks<T>* masks = nullptr) {
    return g.softmax(forward(g, state, batch, masks).logits);
}

// Per-document counts of how many features take their max at each timestep.
// Only meaningful for the max-pooled BiLSTM.
template <typename T>
std::vector<std::vector<int>> timestep_histogram(const ModelState<T>& state,
                                                 const Forward<T>& fwd,
                                                 const std::vector<int>& lengths,
                                                 std::size_t t_max) {
    check(state.spec.encoder == EncoderKind::BilstmMax,
          "timestep_histogram: encoder must be bilstm_max, got ",
          encoder_name(state.spec.encoder));
    const std::size_t features = state.spec.feature_dim();
    const std::size_t b = lengths.size();
    check(fwd.argmax_timesteps.size() == b * features,
          "timestep_histogram: forward pass carries no argmax record");
    std::vector<std::vector<int>> counts(b, std::vector<int>(t_max, 0));
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < features; ++j)
            ++counts[i][fwd.argmax_timesteps[i * features + j]];
    return counts;
}

}  // namespace regtext::encoders
