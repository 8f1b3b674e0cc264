#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "regtext/corpus/batch.hpp"
#include "regtext/corpus/vocab.hpp"
#include "regtext/encoders/model.hpp"
#include "regtext/error.hpp"
#include "regtext/graph.hpp"
#include "regtext/rng.hpp"

namespace regtext::smoothing {

enum class Regime { Sup, At, Pi, Vat, AtVat };

inline const char* regime_name(Regime r) {
    switch (r) {
        case Regime::Sup: return "sup";
        case Regime::At: return "at";
        case Regime::Pi: return "pi";
        case Regime::Vat: return "vat";
        case Regime::AtVat: return "at_vat";
    }
    return "?";
}

inline Regime regime_from_name(const std::string& name) {
    if (name == "sup") return Regime::Sup;
    if (name == "at") return Regime::At;
    if (name == "pi") return Regime::Pi;
    if (name == "vat") return Regime::Vat;
    if (name == "at_vat") return Regime::AtVat;
    fail("unknown regime '", name, "' (want sup|at|pi|vat|at_vat)");
}

// All perturbations act in embedding space; epsilon is an L2 radius there.
struct RegimeConfig {
    Regime regime = Regime::Sup;
    double epsilon = 2.0;           // perturbation radius
    double alpha = 0.5;             // AT mix between clean and adversarial loss
    double xi = 0.1;                // finite-difference probe size
    int power_iterations = 1;
    double lambda_consistency = 1.0;  // weight of the MSE/KLD term
    double lambda_entropy = 1.0;      // weight of the entropy term
    double unk_rate = 0.1;            // Pi text perturbation: unknown substitution
    double swap_rate = 0.1;           // Pi text perturbation: adjacent swaps

    void validate() const {
        if (regime == Regime::At || regime == Regime::Vat || regime == Regime::AtVat)
            check(epsilon > 0.0 || epsilon == 0.0, "regime: epsilon must be >= 0");
        check(alpha >= 0.0 && alpha <= 1.0, "regime: alpha ", alpha, " outside [0,1]");
        check(xi > 0.0, "regime: xi must be positive");
        check(power_iterations >= 1, "regime: power_iterations must be >= 1");
        check(unk_rate >= 0.0 && unk_rate <= 1.0, "regime: unk_rate ", unk_rate, " outside [0,1]");
        check(swap_rate >= 0.0 && swap_rate <= 1.0, "regime: swap_rate ", swap_rate,
              " outside [0,1]");
    }
};

// A fully built (but not yet backpropagated) training objective. The graph
// owns every node referenced by `loss`; callers run graph->backward(loss)
// and then step the optimizer. Any probe passes used to construct constant
// perturbations have already been cleaned out of the parameter grads.
template <typename T>
struct LossBuild {
    std::unique_ptr<Graph<T>> graph;
    TensorPtr<T> loss;
    T supervised_value = T(0);
    T entropy_value = T(0);
    T consistency_value = T(0);
    std::vector<T> eta;     // AT perturbation, flattened [b,T,d]; empty otherwise
    std::vector<T> r_vadv;  // VAT perturbation; empty otherwise
    Shape perturbation_shape;
    std::string warning;
};

// Text-level perturbation for the Pi model: per real-token position, replace
// with the unknown index with prob unk_rate; then swap each adjacent
// real-token pair with prob swap_rate. Padding and lengths are untouched.
inline corpus::DocumentBatch text_perturb(const corpus::DocumentBatch& batch,
                                          double unk_rate, double swap_rate, Rng& rng) {
    check(unk_rate >= 0.0 && unk_rate <= 1.0, "text_perturb: unk_rate outside [0,1]");
    check(swap_rate >= 0.0 && swap_rate <= 1.0, "text_perturb: swap_rate outside [0,1]");
    corpus::DocumentBatch out = batch;
    for (std::size_t i = 0; i < out.batch; ++i) {
        const std::size_t len = static_cast<std::size_t>(out.lengths[i]);
        auto* row = out.token_ids.data() + i * out.t_max;
        for (std::size_t t = 0; t < len; ++t)
            if (rng.uniform() < unk_rate) row[t] = corpus::Vocabulary::kUnk;
        for (std::size_t t = 0; t + 1 < len; ++t)
            if (rng.uniform() < swap_rate) std::swap(row[t], row[t + 1]);
    }
    return out;
}

namespace detail {

// Per-example L2 normalization of a raw buffer shaped [b, stride], scaled to
// radius epsilon. All-zero examples stay zero.
template <typename T>
void normalize_to_radius(std::vector<T>& v, std::size_t b, double epsilon) {
    const std::size_t stride = b ? v.size() / b : 0;
    for (std::size_t i = 0; i < b; ++i) {
        T* row = v.data() + i * stride;
        l2_normalize_inplace(row, stride);
        for (std::size_t j = 0; j < stride; ++j) row[j] = static_cast<T>(row[j] * epsilon);
    }
}

// Gradient of the classification loss at the embedding input, normalized to
// radius epsilon. Parameter grads touched by the probe are zeroed.
template <typename T>
std::vector<T> adversarial_direction(encoders::ModelState<T>& state,
                                     const corpus::DocumentBatch& batch,
                                     const encoders::DropoutMasks<T>& masks,
                                     const RegimeConfig& cfg) {
    Graph<T> probe;
    auto x = encoders::embed(probe, state, batch);
    auto fwd = encoders::encode_classify(probe, state, x, batch.lengths, &masks);
    probe.backward(probe.softmax_cross_entropy(fwd.logits, batch.labels));
    std::vector<T> eta = x->grad;
    state.zero_grads();
    normalize_to_radius(eta, batch.batch, cfg.epsilon);
    return eta;
}

}  // namespace detail

// Builds a scalar divergence node from a perturbation leaf; injected so the
// power-method loop can be driven by the real model or by a synthetic
// curvature surface in tests.
template <typename T>
using DivergenceBuilder = std::function<TensorPtr<T>(Graph<T>&, const TensorPtr<T>&)>;

// Power-method construction of the virtual adversarial perturbation:
// start from normalized Gaussian noise, repeatedly take the gradient of the
// divergence at a xi-sized probe and renormalize, then scale to epsilon.
// If an iteration produces an all-zero gradient for an example, that
// example keeps its previous direction.
template <typename T>
std::vector<T> gen_vadv(const Shape& r_shape, const DivergenceBuilder<T>& divergence,
                        const RegimeConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t n = shape_numel(r_shape);
    const std::size_t b = r_shape.at(0);
    const std::size_t stride = n / b;

    std::vector<T> r(n);
    for (auto& v : r) v = static_cast<T>(rng.gaussian());
    for (std::size_t i = 0; i < b; ++i) l2_normalize_inplace(r.data() + i * stride, stride);

    for (int it = 0; it < cfg.power_iterations; ++it) {
        Graph<T> g;
        auto r_leaf = g.leaf(r_shape, r, true);
        auto div = divergence(g, r_leaf);
        g.backward(div);
        for (std::size_t i = 0; i < b; ++i) {
            const T* grad = r_leaf->grad.data() + i * stride;
            if (l2_norm(grad, stride) <= 1e-12) continue;  // degenerate: keep direction
            std::copy_n(grad, stride, r.data() + i * stride);
            l2_normalize_inplace(r.data() + i * stride, stride);
        }
    }
    for (auto& v : r) v = static_cast<T>(v * cfg.epsilon);
    return r;
}

// Plain cross-entropy objective; the baseline every other regime reduces to.
template <typename T>
LossBuild<T> supervised_loss(encoders::ModelState<T>& state, const corpus::DocumentBatch& batch,
                             const RegimeConfig& cfg, Rng& rng) {
    cfg.validate();
    check(batch.labeled(), "supervised_loss: batch carries no labels");
    auto masks = encoders::DropoutMasks<T>::draw(state.spec, batch.batch, rng);
    LossBuild<T> out;
    out.graph = std::make_unique<Graph<T>>();
    auto& g = *out.graph;
    auto fwd = encoders::forward(g, state, batch, &masks);
    out.loss = g.softmax_cross_entropy(fwd.logits, batch.labels);
    out.supervised_value = out.loss->data[0];
    return out;
}

// Weighted sum of the classification loss at the clean input and at the
// input shifted by the epsilon-scaled loss-gradient direction. The
// perturbation is constant: no gradient flows through its construction, and
// both forward passes share one set of dropout masks.
template <typename T>
LossBuild<T> adversarial_loss(encoders::ModelState<T>& state, const corpus::DocumentBatch& batch,
                              const RegimeConfig& cfg, Rng& rng) {
    cfg.validate();
    check(cfg.regime == Regime::At || cfg.regime == Regime::AtVat,
          "adversarial_loss: regime is ", regime_name(cfg.regime), ", want at or at_vat");
    check(batch.labeled(), "adversarial_loss: batch carries no labels");

    auto masks = encoders::DropoutMasks<T>::draw(state.spec, batch.batch, rng);
    auto eta = detail::adversarial_direction(state, batch, masks, cfg);

    LossBuild<T> out;
    out.graph = std::make_unique<Graph<T>>();
    auto& g = *out.graph;
    auto x = encoders::embed(g, state, batch);
    auto clean = encoders::encode_classify(g, state, x, batch.lengths, &masks);
    auto j_clean = g.softmax_cross_entropy(clean.logits, batch.labels);
    auto x_adv = g.add_constant(x, eta);
    auto adv = encoders::encode_classify(g, state, x_adv, batch.lengths, &masks);
    auto j_adv = g.softmax_cross_entropy(adv.logits, batch.labels);
    out.loss = g.add(g.scale(j_clean, static_cast<T>(cfg.alpha)),
                     g.scale(j_adv, static_cast<T>(1.0 - cfg.alpha)));
    out.supervised_value = j_clean->data[0];
    out.eta = std::move(eta);
    out.perturbation_shape = x->shape;
    return out;
}

// Pi model: supervised loss, entropy of the clean unlabeled prediction, and
// an MSE consistency term between two stochastic forward passes that differ
// in dropout masks and in text perturbation.
template <typename T>
LossBuild<T> pi_loss(encoders::ModelState<T>& state, const corpus::DocumentBatch& batch_l,
                     const corpus::DocumentBatch& batch_ul, const RegimeConfig& cfg, Rng& rng) {
    cfg.validate();
    check(cfg.regime == Regime::Pi, "pi_loss: regime is ", regime_name(cfg.regime));
    check(batch_l.labeled(), "pi_loss: labeled batch carries no labels");
    check(!batch_ul.labeled(), "pi_loss: unlabeled batch must not carry labels");

    auto masks_l = encoders::DropoutMasks<T>::draw(state.spec, batch_l.batch, rng);

    LossBuild<T> out;
    out.graph = std::make_unique<Graph<T>>();
    auto& g = *out.graph;
    auto fwd_l = encoders::forward(g, state, batch_l, &masks_l);
    auto j = g.softmax_cross_entropy(fwd_l.logits, batch_l.labels);
    out.supervised_value = j->data[0];

    if (batch_ul.batch == 0) {
        out.warning = "pi_loss: empty unlabeled batch, degrading to supervised loss";
        out.loss = j;
        return out;
    }

    auto masks_h = encoders::DropoutMasks<T>::draw(state.spec, batch_ul.batch, rng);
    auto p_clean = g.softmax(encoders::forward(g, state, batch_ul, &masks_h).logits);
    auto h = g.entropy(p_clean);
    out.entropy_value = h->data[0];

    auto branch = [&](corpus::DocumentBatch&& perturbed) {
        auto masks = encoders::DropoutMasks<T>::draw(state.spec, batch_ul.batch, rng);
        return g.softmax(encoders::forward(g, state, perturbed, &masks).logits);
    };
    auto p1 = branch(text_perturb(batch_ul, cfg.unk_rate, cfg.swap_rate, rng));
    auto p2 = branch(text_perturb(batch_ul, cfg.unk_rate, cfg.swap_rate, rng));
    auto consistency = g.mse(p1, p2);
    out.consistency_value = consistency->data[0];

    out.loss = g.add(g.add(j, g.scale(h, static_cast<T>(cfg.lambda_entropy))),
                     g.scale(consistency, static_cast<T>(cfg.lambda_consistency)));
    return out;
}

// Virtual adversarial training: supervised loss, entropy of the clean
// unlabeled prediction, and a KLD term against the prediction at the
// virtual-adversarial perturbation. Under at_vat the supervised term is the
// adversarial objective instead. The clean distribution enters the KLD as a
// constant; gradient flows only through the perturbed branch.
template <typename T>
LossBuild<T> vat_loss(encoders::ModelState<T>& state, const corpus::DocumentBatch& batch_l,
                      const corpus::DocumentBatch& batch_ul, const RegimeConfig& cfg, Rng& rng) {
    cfg.validate();
    check(cfg.regime == Regime::Vat || cfg.regime == Regime::AtVat, "vat_loss: regime is ",
          regime_name(cfg.regime), ", want vat or at_vat");
    check(batch_l.labeled(), "vat_loss: labeled batch carries no labels");
    check(!batch_ul.labeled(), "vat_loss: unlabeled batch must not carry labels");

    const bool with_at = cfg.regime == Regime::AtVat;
    auto masks_l = encoders::DropoutMasks<T>::draw(state.spec, batch_l.batch, rng);
    std::vector<T> eta;
    if (with_at) eta = detail::adversarial_direction(state, batch_l, masks_l, cfg);

    LossBuild<T> out;
    out.graph = std::make_unique<Graph<T>>();
    auto& g = *out.graph;

    // labeled term
    auto x_l = encoders::embed(g, state, batch_l);
    auto clean_l = encoders::encode_classify(g, state, x_l, batch_l.lengths, &masks_l);
    auto j_clean = g.softmax_cross_entropy(clean_l.logits, batch_l.labels);
    TensorPtr<T> labeled_term = j_clean;
    if (with_at) {
        auto x_adv = g.add_constant(x_l, eta);
        auto adv = encoders::encode_classify(g, state, x_adv, batch_l.lengths, &masks_l);
        auto j_adv = g.softmax_cross_entropy(adv.logits, batch_l.labels);
        labeled_term = g.add(g.scale(j_clean, static_cast<T>(cfg.alpha)),
                             g.scale(j_adv, static_cast<T>(1.0 - cfg.alpha)));
        out.eta = std::move(eta);
    }
    out.supervised_value = j_clean->data[0];

    if (batch_ul.batch == 0) {
        out.warning = "vat_loss: empty unlabeled batch, degrading to the labeled term";
        out.loss = labeled_term;
        return out;
    }

    auto masks_ul = encoders::DropoutMasks<T>::draw(state.spec, batch_ul.batch, rng);

    // clean unlabeled distribution, captured as constant values
    std::vector<T> p_clean_values;
    {
        Graph<T> probe(false);
        auto p = probe.softmax(encoders::forward(probe, state, batch_ul, &masks_ul).logits);
        p_clean_values = p->data;
    }

    const Shape r_shape{batch_ul.batch, batch_ul.t_max, state.spec.embedding_dim};
    auto divergence = [&](Graph<T>& gg, const TensorPtr<T>& r_leaf) {
        auto x_ul = encoders::embed(gg, state, batch_ul);
        auto x_probe = gg.add(x_ul, gg.scale(r_leaf, static_cast<T>(cfg.xi)));
        auto p_probe =
            gg.softmax(encoders::encode_classify(gg, state, x_probe, batch_ul.lengths, &masks_ul)
                           .logits);
        auto p_const = gg.constant({batch_ul.batch, static_cast<std::size_t>(state.spec.num_classes)},
                                   p_clean_values);
        return gg.kld(p_const, p_probe);
    };
    auto r_vadv = gen_vadv<T>(r_shape, divergence, cfg, rng);
    state.zero_grads();  // the power iterations polluted parameter grads

    // final unlabeled terms
    auto x_ul = encoders::embed(g, state, batch_ul);
    auto p_ul = g.softmax(encoders::encode_classify(g, state, x_ul, batch_ul.lengths, &masks_ul)
                              .logits);
    auto h = g.entropy(p_ul);
    out.entropy_value = h->data[0];

    auto x_adv_ul = g.add_constant(x_ul, r_vadv);
    auto p_adv =
        g.softmax(encoders::encode_classify(g, state, x_adv_ul, batch_ul.lengths, &masks_ul)
                      .logits);
    auto kl = g.kld(g.detach(p_ul), p_adv);
    out.consistency_value = kl->data[0];

    out.loss = g.add(g.add(labeled_term, g.scale(h, static_cast<T>(cfg.lambda_entropy))),
                     g.scale(kl, static_cast<T>(cfg.lambda_consistency)));
    out.r_vadv = std::move(r_vadv);
    out.perturbation_shape = r_shape;
    return out;
}

// Regime dispatcher used by the trainer. batch_ul is ignored by supervised
// regimes and may be empty (with a warning) for the semi-supervised ones.
template <typename T>
LossBuild<T> build_regime_loss(encoders::ModelState<T>& state,
                               const corpus::DocumentBatch& batch_l,
                               const corpus::DocumentBatch& batch_ul, const RegimeConfig& cfg,
                               Rng& rng) {
    switch (cfg.regime) {
        case Regime::Sup: return supervised_loss(state, batch_l, cfg, rng);
        case Regime::At: return adversarial_loss(state, batch_l, cfg, rng);
        case Regime::Pi: return pi_loss(state, batch_l, batch_ul, cfg, rng);
        case Regime::Vat:
        case Regime::AtVat: return vat_loss(state, batch_l, batch_ul, cfg, rng);
    }
    fail("build_regime_loss: unhandled regime");
}

}  // namespace regtext::smoothing
