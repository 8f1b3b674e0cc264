#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "regtext/corpus/synth.hpp"
#include "regtext/corpus/tokenizer.hpp"
#include "regtext/corpus/vocab.hpp"
#include "regtext/trainer/adam.hpp"
#include "regtext/trainer/trainer.hpp"

using namespace regtext;
using namespace regtext::trainer;
using regtext::corpus::Vocabulary;

namespace {

// Tokenize + encode a synthetic corpus into trainer-ready streams, using the
// training documents themselves as validation (handy for train-accuracy
// assertions in these tests).
struct Prepared {
    Vocabulary vocab;
    TrainData data;
};

Prepared prepare(const corpus::SynthCorpus& corpus_data, std::size_t t_cap = 64) {
    Prepared p;
    std::vector<std::vector<std::string>> token_lists;
    for (const auto& d : corpus_data.train.docs) token_lists.push_back(corpus::tokenize(d.text));
    p.vocab = Vocabulary::build(token_lists, 1);
    for (std::size_t i = 0; i < token_lists.size(); ++i) {
        p.data.labeled_docs.push_back(corpus::encode_document(token_lists[i], p.vocab, t_cap));
        p.data.labeled_labels.push_back(corpus_data.train.docs[i].label);
    }
    p.data.validation_docs = p.data.labeled_docs;
    p.data.validation_labels = p.data.labeled_labels;
    for (const auto& d : corpus_data.test.docs) {
        p.data.test_docs.push_back(
            corpus::encode_document(corpus::tokenize(d.text), p.vocab, t_cap));
        p.data.test_labels.push_back(d.label);
    }
    return p;
}

encoders::ModelSpec small_spec(encoders::EncoderKind kind, int classes) {
    encoders::ModelSpec spec;
    spec.encoder = kind;
    spec.embedding_dim = 8;
    spec.hidden_state = 8;
    spec.num_kernel = 8;
    spec.context_size = 3;
    spec.stride = 1;
    spec.classifier_dim = 16;
    spec.dropout_rate = 0.0;
    spec.num_classes = classes;
    return spec;
}

EmbeddingFactory random_embedding(std::size_t vocab_size, std::size_t dim, double range = 0.1) {
    return [=](Rng& rng) {
        auto t = make_tensor<float>({vocab_size, dim});
        for (std::size_t i = dim; i < t->data.size(); ++i)  // row 0 stays zero
            t->data[i] = static_cast<float>(rng.uniform(-range, range));
        return t;
    };
}

// Multiclass perceptron on bag-of-token counts: converges iff the
// construction is linearly separable. Independent of the trainer.
bool perceptron_separates(const TrainData& data, std::size_t vocab_size, int classes) {
    std::vector<std::vector<double>> w(static_cast<std::size_t>(classes),
                                       std::vector<double>(vocab_size + 1, 0.0));
    auto predict = [&](const std::vector<double>& bag) {
        int best = 0;
        double best_score = -1e300;
        for (int c = 0; c < classes; ++c) {
            double s = 0;
            for (std::size_t j = 0; j < bag.size(); ++j)
                s += w[static_cast<std::size_t>(c)][j] * bag[j];
            if (s > best_score) {
                best_score = s;
                best = c;
            }
        }
        return best;
    };
    std::vector<std::vector<double>> bags;
    for (const auto& doc : data.labeled_docs) {
        std::vector<double> bag(vocab_size + 1, 0.0);
        bag[vocab_size] = 1.0;  // bias
        for (auto id : doc) bag[static_cast<std::size_t>(id)] += 1.0;
        bags.push_back(std::move(bag));
    }
    for (int epoch = 0; epoch < 200; ++epoch) {
        int mistakes = 0;
        for (std::size_t i = 0; i < bags.size(); ++i) {
            const int y = data.labeled_labels[i];
            const int pred = predict(bags[i]);
            if (pred != y) {
                ++mistakes;
                for (std::size_t j = 0; j < bags[i].size(); ++j) {
                    w[static_cast<std::size_t>(y)][j] += bags[i][j];
                    w[static_cast<std::size_t>(pred)][j] -= bags[i][j];
                }
            }
        }
        if (mistakes == 0) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("adam fixed point at zero gradient") {
    auto t = make_tensor<float>({3}, {1.0f, -2.0f, 0.5f});
    t->requires_grad = true;
    t->ensure_grad();
    Adam<float> opt(0.01);
    const auto before = t->data;
    opt.step({{"p", t}});
    CHECK(t->data == before);
}

TEST_CASE("adam first step matches the closed form") {
    // constant gradient g: m_hat = g, v_hat = g^2, so the first update is
    // -lr * g / (|g| + eps), approximately -lr * sign(g)
    const double g = 0.37, lr = 1e-3, eps = 1e-8;
    auto t = make_tensor<float>({1}, {2.0f});
    t->requires_grad = true;
    t->ensure_grad();
    t->grad[0] = static_cast<float>(g);
    Adam<float> opt(lr);
    opt.step({{"p", t}});
    const double expected = 2.0 - lr * g / (std::sqrt(g * g) + eps);
    CHECK(t->data[0] == doctest::Approx(expected).epsilon(1e-6));
    CHECK(t->grad[0] == 0.0f);  // grads zeroed after the step

    // and the step is close to -lr * sign(g)
    CHECK(std::abs((2.0 - t->data[0]) - lr) < lr * 1e-4);
}

TEST_CASE("adam is deterministic across identical trajectories") {
    auto t1 = make_tensor<float>({2}, {1.0f, -1.0f});
    auto t2 = make_tensor<float>({2}, {1.0f, -1.0f});
    for (auto& t : {t1, t2}) {
        t->requires_grad = true;
        t->ensure_grad();
    }
    Adam<float> o1(3e-4), o2(3e-4);
    Rng rng(5);
    for (int step = 0; step < 20; ++step) {
        const float g0 = static_cast<float>(rng.uniform(-1, 1));
        const float g1 = static_cast<float>(rng.uniform(-1, 1));
        t1->grad = {g0, g1};
        t2->grad = {g0, g1};
        o1.step({{"p", t1}});
        o2.step({{"p", t2}});
    }
    CHECK(t1->data == t2->data);
}

TEST_CASE("adam names the tensor missing its gradient") {
    auto t = make_tensor<float>({2}, {1.0f, 2.0f});
    t->requires_grad = true;  // grad never allocated
    Adam<float> opt(1e-3);
    CHECK_THROWS_WITH_AS(opt.step({{"clf.w1", t}}), doctest::Contains("clf.w1"), Error);
}

TEST_CASE("evaluate: uniform predictor and batch partition invariance") {
    // zero final layer -> uniform distribution -> argmax tie -> class 0
    auto spec = small_spec(encoders::EncoderKind::SwemConcat, 4);
    Rng er(3);
    auto emb = make_tensor<float>({10, spec.embedding_dim});
    for (auto& v : emb->data) v = static_cast<float>(er.uniform(-0.1, 0.1));
    Rng init(4);
    auto st = encoders::ModelState<float>::init(spec, emb, init);
    std::fill(st.params["clf.w2"]->data.begin(), st.params["clf.w2"]->data.end(), 0.0f);
    std::fill(st.params["clf.b2"]->data.begin(), st.params["clf.b2"]->data.end(), 0.0f);

    std::vector<std::vector<std::int32_t>> docs;
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) {
        docs.push_back({static_cast<std::int32_t>(2 + i % 8)});
        labels.push_back(i % 4);  // balanced
    }
    CHECK(evaluate(st, docs, labels, 7) == doctest::Approx(0.25));
    CHECK(evaluate(st, docs, labels, 1) == evaluate(st, docs, labels, 40));
}

TEST_CASE("supervised training separates a separable corpus") {
    corpus::SynthSpec synth;
    synth.num_classes = 2;
    synth.overlap = 0.0;  // disjoint token pools
    synth.class_tokens = 10;
    synth.train_docs = 20;
    synth.test_docs = 40;
    synth.doc_len_min = 4;
    synth.doc_len_max = 10;
    synth.seed = 7;
    auto corpus_data = corpus::generate_synth(synth);
    auto prep = prepare(corpus_data);

    // oracle: a linear model separates this construction
    REQUIRE(perceptron_separates(prep.data, prep.vocab.size(), 2));

    auto spec = small_spec(encoders::EncoderKind::SwemConcat, 2);
    smoothing::RegimeConfig regime;  // sup
    TrainHyper hyper;
    hyper.labeled_batch = 10;
    hyper.max_epochs = 50;
    hyper.patience = 50;
    hyper.learning_rate = 1e-2;
    auto result = train(spec, random_embedding(prep.vocab.size(), spec.embedding_dim), regime,
                        prep.data, hyper, 1);
    REQUIRE(!result.failed);
    CHECK(result.best_val_accuracy == doctest::Approx(1.0));  // validation == train set
    CHECK(result.epochs_run <= 50);

    // perfect predictor scores 1.0 on what it separates
    encoders::ModelState<float> best;
    auto result2 = train(spec, random_embedding(prep.vocab.size(), spec.embedding_dim), regime,
                         prep.data, hyper, 1, &best);
    CHECK(evaluate(best, prep.data.labeled_docs, prep.data.labeled_labels, 16) ==
          doctest::Approx(1.0));
}

TEST_CASE("training runs are bit-reproducible from the seed") {
    corpus::SynthSpec synth;
    synth.train_docs = 24;
    synth.test_docs = 24;
    synth.seed = 11;
    auto prep = prepare(corpus::generate_synth(synth));
    auto spec = small_spec(encoders::EncoderKind::SwemConcat, 2);
    spec.dropout_rate = 0.3;
    smoothing::RegimeConfig regime;
    TrainHyper hyper;
    hyper.labeled_batch = 8;
    hyper.max_epochs = 5;
    hyper.patience = 5;

    auto emb = random_embedding(prep.vocab.size(), spec.embedding_dim);
    auto r1 = train(spec, emb, regime, prep.data, hyper, 42);
    auto r2 = train(spec, emb, regime, prep.data, hyper, 42);
    REQUIRE(r1.epochs.size() == r2.epochs.size());
    for (std::size_t i = 0; i < r1.epochs.size(); ++i) {
        CHECK(r1.epochs[i].train_loss == r2.epochs[i].train_loss);
        CHECK(r1.epochs[i].val_accuracy == r2.epochs[i].val_accuracy);
    }
    CHECK(r1.test_accuracy_at_best == r2.test_accuracy_at_best);

    auto r3 = train(spec, emb, regime, prep.data, hyper, 43);
    bool any_diff = r3.epochs.size() != r1.epochs.size();
    for (std::size_t i = 0; !any_diff && i < r1.epochs.size(); ++i)
        any_diff = r3.epochs[i].train_loss != r1.epochs[i].train_loss;
    CHECK(any_diff);  // a different seed actually changes the trajectory
}

TEST_CASE("early stopping honors patience") {
    corpus::SynthSpec synth;
    synth.train_docs = 24;
    synth.test_docs = 24;
    synth.overlap = 0.6;
    synth.seed = 13;
    auto prep = prepare(corpus::generate_synth(synth));
    auto spec = small_spec(encoders::EncoderKind::SwemConcat, 2);
    smoothing::RegimeConfig regime;
    TrainHyper hyper;
    hyper.labeled_batch = 8;
    hyper.max_epochs = 40;
    hyper.patience = 0;
    auto result = train(spec, random_embedding(prep.vocab.size(), spec.embedding_dim), regime,
                        prep.data, hyper, 3);
    REQUIRE(!result.failed);

    // with patience 0, the run ends exactly one epoch after the first
    // non-improvement in the recorded curve
    double best = -1.0;
    int expected = static_cast<int>(result.epochs.size());
    for (std::size_t i = 0; i < result.epochs.size(); ++i) {
        if (result.epochs[i].val_accuracy > best) {
            best = result.epochs[i].val_accuracy;
        } else {
            expected = static_cast<int>(i) + 1;
            break;
        }
    }
    CHECK(result.epochs_run == expected);
    // early stopping reports the max over epochs, never a later worse value
    double curve_best = 0;
    for (const auto& e : result.epochs) curve_best = std::max(curve_best, e.val_accuracy);
    CHECK(result.best_val_accuracy == doctest::Approx(curve_best));
}

TEST_CASE("divergent training aborts and is marked failed") {
    corpus::SynthSpec synth;
    synth.train_docs = 16;
    synth.test_docs = 16;
    synth.seed = 17;
    auto prep = prepare(corpus::generate_synth(synth));
    auto spec = small_spec(encoders::EncoderKind::SwemConcat, 2);
    smoothing::RegimeConfig regime;
    TrainHyper hyper;
    hyper.labeled_batch = 8;
    hyper.max_epochs = 30;
    hyper.learning_rate = 1e18;  // guaranteed blow-up
    auto result = train(spec, random_embedding(prep.vocab.size(), spec.embedding_dim), regime,
                        prep.data, hyper, 5);
    CHECK(result.failed);
    CHECK(!result.failure.empty());
}

TEST_CASE("semi-supervised regimes run end to end") {
    corpus::SynthSpec synth;
    synth.train_docs = 30;
    synth.test_docs = 20;
    synth.seed = 19;
    auto corpus_data = corpus::generate_synth(synth);
    auto prep = prepare(corpus_data);
    // steal some labeled docs into the unlabeled stream
    for (int i = 0; i < 10; ++i) {
        prep.data.unlabeled_docs.push_back(prep.data.labeled_docs.back());
        prep.data.labeled_docs.pop_back();
        prep.data.labeled_labels.pop_back();
    }

    for (auto regime_kind : {smoothing::Regime::At, smoothing::Regime::Pi, smoothing::Regime::Vat,
                             smoothing::Regime::AtVat}) {
        CAPTURE(smoothing::regime_name(regime_kind));
        auto spec = small_spec(encoders::EncoderKind::SwemConcat, 2);
        spec.dropout_rate = 0.2;
        smoothing::RegimeConfig regime;
        regime.regime = regime_kind;
        regime.epsilon = 0.5;
        TrainHyper hyper;
        hyper.labeled_batch = 10;
        hyper.unlabeled_batch = 10;
        hyper.max_epochs = 3;
        hyper.patience = 3;
        auto result = train(spec, random_embedding(prep.vocab.size(), spec.embedding_dim),
                            regime, prep.data, hyper, 23);
        REQUIRE(!result.failed);
        CHECK(result.epochs_run == 3);
        for (const auto& e : result.epochs) CHECK(std::isfinite(e.train_loss));
    }
}

TEST_CASE("repeat_runs aggregates sample statistics") {
    // synthetic run_one: fixed accuracies 0.80 and 0.82
    auto run_one = [](std::uint64_t seed) {
        RunResult r;
        r.seed = seed;
        r.test_accuracy_at_best = seed % 2 == 0 ? 0.80 : 0.82;
        return r;
    };
    auto agg = repeat_runs(run_one, 2, 0, 2);
    CHECK(agg.mean == doctest::Approx(81.0));
    CHECK(agg.spread == doctest::Approx(2.0));
    CHECK(agg.stddev == doctest::Approx(std::sqrt(2.0)));  // sample std of {80, 82}

    // degenerate: identical runs have zero std
    auto constant = [](std::uint64_t seed) {
        RunResult r;
        r.seed = seed;
        r.test_accuracy_at_best = 0.5;
        return r;
    };
    auto agg2 = repeat_runs(constant, 4, 0, 2);
    CHECK(agg2.stddev == 0.0);
    CHECK(agg2.spread == 0.0);

    // failed runs are excluded and counted
    auto flaky = [](std::uint64_t seed) {
        RunResult r;
        r.seed = seed;
        r.failed = seed == 1;
        r.test_accuracy_at_best = 0.9;
        return r;
    };
    auto agg3 = repeat_runs(flaky, 3, 0, 3);
    CHECK(agg3.failed_runs == 1);
    CHECK(agg3.mean == doctest::Approx(90.0));

    CHECK_THROWS_AS(repeat_runs(run_one, 1, 0, 1), Error);
}
