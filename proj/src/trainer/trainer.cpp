#include "regtext/trainer/trainer.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

#include "regtext/corpus/batch.hpp"
#include "regtext/trainer/adam.hpp"

namespace regtext::trainer {

namespace {

corpus::DocumentBatch assemble_eval_batch(const std::vector<std::vector<std::int32_t>>& docs,
                                          const std::vector<int>& labels, std::size_t lo,
                                          std::size_t hi) {
    corpus::DocumentBatch b;
    b.batch = hi - lo;
    for (std::size_t i = lo; i < hi; ++i) b.t_max = std::max(b.t_max, docs[i].size());
    b.token_ids.assign(b.batch * b.t_max, corpus::Vocabulary::kPad);
    b.lengths.resize(b.batch);
    b.labels.resize(b.batch);
    for (std::size_t i = lo; i < hi; ++i) {
        const std::size_t row = i - lo;
        std::copy(docs[i].begin(), docs[i].end(),
                  b.token_ids.begin() + static_cast<std::ptrdiff_t>(row * b.t_max));
        b.lengths[row] = static_cast<int>(docs[i].size());
        b.labels[row] = labels[i];
    }
    return b;
}

bool regime_uses_unlabeled(smoothing::Regime r) {
    return r == smoothing::Regime::Pi || r == smoothing::Regime::Vat ||
           r == smoothing::Regime::AtVat;
}

}  // namespace

double evaluate(const encoders::ModelState<float>& state,
                const std::vector<std::vector<std::int32_t>>& docs,
                const std::vector<int>& labels, std::size_t batch_size) {
    check(docs.size() == labels.size(), "evaluate: ", docs.size(), " documents vs ",
          labels.size(), " labels");
    check(batch_size >= 1, "evaluate: batch_size must be >= 1");
    if (docs.empty()) return 0.0;
    std::size_t correct = 0;
    const int k = state.spec.num_classes;
    for (std::size_t lo = 0; lo < docs.size(); lo += batch_size) {
        const std::size_t hi = std::min(lo + batch_size, docs.size());
        auto batch = assemble_eval_batch(docs, labels, lo, hi);
        Graph<float> g(false);
        auto fwd = encoders::forward(g, state, batch);
        for (std::size_t i = 0; i < batch.batch; ++i) {
            const float* row = fwd.logits->data.data() + i * static_cast<std::size_t>(k);
            int best = 0;
            for (int j = 1; j < k; ++j)
                if (row[j] > row[best]) best = j;  // tie -> lowest class
            if (best == batch.labels[i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(docs.size());
}

RunResult train(const encoders::ModelSpec& spec, const EmbeddingFactory& make_embedding,
                const smoothing::RegimeConfig& regime, const TrainData& data,
                const TrainHyper& hyper, std::uint64_t seed,
                encoders::ModelState<float>* best_state_out) {
    const auto t0 = std::chrono::steady_clock::now();
    RunResult result;
    result.seed = seed;
    result.regime = smoothing::regime_name(regime.regime);

    check(!data.labeled_docs.empty(), "train: no labeled documents");
    check(data.labeled_docs.size() == data.labeled_labels.size(),
          "train: labeled docs/labels size mismatch");

    Rng root(seed);
    Rng init_rng = root.fork(0);
    Rng shuffle_rng = root.fork(1);
    Rng loss_rng = root.fork(2);
    Rng ul_rng = root.fork(3);

    auto state = encoders::ModelState<float>::init(spec, make_embedding(init_rng), init_rng);
    state.train_embedding = hyper.train_embedding;
    Adam<float> opt(hyper.learning_rate);

    corpus::BatchStream labeled(data.labeled_docs, data.labeled_labels, hyper.labeled_batch);
    corpus::BatchStream unlabeled(data.unlabeled_docs, {}, hyper.unlabeled_batch);
    const bool wants_unlabeled = regime_uses_unlabeled(regime.regime);

    auto best = state.clone();
    double best_val = -1.0;
    int epochs_since_best = 0;

    for (int epoch = 0; epoch < hyper.max_epochs; ++epoch) {
        labeled.start_epoch(shuffle_rng);
        double loss_sum = 0.0;
        std::size_t steps = 0;
        while (auto batch = labeled.next()) {
            corpus::DocumentBatch ul;
            if (wants_unlabeled && unlabeled.size() > 0) ul = unlabeled.next_cycling(ul_rng);
            auto built = smoothing::build_regime_loss(state, *batch, ul, regime, loss_rng);
            if (!built.warning.empty() && result.warning.empty()) result.warning = built.warning;
            const double loss_value = static_cast<double>(built.loss->data[0]);
            if (!std::isfinite(loss_value)) {
                result.failed = true;
                result.failure = "non-finite loss at epoch " + std::to_string(epoch + 1) +
                                 ", step " + std::to_string(steps + 1);
                result.wall_clock_sec =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                return result;
            }
            built.graph->backward(built.loss);
            state.freeze_pad_row();
            opt.step(state.trainables());
            loss_sum += loss_value;
            ++steps;
        }
        const double val_acc =
            evaluate(state, data.validation_docs, data.validation_labels, hyper.eval_batch);
        result.epochs.push_back({loss_sum / static_cast<double>(steps), val_acc});
        result.epochs_run = epoch + 1;

        if (val_acc > best_val) {
            best_val = val_acc;
            best = state.clone();
            epochs_since_best = 0;
        } else if (++epochs_since_best > hyper.patience) {
            break;
        }
    }

    result.best_val_accuracy = best_val;
    result.test_accuracy_at_best = evaluate(best, data.test_docs, data.test_labels,
                                            hyper.eval_batch);
    result.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (best_state_out) *best_state_out = std::move(best);
    return result;
}

AggregateResult repeat_runs(const std::function<RunResult(std::uint64_t)>& run_one, int n,
                            std::uint64_t base_seed, int jobs) {
    check(n >= 2, "repeat_runs: need at least 2 runs, got ", n);
    AggregateResult agg;
    agg.runs.resize(static_cast<std::size_t>(n));

    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n) return;
            agg.runs[static_cast<std::size_t>(i)] =
                run_one(base_seed + static_cast<std::uint64_t>(i));
        }
    };
    const int pool = std::max(1, std::min(jobs, n));
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(pool));
    for (int i = 0; i < pool; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();

    double sum = 0.0;
    double lo = 1e300, hi = -1e300;
    int ok = 0;
    for (const auto& r : agg.runs) {
        if (r.failed) {
            ++agg.failed_runs;
            continue;
        }
        const double acc = r.test_accuracy_at_best * 100.0;
        sum += acc;
        lo = std::min(lo, acc);
        hi = std::max(hi, acc);
        ++ok;
    }
    if (ok > 0) {
        agg.mean = sum / ok;
        double ss = 0.0;
        for (const auto& r : agg.runs) {
            if (r.failed) continue;
            const double d = r.test_accuracy_at_best * 100.0 - agg.mean;
            ss += d * d;
        }
        agg.stddev = ok > 1 ? std::sqrt(ss / (ok - 1)) : 0.0;
        agg.spread = hi - lo;
    }
    return agg;
}

}  // namespace regtext::trainer
