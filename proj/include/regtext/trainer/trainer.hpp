#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "regtext/encoders/model.hpp"
#include "regtext/smoothing/regimes.hpp"

namespace regtext::trainer {

struct TrainHyper {
    std::size_t labeled_batch = 32;
    std::size_t unlabeled_batch = 128;
    std::size_t eval_batch = 256;
    int max_epochs = 100;
    int patience = 10;
    double learning_rate = 1e-3;
    bool train_embedding = true;
};

// Pre-encoded document streams; index encoding and split assembly happen
// upstream so repeated runs share the work.
struct TrainData {
    std::vector<std::vector<std::int32_t>> labeled_docs;
    std::vector<int> labeled_labels;
    std::vector<std::vector<std::int32_t>> unlabeled_docs;
    std::vector<std::vector<std::int32_t>> validation_docs;
    std::vector<int> validation_labels;
    std::vector<std::vector<std::int32_t>> test_docs;
    std::vector<int> test_labels;
};

struct EpochStats {
    double train_loss = 0.0;
    double val_accuracy = 0.0;
};

struct RunResult {
    std::vector<EpochStats> epochs;
    double best_val_accuracy = 0.0;
    double test_accuracy_at_best = 0.0;  // measured with the best-val checkpoint
    int epochs_run = 0;
    std::uint64_t seed = 0;
    std::string regime;
    double wall_clock_sec = 0.0;
    bool failed = false;
    std::string failure;
    std::string warning;
};

// Sample statistics (n-1 denominator) of test accuracy over repeated runs.
struct AggregateResult {
    std::vector<RunResult> runs;
    double mean = 0.0;
    double stddev = 0.0;
    double spread = 0.0;  // max - min
    int failed_runs = 0;
};

// Builds the trainable embedding table for one run; called with the run's
// init stream so out-of-vocabulary draws derive from the run seed.
using EmbeddingFactory = std::function<TensorPtr<float>(Rng&)>;

// Argmax accuracy with dropout disabled; ties resolve to the lowest class.
// The result does not depend on how the documents are batched.
double evaluate(const encoders::ModelState<float>& state,
                const std::vector<std::vector<std::int32_t>>& docs,
                const std::vector<int>& labels, std::size_t batch_size);

// One optimization run: per epoch, paired labeled/unlabeled batches feed the
// regime objective, Adam updates, validation decides the checkpoint to keep,
// and early stopping halts after `patience` epochs without improvement.
// A divergent (non-finite) loss aborts the run and marks it failed.
RunResult train(const encoders::ModelSpec& spec, const EmbeddingFactory& make_embedding,
                const smoothing::RegimeConfig& regime, const TrainData& data,
                const TrainHyper& hyper, std::uint64_t seed,
                encoders::ModelState<float>* best_state_out = nullptr);

// Runs `n` seeds (base_seed .. base_seed+n-1) across a bounded worker pool
// and aggregates test accuracy. Failed runs are recorded and excluded.
AggregateResult repeat_runs(const std::function<RunResult(std::uint64_t)>& run_one, int n,
                            std::uint64_t base_seed, int jobs);

}  // namespace regtext::trainer
