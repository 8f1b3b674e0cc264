#pragma once

#include <cstdint>
#include <string>

#include "regtext/corpus/splits.hpp"
#include "regtext/corpus/synth.hpp"
#include "regtext/encoders/model.hpp"
#include "regtext/smoothing/regimes.hpp"
#include "regtext/trainer/trainer.hpp"

namespace regtext::cli {

// dataset.name is either "synthetic" (bundled generator, no files needed),
// one of the known corpus names (class counts verified against their
// published shapes), or "custom".
struct DatasetConfig {
    std::string name = "synthetic";
    std::string train_csv;
    std::string test_csv;
    int expected_classes = -1;
    corpus::SynthSpec synth;
};

struct EmbeddingConfig {
    std::string path;          // empty: random initialization
    std::size_t dim = 300;
    double init_range = 0.1;   // uniform range for runs without a pretrained file
    bool trainable = true;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    EmbeddingConfig embedding;
    corpus::SplitSpec split;
    encoders::ModelSpec model;
    smoothing::RegimeConfig regime;
    trainer::TrainHyper hyper;
    std::size_t t_cap = 400;
    int min_count = 1;
    std::string output_dir = "out";
    std::uint64_t seed = 0;
    int repeats = 1;
    int jobs = 1;
};

// Strict parse with field-path diagnostics; unknown keys are errors so typos
// cannot silently fall back to defaults.
ExperimentConfig parse_config_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Canonical defaults dump for --print-defaults.
std::string default_config_json();

// Serializes a config back to its JSON form.
std::string config_to_json(const ExperimentConfig& cfg);

// Relative data paths resolve under $REGTEXT_DATA_DIR when it is set.
std::string resolve_data_path(const std::string& path);

}  // namespace regtext::cli
