#pragma once

#include <string>
#include <vector>

#include "regtext/expcli/config.hpp"

namespace regtext::cli {

// Grid dimensions; an absent dimension is a singleton taken from the base
// config. Supervised regimes ignore the multiplier axis.
struct GridSpec {
    std::vector<std::string> regimes;
    std::vector<std::string> encoders;
    std::vector<int> multipliers;
    std::vector<double> dropouts;
    std::vector<double> learning_rates;
};

GridSpec parse_grid_json(const std::string& text);
GridSpec load_grid(const std::string& path);

// All commands throw regtext::Error on configuration/data problems; the CLI
// maps that to exit code 2. A return of 1 reports failed runs.
int cmd_run(const ExperimentConfig& cfg);
int cmd_grid(const ExperimentConfig& cfg, const GridSpec& grid);
int cmd_histogram(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                  std::size_t batch_size);
int cmd_splits(const ExperimentConfig& cfg);

}  // namespace regtext::cli
