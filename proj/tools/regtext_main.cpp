#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "regtext/expcli/commands.hpp"
#include "regtext/error.hpp"

using namespace regtext;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int jobs = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config JSON");
    cmd->add_option("--out", args.out_dir, "output directory (overrides config)");
    cmd->add_option("--seed", args.seed, "run seed (overrides config)")
        ->each([&](const std::string&) { args.seed_set = true; });
    cmd->add_option("--jobs", args.jobs, "worker count for repeated runs / grid cells");
}

cli::ExperimentConfig load_with_overrides(const CommonArgs& args) {
    check(!args.config_path.empty(), "missing --config PATH");
    auto cfg = cli::load_config(args.config_path);
    if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
    if (args.seed_set) cfg.seed = args.seed;
    if (args.jobs > 0) cfg.jobs = args.jobs;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"small-text-classifier regularization experiments"};
    app.require_subcommand(1);

    CommonArgs run_args, grid_args, hist_args, splits_args;
    bool print_defaults = false;
    std::string grid_path;
    std::string checkpoint_path;
    std::size_t hist_batch = 128;

    auto* run_cmd = app.add_subcommand("run", "train with one config (single or repeated runs)");
    add_common(run_cmd, run_args);
    run_cmd->add_flag("--print-defaults", print_defaults, "print the default config and exit");

    auto* grid_cmd = app.add_subcommand("grid", "run a cartesian experiment grid");
    add_common(grid_cmd, grid_args);
    grid_cmd->add_option("--grid", grid_path, "grid spec JSON (dimensions to sweep)");

    auto* hist_cmd =
        app.add_subcommand("histogram", "timestep-contribution histogram of a bilstm_max model");
    add_common(hist_cmd, hist_args);
    hist_cmd->add_option("--checkpoint", checkpoint_path, "trained model checkpoint")
        ->required();
    hist_cmd->add_option("--batch", hist_batch, "minibatch size (default 128)");

    auto* splits_cmd = app.add_subcommand("splits", "materialize the split manifest, no training");
    add_common(splits_cmd, splits_args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) {
            if (print_defaults) {
                std::cout << cli::default_config_json() << "\n";
                return 0;
            }
            return cli::cmd_run(load_with_overrides(run_args));
        }
        if (grid_cmd->parsed()) {
            auto cfg = load_with_overrides(grid_args);
            auto grid = grid_path.empty() ? cli::GridSpec{} : cli::load_grid(grid_path);
            return cli::cmd_grid(cfg, grid);
        }
        if (hist_cmd->parsed())
            return cli::cmd_histogram(load_with_overrides(hist_args), checkpoint_path,
                                      hist_batch);
        if (splits_cmd->parsed()) return cli::cmd_splits(load_with_overrides(splits_args));
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
