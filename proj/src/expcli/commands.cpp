#include "regtext/expcli/commands.hpp"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <set>
#include <thread>

#include "regtext/corpus/dataset.hpp"
#include "regtext/corpus/embedding.hpp"
#include "regtext/corpus/tokenizer.hpp"
#include "regtext/encoders/checkpoint.hpp"
#include "regtext/error.hpp"

namespace regtext::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// ---- corpus assembly ------------------------------------------------------

struct CorpusCache {
    corpus::LabeledDataset train;
    corpus::LabeledDataset test;
    std::vector<std::vector<std::string>> train_tokens;
    std::vector<std::vector<std::string>> test_tokens;
};

CorpusCache load_corpus(const ExperimentConfig& cfg) {
    CorpusCache cache;
    if (cfg.dataset.name == "synthetic") {
        auto synth = corpus::generate_synth(cfg.dataset.synth);
        cache.train = std::move(synth.train);
        cache.test = std::move(synth.test);
    } else {
        const auto train_path = resolve_data_path(cfg.dataset.train_csv);
        const auto test_path = resolve_data_path(cfg.dataset.test_csv);
        cache.train = corpus::load_dataset_csv(train_path, cfg.dataset.expected_classes);
        cache.test = corpus::load_dataset_csv(test_path, cfg.dataset.expected_classes);
    }
    cache.train_tokens.reserve(cache.train.docs.size());
    for (const auto& d : cache.train.docs) cache.train_tokens.push_back(corpus::tokenize(d.text));
    cache.test_tokens.reserve(cache.test.docs.size());
    for (const auto& d : cache.test.docs) cache.test_tokens.push_back(corpus::tokenize(d.text));
    return cache;
}

struct Workbench {
    corpus::Splits splits;
    corpus::Vocabulary vocab;
    trainer::TrainData data;
    trainer::EmbeddingFactory embedding;
};

// Splits, a vocabulary built from labeled + unlabeled training text only,
// encoded document streams, and the per-run embedding factory.
Workbench assemble(const ExperimentConfig& cfg, const CorpusCache& cache) {
    Workbench wb;
    wb.splits = corpus::make_splits(cache.train, cache.test, cfg.split);

    std::vector<std::vector<std::string>> vocab_corpus;
    vocab_corpus.reserve(wb.splits.labeled.size() + wb.splits.unlabeled.size());
    for (auto i : wb.splits.labeled) vocab_corpus.push_back(cache.train_tokens[i]);
    for (auto i : wb.splits.unlabeled) vocab_corpus.push_back(cache.train_tokens[i]);
    wb.vocab = corpus::Vocabulary::build(vocab_corpus, cfg.min_count);

    for (auto i : wb.splits.labeled) {
        wb.data.labeled_docs.push_back(
            corpus::encode_document(cache.train_tokens[i], wb.vocab, cfg.t_cap));
        wb.data.labeled_labels.push_back(cache.train.docs[i].label);
    }
    for (auto i : wb.splits.unlabeled)
        wb.data.unlabeled_docs.push_back(
            corpus::encode_document(cache.train_tokens[i], wb.vocab, cfg.t_cap));
    for (auto i : wb.splits.validation) {
        wb.data.validation_docs.push_back(
            corpus::encode_document(cache.test_tokens[i], wb.vocab, cfg.t_cap));
        wb.data.validation_labels.push_back(cache.test.docs[i].label);
    }
    for (auto i : wb.splits.test) {
        wb.data.test_docs.push_back(
            corpus::encode_document(cache.test_tokens[i], wb.vocab, cfg.t_cap));
        wb.data.test_labels.push_back(cache.test.docs[i].label);
    }

    const EmbeddingConfig emb = cfg.embedding;
    const auto vocab = wb.vocab;  // by value: factories outlive the workbench scope
    if (emb.path.empty()) {
        wb.embedding = [vocab, emb](Rng& rng) {
            return corpus::init_embeddings(vocab, emb.dim, emb.init_range, rng).weights;
        };
    } else {
        const auto path = resolve_data_path(emb.path);
        check(fs::exists(path), "embedding.path: file not found: ", path);
        wb.embedding = [vocab, emb, path](Rng& rng) {
            auto table = corpus::load_pretrained(path, vocab, emb.dim, rng);
            if (table.skipped_lines > 0)
                std::cerr << "warning: " << table.skipped_lines
                          << " wrong-arity lines skipped in " << path << "\n";
            return table.weights;
        };
    }
    return wb;
}

// ---- result serialization ---------------------------------------------------

ordered_json run_to_json(const trainer::RunResult& r) {
    ordered_json epochs = ordered_json::array();
    for (std::size_t i = 0; i < r.epochs.size(); ++i)
        epochs.push_back({{"epoch", i + 1},
                          {"train_loss", r.epochs[i].train_loss},
                          {"val_accuracy", r.epochs[i].val_accuracy}});
    return {{"seed", r.seed},
            {"regime", r.regime},
            {"best_val_accuracy", r.best_val_accuracy},
            {"test_accuracy_at_best", r.test_accuracy_at_best},
            {"epochs_run", r.epochs_run},
            {"failed", r.failed},
            {"failure", r.failure},
            {"warning", r.warning},
            {"epochs", epochs},
            {"wall_clock_sec", r.wall_clock_sec}};
}

ordered_json aggregate_to_json(const trainer::AggregateResult& agg) {
    ordered_json runs = ordered_json::array();
    for (const auto& r : agg.runs) runs.push_back(run_to_json(r));
    return {{"mean", agg.mean},
            {"stddev", agg.stddev},
            {"max_minus_min", agg.spread},
            {"failed_runs", agg.failed_runs},
            {"runs", runs}};
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "cannot write ", path.string());
    out << content;
}

void write_curves_csv(const fs::path& path, const trainer::RunResult& r) {
    std::string csv = "epoch,train_loss,val_accuracy\n";
    char buf[96];
    for (std::size_t i = 0; i < r.epochs.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g\n", i + 1, r.epochs[i].train_loss,
                      r.epochs[i].val_accuracy);
        csv += buf;
    }
    write_file(path, csv);
}

void print_run_summary(const trainer::RunResult& r) {
    if (r.failed) {
        std::printf("run seed=%llu regime=%s FAILED: %s\n",
                    static_cast<unsigned long long>(r.seed), r.regime.c_str(),
                    r.failure.c_str());
    } else {
        std::printf("run seed=%llu regime=%s epochs=%d best_val=%.2f%% test=%.2f%% (%.1fs)\n",
                    static_cast<unsigned long long>(r.seed), r.regime.c_str(), r.epochs_run,
                    r.best_val_accuracy * 100.0, r.test_accuracy_at_best * 100.0,
                    r.wall_clock_sec);
    }
    std::fflush(stdout);
}

}  // namespace

// ---- run ---------------------------------------------------------------------

int cmd_run(const ExperimentConfig& cfg) {
    auto cache = load_corpus(cfg);
    auto wb = assemble(cfg, cache);
    fs::create_directories(cfg.output_dir);
    write_file(fs::path(cfg.output_dir) / "manifest.json",
               corpus::splits_to_json(wb.splits, cfg.split));

    auto run_one = [&](std::uint64_t seed, encoders::ModelState<float>* best_out = nullptr) {
        return trainer::train(cfg.model, wb.embedding, cfg.regime, wb.data, cfg.hyper, seed,
                              best_out);
    };

    bool any_failed = false;
    if (cfg.repeats == 1) {
        encoders::ModelState<float> best;
        auto result = run_one(cfg.seed, &best);
        print_run_summary(result);
        write_file(fs::path(cfg.output_dir) / "result.json", run_to_json(result).dump(2) + "\n");
        write_curves_csv(fs::path(cfg.output_dir) /
                             ("curves_seed" + std::to_string(cfg.seed) + ".csv"),
                         result);
        if (!result.failed)
            encoders::save_checkpoint((fs::path(cfg.output_dir) / "checkpoint.bin").string(),
                                      best);
        any_failed = result.failed;
    } else {
        auto agg = trainer::repeat_runs([&](std::uint64_t seed) { return run_one(seed); },
                                        cfg.repeats, cfg.seed, cfg.jobs);
        for (const auto& r : agg.runs) print_run_summary(r);
        std::printf("aggregate over %d runs: mean=%.2f%% std=%.2f max-min=%.2f failed=%d\n",
                    cfg.repeats, agg.mean, agg.stddev, agg.spread, agg.failed_runs);
        write_file(fs::path(cfg.output_dir) / "result.json",
                   aggregate_to_json(agg).dump(2) + "\n");
        for (const auto& r : agg.runs)
            write_curves_csv(fs::path(cfg.output_dir) /
                                 ("curves_seed" + std::to_string(r.seed) + ".csv"),
                             r);
        // materialize the checkpoint of the best run; reruns are bit-identical
        const trainer::RunResult* best_run = nullptr;
        for (const auto& r : agg.runs)
            if (!r.failed && (!best_run || r.test_accuracy_at_best > best_run->test_accuracy_at_best))
                best_run = &r;
        if (best_run) {
            encoders::ModelState<float> best;
            run_one(best_run->seed, &best);
            encoders::save_checkpoint((fs::path(cfg.output_dir) / "checkpoint.bin").string(),
                                      best);
        }
        any_failed = agg.failed_runs > 0;
    }
    return any_failed ? 1 : 0;
}

// ---- grid ----------------------------------------------------------------------

GridSpec parse_grid_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail("grid: not valid JSON: ", e.what());
    }
    check(j.is_object(), "grid: expected an object");
    GridSpec grid;
    const std::set<std::string> known = {"regimes", "encoders", "multipliers", "dropouts",
                                         "learning_rates"};
    for (auto it = j.begin(); it != j.end(); ++it)
        check(known.count(it.key()) > 0, "grid.", it.key(), ": unknown dimension");
    if (j.contains("regimes")) grid.regimes = j["regimes"].get<std::vector<std::string>>();
    if (j.contains("encoders")) grid.encoders = j["encoders"].get<std::vector<std::string>>();
    if (j.contains("multipliers")) grid.multipliers = j["multipliers"].get<std::vector<int>>();
    if (j.contains("dropouts")) grid.dropouts = j["dropouts"].get<std::vector<double>>();
    if (j.contains("learning_rates"))
        grid.learning_rates = j["learning_rates"].get<std::vector<double>>();
    return grid;
}

GridSpec load_grid(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), "grid: cannot open ", path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_grid_json(buf.str());
}

namespace {

struct GridCell {
    std::string encoder;
    std::string regime;
    int multiplier = 0;  // 0: unused (supervised column)
    double dropout = 0;
    double learning_rate = 0;
    double accuracy = 0;  // percent
    bool failed = false;
};

bool is_semi(const std::string& regime) {
    return regime == "pi" || regime == "vat" || regime == "at_vat";
}

std::string format_pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace

int cmd_grid(const ExperimentConfig& base, const GridSpec& spec) {
    GridSpec grid = spec;
    if (grid.regimes.empty()) grid.regimes = {smoothing::regime_name(base.regime.regime)};
    if (grid.encoders.empty()) grid.encoders = {encoders::encoder_name(base.model.encoder)};
    if (grid.multipliers.empty()) grid.multipliers = {base.split.unlabeled_multiplier};
    if (grid.dropouts.empty()) grid.dropouts = {base.model.dropout_rate};
    if (grid.learning_rates.empty()) grid.learning_rates = {base.hyper.learning_rate};
    for (const auto& r : grid.regimes) smoothing::regime_from_name(r);      // validate early
    for (const auto& e : grid.encoders) encoders::encoder_from_name(e);

    auto cache = load_corpus(base);

    std::vector<GridCell> cells;
    for (const auto& enc : grid.encoders)
        for (const auto& reg : grid.regimes)
            for (int mult : is_semi(reg) ? grid.multipliers : std::vector<int>{0})
                for (double drop : grid.dropouts)
                    for (double lr : grid.learning_rates)
                        cells.push_back({enc, reg, mult, drop, lr, 0.0, false});

    std::printf("grid: %zu cells over %zu encoder(s) x %zu regime column(s)\n", cells.size(),
                grid.encoders.size(), grid.regimes.size());
    std::fflush(stdout);

    std::atomic<std::size_t> next{0};
    std::mutex io_mutex;
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            GridCell& cell = cells[i];
            try {
                ExperimentConfig cfg = base;
                cfg.model.encoder = encoders::encoder_from_name(cell.encoder);
                cfg.regime.regime = smoothing::regime_from_name(cell.regime);
                if (cell.multiplier > 0) cfg.split.unlabeled_multiplier = cell.multiplier;
                cfg.model.dropout_rate = cell.dropout;
                cfg.hyper.learning_rate = cell.learning_rate;
                auto wb = assemble(cfg, cache);
                double acc_sum = 0.0;
                int ok = 0;
                for (int rep = 0; rep < cfg.repeats; ++rep) {
                    auto result = trainer::train(cfg.model, wb.embedding, cfg.regime, wb.data,
                                                 cfg.hyper, cfg.seed + static_cast<std::uint64_t>(rep));
                    if (result.failed) continue;
                    acc_sum += result.test_accuracy_at_best * 100.0;
                    ++ok;
                }
                if (ok == 0) {
                    cell.failed = true;
                } else {
                    cell.accuracy = acc_sum / ok;
                }
            } catch (const Error& e) {
                cell.failed = true;
                std::lock_guard<std::mutex> lock(io_mutex);
                std::cerr << "cell " << cell.encoder << "/" << cell.regime << " failed: "
                          << e.what() << "\n";
            }
            std::lock_guard<std::mutex> lock(io_mutex);
            std::printf("cell %s/%s%s: %s\n", cell.encoder.c_str(), cell.regime.c_str(),
                        cell.multiplier > 0 ? ("@" + std::to_string(cell.multiplier)).c_str() : "",
                        cell.failed ? "FAIL" : format_pct(cell.accuracy).c_str());
            std::fflush(stdout);
        }
    };
    const int pool = std::max(1, std::min<int>(base.jobs, static_cast<int>(cells.size())));
    std::vector<std::thread> threads;
    for (int i = 0; i < pool; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();

    // matrix emission: rows = encoders, one column per regime; semi columns
    // carry slash-separated values per unlabeled multiplier
    auto cell_text = [&](const std::string& enc, const std::string& reg) {
        std::vector<std::string> parts;
        for (const auto& cell : cells) {
            if (cell.encoder != enc || cell.regime != reg) continue;
            parts.push_back(cell.failed ? "FAIL" : format_pct(cell.accuracy));
        }
        std::string out;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            if (i) out += "/";
            out += parts[i];
        }
        return out;
    };

    std::string csv = "encoder";
    for (const auto& reg : grid.regimes) csv += "," + reg;
    csv += "\n";
    for (const auto& enc : grid.encoders) {
        csv += corpus::csv_quote(enc);
        for (const auto& reg : grid.regimes) csv += "," + corpus::csv_quote(cell_text(enc, reg));
        csv += "\n";
    }
    fs::create_directories(base.output_dir);
    write_file(fs::path(base.output_dir) / "grid.csv", csv);

    // aligned text table
    std::vector<std::vector<std::string>> table;
    table.push_back({"encoder"});
    for (const auto& reg : grid.regimes) table.back().push_back(reg);
    for (const auto& enc : grid.encoders) {
        table.push_back({enc});
        for (const auto& reg : grid.regimes) table.back().push_back(cell_text(enc, reg));
    }
    std::vector<std::size_t> widths(table[0].size(), 0);
    for (const auto& row : table)
        for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
    std::string text;
    for (const auto& row : table) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            text += row[c];
            text += std::string(widths[c] - row[c].size() + 2, ' ');
        }
        text += "\n";
    }
    write_file(fs::path(base.output_dir) / "grid.txt", text);
    std::fputs(text.c_str(), stdout);
    return 0;
}

// ---- histogram --------------------------------------------------------------------

int cmd_histogram(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                  std::size_t batch_size) {
    auto state = encoders::load_checkpoint(resolve_data_path(checkpoint_path));
    check(state.spec.encoder == encoders::EncoderKind::BilstmMax,
          "histogram: checkpoint encoder is ", encoders::encoder_name(state.spec.encoder),
          ", need bilstm_max");

    auto cache = load_corpus(cfg);
    auto wb = assemble(cfg, cache);
    check(state.embedding->shape[0] == wb.vocab.size(), "histogram: checkpoint embedding has ",
          state.embedding->shape[0], " rows but the config vocabulary has ", wb.vocab.size(),
          " - config must match the training run");

    const std::size_t n = std::min(batch_size, wb.data.test_docs.size());
    check(n >= 1, "histogram: no test documents");
    corpus::DocumentBatch batch;
    batch.batch = n;
    for (std::size_t i = 0; i < n; ++i)
        batch.t_max = std::max(batch.t_max, wb.data.test_docs[i].size());
    batch.token_ids.assign(batch.batch * batch.t_max, corpus::Vocabulary::kPad);
    batch.lengths.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(wb.data.test_docs[i].begin(), wb.data.test_docs[i].end(),
                  batch.token_ids.begin() + static_cast<std::ptrdiff_t>(i * batch.t_max));
        batch.lengths[i] = static_cast<int>(wb.data.test_docs[i].size());
    }

    Graph<float> g(false);
    auto fwd = encoders::forward(g, state, batch);
    auto counts = encoders::timestep_histogram(state, fwd, batch.lengths, batch.t_max);

    std::string csv = "doc,length";
    for (std::size_t t = 0; t < batch.t_max; ++t) csv += ",t" + std::to_string(t);
    csv += "\n";
    for (std::size_t i = 0; i < n; ++i) {
        csv += std::to_string(i) + "," + std::to_string(batch.lengths[i]);
        for (std::size_t t = 0; t < batch.t_max; ++t) csv += "," + std::to_string(counts[i][t]);
        csv += "\n";
    }
    fs::create_directories(cfg.output_dir);
    write_file(fs::path(cfg.output_dir) / "histogram.csv", csv);
    std::printf("histogram: %zu documents x %zu timesteps, %zu features each -> %s\n", n,
                batch.t_max, state.spec.feature_dim(),
                (fs::path(cfg.output_dir) / "histogram.csv").c_str());
    return 0;
}

// ---- splits ------------------------------------------------------------------------

int cmd_splits(const ExperimentConfig& cfg) {
    auto cache = load_corpus(cfg);
    auto splits = corpus::make_splits(cache.train, cache.test, cfg.split);
    fs::create_directories(cfg.output_dir);
    write_file(fs::path(cfg.output_dir) / "manifest.json",
               corpus::splits_to_json(splits, cfg.split));

    std::set<std::size_t> labeled(splits.labeled.begin(), splits.labeled.end());
    std::size_t overlap = 0;
    for (auto i : splits.unlabeled) overlap += labeled.count(i);
    std::set<std::size_t> val(splits.validation.begin(), splits.validation.end());
    std::size_t overlap_vt = 0;
    for (auto i : splits.test) overlap_vt += val.count(i);

    std::printf("splits: labeled=%zu unlabeled=%zu validation=%zu test=%zu\n",
                splits.labeled.size(), splits.unlabeled.size(), splits.validation.size(),
                splits.test.size());
    std::printf("labeled/unlabeled overlap: %zu (disjoint: %s)\n", overlap,
                overlap == 0 ? "yes" : "NO");
    std::printf("validation/test overlap: %zu (disjoint: %s)\n", overlap_vt,
                overlap_vt == 0 ? "yes" : "NO");
    return overlap == 0 && overlap_vt == 0 ? 0 : 1;
}

}  // namespace regtext::cli
