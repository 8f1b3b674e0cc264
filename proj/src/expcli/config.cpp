#include "regtext/expcli/config.hpp"

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "regtext/corpus/dataset.hpp"
#include "regtext/error.hpp"

namespace regtext::cli {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Wraps a json object so every access error carries the dotted field path.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        check(j_.is_object(), path_, ": expected an object");
    }

    template <typename T>
    T get(const char* key, T fallback) {
        seen_.insert(key);
        if (!j_.contains(key)) return fallback;
        try {
            return j_.at(key).get<T>();
        } catch (const json::exception&) {
            fail(path_, ".", key, ": wrong type (", j_.at(key).type_name(), ")");
        }
    }

    bool has(const char* key) const { return j_.contains(key); }

    Section section(const char* key) {
        seen_.insert(key);
        check(j_.contains(key), path_, ".", key, ": missing section");
        return Section(j_.at(key), path_ + "." + key);
    }

    bool has_section(const char* key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    // Unknown keys are configuration typos; reject them loudly.
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            check(seen_.count(it.key()) > 0, path_, ".", it.key(), ": unknown field");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void parse_dataset(Section s, DatasetConfig& out) {
    out.name = s.get<std::string>("name", out.name);
    out.train_csv = s.get<std::string>("train_csv", out.train_csv);
    out.test_csv = s.get<std::string>("test_csv", out.test_csv);
    out.expected_classes = s.get<int>("expected_classes", out.expected_classes);
    if (s.has_section("synth")) {
        Section sy = s.section("synth");
        auto& sp = out.synth;
        sp.num_classes = sy.get<int>("num_classes", sp.num_classes);
        sp.class_tokens = sy.get<int>("class_tokens", sp.class_tokens);
        sp.shared_tokens = sy.get<int>("shared_tokens", sp.shared_tokens);
        sp.overlap = sy.get<double>("overlap", sp.overlap);
        sp.doc_len_min = sy.get<int>("doc_len_min", sp.doc_len_min);
        sp.doc_len_max = sy.get<int>("doc_len_max", sp.doc_len_max);
        sp.train_docs = sy.get<int>("train_docs", sp.train_docs);
        sp.test_docs = sy.get<int>("test_docs", sp.test_docs);
        sp.seed = sy.get<std::uint64_t>("seed", sp.seed);
        sy.finish();
    }
    s.finish();

    if (out.name == "synthetic") return;
    if (auto info = corpus::dataset_info(out.name)) {
        if (out.expected_classes < 0)
            out.expected_classes = info->classes;
        else
            check(out.expected_classes == info->classes, "dataset.expected_classes: ", out.name,
                  " has ", info->classes, " classes, config says ", out.expected_classes);
    } else {
        check(out.name == "custom", "dataset.name: unknown dataset '", out.name,
              "' (want synthetic|custom|ag_news|dbpedia|yahoo|yelp_polarity)");
    }
    check(!out.train_csv.empty(), "dataset.train_csv: required for dataset '", out.name, "'");
    check(!out.test_csv.empty(), "dataset.test_csv: required for dataset '", out.name, "'");
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        fail("config: not valid JSON: ", e.what());
    }

    ExperimentConfig cfg;
    Section top(root, "config");

    if (top.has_section("dataset")) parse_dataset(top.section("dataset"), cfg.dataset);

    if (top.has_section("embedding")) {
        Section s = top.section("embedding");
        cfg.embedding.path = s.get<std::string>("path", cfg.embedding.path);
        cfg.embedding.dim = s.get<std::size_t>("dim", cfg.embedding.dim);
        cfg.embedding.init_range = s.get<double>("init_range", cfg.embedding.init_range);
        cfg.embedding.trainable = s.get<bool>("trainable", cfg.embedding.trainable);
        s.finish();
    }

    if (top.has_section("split")) {
        Section s = top.section("split");
        cfg.split.labeled_fraction = s.get<double>("labeled_fraction", cfg.split.labeled_fraction);
        cfg.split.unlabeled_multiplier =
            s.get<int>("unlabeled_multiplier", cfg.split.unlabeled_multiplier);
        cfg.split.validation_fraction_of_test =
            s.get<double>("validation_fraction_of_test", cfg.split.validation_fraction_of_test);
        cfg.split.seed = s.get<std::uint64_t>("seed", cfg.split.seed);
        s.finish();
    }

    if (top.has_section("model")) {
        Section s = top.section("model");
        cfg.model.encoder =
            encoders::encoder_from_name(s.get<std::string>("encoder", "swem"));
        cfg.model.embedding_dim = s.get<std::size_t>("embedding_dim", cfg.model.embedding_dim);
        cfg.model.hidden_state = s.get<std::size_t>("hidden_state", cfg.model.hidden_state);
        cfg.model.num_kernel = s.get<std::size_t>("num_kernel", cfg.model.num_kernel);
        cfg.model.context_size = s.get<std::size_t>("context_size", cfg.model.context_size);
        cfg.model.stride = s.get<std::size_t>("stride", cfg.model.stride);
        cfg.model.classifier_dim = s.get<std::size_t>("classifier_dim", cfg.model.classifier_dim);
        cfg.model.dropout_rate = s.get<double>("dropout_rate", cfg.model.dropout_rate);
        s.finish();
    }

    if (top.has_section("regime")) {
        Section s = top.section("regime");
        cfg.regime.regime = smoothing::regime_from_name(s.get<std::string>("kind", "sup"));
        cfg.regime.epsilon = s.get<double>("epsilon", cfg.regime.epsilon);
        cfg.regime.alpha = s.get<double>("alpha", cfg.regime.alpha);
        cfg.regime.xi = s.get<double>("xi", cfg.regime.xi);
        cfg.regime.power_iterations = s.get<int>("power_iterations", cfg.regime.power_iterations);
        cfg.regime.lambda_consistency =
            s.get<double>("lambda_consistency", cfg.regime.lambda_consistency);
        cfg.regime.lambda_entropy = s.get<double>("lambda_entropy", cfg.regime.lambda_entropy);
        cfg.regime.unk_rate = s.get<double>("unk_rate", cfg.regime.unk_rate);
        cfg.regime.swap_rate = s.get<double>("swap_rate", cfg.regime.swap_rate);
        s.finish();
    }

    if (top.has_section("trainer")) {
        Section s = top.section("trainer");
        cfg.hyper.labeled_batch = s.get<std::size_t>("labeled_batch", cfg.hyper.labeled_batch);
        cfg.hyper.unlabeled_batch =
            s.get<std::size_t>("unlabeled_batch", cfg.hyper.unlabeled_batch);
        cfg.hyper.eval_batch = s.get<std::size_t>("eval_batch", cfg.hyper.eval_batch);
        cfg.hyper.max_epochs = s.get<int>("max_epochs", cfg.hyper.max_epochs);
        cfg.hyper.patience = s.get<int>("patience", cfg.hyper.patience);
        cfg.hyper.learning_rate = s.get<double>("learning_rate", cfg.hyper.learning_rate);
        s.finish();
    }

    cfg.t_cap = top.get<std::size_t>("t_cap", cfg.t_cap);
    cfg.min_count = top.get<int>("min_count", cfg.min_count);
    cfg.output_dir = top.get<std::string>("output_dir", cfg.output_dir);
    cfg.seed = top.get<std::uint64_t>("seed", cfg.seed);
    cfg.repeats = top.get<int>("repeats", cfg.repeats);
    cfg.jobs = top.get<int>("jobs", cfg.jobs);
    top.finish();

    // cross-field checks
    check(cfg.embedding.dim == cfg.model.embedding_dim,
          "embedding.dim (", cfg.embedding.dim, ") must equal model.embedding_dim (",
          cfg.model.embedding_dim, ")");
    check(cfg.t_cap >= 1, "t_cap: must be >= 1");
    check(cfg.min_count >= 1, "min_count: must be >= 1");
    check(cfg.repeats >= 1, "repeats: must be >= 1");
    check(cfg.jobs >= 1, "jobs: must be >= 1");
    cfg.model.validate();
    cfg.regime.validate();
    cfg.hyper.train_embedding = cfg.embedding.trainable;
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), "config: cannot open ", path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_json(buf.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
    ordered_json j;
    j["dataset"] = {{"name", cfg.dataset.name},
                    {"train_csv", cfg.dataset.train_csv},
                    {"test_csv", cfg.dataset.test_csv},
                    {"expected_classes", cfg.dataset.expected_classes},
                    {"synth",
                     {{"num_classes", cfg.dataset.synth.num_classes},
                      {"class_tokens", cfg.dataset.synth.class_tokens},
                      {"shared_tokens", cfg.dataset.synth.shared_tokens},
                      {"overlap", cfg.dataset.synth.overlap},
                      {"doc_len_min", cfg.dataset.synth.doc_len_min},
                      {"doc_len_max", cfg.dataset.synth.doc_len_max},
                      {"train_docs", cfg.dataset.synth.train_docs},
                      {"test_docs", cfg.dataset.synth.test_docs},
                      {"seed", cfg.dataset.synth.seed}}}};
    j["embedding"] = {{"path", cfg.embedding.path},
                      {"dim", cfg.embedding.dim},
                      {"init_range", cfg.embedding.init_range},
                      {"trainable", cfg.embedding.trainable}};
    j["split"] = {{"labeled_fraction", cfg.split.labeled_fraction},
                  {"unlabeled_multiplier", cfg.split.unlabeled_multiplier},
                  {"validation_fraction_of_test", cfg.split.validation_fraction_of_test},
                  {"seed", cfg.split.seed}};
    j["model"] = {{"encoder", encoders::encoder_name(cfg.model.encoder)},
                  {"embedding_dim", cfg.model.embedding_dim},
                  {"hidden_state", cfg.model.hidden_state},
                  {"num_kernel", cfg.model.num_kernel},
                  {"context_size", cfg.model.context_size},
                  {"stride", cfg.model.stride},
                  {"classifier_dim", cfg.model.classifier_dim},
                  {"dropout_rate", cfg.model.dropout_rate}};
    j["regime"] = {{"kind", smoothing::regime_name(cfg.regime.regime)},
                   {"epsilon", cfg.regime.epsilon},
                   {"alpha", cfg.regime.alpha},
                   {"xi", cfg.regime.xi},
                   {"power_iterations", cfg.regime.power_iterations},
                   {"lambda_consistency", cfg.regime.lambda_consistency},
                   {"lambda_entropy", cfg.regime.lambda_entropy},
                   {"unk_rate", cfg.regime.unk_rate},
                   {"swap_rate", cfg.regime.swap_rate}};
    j["trainer"] = {{"labeled_batch", cfg.hyper.labeled_batch},
                    {"unlabeled_batch", cfg.hyper.unlabeled_batch},
                    {"eval_batch", cfg.hyper.eval_batch},
                    {"max_epochs", cfg.hyper.max_epochs},
                    {"patience", cfg.hyper.patience},
                    {"learning_rate", cfg.hyper.learning_rate}};
    j["t_cap"] = cfg.t_cap;
    j["min_count"] = cfg.min_count;
    j["output_dir"] = cfg.output_dir;
    j["seed"] = cfg.seed;
    j["repeats"] = cfg.repeats;
    j["jobs"] = cfg.jobs;
    return j.dump(2);
}

std::string default_config_json() { return config_to_json(ExperimentConfig{}); }

std::string resolve_data_path(const std::string& path) {
    if (path.empty() || path.front() == '/') return path;
    const char* root = std::getenv("REGTEXT_DATA_DIR");
    if (!root || !*root) return path;
    return std::string(root) + "/" + path;
}

}  // namespace regtext::cli
