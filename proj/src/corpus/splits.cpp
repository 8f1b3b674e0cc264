#include "regtext/corpus/splits.hpp"

#include <algorithm>
#include <json.hpp>

#include "regtext/error.hpp"
#include "regtext/rng.hpp"

namespace regtext::corpus {

namespace {

std::vector<std::vector<std::size_t>> by_class(const LabeledDataset& ds) {
    std::vector<std::vector<std::size_t>> buckets(static_cast<std::size_t>(ds.num_classes));
    for (std::size_t i = 0; i < ds.docs.size(); ++i)
        buckets[static_cast<std::size_t>(ds.docs[i].label)].push_back(i);
    return buckets;
}

}  // namespace

Splits make_splits(const LabeledDataset& train, const LabeledDataset& test,
                   const SplitSpec& spec) {
    check(train.num_classes >= 2, "make_splits: need >= 2 classes, got ", train.num_classes);
    check(spec.labeled_fraction > 0.0 && spec.labeled_fraction < 1.0,
          "make_splits: labeled_fraction ", spec.labeled_fraction, " outside (0,1)");
    check(spec.unlabeled_multiplier >= 0, "make_splits: negative unlabeled_multiplier");

    Rng root(spec.seed);
    Rng labeled_rng = root.fork(1);
    Rng unlabeled_rng = root.fork(2);
    Rng validation_rng = root.fork(3);

    const std::size_t k = static_cast<std::size_t>(train.num_classes);
    const std::size_t total_labeled =
        static_cast<std::size_t>(static_cast<double>(train.docs.size()) * spec.labeled_fraction);
    check(total_labeled >= k, "make_splits: labeled budget ", total_labeled,
          " smaller than class count ", k);

    // Equal per-class counts; the remainder goes to the lowest class indices,
    // keeping any two counts within 1 of each other.
    const std::size_t base = total_labeled / k;
    const std::size_t rem = total_labeled % k;

    Splits out;
    auto train_buckets = by_class(train);
    std::vector<bool> taken(train.docs.size(), false);
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t want = base + (c < rem ? 1 : 0);
        auto& bucket = train_buckets[c];
        check(bucket.size() >= want, "make_splits: class ", c, " has only ", bucket.size(),
              " training documents, need ", want);
        labeled_rng.shuffle(bucket);
        for (std::size_t i = 0; i < want; ++i) {
            out.labeled.push_back(bucket[i]);
            taken[bucket[i]] = true;
        }
    }
    std::sort(out.labeled.begin(), out.labeled.end());

    const std::size_t want_unlabeled = out.labeled.size() * static_cast<std::size_t>(spec.unlabeled_multiplier);
    std::vector<std::size_t> pool;
    pool.reserve(train.docs.size() - out.labeled.size());
    for (std::size_t i = 0; i < train.docs.size(); ++i)
        if (!taken[i]) pool.push_back(i);
    check(pool.size() >= want_unlabeled, "make_splits: training remainder ", pool.size(),
          " cannot supply ", want_unlabeled, " unlabeled documents");
    unlabeled_rng.shuffle(pool);
    out.unlabeled.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(want_unlabeled));
    std::sort(out.unlabeled.begin(), out.unlabeled.end());

    // Stratified half of the test set becomes validation.
    auto test_buckets = by_class(test);
    for (std::size_t c = 0; c < test_buckets.size(); ++c) {
        auto& bucket = test_buckets[c];
        validation_rng.shuffle(bucket);
        const std::size_t want =
            static_cast<std::size_t>(static_cast<double>(bucket.size()) * spec.validation_fraction_of_test);
        for (std::size_t i = 0; i < bucket.size(); ++i)
            (i < want ? out.validation : out.test).push_back(bucket[i]);
    }
    std::sort(out.validation.begin(), out.validation.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

std::string splits_to_json(const Splits& splits, const SplitSpec& spec) {
    nlohmann::ordered_json j;
    j["seed"] = spec.seed;
    j["spec"] = {{"labeled_fraction", spec.labeled_fraction},
                 {"unlabeled_multiplier", spec.unlabeled_multiplier},
                 {"validation_fraction_of_test", spec.validation_fraction_of_test}};
    j["counts"] = {{"labeled", splits.labeled.size()},
                   {"unlabeled", splits.unlabeled.size()},
                   {"validation", splits.validation.size()},
                   {"test", splits.test.size()}};
    j["labeled_train_indices"] = splits.labeled;
    j["unlabeled_train_indices"] = splits.unlabeled;
    j["validation_test_indices"] = splits.validation;
    j["test_test_indices"] = splits.test;
    return j.dump(2);
}

Splits splits_from_json(const std::string& json_text, SplitSpec* spec_out) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const std::exception& e) {
        fail("splits manifest: ", e.what());
    }
    Splits out;
    out.labeled = j.at("labeled_train_indices").get<std::vector<std::size_t>>();
    out.unlabeled = j.at("unlabeled_train_indices").get<std::vector<std::size_t>>();
    out.validation = j.at("validation_test_indices").get<std::vector<std::size_t>>();
    out.test = j.at("test_test_indices").get<std::vector<std::size_t>>();
    if (spec_out) {
        spec_out->seed = j.at("seed").get<std::uint64_t>();
        spec_out->labeled_fraction = j.at("spec").at("labeled_fraction").get<double>();
        spec_out->unlabeled_multiplier = j.at("spec").at("unlabeled_multiplier").get<int>();
        spec_out->validation_fraction_of_test =
            j.at("spec").at("validation_fraction_of_test").get<double>();
    }
    return out;
}

}  // namespace regtext::corpus
