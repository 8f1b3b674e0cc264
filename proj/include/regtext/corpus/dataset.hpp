#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace regtext::corpus {

struct Document {
    std::string text;
    int label = -1;  // 0-based class index
};

struct LabeledDataset {
    std::vector<Document> docs;
    int num_classes = 0;
};

// Known dataset descriptors: class counts, original training-pool sizes, and
// the reduced labeled counts the subsampling protocol targets.
struct DatasetInfo {
    std::string name;
    int classes;
    std::size_t original_train;
    std::size_t test_size;
    std::size_t labeled_target;

    double default_labeled_fraction() const {
        return static_cast<double>(labeled_target) / static_cast<double>(original_train);
    }
};

// ag_news, dbpedia, yahoo, yelp_polarity
const std::vector<DatasetInfo>& known_datasets();
std::optional<DatasetInfo> dataset_info(const std::string& name);

// Reads the Zhang-et-al. CSV convention: quoted fields, class index in
// column 1 (1-based), remaining columns concatenated as the text.
// expected_classes < 0 means "infer".
LabeledDataset load_dataset_csv(const std::string& path, int expected_classes);

// RFC-4180 row parser shared with the CSV artifacts the CLI emits.
// Returns false on EOF with no row started; malformed input throws.
std::vector<std::vector<std::string>> parse_csv(const std::string& content);
std::string csv_quote(const std::string& field);

}  // namespace regtext::corpus
