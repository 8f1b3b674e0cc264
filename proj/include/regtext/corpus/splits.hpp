#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "regtext/corpus/dataset.hpp"

namespace regtext::corpus {

// The labeled/unlabeled/validation subsampling protocol. The labeled split
// is class-stratified; the unlabeled pool is drawn uniformly from the
// remaining training documents with labels stripped; validation is a
// stratified half of the test set.
struct SplitSpec {
    double labeled_fraction = 0.005;        // of the training pool
    int unlabeled_multiplier = 20;          // x |labeled|
    double validation_fraction_of_test = 0.5;
    std::uint64_t seed = 0;
};

struct Splits {
    std::vector<std::size_t> labeled;     // indices into the train dataset
    std::vector<std::size_t> unlabeled;   // indices into the train dataset
    std::vector<std::size_t> validation;  // indices into the test dataset
    std::vector<std::size_t> test;        // indices into the test dataset
};

Splits make_splits(const LabeledDataset& train, const LabeledDataset& test, const SplitSpec& spec);

// Replayable JSON manifest (document indices per split, seed, spec).
std::string splits_to_json(const Splits& splits, const SplitSpec& spec);
Splits splits_from_json(const std::string& json_text, SplitSpec* spec_out = nullptr);

}  // namespace regtext::corpus
