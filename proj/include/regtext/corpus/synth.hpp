#pragma once

#include <cstdint>

#include "regtext/corpus/dataset.hpp"

namespace regtext::corpus {

// Bundled synthetic corpus: each class owns a token pool, all classes share
// a neutral pool, and `overlap` is the probability that any given position
// draws from the shared pool. overlap 0 gives linearly separable classes;
// larger values blur them. Everything is a pure function of the spec.
struct SynthSpec {
    int num_classes = 2;
    int class_tokens = 50;   // distinct tokens per class pool
    int shared_tokens = 50;  // distinct tokens in the neutral pool
    double overlap = 0.5;
    int doc_len_min = 6;
    int doc_len_max = 18;
    int train_docs = 600;
    int test_docs = 400;
    std::uint64_t seed = 0;
};

struct SynthCorpus {
    LabeledDataset train;
    LabeledDataset test;
};

SynthCorpus generate_synth(const SynthSpec& spec);

}  // namespace regtext::corpus
