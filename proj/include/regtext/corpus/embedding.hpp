#pragma once

#include <cstddef>
#include <string>

#include "regtext/corpus/vocab.hpp"
#include "regtext/rng.hpp"
#include "regtext/tensor.hpp"

namespace regtext::corpus {

// Trainable embedding matrix [|V| x d]. Row 0 (padding) is all-zero and
// stays frozen during training; rows covered by the pretrained file match it
// bit-exactly at initialization; every other row is i.i.d. uniform on
// [-init_lo, init_lo].
struct EmbeddingTable {
    std::size_t dim = 0;
    TensorPtr<float> weights;     // [V, d], requires_grad
    double coverage = 0.0;        // fraction of non-reserved vocab found in the file
    std::size_t skipped_lines = 0;  // wrong-arity lines in the pretrained file
};

// All-random initialization (no pretrained file); used by synthetic runs.
EmbeddingTable init_embeddings(const Vocabulary& vocab, std::size_t dim, double init_range,
                               Rng& rng);

// Reads the standard text format: one token per line followed by d
// space-separated floats. Lines whose arity disagrees with the file's are
// skipped and counted; a file whose arity disagrees with `dim` is an error.
EmbeddingTable load_pretrained(const std::string& path, const Vocabulary& vocab, std::size_t dim,
                               Rng& rng);

}  // namespace regtext::corpus
