#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "regtext/corpus/vocab.hpp"
#include "regtext/rng.hpp"

namespace regtext::corpus {

// Padded index matrix [b x T_max] with per-document lengths. Unlabeled
// batches carry an empty labels vector; the semi-supervised losses cannot
// read labels that are not there.
struct DocumentBatch {
    std::size_t batch = 0;
    std::size_t t_max = 0;
    std::vector<std::int32_t> token_ids;  // row-major, padding index 0
    std::vector<int> lengths;
    std::vector<int> labels;  // empty for unlabeled batches

    bool labeled() const { return !labels.empty(); }
};

// Token ids for one document, truncated at t_cap; a document that ends up
// empty is replaced by a single unknown token so pooling stays defined.
std::vector<std::int32_t> encode_document(const std::vector<std::string>& tokens,
                                          const Vocabulary& vocab, std::size_t t_cap);

// Shuffling batch iterator over pre-encoded documents. One epoch = one
// shuffled pass; next_cycling() restarts with a fresh shuffle for streams
// that must never run dry (the unlabeled side of a semi-supervised step).
class BatchStream {
public:
    BatchStream(std::vector<std::vector<std::int32_t>> docs, std::vector<int> labels,
                std::size_t batch_size);

    void start_epoch(Rng& rng);
    std::optional<DocumentBatch> next();
    DocumentBatch next_cycling(Rng& rng);

    std::size_t size() const { return docs_.size(); }
    std::size_t batches_per_epoch() const {
        return (docs_.size() + batch_size_ - 1) / batch_size_;
    }

private:
    DocumentBatch assemble(std::size_t lo, std::size_t hi) const;

    std::vector<std::vector<std::int32_t>> docs_;
    std::vector<int> labels_;
    std::size_t batch_size_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

}  // namespace regtext::corpus
