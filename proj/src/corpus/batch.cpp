#include "regtext/corpus/batch.hpp"

#include <algorithm>
#include <numeric>

#include "regtext/error.hpp"

namespace regtext::corpus {

std::vector<std::int32_t> encode_document(const std::vector<std::string>& tokens,
                                          const Vocabulary& vocab, std::size_t t_cap) {
    std::vector<std::int32_t> ids;
    ids.reserve(std::min(tokens.size(), t_cap));
    for (const auto& tok : tokens) {
        if (ids.size() >= t_cap) break;
        ids.push_back(vocab.id(tok));
    }
    if (ids.empty()) ids.push_back(Vocabulary::kUnk);
    return ids;
}

BatchStream::BatchStream(std::vector<std::vector<std::int32_t>> docs, std::vector<int> labels,
                         std::size_t batch_size)
    : docs_(std::move(docs)), labels_(std::move(labels)), batch_size_(batch_size) {
    check(batch_size_ >= 1, "batch: batch_size must be >= 1");
    check(labels_.empty() || labels_.size() == docs_.size(), "batch: ", labels_.size(),
          " labels for ", docs_.size(), " documents");
    for (const auto& d : docs_) check(!d.empty(), "batch: empty encoded document");
    order_.resize(docs_.size());
    std::iota(order_.begin(), order_.end(), 0);
}

void BatchStream::start_epoch(Rng& rng) {
    rng.shuffle(order_);
    cursor_ = 0;
}

std::optional<DocumentBatch> BatchStream::next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    const std::size_t lo = cursor_;
    const std::size_t hi = std::min(cursor_ + batch_size_, order_.size());
    cursor_ = hi;
    return assemble(lo, hi);
}

DocumentBatch BatchStream::next_cycling(Rng& rng) {
    check(!docs_.empty(), "batch: cycling over an empty stream");
    if (cursor_ >= order_.size()) start_epoch(rng);
    return *next();
}

DocumentBatch BatchStream::assemble(std::size_t lo, std::size_t hi) const {
    DocumentBatch b;
    b.batch = hi - lo;
    b.t_max = 0;
    for (std::size_t i = lo; i < hi; ++i)
        b.t_max = std::max(b.t_max, docs_[order_[i]].size());
    b.token_ids.assign(b.batch * b.t_max, Vocabulary::kPad);
    b.lengths.resize(b.batch);
    if (!labels_.empty()) b.labels.resize(b.batch);
    for (std::size_t i = lo; i < hi; ++i) {
        const std::size_t row = i - lo;
        const auto& doc = docs_[order_[i]];
        std::copy(doc.begin(), doc.end(), b.token_ids.begin() + static_cast<std::ptrdiff_t>(row * b.t_max));
        b.lengths[row] = static_cast<int>(doc.size());
        if (!labels_.empty()) b.labels[row] = labels_[order_[i]];
    }
    return b;
}

}  // namespace regtext::corpus
