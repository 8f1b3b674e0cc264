#include "regtext/corpus/vocab.hpp"

#include <algorithm>
#include <utility>

#include "regtext/error.hpp"

namespace regtext::corpus {

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& corpus, int min_count) {
    check(min_count >= 1, "build_vocab: min_count must be >= 1, got ", min_count);
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& doc : corpus)
        for (const auto& tok : doc) ++counts[tok];

    std::vector<std::pair<std::string, std::size_t>> kept;
    kept.reserve(counts.size());
    for (auto& [tok, n] : counts)
        if (n >= static_cast<std::size_t>(min_count)) kept.emplace_back(tok, n);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary v;
    v.tokens_.reserve(kept.size() + 2);
    v.tokens_.push_back("<pad>");
    v.tokens_.push_back("<unk>");
    for (auto& [tok, n] : kept) v.tokens_.push_back(tok);
    for (std::size_t i = 0; i < v.tokens_.size(); ++i)
        v.index_[v.tokens_[i]] = static_cast<std::int32_t>(i);
    return v;
}

}  // namespace regtext::corpus
