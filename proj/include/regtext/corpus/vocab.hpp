#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace regtext::corpus {

// Token <-> index bijection with two reserved rows: 0 = padding, 1 = unknown.
// Built from training text only; ordering is frequency-descending with
// lexicographic tie-break so construction is deterministic.
class Vocabulary {
public:
    static constexpr std::int32_t kPad = 0;
    static constexpr std::int32_t kUnk = 1;

    static Vocabulary build(const std::vector<std::vector<std::string>>& corpus, int min_count);

    std::int32_t id(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? kUnk : it->second;
    }

    const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }

    std::size_t size() const { return tokens_.size(); }

    bool contains(const std::string& token) const { return index_.count(token) > 0; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int32_t> index_;
};

}  // namespace regtext::corpus
