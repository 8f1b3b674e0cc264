#include "regtext/corpus/embedding.hpp"

#include <cstdlib>
#include <fstream>
#include <unordered_map>
#include <vector>

#include "regtext/error.hpp"

namespace regtext::corpus {

namespace {

// Fills every non-pad row not present in `found` with U[-range, range],
// drawing in ascending row order so the result is a pure function of
// (vocab, file, seed).
void fill_random_rows(EmbeddingTable& table, const Vocabulary& vocab,
                      const std::unordered_map<std::int32_t, std::vector<float>>& found,
                      double range, Rng& rng) {
    const std::size_t d = table.dim;
    float* w = table.weights->data.data();
    for (std::size_t row = 1; row < vocab.size(); ++row) {
        auto it = found.find(static_cast<std::int32_t>(row));
        if (it != found.end()) {
            std::copy(it->second.begin(), it->second.end(), w + row * d);
        } else {
            for (std::size_t j = 0; j < d; ++j)
                w[row * d + j] = static_cast<float>(rng.uniform(-range, range));
        }
    }
}

}  // namespace

EmbeddingTable init_embeddings(const Vocabulary& vocab, std::size_t dim, double init_range,
                               Rng& rng) {
    EmbeddingTable table;
    table.dim = dim;
    table.weights = make_tensor<float>({vocab.size(), dim});
    table.weights->requires_grad = true;
    fill_random_rows(table, vocab, {}, init_range, rng);
    return table;
}

EmbeddingTable load_pretrained(const std::string& path, const Vocabulary& vocab, std::size_t dim,
                               Rng& rng) {
    std::ifstream in(path);
    check(in.good(), "load_pretrained: cannot open ", path);

    std::unordered_map<std::int32_t, std::vector<float>> found;
    std::size_t skipped = 0;
    std::size_t file_arity = 0;
    std::string line;
    std::vector<float> vec;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::size_t sp = line.find(' ');
        if (sp == std::string::npos || sp == 0) {
            ++skipped;
            continue;
        }
        vec.clear();
        const char* p = line.c_str() + sp;
        char* end = nullptr;
        while (*p) {
            const float v = std::strtof(p, &end);
            if (end == p) break;
            vec.push_back(v);
            p = end;
        }
        if (file_arity == 0 && !vec.empty()) {
            file_arity = vec.size();
            check(file_arity == dim, "load_pretrained: file ", path, " has ", file_arity,
                  "-dimensional vectors, expected ", dim);
        }
        if (vec.size() != dim) {
            ++skipped;
            continue;
        }
        const std::string token = line.substr(0, sp);
        const std::int32_t id = vocab.id(token);
        if (id != Vocabulary::kUnk && id != Vocabulary::kPad && vocab.token(id) == token)
            found.emplace(id, vec);
    }
    check(file_arity != 0, "load_pretrained: no parseable vectors in ", path);

    EmbeddingTable table;
    table.dim = dim;
    table.weights = make_tensor<float>({vocab.size(), dim});
    table.weights->requires_grad = true;
    table.skipped_lines = skipped;
    fill_random_rows(table, vocab, found, 0.01, rng);
    const std::size_t non_reserved = vocab.size() > 2 ? vocab.size() - 2 : 0;
    table.coverage =
        non_reserved == 0 ? 0.0 : static_cast<double>(found.size()) / static_cast<double>(non_reserved);
    return table;
}

}  // namespace regtext::corpus
