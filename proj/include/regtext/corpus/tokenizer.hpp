#pragma once

#include <string>
#include <vector>

namespace regtext::corpus {

// Deterministic rule-based word tokenizer: lowercases, splits on whitespace,
// emits punctuation as standalone tokens, and splits common English
// contractions ("don't" -> "do" + "n't", "it's" -> "it" + "'s"). No external
// tokenizer defines correctness; a golden-file test pins the behavior.
std::vector<std::string> tokenize(const std::string& text);

}  // namespace regtext::corpus
