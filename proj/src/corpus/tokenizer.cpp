#include "regtext/corpus/tokenizer.hpp"

#include <cctype>

namespace regtext::corpus {

namespace {

bool is_word_char(unsigned char c) {
    // letters, digits, and non-ASCII bytes (UTF-8 continuation) stay inside
    // a token; apostrophes are handled by the contraction pass
    return std::isalnum(c) || c >= 0x80;
}

bool ends_with(const std::string& s, const char* suffix) {
    const std::size_t n = std::char_traits<char>::length(suffix);
    return s.size() >= n && s.compare(s.size() - n, n, suffix) == 0;
}

// Splits a word containing apostrophes into stable contraction pieces.
void emit_word(const std::string& word, std::vector<std::string>& out) {
    if (word.find('\'') == std::string::npos) {
        out.push_back(word);
        return;
    }
    if (ends_with(word, "n't") && word.size() > 3) {
        emit_word(word.substr(0, word.size() - 3), out);
        out.push_back("n't");
        return;
    }
    for (const char* suffix : {"'s", "'re", "'ve", "'ll", "'d", "'m"}) {
        const std::size_t n = std::char_traits<char>::length(suffix);
        if (ends_with(word, suffix) && word.size() > n) {
            emit_word(word.substr(0, word.size() - n), out);
            out.push_back(suffix);
            return;
        }
    }
    // fallback: apostrophes become standalone tokens
    std::string piece;
    for (char c : word) {
        if (c == '\'') {
            if (!piece.empty()) out.push_back(piece);
            piece.clear();
            out.push_back("'");
        } else {
            piece += c;
        }
    }
    if (!piece.empty()) out.push_back(piece);
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string word;
    auto flush = [&]() {
        if (!word.empty()) {
            emit_word(word, out);
            word.clear();
        }
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const unsigned char c = static_cast<unsigned char>(text[i]);
        if (is_word_char(c)) {
            word += static_cast<char>(std::isupper(c) ? std::tolower(c) : c);
        } else if (c == '\'') {
            // apostrophe binds only between word characters
            const bool prev_word = !word.empty();
            const bool next_word =
                i + 1 < text.size() && is_word_char(static_cast<unsigned char>(text[i + 1]));
            if (prev_word && next_word) {
                word += '\'';
            } else {
                flush();
                out.push_back("'");
            }
        } else if (std::isspace(c)) {
            flush();
        } else {
            flush();
            out.push_back(std::string(1, static_cast<char>(c)));
        }
    }
    flush();
    return out;
}

}  // namespace regtext::corpus
