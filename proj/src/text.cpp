#include "strug/text.hpp"

#include <algorithm>
#include <cctype>

namespace strug {

namespace {

bool is_ascii_space(unsigned char c) { return c < 0x80 && std::isspace(c); }
bool is_ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

}  // namespace

std::vector<Token> tokenize(std::string_view text) {
    std::vector<Token> out;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (is_ascii_space(c)) {
            ++i;
        } else if (is_ascii_punct(c)) {
            out.push_back({std::string(1, static_cast<char>(c)), std::string(1, static_cast<char>(c)), i, i + 1});
            ++i;
        } else {
            const std::size_t start = i;
            std::string word;
            while (i < n) {
                const auto d = static_cast<unsigned char>(text[i]);
                if (is_ascii_space(d) || is_ascii_punct(d)) break;
                word.push_back(d < 0x80 ? static_cast<char>(std::tolower(d)) : static_cast<char>(d));
                ++i;
            }
            out.push_back({std::move(word), std::string(text.substr(start, i - start)), start, i});
        }
    }
    return out;
}

std::vector<std::string> token_texts(const std::vector<Token>& tokens) {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(t.text);
    return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

std::string normalize_text(std::string_view text) { return detokenize(token_texts(tokenize(text))); }

bool is_punct_token(std::string_view token) {
    return !token.empty() &&
           std::all_of(token.begin(), token.end(), [](char c) { return is_ascii_punct(static_cast<unsigned char>(c)); });
}

bool is_numeric_token(std::string_view token) {
    return !token.empty() && std::all_of(token.begin(), token.end(), [](char c) { return c >= '0' && c <= '9'; });
}

std::size_t utf8_length(std::string_view s) {
    return static_cast<std::size_t>(
        std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

}  // namespace strug
