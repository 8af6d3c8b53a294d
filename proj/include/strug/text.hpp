#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace strug {

/// A normalized token plus the byte range it came from in the source text.
struct Token {
    std::string text;
    std::string raw;
    std::size_t begin = 0;
    std::size_t end = 0;

    friend bool operator==(const Token&, const Token&) = default;
};

/// The single tokenizer used by the matcher, the linearizer and curation.
/// Lowercases ASCII, splits on whitespace, and emits every ASCII punctuation character as its
/// own token. Runs of letters, digits and non-ASCII bytes stay whole.
std::vector<Token> tokenize(std::string_view text);

std::vector<std::string> token_texts(const std::vector<Token>& tokens);

/// Space-joined tokens.
std::string detokenize(const std::vector<std::string>& tokens);

/// detokenize(tokenize(text)).
std::string normalize_text(std::string_view text);

bool is_punct_token(std::string_view token);

bool is_numeric_token(std::string_view token);

/// Number of UTF-8 code points.
std::size_t utf8_length(std::string_view s);

}  // namespace strug
