#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace strug::sql {

enum class TokenKind { Keyword, Identifier, Number, String, Operator, Punct, End };

struct SqlToken {
    TokenKind kind = TokenKind::End;
    /// Source text, quotes included for strings and quoted identifiers.
    std::string text;
    /// Uppercased keyword, unquoted identifier, or the operator/punct itself.
    std::string value;
    std::size_t offset = 0;
};

/// Tokens of a Spider-style SQL string, ending with an End token. Throws UnsupportedSyntax on
/// unterminated quotes or characters outside the subset.
std::vector<SqlToken> lex(std::string_view sql);

bool is_keyword(std::string_view upper);
bool is_aggregate(std::string_view upper);

}  // namespace strug::sql
