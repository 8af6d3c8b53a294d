#include "strug/sql_lexer.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include "strug/errors.hpp"

namespace strug::sql {

namespace {

constexpr std::array kKeywords = {
    "SELECT", "FROM",  "WHERE",  "GROUP",  "BY",     "HAVING", "ORDER", "LIMIT",     "JOIN",   "ON",
    "AS",     "AND",   "OR",     "NOT",    "IN",     "LIKE",   "BETWEEN", "IS",      "NULL",   "DISTINCT",
    "ASC",    "DESC",  "UNION",  "INTERSECT", "EXCEPT", "INNER", "LEFT", "RIGHT",   "OUTER",  "CROSS",
    "EXISTS", "ALL",   "CASE",   "WHEN",   "THEN",   "ELSE",   "END",   "OFFSET",  "NATURAL", "USING",
    "COUNT",  "SUM",   "AVG",    "MIN",    "MAX"};

constexpr std::array kAggregates = {"COUNT", "SUM", "AVG", "MIN", "MAX"};

std::string upper(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

bool ident_start(unsigned char c) { return std::isalpha(c) || c == '_' || c >= 0x80; }
bool ident_char(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }

}  // namespace

bool is_keyword(std::string_view u) {
    return std::find(kKeywords.begin(), kKeywords.end(), u) != kKeywords.end();
}

bool is_aggregate(std::string_view u) {
    return std::find(kAggregates.begin(), kAggregates.end(), u) != kAggregates.end();
}

std::vector<SqlToken> lex(std::string_view sql) {
    std::vector<SqlToken> out;
    std::size_t i = 0;
    const std::size_t n = sql.size();
    while (i < n) {
        const auto c = static_cast<unsigned char>(sql[i]);
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        const std::size_t start = i;
        if (c == '\'' || c == '"' || c == '`') {
            const char quote = static_cast<char>(c);
            std::string inner;
            ++i;
            bool closed = false;
            while (i < n) {
                if (sql[i] == quote) {
                    if (i + 1 < n && sql[i + 1] == quote) {
                        inner.push_back(quote);
                        i += 2;
                        continue;
                    }
                    ++i;
                    closed = true;
                    break;
                }
                inner.push_back(sql[i++]);
            }
            if (!closed) throw UnsupportedSyntax(std::string(sql.substr(start)), start, "unterminated quote");
            const auto kind = quote == '`' ? TokenKind::Identifier : TokenKind::String;
            out.push_back({kind, std::string(sql.substr(start, i - start)), inner, start});
        } else if (std::isdigit(c) || (c == '.' && i + 1 < n && std::isdigit(static_cast<unsigned char>(sql[i + 1])))) {
            while (i < n && (std::isdigit(static_cast<unsigned char>(sql[i])) || sql[i] == '.')) ++i;
            if (i < n && (sql[i] == 'e' || sql[i] == 'E')) {
                std::size_t j = i + 1;
                if (j < n && (sql[j] == '+' || sql[j] == '-')) ++j;
                if (j < n && std::isdigit(static_cast<unsigned char>(sql[j]))) {
                    i = j;
                    while (i < n && std::isdigit(static_cast<unsigned char>(sql[i]))) ++i;
                }
            }
            const std::string text(sql.substr(start, i - start));
            out.push_back({TokenKind::Number, text, text, start});
        } else if (ident_start(c)) {
            while (i < n && ident_char(static_cast<unsigned char>(sql[i]))) ++i;
            const std::string text(sql.substr(start, i - start));
            const std::string up = upper(text);
            if (is_keyword(up)) out.push_back({TokenKind::Keyword, text, up, start});
            else out.push_back({TokenKind::Identifier, text, text, start});
        } else {
            static constexpr std::array kTwo = {"<=", ">=", "<>", "!=", "==", "||"};
            std::string op;
            if (i + 1 < n) {
                const std::string two(sql.substr(i, 2));
                if (std::find(kTwo.begin(), kTwo.end(), two) != kTwo.end()) op = two;
            }
            if (op.empty()) {
                if (std::string_view("=<>+-*/%").find(static_cast<char>(c)) != std::string_view::npos) {
                    op = std::string(1, static_cast<char>(c));
                } else if (std::string_view("(),.;").find(static_cast<char>(c)) != std::string_view::npos) {
                    out.push_back({TokenKind::Punct, std::string(1, static_cast<char>(c)), std::string(1, static_cast<char>(c)), start});
                    ++i;
                    continue;
                } else {
                    throw UnsupportedSyntax(std::string(1, static_cast<char>(c)), start, "unexpected character");
                }
            }
            i += op.size();
            out.push_back({TokenKind::Operator, op, op, start});
        }
    }
    out.push_back({TokenKind::End, "", "", n});
    return out;
}

}  // namespace strug::sql
