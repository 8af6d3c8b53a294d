#include "strug/curation.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>

#include "strug/sql_lexer.hpp"
#include "strug/text.hpp"

namespace strug {

using nlohmann::json;
using sql::SqlToken;
using sql::TokenKind;

std::string to_string(Clause c) {
    switch (c) {
        case Clause::Select: return "SELECT";
        case Clause::Where: return "WHERE";
        case Clause::GroupBy: return "GROUP_BY";
        case Clause::Having: return "HAVING";
        case Clause::OrderBy: return "ORDER_BY";
    }
    return "?";
}

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

enum class OperandKind { Literal, Column, Subquery, Null, Other };

struct Operand {
    OperandKind kind = OperandKind::Other;
    std::vector<std::size_t> refs;
};

constexpr int kMaxDepth = 1;

/// Recursive-descent reader for the Spider subset. Collects usages while parsing.
class ClauseParser {
public:
    explicit ClauseParser(std::string_view text) : tokens_(sql::lex(text)) {}

    std::vector<ClauseUsage> run() {
        parse_query(0);
        if (peek().kind == TokenKind::Punct && peek().value == ";") advance();
        if (peek().kind != TokenKind::End) fail("trailing tokens");
        return std::move(usages_);
    }

private:
    const SqlToken& peek(std::size_t ahead = 0) const {
        return tokens_[std::min(pos_ + ahead, tokens_.size() - 1)];
    }
    const SqlToken& advance() { return tokens_[pos_ < tokens_.size() - 1 ? pos_++ : pos_]; }

    [[noreturn]] void fail(const std::string& what) const { throw UnsupportedSyntax(peek().text, peek().offset, what); }

    bool at_kw(std::string_view kw, std::size_t ahead = 0) const {
        return peek(ahead).kind == TokenKind::Keyword && peek(ahead).value == kw;
    }
    bool at_punct(std::string_view p) const { return peek().kind == TokenKind::Punct && peek().value == p; }
    bool at_op(std::string_view p) const { return peek().kind == TokenKind::Operator && peek().value == p; }

    bool accept_kw(std::string_view kw) {
        if (!at_kw(kw)) return false;
        advance();
        return true;
    }
    void expect_kw(std::string_view kw) {
        if (!accept_kw(kw)) fail("expected " + std::string(kw));
    }
    void expect_punct(std::string_view p) {
        if (!at_punct(p)) fail("expected '" + std::string(p) + "'");
        advance();
    }

    bool at_subquery() const { return at_punct("(") && at_kw("SELECT", 1); }

    void parse_query(int depth) {
        if (depth > kMaxDepth) fail("subquery nested deeper than one level");
        parse_select_core(depth);
        while (at_kw("UNION") || at_kw("INTERSECT") || at_kw("EXCEPT")) {
            advance();
            accept_kw("ALL");
            parse_select_core(depth);
        }
    }

    Operand parse_subquery(int depth) {
        expect_punct("(");
        const auto saved = clause_;
        parse_query(depth + 1);
        clause_ = saved;
        expect_punct(")");
        return {OperandKind::Subquery, {}};
    }

    void parse_select_core(int depth) {
        const auto saved_clause = clause_;
        const int saved_depth = depth_;
        depth_ = depth;
        aliases_.emplace_back();

        expect_kw("SELECT");
        if (!accept_kw("DISTINCT")) accept_kw("ALL");
        clause_ = Clause::Select;
        do {
            if (at_op("*")) {
                advance();
            } else {
                parse_expr();
            }
            if (accept_kw("AS")) {
                if (peek().kind != TokenKind::Identifier && peek().kind != TokenKind::String) fail("expected alias");
                aliases_.back().insert(lower(advance().value));
            } else if (peek().kind == TokenKind::Identifier) {
                aliases_.back().insert(lower(advance().value));
            }
        } while (at_punct(",") && (advance(), true));

        expect_kw("FROM");
        clause_.reset();
        parse_from(depth);

        if (accept_kw("WHERE")) {
            clause_ = Clause::Where;
            parse_condition();
        }
        if (at_kw("GROUP")) {
            advance();
            expect_kw("BY");
            clause_ = Clause::GroupBy;
            do {
                parse_expr();
            } while (at_punct(",") && (advance(), true));
        }
        if (accept_kw("HAVING")) {
            clause_ = Clause::Having;
            parse_condition();
        }
        if (at_kw("ORDER")) {
            advance();
            expect_kw("BY");
            clause_ = Clause::OrderBy;
            do {
                parse_expr();
                if (!accept_kw("ASC")) accept_kw("DESC");
            } while (at_punct(",") && (advance(), true));
        }
        if (accept_kw("LIMIT")) {
            if (peek().kind != TokenKind::Number) fail("expected LIMIT count");
            advance();
            if (accept_kw("OFFSET") || (at_punct(",") && (advance(), true))) {
                if (peek().kind != TokenKind::Number) fail("expected OFFSET count");
                advance();
            }
        }

        aliases_.pop_back();
        clause_ = saved_clause;
        depth_ = saved_depth;
    }

    void parse_table_ref(int depth) {
        if (at_subquery()) {
            parse_subquery(depth);
        } else if (peek().kind == TokenKind::Identifier) {
            advance();
        } else {
            fail("expected table name");
        }
        if (accept_kw("AS")) {
            if (peek().kind != TokenKind::Identifier) fail("expected table alias");
            advance();
        } else if (peek().kind == TokenKind::Identifier) {
            advance();
        }
    }

    bool accept_join() {
        const std::size_t start = pos_;
        accept_kw("NATURAL");
        if (accept_kw("LEFT") || accept_kw("RIGHT")) accept_kw("OUTER");
        else if (!accept_kw("INNER")) accept_kw("CROSS");
        if (accept_kw("JOIN")) return true;
        pos_ = start;
        return false;
    }

    void parse_from(int depth) {
        parse_table_ref(depth);
        while (true) {
            if (at_punct(",")) {
                advance();
                parse_table_ref(depth);
            } else if (accept_join()) {
                parse_table_ref(depth);
                if (accept_kw("ON")) {
                    const auto saved = clause_;
                    clause_.reset();
                    parse_condition();
                    clause_ = saved;
                }
            } else {
                break;
            }
        }
    }

    // Conditions -------------------------------------------------------------------------------

    void parse_condition() {
        parse_and();
        while (accept_kw("OR")) parse_and();
    }

    void parse_and() {
        parse_not();
        while (accept_kw("AND")) parse_not();
    }

    void parse_not() {
        if (accept_kw("NOT")) {
            parse_not();
            return;
        }
        parse_predicate();
    }

    static bool is_comparison(const SqlToken& t) {
        if (t.kind != TokenKind::Operator) return false;
        static const std::set<std::string> ops{"=", "==", "!=", "<>", "<", ">", "<=", ">="};
        return ops.count(t.value) != 0;
    }

    void parse_predicate() {
        if (accept_kw("EXISTS")) {
            parse_subquery(depth_);
            return;
        }
        if (at_punct("(") && !at_subquery()) {
            // Parenthesized condition, unless it turns out to be a parenthesized operand.
            const std::size_t pos = pos_;
            const std::size_t n_usages = usages_.size();
            try {
                advance();
                parse_condition();
                expect_punct(")");
                if (!is_comparison(peek()) && peek().kind != TokenKind::Operator && !at_kw("LIKE") &&
                    !at_kw("IN") && !at_kw("BETWEEN") && !at_kw("IS") && !at_kw("NOT"))
                    return;
            } catch (const UnsupportedSyntax&) {
            }
            pos_ = pos;
            usages_.resize(n_usages);
        }

        Operand lhs = parse_expr();
        const bool negated = accept_kw("NOT");
        if (!negated && is_comparison(peek())) {
            advance();
            Operand rhs = parse_expr();
            mark_comparison(lhs, rhs);
        } else if (accept_kw("LIKE")) {
            Operand rhs = parse_expr();
            mark_comparison(lhs, rhs);
        } else if (accept_kw("IN")) {
            if (at_subquery()) {
                parse_subquery(depth_);
            } else {
                expect_punct("(");
                bool all_literal = true;
                do {
                    all_literal = parse_expr().kind == OperandKind::Literal && all_literal;
                } while (at_punct(",") && (advance(), true));
                expect_punct(")");
                if (all_literal) mark(lhs);
            }
        } else if (accept_kw("BETWEEN")) {
            const Operand lo = parse_expr();
            expect_kw("AND");
            const Operand hi = parse_expr();
            if (lo.kind == OperandKind::Literal && hi.kind == OperandKind::Literal) mark(lhs);
        } else if (!negated && accept_kw("IS")) {
            accept_kw("NOT");
            expect_kw("NULL");
        } else {
            fail("expected a comparison");
        }
    }

    void mark(const Operand& op) {
        for (std::size_t r : op.refs) usages_[r].compared_against_value = true;
    }

    void mark_comparison(const Operand& lhs, const Operand& rhs) {
        if (rhs.kind == OperandKind::Literal) mark(lhs);
        if (lhs.kind == OperandKind::Literal) mark(rhs);
    }

    // Expressions ------------------------------------------------------------------------------

    Operand parse_expr() {
        Operand acc = parse_term();
        while (peek().kind == TokenKind::Operator &&
               (peek().value == "+" || peek().value == "-" || peek().value == "*" || peek().value == "/" ||
                peek().value == "%" || peek().value == "||")) {
            advance();
            Operand rhs = parse_term();
            acc.refs.insert(acc.refs.end(), rhs.refs.begin(), rhs.refs.end());
            if (acc.kind == OperandKind::Literal && rhs.kind == OperandKind::Literal) continue;
            acc.kind = (acc.kind == OperandKind::Column || rhs.kind == OperandKind::Column) ? OperandKind::Column
                                                                                            : OperandKind::Other;
        }
        return acc;
    }

    Operand parse_term() {
        const SqlToken& t = peek();
        if (t.kind == TokenKind::Number || t.kind == TokenKind::String) {
            advance();
            return {OperandKind::Literal, {}};
        }
        if (at_kw("NULL")) {
            advance();
            return {OperandKind::Null, {}};
        }
        if (at_op("-") || at_op("+")) {
            advance();
            return parse_term();
        }
        if (at_subquery()) return parse_subquery(depth_);
        if (at_punct("(")) {
            advance();
            Operand inner = parse_expr();
            expect_punct(")");
            return inner;
        }
        if (t.kind == TokenKind::Keyword && sql::is_aggregate(t.value)) {
            advance();
            expect_punct("(");
            accept_kw("DISTINCT");
            Operand inner;
            if (at_op("*")) {
                advance();
            } else {
                inner = parse_expr();
            }
            expect_punct(")");
            return {inner.refs.empty() ? OperandKind::Other : OperandKind::Column, inner.refs};
        }
        if (t.kind == TokenKind::Identifier) return parse_column_ref();
        fail("unsupported expression");
    }

    Operand parse_column_ref() {
        const SqlToken first = advance();
        if (at_punct("(")) throw UnsupportedSyntax(first.text, first.offset, "unsupported function");
        std::string qualifier;
        SqlToken name = first;
        if (at_punct(".")) {
            advance();
            if (at_op("*")) {
                advance();
                return {OperandKind::Other, {}};
            }
            if (peek().kind != TokenKind::Identifier) fail("expected column name");
            qualifier = first.value;
            name = advance();
        }
        Operand op{OperandKind::Column, {}};
        if (!clause_) return op;
        const std::string col = lower(name.value);
        if (qualifier.empty() && *clause_ != Clause::Select && !aliases_.empty() && aliases_.back().count(col))
            return op;
        op.refs.push_back(usages_.size());
        usages_.push_back({col, qualifier, *clause_, false, name.offset, depth_});
        return op;
    }

    std::vector<SqlToken> tokens_;
    std::size_t pos_ = 0;
    std::vector<ClauseUsage> usages_;
    std::optional<Clause> clause_;
    std::vector<std::set<std::string>> aliases_;
    int depth_ = 0;
};

std::string canonical_name(const std::string& column, const std::vector<TableSchema>& schema) {
    for (const auto& t : schema)
        for (const auto& c : t.column_names)
            if (lower(c) == column) return c;
    return column;
}

}  // namespace

std::vector<ClauseUsage> extract_clause_usage(std::string_view sql) { return ClauseParser(sql).run(); }

std::vector<ClauseUsage> constraint_columns(const std::vector<ClauseUsage>& usage) {
    std::vector<ClauseUsage> out;
    for (const auto& u : usage)
        if (u.clause != Clause::Select) out.push_back(u);
    return out;
}

std::string mention_form(std::string_view column) {
    std::string out = lower(column);
    std::replace(out.begin(), out.end(), '_', ' ');
    return out;
}

std::vector<Mention> flag_explicit_mentions(std::string_view question, const std::vector<TableSchema>& schema,
                                            const std::vector<ClauseUsage>& usage) {
    const auto q = tokenize(question);
    std::vector<Mention> out;
    for (std::size_t u = 0; u < usage.size(); ++u) {
        if (usage[u].clause == Clause::Select) continue;
        const auto pattern = token_texts(tokenize(mention_form(canonical_name(usage[u].column, schema))));
        if (pattern.empty() || pattern.size() > q.size()) continue;
        for (std::size_t i = 0; i + pattern.size() <= q.size(); ++i) {
            bool hit = true;
            for (std::size_t k = 0; k < pattern.size() && hit; ++k) hit = q[i + k].text == pattern[k];
            if (hit) out.push_back({usage[u].column, usage[u].clause, u, q[i].begin, q[i + pattern.size() - 1].end});
        }
    }
    return out;
}

bool is_complex_usage(const ClauseUsage& u) {
    if (u.clause == Clause::Select) return false;
    return u.compared_against_value || u.clause == Clause::OrderBy || u.clause == Clause::GroupBy ||
           u.clause == Clause::Having;
}

CurationReport build_curation_report(const std::vector<TextToSqlExample>& dataset) {
    CurationReport report;
    auto& ratio = report.mention_ratio;
    for (const auto& ex : dataset) {
        CurationEntry entry{ex.example_id, ex.question, ex.sql, {}, {}, false, std::nullopt};
        ExampleMentionStats stats{ex.example_id, 0, 0, std::nullopt};
        try {
            const auto usage = extract_clause_usage(ex.sql);
            entry.mentions = flag_explicit_mentions(ex.question, ex.schema, usage);
            std::set<std::size_t> mentioned;
            for (const auto& m : entry.mentions) mentioned.insert(m.usage_index);
            for (std::size_t u = 0; u < usage.size(); ++u) {
                if (usage[u].clause == Clause::Select) continue;
                entry.constraint_columns.push_back(usage[u]);
                ++stats.constraint_refs;
                if (mentioned.count(u)) ++stats.mentioned_refs;
                if (is_complex_usage(usage[u])) entry.is_complex = true;
            }
            ratio.total += stats.constraint_refs;
            ratio.mentioned += stats.mentioned_refs;
        } catch (const UnsupportedSyntax& e) {
            entry.error = e.what();
            stats.error = e.what();
        }
        report.entries.push_back(std::move(entry));
        ratio.per_example.push_back(std::move(stats));
    }
    ratio.empty_denominator = ratio.total == 0;
    ratio.ratio = ratio.total ? static_cast<double>(ratio.mentioned) / static_cast<double>(ratio.total) : 0.0;
    return report;
}

MentionRatio column_mention_ratio(const std::vector<TextToSqlExample>& dataset) {
    return build_curation_report(dataset).mention_ratio;
}

std::vector<std::string> select_complex_subset(const std::vector<TextToSqlExample>& dataset) {
    std::vector<std::string> out;
    for (const auto& ex : dataset) {
        try {
            const auto usage = extract_clause_usage(ex.sql);
            if (std::any_of(usage.begin(), usage.end(), is_complex_usage)) out.push_back(ex.example_id);
        } catch (const UnsupportedSyntax&) {
        }
    }
    return out;
}

json to_json(const ClauseUsage& u) {
    return json{{"column", u.column},
                {"qualifier", u.qualifier},
                {"clause", to_string(u.clause)},
                {"compared_against_value", u.compared_against_value},
                {"offset", u.offset},
                {"depth", u.depth}};
}

json to_json(const CurationReport& r) {
    json examples = json::array();
    for (const auto& e : r.entries) {
        json cols = json::array();
        for (const auto& u : e.constraint_columns) cols.push_back(to_json(u));
        json mentions = json::array();
        for (const auto& m : e.mentions) {
            mentions.push_back(json{{"column", m.column},
                                    {"clause", to_string(m.clause)},
                                    {"begin", m.begin},
                                    {"end", m.end},
                                    {"text", e.question.substr(m.begin, m.end - m.begin)}});
        }
        json j{{"id", e.example_id},     {"question", e.question}, {"sql", e.sql},
               {"is_complex", e.is_complex}, {"constraint_columns", cols}, {"mentions", mentions}};
        if (e.error) j["error"] = *e.error;
        examples.push_back(std::move(j));
    }
    const auto& mr = r.mention_ratio;
    return json{{"column_mention_ratio", mr.ratio},
                {"mentioned", mr.mentioned},
                {"total", mr.total},
                {"empty_denominator", mr.empty_denominator},
                {"examples", examples}};
}

std::string format_flag_listing(const CurationReport& r) {
    std::string out;
    for (const auto& e : r.entries) {
        out += "[" + e.example_id + "] " + e.question + "\n";
        if (e.error) {
            out += "  ! " + *e.error + "\n";
            continue;
        }
        for (const auto& m : e.mentions) {
            out += "  " + to_string(m.clause) + " " + m.column + " @" + std::to_string(m.begin) + "-" +
                   std::to_string(m.end) + " \"" + e.question.substr(m.begin, m.end - m.begin) + "\"\n";
        }
        if (e.mentions.empty()) out += "  (no explicit column mentions)\n";
    }
    return out;
}

std::vector<TextToSqlExample> load_spider(const json& examples, const json* tables) {
    std::map<std::string, std::vector<TableSchema>> schemas;
    if (tables) {
        for (const auto& db : *tables) {
            std::vector<TableSchema> ts;
            const auto names = db.contains("table_names_original") ? db.at("table_names_original")
                                                                    : db.at("table_names");
            for (const auto& n : names) ts.push_back({n.get<std::string>(), {}});
            const auto cols = db.contains("column_names_original") ? db.at("column_names_original")
                                                                    : db.at("column_names");
            for (const auto& c : cols) {
                const int t = c.at(0).get<int>();
                if (t < 0 || static_cast<std::size_t>(t) >= ts.size()) continue;
                ts[static_cast<std::size_t>(t)].column_names.push_back(c.at(1).get<std::string>());
            }
            schemas[db.at("db_id").get<std::string>()] = std::move(ts);
        }
    }
    if (!examples.is_array()) throw std::invalid_argument("expected a JSON array of examples");
    std::vector<TextToSqlExample> out;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& e = examples[i];
        TextToSqlExample ex;
        if (auto it = e.find("id"); it != e.end()) ex.example_id = it->is_string() ? it->get<std::string>() : it->dump();
        else ex.example_id = std::to_string(i);
        ex.question = e.at("question").get<std::string>();
        ex.sql = e.contains("query") ? e.at("query").get<std::string>() : e.at("sql").get<std::string>();
        if (ex.question.empty() || ex.sql.empty())
            throw std::invalid_argument("example " + ex.example_id + " has an empty question or query");
        if (auto it = e.find("schema"); it != e.end()) {
            for (const auto& t : *it)
                ex.schema.push_back({t.at("table").get<std::string>(), t.at("columns").get<std::vector<std::string>>()});
        } else if (auto db = e.find("db_id"); db != e.end()) {
            if (auto s = schemas.find(db->get<std::string>()); s != schemas.end()) ex.schema = s->second;
        }
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace strug
