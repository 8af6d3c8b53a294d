#include "strug/weak_labeler.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>
#include <tuple>

namespace strug {

using nlohmann::json;

std::string to_string(SpanSource s) {
    return s == SpanSource::HighlightedCellMatch ? "highlighted_cell_match" : "auto_cell_match";
}

std::string to_string(LabelSetting s) { return s == LabelSetting::Human ? "human" : "auto"; }

LabelSetting parse_setting(std::string_view s) {
    if (s == "human") return LabelSetting::Human;
    if (s == "auto") return LabelSetting::Auto;
    throw std::invalid_argument("setting must be 'human' or 'auto', got '" + std::string(s) + "'");
}

namespace {

struct PatternToken {
    std::string folded;
    std::string raw;
};

std::vector<PatternToken> pattern_tokens(std::string_view cell_value, const MatchPolicy& policy) {
    auto toks = tokenize(cell_value);
    std::size_t lo = 0, hi = toks.size();
    if (policy.strip_punct_edges) {
        while (lo < hi && is_punct_token(toks[lo].text)) ++lo;
        while (hi > lo && is_punct_token(toks[hi - 1].text)) --hi;
    }
    std::vector<PatternToken> out;
    for (std::size_t i = lo; i < hi; ++i) out.push_back({toks[i].text, toks[i].raw});
    std::vector<std::string> joined;
    for (const auto& t : out) joined.push_back(t.folded);
    if (static_cast<int>(utf8_length(detokenize(joined))) < std::max(policy.min_chars, 1)) out.clear();
    return out;
}

bool token_equal(const PatternToken& p, const Token& t, const MatchPolicy& policy, bool single_numeric) {
    const std::string& lhs = policy.case_fold ? p.folded : p.raw;
    const std::string& rhs = policy.case_fold ? t.text : t.raw;
    if (lhs == rhs) return true;
    if (single_numeric && !policy.numeric_exact && rhs.size() > lhs.size() && rhs.compare(0, lhs.size(), lhs) == 0) {
        return std::all_of(rhs.begin() + static_cast<long>(lhs.size()), rhs.end(),
                           [](char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; });
    }
    return false;
}

struct Candidate {
    std::size_t start;
    std::size_t end;
    std::size_t row;
    std::size_t col;
};

std::vector<Candidate> candidates_for(const Table& table, const std::vector<CellRef>& cells,
                                      const std::vector<Token>& tokens, const MatchPolicy& policy) {
    std::vector<Candidate> out;
    for (const auto& c : cells) {
        for (auto [s, e] : match_cell_to_sentence(table.rows[c.row][c.col], tokens, policy))
            out.push_back({s, e, c.row, c.col});
    }
    return out;
}

/// Greedy overlap resolution. Candidates with an extent identical to an accepted one are merged
/// (their column joins the alignment); any other overlap is suppressed.
std::vector<Candidate> resolve_overlaps(std::vector<Candidate> cands, const MatchPolicy& policy) {
    auto before = [&](const Candidate& a, const Candidate& b) {
        const std::size_t la = a.end - a.start, lb = b.end - b.start;
        if (policy.longest_first) {
            if (la != lb) return la > lb;
            return std::tie(a.start, a.col, a.row) < std::tie(b.start, b.col, b.row);
        }
        if (a.start != b.start) return a.start < b.start;
        if (a.col != b.col) return a.col < b.col;
        if (la != lb) return la > lb;
        return a.row < b.row;
    };
    std::stable_sort(cands.begin(), cands.end(), before);

    std::vector<Candidate> accepted;
    for (const auto& c : cands) {
        bool same_extent = false, overlaps = false;
        for (const auto& a : accepted) {
            if (a.start == c.start && a.end == c.end) {
                same_extent = true;
                break;
            }
            if (c.start < a.end && a.start < c.end) overlaps = true;
        }
        if (same_extent || !overlaps) accepted.push_back(c);
    }
    return accepted;
}

std::vector<CellRef> valid_unique(const Table& table, const std::vector<CellRef>& cells) {
    std::set<CellRef> seen;
    std::vector<CellRef> out;
    for (const auto& c : cells) {
        if (c.row >= table.rows.size() || c.col >= table.columns.size() || c.col >= table.rows[c.row].size()) continue;
        if (seen.insert(c).second) out.push_back(c);
    }
    return out;
}

std::vector<CellRef> all_cells(const Table& table) {
    std::vector<CellRef> out;
    for (std::size_t r = 0; r < table.rows.size(); ++r)
        for (std::size_t c = 0; c < std::min(table.rows[r].size(), table.columns.size()); ++c) out.push_back({r, c});
    return out;
}

/// Shared label construction for both settings.
Labeling label_from_cells(const ParallelExample& ex, const std::vector<CellRef>& cells, const MatchPolicy& policy,
                          SpanSource source) {
    const auto tokens = tokenize(ex.sentence);
    const auto usable = valid_unique(ex.table, cells);

    Labeling out;
    out.labels.y_col.assign(ex.table.columns.size(), 0);
    for (const auto& c : usable) out.labels.y_col[c.col] = 1;

    auto accepted = resolve_overlaps(candidates_for(ex.table, usable, tokens, policy), policy);
    std::sort(accepted.begin(), accepted.end(), [](const Candidate& a, const Candidate& b) {
        return std::tie(a.start, a.end, a.col, a.row) < std::tie(b.start, b.end, b.col, b.row);
    });
    for (const auto& a : accepted) {
        const bool dup = !out.spans.empty() && out.spans.back().start_token == a.start &&
                         out.spans.back().end_token == a.end && out.spans.back().col_index == a.col;
        if (!dup) out.spans.push_back({a.start, a.end, source, a.row, a.col});
    }
    apply_spans(out.labels, tokens.size(), out.spans);
    return out;
}

}  // namespace

std::vector<std::string> cell_pattern(std::string_view cell_value, const MatchPolicy& policy) {
    std::vector<std::string> out;
    for (auto& p : pattern_tokens(cell_value, policy)) out.push_back(policy.case_fold ? p.folded : p.raw);
    return out;
}

std::vector<std::pair<std::size_t, std::size_t>> match_cell_to_sentence(std::string_view cell_value,
                                                                        const std::vector<Token>& sentence_tokens,
                                                                        const MatchPolicy& policy) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    const auto pattern = pattern_tokens(cell_value, policy);
    if (pattern.empty() || pattern.size() > sentence_tokens.size()) return out;
    const bool single_numeric = pattern.size() == 1 && is_numeric_token(pattern[0].folded);

    std::size_t i = 0;
    while (i + pattern.size() <= sentence_tokens.size()) {
        bool hit = true;
        for (std::size_t k = 0; k < pattern.size() && hit; ++k)
            hit = token_equal(pattern[k], sentence_tokens[i + k], policy, single_numeric);
        if (hit) {
            out.emplace_back(i, i + pattern.size());
            i += pattern.size();
        } else {
            ++i;
        }
    }
    return out;
}

Labeling derive_labels_human_assisted(const ParallelExample& ex, const MatchPolicy& policy) {
    return label_from_cells(ex, ex.highlighted_cells, policy, SpanSource::HighlightedCellMatch);
}

std::vector<CellRef> auto_matched_cells(const ParallelExample& ex, const MatchPolicy& policy) {
    const auto tokens = tokenize(ex.sentence);
    const auto accepted = resolve_overlaps(candidates_for(ex.table, all_cells(ex.table), tokens, policy), policy);
    std::set<CellRef> cells;
    for (const auto& a : accepted) cells.insert({a.row, a.col});
    return {cells.begin(), cells.end()};
}

Labeling derive_labels_automatic(const ParallelExample& ex, const MatchPolicy& policy) {
    return label_from_cells(ex, auto_matched_cells(ex, policy), policy, SpanSource::AutoCellMatch);
}

Labeling derive_labels(const ParallelExample& ex, LabelSetting setting, const MatchPolicy& policy) {
    return setting == LabelSetting::Human ? derive_labels_human_assisted(ex, policy)
                                          : derive_labels_automatic(ex, policy);
}

void apply_spans(GroundingLabels& labels, std::size_t num_tokens, const std::vector<TokenSpan>& spans) {
    labels.y_val.assign(num_tokens, 0);
    labels.y_map.assign(num_tokens, {});
    for (const auto& s : spans) {
        if (s.start_token >= s.end_token || s.end_token > num_tokens)
            throw std::out_of_range("span [" + std::to_string(s.start_token) + ", " + std::to_string(s.end_token) +
                                    ") outside " + std::to_string(num_tokens) + " tokens");
        for (std::size_t t = s.start_token; t < s.end_token; ++t) {
            labels.y_val[t] = 1;
            auto& m = labels.y_map[t];
            const int col = static_cast<int>(s.col_index);
            if (auto it = std::lower_bound(m.begin(), m.end(), col); it == m.end() || *it != col) m.insert(it, col);
        }
    }
}

std::vector<std::string> check_label_consistency(const GroundingLabels& labels) {
    std::vector<std::string> out;
    if (labels.y_val.size() != labels.y_map.size())
        out.push_back("y_val has " + std::to_string(labels.y_val.size()) + " entries but y_map has " +
                      std::to_string(labels.y_map.size()));
    const std::size_t n = std::min(labels.y_val.size(), labels.y_map.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (!labels.y_map[i].empty() && labels.y_val[i] != 1)
            out.push_back("token " + std::to_string(i) + " is mapped but has y_val=0");
        for (int j : labels.y_map[i]) {
            if (j < 0 || static_cast<std::size_t>(j) >= labels.y_col.size())
                out.push_back("token " + std::to_string(i) + " maps to missing column " + std::to_string(j));
            else if (labels.y_col[j] != 1)
                out.push_back("token " + std::to_string(i) + " maps to column " + std::to_string(j) +
                              " which has y_col=0");
        }
    }
    return out;
}

json to_json(const GroundingLabels& labels) {
    json ymap = json::array();
    for (std::size_t i = 0; i < labels.y_map.size(); ++i)
        if (!labels.y_map[i].empty()) ymap.push_back(json::array({i, labels.y_map[i]}));
    return json{{"y_col", labels.y_col}, {"y_val", labels.y_val}, {"y_map", ymap}};
}

json to_json(const TokenSpan& s) {
    return json{{"start", s.start_token}, {"end", s.end_token}, {"source", to_string(s.source)},
                {"row", s.row_index}, {"col", s.col_index}};
}

GroundingLabels labels_from_json(const json& j) {
    GroundingLabels l;
    l.y_col = j.at("y_col").get<std::vector<int>>();
    l.y_val = j.at("y_val").get<std::vector<int>>();
    l.y_map.assign(l.y_val.size(), {});
    for (const auto& entry : j.at("y_map")) {
        const auto i = entry.at(0).get<std::size_t>();
        if (i >= l.y_map.size()) throw std::invalid_argument("y_map token index out of range");
        auto cols = entry.at(1).get<std::vector<int>>();
        std::sort(cols.begin(), cols.end());
        cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
        l.y_map[i] = std::move(cols);
    }
    return l;
}

TokenSpan span_from_json(const json& j) {
    TokenSpan s;
    s.start_token = j.at("start").get<std::size_t>();
    s.end_token = j.at("end").get<std::size_t>();
    s.source = j.value("source", std::string("auto_cell_match")) == "highlighted_cell_match"
                   ? SpanSource::HighlightedCellMatch
                   : SpanSource::AutoCellMatch;
    s.row_index = j.at("row").get<std::size_t>();
    s.col_index = j.at("col").get<std::size_t>();
    return s;
}

json label_record(const std::string& example_id, const Labeling& labeling, LabelSetting setting) {
    json j = to_json(labeling.labels);
    json spans = json::array();
    for (const auto& s : labeling.spans) spans.push_back(to_json(s));
    json out{{"example_id", example_id}};
    out["y_col"] = j["y_col"];
    out["y_val"] = j["y_val"];
    out["y_map"] = j["y_map"];
    out["spans"] = spans;
    out["setting"] = to_string(setting);
    return out;
}

void from_json(const json& j, MatchPolicy& p) {
    p.case_fold = j.value("case_fold", p.case_fold);
    p.strip_punct_edges = j.value("strip_punct_edges", p.strip_punct_edges);
    p.min_chars = j.value("min_chars", p.min_chars);
    p.numeric_exact = j.value("numeric_exact", p.numeric_exact);
    p.longest_first = j.value("longest_first", p.longest_first);
    if (p.min_chars < 1) throw std::invalid_argument("min_chars must be >= 1");
}

void to_json(json& j, const MatchPolicy& p) {
    j = json{{"case_fold", p.case_fold},
             {"strip_punct_edges", p.strip_punct_edges},
             {"min_chars", p.min_chars},
             {"numeric_exact", p.numeric_exact},
             {"longest_first", p.longest_first}};
}

}  // namespace strug
