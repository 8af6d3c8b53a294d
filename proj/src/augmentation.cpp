#include "strug/augmentation.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

#include "strug/text.hpp"

namespace strug {

using nlohmann::json;

std::size_t AugmentedExample::total_columns() const {
    std::size_t n = 0;
    for (const auto& t : presented_tables) n += t.columns.size();
    return n;
}

AugmentedExample make_augmented(const ParallelExample& ex, const Labeling& labeling) {
    AugmentedExample out;
    out.base = ex;
    out.presented_tables = {ex.table};
    out.labels = labeling.labels;
    out.spans = labeling.spans;
    return out;
}

namespace {

struct SpanGroup {
    std::size_t start;
    std::size_t end;
    std::vector<std::size_t> members;  // indices into spans
};

std::vector<SpanGroup> group_by_extent(const std::vector<TokenSpan>& spans) {
    std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < spans.size(); ++i) groups[{spans[i].start_token, spans[i].end_token}].push_back(i);
    std::vector<SpanGroup> out;
    for (auto& [k, v] : groups) out.push_back({k.first, k.second, std::move(v)});
    for (std::size_t i = 1; i < out.size(); ++i)
        if (out[i].start < out[i - 1].end) throw std::invalid_argument("replace_values: spans overlap");
    return out;
}

/// Substring of `value` covered by its match pattern (edge punctuation dropped).
std::string insertable_text(const std::string& value, const MatchPolicy& policy) {
    auto toks = tokenize(value);
    std::size_t lo = 0, hi = toks.size();
    if (policy.strip_punct_edges) {
        while (lo < hi && is_punct_token(toks[lo].text)) ++lo;
        while (hi > lo && is_punct_token(toks[hi - 1].text)) --hi;
    }
    if (lo == hi) return {};
    return value.substr(toks[lo].begin, toks[hi - 1].end - toks[lo].begin);
}

}  // namespace

AugmentedExample replace_values(const AugmentedExample& in, const AugmentationConfig& cfg, Rng& rng) {
    if (cfg.replace_prob < 0.0 || cfg.replace_prob > 1.0) throw std::invalid_argument("replace_prob must be in [0,1]");
    AugmentedExample out = in;
    if (in.spans.empty()) return out;

    const std::string& sentence = in.base.sentence;
    const Table& table = in.base.table;
    const auto tokens = tokenize(sentence);
    const auto groups = group_by_extent(in.spans);
    const MatchPolicy policy;

    struct Piece {
        std::size_t group;
        std::string text;
        bool replaced;
        /// Source cell per aligned column; the first entry is the lead column's.
        std::vector<CellRef> sources;
    };
    std::vector<Piece> pieces;
    pieces.reserve(groups.size());

    // Matchable values of a column keyed by normalized text, each with its first row.
    auto column_values = [&](std::size_t col) {
        std::map<std::string, std::pair<std::string, std::size_t>> vals;
        for (std::size_t r = 0; r < table.rows.size(); ++r) {
            if (col >= table.rows[r].size() || cell_pattern(table.rows[r][col], policy).empty()) continue;
            std::string text = insertable_text(table.rows[r][col], policy);
            std::string key = normalize_text(text);
            vals.emplace(std::move(key), std::make_pair(std::move(text), r));
        }
        return vals;
    };

    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& grp = groups[g];
        if (grp.end > tokens.size()) throw std::out_of_range("replace_values: span outside sentence");
        const std::string old_text =
            sentence.substr(tokens[grp.start].begin, tokens[grp.end - 1].end - tokens[grp.start].begin);
        const double draw = rng.uniform01();
        Piece piece{g, old_text, false, {}};
        if (draw < cfg.replace_prob) {
            // A phrase aligned with several columns may only take a value all of them share.
            std::vector<std::size_t> cols;
            for (std::size_t m : grp.members)
                if (std::find(cols.begin(), cols.end(), in.spans[m].col_index) == cols.end())
                    cols.push_back(in.spans[m].col_index);
            std::vector<std::map<std::string, std::pair<std::string, std::size_t>>> others;
            for (std::size_t k = 1; k < cols.size(); ++k) others.push_back(column_values(cols[k]));

            const std::string old_norm = normalize_text(old_text);
            std::vector<std::pair<std::string, std::vector<CellRef>>> alternatives;
            std::set<std::string> seen{old_norm};
            for (std::size_t r = 0; r < table.rows.size(); ++r) {
                const std::size_t col = cols.front();
                if (col >= table.rows[r].size() || cell_pattern(table.rows[r][col], policy).empty()) continue;
                std::string text = insertable_text(table.rows[r][col], policy);
                const std::string norm = normalize_text(text);
                if (!seen.insert(norm).second) continue;
                std::vector<CellRef> sources{{r, col}};
                for (std::size_t k = 0; k < others.size() && sources.size() == k + 1; ++k) {
                    auto it = others[k].find(norm);
                    if (it != others[k].end()) sources.push_back({it->second.second, cols[k + 1]});
                }
                if (sources.size() == cols.size()) alternatives.emplace_back(std::move(text), std::move(sources));
            }
            if (!alternatives.empty()) {
                auto& pick = alternatives[rng.uniform_index(alternatives.size())];
                piece = {g, pick.first, true, pick.second};
            }
        }
        pieces.push_back(std::move(piece));
    }

    // Rebuild the sentence and track the byte range of every group in the new text.
    std::string rewritten;
    std::vector<std::pair<std::size_t, std::size_t>> new_ranges;
    std::size_t cursor = 0;
    for (const auto& p : pieces) {
        const auto& grp = groups[p.group];
        const std::size_t b = tokens[grp.start].begin, e = tokens[grp.end - 1].end;
        rewritten.append(sentence, cursor, b - cursor);
        const std::size_t nb = rewritten.size();
        rewritten += p.text;
        new_ranges.emplace_back(nb, rewritten.size());
        cursor = e;
    }
    rewritten.append(sentence, cursor, std::string::npos);

    const auto new_tokens = tokenize(rewritten);
    out.base.sentence = rewritten;
    out.provenance = in.provenance;

    std::size_t expected = tokens.size();
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& grp = groups[g];
        const auto& p = pieces[g];
        auto [nb, ne] = new_ranges[g];
        auto first = std::lower_bound(new_tokens.begin(), new_tokens.end(), nb,
                                      [](const Token& t, std::size_t off) { return t.begin < off; });
        auto last = std::lower_bound(first, new_tokens.end(), ne,
                                     [](const Token& t, std::size_t off) { return t.begin < off; });
        const auto ns = static_cast<std::size_t>(first - new_tokens.begin());
        const auto nend = static_cast<std::size_t>(last - new_tokens.begin());
        const std::size_t inserted = tokenize(p.text).size();
        if (first == new_tokens.end() || first->begin != nb || nend - ns != inserted)
            throw std::logic_error("replace_values: re-tokenization changed token boundaries");
        expected = expected - (grp.end - grp.start) + inserted;

        for (std::size_t m : grp.members) {
            TokenSpan& s = out.spans[m];
            s.start_token = ns;
            s.end_token = nend;
            if (!p.replaced) continue;
            for (const auto& src : p.sources)
                if (src.col == s.col_index) s.row_index = src.row;
        }
        if (p.replaced) {
            out.provenance.replacements.push_back(
                {grp.start, grp.end, ns, nend, sentence.substr(tokens[grp.start].begin,
                                                               tokens[grp.end - 1].end - tokens[grp.start].begin),
                 p.text, p.sources.front()});
        }
    }
    if (expected != new_tokens.size()) throw std::logic_error("replace_values: token count mismatch after rewrite");

    std::vector<int> y_col = out.labels.y_col;
    apply_spans(out.labels, new_tokens.size(), out.spans);
    out.labels.y_col = std::move(y_col);
    return out;
}

AugmentedExample sample_negative_tables(const AugmentedExample& in, const std::vector<Table>& corpus_index,
                                        const AugmentationConfig& cfg, Rng& rng) {
    if (cfg.k_neg < 0) throw std::invalid_argument("k_neg must be >= 0");
    AugmentedExample out = in;
    if (cfg.k_neg == 0) return out;

    std::set<std::string> excluded;
    for (const auto& t : in.presented_tables) excluded.insert(t.table_id);
    std::vector<const Table*> pool;
    std::set<std::string> seen;
    for (const auto& t : corpus_index) {
        if (excluded.count(t.table_id) || !seen.insert(t.table_id).second) continue;
        pool.push_back(&t);
    }
    const auto k = static_cast<std::size_t>(cfg.k_neg);
    if (pool.size() < k)
        throw InsufficientCorpus("need " + std::to_string(k) + " negative tables for '" + in.base.example_id +
                                 "', corpus has " + std::to_string(pool.size()));

    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.uniform_index(pool.size() - i);
        std::swap(pool[i], pool[j]);
        out.presented_tables.push_back(*pool[i]);
        out.labels.y_col.insert(out.labels.y_col.end(), pool[i]->columns.size(), 0);
        out.provenance.negative_table_ids.push_back(pool[i]->table_id);
    }
    return out;
}

AugmentedExample augment(const ParallelExample& ex, const Labeling& labeling, const std::vector<Table>& corpus_index,
                         const AugmentationConfig& cfg, std::uint64_t epoch) {
    Rng rng(derive_seed(cfg.seed, epoch, ex.example_id));
    auto out = replace_values(make_augmented(ex, labeling), cfg, rng);
    out = sample_negative_tables(out, corpus_index, cfg, rng);
    out.epoch = epoch;
    return out;
}

std::vector<Table> build_table_index(const std::vector<ParallelExample>& examples) {
    std::vector<Table> out;
    std::set<std::string> seen;
    for (const auto& ex : examples)
        if (seen.insert(ex.table.table_id).second) out.push_back(ex.table);
    return out;
}

json to_json(const AugmentedExample& ex) {
    json tables = json::array();
    for (const auto& t : ex.presented_tables) tables.push_back(to_json(t));
    json spans = json::array();
    for (const auto& s : ex.spans) spans.push_back(to_json(s));
    json reps = json::array();
    for (const auto& r : ex.provenance.replacements) {
        reps.push_back(json{{"old_span", {r.old_start, r.old_end}},
                            {"new_span", {r.new_start, r.new_end}},
                            {"old_phrase", r.old_phrase},
                            {"new_phrase", r.new_phrase},
                            {"source_cell", {r.source_cell.row, r.source_cell.col}}});
    }
    json base = to_json(ex.base);
    return json{{"example_id", ex.base.example_id},
                {"epoch", ex.epoch},
                {"sentence", ex.base.sentence},
                {"highlighted_cells", base["highlighted_cells"]},
                {"tables", tables},
                {"labels", to_json(ex.labels)},
                {"spans", spans},
                {"provenance", {{"replacements", reps}, {"negative_table_ids", ex.provenance.negative_table_ids}}}};
}

AugmentedExample augmented_from_json(const json& j) {
    AugmentedExample ex;
    ex.base.example_id = j.at("example_id").get<std::string>();
    ex.base.sentence = j.at("sentence").get<std::string>();
    ex.epoch = j.value("epoch", std::uint64_t{0});
    for (const auto& t : j.at("tables")) ex.presented_tables.push_back(table_from_json(t));
    if (ex.presented_tables.empty()) throw std::invalid_argument("augmented example has no tables");
    ex.base.table = ex.presented_tables.front();
    if (auto it = j.find("highlighted_cells"); it != j.end())
        for (const auto& h : *it) ex.base.highlighted_cells.push_back({h.at(0).get<std::size_t>(), h.at(1).get<std::size_t>()});
    ex.labels = labels_from_json(j.at("labels"));
    if (auto it = j.find("spans"); it != j.end())
        for (const auto& s : *it) ex.spans.push_back(span_from_json(s));
    if (auto it = j.find("provenance"); it != j.end()) {
        for (const auto& r : it->value("replacements", json::array())) {
            Replacement rep;
            rep.old_start = r.at("old_span").at(0).get<std::size_t>();
            rep.old_end = r.at("old_span").at(1).get<std::size_t>();
            rep.new_start = r.at("new_span").at(0).get<std::size_t>();
            rep.new_end = r.at("new_span").at(1).get<std::size_t>();
            rep.old_phrase = r.at("old_phrase").get<std::string>();
            rep.new_phrase = r.at("new_phrase").get<std::string>();
            rep.source_cell = {r.at("source_cell").at(0).get<std::size_t>(), r.at("source_cell").at(1).get<std::size_t>()};
            ex.provenance.replacements.push_back(std::move(rep));
        }
        ex.provenance.negative_table_ids = it->value("negative_table_ids", std::vector<std::string>{});
    }
    return ex;
}

void from_json(const json& j, AugmentationConfig& c) {
    c.k_neg = j.value("k_neg", c.k_neg);
    c.replace_prob = j.value("replace_prob", c.replace_prob);
    c.seed = j.value("seed", c.seed);
}

void to_json(json& j, const AugmentationConfig& c) {
    j = json{{"k_neg", c.k_neg}, {"replace_prob", c.replace_prob}, {"seed", c.seed}};
}

}  // namespace strug
