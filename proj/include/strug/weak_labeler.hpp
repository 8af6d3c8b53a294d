#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "strug/corpus.hpp"
#include "strug/text.hpp"

namespace strug {

enum class SpanSource { HighlightedCellMatch, AutoCellMatch };

enum class LabelSetting { Human, Auto };

std::string to_string(SpanSource s);
std::string to_string(LabelSetting s);
LabelSetting parse_setting(std::string_view s);

/// A matched phrase [start_token, end_token) aligned with the cell it came from.
struct TokenSpan {
    std::size_t start_token = 0;
    std::size_t end_token = 0;
    SpanSource source = SpanSource::AutoCellMatch;
    std::size_t row_index = 0;
    std::size_t col_index = 0;

    std::size_t length() const { return end_token - start_token; }
    friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

/// Column, value and column-value targets. y_map[i] is a sorted set of column indices.
struct GroundingLabels {
    std::vector<int> y_col;
    std::vector<int> y_val;
    std::vector<std::vector<int>> y_map;

    friend bool operator==(const GroundingLabels&, const GroundingLabels&) = default;
};

/// Normalization knobs for cell-to-sentence matching.
struct MatchPolicy {
    bool case_fold = true;
    bool strip_punct_edges = true;
    int min_chars = 2;
    /// When false, a numeric cell also matches a token made of that number plus a unit suffix ("10lbs").
    bool numeric_exact = true;
    /// Overlap resolution order: longest, then leftmost, then lowest column. When false: leftmost,
    /// then lowest column, then longest.
    bool longest_first = true;
};

struct Labeling {
    GroundingLabels labels;
    std::vector<TokenSpan> spans;
};

/// Token pattern a cell value is matched as; empty when the cell can never match.
std::vector<std::string> cell_pattern(std::string_view cell_value, const MatchPolicy& policy);

/// All non-overlapping, leftmost-first occurrences of the cell as a contiguous token run.
std::vector<std::pair<std::size_t, std::size_t>> match_cell_to_sentence(std::string_view cell_value,
                                                                        const std::vector<Token>& sentence_tokens,
                                                                        const MatchPolicy& policy);

/// Labels from highlighted cells: columns from highlights, values/mapping from textual matches.
Labeling derive_labels_human_assisted(const ParallelExample& ex, const MatchPolicy& policy = {});

/// Labels from exact string matching of every cell; highlighted_cells is ignored.
Labeling derive_labels_automatic(const ParallelExample& ex, const MatchPolicy& policy = {});

Labeling derive_labels(const ParallelExample& ex, LabelSetting setting, const MatchPolicy& policy = {});

/// Cells whose match survived overlap resolution in the automatic setting.
std::vector<CellRef> auto_matched_cells(const ParallelExample& ex, const MatchPolicy& policy = {});

/// Rebuilds y_val / y_map from spans over `num_tokens` tokens. y_col is left untouched.
void apply_spans(GroundingLabels& labels, std::size_t num_tokens, const std::vector<TokenSpan>& spans);

/// Violations of y_map[i] != {} => y_val[i] = 1 and j in y_map[i] => y_col[j] = 1, plus length checks.
std::vector<std::string> check_label_consistency(const GroundingLabels& labels);

nlohmann::json to_json(const GroundingLabels& labels);
nlohmann::json to_json(const TokenSpan& span);
GroundingLabels labels_from_json(const nlohmann::json& j);
TokenSpan span_from_json(const nlohmann::json& j);

/// The `label` stage record: {example_id, y_col, y_val, y_map, spans, setting}.
nlohmann::json label_record(const std::string& example_id, const Labeling& labeling, LabelSetting setting);

void from_json(const nlohmann::json& j, MatchPolicy& p);
void to_json(nlohmann::json& j, const MatchPolicy& p);

}  // namespace strug
