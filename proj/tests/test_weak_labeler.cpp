#include <doctest.h>

#include "strug/weak_labeler.hpp"
#include "synthetic.hpp"

using namespace strug;
using nlohmann::json;

using Spans = std::vector<std::pair<std::size_t, std::size_t>>;
using Ints = std::vector<int>;

namespace {

ParallelExample one_row(const std::string& sentence, std::vector<std::string> columns, std::vector<std::string> cells,
                        std::vector<CellRef> highlights = {}) {
    ParallelExample ex;
    ex.example_id = "x";
    ex.sentence = sentence;
    ex.table.table_id = "t";
    ex.table.columns = std::move(columns);
    ex.table.rows = {std::move(cells)};
    ex.highlighted_cells = std::move(highlights);
    return ex;
}

}  // namespace

TEST_SUITE("weak_labeler") {
    TEST_CASE("multi-token cell matches as one span") {
        const auto toks = tokenize("The 11417 train runs from Pune Junction to Nagpur Jnction.");
        CHECK(match_cell_to_sentence("Pune Junction", toks, {}) == Spans{{5, 7}});
        CHECK(match_cell_to_sentence("11417", toks, {}) == Spans{{1, 2}});
        CHECK(match_cell_to_sentence("History", toks, {}).empty());
    }

    TEST_CASE("min_chars floors short cells") {
        const auto toks = tokenize("a b a");
        CHECK(match_cell_to_sentence("a", toks, {}).empty());
        MatchPolicy p;
        p.min_chars = 1;
        CHECK(match_cell_to_sentence("a", toks, p) == Spans{{0, 1}, {2, 3}});
    }

    TEST_CASE("edge punctuation and case are normalized away") {
        const auto toks = tokenize("we studied HISTORY today");
        CHECK(match_cell_to_sentence("History.", toks, {}) == Spans{{2, 3}});
        MatchPolicy strict;
        strict.case_fold = false;
        CHECK(match_cell_to_sentence("History", toks, strict).empty());
        strict.strip_punct_edges = false;
        strict.case_fold = true;
        CHECK(match_cell_to_sentence("History.", toks, strict).empty());
        CHECK(cell_pattern("(St. Louis)", {}) == std::vector<std::string>{"st", ".", "louis"});
    }

    TEST_CASE("numbers match whole tokens unless numeric_exact is off") {
        const auto toks = tokenize("it weighs 10lbs, not 100");
        CHECK(match_cell_to_sentence("10", toks, {}).empty());
        MatchPolicy loose;
        loose.numeric_exact = false;
        CHECK(match_cell_to_sentence("10", toks, loose) == Spans{{2, 3}});
        CHECK(match_cell_to_sentence("100", toks, {}) == Spans{{5, 6}});
    }

    TEST_CASE("occurrences of one cell never overlap") {
        CHECK(match_cell_to_sentence("new new", tokenize("new new new new new"), {}) == Spans{{0, 2}, {2, 4}});
    }

    TEST_CASE("human-assisted: column labels need no textual match") {
        const auto ex = one_row("nothing to see", {"a", "b", "c", "d", "e"}, {"v0", "v1", "v2", "v3", "v4"},
                                {{0, 1}, {0, 3}});
        const auto l = derive_labels_human_assisted(ex);
        CHECK(l.labels.y_col == Ints{0, 1, 0, 1, 0});
        CHECK(l.labels.y_val == Ints{0, 0, 0});
        CHECK(l.labels.y_map == std::vector<Ints>(3));
        CHECK(l.spans.empty());
    }

    TEST_CASE("train route example, human-assisted") {
        const auto l = derive_labels_human_assisted(testing::train_route_example());
        CHECK(l.labels.y_col == Ints{1, 0, 1, 0, 1, 0});
        CHECK(l.labels.y_val == Ints{0, 1, 0, 0, 0, 1, 1, 0, 1, 1, 0});
        CHECK(l.labels.y_map == std::vector<Ints>{{}, {0}, {}, {}, {}, {2}, {2}, {}, {4}, {4}, {}});
        REQUIRE(l.spans.size() == 3);
        CHECK(l.spans[1].source == SpanSource::HighlightedCellMatch);
    }

    TEST_CASE("a shared value highlighted in two columns maps to both") {
        const auto ex = one_row("born in Paris", {"birthplace", "residence"}, {"Paris", "Paris"}, {{0, 0}, {0, 1}});
        const auto l = derive_labels_human_assisted(ex);
        CHECK(l.labels.y_col == Ints{1, 1});
        CHECK(l.labels.y_map == std::vector<Ints>{{}, {}, {0, 1}});
        CHECK(l.spans.size() == 2);
        CHECK(l.labels == testing::oracle_human(ex).labels);
    }

    TEST_CASE("automatic: longest match suppresses the nested one") {
        const auto ex = one_row("flights to New York today", {"city", "state"}, {"New York", "York"});
        const auto l = derive_labels_automatic(ex);
        CHECK(l.labels.y_col == Ints{1, 0});
        CHECK(l.labels.y_map == std::vector<Ints>{{}, {}, {0}, {0}, {}});
        CHECK(auto_matched_cells(ex) == std::vector<CellRef>{{0, 0}});
    }

    TEST_CASE("longest_first off prefers the leftmost candidate") {
        const auto ex = one_row("new york city hall", {"a", "b"}, {"New York", "York City Hall"});
        CHECK(derive_labels_automatic(ex).labels.y_col == Ints{0, 1});
        MatchPolicy p;
        p.longest_first = false;
        CHECK(derive_labels_automatic(ex, p).labels.y_col == Ints{1, 0});
        CHECK(derive_labels_automatic(ex, p).labels == testing::oracle_labels(ex, {{0, 0}}, p, true).labels);
    }

    TEST_CASE("automatic: nothing shared gives all-zero labels") {
        const auto ex = one_row("completely unrelated words", {"a", "b"}, {"x1", "y2"}, {{0, 0}});
        const auto l = derive_labels_automatic(ex);
        CHECK(l.labels.y_col == Ints{0, 0});
        CHECK(l.labels.y_val == Ints{0, 0, 0});
    }

    TEST_CASE("the automatic setting ignores highlights") {
        auto ex = testing::train_route_example();
        const auto a = derive_labels_automatic(ex);
        ex.highlighted_cells = {{1, 1}, {1, 5}};
        CHECK(derive_labels_automatic(ex).labels == a.labels);
        CHECK(a.spans.front().source == SpanSource::AutoCellMatch);
    }

    TEST_CASE("settings agree when matched cells equal the highlights") {
        auto ex = testing::train_route_example();
        CHECK(auto_matched_cells(ex) == ex.highlighted_cells);
        CHECK(derive_labels_human_assisted(ex).labels == derive_labels_automatic(ex).labels);
    }

    TEST_CASE("both settings agree with the brute-force oracle on random corpora") {
        for (const auto& ex : testing::random_corpus(400, 17)) {
            CHECK(derive_labels_human_assisted(ex).labels == testing::oracle_human(ex).labels);
            CHECK(derive_labels_automatic(ex).labels == testing::oracle_auto(ex).labels);
        }
    }

    TEST_CASE("labels are consistent and idempotent on random corpora") {
        for (const auto& ex : testing::random_corpus(400, 18)) {
            for (auto setting : {LabelSetting::Human, LabelSetting::Auto}) {
                const auto a = derive_labels(ex, setting);
                CHECK(check_label_consistency(a.labels).empty());
                CHECK(a.labels.y_val.size() == tokenize(ex.sentence).size());
                const auto b = derive_labels(ex, setting);
                CHECK(a.labels == b.labels);
                CHECK(a.spans == b.spans);
            }
        }
    }

    TEST_CASE("adding an unmatched row leaves automatic labels unchanged") {
        for (auto ex : testing::random_corpus(200, 19)) {
            const auto before = derive_labels_automatic(ex);
            ex.table.rows.push_back(std::vector<std::string>(ex.table.columns.size(), "qqzzx"));
            CHECK(derive_labels_automatic(ex).labels == before.labels);
        }
    }

    TEST_CASE("consistency checker flags each broken implication") {
        GroundingLabels l{{1, 0}, {0, 1}, {{0}, {1}}};
        const auto v = check_label_consistency(l);
        REQUIRE(v.size() == 2);
        CHECK(v[0] == "token 0 is mapped but has y_val=0");
        CHECK(v[1] == "token 1 maps to column 1 which has y_col=0");
        CHECK_FALSE(check_label_consistency({{1}, {1}, {}}).empty());
    }

    TEST_CASE("apply_spans rejects spans outside the sentence") {
        GroundingLabels l{{1}, {}, {}};
        CHECK_THROWS_AS(apply_spans(l, 2, {{1, 3, SpanSource::AutoCellMatch, 0, 0}}), std::out_of_range);
        CHECK_THROWS_AS(apply_spans(l, 2, {{1, 1, SpanSource::AutoCellMatch, 0, 0}}), std::out_of_range);
    }

    TEST_CASE("label record uses the sparse y_map layout") {
        const auto ex = testing::train_route_example();
        const auto l = derive_labels_automatic(ex);
        const json j = label_record(ex.example_id, l, LabelSetting::Auto);
        CHECK(j["setting"] == "auto");
        CHECK(j["y_map"] == json::parse("[[1,[0]],[5,[2]],[6,[2]],[8,[4]],[9,[4]]]"));
        CHECK(j["spans"][0] == json::parse(R"({"start":1,"end":2,"source":"auto_cell_match","row":0,"col":0})"));
        CHECK(labels_from_json(j) == l.labels);
        CHECK(span_from_json(j["spans"][2]) == l.spans[2]);
    }

    TEST_CASE("policy and setting parsing") {
        MatchPolicy p;
        p.min_chars = 3;
        p.numeric_exact = false;
        const MatchPolicy q = json(p).get<MatchPolicy>();
        CHECK(q.min_chars == 3);
        CHECK_FALSE(q.numeric_exact);
        CHECK_THROWS_AS(json::parse(R"({"min_chars": 0})").get<MatchPolicy>(), std::invalid_argument);
        CHECK(parse_setting("auto") == LabelSetting::Auto);
        CHECK_THROWS_AS(parse_setting("both"), std::invalid_argument);
    }
}
