#include "strug/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <stdexcept>

namespace strug {

namespace {

using nlohmann::json;

bool is_blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

const json& require(const json& j, const char* key) {
    if (!j.is_object()) throw std::invalid_argument("expected a JSON object");
    auto it = j.find(key);
    if (it == j.end()) throw std::invalid_argument(std::string("missing key '") + key + "'");
    return *it;
}

std::string require_string(const json& j, const char* key) {
    const json& v = require(j, key);
    if (!v.is_string()) throw std::invalid_argument(std::string("'") + key + "' must be a string");
    return v.get<std::string>();
}

std::size_t require_index(const json& v, const char* what) {
    if (!v.is_number_integer() || v.get<long long>() < 0)
        throw std::invalid_argument(std::string(what) + " must be a non-negative integer");
    return v.get<std::size_t>();
}

std::string join_messages(const std::vector<Violation>& vs) {
    std::string out;
    for (const auto& v : vs) {
        if (!out.empty()) out += "; ";
        out += v.message;
    }
    return out;
}

}  // namespace

Table table_from_json(const json& j) {
    Table t;
    t.table_id = require_string(j, "table_id");
    if (auto it = j.find("title"); it != j.end() && !it->is_null()) {
        if (!it->is_string()) throw std::invalid_argument("'title' must be a string");
        t.title = it->get<std::string>();
    }
    const json& cols = require(j, "columns");
    if (!cols.is_array()) throw std::invalid_argument("'columns' must be an array");
    for (const auto& c : cols) {
        if (!c.is_string()) throw std::invalid_argument("column headers must be strings");
        t.columns.push_back(c.get<std::string>());
    }
    const json& rows = require(j, "rows");
    if (!rows.is_array()) throw std::invalid_argument("'rows' must be an array");
    for (const auto& r : rows) {
        if (!r.is_array()) throw std::invalid_argument("each row must be an array");
        std::vector<std::string> row;
        for (const auto& v : r) {
            if (!v.is_string()) throw std::invalid_argument("cell values must be strings");
            row.push_back(v.get<std::string>());
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

ParallelExample example_from_json(const json& j) {
    ParallelExample ex;
    ex.example_id = require_string(j, "example_id");
    ex.sentence = require_string(j, "sentence");
    ex.table = table_from_json(require(j, "table"));
    if (auto it = j.find("highlighted_cells"); it != j.end() && !it->is_null()) {
        if (!it->is_array()) throw std::invalid_argument("'highlighted_cells' must be an array");
        for (const auto& h : *it) {
            if (!h.is_array() || h.size() != 2)
                throw std::invalid_argument("highlighted cell must be a [row, col] pair");
            ex.highlighted_cells.push_back({require_index(h[0], "highlight row"), require_index(h[1], "highlight col")});
        }
    }
    return ex;
}

json to_json(const Table& t) {
    return json{{"table_id", t.table_id}, {"title", t.title}, {"columns", t.columns}, {"rows", t.rows}};
}

json to_json(const ParallelExample& ex) {
    json hl = json::array();
    for (const auto& h : ex.highlighted_cells) hl.push_back(json::array({h.row, h.col}));
    return json{{"example_id", ex.example_id},
                {"sentence", ex.sentence},
                {"table", to_json(ex.table)},
                {"highlighted_cells", hl}};
}

json to_json(const Violation& v) {
    json j{{"code", v.code}, {"message", v.message}};
    if (v.row >= 0) j["row"] = v.row;
    if (v.col >= 0) j["col"] = v.col;
    return j;
}

std::string to_jsonl_line(const ParallelExample& ex) { return to_json(ex).dump(); }

std::vector<Violation> validate_example(const ParallelExample& ex) {
    std::vector<Violation> out;
    if (ex.example_id.empty()) out.push_back({"empty_example_id", "example_id is empty"});
    if (is_blank(ex.sentence)) out.push_back({"empty_sentence", "sentence is empty after trimming"});

    const Table& t = ex.table;
    if (t.table_id.empty()) out.push_back({"empty_table_id", "table_id is empty"});
    if (t.columns.empty()) out.push_back({"no_columns", "table has no columns"});
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
        if (is_blank(t.columns[c]))
            out.push_back({"empty_header", "column header at index " + std::to_string(c) + " is empty", -1,
                           static_cast<long>(c)});
    }
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        if (t.rows[r].size() != t.columns.size())
            out.push_back({"row_length",
                           "row " + std::to_string(r) + " has " + std::to_string(t.rows[r].size()) +
                               " cells, expected " + std::to_string(t.columns.size()),
                           static_cast<long>(r)});
    }
    for (const auto& h : ex.highlighted_cells) {
        const bool row_ok = h.row < t.rows.size();
        const bool col_ok = h.col < t.columns.size() && (!row_ok || h.col < t.rows[h.row].size());
        if (!row_ok || !col_ok)
            out.push_back({"highlight_out_of_range",
                           "highlight out of range: (" + std::to_string(h.row) + ", " + std::to_string(h.col) + ")",
                           static_cast<long>(h.row), static_cast<long>(h.col)});
    }
    return out;
}

ParseResult parse_corpus(std::istream& in, IngestMode mode) {
    ParseResult result;
    std::map<std::string, std::size_t> seen_examples;
    std::map<std::string, Table> seen_tables;
    std::string line;
    std::size_t line_no = 0;

    auto fail = [&](std::string reason) {
        MalformedRecord err(line_no, std::move(reason));
        if (mode == IngestMode::Strict) throw err;
        result.errors.push_back(std::move(err));
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (is_blank(line)) continue;

        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            fail(std::string("invalid JSON: ") + e.what());
            continue;
        }
        ParallelExample ex;
        try {
            ex = example_from_json(j);
        } catch (const std::invalid_argument& e) {
            fail(e.what());
            continue;
        }
        if (auto vs = validate_example(ex); !vs.empty()) {
            fail(join_messages(vs));
            continue;
        }
        if (auto [it, fresh] = seen_examples.emplace(ex.example_id, line_no); !fresh) {
            fail("duplicate example_id '" + ex.example_id + "' (first on line " + std::to_string(it->second) + ")");
            continue;
        }
        if (auto [it, fresh] = seen_tables.emplace(ex.table.table_id, ex.table); !fresh && !(it->second == ex.table)) {
            seen_examples.erase(ex.example_id);
            fail("table_id '" + ex.table.table_id + "' reused with different contents");
            continue;
        }
        result.examples.push_back(std::move(ex));
    }
    return result;
}

ParseResult parse_corpus_file(const std::string& path, IngestMode mode) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open corpus " + path);
    return parse_corpus(in, mode);
}

}  // namespace strug
