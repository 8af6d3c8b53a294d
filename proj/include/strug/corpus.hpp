#pragma once

#include <cstddef>
#include <istream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "strug/errors.hpp"

namespace strug {

struct CellRef {
    std::size_t row = 0;
    std::size_t col = 0;

    friend bool operator==(const CellRef&, const CellRef&) = default;
    friend auto operator<=>(const CellRef&, const CellRef&) = default;
};

struct Cell {
    std::size_t row_index = 0;
    std::size_t col_index = 0;
    std::string value;
};

/// A single web table. Column index j identifies the column everywhere downstream.
struct Table {
    std::string table_id;
    std::string title;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    std::size_t num_rows() const { return rows.size(); }
    std::size_t num_columns() const { return columns.size(); }
    Cell cell(std::size_t row, std::size_t col) const { return {row, col, rows.at(row).at(col)}; }

    friend bool operator==(const Table&, const Table&) = default;
};

/// One sentence paired with one table, optionally with highlighted cells.
struct ParallelExample {
    std::string example_id;
    std::string sentence;
    Table table;
    std::vector<CellRef> highlighted_cells;

    friend bool operator==(const ParallelExample&, const ParallelExample&) = default;
};

struct Violation {
    std::string code;
    std::string message;
    long row = -1;
    long col = -1;
};

enum class IngestMode { Strict, Lenient };

struct ParseResult {
    std::vector<ParallelExample> examples;
    std::vector<MalformedRecord> errors;
};

/// Reads JSONL, one ParallelExample per non-blank line, in file order. Strict mode throws the
/// first MalformedRecord; lenient mode skips the line and records the error.
ParseResult parse_corpus(std::istream& in, IngestMode mode = IngestMode::Strict);

ParseResult parse_corpus_file(const std::string& path, IngestMode mode = IngestMode::Strict);

/// Every violated invariant of the example, its table and its cells. Empty means valid.
std::vector<Violation> validate_example(const ParallelExample& ex);

nlohmann::json to_json(const Table& table);
nlohmann::json to_json(const ParallelExample& ex);
nlohmann::json to_json(const Violation& v);

/// Throws std::invalid_argument describing the first schema problem.
Table table_from_json(const nlohmann::json& j);
ParallelExample example_from_json(const nlohmann::json& j);

/// Single-line JSON for one record (no trailing newline).
std::string to_jsonl_line(const ParallelExample& ex);

}  // namespace strug
