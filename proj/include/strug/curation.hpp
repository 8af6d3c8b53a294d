#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "strug/errors.hpp"

namespace strug {

enum class Clause { Select, Where, GroupBy, Having, OrderBy };

std::string to_string(Clause c);

struct TableSchema {
    std::string table_name;
    std::vector<std::string> column_names;
};

struct TextToSqlExample {
    std::string example_id;
    std::string question;
    std::string sql;
    std::vector<TableSchema> schema;
};

/// One column reference in a query.
struct ClauseUsage {
    /// Lowercased column name with any table qualifier removed.
    std::string column;
    std::string qualifier;
    Clause clause = Clause::Select;
    /// The reference sits in a comparison whose other operand is a literal.
    bool compared_against_value = false;
    /// Byte offset of the column token in the SQL string.
    std::size_t offset = 0;
    /// 0 for the outer query, 1 inside a subquery.
    int depth = 0;

    friend bool operator==(const ClauseUsage&, const ClauseUsage&) = default;
};

/// Column references of a Spider-style query tagged with their clause. Join conditions (ON) are
/// structural and produce no usages. Throws UnsupportedSyntax outside the subset, including
/// subqueries nested more than one level deep.
std::vector<ClauseUsage> extract_clause_usage(std::string_view sql);

/// Usages outside the SELECT clause.
std::vector<ClauseUsage> constraint_columns(const std::vector<ClauseUsage>& usage);

struct Mention {
    std::string column;
    Clause clause = Clause::Select;
    /// Index into the usage list the mention belongs to.
    std::size_t usage_index = 0;
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive byte offset in the question
};

/// Column name as it would read in a question: underscores to spaces, case-folded.
std::string mention_form(std::string_view column);

/// Occurrences of every constraint column's name in the question, matched as a whole token
/// phrase. SELECT-clause usages are never flagged. The schema supplies the canonical spelling
/// when the query abbreviates a column.
std::vector<Mention> flag_explicit_mentions(std::string_view question, const std::vector<TableSchema>& schema,
                                            const std::vector<ClauseUsage>& usage);

struct ExampleMentionStats {
    std::string example_id;
    std::size_t constraint_refs = 0;
    std::size_t mentioned_refs = 0;
    std::optional<std::string> error;
};

struct MentionRatio {
    double ratio = 0.0;
    std::size_t mentioned = 0;
    std::size_t total = 0;
    /// No constraint references at all; ratio is reported as 0.
    bool empty_denominator = false;
    std::vector<ExampleMentionStats> per_example;
};

/// mentioned constraint references / all constraint references. Examples with unsupported SQL
/// are excluded and reported in per_example.
MentionRatio column_mention_ratio(const std::vector<TextToSqlExample>& dataset);

/// A usage that makes an example part of the complex subset.
bool is_complex_usage(const ClauseUsage& u);

/// Ids of examples with at least one non-SELECT column compared against a value or used in
/// ORDER BY / GROUP BY / HAVING.
std::vector<std::string> select_complex_subset(const std::vector<TextToSqlExample>& dataset);

struct CurationEntry {
    std::string example_id;
    std::string question;
    std::string sql;
    std::vector<ClauseUsage> constraint_columns;
    std::vector<Mention> mentions;
    bool is_complex = false;
    std::optional<std::string> error;
};

struct CurationReport {
    std::vector<CurationEntry> entries;
    MentionRatio mention_ratio;
};

CurationReport build_curation_report(const std::vector<TextToSqlExample>& dataset);

nlohmann::json to_json(const ClauseUsage& u);
nlohmann::json to_json(const CurationReport& r);

/// One block per example: the question, then each flagged span with its character offsets.
std::string format_flag_listing(const CurationReport& r);

/// Spider-format records (question, query, db_id) joined with a tables.json schema list when
/// given. Records may also carry an inline "schema": [{"table", "columns"}] and an "id".
std::vector<TextToSqlExample> load_spider(const nlohmann::json& examples, const nlohmann::json* tables = nullptr);

}  // namespace strug
