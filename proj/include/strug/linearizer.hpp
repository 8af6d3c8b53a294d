#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "strug/corpus.hpp"

namespace strug {

/// Token to id map with dense ids. Immutable once built.
class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kCls = 2;
    static constexpr int kSep = 3;

    Vocab();
    explicit Vocab(const std::vector<std::string>& tokens);

    int id(std::string_view token) const;
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const { return tokens_.size(); }
    bool contains(std::string_view token) const;
    const std::vector<std::string>& tokens() const { return tokens_; }

    /// "token<TAB>id" per line, in id order.
    std::string serialize() const;
    static Vocab deserialize(std::string_view text);

    friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

private:
    void add(const std::string& token);

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

/// Vocabulary over sentences, headers and cell values (cell values can enter sentences through
/// value replacement). Specials first, then tokens in sorted order.
Vocab build_vocab(const std::vector<ParallelExample>& examples);

struct IndexSpan {
    std::size_t start = 0;
    std::size_t end = 0;  // exclusive

    friend bool operator==(const IndexSpan&, const IndexSpan&) = default;
};

/// [CLS] utterance [SEP] header_1 [SEP] ... header_m [SEP]
struct LinearizedInput {
    std::vector<int> ids;
    /// 0 for [CLS], the utterance and the first [SEP]; 1 for the schema half.
    std::vector<int> segments;
    /// Position ids. The utterance half counts up from 0; every header restarts at the first
    /// schema position, so column order carries no positional signal.
    std::vector<std::size_t> positions;
    IndexSpan utterance_span;
    std::vector<IndexSpan> column_spans;
    std::vector<std::size_t> sep_positions;
    /// (first, last) header token position per column, used for column pooling.
    std::vector<std::pair<std::size_t, std::size_t>> pool_pairs;

    std::size_t num_utterance_tokens() const { return utterance_span.end - utterance_span.start; }
    std::size_t num_columns() const { return column_spans.size(); }
};

constexpr std::size_t kDefaultMaxLen = 256;

/// Throws EmptySchema with no columns and SequenceTooLong when the layout exceeds max_len.
LinearizedInput linearize(const std::vector<std::string>& sentence_tokens, const std::vector<Table>& presented_tables,
                          const Vocab& vocab, std::size_t max_len = kDefaultMaxLen);

nlohmann::json to_json(const LinearizedInput& in);

}  // namespace strug
