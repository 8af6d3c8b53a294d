#include "strug/linearizer.hpp"

#include <set>
#include <sstream>
#include <stdexcept>

#include "strug/errors.hpp"
#include "strug/text.hpp"

namespace strug {

Vocab::Vocab() {
    for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) add(s);
}

Vocab::Vocab(const std::vector<std::string>& tokens) : Vocab() {
    for (const auto& t : tokens)
        if (!contains(t)) add(t);
}

void Vocab::add(const std::string& token) {
    index_.emplace(token, static_cast<int>(tokens_.size()));
    tokens_.push_back(token);
}

int Vocab::id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

std::string Vocab::serialize() const {
    std::string out;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        out += tokens_[i];
        out += '\t';
        out += std::to_string(i);
        out += '\n';
    }
    return out;
}

Vocab Vocab::deserialize(std::string_view text) {
    std::vector<std::string> tokens;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto tab = line.rfind('\t');
        if (tab == std::string::npos) throw std::invalid_argument("vocab line " + std::to_string(line_no) + " has no tab");
        const std::size_t id = std::stoul(line.substr(tab + 1));
        if (id != line_no) throw std::invalid_argument("vocab ids must be dense and ordered");
        tokens.push_back(line.substr(0, tab));
        ++line_no;
    }
    Vocab v;
    const Vocab defaults;
    if (tokens.size() < defaults.size()) throw std::invalid_argument("vocab is missing special tokens");
    for (std::size_t i = 0; i < defaults.size(); ++i)
        if (tokens[i] != defaults.tokens_[i]) throw std::invalid_argument("vocab special tokens out of place");
    for (std::size_t i = defaults.size(); i < tokens.size(); ++i) {
        if (v.contains(tokens[i])) throw std::invalid_argument("duplicate vocab token '" + tokens[i] + "'");
        v.add(tokens[i]);
    }
    return v;
}

Vocab build_vocab(const std::vector<ParallelExample>& examples) {
    std::set<std::string> seen;
    auto take = [&](std::string_view text) {
        for (auto& t : tokenize(text)) seen.insert(std::move(t.text));
    };
    for (const auto& ex : examples) {
        take(ex.sentence);
        for (const auto& c : ex.table.columns) take(c);
        for (const auto& row : ex.table.rows)
            for (const auto& v : row) take(v);
    }
    return Vocab(std::vector<std::string>(seen.begin(), seen.end()));
}

LinearizedInput linearize(const std::vector<std::string>& sentence_tokens, const std::vector<Table>& presented_tables,
                          const Vocab& vocab, std::size_t max_len) {
    std::vector<std::vector<std::string>> headers;
    for (const auto& t : presented_tables) {
        for (const auto& c : t.columns) {
            auto toks = token_texts(tokenize(c));
            if (toks.empty())
                throw EmptySchema("column header '" + c + "' of table '" + t.table_id + "' has no tokens");
            headers.push_back(std::move(toks));
        }
    }
    if (headers.empty()) throw EmptySchema("no columns presented");

    std::size_t length = 1 + sentence_tokens.size() + 1;
    for (const auto& h : headers) length += h.size() + 1;
    if (length > max_len)
        throw SequenceTooLong("linearized length " + std::to_string(length) + " exceeds max_len " +
                              std::to_string(max_len));

    LinearizedInput in;
    in.ids.reserve(length);
    in.ids.push_back(Vocab::kCls);
    in.utterance_span.start = in.ids.size();
    for (const auto& t : sentence_tokens) in.ids.push_back(vocab.id(t));
    in.utterance_span.end = in.ids.size();
    in.sep_positions.push_back(in.ids.size());
    in.ids.push_back(Vocab::kSep);
    in.segments.assign(in.ids.size(), 0);
    for (std::size_t i = 0; i < in.ids.size(); ++i) in.positions.push_back(i);

    const std::size_t schema_base = in.ids.size();
    for (const auto& h : headers) {
        IndexSpan span{in.ids.size(), 0};
        for (std::size_t k = 0; k < h.size(); ++k) {
            in.ids.push_back(vocab.id(h[k]));
            in.positions.push_back(schema_base + k);
        }
        span.end = in.ids.size();
        in.column_spans.push_back(span);
        in.pool_pairs.emplace_back(span.start, span.end - 1);
        in.sep_positions.push_back(in.ids.size());
        in.ids.push_back(Vocab::kSep);
        in.positions.push_back(schema_base + h.size());
    }
    in.segments.resize(in.ids.size(), 1);
    return in;
}

nlohmann::json to_json(const LinearizedInput& in) {
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& s : in.column_spans) cols.push_back({s.start, s.end});
    nlohmann::json pools = nlohmann::json::array();
    for (const auto& [a, b] : in.pool_pairs) pools.push_back({a, b});
    return {{"ids", in.ids},
            {"segments", in.segments},
            {"positions", in.positions},
            {"utterance_span", {in.utterance_span.start, in.utterance_span.end}},
            {"column_spans", cols},
            {"sep_positions", in.sep_positions},
            {"pool_pairs", pools}};
}

}  // namespace strug
