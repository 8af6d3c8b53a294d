#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "strug/corpus.hpp"
#include "strug/util.hpp"
#include "strug/weak_labeler.hpp"

namespace strug {

struct AugmentationConfig {
    int k_neg = 1;
    double replace_prob = 0.5;
    std::uint64_t seed = 0;
};

/// One matched phrase swapped for another value of the same column.
struct Replacement {
    std::size_t old_start = 0;
    std::size_t old_end = 0;
    std::size_t new_start = 0;
    std::size_t new_end = 0;
    std::string old_phrase;
    std::string new_phrase;
    /// Cell the new phrase was taken from.
    CellRef source_cell;
};

struct Provenance {
    std::vector<Replacement> replacements;
    std::vector<std::string> negative_table_ids;
};

/// A training example as presented to the model: first table is the positive one, the rest are
/// negatives. Labels cover the concatenated column list of all presented tables.
struct AugmentedExample {
    ParallelExample base;
    std::vector<Table> presented_tables;
    GroundingLabels labels;
    std::vector<TokenSpan> spans;
    Provenance provenance;
    std::uint64_t epoch = 0;

    std::size_t total_columns() const;
};

/// Wraps a labeled example with no augmentation applied.
AugmentedExample make_augmented(const ParallelExample& ex, const Labeling& labeling);

/// Each aligned phrase is independently replaced, with probability cfg.replace_prob, by a
/// different value drawn uniformly from the same column. Labels follow the new tokens.
AugmentedExample replace_values(const AugmentedExample& in, const AugmentationConfig& cfg, Rng& rng);

/// Appends cfg.k_neg distinct tables sampled uniformly without replacement from `corpus_index`
/// (excluding the positive table id). Throws InsufficientCorpus.
AugmentedExample sample_negative_tables(const AugmentedExample& in, const std::vector<Table>& corpus_index,
                                        const AugmentationConfig& cfg, Rng& rng);

/// Replacement then negative sampling, with the RNG derived from (cfg.seed, epoch, example_id).
AugmentedExample augment(const ParallelExample& ex, const Labeling& labeling, const std::vector<Table>& corpus_index,
                         const AugmentationConfig& cfg, std::uint64_t epoch = 0);

/// Unique tables in first-seen order.
std::vector<Table> build_table_index(const std::vector<ParallelExample>& examples);

nlohmann::json to_json(const AugmentedExample& ex);
AugmentedExample augmented_from_json(const nlohmann::json& j);

void from_json(const nlohmann::json& j, AugmentationConfig& c);
void to_json(nlohmann::json& j, const AugmentationConfig& c);

}  // namespace strug
