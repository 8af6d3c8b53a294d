#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "strug/model.hpp"
#include "strug/weak_labeler.hpp"

namespace strug {

struct TaskMetrics {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    /// Number of gold positives (tp + fn).
    std::size_t support = 0;

    void finalize();
};

/// Micro-averaged over all decisions in the dataset. For the mapping task every aligned token is
/// one decision: a correct argmax counts as tp, a wrong one as both fp and fn, so precision,
/// recall and f1 all equal the mapping accuracy.
struct GroundingMetrics {
    TaskMetrics column;
    TaskMetrics value;
    TaskMetrics mapping;
    double threshold = 0.5;

    double mapping_accuracy() const { return mapping.support ? mapping.recall : 0.0; }
};

/// Throws ShapeMismatch when outputs and labels disagree in count or shape.
GroundingMetrics score_grounding(const std::vector<ModelOutput>& outputs, const std::vector<GroundingLabels>& labels,
                                 double threshold = 0.5);

/// One sampled draw of a rate-matched random predictor: each binary label is predicted 1 with the
/// empirical positive rate of its task; mapping picks a column uniformly.
GroundingMetrics random_baseline(const std::vector<GroundingLabels>& labels, std::uint64_t seed);

nlohmann::json to_json(const TaskMetrics& m);
nlohmann::json to_json(const GroundingMetrics& m);

/// Fixed-order plain-text table.
std::string format_metrics_table(const GroundingMetrics& model, const GroundingMetrics* baseline = nullptr);

}  // namespace strug
