#include "strug/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "strug/errors.hpp"
#include "strug/util.hpp"

namespace strug {

using nlohmann::json;

void TaskMetrics::finalize() {
    support = tp + fn;
    precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

namespace {

void count_binary(TaskMetrics& m, bool predicted, int gold) {
    if (predicted && gold) ++m.tp;
    else if (predicted && !gold) ++m.fp;
    else if (!predicted && gold) ++m.fn;
}

void count_mapping(TaskMetrics& m, int predicted_col, const std::vector<int>& gold) {
    if (std::binary_search(gold.begin(), gold.end(), predicted_col)) {
        ++m.tp;
    } else {
        ++m.fp;
        ++m.fn;
    }
}

bool aligned(const GroundingLabels& l, std::size_t i) { return l.y_val[i] == 1 && !l.y_map[i].empty(); }

}  // namespace

GroundingMetrics score_grounding(const std::vector<ModelOutput>& outputs, const std::vector<GroundingLabels>& labels,
                                 double threshold) {
    if (outputs.size() != labels.size())
        throw ShapeMismatch("score_grounding: " + std::to_string(outputs.size()) + " outputs vs " +
                            std::to_string(labels.size()) + " label sets");
    GroundingMetrics g;
    g.threshold = threshold;
    for (std::size_t e = 0; e < outputs.size(); ++e) {
        const auto& out = outputs[e];
        const auto& y = labels[e];
        if (static_cast<std::size_t>(out.p_col.size()) != y.y_col.size() ||
            static_cast<std::size_t>(out.p_val.size()) != y.y_val.size() || y.y_map.size() != y.y_val.size() ||
            static_cast<std::size_t>(out.p_map.rows()) != y.y_val.size() ||
            static_cast<std::size_t>(out.p_map.cols()) != y.y_col.size())
            throw ShapeMismatch("score_grounding: example " + std::to_string(e) + " has mismatched shapes");
        for (std::size_t j = 0; j < y.y_col.size(); ++j)
            count_binary(g.column, out.p_col(static_cast<Eigen::Index>(j)) >= threshold, y.y_col[j]);
        for (std::size_t i = 0; i < y.y_val.size(); ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            count_binary(g.value, out.p_val(ii) >= threshold, y.y_val[i]);
            if (aligned(y, i)) {
                Eigen::Index best = 0;
                out.p_map.row(ii).maxCoeff(&best);
                count_mapping(g.mapping, static_cast<int>(best), y.y_map[i]);
            }
        }
    }
    g.column.finalize();
    g.value.finalize();
    g.mapping.finalize();
    return g;
}

GroundingMetrics random_baseline(const std::vector<GroundingLabels>& labels, std::uint64_t seed) {
    std::size_t col_pos = 0, col_n = 0, val_pos = 0, val_n = 0;
    for (const auto& y : labels) {
        col_n += y.y_col.size();
        val_n += y.y_val.size();
        col_pos += static_cast<std::size_t>(std::count(y.y_col.begin(), y.y_col.end(), 1));
        val_pos += static_cast<std::size_t>(std::count(y.y_val.begin(), y.y_val.end(), 1));
    }
    const double col_rate = col_n ? static_cast<double>(col_pos) / static_cast<double>(col_n) : 0.0;
    const double val_rate = val_n ? static_cast<double>(val_pos) / static_cast<double>(val_n) : 0.0;

    Rng rng(seed);
    GroundingMetrics g;
    for (const auto& y : labels) {
        for (int gold : y.y_col) count_binary(g.column, rng.uniform01() < col_rate, gold);
        for (std::size_t i = 0; i < y.y_val.size(); ++i) {
            count_binary(g.value, rng.uniform01() < val_rate, y.y_val[i]);
            if (aligned(y, i) && !y.y_col.empty())
                count_mapping(g.mapping, static_cast<int>(rng.uniform_index(y.y_col.size())), y.y_map[i]);
        }
    }
    g.column.finalize();
    g.value.finalize();
    g.mapping.finalize();
    return g;
}

json to_json(const TaskMetrics& m) {
    return json{{"tp", m.tp},
                {"fp", m.fp},
                {"fn", m.fn},
                {"precision", m.precision},
                {"recall", m.recall},
                {"f1", m.f1},
                {"support", m.support}};
}

json to_json(const GroundingMetrics& m) {
    return json{{"threshold", m.threshold},
                {"column", to_json(m.column)},
                {"value", to_json(m.value)},
                {"mapping", to_json(m.mapping)},
                {"mapping_accuracy", m.mapping_accuracy()}};
}

std::string format_metrics_table(const GroundingMetrics& model, const GroundingMetrics* baseline) {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-10s %-9s %9s %9s %9s %8s\n", "task", "system", "precision", "recall", "f1",
                  "support");
    out += buf;
    auto row = [&](const char* task, const char* sys, const TaskMetrics& m) {
        std::snprintf(buf, sizeof buf, "%-10s %-9s %9.4f %9.4f %9.4f %8zu\n", task, sys, m.precision, m.recall, m.f1,
                      m.support);
        out += buf;
    };
    const std::pair<const char*, const TaskMetrics GroundingMetrics::*> tasks[] = {
        {"column", &GroundingMetrics::column}, {"value", &GroundingMetrics::value}, {"mapping", &GroundingMetrics::mapping}};
    for (const auto& [name, field] : tasks) {
        row(name, "model", model.*field);
        if (baseline) row(name, "random", baseline->*field);
    }
    return out;
}

}  // namespace strug
