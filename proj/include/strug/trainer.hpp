#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "strug/augmentation.hpp"
#include "strug/linearizer.hpp"
#include "strug/model.hpp"

namespace strug {

/// Optimization settings. Defaults are sized for the small encoder.
struct TrainConfig {
    double lr = 1e-3;
    int batch_size = 8;
    int epochs = 5;
    int k_neg = 1;
    std::uint64_t seed = 0;
    LossWeights loss_weights;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    /// Global gradient-norm clipping; 0 disables it.
    double clip_norm = 0.0;

    void validate() const;
};

struct StepRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double l_col = 0.0;
    double l_val = 0.0;
    double l_map = 0.0;
    double total = 0.0;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    /// Mean total loss per epoch.
    std::vector<double> epoch_loss;

    std::string to_csv() const;
};

struct TrainResult {
    Params params;
    TrainLog log;
};

class Adam {
public:
    Adam(const Params& shape, double beta1, double beta2, double eps);
    void step(Params& params, const Params& grad, double lr);
    std::uint64_t steps_taken() const { return t_; }

private:
    Params m_, v_;
    double beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
};

/// Examples presented in a given epoch. Lets negatives and replacements be redrawn per epoch.
using EpochDataset = std::function<std::vector<AugmentedExample>(std::uint64_t epoch)>;

/// epochs x ceil(N / batch_size) Adam steps on the batch-mean loss with a seeded shuffle.
/// Linearization errors are rethrown with the example id attached.
TrainResult train(const EpochDataset& dataset, const Vocab& vocab, ModelConfig model_cfg, const TrainConfig& train_cfg,
                  const Params* initial = nullptr);
TrainResult train(const std::vector<AugmentedExample>& dataset, const Vocab& vocab, ModelConfig model_cfg,
                  const TrainConfig& train_cfg, const Params* initial = nullptr);

LinearizedInput linearize_example(const AugmentedExample& ex, const Vocab& vocab, std::size_t max_len);

/// d_model 8, 2 heads, 1 layer, d_ff 16, vocab 12, max_len 16.
ModelConfig micro_model_config();

struct GradCheckOptions {
    bool zero_init = false;
    double step = 1e-5;
    /// Applied to the analytic gradient before comparison; used to test harness sensitivity.
    std::function<void(Params&)> corrupt_analytic;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst_tensor;
    std::vector<std::pair<std::string, double>> per_tensor;
    bool finite = true;
};

/// Analytic gradients against central differences on a random micro-model and micro-batch
/// (4 utterance tokens, 2 columns). Relative error per tensor is max|a - n| / max(|a|, |n|, 1e-6)
/// taken over the tensor's elements, with the max magnitudes also taken per tensor.
GradCheckResult grad_check(const ModelConfig& model_cfg, std::uint64_t seed, const GradCheckOptions& options = {});

void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);

}  // namespace strug
