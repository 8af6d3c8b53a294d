#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "strug/linearizer.hpp"
#include "strug/util.hpp"
#include "strug/weak_labeler.hpp"

namespace strug {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct ModelConfig {
    int d_model = 64;
    int n_heads = 4;
    int n_layers = 2;
    int d_ff = 128;
    double dropout = 0.0;
    int vocab_size = 0;
    int max_len = static_cast<int>(kDefaultMaxLen);

    /// Throws std::invalid_argument on a broken invariant.
    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerParams {
    Matrix ln1_g, ln1_b;
    Matrix wq, bq, wk, bk, wv, bv, wo, bo;
    Matrix ln2_g, ln2_b;
    Matrix w1, b1, w2, b2;
};

/// All trainable tensors. Biases and layer-norm parameters are 1 x n row matrices.
struct Params {
    ModelConfig config;
    Matrix tok_emb, pos_emb, seg_emb;
    std::vector<LayerParams> layers;
    Matrix lnf_g, lnf_b;
    // Column grounding head: p_col = sigmoid(c . col_w + col_b).
    Matrix col_w, col_b;
    // Value grounding head: p_val = sigmoid(x . val_w + val_b).
    Matrix val_w, val_b;
    // Column-value mapping head: score(i, j) = map_u . tanh(x_i map_wx + c_j map_wc + map_b).
    Matrix map_wx, map_wc, map_b, map_u;

    /// Visits every tensor with a stable dotted name, in a fixed order.
    void for_each(const std::function<void(const std::string&, Matrix&)>& fn);
    void for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const;

    std::size_t num_parameters() const;
    /// Same shapes, all zeros.
    Params zeros_like() const;
};

/// Random initialization: N(0, 0.1) embeddings, N(0, 1/sqrt(fan_in)) weights, zero biases, unit gains.
Params init_params(const ModelConfig& config, std::uint64_t seed);

/// Every tensor zero, including layer-norm gains.
Params zero_params(const ModelConfig& config);

struct ModelOutput {
    Matrix token_vecs;  // seq_len x d_model
    Matrix col_vecs;    // m x d_model
    Vector p_col;       // m
    Vector p_val;       // n_utt
    Matrix p_map;       // n_utt x m, rows sum to 1
};

struct LossWeights {
    double col = 1.0;
    double val = 1.0;
    double map = 1.0;
};

struct LossBreakdown {
    double l_col = 0.0;
    double l_val = 0.0;
    double l_map = 0.0;
    double total = 0.0;
    LossWeights weights;
};

constexpr double kProbEpsilon = 1e-7;

/// Transformer stack plus column pooling. Throws SequenceTooLong.
struct Encoding {
    Matrix token_vecs;
    Matrix col_vecs;
};
Encoding encode(const LinearizedInput& input, const Params& params);

ModelOutput heads(const Matrix& token_vecs, const Matrix& col_vecs, const LinearizedInput& input, const Params& params);

ModelOutput forward(const LinearizedInput& input, const Params& params);

/// Clipped BCE for the column and value heads, soft-target cross entropy for the mapping head.
/// Throws ShapeMismatch.
LossBreakdown compute_loss(const ModelOutput& out, const GroundingLabels& labels, const LossWeights& weights = {});

/// Forward, loss and backward for one example. Adds scale * d(total)/d(theta) into `grad`.
/// `dropout_rng` enables dropout on the residual branches when config.dropout > 0.
LossBreakdown loss_and_grad(const LinearizedInput& input, const GroundingLabels& labels, const Params& params,
                            const LossWeights& weights, Params& grad, double scale = 1.0, Rng* dropout_rng = nullptr);

/// Versioned JSON checkpoint: config, vocab and named float64 tensors.
nlohmann::json checkpoint_to_json(const Params& params, const Vocab& vocab);
Params checkpoint_from_json(const nlohmann::json& j, Vocab* vocab = nullptr);

/// FNV-1a over the raw bytes of every tensor in for_each order.
std::uint64_t params_hash(const Params& params);
std::uint64_t matrix_hash(const Matrix& m, std::uint64_t basis = 0xcbf29ce484222325ULL);

void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);

}  // namespace strug
