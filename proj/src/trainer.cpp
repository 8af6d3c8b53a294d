#include "strug/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "strug/errors.hpp"
#include "strug/text.hpp"

namespace strug {

using nlohmann::json;

void TrainConfig::validate() const {
    if (!(lr >= 0.0)) throw std::invalid_argument("lr must be >= 0");
    if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
    if (epochs <= 0) throw std::invalid_argument("epochs must be positive");
    if (k_neg < 0) throw std::invalid_argument("k_neg must be >= 0");
    if (clip_norm < 0.0) throw std::invalid_argument("clip_norm must be >= 0");
}

std::string TrainLog::to_csv() const {
    std::string out = "step,epoch,l_col,l_val,l_map,total\n";
    for (const auto& r : steps) {
        out += std::to_string(r.step) + "," + std::to_string(r.epoch) + "," + format_double(r.l_col) + "," +
               format_double(r.l_val) + "," + format_double(r.l_map) + "," + format_double(r.total) + "\n";
    }
    return out;
}

Adam::Adam(const Params& shape, double beta1, double beta2, double eps)
    : m_(shape.zeros_like()), v_(shape.zeros_like()), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(Params& params, const Params& grad, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));

    std::vector<Matrix*> p, m, v;
    std::vector<const Matrix*> g;
    params.for_each([&](const std::string&, Matrix& x) { p.push_back(&x); });
    m_.for_each([&](const std::string&, Matrix& x) { m.push_back(&x); });
    v_.for_each([&](const std::string&, Matrix& x) { v.push_back(&x); });
    grad.for_each([&](const std::string&, const Matrix& x) { g.push_back(&x); });

    for (std::size_t k = 0; k < p.size(); ++k) {
        m[k]->array() = beta1_ * m[k]->array() + (1.0 - beta1_) * g[k]->array();
        v[k]->array() = beta2_ * v[k]->array() + (1.0 - beta2_) * g[k]->array().square();
        p[k]->array() -= lr * ((m[k]->array() / c1) / ((v[k]->array() / c2).sqrt() + eps_));
    }
}

LinearizedInput linearize_example(const AugmentedExample& ex, const Vocab& vocab, std::size_t max_len) {
    return linearize(token_texts(tokenize(ex.base.sentence)), ex.presented_tables, vocab, max_len);
}

namespace {

double global_norm(const Params& g) {
    double sq = 0.0;
    g.for_each([&](const std::string&, const Matrix& m) { sq += m.squaredNorm(); });
    return std::sqrt(sq);
}

void scale_params(Params& g, double s) {
    g.for_each([&](const std::string&, Matrix& m) { m *= s; });
}

}  // namespace

TrainResult train(const EpochDataset& dataset, const Vocab& vocab, ModelConfig model_cfg, const TrainConfig& cfg,
                  const Params* initial) {
    cfg.validate();
    if (model_cfg.vocab_size == 0) model_cfg.vocab_size = static_cast<int>(vocab.size());
    if (model_cfg.vocab_size != static_cast<int>(vocab.size()))
        throw std::invalid_argument("model vocab_size does not match the vocab");
    model_cfg.validate();

    TrainResult result{initial ? *initial : init_params(model_cfg, derive_seed(cfg.seed, 0, "init")), {}};
    if (initial && !(initial->config == model_cfg)) throw std::invalid_argument("initial params use a different config");
    Params& params = result.params;
    Adam adam(params, cfg.beta1, cfg.beta2, cfg.adam_eps);
    std::size_t step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto examples = dataset(static_cast<std::uint64_t>(epoch));
        if (examples.empty()) throw std::invalid_argument("training dataset is empty");

        std::vector<LinearizedInput> inputs;
        inputs.reserve(examples.size());
        for (const auto& ex : examples) {
            try {
                inputs.push_back(linearize_example(ex, vocab, static_cast<std::size_t>(model_cfg.max_len)));
            } catch (const SequenceTooLong& e) {
                throw SequenceTooLong("example '" + ex.base.example_id + "': " + e.what());
            } catch (const EmptySchema& e) {
                throw EmptySchema("example '" + ex.base.example_id + "': " + e.what());
            }
        }

        std::vector<std::size_t> order(examples.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch), "shuffle"));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);

        const auto bs = static_cast<std::size_t>(cfg.batch_size);
        double epoch_total = 0.0;
        std::size_t epoch_steps = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += bs) {
            const std::size_t end = std::min(order.size(), begin + bs);
            const double scale = 1.0 / static_cast<double>(end - begin);
            Params grad = params.zeros_like();
            StepRecord rec;
            rec.step = step;
            rec.epoch = static_cast<std::size_t>(epoch);
            for (std::size_t b = begin; b < end; ++b) {
                const auto& ex = examples[order[b]];
                Rng dropout_rng(derive_seed(cfg.seed ^ 0xd4d4d4d4ULL, step, ex.base.example_id));
                LossBreakdown lb;
                try {
                    lb = loss_and_grad(inputs[order[b]], ex.labels, params, cfg.loss_weights, grad, scale,
                                       model_cfg.dropout > 0.0 ? &dropout_rng : nullptr);
                } catch (const ShapeMismatch& e) {
                    throw ShapeMismatch("example '" + ex.base.example_id + "': " + e.what());
                }
                rec.l_col += lb.l_col * scale;
                rec.l_val += lb.l_val * scale;
                rec.l_map += lb.l_map * scale;
                rec.total += lb.total * scale;
            }
            if (cfg.clip_norm > 0.0) {
                const double norm = global_norm(grad);
                if (norm > cfg.clip_norm) scale_params(grad, cfg.clip_norm / norm);
            }
            adam.step(params, grad, cfg.lr);
            result.log.steps.push_back(rec);
            epoch_total += rec.total;
            ++epoch_steps;
            ++step;
        }
        result.log.epoch_loss.push_back(epoch_total / static_cast<double>(epoch_steps));
    }
    return result;
}

TrainResult train(const std::vector<AugmentedExample>& dataset, const Vocab& vocab, ModelConfig model_cfg,
                  const TrainConfig& train_cfg, const Params* initial) {
    return train([&](std::uint64_t) { return dataset; }, vocab, model_cfg, train_cfg, initial);
}

// ---------------------------------------------------------------------------------------------
// Gradient check

ModelConfig micro_model_config() {
    ModelConfig c;
    c.d_model = 8;
    c.n_heads = 2;
    c.n_layers = 1;
    c.d_ff = 16;
    c.vocab_size = 12;
    c.max_len = 16;
    c.dropout = 0.0;
    return c;
}

namespace {

struct MicroExample {
    LinearizedInput input;
    GroundingLabels labels;
};

/// 4 utterance tokens; two columns, the first with a two-token header.
MicroExample micro_example(Rng& rng, int vocab_size) {
    const int lo = Vocab::kSep + 1;
    auto tok = [&] { return lo + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(vocab_size - lo))); };

    MicroExample ex;
    auto& in = ex.input;
    in.ids = {Vocab::kCls, tok(), tok(), tok(), tok(), Vocab::kSep, tok(), tok(), Vocab::kSep, tok(), Vocab::kSep};
    in.segments = {0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
    in.positions = {0, 1, 2, 3, 4, 5, 6, 7, 8, 6, 7};
    in.utterance_span = {1, 5};
    in.column_spans = {{6, 8}, {9, 10}};
    in.sep_positions = {5, 8, 10};
    in.pool_pairs = {{6, 7}, {9, 9}};

    auto& y = ex.labels;
    y.y_col = {1, static_cast<int>(rng.uniform_index(2))};
    y.y_val = {1, 1, 0, static_cast<int>(rng.uniform_index(2))};
    y.y_map = {{0}, y.y_col[1] ? std::vector<int>{0, 1} : std::vector<int>{0}, {}, {}};
    if (y.y_val[3]) y.y_map[3] = {y.y_col[1] ? 1 : 0};
    return ex;
}

double batch_loss(const std::vector<MicroExample>& batch, const Params& p) {
    double total = 0.0;
    for (const auto& ex : batch) total += compute_loss(forward(ex.input, p), ex.labels).total;
    return total / static_cast<double>(batch.size());
}

}  // namespace

GradCheckResult grad_check(const ModelConfig& model_cfg, std::uint64_t seed, const GradCheckOptions& options) {
    ModelConfig cfg = model_cfg;
    cfg.dropout = 0.0;
    cfg.max_len = std::max(cfg.max_len, 11);
    cfg.vocab_size = std::max(cfg.vocab_size, Vocab::kSep + 2);
    cfg.validate();

    Rng rng(derive_seed(seed, 0, "grad-check"));
    Params params = zero_params(cfg);
    if (!options.zero_init) {
        params = init_params(cfg, rng.next());
        params.for_each([&](const std::string&, Matrix& m) {
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += rng.normal(0.0, 0.1);
        });
    }
    std::vector<MicroExample> batch;
    for (int b = 0; b < 2; ++b) batch.push_back(micro_example(rng, cfg.vocab_size));

    Params analytic = params.zeros_like();
    for (const auto& ex : batch)
        loss_and_grad(ex.input, ex.labels, params, {}, analytic, 1.0 / static_cast<double>(batch.size()));
    if (options.corrupt_analytic) options.corrupt_analytic(analytic);

    std::vector<const Matrix*> grads;
    analytic.for_each([&](const std::string&, const Matrix& m) { grads.push_back(&m); });

    GradCheckResult result;
    std::size_t k = 0;
    params.for_each([&](const std::string& name, Matrix& m) {
        const Matrix& a = *grads[k++];
        double max_diff = 0.0, max_a = 0.0, max_n = 0.0;
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            const double orig = m.data()[i];
            m.data()[i] = orig + options.step;
            const double up = batch_loss(batch, params);
            m.data()[i] = orig - options.step;
            const double down = batch_loss(batch, params);
            m.data()[i] = orig;
            const double numeric = (up - down) / (2.0 * options.step);
            const double ai = a.data()[i];
            if (!std::isfinite(numeric) || !std::isfinite(ai)) result.finite = false;
            max_diff = std::max(max_diff, std::abs(ai - numeric));
            max_a = std::max(max_a, std::abs(ai));
            max_n = std::max(max_n, std::abs(numeric));
        }
        const double rel = max_diff / std::max({max_a, max_n, 1e-6});
        result.per_tensor.emplace_back(name, rel);
        if (result.worst_tensor.empty() || rel > result.max_relative_error) {
            result.max_relative_error = rel;
            result.worst_tensor = name;
        }
    });
    if (!result.finite) result.max_relative_error = std::numeric_limits<double>::quiet_NaN();
    return result;
}

void from_json(const json& j, TrainConfig& c) {
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.k_neg = j.value("k_neg", c.k_neg);
    c.seed = j.value("seed", c.seed);
    if (auto it = j.find("loss_weights"); it != j.end()) {
        const auto w = it->get<std::vector<double>>();
        if (w.size() != 3) throw std::invalid_argument("loss_weights must have 3 entries");
        c.loss_weights = {w[0], w[1], w[2]};
    }
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"lr", c.lr},
             {"batch_size", c.batch_size},
             {"epochs", c.epochs},
             {"k_neg", c.k_neg},
             {"seed", c.seed},
             {"loss_weights", {c.loss_weights.col, c.loss_weights.val, c.loss_weights.map}},
             {"beta1", c.beta1},
             {"beta2", c.beta2},
             {"adam_eps", c.adam_eps},
             {"clip_norm", c.clip_norm}};
}

}  // namespace strug
