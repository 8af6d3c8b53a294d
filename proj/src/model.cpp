#include "strug/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <numbers>
#include <stdexcept>

#include "strug/errors.hpp"

namespace strug {

using nlohmann::json;

void ModelConfig::validate() const {
    if (d_model <= 0 || n_heads <= 0 || n_layers < 0 || d_ff <= 0)
        throw std::invalid_argument("model dimensions must be positive");
    if (d_model % n_heads != 0) throw std::invalid_argument("d_model must be divisible by n_heads");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must be in [0, 1)");
    if (vocab_size <= 0) throw std::invalid_argument("vocab_size must be positive");
    if (max_len <= 0) throw std::invalid_argument("max_len must be positive");
}

// ---------------------------------------------------------------------------------------------
// Parameters

namespace {

template <typename P, typename Fn>
void visit_params(P& p, Fn&& fn) {
    fn("tok_emb", p.tok_emb);
    fn("pos_emb", p.pos_emb);
    fn("seg_emb", p.seg_emb);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        auto& L = p.layers[l];
        const std::string pre = "layers." + std::to_string(l) + ".";
        fn(pre + "ln1_g", L.ln1_g);
        fn(pre + "ln1_b", L.ln1_b);
        fn(pre + "wq", L.wq);
        fn(pre + "bq", L.bq);
        fn(pre + "wk", L.wk);
        fn(pre + "bk", L.bk);
        fn(pre + "wv", L.wv);
        fn(pre + "bv", L.bv);
        fn(pre + "wo", L.wo);
        fn(pre + "bo", L.bo);
        fn(pre + "ln2_g", L.ln2_g);
        fn(pre + "ln2_b", L.ln2_b);
        fn(pre + "w1", L.w1);
        fn(pre + "b1", L.b1);
        fn(pre + "w2", L.w2);
        fn(pre + "b2", L.b2);
    }
    fn("lnf_g", p.lnf_g);
    fn("lnf_b", p.lnf_b);
    fn("col_w", p.col_w);
    fn("col_b", p.col_b);
    fn("val_w", p.val_w);
    fn("val_b", p.val_b);
    fn("map_wx", p.map_wx);
    fn("map_wc", p.map_wc);
    fn("map_b", p.map_b);
    fn("map_u", p.map_u);
}

Params shaped(const ModelConfig& c) {
    c.validate();
    const int d = c.d_model;
    Params p;
    p.config = c;
    p.tok_emb = Matrix::Zero(c.vocab_size, d);
    p.pos_emb = Matrix::Zero(c.max_len, d);
    p.seg_emb = Matrix::Zero(2, d);
    p.layers.resize(static_cast<std::size_t>(c.n_layers));
    for (auto& L : p.layers) {
        L.ln1_g = Matrix::Zero(1, d);
        L.ln1_b = Matrix::Zero(1, d);
        L.wq = Matrix::Zero(d, d);
        L.bq = Matrix::Zero(1, d);
        L.wk = Matrix::Zero(d, d);
        L.bk = Matrix::Zero(1, d);
        L.wv = Matrix::Zero(d, d);
        L.bv = Matrix::Zero(1, d);
        L.wo = Matrix::Zero(d, d);
        L.bo = Matrix::Zero(1, d);
        L.ln2_g = Matrix::Zero(1, d);
        L.ln2_b = Matrix::Zero(1, d);
        L.w1 = Matrix::Zero(d, c.d_ff);
        L.b1 = Matrix::Zero(1, c.d_ff);
        L.w2 = Matrix::Zero(c.d_ff, d);
        L.b2 = Matrix::Zero(1, d);
    }
    p.lnf_g = Matrix::Zero(1, d);
    p.lnf_b = Matrix::Zero(1, d);
    p.col_w = Matrix::Zero(d, 1);
    p.col_b = Matrix::Zero(1, 1);
    p.val_w = Matrix::Zero(d, 1);
    p.val_b = Matrix::Zero(1, 1);
    p.map_wx = Matrix::Zero(d, d);
    p.map_wc = Matrix::Zero(d, d);
    p.map_b = Matrix::Zero(1, d);
    p.map_u = Matrix::Zero(d, 1);
    return p;
}

void fill_normal(Matrix& m, Rng& rng, double stddev) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, stddev);
}

}  // namespace

void Params::for_each(const std::function<void(const std::string&, Matrix&)>& fn) { visit_params(*this, fn); }

void Params::for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const {
    visit_params(*this, fn);
}

std::size_t Params::num_parameters() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

Params Params::zeros_like() const { return shaped(config); }

Params zero_params(const ModelConfig& config) { return shaped(config); }

Params init_params(const ModelConfig& config, std::uint64_t seed) {
    Params p = shaped(config);
    Rng rng(seed);
    p.for_each([&](const std::string& name, Matrix& m) {
        const auto dot = name.rfind('.');
        const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
        if (leaf.ends_with("_emb")) {
            fill_normal(m, rng, 0.1);
        } else if (leaf.starts_with("ln") && leaf.ends_with("_g")) {
            m.setOnes();
        } else if (m.rows() > 1) {
            fill_normal(m, rng, 1.0 / std::sqrt(static_cast<double>(m.rows())));
        }
    });
    return p;
}

// ---------------------------------------------------------------------------------------------
// Forward / backward building blocks

namespace {

constexpr double kLayerNormEps = 1e-5;
const double kMaxProb = std::nextafter(1.0, 0.0);
constexpr double kMinProb = 1e-300;

struct LNCache {
    Matrix xhat;
    Vector rstd;
};

Matrix layer_norm(const Matrix& x, const Matrix& g, const Matrix& b, LNCache& cache) {
    const Eigen::Index n = x.rows(), d = x.cols();
    cache.xhat.resize(n, d);
    cache.rstd.resize(n);
    Matrix y(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mu = x.row(i).mean();
        const double var = (x.row(i).array() - mu).square().mean();
        const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
        cache.rstd(i) = rstd;
        cache.xhat.row(i) = (x.row(i).array() - mu) * rstd;
        y.row(i) = cache.xhat.row(i).array() * g.row(0).array() + b.row(0).array();
    }
    return y;
}

Matrix layer_norm_backward(const Matrix& dy, const LNCache& cache, const Matrix& g, Matrix& dg, Matrix& db) {
    const Eigen::Index n = dy.rows(), d = dy.cols();
    Matrix dx(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        dg.row(0).array() += dy.row(i).array() * cache.xhat.row(i).array();
        db.row(0) += dy.row(i);
        const Eigen::ArrayXd dxhat = (dy.row(i).array() * g.row(0).array()).transpose();
        const Eigen::ArrayXd xhat = cache.xhat.row(i).array().transpose();
        const double m1 = dxhat.mean();
        const double m2 = (dxhat * xhat).mean();
        dx.row(i) = (cache.rstd(i) * (dxhat - m1 - xhat * m2)).transpose();
    }
    return dx;
}

Matrix add_bias(Matrix m, const Matrix& b) {
    m.rowwise() += b.row(0);
    return m;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + 0.044715 * u * u * u))); }

double gelu_grad(double u) {
    const double t = std::tanh(kGeluC * (u + 0.044715 * u * u * u));
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

double sigmoid(double z) {
    double p;
    if (z >= 0) {
        p = 1.0 / (1.0 + std::exp(-z));
    } else {
        const double e = std::exp(z);
        p = e / (1.0 + e);
    }
    return std::clamp(p, kMinProb, kMaxProb);
}

void softmax_rows(Matrix& s) {
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const double mx = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - mx).exp();
        s.row(i) /= s.row(i).sum();
    }
}

Matrix colsum(const Matrix& m) { return m.colwise().sum(); }

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
    Matrix mask(rows, cols);
    const double keep = 1.0 - p;
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform01() < keep ? 1.0 / keep : 0.0;
    return mask;
}

struct LayerCache {
    LNCache ln1;
    Matrix a, q, k, v;
    std::vector<Matrix> probs;
    Matrix o;
    Matrix mask1;
    LNCache ln2;
    Matrix b, u, g;
    Matrix mask2;
};

struct ForwardCache {
    std::vector<LayerCache> layers;
    LNCache lnf;
    Matrix xu;                  // utterance rows of token_vecs
    Matrix ax, ac;              // mapping head projections
    std::vector<Matrix> hidden;  // per utterance token: m x d tanh activations
};

void check_input(const LinearizedInput& input, const Params& params) {
    const auto& c = params.config;
    if (input.ids.size() > static_cast<std::size_t>(c.max_len))
        throw SequenceTooLong("sequence of " + std::to_string(input.ids.size()) + " tokens exceeds max_len " +
                              std::to_string(c.max_len));
    if (input.ids.size() != input.segments.size() || input.ids.size() != input.positions.size())
        throw ShapeMismatch("ids, segments and positions differ in length");
    for (std::size_t t = 0; t < input.ids.size(); ++t) {
        if (input.ids[t] < 0 || input.ids[t] >= c.vocab_size)
            throw ShapeMismatch("token id " + std::to_string(input.ids[t]) + " outside vocab of " +
                                std::to_string(c.vocab_size));
        if (input.positions[t] >= static_cast<std::size_t>(c.max_len))
            throw SequenceTooLong("position id exceeds max_len");
        if (input.segments[t] < 0 || input.segments[t] > 1) throw ShapeMismatch("segment id must be 0 or 1");
    }
    if (input.pool_pairs.size() != input.column_spans.size()) throw ShapeMismatch("pool_pairs/column_spans mismatch");
    for (const auto& [f, l] : input.pool_pairs)
        if (f > l || l >= input.ids.size()) throw ShapeMismatch("pool pair outside sequence");
    if (input.utterance_span.end > input.ids.size() || input.utterance_span.start > input.utterance_span.end)
        throw ShapeMismatch("utterance span outside sequence");
}

Encoding encode_impl(const LinearizedInput& input, const Params& params, Rng* dropout_rng, ForwardCache* cache) {
    check_input(input, params);
    const auto& cfg = params.config;
    const Eigen::Index n = static_cast<Eigen::Index>(input.ids.size());
    const Eigen::Index d = cfg.d_model;
    const int heads = cfg.n_heads;
    const Eigen::Index dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const bool use_dropout = dropout_rng != nullptr && cfg.dropout > 0.0;

    Matrix h(n, d);
    for (Eigen::Index t = 0; t < n; ++t) {
        h.row(t) = params.tok_emb.row(input.ids[static_cast<std::size_t>(t)]) +
                   params.pos_emb.row(static_cast<Eigen::Index>(input.positions[static_cast<std::size_t>(t)])) +
                   params.seg_emb.row(input.segments[static_cast<std::size_t>(t)]);
    }

    ForwardCache local;
    ForwardCache& fc = cache ? *cache : local;
    fc.layers.assign(params.layers.size(), {});

    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& L = params.layers[l];
        auto& lc = fc.layers[l];

        lc.a = layer_norm(h, L.ln1_g, L.ln1_b, lc.ln1);
        lc.q = add_bias(lc.a * L.wq, L.bq);
        lc.k = add_bias(lc.a * L.wk, L.bk);
        lc.v = add_bias(lc.a * L.wv, L.bv);
        lc.o.resize(n, d);
        lc.probs.resize(static_cast<std::size_t>(heads));
        for (int hd = 0; hd < heads; ++hd) {
            const Eigen::Index off = hd * dh;
            Matrix s = lc.q.middleCols(off, dh) * lc.k.middleCols(off, dh).transpose() * scale;
            softmax_rows(s);
            lc.o.middleCols(off, dh) = s * lc.v.middleCols(off, dh);
            lc.probs[static_cast<std::size_t>(hd)] = std::move(s);
        }
        Matrix z = add_bias(lc.o * L.wo, L.bo);
        if (use_dropout) {
            lc.mask1 = dropout_mask(n, d, cfg.dropout, *dropout_rng);
            z.array() *= lc.mask1.array();
        }
        h += z;

        lc.b = layer_norm(h, L.ln2_g, L.ln2_b, lc.ln2);
        lc.u = add_bias(lc.b * L.w1, L.b1);
        lc.g = lc.u.unaryExpr([](double x) { return gelu(x); });
        Matrix f = add_bias(lc.g * L.w2, L.b2);
        if (use_dropout) {
            lc.mask2 = dropout_mask(n, d, cfg.dropout, *dropout_rng);
            f.array() *= lc.mask2.array();
        }
        h += f;
    }

    Encoding enc;
    enc.token_vecs = layer_norm(h, params.lnf_g, params.lnf_b, fc.lnf);
    const auto m = static_cast<Eigen::Index>(input.pool_pairs.size());
    enc.col_vecs.resize(m, d);
    for (Eigen::Index j = 0; j < m; ++j) {
        const auto [first, last] = input.pool_pairs[static_cast<std::size_t>(j)];
        enc.col_vecs.row(j) = (enc.token_vecs.row(static_cast<Eigen::Index>(first)) +
                               enc.token_vecs.row(static_cast<Eigen::Index>(last))) /
                              2.0;
    }
    return enc;
}

ModelOutput heads_impl(const Matrix& token_vecs, const Matrix& col_vecs, const LinearizedInput& input,
                       const Params& params, ForwardCache* cache) {
    const auto us = static_cast<Eigen::Index>(input.utterance_span.start);
    const auto nu = static_cast<Eigen::Index>(input.num_utterance_tokens());
    const Eigen::Index m = col_vecs.rows();
    if (token_vecs.rows() < us + nu || col_vecs.cols() != token_vecs.cols())
        throw ShapeMismatch("heads: token/column matrices do not match input spans");

    ModelOutput out;
    out.token_vecs = token_vecs;
    out.col_vecs = col_vecs;
    const Matrix xu = token_vecs.middleRows(us, nu);

    out.p_col.resize(m);
    const Matrix zc = col_vecs * params.col_w;
    for (Eigen::Index j = 0; j < m; ++j) out.p_col(j) = sigmoid(zc(j, 0) + params.col_b(0, 0));

    out.p_val.resize(nu);
    const Matrix zv = xu * params.val_w;
    for (Eigen::Index i = 0; i < nu; ++i) out.p_val(i) = sigmoid(zv(i, 0) + params.val_b(0, 0));

    const Matrix ax = xu * params.map_wx;
    const Matrix ac = add_bias(col_vecs * params.map_wc, params.map_b);
    out.p_map.resize(nu, m);
    std::vector<Matrix> hidden(static_cast<std::size_t>(nu));
    for (Eigen::Index i = 0; i < nu; ++i) {
        Matrix t = ac;
        t.rowwise() += ax.row(i);
        t = t.array().tanh().matrix();
        out.p_map.row(i) = (t * params.map_u).transpose();
        hidden[static_cast<std::size_t>(i)] = std::move(t);
    }
    softmax_rows(out.p_map);

    if (cache) {
        cache->xu = xu;
        cache->ax = ax;
        cache->ac = ac;
        cache->hidden = std::move(hidden);
    }
    return out;
}

/// d(total)/d(logit) for each head. Mirrors compute_loss term by term.
struct LogitGrads {
    Vector dzc;
    Vector dzv;
    Matrix ds;
};

double bce(double p, int y) {
    const double pc = std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
    return y ? -std::log(pc) : -std::log(1.0 - pc);
}

double bce_logit_grad(double p, int y) {
    return (p > kProbEpsilon && p < 1.0 - kProbEpsilon) ? p - static_cast<double>(y) : 0.0;
}

LossBreakdown loss_impl(const ModelOutput& out, const GroundingLabels& labels, const LossWeights& w, LogitGrads* g) {
    const auto m = static_cast<std::size_t>(out.p_col.size());
    const auto nu = static_cast<std::size_t>(out.p_val.size());
    if (labels.y_col.size() != m)
        throw ShapeMismatch("y_col has " + std::to_string(labels.y_col.size()) + " entries, model presents " +
                            std::to_string(m) + " columns");
    if (labels.y_val.size() != nu || labels.y_map.size() != nu)
        throw ShapeMismatch("y_val/y_map length " + std::to_string(labels.y_val.size()) + " != utterance length " +
                            std::to_string(nu));
    if (static_cast<std::size_t>(out.p_map.rows()) != nu || static_cast<std::size_t>(out.p_map.cols()) != m)
        throw ShapeMismatch("p_map shape does not match");

    LossBreakdown lb;
    lb.weights = w;
    if (g) {
        g->dzc = Vector::Zero(static_cast<Eigen::Index>(m));
        g->dzv = Vector::Zero(static_cast<Eigen::Index>(nu));
        g->ds = Matrix::Zero(static_cast<Eigen::Index>(nu), static_cast<Eigen::Index>(m));
    }

    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        sum += bce(out.p_col(jj), labels.y_col[j]);
        if (g) g->dzc(jj) = w.col * bce_logit_grad(out.p_col(jj), labels.y_col[j]) / static_cast<double>(m);
    }
    lb.l_col = m ? sum / static_cast<double>(m) : 0.0;

    sum = 0.0;
    for (std::size_t i = 0; i < nu; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        sum += bce(out.p_val(ii), labels.y_val[i]);
        if (g) g->dzv(ii) = w.val * bce_logit_grad(out.p_val(ii), labels.y_val[i]) / static_cast<double>(nu);
    }
    lb.l_val = nu ? sum / static_cast<double>(nu) : 0.0;

    std::size_t aligned = 0;
    for (std::size_t i = 0; i < nu; ++i) {
        for (int j : labels.y_map[i])
            if (j < 0 || static_cast<std::size_t>(j) >= m) throw ShapeMismatch("y_map references a missing column");
        if (labels.y_val[i] == 1 && !labels.y_map[i].empty()) ++aligned;
    }
    sum = 0.0;
    for (std::size_t i = 0; i < nu && aligned; ++i) {
        if (labels.y_val[i] != 1 || labels.y_map[i].empty()) continue;
        const auto ii = static_cast<Eigen::Index>(i);
        const double k = static_cast<double>(labels.y_map[i].size());
        double term = 0.0;
        double live = 0.0;
        for (int j : labels.y_map[i]) {
            const double p = out.p_map(ii, j);
            term -= std::log(std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon));
            if (p > kProbEpsilon && p < 1.0 - kProbEpsilon) {
                live += 1.0;
                if (g) g->ds(ii, j) -= w.map / (k * static_cast<double>(aligned));
            }
        }
        sum += term / k;
        if (g && live > 0.0) g->ds.row(ii) += (w.map * live / (k * static_cast<double>(aligned))) * out.p_map.row(ii);
    }
    lb.l_map = aligned ? sum / static_cast<double>(aligned) : 0.0;

    lb.total = w.col * lb.l_col + w.val * lb.l_val + w.map * lb.l_map;
    return lb;
}

}  // namespace

Encoding encode(const LinearizedInput& input, const Params& params) {
    return encode_impl(input, params, nullptr, nullptr);
}

ModelOutput heads(const Matrix& token_vecs, const Matrix& col_vecs, const LinearizedInput& input,
                  const Params& params) {
    return heads_impl(token_vecs, col_vecs, input, params, nullptr);
}

ModelOutput forward(const LinearizedInput& input, const Params& params) {
    auto enc = encode(input, params);
    return heads(enc.token_vecs, enc.col_vecs, input, params);
}

LossBreakdown compute_loss(const ModelOutput& out, const GroundingLabels& labels, const LossWeights& weights) {
    return loss_impl(out, labels, weights, nullptr);
}

LossBreakdown loss_and_grad(const LinearizedInput& input, const GroundingLabels& labels, const Params& params,
                            const LossWeights& weights, Params& grad, double scale, Rng* dropout_rng) {
    ForwardCache fc;
    const auto enc = encode_impl(input, params, dropout_rng, &fc);
    const auto out = heads_impl(enc.token_vecs, enc.col_vecs, input, params, &fc);
    LogitGrads lg;
    const LossBreakdown lb = loss_impl(out, labels, weights, &lg);

    const auto& cfg = params.config;
    const Eigen::Index n = enc.token_vecs.rows();
    const Eigen::Index d = cfg.d_model;
    const Eigen::Index m = enc.col_vecs.rows();
    const auto us = static_cast<Eigen::Index>(input.utterance_span.start);
    const Eigen::Index nu = fc.xu.rows();
    lg.dzc *= scale;
    lg.dzv *= scale;
    lg.ds *= scale;

    // Heads.
    Matrix dxu = Matrix::Zero(nu, d);
    Matrix dc = Matrix::Zero(m, d);

    grad.col_w += enc.col_vecs.transpose() * lg.dzc;
    grad.col_b(0, 0) += lg.dzc.sum();
    dc += lg.dzc * params.col_w.transpose();

    grad.val_w += fc.xu.transpose() * lg.dzv;
    grad.val_b(0, 0) += lg.dzv.sum();
    dxu += lg.dzv * params.val_w.transpose();

    Matrix dax = Matrix::Zero(nu, d);
    Matrix dac = Matrix::Zero(m, d);
    for (Eigen::Index i = 0; i < nu; ++i) {
        const Matrix& t = fc.hidden[static_cast<std::size_t>(i)];
        const Vector ds_i = lg.ds.row(i).transpose();  // m
        grad.map_u += t.transpose() * ds_i;
        Matrix dpre = ds_i * params.map_u.transpose();  // m x d
        dpre.array() *= (1.0 - t.array().square());
        dax.row(i) += dpre.colwise().sum();
        dac += dpre;
    }
    grad.map_b += colsum(dac);
    grad.map_wx += fc.xu.transpose() * dax;
    grad.map_wc += enc.col_vecs.transpose() * dac;
    dxu += dax * params.map_wx.transpose();
    dc += dac * params.map_wc.transpose();

    // Column pooling and utterance rows back into token_vecs.
    Matrix dx = Matrix::Zero(n, d);
    dx.middleRows(us, nu) += dxu;
    for (Eigen::Index j = 0; j < m; ++j) {
        const auto [first, last] = input.pool_pairs[static_cast<std::size_t>(j)];
        dx.row(static_cast<Eigen::Index>(first)) += dc.row(j) / 2.0;
        dx.row(static_cast<Eigen::Index>(last)) += dc.row(j) / 2.0;
    }

    Matrix dh = layer_norm_backward(dx, fc.lnf, params.lnf_g, grad.lnf_g, grad.lnf_b);

    const int heads_n = cfg.n_heads;
    const Eigen::Index dhd = d / heads_n;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dhd));
    for (std::size_t l = params.layers.size(); l-- > 0;) {
        const auto& L = params.layers[l];
        auto& G = grad.layers[l];
        const auto& lc = fc.layers[l];

        // Feed-forward branch.
        Matrix df = dh;
        if (lc.mask2.size()) df.array() *= lc.mask2.array();
        G.w2 += lc.g.transpose() * df;
        G.b2 += colsum(df);
        Matrix du = df * L.w2.transpose();
        du.array() *= lc.u.unaryExpr([](double x) { return gelu_grad(x); }).array();
        G.w1 += lc.b.transpose() * du;
        G.b1 += colsum(du);
        const Matrix db = du * L.w1.transpose();
        dh += layer_norm_backward(db, lc.ln2, L.ln2_g, G.ln2_g, G.ln2_b);

        // Attention branch.
        Matrix dz = dh;
        if (lc.mask1.size()) dz.array() *= lc.mask1.array();
        G.wo += lc.o.transpose() * dz;
        G.bo += colsum(dz);
        const Matrix dout = dz * L.wo.transpose();
        Matrix dq(n, d), dk(n, d), dv(n, d);
        for (int hd = 0; hd < heads_n; ++hd) {
            const Eigen::Index off = hd * dhd;
            const Matrix& p = lc.probs[static_cast<std::size_t>(hd)];
            const Matrix doh = dout.middleCols(off, dhd);
            const Matrix dp = doh * lc.v.middleCols(off, dhd).transpose();
            dv.middleCols(off, dhd) = p.transpose() * doh;
            Matrix dsm = dp;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double dot = (dp.row(i).array() * p.row(i).array()).sum();
                dsm.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
            }
            dsm *= att_scale;
            dq.middleCols(off, dhd) = dsm * lc.k.middleCols(off, dhd);
            dk.middleCols(off, dhd) = dsm.transpose() * lc.q.middleCols(off, dhd);
        }
        G.wq += lc.a.transpose() * dq;
        G.bq += colsum(dq);
        G.wk += lc.a.transpose() * dk;
        G.bk += colsum(dk);
        G.wv += lc.a.transpose() * dv;
        G.bv += colsum(dv);
        const Matrix da = dq * L.wq.transpose() + dk * L.wk.transpose() + dv * L.wv.transpose();
        dh += layer_norm_backward(da, lc.ln1, L.ln1_g, G.ln1_g, G.ln1_b);
    }

    for (Eigen::Index t = 0; t < n; ++t) {
        const auto ts = static_cast<std::size_t>(t);
        grad.tok_emb.row(input.ids[ts]) += dh.row(t);
        grad.pos_emb.row(static_cast<Eigen::Index>(input.positions[ts])) += dh.row(t);
        grad.seg_emb.row(input.segments[ts]) += dh.row(t);
    }
    return lb;
}

// ---------------------------------------------------------------------------------------------
// Serialization

void from_json(const json& j, ModelConfig& c) {
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.dropout = j.value("dropout", c.dropout);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_len = j.value("max_len", c.max_len);
}

void to_json(json& j, const ModelConfig& c) {
    j = json{{"d_model", c.d_model}, {"n_heads", c.n_heads},       {"n_layers", c.n_layers}, {"d_ff", c.d_ff},
             {"dropout", c.dropout}, {"vocab_size", c.vocab_size}, {"max_len", c.max_len}};
}

namespace {
constexpr const char* kCheckpointFormat = "strug-checkpoint";
constexpr int kCheckpointVersion = 1;
}  // namespace

json checkpoint_to_json(const Params& params, const Vocab& vocab) {
    json tensors = json::array();
    params.for_each([&](const std::string& name, const Matrix& m) {
        std::vector<double> data(m.data(), m.data() + m.size());
        tensors.push_back(json{{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", data}});
    });
    return json{{"format", kCheckpointFormat},
                {"version", kCheckpointVersion},
                {"config", params.config},
                {"vocab", vocab.tokens()},
                {"tensors", tensors}};
}

Params checkpoint_from_json(const json& j, Vocab* vocab) {
    if (j.value("format", std::string()) != kCheckpointFormat) throw std::invalid_argument("not a strug checkpoint");
    if (j.value("version", 0) != kCheckpointVersion)
        throw std::invalid_argument("unsupported checkpoint version " + std::to_string(j.value("version", 0)));
    Params p = shaped(j.at("config").get<ModelConfig>());
    std::map<std::string, const json*> by_name;
    for (const auto& t : j.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;
    p.for_each([&](const std::string& name, Matrix& m) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::invalid_argument("checkpoint is missing tensor " + name);
        const json& t = *it->second;
        if (t.at("rows").get<Eigen::Index>() != m.rows() || t.at("cols").get<Eigen::Index>() != m.cols())
            throw std::invalid_argument("checkpoint tensor " + name + " has the wrong shape");
        const auto data = t.at("data").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(data.size()) != m.size())
            throw std::invalid_argument("checkpoint tensor " + name + " has the wrong size");
        std::copy(data.begin(), data.end(), m.data());
    });
    if (vocab) {
        const auto tokens = j.at("vocab").get<std::vector<std::string>>();
        std::string text;
        for (std::size_t i = 0; i < tokens.size(); ++i) text += tokens[i] + "\t" + std::to_string(i) + "\n";
        *vocab = Vocab::deserialize(text);
        if (static_cast<int>(vocab->size()) != p.config.vocab_size)
            throw std::invalid_argument("checkpoint vocab size does not match config");
    }
    return p;
}

std::uint64_t matrix_hash(const Matrix& m, std::uint64_t basis) {
    return fnv1a64(std::string_view(reinterpret_cast<const char*>(m.data()),
                                    static_cast<std::size_t>(m.size()) * sizeof(double)),
                   basis);
}

std::uint64_t params_hash(const Params& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    params.for_each([&](const std::string& name, const Matrix& m) {
        h = fnv1a64(name, h);
        h = matrix_hash(m, h);
    });
    return h;
}

}  // namespace strug
