#include "recindial/seqmodel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace recindial {
namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInf = std::numeric_limits<double>::infinity();

// out = in W + b, row by row. Used by both the batched forward and the incremental cursor so the
// two paths produce bit-identical results.
void linear_forward(const Matrix& in, const Matrix& W, const Matrix& b, Matrix& out) {
    out = Matrix(in.rows(), W.cols());
    for (std::size_t r = 0; r < in.rows(); ++r) {
        auto o = out.row(r);
        std::copy(b.flat().begin(), b.flat().end(), o.begin());
        const auto x = in.row(r);
        for (std::size_t p = 0; p < x.size(); ++p) {
            const double v = x[p];
            if (v == 0.0) continue;
            const auto w = W.row(p);
            for (std::size_t j = 0; j < o.size(); ++j) o[j] += v * w[j];
        }
    }
}

void linear_backward(const Matrix& in, const Matrix& W, const Matrix& d_out, Matrix& dW, Matrix& db, Matrix* d_in) {
    matmul_tn_acc(in, d_out, dW);
    for (std::size_t r = 0; r < d_out.rows(); ++r) axpy(1.0, d_out.row(r), db.flat());
    if (d_in) {
        Matrix tmp;
        matmul_nt(d_out, W, tmp);
        *d_in += tmp;
    }
}

void layernorm_forward(const Matrix& x, const Matrix& g, const Matrix& b, Matrix& out, Matrix* hat,
                       std::vector<double>* rstd) {
    const std::size_t d = x.cols();
    out = Matrix(x.rows(), d);
    if (hat) *hat = Matrix(x.rows(), d);
    if (rstd) rstd->assign(x.rows(), 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto xr = x.row(r);
        double mean = 0.0;
        for (double v : xr) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : xr) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + kLnEps);
        auto o = out.row(r);
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (xr[j] - mean) * rs;
            if (hat) (*hat)(r, j) = h;
            o[j] = h * g(0, j) + b(0, j);
        }
        if (rstd) (*rstd)[r] = rs;
    }
}

void layernorm_backward(const Matrix& hat, const std::vector<double>& rstd, const Matrix& g, const Matrix& d_out,
                        Matrix& dg, Matrix& db, Matrix& d_in) {
    const std::size_t d = hat.cols();
    std::vector<double> dh(d);
    for (std::size_t r = 0; r < hat.rows(); ++r) {
        const auto h = hat.row(r);
        const auto dy = d_out.row(r);
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            dg(0, j) += dy[j] * h[j];
            db(0, j) += dy[j];
            dh[j] = dy[j] * g(0, j);
            mean_dh += dh[j];
            mean_dh_h += dh[j] * h[j];
        }
        mean_dh /= static_cast<double>(d);
        mean_dh_h /= static_cast<double>(d);
        auto dx = d_in.row(r);
        for (std::size_t j = 0; j < d; ++j) dx[j] += rstd[r] * (dh[j] - mean_dh - h[j] * mean_dh_h);
    }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); }

double gelu_grad(double x) {
    const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, std::mt19937_64& rng) {
    Matrix m(rows, cols, 1.0);
    if (rate <= 0.0) return m;
    std::bernoulli_distribution keep(1.0 - rate);
    const double scale = 1.0 / (1.0 - rate);
    for (double& v : m.flat()) v = keep(rng) ? scale : 0.0;
    return m;
}

void apply_mask(Matrix& x, const Matrix& mask) {
    if (mask.empty()) return;
    auto xs = x.flat();
    const auto ms = mask.flat();
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] *= ms[i];
}

/// Causal self-attention for rows [first, T) of `qkv` against keys/values in rows [0, T).
/// Writes y rows [first, T) and, when `probs` is non-null, each head's probability rows.
void causal_attention(const Matrix& qkv, std::size_t heads, std::size_t first, Matrix& y, std::vector<Matrix>* probs) {
    const std::size_t T = qkv.rows();
    const std::size_t d = qkv.cols() / 3;
    const std::size_t hd = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<double> p(T);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t qo = h * hd, ko = d + h * hd, vo = 2 * d + h * hd;
        for (std::size_t i = first; i < T; ++i) {
            const double* q = qkv.data() + i * qkv.cols() + qo;
            double mx = -kInf;
            for (std::size_t j = 0; j <= i; ++j) {
                const double* k = qkv.data() + j * qkv.cols() + ko;
                double s = 0.0;
                for (std::size_t c = 0; c < hd; ++c) s += q[c] * k[c];
                p[j] = s * scale;
                mx = std::max(mx, p[j]);
            }
            double sum = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
                p[j] = std::exp(p[j] - mx);
                sum += p[j];
            }
            double* out = y.data() + i * d + qo;
            for (std::size_t c = 0; c < hd; ++c) out[c] = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
                p[j] /= sum;
                const double* v = qkv.data() + j * qkv.cols() + vo;
                for (std::size_t c = 0; c < hd; ++c) out[c] += p[j] * v[c];
                if (probs) (*probs)[h](i, j) = p[j];
            }
        }
    }
}

void causal_attention_backward(const Matrix& qkv, const std::vector<Matrix>& probs, std::size_t heads,
                               const Matrix& dy, Matrix& dqkv) {
    const std::size_t T = qkv.rows();
    const std::size_t d = qkv.cols() / 3;
    const std::size_t hd = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<double> dp(T);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t qo = h * hd, ko = d + h * hd, vo = 2 * d + h * hd;
        const Matrix& P = probs[h];
        for (std::size_t i = 0; i < T; ++i) {
            const double* g = dy.data() + i * d + qo;
            double dot_pd = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
                const double* v = qkv.data() + j * qkv.cols() + vo;
                double s = 0.0;
                for (std::size_t c = 0; c < hd; ++c) s += g[c] * v[c];
                dp[j] = s;
                dot_pd += P(i, j) * s;
                double* dv = dqkv.data() + j * dqkv.cols() + vo;
                for (std::size_t c = 0; c < hd; ++c) dv[c] += P(i, j) * g[c];
            }
            const double* q = qkv.data() + i * qkv.cols() + qo;
            double* dq = dqkv.data() + i * dqkv.cols() + qo;
            for (std::size_t j = 0; j <= i; ++j) {
                const double ds = P(i, j) * (dp[j] - dot_pd) * scale;
                if (ds == 0.0) continue;
                const double* k = qkv.data() + j * qkv.cols() + ko;
                double* dk = dqkv.data() + j * dqkv.cols() + ko;
                for (std::size_t c = 0; c < hd; ++c) {
                    dq[c] += ds * k[c];
                    dk[c] += ds * q[c];
                }
            }
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
    if (layers == 0 || heads == 0 || width == 0 || ff_width == 0) throw std::invalid_argument("ModelConfig: zero dimension");
    if (width % heads != 0) throw std::invalid_argument("ModelConfig: width must be divisible by heads");
    if (max_position == 0) throw std::invalid_argument("ModelConfig: max_position must be positive");
    if (general_size == 0 || item_partition_size == 0) throw std::invalid_argument("ModelConfig: empty vocabulary partition");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("ModelConfig: dropout must be in [0, 1)");
}

LMParams LMParams::zeros_like() const {
    LMParams z;
    auto zero = [](const Matrix& m) { return Matrix(m.rows(), m.cols()); };
    z.tok_emb = zero(tok_emb);
    z.pos_emb = zero(pos_emb);
    for (const auto& l : layers) {
        z.layers.push_back({zero(l.ln1_g), zero(l.ln1_b), zero(l.w_qkv), zero(l.b_qkv), zero(l.w_out), zero(l.b_out),
                            zero(l.ln2_g), zero(l.ln2_b), zero(l.w_fc), zero(l.b_fc), zero(l.w_proj), zero(l.b_proj)});
    }
    z.lnf_g = zero(lnf_g);
    z.lnf_b = zero(lnf_b);
    return z;
}

TensorList LMParams::tensors() {
    TensorList out{{"lm.tok_emb", &tok_emb}, {"lm.pos_emb", &pos_emb}};
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string p = "lm.layer" + std::to_string(i) + ".";
        auto& l = layers[i];
        out.push_back({p + "ln1_g", &l.ln1_g});
        out.push_back({p + "ln1_b", &l.ln1_b});
        out.push_back({p + "w_qkv", &l.w_qkv});
        out.push_back({p + "b_qkv", &l.b_qkv});
        out.push_back({p + "w_out", &l.w_out});
        out.push_back({p + "b_out", &l.b_out});
        out.push_back({p + "ln2_g", &l.ln2_g});
        out.push_back({p + "ln2_b", &l.ln2_b});
        out.push_back({p + "w_fc", &l.w_fc});
        out.push_back({p + "b_fc", &l.b_fc});
        out.push_back({p + "w_proj", &l.w_proj});
        out.push_back({p + "b_proj", &l.b_proj});
    }
    out.push_back({"lm.lnf_g", &lnf_g});
    out.push_back({"lm.lnf_b", &lnf_b});
    return out;
}

TransformerLM::TransformerLM(const ModelConfig& config, std::mt19937_64& rng) : config_(config) {
    config_.validate();
    const std::size_t d = config_.width, ff = config_.ff_width;
    const double s = 0.02;
    const double proj_s = s / std::sqrt(2.0 * static_cast<double>(config_.layers));
    params_.tok_emb = Matrix(config_.vocab_size(), d);
    fill_normal(params_.tok_emb, rng, s);
    params_.pos_emb = Matrix(config_.max_position, d);
    fill_normal(params_.pos_emb, rng, 0.01);
    for (std::size_t i = 0; i < config_.layers; ++i) {
        LayerParams l;
        l.ln1_g = Matrix(1, d, 1.0);
        l.ln1_b = Matrix(1, d);
        l.w_qkv = Matrix(d, 3 * d);
        fill_normal(l.w_qkv, rng, s);
        l.b_qkv = Matrix(1, 3 * d);
        l.w_out = Matrix(d, d);
        fill_normal(l.w_out, rng, proj_s);
        l.b_out = Matrix(1, d);
        l.ln2_g = Matrix(1, d, 1.0);
        l.ln2_b = Matrix(1, d);
        l.w_fc = Matrix(d, ff);
        fill_normal(l.w_fc, rng, s);
        l.b_fc = Matrix(1, ff);
        l.w_proj = Matrix(ff, d);
        fill_normal(l.w_proj, rng, proj_s);
        l.b_proj = Matrix(1, d);
        params_.layers.push_back(std::move(l));
    }
    params_.lnf_g = Matrix(1, d, 1.0);
    params_.lnf_b = Matrix(1, d);
}

TransformerLM::TransformerLM(const ModelConfig& config, LMParams params) : config_(config), params_(std::move(params)) {
    config_.validate();
    const std::size_t d = config_.width;
    if (params_.tok_emb.rows() != config_.vocab_size() || params_.tok_emb.cols() != d ||
        params_.pos_emb.rows() != config_.max_position || params_.layers.size() != config_.layers) {
        throw std::invalid_argument("TransformerLM: parameters do not match config");
    }
}

Matrix TransformerLM::forward_hidden(std::span<const TokenId> tokens, ForwardCache* cache,
                                     std::mt19937_64* dropout_rng) const {
    const std::size_t T = tokens.size(), d = config_.width;
    if (T == 0) throw std::invalid_argument("forward: empty token sequence");
    if (T > config_.max_position) throw std::length_error("forward: sequence longer than max_position");
    const bool drop = dropout_rng && config_.dropout > 0.0;

    Matrix x(T, d);
    for (std::size_t t = 0; t < T; ++t) {
        const TokenId tok = tokens[t];
        if (tok < 0 || static_cast<std::size_t>(tok) >= config_.vocab_size()) throw std::out_of_range("forward: token id out of range");
        auto xr = x.row(t);
        const auto e = params_.tok_emb.row(static_cast<std::size_t>(tok));
        const auto p = params_.pos_emb.row(t);
        for (std::size_t j = 0; j < d; ++j) xr[j] = e[j] + p[j];
    }
    if (cache) {
        cache->tokens.assign(tokens.begin(), tokens.end());
        cache->layers.assign(config_.layers, {});
        cache->emb_drop = Matrix();
    }
    if (drop) {
        Matrix mask = dropout_mask(T, d, config_.dropout, *dropout_rng);
        apply_mask(x, mask);
        if (cache) cache->emb_drop = std::move(mask);
    }

    for (std::size_t li = 0; li < config_.layers; ++li) {
        const LayerParams& lp = params_.layers[li];
        LayerCache local;
        LayerCache& c = cache ? cache->layers[li] : local;
        if (cache) c.x_in = x;
        layernorm_forward(x, lp.ln1_g, lp.ln1_b, c.a, cache ? &c.ln1_hat : nullptr, cache ? &c.ln1_rstd : nullptr);
        linear_forward(c.a, lp.w_qkv, lp.b_qkv, c.qkv);
        c.y = Matrix(T, d);
        if (cache) c.probs.assign(config_.heads, Matrix(T, T));
        causal_attention(c.qkv, config_.heads, 0, c.y, cache ? &c.probs : nullptr);
        Matrix o;
        linear_forward(c.y, lp.w_out, lp.b_out, o);
        if (drop) {
            c.attn_drop = dropout_mask(T, d, config_.dropout, *dropout_rng);
            apply_mask(o, c.attn_drop);
        }
        x += o;
        if (cache) c.x_mid = x;
        layernorm_forward(x, lp.ln2_g, lp.ln2_b, c.m, cache ? &c.ln2_hat : nullptr, cache ? &c.ln2_rstd : nullptr);
        linear_forward(c.m, lp.w_fc, lp.b_fc, c.fc_pre);
        c.fc_act = c.fc_pre;
        for (double& v : c.fc_act.flat()) v = gelu(v);
        Matrix p;
        linear_forward(c.fc_act, lp.w_proj, lp.b_proj, p);
        if (drop) {
            c.mlp_drop = dropout_mask(T, d, config_.dropout, *dropout_rng);
            apply_mask(p, c.mlp_drop);
        }
        x += p;
    }
    Matrix h;
    if (cache) {
        layernorm_forward(x, params_.lnf_g, params_.lnf_b, h, &cache->lnf_hat, &cache->lnf_rstd);
        cache->hidden = h;
    } else {
        layernorm_forward(x, params_.lnf_g, params_.lnf_b, h, nullptr, nullptr);
    }
    return h;
}

void TransformerLM::backward_hidden(const ForwardCache& cache, const Matrix& d_hidden, LMParams& grads) const {
    const std::size_t T = cache.tokens.size(), d = config_.width;
    Matrix dx(T, d);
    layernorm_backward(cache.lnf_hat, cache.lnf_rstd, params_.lnf_g, d_hidden, grads.lnf_g, grads.lnf_b, dx);

    for (std::size_t li = config_.layers; li-- > 0;) {
        const LayerParams& lp = params_.layers[li];
        LayerParams& gp = grads.layers[li];
        const LayerCache& c = cache.layers[li];

        // MLP branch: x_out = x_mid + drop(proj(gelu(fc(ln2(x_mid)))))
        Matrix dp = dx;
        apply_mask(dp, c.mlp_drop);
        Matrix d_act(T, config_.ff_width);
        linear_backward(c.fc_act, lp.w_proj, dp, gp.w_proj, gp.b_proj, &d_act);
        auto da = d_act.flat();
        const auto pre = c.fc_pre.flat();
        for (std::size_t i = 0; i < da.size(); ++i) da[i] *= gelu_grad(pre[i]);
        Matrix dm(T, d);
        linear_backward(c.m, lp.w_fc, d_act, gp.w_fc, gp.b_fc, &dm);
        layernorm_backward(c.ln2_hat, c.ln2_rstd, lp.ln2_g, dm, gp.ln2_g, gp.ln2_b, dx);

        // Attention branch: x_mid = x_in + drop(out(attn(qkv(ln1(x_in)))))
        Matrix d_o = dx;
        apply_mask(d_o, c.attn_drop);
        Matrix dy(T, d);
        linear_backward(c.y, lp.w_out, d_o, gp.w_out, gp.b_out, &dy);
        Matrix dqkv(T, 3 * d);
        causal_attention_backward(c.qkv, c.probs, config_.heads, dy, dqkv);
        Matrix d_a(T, d);
        linear_backward(c.a, lp.w_qkv, dqkv, gp.w_qkv, gp.b_qkv, &d_a);
        layernorm_backward(c.ln1_hat, c.ln1_rstd, lp.ln1_g, d_a, gp.ln1_g, gp.ln1_b, dx);
    }
    apply_mask(dx, cache.emb_drop);
    for (std::size_t t = 0; t < T; ++t) {
        axpy(1.0, dx.row(t), grads.tok_emb.row(static_cast<std::size_t>(cache.tokens[t])));
        axpy(1.0, dx.row(t), grads.pos_emb.row(t));
    }
}

Matrix TransformerLM::forward_logits(std::span<const TokenId> tokens) const {
    const Matrix h = forward_hidden(tokens);
    Matrix logits;
    matmul_nt(h, params_.tok_emb, logits);
    return logits;
}

std::vector<double> TransformerLM::score(std::span<const TokenId> prefix) const {
    const Matrix h = forward_hidden(prefix);
    std::vector<double> out(config_.vocab_size());
    const auto last = h.row(h.rows() - 1);
    for (std::size_t v = 0; v < out.size(); ++v) out[v] = dot(last, params_.tok_emb.row(v));
    return out;
}

// ---------------------------------------------------------------------------
// Incremental scoring

namespace {

class RecomputeCursor final : public ScoringCursor {
public:
    RecomputeCursor(const LogitScorer& scorer, std::span<const TokenId> prefix)
        : scorer_(&scorer), prefix_(prefix.begin(), prefix.end()), logits_(scorer.score(prefix_)) {}

    std::span<const double> logits() const override { return logits_; }
    void push(TokenId token) override {
        prefix_.push_back(token);
        logits_ = scorer_->score(prefix_);
    }
    std::unique_ptr<ScoringCursor> clone() const override { return std::make_unique<RecomputeCursor>(*this); }
    std::size_t length() const override { return prefix_.size(); }

private:
    const LogitScorer* scorer_;
    std::vector<TokenId> prefix_;
    std::vector<double> logits_;
};

}  // namespace

std::unique_ptr<ScoringCursor> LogitScorer::start(std::span<const TokenId> prefix) const {
    return std::make_unique<RecomputeCursor>(*this, prefix);
}

/// Key/value cache over the built-in model; each push runs one position through every layer.
class TransformerCursor final : public ScoringCursor {
public:
    TransformerCursor(const TransformerLM& model, std::span<const TokenId> prefix) : model_(&model) {
        const std::size_t d = model.config_.width;
        qkv_.assign(model.config_.layers, Matrix(0, 3 * d));
        if (prefix.empty()) throw std::invalid_argument("cursor: empty prefix");
        for (TokenId t : prefix) push(t);
    }

    std::span<const double> logits() const override { return logits_; }
    std::unique_ptr<ScoringCursor> clone() const override { return std::make_unique<TransformerCursor>(*this); }
    std::size_t length() const override { return length_; }

    void push(TokenId token) override {
        const auto& cfg = model_->config_;
        const auto& P = model_->params_;
        const std::size_t d = cfg.width;
        if (length_ >= cfg.max_position) throw std::length_error("cursor: sequence longer than max_position");
        if (token < 0 || static_cast<std::size_t>(token) >= cfg.vocab_size()) throw std::out_of_range("cursor: token id out of range");
        Matrix x(1, d);
        const auto e = P.tok_emb.row(static_cast<std::size_t>(token));
        const auto p = P.pos_emb.row(length_);
        for (std::size_t j = 0; j < d; ++j) x(0, j) = e[j] + p[j];
        for (std::size_t li = 0; li < cfg.layers; ++li) {
            const LayerParams& lp = P.layers[li];
            Matrix a, row_qkv;
            layernorm_forward(x, lp.ln1_g, lp.ln1_b, a, nullptr, nullptr);
            linear_forward(a, lp.w_qkv, lp.b_qkv, row_qkv);
            Matrix& cache = qkv_[li];
            std::vector<double> grown(cache.flat().begin(), cache.flat().end());
            grown.insert(grown.end(), row_qkv.flat().begin(), row_qkv.flat().end());
            cache = Matrix(length_ + 1, 3 * d, std::move(grown));
            Matrix y(length_ + 1, d);
            causal_attention(cache, cfg.heads, length_, y, nullptr);
            Matrix y_last(1, d, std::vector<double>(y.row(length_).begin(), y.row(length_).end()));
            Matrix o;
            linear_forward(y_last, lp.w_out, lp.b_out, o);
            x += o;
            Matrix m, f, pr;
            layernorm_forward(x, lp.ln2_g, lp.ln2_b, m, nullptr, nullptr);
            linear_forward(m, lp.w_fc, lp.b_fc, f);
            for (double& v : f.flat()) v = gelu(v);
            linear_forward(f, lp.w_proj, lp.b_proj, pr);
            x += pr;
        }
        Matrix h;
        layernorm_forward(x, P.lnf_g, P.lnf_b, h, nullptr, nullptr);
        logits_.assign(cfg.vocab_size(), 0.0);
        for (std::size_t v = 0; v < logits_.size(); ++v) logits_[v] = dot(h.row(0), P.tok_emb.row(v));
        ++length_;
    }

private:
    const TransformerLM* model_;
    std::vector<Matrix> qkv_;
    std::vector<double> logits_;
    std::size_t length_ = 0;
};

std::unique_ptr<ScoringCursor> TransformerLM::start(std::span<const TokenId> prefix) const {
    return std::make_unique<TransformerCursor>(*this, prefix);
}

// ---------------------------------------------------------------------------
// Masking and losses

std::vector<double> step_mask(bool in_slot, const Vocabulary& vocab) {
    std::vector<double> mask(vocab.size(), 0.0);
    for (std::size_t v = 0; v < mask.size(); ++v) {
        const bool general = vocab.is_general(static_cast<TokenId>(v));
        if (general == in_slot) mask[v] = -kInf;
    }
    return mask;
}

std::vector<double> masked_distribution(std::span<const double> logits, std::span<const double> bias, bool in_slot,
                                        const Vocabulary& vocab, bool vocab_pointer) {
    if (logits.size() != vocab.size()) throw std::invalid_argument("masked_distribution: logits size != |V|");
    if (!bias.empty() && bias.size() != vocab.item_partition_size()) {
        throw std::invalid_argument("masked_distribution: bias size != |V_R|");
    }
    std::vector<double> z(logits.begin(), logits.end());
    const std::size_t g = vocab.general_size();
    for (std::size_t i = 0; i < bias.size(); ++i) z[g + i] += bias[i];
    if (vocab_pointer) {
        if (in_slot) std::fill(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(g), -kInf);
        else std::fill(z.begin() + static_cast<std::ptrdiff_t>(g), z.end(), -kInf);
    }
    softmax_inplace(z);
    return z;
}

std::vector<bool> gold_pointer_states(std::span<const TokenId> response, const Vocabulary& vocab, bool vocab_pointer) {
    std::vector<bool> states;
    bool in_slot = false;
    bool done = false;
    for (std::size_t i = 0; i < response.size(); ++i) {
        const TokenId t = response[i];
        if (done) {
            if (t != vocab.pad()) throw DataError("tokens after [EOS] must be padding");
            continue;
        }
        if (!vocab.valid(t)) throw DataError("response token out of vocabulary range");
        if (vocab_pointer && vocab.is_general(t) == in_slot) {
            throw DataError("response token at position " + std::to_string(i) + " is outside the active partition");
        }
        states.push_back(in_slot);
        if (t == vocab.rec_start()) {
            if (in_slot) throw DataError("nested [RecS] in response");
            in_slot = true;
        } else if (t == vocab.rec_end()) {
            if (!in_slot) throw DataError("[RecE] without matching [RecS]");
            in_slot = false;
        } else if (t == vocab.eos()) {
            done = true;
        }
    }
    if (in_slot) throw DataError("unbalanced [RecS]/[RecE] in response");
    return states;
}

std::size_t response_token_count(const ContextResponsePair& pair, const Vocabulary& vocab) {
    std::size_t n = 0;
    for (TokenId t : pair.response) {
        ++n;
        if (t == vocab.eos()) break;
    }
    return n;
}

double gen_loss(const LogitScorer& model, const Vocabulary& vocab, const ContextResponsePair& pair,
                std::span<const double> bias, const LossOptions& options) {
    const auto states = gold_pointer_states(pair.response, vocab, options.vocab_pointer);
    auto prefix = generation_prefix(pair.context, vocab);
    auto cursor = model.start(prefix);
    double loss = 0.0;
    for (std::size_t i = 0; i < states.size(); ++i) {
        const TokenId gold = pair.response[i];
        const auto p = masked_distribution(cursor->logits(), bias, states[i], vocab, options.vocab_pointer);
        loss -= std::log(p[static_cast<std::size_t>(gold)]);
        if (i + 1 < states.size()) cursor->push(gold);
    }
    return loss;
}

double gen_loss_backward(const TransformerLM& model, const Vocabulary& vocab, const ContextResponsePair& pair,
                         std::span<const double> bias, const LossOptions& options, LMParams& grads,
                         std::span<double> d_bias, std::mt19937_64* dropout_rng) {
    const auto states = gold_pointer_states(pair.response, vocab, options.vocab_pointer);
    const std::size_t n = states.size();
    auto tokens = generation_prefix(pair.context, vocab);
    const std::size_t first = tokens.size() - 1;  // hidden row predicting response[0]
    tokens.insert(tokens.end(), pair.response.begin(), pair.response.begin() + static_cast<std::ptrdiff_t>(n - 1));

    ForwardCache cache;
    const Matrix h = model.forward_hidden(tokens, &cache, dropout_rng);
    const auto& E = model.params().tok_emb;
    Matrix dh(h.rows(), h.cols());
    const std::size_t g = vocab.general_size();
    double loss = 0.0;
    std::vector<double> logits(vocab.size());
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t row = first + i;
        for (std::size_t v = 0; v < logits.size(); ++v) logits[v] = dot(h.row(row), E.row(v));
        auto p = masked_distribution(logits, bias, states[i], vocab, options.vocab_pointer);
        const auto gold = static_cast<std::size_t>(pair.response[i]);
        loss -= std::log(p[gold]);
        p[gold] -= 1.0;
        for (double& v : p) v *= options.weight;
        for (std::size_t v = 0; v < p.size(); ++v) {
            if (p[v] == 0.0) continue;
            axpy(p[v], E.row(v), dh.row(row));
            axpy(p[v], h.row(row), grads.tok_emb.row(v));
        }
        if (!d_bias.empty()) {
            for (std::size_t r = 0; r < d_bias.size(); ++r) d_bias[r] += p[g + r];
        }
    }
    model.backward_hidden(cache, dh, grads);
    return loss;
}

double perplexity(const LogitScorer& model, const Vocabulary& vocab, std::span<const ContextResponsePair> pairs,
                  const BiasProvider& bias, const LossOptions& options) {
    if (pairs.empty()) throw std::invalid_argument("perplexity: empty pair set");
    double nll = 0.0;
    std::size_t count = 0;
    for (const auto& p : pairs) {
        std::vector<double> b;
        if (bias) b = bias(p);
        nll += gen_loss(model, vocab, p, b, options);
        count += response_token_count(p, vocab);
    }
    return std::exp(nll / static_cast<double>(count));
}

}  // namespace recindial
