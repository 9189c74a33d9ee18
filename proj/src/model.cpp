#include "oraclead/model.hpp"

#include <cmath>

#include "oraclead/rng.hpp"
#include "kernels.hpp"

namespace oraclead {

void ModelConfig::validate() const {
    require(n_vars >= 1, "model config: n_vars must be >= 1");
    require(window >= 2, "model config: window must be >= 2");
    require(hidden_dim >= 1 && n_heads >= 1, "model config: hidden_dim and n_heads must be >= 1");
    require(hidden_dim % n_heads == 0, "model config: hidden_dim must be divisible by n_heads");
    require(n_layers >= 1, "model config: n_layers must be >= 1");
}

OracleModel::OracleModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    build_layout();
}

void OracleModel::build_layout() {
    const std::size_t n = cfg_.n_vars;
    const std::size_t d = cfg_.hidden_dim;
    const std::size_t dh = cfg_.head_dim();
    std::size_t off = 0;

    auto add = [&](std::string name, std::vector<std::size_t> shape, std::size_t fan_in) {
        std::size_t size = 1;
        for (auto s : shape) size *= s;
        layout_.push_back(TensorInfo{std::move(name), std::move(shape), off, size, fan_in});
        off += size;
    };
    auto add_lstm_stack = [&](const std::string& prefix, std::size_t var) {
        for (std::size_t k = 0; k < cfg_.n_layers; ++k) {
            const std::size_t in = layer_input_dim(k);
            const std::string base = prefix + "/" + std::to_string(var) + "/l" + std::to_string(k);
            add(base + "/w_ih", {4 * d, in}, in);
            add(base + "/w_hh", {4 * d, d}, d);
            add(base + "/b", {4 * d}, in + d);
        }
    };

    enc_base_ = off;
    for (std::size_t i = 0; i < n; ++i) add_lstm_stack("enc", i);
    lstm_stack_size_ = (off - enc_base_) / n;

    pool_base_ = off;
    const std::size_t pool_copies = cfg_.per_variable_pooling ? n : 1;
    for (std::size_t i = 0; i < pool_copies; ++i) {
        const std::string base = cfg_.per_variable_pooling ? "pool/" + std::to_string(i) : "pool";
        add(base + "/w", {d}, d);
        add(base + "/b", {1}, d);
    }

    attn_base_ = off;
    for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
        const std::string base = "attn/h" + std::to_string(h);
        add(base + "/w_q", {d, dh}, d);
        add(base + "/w_k", {d, dh}, d);
        add(base + "/w_v", {d, dh}, d);
        add(base + "/w_o", {dh, d}, dh);
    }

    dec_base_ = off;
    for (std::size_t i = 0; i < n; ++i) add_lstm_stack("dec", i);

    dec_out_base_ = off;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string base = "dec/" + std::to_string(i);
        add(base + "/out_w", {d}, d);
        add(base + "/out_b", {1}, d);
    }

    params_.assign(off, 0.0);
}

namespace {
inline std::size_t lstm_layer_base(std::size_t d, std::size_t n_layers,
                                   std::size_t layer_input(std::size_t), std::size_t layer) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < layer; ++k) off += 4 * d * (layer_input(k) + d + 1);
    return off;
}
}  // namespace

std::size_t OracleModel::enc_w_ih(std::size_t var, std::size_t layer) const {
    std::size_t off = enc_base_ + var * lstm_stack_size_;
    for (std::size_t k = 0; k < layer; ++k) off += 4 * cfg_.hidden_dim * (layer_input_dim(k) + cfg_.hidden_dim + 1);
    return off;
}
std::size_t OracleModel::enc_w_hh(std::size_t var, std::size_t layer) const {
    return enc_w_ih(var, layer) + 4 * cfg_.hidden_dim * layer_input_dim(layer);
}
std::size_t OracleModel::enc_b(std::size_t var, std::size_t layer) const {
    return enc_w_hh(var, layer) + 4 * cfg_.hidden_dim * cfg_.hidden_dim;
}
std::size_t OracleModel::dec_w_ih(std::size_t var, std::size_t layer) const {
    std::size_t off = dec_base_ + var * lstm_stack_size_;
    for (std::size_t k = 0; k < layer; ++k) off += 4 * cfg_.hidden_dim * (layer_input_dim(k) + cfg_.hidden_dim + 1);
    return off;
}
std::size_t OracleModel::dec_w_hh(std::size_t var, std::size_t layer) const {
    return dec_w_ih(var, layer) + 4 * cfg_.hidden_dim * layer_input_dim(layer);
}
std::size_t OracleModel::dec_b(std::size_t var, std::size_t layer) const {
    return dec_w_hh(var, layer) + 4 * cfg_.hidden_dim * cfg_.hidden_dim;
}
std::size_t OracleModel::dec_out_w(std::size_t var) const { return dec_out_base_ + var * (cfg_.hidden_dim + 1); }
std::size_t OracleModel::dec_out_b(std::size_t var) const { return dec_out_w(var) + cfg_.hidden_dim; }
std::size_t OracleModel::pool_w(std::size_t var) const {
    const std::size_t copy = cfg_.per_variable_pooling ? var : 0;
    return pool_base_ + copy * (cfg_.hidden_dim + 1);
}
std::size_t OracleModel::pool_b(std::size_t var) const { return pool_w(var) + cfg_.hidden_dim; }
std::size_t OracleModel::attn_w_q(std::size_t head) const {
    const std::size_t per_head = 4 * cfg_.head_dim() * cfg_.hidden_dim;
    return attn_base_ + head * per_head;
}
std::size_t OracleModel::attn_w_k(std::size_t head) const { return attn_w_q(head) + cfg_.head_dim() * cfg_.hidden_dim; }
std::size_t OracleModel::attn_w_v(std::size_t head) const { return attn_w_k(head) + cfg_.head_dim() * cfg_.hidden_dim; }
std::size_t OracleModel::attn_w_o(std::size_t head) const { return attn_w_v(head) + cfg_.head_dim() * cfg_.hidden_dim; }

OracleModel OracleModel::init(const ModelConfig& cfg) {
    OracleModel m(cfg);
    Rng rng(cfg.seed);
    for (const TensorInfo& t : m.layout_) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(t.fan_in));
        for (std::size_t k = 0; k < t.size; ++k) m.params_[t.offset + k] = rng.uniform(-bound, bound);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Single-window reference ops. These spell the math out plainly; the batched
// kernels used by training and scoring are checked against them in tests.
// ---------------------------------------------------------------------------

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// One LSTM stack step over all layers; h and c are [layers][d], in-place.
void lstm_step(const OracleModel& m, bool decoder, std::size_t var, double input,
               std::vector<std::vector<double>>& h, std::vector<std::vector<double>>& c) {
    const std::size_t d = m.config().hidden_dim;
    const double* p = m.params().data();
    std::vector<double> layer_in(1, input);
    for (std::size_t k = 0; k < m.config().n_layers; ++k) {
        const std::size_t in_dim = m.layer_input_dim(k);
        const double* w_ih = p + (decoder ? m.dec_w_ih(var, k) : m.enc_w_ih(var, k));
        const double* w_hh = p + (decoder ? m.dec_w_hh(var, k) : m.enc_w_hh(var, k));
        const double* b = p + (decoder ? m.dec_b(var, k) : m.enc_b(var, k));
        std::vector<double> z(4 * d);
        for (std::size_t r = 0; r < 4 * d; ++r) {
            double acc = b[r];
            for (std::size_t q = 0; q < in_dim; ++q) acc += w_ih[r * in_dim + q] * layer_in[q];
            for (std::size_t q = 0; q < d; ++q) acc += w_hh[r * d + q] * h[k][q];
            z[r] = acc;
        }
        std::vector<double> next(d);
        for (std::size_t q = 0; q < d; ++q) {
            const double gi = sigmoid(z[q]);
            const double gf = sigmoid(z[d + q]);
            const double gg = std::tanh(z[2 * d + q]);
            const double go = sigmoid(z[3 * d + q]);
            c[k][q] = gf * c[k][q] + gi * gg;
            next[q] = go * std::tanh(c[k][q]);
        }
        h[k] = next;
        layer_in = h[k];
    }
}

}  // namespace

Mat encode_variable(const OracleModel& m, std::size_t var, std::span<const double> seq) {
    require(var < m.config().n_vars, "encode_variable: variable index out of range");
    const std::size_t d = m.config().hidden_dim;
    std::vector<std::vector<double>> h(m.config().n_layers, std::vector<double>(d, 0.0));
    std::vector<std::vector<double>> c(m.config().n_layers, std::vector<double>(d, 0.0));
    Mat out(seq.size(), d);
    for (std::size_t t = 0; t < seq.size(); ++t) {
        lstm_step(m, false, var, seq[t], h, c);
        for (std::size_t q = 0; q < d; ++q) out.at(t, q) = h.back()[q];
    }
    return out;
}

std::pair<std::vector<double>, std::vector<double>> attention_pool(const OracleModel& m, const Mat& hiddens,
                                                                   std::size_t var) {
    require(hiddens.rows >= 1, "attention_pool: need at least one hidden state");
    const std::size_t d = m.config().hidden_dim;
    const double* w = m.params().data() + m.pool_w(var);
    const double b = m.params()[m.pool_b(var)];

    std::vector<double> scores(hiddens.rows);
    double max_s = -1e300;
    for (std::size_t t = 0; t < hiddens.rows; ++t) {
        double s = b;
        for (std::size_t q = 0; q < d; ++q) s += w[q] * hiddens.at(t, q);
        scores[t] = s;
        max_s = std::max(max_s, s);
    }
    double z = 0.0;
    for (double& s : scores) {
        s = std::exp(s - max_s);
        z += s;
    }
    std::vector<double> weights(hiddens.rows);
    std::vector<double> pooled(d, 0.0);
    for (std::size_t t = 0; t < hiddens.rows; ++t) {
        weights[t] = scores[t] / z;
        for (std::size_t q = 0; q < d; ++q) pooled[q] += weights[t] * hiddens.at(t, q);
    }
    return {pooled, weights};
}

Mat mhsa(const OracleModel& m, const Mat& c) {
    const std::size_t n = c.rows;
    const std::size_t d = m.config().hidden_dim;
    const std::size_t dh = m.config().head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const double* p = m.params().data();

    Mat out(n, d);
    std::vector<double> q(dh), blend(dh);
    for (std::size_t h = 0; h < m.config().n_heads; ++h) {
        const double* wq = p + m.attn_w_q(h);  // [d x dh]
        const double* wk = p + m.attn_w_k(h);
        const double* wv = p + m.attn_w_v(h);
        const double* wo = p + m.attn_w_o(h);  // [dh x d]
        // project keys/values once
        Mat keys(n, dh), vals(n, dh);
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t r = 0; r < dh; ++r) {
                double ak = 0.0, av = 0.0;
                for (std::size_t qd = 0; qd < d; ++qd) {
                    ak += wk[qd * dh + r] * c.at(j, qd);
                    av += wv[qd * dh + r] * c.at(j, qd);
                }
                keys.at(j, r) = ak;
                vals.at(j, r) = av;
            }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t r = 0; r < dh; ++r) {
                double a = 0.0;
                for (std::size_t qd = 0; qd < d; ++qd) a += wq[qd * dh + r] * c.at(i, qd);
                q[r] = a;
            }
            std::vector<double> att(n);
            double max_s = -1e300;
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t r = 0; r < dh; ++r) s += q[r] * keys.at(j, r);
                att[j] = s * scale;
                max_s = std::max(max_s, att[j]);
            }
            double z = 0.0;
            for (double& s : att) {
                s = std::exp(s - max_s);
                z += s;
            }
            std::fill(blend.begin(), blend.end(), 0.0);
            for (std::size_t j = 0; j < n; ++j) {
                const double a = att[j] / z;
                for (std::size_t r = 0; r < dh; ++r) blend[r] += a * vals.at(j, r);
            }
            for (std::size_t qd = 0; qd < d; ++qd) {
                double a = 0.0;
                for (std::size_t r = 0; r < dh; ++r) a += wo[r * d + qd] * blend[r];
                out.at(i, qd) += a;
            }
        }
    }
    return out;
}

std::pair<std::vector<double>, double> decode_variable(const OracleModel& m, std::size_t var,
                                                       std::span<const double> c_star) {
    require(var < m.config().n_vars, "decode_variable: variable index out of range");
    const std::size_t d = m.config().hidden_dim;
    require(c_star.size() == d, "decode_variable: embedding size mismatch");
    const std::size_t steps = m.config().window;  // L
    const double* out_w = m.params().data() + m.dec_out_w(var);
    const double out_b = m.params()[m.dec_out_b(var)];

    std::vector<std::vector<double>> h(m.config().n_layers, std::vector<double>(c_star.begin(), c_star.end()));
    std::vector<std::vector<double>> c(m.config().n_layers, std::vector<double>(d, 0.0));
    std::vector<double> recon;
    recon.reserve(steps - 1);
    double input = 0.0;  // zero first input, then own-output feedback
    double y = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
        lstm_step(m, true, var, input, h, c);
        y = out_b;
        for (std::size_t q = 0; q < d; ++q) y += out_w[q] * h.back()[q];
        if (t + 1 < steps) recon.push_back(y);
        input = y;
    }
    return {recon, y};
}

ForwardOutput forward_window(const OracleModel& m, const Window& win) {
    std::vector<ForwardOutput> out = forward(m, std::span<const Window>(&win, 1), 1);
    return std::move(out.front());
}

std::vector<ForwardOutput> forward(const OracleModel& m, std::span<const Window> windows, int threads) {
    std::vector<ForwardOutput> outputs;
    detail::run_forward(m, windows, threads, &outputs, nullptr, nullptr);
    return outputs;
}

}  // namespace oraclead
