#include "kernels.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <thread>

namespace oraclead::detail {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;
using MapV = Eigen::Map<Eigen::VectorXd>;
using CMapV = Eigen::Map<const Eigen::VectorXd>;

constexpr std::size_t kMicroBatch = 64;
constexpr double kDistEps = 1e-12;

inline double fast_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
// tanh through exp so the hot loops stay on one transcendental.
inline double fast_tanh(double x) { return 1.0 - 2.0 / (std::exp(2.0 * x) + 1.0); }

struct LayerCache {
    std::vector<double> gates;  // [steps][B][4d], post-activation (i,f,g,o)
    std::vector<double> c;      // [steps][B][d]
    std::vector<double> tc;     // tanh(c)
    std::vector<double> h;

    void resize(std::size_t steps, std::size_t b, std::size_t d) {
        gates.assign(steps * b * 4 * d, 0.0);
        c.assign(steps * b * d, 0.0);
        tc.assign(steps * b * d, 0.0);
        h.assign(steps * b * d, 0.0);
    }
    double* gates_at(std::size_t t, std::size_t b, std::size_t d) { return gates.data() + t * b * 4 * d; }
    double* c_at(std::size_t t, std::size_t b, std::size_t d) { return c.data() + t * b * d; }
    double* tc_at(std::size_t t, std::size_t b, std::size_t d) { return tc.data() + t * b * d; }
    double* h_at(std::size_t t, std::size_t b, std::size_t d) { return h.data() + t * b * d; }
};

struct HeadCache {
    std::vector<double> q, k, v, u;  // [B*N][dh]
    std::vector<double> attn;        // [B][N][N]
};

struct Workspace {
    std::size_t B = 0, N = 0, d = 0, dh = 0, H = 0, L = 0, K = 0, T = 0;

    std::vector<std::vector<double>> xin;     // per var: [T][B]
    std::vector<LayerCache> enc;              // var * K + k
    std::vector<std::vector<double>> alpha;   // per var: [T][B]
    std::vector<double> call;                 // [B*N][d]
    std::vector<HeadCache> heads;
    std::vector<double> cstar;                // [B*N][d]
    std::vector<LayerCache> dec;
    std::vector<std::vector<double>> dec_h0;  // per var: [B][d]
    std::vector<std::vector<double>> dec_y;   // per var: [L][B]
    std::vector<double> tgt;                  // [B][N]

    // backward state
    std::vector<double> dcall, dcstar;        // [B*N][d]
    std::vector<std::vector<double>> dy;      // per var: [L][B]
    std::vector<std::vector<double>> carry_h; // per var: [K][B][d]
    std::vector<std::vector<double>> carry_c;
    std::vector<std::vector<double>> dz;      // per var: [B][4d]
    std::vector<std::vector<double>> dtop;    // per var: [T][B][d] (pool -> encoder)
    std::vector<std::vector<double>> dci;     // per var: [B][d]
    std::vector<std::vector<double>> pool_gw; // per var: [d]
    std::vector<double> pool_gb;              // per var
    std::vector<double> hq_dq, hq_dk, hq_dv, hq_du;  // [B*N][dh] head scratch

    void resize(const ModelConfig& cfg, std::size_t b, bool backward) {
        B = b;
        N = cfg.n_vars;
        d = cfg.hidden_dim;
        dh = cfg.head_dim();
        H = cfg.n_heads;
        L = cfg.window;
        K = cfg.n_layers;
        T = L - 1;

        xin.assign(N, std::vector<double>(T * B, 0.0));
        enc.resize(N * K);
        dec.resize(N * K);
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t k = 0; k < K; ++k) {
                enc[i * K + k].resize(T, B, d);
                dec[i * K + k].resize(L, B, d);
            }
        alpha.assign(N, std::vector<double>(T * B, 0.0));
        call.assign(B * N * d, 0.0);
        cstar.assign(B * N * d, 0.0);
        heads.resize(H);
        for (auto& hc : heads) {
            hc.q.assign(B * N * dh, 0.0);
            hc.k.assign(B * N * dh, 0.0);
            hc.v.assign(B * N * dh, 0.0);
            hc.u.assign(B * N * dh, 0.0);
            hc.attn.assign(B * N * N, 0.0);
        }
        dec_h0.assign(N, std::vector<double>(B * d, 0.0));
        dec_y.assign(N, std::vector<double>(L * B, 0.0));
        tgt.assign(B * N, 0.0);

        if (backward) {
            dcall.assign(B * N * d, 0.0);
            dcstar.assign(B * N * d, 0.0);
            dy.assign(N, std::vector<double>(L * B, 0.0));
            carry_h.assign(N, std::vector<double>(K * B * d, 0.0));
            carry_c.assign(N, std::vector<double>(K * B * d, 0.0));
            dz.assign(N, std::vector<double>(B * 4 * d, 0.0));
            dtop.assign(N, std::vector<double>(T * B * d, 0.0));
            dci.assign(N, std::vector<double>(B * d, 0.0));
            pool_gw.assign(N, std::vector<double>(d, 0.0));
            pool_gb.assign(N, 0.0);
            hq_dq.assign(B * N * dh, 0.0);
            hq_dk.assign(B * N * dh, 0.0);
            hq_dv.assign(B * N * dh, 0.0);
            hq_du.assign(B * N * dh, 0.0);
        }
    }
};

void parallel_vars(int threads, std::size_t n, const std::function<void(std::size_t)>& fn) {
    const int nt = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    if (nt <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(nt - 1);
    auto stripe = [&](std::size_t s) {
        for (std::size_t i = s; i < n; i += static_cast<std::size_t>(nt)) fn(i);
    };
    for (int s = 1; s < nt; ++s) pool.emplace_back(stripe, static_cast<std::size_t>(s));
    stripe(0);
    for (auto& th : pool) th.join();
}

// ---- forward pieces -------------------------------------------------------

void lstm_stack_forward(const OracleModel& m, Workspace& ws, std::size_t var, bool decoder) {
    const std::size_t B = ws.B, d = ws.d, K = ws.K;
    const std::size_t steps = decoder ? ws.L : ws.T;
    const double* p = m.params().data();
    LayerCache* stack = (decoder ? ws.dec.data() : ws.enc.data()) + var * K;

    const double* out_w = decoder ? p + m.dec_out_w(var) : nullptr;
    const double out_b = decoder ? m.params()[m.dec_out_b(var)] : 0.0;

    for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t k = 0; k < K; ++k) {
            LayerCache& lc = stack[k];
            const std::size_t in_dim = m.layer_input_dim(k);
            const std::size_t w_ih = decoder ? m.dec_w_ih(var, k) : m.enc_w_ih(var, k);
            const std::size_t w_hh = decoder ? m.dec_w_hh(var, k) : m.enc_w_hh(var, k);
            const std::size_t bias = decoder ? m.dec_b(var, k) : m.enc_b(var, k);

            MapM z(lc.gates_at(t, B, d), B, 4 * d);
            CMapV bv(p + bias, 4 * d);
            z.rowwise() = bv.transpose();

            // input term
            if (k == 0) {
                const double* u = nullptr;
                if (decoder)
                    u = (t == 0) ? nullptr : ws.dec_y[var].data() + (t - 1) * B;  // own-output feedback
                else
                    u = ws.xin[var].data() + t * B;
                if (u) {
                    CMapM um(u, B, 1);
                    CMapM wih(p + w_ih, 4 * d, 1);
                    z.noalias() += um * wih.transpose();
                }
            } else {
                CMapM um(stack[k - 1].h_at(t, B, d), B, d);
                CMapM wih(p + w_ih, 4 * d, in_dim);
                z.noalias() += um * wih.transpose();
            }
            // recurrent term
            const double* hprev = nullptr;
            if (t > 0)
                hprev = lc.h_at(t - 1, B, d);
            else if (decoder)
                hprev = ws.dec_h0[var].data();
            if (hprev) {
                CMapM hm(hprev, B, d);
                CMapM whh(p + w_hh, 4 * d, d);
                z.noalias() += hm * whh.transpose();
            }

            // activations + state update
            double* gates = lc.gates_at(t, B, d);
            double* ct = lc.c_at(t, B, d);
            double* tct = lc.tc_at(t, B, d);
            double* ht = lc.h_at(t, B, d);
            const double* cprev = (t > 0) ? lc.c_at(t - 1, B, d) : nullptr;
            for (std::size_t w = 0; w < B; ++w) {
                double* g = gates + w * 4 * d;
                double* cw = ct + w * d;
                double* tcw = tct + w * d;
                double* hw = ht + w * d;
                const double* cp = cprev ? cprev + w * d : nullptr;
                for (std::size_t q = 0; q < d; ++q) {
                    const double gi = fast_sigmoid(g[q]);
                    const double gf = fast_sigmoid(g[d + q]);
                    const double gg = fast_tanh(g[2 * d + q]);
                    const double go = fast_sigmoid(g[3 * d + q]);
                    g[q] = gi;
                    g[d + q] = gf;
                    g[2 * d + q] = gg;
                    g[3 * d + q] = go;
                    const double cv = (cp ? gf * cp[q] : 0.0) + gi * gg;
                    cw[q] = cv;
                    const double tcv = fast_tanh(cv);
                    tcw[q] = tcv;
                    hw[q] = go * tcv;
                }
            }
        }
        if (decoder) {
            // output head: y_t = h_top . out_w + out_b
            const double* htop = stack[K - 1].h_at(t, B, d);
            double* y = ws.dec_y[var].data() + t * B;
            for (std::size_t w = 0; w < B; ++w) {
                double acc = out_b;
                const double* hw = htop + w * d;
                for (std::size_t q = 0; q < d; ++q) acc += out_w[q] * hw[q];
                y[w] = acc;
            }
        }
    }
}

void pool_forward(const OracleModel& m, Workspace& ws, std::size_t var) {
    const std::size_t B = ws.B, d = ws.d, T = ws.T, N = ws.N, K = ws.K;
    const double* w = m.params().data() + m.pool_w(var);
    const double b = m.params()[m.pool_b(var)];
    LayerCache& top = ws.enc[var * K + (K - 1)];
    double* a = ws.alpha[var].data();

    for (std::size_t t = 0; t < T; ++t) {
        const double* ht = top.h_at(t, B, d);
        for (std::size_t win = 0; win < B; ++win) {
            double s = b;
            const double* hw = ht + win * d;
            for (std::size_t q = 0; q < d; ++q) s += w[q] * hw[q];
            a[t * B + win] = s;
        }
    }
    for (std::size_t win = 0; win < B; ++win) {
        double mx = a[win];
        for (std::size_t t = 1; t < T; ++t) mx = std::max(mx, a[t * B + win]);
        double z = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            const double e = std::exp(a[t * B + win] - mx);
            a[t * B + win] = e;
            z += e;
        }
        const double inv = 1.0 / z;
        for (std::size_t t = 0; t < T; ++t) a[t * B + win] *= inv;
    }
    // blend into the stacked embedding matrix
    for (std::size_t win = 0; win < B; ++win) {
        double* dst = ws.call.data() + (win * N + var) * d;
        std::memset(dst, 0, d * sizeof(double));
    }
    for (std::size_t t = 0; t < T; ++t) {
        const double* ht = top.h_at(t, B, d);
        for (std::size_t win = 0; win < B; ++win) {
            const double av = a[t * B + win];
            const double* hw = ht + win * d;
            double* dst = ws.call.data() + (win * N + var) * d;
            for (std::size_t q = 0; q < d; ++q) dst[q] += av * hw[q];
        }
    }
}

void mhsa_forward(const OracleModel& m, Workspace& ws) {
    const std::size_t B = ws.B, N = ws.N, d = ws.d, dh = ws.dh;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const double* p = m.params().data();
    CMapM callM(ws.call.data(), B * N, d);
    MapM cstarM(ws.cstar.data(), B * N, d);
    cstarM.setZero();

    for (std::size_t h = 0; h < ws.H; ++h) {
        HeadCache& hc = ws.heads[h];
        CMapM wq(p + m.attn_w_q(h), d, dh), wk(p + m.attn_w_k(h), d, dh), wv(p + m.attn_w_v(h), d, dh);
        CMapM wo(p + m.attn_w_o(h), dh, d);
        MapM q(hc.q.data(), B * N, dh), k(hc.k.data(), B * N, dh), v(hc.v.data(), B * N, dh),
            u(hc.u.data(), B * N, dh);
        q.noalias() = callM * wq;
        k.noalias() = callM * wk;
        v.noalias() = callM * wv;

        for (std::size_t win = 0; win < B; ++win) {
            for (std::size_t i = 0; i < N; ++i) {
                const double* qi = hc.q.data() + (win * N + i) * dh;
                double* att = hc.attn.data() + (win * N + i) * N;
                double mx = -1e300;
                for (std::size_t j = 0; j < N; ++j) {
                    const double* kj = hc.k.data() + (win * N + j) * dh;
                    double s = 0.0;
                    for (std::size_t r = 0; r < dh; ++r) s += qi[r] * kj[r];
                    att[j] = s * scale;
                    mx = std::max(mx, att[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < N; ++j) {
                    att[j] = std::exp(att[j] - mx);
                    z += att[j];
                }
                const double inv = 1.0 / z;
                double* ui = hc.u.data() + (win * N + i) * dh;
                std::memset(ui, 0, dh * sizeof(double));
                for (std::size_t j = 0; j < N; ++j) {
                    att[j] *= inv;
                    const double* vj = hc.v.data() + (win * N + j) * dh;
                    for (std::size_t r = 0; r < dh; ++r) ui[r] += att[j] * vj[r];
                }
            }
        }
        cstarM.noalias() += u * wo;
    }
}

void forward_micro(const OracleModel& m, Workspace& ws, int threads) {
    parallel_vars(threads, ws.N, [&](std::size_t var) {
        lstm_stack_forward(m, ws, var, false);
        pool_forward(m, ws, var);
    });
    mhsa_forward(m, ws);
    parallel_vars(threads, ws.N, [&](std::size_t var) {
        // decoder hidden init: every layer starts from the refined embedding
        double* h0 = ws.dec_h0[var].data();
        for (std::size_t win = 0; win < ws.B; ++win)
            std::memcpy(h0 + win * ws.d, ws.cstar.data() + (win * ws.N + var) * ws.d, ws.d * sizeof(double));
        lstm_stack_forward(m, ws, var, true);
    });
}

void load_inputs(Workspace& ws, std::span<const Window> windows, std::size_t w0) {
    const std::size_t B = ws.B, N = ws.N, T = ws.T;
    for (std::size_t w = 0; w < B; ++w) {
        const Window& win = windows[w0 + w];
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t i = 0; i < N; ++i) ws.xin[i][t * B + w] = win.past.at(t, i);
        for (std::size_t i = 0; i < N; ++i) ws.tgt[w * N + i] = win.target[i];
    }
}

Mat window_dissimilarity(const Workspace& ws, std::size_t w, DistanceMetric metric) {
    const std::size_t N = ws.N, d = ws.d;
    Mat rows(N, d);
    for (std::size_t i = 0; i < N; ++i)
        std::memcpy(rows.row(i), ws.cstar.data() + (w * N + i) * d, d * sizeof(double));
    return pairwise_dissimilarity(rows, metric);
}

// ---- backward pieces ------------------------------------------------------

// Gradient of the deviation term for one window into dcstar. `coef0` is
// lambda_dev / (batch * N^2).
void deviation_backward(Workspace& ws, std::size_t w, const Mat& d_mat, const Mat& sls, DistanceMetric metric,
                        double coef0) {
    const std::size_t N = ws.N, d = ws.d;
    for (std::size_t i = 0; i < N; ++i) {
        const double* ci = ws.cstar.data() + (w * N + i) * d;
        double* gi = ws.dcstar.data() + (w * N + i) * d;
        for (std::size_t j = i + 1; j < N; ++j) {
            const double* cj = ws.cstar.data() + (w * N + j) * d;
            double* gj = ws.dcstar.data() + (w * N + j) * d;
            const double diff = d_mat.at(i, j) - sls.at(i, j);
            const double coef = 4.0 * coef0 * diff;  // (i,j) and (j,i) both appear in the sum
            if (coef == 0.0) continue;
            switch (metric) {
                case DistanceMetric::l2: {
                    const double dist = d_mat.at(i, j);
                    if (dist < kDistEps) break;
                    const double s = coef / dist;
                    for (std::size_t q = 0; q < d; ++q) {
                        const double diffq = s * (ci[q] - cj[q]);
                        gi[q] += diffq;
                        gj[q] -= diffq;
                    }
                    break;
                }
                case DistanceMetric::l1: {
                    for (std::size_t q = 0; q < d; ++q) {
                        const double sg = (ci[q] > cj[q]) ? 1.0 : (ci[q] < cj[q] ? -1.0 : 0.0);
                        gi[q] += coef * sg;
                        gj[q] -= coef * sg;
                    }
                    break;
                }
                case DistanceMetric::cosine: {
                    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
                    for (std::size_t q = 0; q < d; ++q) {
                        dot += ci[q] * cj[q];
                        na2 += ci[q] * ci[q];
                        nb2 += cj[q] * cj[q];
                    }
                    const double na = std::sqrt(na2), nb = std::sqrt(nb2);
                    if (na < kDistEps || nb < kDistEps) break;  // guarded constant distance
                    const double inv = 1.0 / (na * nb);
                    const double cs = dot * inv;
                    for (std::size_t q = 0; q < d; ++q) {
                        // d(1 - cos)/da and /db
                        gi[q] += coef * (cs * ci[q] / na2 - cj[q] * inv);
                        gj[q] += coef * (cs * cj[q] / nb2 - ci[q] * inv);
                    }
                    break;
                }
            }
        }
    }
}

void mhsa_backward(const OracleModel& m, Workspace& ws, std::vector<double>& grad) {
    const std::size_t B = ws.B, N = ws.N, d = ws.d, dh = ws.dh;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const double* p = m.params().data();
    CMapM callM(ws.call.data(), B * N, d);
    CMapM dcstarM(ws.dcstar.data(), B * N, d);
    MapM dcallM(ws.dcall.data(), B * N, d);
    dcallM.setZero();

    for (std::size_t h = 0; h < ws.H; ++h) {
        HeadCache& hc = ws.heads[h];
        CMapM wq(p + m.attn_w_q(h), d, dh), wk(p + m.attn_w_k(h), d, dh), wv(p + m.attn_w_v(h), d, dh);
        CMapM wo(p + m.attn_w_o(h), dh, d);
        MapM gwq(grad.data() + m.attn_w_q(h), d, dh), gwk(grad.data() + m.attn_w_k(h), d, dh),
            gwv(grad.data() + m.attn_w_v(h), d, dh), gwo(grad.data() + m.attn_w_o(h), dh, d);
        CMapM u(hc.u.data(), B * N, dh);
        MapM du(ws.hq_du.data(), B * N, dh), dq(ws.hq_dq.data(), B * N, dh), dk(ws.hq_dk.data(), B * N, dh),
            dv(ws.hq_dv.data(), B * N, dh);

        gwo.noalias() += u.transpose() * dcstarM;
        du.noalias() = dcstarM * wo.transpose();
        dq.setZero();
        dk.setZero();
        dv.setZero();

        std::vector<double> da(N);
        for (std::size_t win = 0; win < B; ++win) {
            for (std::size_t i = 0; i < N; ++i) {
                const double* dui = ws.hq_du.data() + (win * N + i) * dh;
                const double* att = hc.attn.data() + (win * N + i) * N;
                double sdot = 0.0;
                for (std::size_t j = 0; j < N; ++j) {
                    const double* vj = hc.v.data() + (win * N + j) * dh;
                    double s = 0.0;
                    for (std::size_t r = 0; r < dh; ++r) s += dui[r] * vj[r];
                    da[j] = s;
                    sdot += att[j] * s;
                    double* dvj = ws.hq_dv.data() + (win * N + j) * dh;
                    for (std::size_t r = 0; r < dh; ++r) dvj[r] += att[j] * dui[r];
                }
                const double* qi = hc.q.data() + (win * N + i) * dh;
                double* dqi = ws.hq_dq.data() + (win * N + i) * dh;
                for (std::size_t j = 0; j < N; ++j) {
                    const double ds = att[j] * (da[j] - sdot) * scale;
                    if (ds == 0.0) continue;
                    const double* kj = hc.k.data() + (win * N + j) * dh;
                    double* dkj = ws.hq_dk.data() + (win * N + j) * dh;
                    for (std::size_t r = 0; r < dh; ++r) {
                        dqi[r] += ds * kj[r];
                        dkj[r] += ds * qi[r];
                    }
                }
            }
        }
        gwq.noalias() += callM.transpose() * dq;
        gwk.noalias() += callM.transpose() * dk;
        gwv.noalias() += callM.transpose() * dv;
        dcallM.noalias() += dq * wq.transpose();
        dcallM.noalias() += dk * wk.transpose();
        dcallM.noalias() += dv * wv.transpose();
    }
}

void lstm_stack_backward(const OracleModel& m, Workspace& ws, std::size_t var, bool decoder,
                         std::vector<double>& grad) {
    const std::size_t B = ws.B, d = ws.d, K = ws.K, N = ws.N;
    const std::size_t steps = decoder ? ws.L : ws.T;
    const double* p = m.params().data();
    LayerCache* stack = (decoder ? ws.dec.data() : ws.enc.data()) + var * K;

    std::vector<double>& carry_h = ws.carry_h[var];
    std::vector<double>& carry_c = ws.carry_c[var];
    std::fill(carry_h.begin(), carry_h.end(), 0.0);
    std::fill(carry_c.begin(), carry_c.end(), 0.0);
    double* dzbuf = ws.dz[var].data();

    const double* out_w = decoder ? p + m.dec_out_w(var) : nullptr;
    double* g_out_w = decoder ? grad.data() + m.dec_out_w(var) : nullptr;
    double* g_out_b = decoder ? grad.data() + m.dec_out_b(var) : nullptr;

    for (std::size_t t = steps; t-- > 0;) {
        if (decoder) {
            const double* dyt = ws.dy[var].data() + t * B;
            const double* htop = stack[K - 1].h_at(t, B, d);
            double* ch = carry_h.data() + (K - 1) * B * d;
            double acc_b = 0.0;
            for (std::size_t w = 0; w < B; ++w) {
                const double dv = dyt[w];
                acc_b += dv;
                const double* hw = htop + w * d;
                double* chw = ch + w * d;
                for (std::size_t q = 0; q < d; ++q) {
                    g_out_w[q] += dv * hw[q];
                    chw[q] += dv * out_w[q];
                }
            }
            *g_out_b += acc_b;
        } else {
            // pooled-attention contribution to the top hidden state
            const double* dt = ws.dtop[var].data() + t * B * d;
            double* ch = carry_h.data() + (K - 1) * B * d;
            for (std::size_t q = 0; q < B * d; ++q) ch[q] += dt[q];
        }

        for (std::size_t k = K; k-- > 0;) {
            LayerCache& lc = stack[k];
            const std::size_t in_dim = m.layer_input_dim(k);
            const std::size_t w_ih_off = decoder ? m.dec_w_ih(var, k) : m.enc_w_ih(var, k);
            const std::size_t w_hh_off = decoder ? m.dec_w_hh(var, k) : m.enc_w_hh(var, k);
            const std::size_t b_off = decoder ? m.dec_b(var, k) : m.enc_b(var, k);

            double* ch = carry_h.data() + k * B * d;
            double* cc = carry_c.data() + k * B * d;
            const double* gates = lc.gates_at(t, B, d);
            const double* ct = lc.c_at(t, B, d);
            const double* tct = lc.tc_at(t, B, d);
            const double* cprev = (t > 0) ? lc.c_at(t - 1, B, d) : nullptr;

            for (std::size_t w = 0; w < B; ++w) {
                const double* g = gates + w * 4 * d;
                const double* tcw = tct + w * d;
                const double* cpw = cprev ? cprev + w * d : nullptr;
                double* dh = ch + w * d;
                double* dc = cc + w * d;
                double* dzw = dzbuf + w * 4 * d;
                (void)ct;
                for (std::size_t q = 0; q < d; ++q) {
                    const double gi = g[q], gf = g[d + q], gg = g[2 * d + q], go = g[3 * d + q];
                    const double tcv = tcw[q];
                    const double dhv = dh[q];
                    double dcv = dc[q] + dhv * go * (1.0 - tcv * tcv);
                    const double dov = dhv * tcv;
                    const double div = dcv * gg;
                    const double dfv = cpw ? dcv * cpw[q] : 0.0;
                    const double dgv = dcv * gi;
                    dc[q] = dcv * gf;  // becomes delta c_{t-1}
                    dzw[q] = div * gi * (1.0 - gi);
                    dzw[d + q] = dfv * gf * (1.0 - gf);
                    dzw[2 * d + q] = dgv * (1.0 - gg * gg);
                    dzw[3 * d + q] = dov * go * (1.0 - go);
                }
            }

            MapM dzM(dzbuf, B, 4 * d);
            // bias gradient summed in fixed row order (keeps results
            // independent of buffer addresses, unlike packetized reductions)
            double* gb = grad.data() + b_off;
            for (std::size_t w = 0; w < B; ++w) {
                const double* dzw = dzbuf + w * 4 * d;
                for (std::size_t q = 0; q < 4 * d; ++q) gb[q] += dzw[q];
            }

            // d w_ih and the input gradient
            if (k == 0) {
                const double* u = nullptr;
                if (decoder)
                    u = (t == 0) ? nullptr : ws.dec_y[var].data() + (t - 1) * B;
                else
                    u = ws.xin[var].data() + t * B;
                if (u) {
                    CMapM um(u, B, 1);
                    MapM gwih(grad.data() + w_ih_off, 4 * d, 1);
                    gwih.noalias() += dzM.transpose() * um;
                }
                if (decoder && t > 0) {
                    // feedback: gradient w.r.t. y_{t-1}
                    CMapM wih(p + w_ih_off, 4 * d, 1);
                    double* dyprev = ws.dy[var].data() + (t - 1) * B;
                    MapM dyM(dyprev, B, 1);
                    dyM.noalias() += dzM * wih;
                }
            } else {
                CMapM um(stack[k - 1].h_at(t, B, d), B, d);
                MapM gwih(grad.data() + w_ih_off, 4 * d, in_dim);
                gwih.noalias() += dzM.transpose() * um;
                // interlayer gradient joins the lower layer's carry at this step
                CMapM wih(p + w_ih_off, 4 * d, in_dim);
                MapM below(carry_h.data() + (k - 1) * B * d, B, d);
                below.noalias() += dzM * wih;
            }

            // d w_hh and delta h_{t-1}
            const double* hprev = nullptr;
            if (t > 0)
                hprev = lc.h_at(t - 1, B, d);
            else if (decoder)
                hprev = ws.dec_h0[var].data();
            MapM chM(ch, B, d);
            CMapM whh(p + w_hh_off, 4 * d, d);
            if (hprev) {
                CMapM hm(hprev, B, d);
                MapM gwhh(grad.data() + w_hh_off, 4 * d, d);
                gwhh.noalias() += dzM.transpose() * hm;
                chM.noalias() = dzM * whh;
            } else {
                chM.setZero();
            }
        }

        if (t == 0 && decoder) {
            // hidden-state init gradient flows into the refined embedding
            for (std::size_t k = 0; k < K; ++k) {
                const double* ch = carry_h.data() + k * B * d;
                for (std::size_t w = 0; w < B; ++w) {
                    double* dst = ws.dcstar.data() + (w * N + var) * d;
                    const double* src = ch + w * d;
                    for (std::size_t q = 0; q < d; ++q) dst[q] += src[q];
                }
            }
        }
    }
}

void pool_backward(const OracleModel& m, Workspace& ws, std::size_t var) {
    const std::size_t B = ws.B, d = ws.d, T = ws.T, N = ws.N, K = ws.K;
    const double* w = m.params().data() + m.pool_w(var);
    LayerCache& top = ws.enc[var * K + (K - 1)];
    const double* a = ws.alpha[var].data();

    double* dciv = ws.dci[var].data();
    for (std::size_t win = 0; win < B; ++win)
        std::memcpy(dciv + win * d, ws.dcall.data() + (win * N + var) * d, d * sizeof(double));

    std::vector<double> dalpha(T * B);
    for (std::size_t t = 0; t < T; ++t) {
        const double* ht = top.h_at(t, B, d);
        for (std::size_t win = 0; win < B; ++win) {
            double s = 0.0;
            const double* hw = ht + win * d;
            const double* dc = dciv + win * d;
            for (std::size_t q = 0; q < d; ++q) s += dc[q] * hw[q];
            dalpha[t * B + win] = s;
        }
    }
    for (std::size_t win = 0; win < B; ++win) {
        double sdot = 0.0;
        for (std::size_t t = 0; t < T; ++t) sdot += a[t * B + win] * dalpha[t * B + win];
        for (std::size_t t = 0; t < T; ++t)
            dalpha[t * B + win] = a[t * B + win] * (dalpha[t * B + win] - sdot);  // delta scores
    }

    double* gw = ws.pool_gw[var].data();
    std::fill(ws.pool_gw[var].begin(), ws.pool_gw[var].end(), 0.0);
    double gb = 0.0;
    double* dtopv = ws.dtop[var].data();
    for (std::size_t t = 0; t < T; ++t) {
        const double* ht = top.h_at(t, B, d);
        double* dt = dtopv + t * B * d;
        for (std::size_t win = 0; win < B; ++win) {
            const double ds = dalpha[t * B + win];
            const double av = a[t * B + win];
            gb += ds;
            const double* hw = ht + win * d;
            const double* dc = dciv + win * d;
            double* dst = dt + win * d;
            for (std::size_t q = 0; q < d; ++q) {
                gw[q] += ds * hw[q];
                dst[q] = av * dc[q] + ds * w[q];
            }
        }
    }
    ws.pool_gb[var] = gb;
}

}  // namespace

int resolve_threads(int threads) {
    if (threads > 0) return threads;
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

void run_forward(const OracleModel& m, std::span<const Window> windows, int threads,
                 std::vector<ForwardOutput>* outputs, std::vector<Mat>* d_mats,
                 const DistanceMetric* metric, Mat* preds) {
    const ModelConfig& cfg = m.config();
    const std::size_t N = cfg.n_vars, L = cfg.window, d = cfg.hidden_dim, T = L - 1;
    for (const Window& w : windows)
        require(w.past.rows == T && w.past.cols == N && w.target.size() == N,
                "forward: window shape does not match the model config");

    const int nt = resolve_threads(threads);
    if (outputs) outputs->assign(windows.size(), ForwardOutput{});
    if (d_mats) d_mats->assign(windows.size(), Mat{});
    if (preds) *preds = Mat(windows.size(), N);

    Workspace ws;
    for (std::size_t w0 = 0; w0 < windows.size(); w0 += kMicroBatch) {
        const std::size_t b = std::min(kMicroBatch, windows.size() - w0);
        if (ws.B != b) ws.resize(cfg, b, false);
        load_inputs(ws, windows, w0);
        forward_micro(m, ws, nt);

        for (std::size_t w = 0; w < b; ++w) {
            if (d_mats) (*d_mats)[w0 + w] = window_dissimilarity(ws, w, metric ? *metric : DistanceMetric::l2);
            if (preds)
                for (std::size_t i = 0; i < N; ++i) preds->at(w0 + w, i) = ws.dec_y[i][(L - 1) * b + w];
            if (outputs) {
                ForwardOutput& out = (*outputs)[w0 + w];
                out.causal = Mat(N, d);
                out.refined = Mat(N, d);
                out.recon = Mat(T, N);
                out.pred.resize(N);
                out.attention_weights = Mat(N, T);
                for (std::size_t i = 0; i < N; ++i) {
                    std::memcpy(out.causal.row(i), ws.call.data() + (w * N + i) * d, d * sizeof(double));
                    std::memcpy(out.refined.row(i), ws.cstar.data() + (w * N + i) * d, d * sizeof(double));
                    out.pred[i] = ws.dec_y[i][(L - 1) * b + w];
                    for (std::size_t t = 0; t < T; ++t) {
                        out.recon.at(t, i) = ws.dec_y[i][t * b + w];
                        out.attention_weights.at(i, t) = ws.alpha[i][t * b + w];
                    }
                }
            }
        }
    }
}

LossSums batch_loss_and_grad(const OracleModel& m, std::span<const Window> windows, const Mat* sls,
                             double lambda_recon, double lambda_dev, DistanceMetric metric,
                             std::vector<double>& grad, std::vector<Mat>* d_mats, int threads) {
    const ModelConfig& cfg = m.config();
    const std::size_t N = cfg.n_vars, L = cfg.window, T = L - 1;
    for (const Window& w : windows)
        require(w.past.rows == T && w.past.cols == N && w.target.size() == N,
                "training: window shape does not match the model config");
    require(grad.size() == m.param_count(), "training: gradient buffer size mismatch");
    if (sls) require(sls->rows == N && sls->cols == N, "training: SLS dimension mismatch");

    const int nt = resolve_threads(threads);
    const double inv_batch = 1.0 / static_cast<double>(windows.size());
    if (d_mats) d_mats->assign(windows.size(), Mat{});

    LossSums sums;
    Workspace ws;
    for (std::size_t w0 = 0; w0 < windows.size(); w0 += kMicroBatch) {
        const std::size_t b = std::min(kMicroBatch, windows.size() - w0);
        if (ws.B != b) ws.resize(cfg, b, true);
        load_inputs(ws, windows, w0);
        forward_micro(m, ws, nt);

        // loss sums and backward seeds
        std::fill(ws.dcstar.begin(), ws.dcstar.end(), 0.0);
        for (std::size_t i = 0; i < N; ++i) std::fill(ws.dy[i].begin(), ws.dy[i].end(), 0.0);

        for (std::size_t w = 0; w < b; ++w) {
            for (std::size_t i = 0; i < N; ++i) {
                const double e = ws.dec_y[i][(L - 1) * b + w] - ws.tgt[w * N + i];
                sums.prediction += e * e;
                ws.dy[i][(L - 1) * b + w] = 2.0 * e * inv_batch;
                for (std::size_t s = 0; s < T; ++s) {
                    const double er = ws.dec_y[i][s * b + w] - ws.xin[i][s * b + w];
                    sums.reconstruction += er * er;
                    ws.dy[i][s * b + w] = 2.0 * lambda_recon * er * inv_batch;
                }
            }
            if (sls || d_mats) {
                Mat dm = window_dissimilarity(ws, w, metric);
                if (sls) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < N; ++i)
                        for (std::size_t j = i + 1; j < N; ++j) {
                            const double diff = dm.at(i, j) - sls->at(i, j);
                            acc += 2.0 * diff * diff;  // both orders of the pair
                        }
                    sums.deviation += acc / static_cast<double>(N * N);
                    deviation_backward(ws, w, dm, *sls, metric,
                                       lambda_dev * inv_batch / static_cast<double>(N * N));
                }
                if (d_mats) (*d_mats)[w0 + w] = std::move(dm);
            }
        }

        // backward
        parallel_vars(nt, N, [&](std::size_t var) { lstm_stack_backward(m, ws, var, true, grad); });
        mhsa_backward(m, ws, grad);
        parallel_vars(nt, N, [&](std::size_t var) {
            pool_backward(m, ws, var);
            lstm_stack_backward(m, ws, var, false, grad);
        });
        // pooling gradients merge in variable order (w,b may be shared)
        for (std::size_t var = 0; var < N; ++var) {
            double* gw = grad.data() + m.pool_w(var);
            for (std::size_t q = 0; q < cfg.hidden_dim; ++q) gw[q] += ws.pool_gw[var][q];
            grad[m.pool_b(var)] += ws.pool_gb[var];
        }
    }
    return sums;
}

}  // namespace oraclead::detail
