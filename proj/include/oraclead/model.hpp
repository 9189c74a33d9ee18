#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "oraclead/mat.hpp"
#include "oraclead/series.hpp"

namespace oraclead {

struct ModelConfig {
    std::size_t n_vars = 0;
    std::size_t window = 10;      // L
    std::size_t hidden_dim = 32;  // d
    std::size_t n_heads = 4;      // H
    std::size_t n_layers = 2;     // encoder and decoder stack depth
    bool per_variable_pooling = false;
    std::uint64_t seed = 0;

    std::size_t head_dim() const { return hidden_dim / n_heads; }
    void validate() const;
};

/// One named parameter tensor inside the model's flat parameter vector.
/// `fan_in` is the input dimensionality of the affine map the tensor feeds,
/// which fixes the init scale U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
struct TensorInfo {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
    std::size_t fan_in = 1;
};

/// All learnable parameters: N independent stacked-LSTM encoders, attention
/// pooling (w, b), multi-head self-attention projections, N independent
/// stacked-LSTM decoders with scalar output heads. Parameters live in one
/// flat vector addressed through a named layout.
class OracleModel {
public:
    OracleModel() = default;
    explicit OracleModel(const ModelConfig& cfg);  // zero-initialized

    /// Seeded scaled-uniform init; identical bytes for identical configs.
    static OracleModel init(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    std::span<const TensorInfo> tensors() const { return layout_; }
    std::size_t param_count() const { return params_.size(); }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    // Offsets into the flat parameter vector. Gate blocks are ordered
    // input, forget, candidate, output.
    std::size_t enc_w_ih(std::size_t var, std::size_t layer) const;
    std::size_t enc_w_hh(std::size_t var, std::size_t layer) const;
    std::size_t enc_b(std::size_t var, std::size_t layer) const;
    std::size_t dec_w_ih(std::size_t var, std::size_t layer) const;
    std::size_t dec_w_hh(std::size_t var, std::size_t layer) const;
    std::size_t dec_b(std::size_t var, std::size_t layer) const;
    std::size_t dec_out_w(std::size_t var) const;
    std::size_t dec_out_b(std::size_t var) const;
    std::size_t pool_w(std::size_t var) const;  // shared pooling ignores var
    std::size_t pool_b(std::size_t var) const;
    std::size_t attn_w_q(std::size_t head) const;
    std::size_t attn_w_k(std::size_t head) const;
    std::size_t attn_w_v(std::size_t head) const;
    std::size_t attn_w_o(std::size_t head) const;

    std::size_t layer_input_dim(std::size_t layer) const { return layer == 0 ? 1 : cfg_.hidden_dim; }

private:
    void build_layout();

    ModelConfig cfg_;
    std::vector<TensorInfo> layout_;
    std::vector<double> params_;
    // cached bases
    std::size_t enc_base_ = 0, pool_base_ = 0, attn_base_ = 0, dec_base_ = 0, dec_out_base_ = 0;
    std::size_t lstm_stack_size_ = 0;  // params per variable per stack
};

struct ForwardOutput {
    Mat causal;             // N x d, pooled causal embeddings
    Mat refined;            // N x d, after cross-variable attention
    Mat recon;              // (L-1) x N reconstruction of the past window
    std::vector<double> pred;  // length N, next-step prediction
    Mat attention_weights;  // N x (L-1) pooling weights (diagnostic)
};

/// Stacked-LSTM encoding of one variable's scalar history; returns the top
/// layer's hidden states, one row per timestep.
Mat encode_variable(const OracleModel& m, std::size_t var, std::span<const double> seq);

/// Softmax-over-time blend of hidden states: weights from w'h + b, then the
/// weighted sum. Returns (embedding, weights).
std::pair<std::vector<double>, std::vector<double>> attention_pool(const OracleModel& m, const Mat& hiddens,
                                                                   std::size_t var = 0);

/// Multi-head self-attention across variables (rows of C), summed over heads.
Mat mhsa(const OracleModel& m, const Mat& c);

/// Decoder unroll for one variable: hidden state of every layer starts at
/// c_star, the first input is zero and later inputs feed back the previous
/// output. Steps 1..L-1 reconstruct the past window in forward order, step L
/// is the prediction. Returns (recon sequence, prediction).
std::pair<std::vector<double>, double> decode_variable(const OracleModel& m, std::size_t var,
                                                       std::span<const double> c_star);

ForwardOutput forward_window(const OracleModel& m, const Window& win);

/// Batched forward pass; each window is computed independently of the others.
/// `threads` <= 0 picks the hardware default. Results do not depend on the
/// thread count.
std::vector<ForwardOutput> forward(const OracleModel& m, std::span<const Window> windows, int threads = 0);

}  // namespace oraclead
