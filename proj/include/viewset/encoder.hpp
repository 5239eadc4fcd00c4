#pragma once

#include "viewset/graph.hpp"
#include "viewset/rng.hpp"
#include "viewset/tensor.hpp"

#include <cstddef>
#include <memory>
#include <vector>

namespace viewset {

struct EncoderConfig {
    std::size_t num_blocks = 4;
    std::size_t num_heads = 8;
    std::size_t view_dim = 512;
    std::size_t mlp_ratio = 2;
    double dropout_rate = 0.1;
    bool use_position_encoding = false;
    bool use_class_token = false;
    // 0 means "derive": sqrt(view_dim / num_heads), the per-head width root.
    double temperature = 0.0;
    // Capacity of the learned position table (only used when
    // use_position_encoding is true; inputs with more rows are rejected).
    std::size_t max_views = 64;

    double effective_temperature() const;
    std::size_t head_dim() const { return view_dim / num_heads; }
    void validate() const; // throws ConfigError on violation
};

// One pre-norm attention block: x + DP(MSA(LN(x))), then x + DP(MLP(LN(x))).
struct AttentionBlockParams {
    Parameter wq, wk, wv, wo;
    Parameter ln1_g, ln1_b;
    Parameter mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    Parameter ln2_g, ln2_b;

    AttentionBlockParams(std::size_t index, const EncoderConfig& cfg, Rng& rng);
    std::vector<Parameter*> params();
};

// Attention matrices recorded during a forward pass, for inspection/export:
// one M x M matrix per (block, head).
struct AttentionTrace {
    std::vector<std::vector<Tensor>> block_heads;
    // Mean over heads for one block (all heads have equal weight).
    Tensor head_mean(std::size_t block) const;
};

// --- standalone single-head reference operations ----------------------------

// softmax_rows(Z Wq (Z Wk)^T / tau): the row-stochastic matrix of pairwise
// view correlations. Always M x M — one entry per ordered view pair.
Tensor correlation_matrix(const Tensor& z, const Tensor& wq, const Tensor& wk, double tau);
// A . Z . Wv — mixes view rows by correlation weight, then re-embeds.
Tensor apply_correlations(const Tensor& a, const Tensor& z, const Tensor& wv);

// --- the encoder -------------------------------------------------------------

class Encoder {
public:
    Encoder(EncoderConfig cfg, Rng& init_rng);

    const EncoderConfig& config() const { return cfg_; }
    std::vector<Parameter*> params();
    std::size_t param_count() const;

    // z0 is M x D. dropout_rng must be non-null when g.training and
    // dropout_rate > 0. When trace is non-null every head's correlation
    // matrix is recorded.
    Val forward(Graph& g, Val z0, Rng* dropout_rng = nullptr,
                AttentionTrace* trace = nullptr);

    // Single block and bare multi-head attention, exposed for composition and
    // reduction tests.
    Val block_forward(Graph& g, Val z, std::size_t block, Rng* dropout_rng,
                      AttentionTrace* trace);
    Val msa(Graph& g, Val x, AttentionBlockParams& p, std::vector<Tensor>* heads_out = nullptr);

    AttentionBlockParams& block(std::size_t i) { return blocks_[i]; }
    Parameter* position_table() { return pos_.get(); }
    Parameter* class_token() { return cls_.get(); }

private:
    EncoderConfig cfg_;
    std::vector<AttentionBlockParams> blocks_;
    std::unique_ptr<Parameter> pos_;
    std::unique_ptr<Parameter> cls_;
};

// Zero-mean uniform init with half-width sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

} // namespace viewset
