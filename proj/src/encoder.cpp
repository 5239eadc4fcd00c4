#include "viewset/encoder.hpp"

#include "viewset/error.hpp"

#include <cmath>
#include <memory>

namespace viewset {

namespace {
constexpr double kLnEps = 1e-5;
}

double EncoderConfig::effective_temperature() const {
    if (temperature > 0.0) return temperature;
    return std::sqrt(static_cast<double>(view_dim) / static_cast<double>(num_heads));
}

void EncoderConfig::validate() const {
    if (view_dim == 0 || num_heads == 0)
        throw ConfigError("encoder: view_dim and num_heads must be positive");
    if (view_dim % num_heads != 0)
        throw ConfigError("encoder: view_dim " + std::to_string(view_dim) +
                          " is not divisible by num_heads " + std::to_string(num_heads));
    if (temperature < 0.0) throw ConfigError("encoder: temperature must be positive");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw ConfigError("encoder: dropout_rate must lie in [0, 1)");
    if (mlp_ratio == 0) throw ConfigError("encoder: mlp_ratio must be positive");
    if (use_position_encoding && max_views == 0)
        throw ConfigError("encoder: max_views must be positive with position encoding");
}

Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
    return t;
}

AttentionBlockParams::AttentionBlockParams(std::size_t index, const EncoderConfig& cfg, Rng& rng)
    : wq("block" + std::to_string(index) + ".wq",
         xavier_uniform({cfg.view_dim, cfg.view_dim}, cfg.view_dim, cfg.view_dim, rng)),
      wk("block" + std::to_string(index) + ".wk",
         xavier_uniform({cfg.view_dim, cfg.view_dim}, cfg.view_dim, cfg.view_dim, rng)),
      wv("block" + std::to_string(index) + ".wv",
         xavier_uniform({cfg.view_dim, cfg.view_dim}, cfg.view_dim, cfg.view_dim, rng)),
      wo("block" + std::to_string(index) + ".wo",
         xavier_uniform({cfg.view_dim, cfg.view_dim}, cfg.view_dim, cfg.view_dim, rng)),
      ln1_g("block" + std::to_string(index) + ".ln1.g", Tensor::filled({cfg.view_dim}, 1.0)),
      ln1_b("block" + std::to_string(index) + ".ln1.b", Tensor::zeros({cfg.view_dim})),
      mlp_w1("block" + std::to_string(index) + ".mlp.w1",
             xavier_uniform({cfg.view_dim, cfg.mlp_ratio * cfg.view_dim}, cfg.view_dim,
                            cfg.mlp_ratio * cfg.view_dim, rng)),
      mlp_b1("block" + std::to_string(index) + ".mlp.b1",
             Tensor::zeros({cfg.mlp_ratio * cfg.view_dim})),
      mlp_w2("block" + std::to_string(index) + ".mlp.w2",
             xavier_uniform({cfg.mlp_ratio * cfg.view_dim, cfg.view_dim},
                            cfg.mlp_ratio * cfg.view_dim, cfg.view_dim, rng)),
      mlp_b2("block" + std::to_string(index) + ".mlp.b2", Tensor::zeros({cfg.view_dim})),
      ln2_g("block" + std::to_string(index) + ".ln2.g", Tensor::filled({cfg.view_dim}, 1.0)),
      ln2_b("block" + std::to_string(index) + ".ln2.b", Tensor::zeros({cfg.view_dim})) {}

std::vector<Parameter*> AttentionBlockParams::params() {
    return {&wq, &wk, &wv, &wo, &ln1_g, &ln1_b, &mlp_w1, &mlp_b1, &mlp_w2, &mlp_b2, &ln2_g,
            &ln2_b};
}

Tensor AttentionTrace::head_mean(std::size_t block) const {
    const auto& heads = block_heads.at(block);
    if (heads.empty()) throw StateError("attention trace has no heads for this block");
    Tensor mean(heads[0].shape());
    for (const Tensor& h : heads)
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += h[i];
    for (std::size_t i = 0; i < mean.size(); ++i)
        mean[i] /= static_cast<double>(heads.size());
    return mean;
}

Tensor correlation_matrix(const Tensor& z, const Tensor& wq, const Tensor& wk, double tau) {
    if (tau <= 0.0) throw ConfigError("correlation_matrix: tau must be positive");
    Tensor q = matmul(z, wq);
    Tensor k = matmul(z, wk);
    Tensor scores = scale(matmul(q, transpose(k)), 1.0 / tau);
    return softmax_rows(scores);
}

Tensor apply_correlations(const Tensor& a, const Tensor& z, const Tensor& wv) {
    if (a.rows() != a.cols() || a.rows() != z.rows())
        throw DimensionError("apply_correlations: A must be M x M matching Z's rows");
    return matmul_canonical(a, matmul(z, wv));
}

Encoder::Encoder(EncoderConfig cfg, Rng& init_rng) : cfg_(cfg) {
    cfg_.validate();
    if (cfg_.use_position_encoding)
        pos_ = std::make_unique<Parameter>(
            "posenc", xavier_uniform({cfg_.max_views, cfg_.view_dim}, cfg_.max_views,
                                     cfg_.view_dim, init_rng));
    if (cfg_.use_class_token)
        cls_ = std::make_unique<Parameter>(
            "cls_token", xavier_uniform({1, cfg_.view_dim}, 1, cfg_.view_dim, init_rng));
    blocks_.reserve(cfg_.num_blocks);
    for (std::size_t i = 0; i < cfg_.num_blocks; ++i) blocks_.emplace_back(i, cfg_, init_rng);
}

std::vector<Parameter*> Encoder::params() {
    std::vector<Parameter*> out;
    if (pos_) out.push_back(pos_.get());
    if (cls_) out.push_back(cls_.get());
    for (auto& b : blocks_)
        for (Parameter* p : b.params()) out.push_back(p);
    return out;
}

std::size_t Encoder::param_count() const {
    std::size_t n = 0;
    for (Parameter* p : const_cast<Encoder*>(this)->params()) n += p->size();
    return n;
}

Val Encoder::msa(Graph& g, Val x, AttentionBlockParams& p, std::vector<Tensor>* heads_out) {
    std::size_t dh = cfg_.head_dim();
    double tau = cfg_.effective_temperature();
    Val q = g.matmul(x, g.param(p.wq));
    Val k = g.matmul(x, g.param(p.wk));
    Val v = g.matmul(x, g.param(p.wv));
    std::vector<Val> heads;
    heads.reserve(cfg_.num_heads);
    for (std::size_t h = 0; h < cfg_.num_heads; ++h) {
        std::size_t lo = h * dh, hi = lo + dh;
        Val qh = g.slice_cols(q, lo, hi);
        Val kh = g.slice_cols(k, lo, hi);
        Val vh = g.slice_cols(v, lo, hi);
        Val scores = g.scale(g.matmul(qh, g.transpose(kh)), 1.0 / tau);
        Val a = g.softmax_rows(scores);
        if (heads_out) heads_out->push_back(g.value(a));
        heads.push_back(g.attend(a, vh));
    }
    Val merged = cfg_.num_heads == 1 ? heads[0] : g.concat_cols(heads);
    return g.matmul(merged, g.param(p.wo));
}

Val Encoder::block_forward(Graph& g, Val z, std::size_t block, Rng* dropout_rng,
                           AttentionTrace* trace) {
    if (block >= blocks_.size()) throw StateError("block index out of range");
    AttentionBlockParams& p = blocks_[block];
    bool need_rng = g.training && cfg_.dropout_rate > 0.0;
    if (need_rng && !dropout_rng)
        throw StateError("encoder: training forward needs a dropout stream");

    std::vector<Tensor>* heads_out = nullptr;
    if (trace) {
        trace->block_heads.emplace_back();
        heads_out = &trace->block_heads.back();
    }

    Val ln1 = g.layer_norm(z, g.param(p.ln1_g), g.param(p.ln1_b), kLnEps);
    Val att = msa(g, ln1, p, heads_out);
    if (need_rng) att = g.dropout(att, cfg_.dropout_rate, *dropout_rng);
    Val mid = g.add(att, z);

    Val ln2 = g.layer_norm(mid, g.param(p.ln2_g), g.param(p.ln2_b), kLnEps);
    Val m1 = g.gelu(g.add_row_bias(g.matmul(ln2, g.param(p.mlp_w1)), g.param(p.mlp_b1)));
    Val m2 = g.add_row_bias(g.matmul(m1, g.param(p.mlp_w2)), g.param(p.mlp_b2));
    if (need_rng) m2 = g.dropout(m2, cfg_.dropout_rate, *dropout_rng);
    return g.add(m2, mid);
}

Val Encoder::forward(Graph& g, Val z0, Rng* dropout_rng, AttentionTrace* trace) {
    std::size_t m = g.value(z0).rows();
    Val z = z0;
    if (pos_) {
        if (m > cfg_.max_views)
            throw DimensionError("encoder: " + std::to_string(m) +
                                 " views exceed the position table capacity " +
                                 std::to_string(cfg_.max_views));
        z = g.add(z, g.slice_rows(g.param(*pos_), 0, m));
    }
    if (cls_) z = g.concat_rows({g.param(*cls_), z});
    for (std::size_t b = 0; b < blocks_.size(); ++b)
        z = block_forward(g, z, b, dropout_rng, trace);
    // The class-token row joins attention but never reaches the descriptor.
    if (cls_) z = g.slice_rows(z, 1, m + 1);
    return z;
}

} // namespace viewset
