#include "viewset/head.hpp"

#include "viewset/encoder.hpp"
#include "viewset/error.hpp"

#include <algorithm>
#include <cmath>

namespace viewset {

TransitionKind transition_kind_from_string(const std::string& s) {
    if (s == "max") return TransitionKind::Max;
    if (s == "mean") return TransitionKind::Mean;
    if (s == "concat_max_mean") return TransitionKind::ConcatMaxMean;
    throw ConfigError("unknown transition kind: " + s);
}

std::string to_string(TransitionKind k) {
    switch (k) {
    case TransitionKind::Max: return "max";
    case TransitionKind::Mean: return "mean";
    case TransitionKind::ConcatMaxMean: return "concat_max_mean";
    }
    throw ConfigError("unknown transition kind value");
}

void HeadConfig::validate(std::size_t view_dim) const {
    std::size_t expect =
        transition_kind == TransitionKind::ConcatMaxMean ? 2 * view_dim : view_dim;
    if (descriptor_dim != expect)
        throw ConfigError("head: descriptor_dim " + std::to_string(descriptor_dim) +
                          " does not match transition output " + std::to_string(expect));
    if (label_smoothing < 0.0 || label_smoothing >= 1.0)
        throw ConfigError("head: label_smoothing must lie in [0, 1)");
    if (num_classes == 0) throw ConfigError("head: num_classes must be positive");
    if (decoder_layers.size() < 2)
        throw ConfigError("head: decoder_layers needs at least an input and an output width");
    if (decoder_layers.front() != descriptor_dim)
        throw ConfigError("head: first decoder width " + std::to_string(decoder_layers.front()) +
                          " must equal descriptor_dim " + std::to_string(descriptor_dim));
    if (decoder_layers.back() != num_classes)
        throw ConfigError("head: last decoder width must equal num_classes");
    for (std::size_t w : decoder_layers)
        if (w == 0) throw ConfigError("head: decoder widths must be positive");
}

Tensor transition(const Tensor& z, TransitionKind kind) {
    std::size_t m = z.rows(), d = z.cols();
    auto col_max = [&](Tensor& out, std::size_t off) {
        for (std::size_t j = 0; j < d; ++j) {
            double best = z.at(0, j);
            for (std::size_t i = 1; i < m; ++i) best = std::max(best, z.at(i, j));
            out.at(0, off + j) = best;
        }
    };
    auto col_mean = [&](Tensor& out, std::size_t off) {
        std::vector<double> col(m);
        for (std::size_t j = 0; j < d; ++j) {
            for (std::size_t i = 0; i < m; ++i) col[i] = z.at(i, j);
            out.at(0, off + j) = canonical_sum(col) / static_cast<double>(m);
        }
    };
    switch (kind) {
    case TransitionKind::Max: {
        Tensor out({1, d});
        col_max(out, 0);
        return out;
    }
    case TransitionKind::Mean: {
        Tensor out({1, d});
        col_mean(out, 0);
        return out;
    }
    case TransitionKind::ConcatMaxMean: {
        Tensor out({1, 2 * d});
        col_max(out, 0);
        col_mean(out, d);
        return out;
    }
    }
    throw ConfigError("unknown transition kind value");
}

double smoothed_cross_entropy(const Tensor& logits_row, std::size_t label, double smoothing) {
    if (logits_row.rows() != 1)
        throw DimensionError("smoothed_cross_entropy: logits must be one row");
    std::size_t k = logits_row.cols();
    if (label >= k) throw InputError("smoothed_cross_entropy: label out of range");
    if (smoothing < 0.0 || smoothing >= 1.0)
        throw InputError("smoothed_cross_entropy: smoothing must lie in [0, 1)");
    if (smoothing > 0.0 && k < 2)
        throw InputError("smoothed_cross_entropy: smoothing needs at least 2 classes");
    auto r = logits_row.row(0);
    double mx = *std::max_element(r.begin(), r.end());
    std::vector<double> ex(k);
    for (std::size_t j = 0; j < k; ++j) ex[j] = std::exp(r[j] - mx);
    double lse = mx + std::log(canonical_sum(ex));
    double off = smoothing > 0.0 ? smoothing / static_cast<double>(k - 1) : 0.0;
    double dot = 0.0;
    for (std::size_t j = 0; j < k; ++j) dot += (j == label ? 1.0 - smoothing : off) * r[j];
    return lse - dot;
}

std::size_t argmax_row(const Tensor& row) {
    if (row.rows() != 1) throw DimensionError("argmax_row: expected one row");
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.cols(); ++j)
        if (row.at(0, j) > row.at(0, best)) best = j;
    return best;
}

Head::Head(HeadConfig cfg, std::size_t view_dim, Rng& init_rng) : cfg_(std::move(cfg)) {
    cfg_.validate(view_dim);
    for (std::size_t i = 0; i + 1 < cfg_.decoder_layers.size(); ++i) {
        std::size_t in = cfg_.decoder_layers[i], out = cfg_.decoder_layers[i + 1];
        weights_.emplace_back("decoder.w" + std::to_string(i),
                              xavier_uniform({in, out}, in, out, init_rng));
        biases_.emplace_back("decoder.b" + std::to_string(i), Tensor::zeros({out}));
    }
}

std::vector<Parameter*> Head::params() {
    std::vector<Parameter*> out;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        out.push_back(&weights_[i]);
        out.push_back(&biases_[i]);
    }
    return out;
}

std::size_t Head::param_count() const {
    std::size_t n = 0;
    for (const auto& w : weights_) n += w.value.size();
    for (const auto& b : biases_) n += b.value.size();
    return n;
}

Val Head::transition_op(Graph& g, Val z) {
    switch (cfg_.transition_kind) {
    case TransitionKind::Max: return g.max_rows(z);
    case TransitionKind::Mean: return g.mean_rows(z);
    case TransitionKind::ConcatMaxMean: return g.concat_cols({g.max_rows(z), g.mean_rows(z)});
    }
    throw ConfigError("unknown transition kind value");
}

Val Head::decode(Graph& g, Val descriptor) {
    Val x = descriptor;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        x = g.add_row_bias(g.matmul(x, g.param(weights_[i])), g.param(biases_[i]));
        if (i + 1 < weights_.size()) x = g.relu(x);
    }
    return x;
}

Val Head::forward(Graph& g, Val z) { return decode(g, transition_op(g, z)); }

Val Head::loss(Graph& g, Val logits, std::size_t label) {
    return g.cross_entropy_smoothed(logits, label, cfg_.label_smoothing);
}

} // namespace viewset
