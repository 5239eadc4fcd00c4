#include "viewset/model.hpp"

#include "viewset/error.hpp"

namespace viewset {

void ModelConfig::validate() const {
    initializer.validate();
    encoder.validate();
    if (initializer.output_dim != encoder.view_dim)
        throw ConfigError("model: initializer output_dim " +
                          std::to_string(initializer.output_dim) +
                          " does not match encoder view_dim " + std::to_string(encoder.view_dim));
    head.validate(encoder.view_dim);
}

namespace {

Rng make_init_stream(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    return Rng::substream(seed, "init");
}

} // namespace

Model::Model(ModelConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)),
      init_rng_(make_init_stream(cfg_, seed)),
      init_(cfg_.initializer, init_rng_),
      enc_(cfg_.encoder, init_rng_),
      head_(cfg_.head, cfg_.encoder.view_dim, init_rng_) {}

std::vector<Parameter*> Model::params() {
    std::vector<Parameter*> out = init_.params();
    for (Parameter* p : enc_.params()) out.push_back(p);
    for (Parameter* p : head_.params()) out.push_back(p);
    return out;
}

std::vector<std::pair<std::string, Tensor*>> Model::state() { return init_.state(); }

std::size_t Model::param_count() const {
    return init_.param_count() + enc_.param_count() + head_.param_count();
}

Tensor unflatten_view(std::span<const double> row, std::size_t channels, std::size_t size) {
    if (row.size() != channels * size * size)
        throw DimensionError("view row of width " + std::to_string(row.size()) +
                             " cannot be reshaped to " + std::to_string(channels) + "x" +
                             std::to_string(size) + "x" + std::to_string(size));
    return Tensor({channels, size, size}, std::vector<double>(row.begin(), row.end()));
}

Val Model::embed(Graph& g, const Tensor& views) {
    if (cfg_.initializer.kind == InitializerKind::Precomputed)
        return init_.forward_features(g, g.constant(views));
    std::vector<Tensor> images;
    images.reserve(views.rows());
    for (std::size_t i = 0; i < views.rows(); ++i)
        images.push_back(
            unflatten_view(views.row(i), cfg_.initializer.in_channels, cfg_.initializer.image_size));
    return init_.forward_images(g, images);
}

Val Model::logits(Graph& g, const Tensor& views, Rng* dropout_rng, AttentionTrace* trace) {
    Val z0 = embed(g, views);
    Val zl = enc_.forward(g, z0, dropout_rng, trace);
    return head_.forward(g, zl);
}

Tensor Model::predict_distribution(const Tensor& views, AttentionTrace* trace) {
    Graph g(false);
    Val l = logits(g, views, nullptr, trace);
    return softmax_rows(g.value(l));
}

std::size_t Model::predict_class(const Tensor& views) {
    return argmax_row(predict_distribution(views));
}

} // namespace viewset
