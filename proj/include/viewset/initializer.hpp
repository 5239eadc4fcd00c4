#pragma once

#include "viewset/graph.hpp"
#include "viewset/rng.hpp"
#include "viewset/tensor.hpp"

#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace viewset {

enum class InitializerKind { ShallowConv1, ShallowConv2, Precomputed };

InitializerKind initializer_kind_from_string(const std::string& s);
std::string to_string(InitializerKind k);

struct InitializerConfig {
    InitializerKind kind = InitializerKind::Precomputed;
    std::size_t output_dim = 512; // D
    std::size_t image_size = 224; // square views, conv paths
    std::size_t in_channels = 3;
    std::size_t feature_dim = 0; // input width F, precomputed path

    void validate() const; // throws ConfigError
};

// Per-view feature extraction: images (channels x size x size, pixels in
// [0,1]) through a shallow conv stack, or precomputed feature rows through a
// learned affine map. Row i of the output depends on view i alone.
class Initializer {
public:
    Initializer(InitializerConfig cfg, Rng& init_rng);

    const InitializerConfig& config() const { return cfg_; }
    std::vector<Parameter*> params();
    // Non-learnable state that must persist in checkpoints (the batch-norm
    // running statistics), as (key, tensor) pairs.
    std::vector<std::pair<std::string, Tensor*>> state();
    std::size_t param_count() const;
    std::size_t flat_dim() const { return flat_dim_; }

    // One image view -> one 1 x D row.
    Val forward_image(Graph& g, const Tensor& image);
    // All views at once. Images: M tensors of identical geometry.
    Val forward_images(Graph& g, const std::vector<Tensor>& images);
    // Precomputed path: rows is M x F.
    Val forward_features(Graph& g, Val rows);

private:
    InitializerConfig cfg_;
    std::size_t flat_dim_ = 0;

    std::unique_ptr<Parameter> conv1_k, conv1_b, bn1_g, bn1_b;
    std::unique_ptr<Parameter> conv2_k, conv2_b, bn2_g, bn2_b;
    Tensor bn1_rm, bn1_rv, bn2_rm, bn2_rv;
    std::unique_ptr<Parameter> fc_w, fc_b;
};

// --- feature file codec -------------------------------------------------------
// Text format: header `dim=<D> shapes=<N>`, then per shape a line
// `shape <id> label=<int> sublabel=<int> views=<M>` followed by M lines of D
// space-separated decimals. Values round-trip exactly.

struct ShapeRecord {
    long id = 0;
    int label = 0;
    int sublabel = 0;
    Tensor views; // M x dim
};

struct FeatureFile {
    std::size_t dim = 0;
    std::vector<ShapeRecord> shapes;
};

FeatureFile load_features(const std::string& path);
void save_features(const std::string& path, const FeatureFile& file);

} // namespace viewset
