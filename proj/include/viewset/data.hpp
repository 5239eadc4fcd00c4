#pragma once

#include "viewset/initializer.hpp"
#include "viewset/rng.hpp"
#include "viewset/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace viewset {

enum class SyntheticMode { Feature, Pixel };

struct SyntheticSpec {
    std::size_t num_classes = 8;
    std::size_t subclasses_per_class = 2;
    std::size_t shapes_per_class = 40;
    std::size_t views_per_shape = 20;
    SyntheticMode mode = SyntheticMode::Feature;
    std::size_t feature_dim = 32;  // feature mode width F
    std::size_t image_size = 16;   // pixel mode: channels x size x size views
    std::size_t image_channels = 3;
    double margin = 5.0;      // prototype separation scale
    double noise = 1.0;       // per-view additive noise scale
    double view_angle = 0.3;  // max rotation angle of the per-view viewpoint map
    std::uint64_t seed = 0;

    void validate() const; // throws ConfigError
};

struct DatasetSplit {
    std::vector<std::size_t> train, val, test; // indices into FeatureFile::shapes

    void validate(std::size_t n_shapes) const; // partition check, throws ContractError
};

// Synthesizes a labeled multi-view dataset: one prototype per class, one
// offset per subclass, one small jitter per shape; each view is the shape
// vector moved by a random small rotation (an exactly orthogonal viewpoint
// map) plus noise. Only the multiset of views carries meaning. The sublabel
// field holds the global subclass index (class * subclasses + local).
FeatureFile generate_synthetic(const SyntheticSpec& spec);

// Uniform random sample of count views, without replacement, deterministic
// under seed. count = M returns all views in permuted order.
Tensor subset_views(const Tensor& views, std::size_t count, std::uint64_t seed);

// Stratified split by label. Ratios must be positive-or-zero and sum to 1;
// every class must land at least one shape in train.
DatasetSplit split_dataset(const FeatureFile& data, double train_ratio, double val_ratio,
                           double test_ratio, std::uint64_t seed);

// Sidecar split file: `train:`, `val:`, `test:` lines of shape ids.
void save_split(const std::string& path, const FeatureFile& data, const DatasetSplit& split);
DatasetSplit load_split(const std::string& path, const FeatureFile& data);

// Distinct labels in the file, and a label -> contiguous index check: labels
// must be exactly 0..K-1.
std::size_t count_classes(const FeatureFile& data);

} // namespace viewset
