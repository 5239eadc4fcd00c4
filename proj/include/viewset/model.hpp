#pragma once

#include "viewset/encoder.hpp"
#include "viewset/graph.hpp"
#include "viewset/head.hpp"
#include "viewset/initializer.hpp"

#include <cstddef>
#include <utility>
#include <vector>

namespace viewset {

struct ModelConfig {
    InitializerConfig initializer;
    EncoderConfig encoder;
    HeadConfig head;

    void validate() const;
};

// Full pipeline: per-view initializer -> set encoder -> transition/decoder.
// A view set is an M x W tensor of rows; in image mode each row is a
// flattened channels x size x size view.
class Model {
public:
    Model(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    Initializer& initializer() { return init_; }
    Encoder& encoder() { return enc_; }
    Head& head() { return head_; }

    std::vector<Parameter*> params();
    std::vector<std::pair<std::string, Tensor*>> state();
    std::size_t param_count() const;

    // Rows -> Z0 on the tape (dispatches on initializer kind).
    Val embed(Graph& g, const Tensor& views);
    // Rows -> logits (1 x K).
    Val logits(Graph& g, const Tensor& views, Rng* dropout_rng = nullptr,
               AttentionTrace* trace = nullptr);

    // Eval mode: class distribution (1 x K, sums to 1) and predicted class
    // (lowest-index argmax).
    Tensor predict_distribution(const Tensor& views, AttentionTrace* trace = nullptr);
    std::size_t predict_class(const Tensor& views);

private:
    ModelConfig cfg_;
    Rng init_rng_; // declared before the components so they can consume it in order
    Initializer init_;
    Encoder enc_;
    Head head_;
};

// Reshapes one flattened view row back into channels x size x size.
Tensor unflatten_view(std::span<const double> row, std::size_t channels, std::size_t size);

} // namespace viewset
