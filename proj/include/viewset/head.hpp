#pragma once

#include "viewset/graph.hpp"
#include "viewset/rng.hpp"
#include "viewset/tensor.hpp"

#include <cstddef>
#include <vector>

namespace viewset {

enum class TransitionKind { Max, Mean, ConcatMaxMean };

TransitionKind transition_kind_from_string(const std::string& s);
std::string to_string(TransitionKind k);

struct HeadConfig {
    TransitionKind transition_kind = TransitionKind::ConcatMaxMean;
    std::size_t descriptor_dim = 1024;
    // Affine-map widths, input first: {G, hidden..., K}. The default two-map
    // decoder is {1024, 512, K}; one- and three-map variants are supported.
    std::vector<std::size_t> decoder_layers;
    double label_smoothing = 0.1;
    std::size_t num_classes = 0;

    // view_dim is the encoder width D feeding the transition.
    void validate(std::size_t view_dim) const; // throws ConfigError
};

// Columnwise max / mean / [max ‖ mean] over the view rows; 1 x G output.
Tensor transition(const Tensor& z, TransitionKind kind);

// Plain smoothed cross entropy for evaluation loops (no tape).
double smoothed_cross_entropy(const Tensor& logits_row, std::size_t label, double smoothing);

// Lowest-index argmax of a single-row tensor.
std::size_t argmax_row(const Tensor& row);

class Head {
public:
    Head(HeadConfig cfg, std::size_t view_dim, Rng& init_rng);

    const HeadConfig& config() const { return cfg_; }
    std::vector<Parameter*> params();
    std::size_t param_count() const;

    // z is the encoder output (M x D); returns logits (1 x K).
    Val forward(Graph& g, Val z);
    // Descriptor -> logits only (affine/ReLU chain).
    Val decode(Graph& g, Val descriptor);
    // Set -> descriptor on the tape.
    Val transition_op(Graph& g, Val z);

    Val loss(Graph& g, Val logits, std::size_t label);

private:
    HeadConfig cfg_;
    std::vector<Parameter> weights_;
    std::vector<Parameter> biases_;
};

} // namespace viewset
