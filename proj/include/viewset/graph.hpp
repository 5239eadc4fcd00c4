#pragma once

#include "viewset/rng.hpp"
#include "viewset/tensor.hpp"

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace viewset {

// A named learnable tensor with its accumulated gradient.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter(std::string n, Tensor v);
    void zero_grad();
    std::size_t size() const { return value.size(); }
};

class Graph;

// Handle to a node on a Graph's tape.
struct Val {
    std::size_t id = 0;
};

// Reverse-mode differentiation tape. Nodes are appended in evaluation order,
// so walking ids backwards is a topological order for backpropagation. One
// Graph instance covers one forward/backward pass; backward consumes the tape.
class Graph {
public:
    explicit Graph(bool grad_enabled = true);

    bool grad_enabled() const { return grad_enabled_; }
    bool training = false; // enables dropout and batch-statistic updates

    Val constant(Tensor t);
    Val param(Parameter& p);

    const Tensor& value(Val v) const;
    const Tensor& grad(Val v) const;

    // --- differentiable operations ---
    Val matmul(Val a, Val b);
    // Row-mixing product whose contraction runs over the view axis; forward
    // sums use canonical order so row permutations commute bitwise.
    Val attend(Val a, Val x);
    Val transpose(Val a);
    Val add(Val a, Val b);
    Val scale(Val a, double c);
    Val add_row_bias(Val a, Val bias);
    Val softmax_rows(Val x);
    Val layer_norm(Val x, Val gain, Val bias, double eps);
    Val relu(Val x);
    Val gelu(Val x);
    Val dropout(Val x, double rate, Rng& rng);
    Val slice_rows(Val a, std::size_t lo, std::size_t hi);
    Val slice_cols(Val a, std::size_t lo, std::size_t hi);
    Val concat_rows(const std::vector<Val>& vs);
    Val concat_cols(const std::vector<Val>& vs);
    Val reshape(Val a, Shape shape);
    // Column-wise reductions over rows (the view axis): mean uses canonical
    // summation, max routes gradient to the lowest-index maximizer.
    Val mean_rows(Val x);
    Val max_rows(Val x);
    Val sum_all(Val x);
    Val sum_squares(Val x);

    // Cross-entropy of a single-row logit tensor against a smoothed one-hot
    // target: true class gets 1 - eps, the rest share eps / (K - 1).
    Val cross_entropy_smoothed(Val logits, std::size_t label, double smoothing);

    // Image-path operations (inputs are rank-3 channels x height x width).
    Val conv2d(Val x, Val kernels, Val bias, std::size_t stride, std::size_t pad);
    Val max_pool2d(Val x, std::size_t k, std::size_t stride, std::size_t pad);
    // Normalizes each channel. In training mode statistics come from the
    // spatial extent of this input alone and running stats are updated
    // (unbiased variance, like the usual convention); in eval mode the running
    // stats are applied as a fixed affine map.
    Val batch_norm2d(Val x, Val gain, Val bias, Tensor& running_mean, Tensor& running_var,
                     double momentum, double eps);

    // Backpropagates from a scalar loss, accumulating into each reachable
    // Parameter's grad. The tape is consumed; further use raises an error.
    void backward(Val loss);

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        Parameter* bound = nullptr;
        std::function<void()> back;
    };

    Val push(Tensor value, bool requires_grad, std::function<void()> back,
             Parameter* bound = nullptr);
    Node& node(Val v);
    const Node& node(Val v) const;
    void check_open(const char* op) const;

    std::vector<Node> nodes_;
    bool grad_enabled_;
    bool consumed_ = false;
};

// Compares analytic gradients against central finite differences. `build`
// must construct a scalar loss on a fresh graph from the tensors behind
// `params`; when its argument is true it must also run backward so gradients
// accumulate into the parameters. Returns the max over all parameter
// coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|).
// The closure runs twice up front; if the two baseline losses differ bitwise
// the closure is not deterministic and a determinism error is raised.
// `post_backward`, if set, runs after analytic gradients are accumulated
// (test hook for demonstrating that a corrupted backward pass is caught).
double grad_check(const std::function<double(bool with_grad)>& build,
                  std::vector<Parameter*> params, double step,
                  const std::function<void()>& post_backward = {});

} // namespace viewset
