#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace viewset {

using Shape = std::vector<std::size_t>;

// Dense row-major tensor of 64-bit reals. Tensors are plain values; every
// public operation checks its result for NaN/Inf and throws on violation.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor filled(Shape shape, double v);
    static Tensor from_rows(const std::vector<std::vector<double>>& rows);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const;

    // Rank-2 accessors.
    std::size_t rows() const;
    std::size_t cols() const;
    double& at(std::size_t i, std::size_t j);
    double at(std::size_t i, std::size_t j) const;
    std::span<double> row(std::size_t i);
    std::span<const double> row(std::size_t i) const;

    // Rank-3 (channels x height x width) accessors.
    double& at3(std::size_t c, std::size_t y, std::size_t x);
    double at3(std::size_t c, std::size_t y, std::size_t x) const;

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    double scalar_value() const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    void ensure_finite(const char* what) const;
    void fill(double v);

    std::string shape_str() const;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Sum that is bitwise insensitive to the order of its inputs: terms are
// accumulated in the IEEE total order. Used for every reduction over the view
// axis so that row permutations of the input reproduce outputs exactly.
double canonical_sum(std::span<const double> values);

// --- plain (untaped) forward operations ------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// Same product, but inner sums use canonical_sum. For row-mixing products
// whose contraction runs over the view axis.
Tensor matmul_canonical(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// a is m x n, bias has n entries; adds bias to every row.
Tensor add_row_bias(const Tensor& a, const Tensor& bias);

// Row softmax with per-row max subtraction; denominators use canonical_sum.
Tensor softmax_rows(const Tensor& x);
// Per-row normalization to zero mean / unit variance followed by the affine
// map gain * y + bias. gain and bias have one entry per column.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
double gelu_derivative(double x);

// x: C_in x H x W, kernels: C_out x C_in x k x k (cross-correlation), bias
// has C_out entries. Output C_out x H' x W' with H' = (H + 2p - k)/s + 1.
Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias,
              std::size_t stride, std::size_t pad);
// Windowed max with -inf padding; same geometry rule as conv2d. Requires
// pad < k so every window sees at least one real cell. If idx is non-null it
// receives the flat input index of each window's max (first-max tie break).
Tensor max_pool2d(const Tensor& x, std::size_t k, std::size_t stride, std::size_t pad,
                  std::vector<std::size_t>* idx = nullptr);

// Output geometry of a conv/pool window pass.
std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad);

} // namespace viewset
