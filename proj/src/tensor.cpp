#include "viewset/tensor.hpp"

#include "viewset/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>

namespace viewset {

namespace {

std::size_t shape_product(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) {
        if (e == 0) throw DimensionError("tensor shape has a zero extent");
        n *= e;
    }
    return n;
}

} // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size())
        throw DimensionError("tensor data size " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str());
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::filled(Shape shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw DimensionError("from_rows: no rows");
    std::size_t n = rows[0].size();
    Tensor t({rows.size(), n});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != n) throw DimensionError("from_rows: ragged rows");
        std::copy(rows[i].begin(), rows[i].end(), t.row(i).begin());
    }
    return t;
}

std::size_t Tensor::extent(std::size_t axis) const {
    if (axis >= shape_.size()) throw DimensionError("extent: axis out of range");
    return shape_[axis];
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw DimensionError("rows(): tensor is not rank 2, shape " + shape_str());
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw DimensionError("cols(): tensor is not rank 2, shape " + shape_str());
    return shape_[1];
}

double& Tensor::at(std::size_t i, std::size_t j) {
    return data_[i * cols() + j];
}

double Tensor::at(std::size_t i, std::size_t j) const {
    return data_[i * cols() + j];
}

std::span<double> Tensor::row(std::size_t i) {
    std::size_t c = cols();
    if (i >= rows()) throw DimensionError("row index out of range");
    return {data_.data() + i * c, c};
}

std::span<const double> Tensor::row(std::size_t i) const {
    std::size_t c = cols();
    if (i >= rows()) throw DimensionError("row index out of range");
    return {data_.data() + i * c, c};
}

double& Tensor::at3(std::size_t c, std::size_t y, std::size_t x) {
    if (rank() != 3) throw DimensionError("at3: tensor is not rank 3, shape " + shape_str());
    return data_[(c * shape_[1] + y) * shape_[2] + x];
}

double Tensor::at3(std::size_t c, std::size_t y, std::size_t x) const {
    if (rank() != 3) throw DimensionError("at3: tensor is not rank 3, shape " + shape_str());
    return data_[(c * shape_[1] + y) * shape_[2] + x];
}

double Tensor::scalar_value() const {
    if (data_.size() != 1)
        throw DimensionError("scalar_value: tensor has " + std::to_string(data_.size()) + " entries");
    return data_[0];
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::ensure_finite(const char* what) const {
    if (!all_finite())
        throw ContractError(std::string(what) + " produced a non-finite value");
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Tensor::shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape_[i]);
    }
    s += "]";
    return s;
}

namespace {

// Maps a double to a key whose unsigned order matches the IEEE total order.
std::uint64_t total_order_key(double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    if (bits & 0x8000000000000000ull) return ~bits;
    return bits | 0x8000000000000000ull;
}

} // namespace

double canonical_sum(std::span<const double> values) {
    if (values.empty()) return 0.0;
    if (values.size() == 1) return values[0];
    if (values.size() == 2) {
        // Addition is commutative bit-for-bit; no need to sort a pair.
        return values[0] + values[1];
    }
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end(),
              [](double a, double b) { return total_order_key(a) < total_order_key(b); });
    double acc = 0.0;
    for (double v : sorted) acc += v;
    return acc;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw DimensionError("matmul: inner dimensions disagree, " + a.shape_str() + " vs " +
                             b.shape_str());
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            double av = a.at(i, p);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out.at(i, j) += av * b.at(p, j);
        }
    out.ensure_finite("matmul");
    return out;
}

Tensor matmul_canonical(const Tensor& a, const Tensor& b) {
    std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw DimensionError("matmul_canonical: inner dimensions disagree, " + a.shape_str() +
                             " vs " + b.shape_str());
    Tensor out({m, n});
    std::vector<double> terms(k);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t p = 0; p < k; ++p) terms[p] = a.at(i, p) * b.at(p, j);
            out.at(i, j) = canonical_sum(terms);
        }
    out.ensure_finite("matmul_canonical");
    return out;
}

Tensor transpose(const Tensor& a) {
    Tensor out({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw DimensionError("add: shape mismatch, " + a.shape_str() + " vs " + b.shape_str());
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    out.ensure_finite("add");
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    out.ensure_finite("scale");
    return out;
}

Tensor add_row_bias(const Tensor& a, const Tensor& bias) {
    if (bias.size() != a.cols())
        throw DimensionError("add_row_bias: bias size " + bias.shape_str() +
                             " does not match columns of " + a.shape_str());
    Tensor out = a;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) += bias[j];
    out.ensure_finite("add_row_bias");
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    Tensor out({x.rows(), x.cols()});
    std::vector<double> ex(x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto r = x.row(i);
        double mx = *std::max_element(r.begin(), r.end());
        for (std::size_t j = 0; j < x.cols(); ++j) ex[j] = std::exp(r[j] - mx);
        double denom = canonical_sum(ex);
        for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) = ex[j] / denom;
    }
    out.ensure_finite("softmax_rows");
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    std::size_t n = x.cols();
    if (gain.size() != n || bias.size() != n)
        throw DimensionError("layer_norm: gain/bias size does not match columns of " +
                             x.shape_str());
    Tensor out({x.rows(), n});
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto r = x.row(i);
        double mean = 0.0;
        for (double v : r) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j)
            out.at(i, j) = gain[j] * ((r[j] - mean) * inv) + bias[j];
    }
    out.ensure_finite("layer_norm");
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, out[i]);
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = 0.5 * out[i] * (1.0 + std::erf(out[i] / std::sqrt(2.0)));
    out.ensure_finite("gelu");
    return out;
}

double gelu_derivative(double x) {
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::acos(-1.0));
    double phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
    return phi + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
}

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    if (stride == 0) throw DimensionError("window stride must be positive");
    std::size_t padded = in + 2 * pad;
    if (k == 0 || k > padded)
        throw DimensionError("window of size " + std::to_string(k) +
                             " exceeds padded extent " + std::to_string(padded));
    return (padded - k) / stride + 1;
}

Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias,
              std::size_t stride, std::size_t pad) {
    if (x.rank() != 3) throw DimensionError("conv2d: input must be rank 3, got " + x.shape_str());
    if (kernels.rank() != 4)
        throw DimensionError("conv2d: kernels must be rank 4, got " + kernels.shape_str());
    std::size_t c_in = x.extent(0), h = x.extent(1), w = x.extent(2);
    std::size_t c_out = kernels.extent(0), k = kernels.extent(2);
    if (kernels.extent(1) != c_in)
        throw DimensionError("conv2d: kernel channels " + std::to_string(kernels.extent(1)) +
                             " do not match input channels " + std::to_string(c_in));
    if (kernels.extent(3) != k) throw DimensionError("conv2d: kernels must be square");
    if (bias.size() != c_out) throw DimensionError("conv2d: bias size does not match out channels");
    std::size_t ho = conv_out_extent(h, k, stride, pad);
    std::size_t wo = conv_out_extent(w, k, stride, pad);

    Tensor out({c_out, ho, wo});
    for (std::size_t co = 0; co < c_out; ++co) {
        const double* kbase = kernels.data().data() + co * c_in * k * k;
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double acc = bias[co];
                for (std::size_t ci = 0; ci < c_in; ++ci)
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        // Signed arithmetic: the window may hang into the padding.
                        long long iy = static_cast<long long>(oy * stride + ky) -
                                       static_cast<long long>(pad);
                        if (iy < 0 || iy >= static_cast<long long>(h)) continue;
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            long long ix = static_cast<long long>(ox * stride + kx) -
                                           static_cast<long long>(pad);
                            if (ix < 0 || ix >= static_cast<long long>(w)) continue;
                            acc += x.at3(ci, static_cast<std::size_t>(iy),
                                         static_cast<std::size_t>(ix)) *
                                   kbase[(ci * k + ky) * k + kx];
                        }
                    }
                out.at3(co, oy, ox) = acc;
            }
    }
    out.ensure_finite("conv2d");
    return out;
}

Tensor max_pool2d(const Tensor& x, std::size_t k, std::size_t stride, std::size_t pad,
                  std::vector<std::size_t>* idx) {
    if (x.rank() != 3)
        throw DimensionError("max_pool2d: input must be rank 3, got " + x.shape_str());
    if (pad >= k)
        throw DimensionError("max_pool2d: padding " + std::to_string(pad) +
                             " must be smaller than window " + std::to_string(k));
    std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    std::size_t ho = conv_out_extent(h, k, stride, pad);
    std::size_t wo = conv_out_extent(w, k, stride, pad);

    Tensor out({c, ho, wo});
    if (idx) idx->assign(c * ho * wo, 0);
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_flat = 0;
                for (std::size_t ky = 0; ky < k; ++ky) {
                    long long iy =
                        static_cast<long long>(oy * stride + ky) - static_cast<long long>(pad);
                    if (iy < 0 || iy >= static_cast<long long>(h)) continue;
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        long long ix =
                            static_cast<long long>(ox * stride + kx) - static_cast<long long>(pad);
                        if (ix < 0 || ix >= static_cast<long long>(w)) continue;
                        double v = x.at3(ci, static_cast<std::size_t>(iy),
                                         static_cast<std::size_t>(ix));
                        if (v > best) {
                            best = v;
                            best_flat = (ci * h + static_cast<std::size_t>(iy)) * w +
                                        static_cast<std::size_t>(ix);
                        }
                    }
                }
                out.at3(ci, oy, ox) = best;
                if (idx) (*idx)[(ci * ho + oy) * wo + ox] = best_flat;
            }
    out.ensure_finite("max_pool2d");
    return out;
}

} // namespace viewset
