#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_util.hpp"
#include "viewset/error.hpp"
#include "viewset/rng.hpp"
#include "viewset/tensor.hpp"

#include <cmath>
#include <limits>
#include <vector>

using namespace viewset;
using namespace viewset::testutil;

// --- independent oracles, written before the implementations -----------------

namespace {

// Triple loop in j-i-p order (implementation iterates i-p-j) with long double
// accumulation.
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
    Tensor out({a.rows(), b.cols()});
    for (std::size_t j = 0; j < b.cols(); ++j)
        for (std::size_t i = 0; i < a.rows(); ++i) {
            long double acc = 0.0L;
            for (std::size_t p = 0; p < a.cols(); ++p)
                acc += static_cast<long double>(a.at(i, p)) * static_cast<long double>(b.at(p, j));
            out.at(i, j) = static_cast<double>(acc);
        }
    return out;
}

// Extended-precision softmax without max subtraction tricks beyond what long
// double affords.
std::vector<double> softmax_oracle(std::span<const double> row) {
    long double mx = row[0];
    for (double v : row) mx = std::max<long double>(mx, v);
    long double denom = 0.0L;
    std::vector<long double> ex(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) {
        ex[j] = expl(static_cast<long double>(row[j]) - mx);
        denom += ex[j];
    }
    std::vector<double> out(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) out[j] = static_cast<double>(ex[j] / denom);
    return out;
}

// Direct mean/variance of a row.
void mean_var_oracle(std::span<const double> row, double& mean, double& var) {
    mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
}

// Quadruple-loop convolution over an explicitly zero-padded copy.
Tensor conv2d_oracle(const Tensor& x, const Tensor& kern, const Tensor& bias,
                     std::size_t stride, std::size_t pad) {
    std::size_t c_in = x.extent(0), h = x.extent(1), w = x.extent(2);
    std::size_t c_out = kern.extent(0), k = kern.extent(2);
    Tensor padded({c_in, h + 2 * pad, w + 2 * pad});
    for (std::size_t c = 0; c < c_in; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx)
                padded.at3(c, y + pad, xx + pad) = x.at3(c, y, xx);
    std::size_t ho = (h + 2 * pad - k) / stride + 1;
    std::size_t wo = (w + 2 * pad - k) / stride + 1;
    Tensor out({c_out, ho, wo});
    for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double acc = bias[co];
                for (std::size_t ci = 0; ci < c_in; ++ci)
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx)
                            acc += padded.at3(ci, oy * stride + ky, ox * stride + kx) *
                                   kern.data()[((co * c_in + ci) * k + ky) * k + kx];
                out.at3(co, oy, ox) = acc;
            }
    return out;
}

Tensor max_pool_oracle(const Tensor& x, std::size_t k, std::size_t stride, std::size_t pad) {
    std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    double ninf = -std::numeric_limits<double>::infinity();
    Tensor padded({c, h + 2 * pad, w + 2 * pad});
    padded.fill(ninf);
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx)
                padded.at3(ci, y + pad, xx + pad) = x.at3(ci, y, xx);
    std::size_t ho = (h + 2 * pad - k) / stride + 1;
    std::size_t wo = (w + 2 * pad - k) / stride + 1;
    Tensor out({c, ho, wo});
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double best = ninf;
                for (std::size_t ky = 0; ky < k; ++ky)
                    for (std::size_t kx = 0; kx < k; ++kx)
                        best = std::max(best, padded.at3(ci, oy * stride + ky, ox * stride + kx));
                out.at3(ci, oy, ox) = best;
            }
    return out;
}

} // namespace

TEST_CASE("tensor shape contract") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), DimensionError);
    CHECK_THROWS_AS(Tensor({0, 3}), DimensionError);
    CHECK_THROWS_AS(t.at3(0, 0, 0), DimensionError);
}

TEST_CASE("matmul identity and projector") {
    Tensor eye = Tensor::from_rows({{1, 0}, {0, 1}});
    Tensor m = Tensor::from_rows({{1, 2}, {3, 4}});
    CHECK(bitwise_equal(matmul(eye, m), m));

    Tensor proj = Tensor::from_rows({{1, 0}, {0, 0}});
    Tensor b = Tensor::from_rows({{5, 6}, {7, 8}});
    Tensor expect = Tensor::from_rows({{5, 6}, {0, 0}});
    CHECK(bitwise_equal(matmul(proj, b), expect));
}

TEST_CASE("matmul vs brute-force oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = random_tensor({3, 4}, rng, -2, 2);
        Tensor b = random_tensor({4, 2}, rng, -2, 2);
        CHECK(max_abs_diff(matmul(a, b), matmul_oracle(a, b)) < 1e-12);
        CHECK(max_abs_diff(matmul_canonical(a, b), matmul_oracle(a, b)) < 1e-12);
    }
}

TEST_CASE("matmul associativity within 1e-9 relative") {
    Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor a = random_tensor({4, 5}, rng);
        Tensor b = random_tensor({5, 3}, rng);
        Tensor c = random_tensor({3, 6}, rng);
        Tensor left = matmul(matmul(a, b), c);
        Tensor right = matmul(a, matmul(b, c));
        for (std::size_t i = 0; i < left.size(); ++i)
            CHECK(rel_err(left[i], right[i]) < 1e-9);
    }
}

TEST_CASE("matmul shape mismatch") {
    Tensor a({2, 3}), b({4, 2});
    CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("non-finite results are rejected") {
    Tensor big = Tensor::filled({1, 2}, std::numeric_limits<double>::max());
    CHECK_THROWS_AS(add(big, big), ContractError);
    CHECK_THROWS_AS(scale(big, 2.0), ContractError);
}

TEST_CASE("canonical_sum is bitwise permutation invariant") {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t n = 3 + rng.index(30);
        std::vector<double> vals(n);
        for (auto& v : vals) v = rng.uniform(-1e6, 1e6) * std::pow(10.0, rng.uniform(-8, 8));
        double base = canonical_sum(vals);
        for (int p = 0; p < 8; ++p) {
            auto perm = rng.permutation(n);
            std::vector<double> shuffled(n);
            for (std::size_t i = 0; i < n; ++i) shuffled[i] = vals[perm[i]];
            double again = canonical_sum(shuffled);
            CHECK(base == again); // bitwise
        }
        // Accuracy against extended precision.
        long double acc = 0.0L;
        for (double v : vals) acc += v;
        CHECK(rel_err(base, static_cast<double>(acc)) < 1e-12);
    }
}

TEST_CASE("softmax closed forms") {
    Tensor u = softmax_rows(Tensor::from_rows({{0, 0}}));
    CHECK(u.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(u.at(0, 1) == doctest::Approx(0.5).epsilon(1e-15));

    Tensor l = softmax_rows(Tensor::from_rows({{std::log(2.0), 0.0}}));
    CHECK(l.at(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(l.at(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("softmax survives extreme logits") {
    Tensor s = softmax_rows(Tensor::from_rows({{1000.0, 0.0}}));
    auto oracle = softmax_oracle(std::vector<double>{1000.0, 0.0});
    CHECK(s.at(0, 0) == doctest::Approx(oracle[0]).epsilon(1e-15));
    CHECK(s.at(0, 1) == doctest::Approx(oracle[1]).epsilon(1e-15));
    CHECK(s.at(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to one within 1e-12") {
    Rng rng(14);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t m = 1 + rng.index(8), n = 1 + rng.index(12);
        Tensor x = random_tensor({m, n}, rng, -50, 50);
        Tensor s = softmax_rows(x);
        for (std::size_t i = 0; i < m; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                CHECK(s.at(i, j) >= 0.0);
                sum += s.at(i, j);
            }
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
        // Oracle agreement per row.
        for (std::size_t i = 0; i < m; ++i) {
            auto o = softmax_oracle(x.row(i));
            for (std::size_t j = 0; j < n; ++j)
                CHECK(rel_err(s.at(i, j), o[j]) < 1e-13);
        }
    }
}

TEST_CASE("layer_norm closed forms") {
    Tensor gain3 = Tensor::filled({3}, 1.0), bias3 = Tensor::zeros({3});
    Tensor c = layer_norm(Tensor::from_rows({{1, 1, 1}}), gain3, bias3, 1e-5);
    for (std::size_t j = 0; j < 3; ++j) CHECK(c.at(0, j) == doctest::Approx(0.0).epsilon(1e-15));

    Tensor gain2 = Tensor::filled({2}, 1.0), bias2 = Tensor::zeros({2});
    Tensor n = layer_norm(Tensor::from_rows({{1, -1}}), gain2, bias2, 1e-15);
    CHECK(n.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(n.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("layer_norm normalizes rows: mean<=1e-10, var within 1e-8 of 1") {
    Rng rng(15);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t n = 2 + rng.index(30);
        Tensor x = random_tensor({3, n}, rng, -10, 10);
        Tensor gain = Tensor::filled({n}, 1.0), bias = Tensor::zeros({n});
        // eps far below the variance floor so the unit-variance property is
        // observable at the stated tolerance.
        Tensor y = layer_norm(x, gain, bias, 1e-12);
        for (std::size_t i = 0; i < 3; ++i) {
            double mean, var;
            mean_var_oracle(y.row(i), mean, var);
            CHECK(std::abs(mean) <= 1e-10);
            CHECK(std::abs(var - 1.0) <= 1e-8);
        }
    }
}

TEST_CASE("layer_norm affine map applies after normalization") {
    Tensor x = Tensor::from_rows({{2, 4}});
    Tensor gain = Tensor::from_rows({{3, 5}});
    Tensor bias = Tensor::from_rows({{10, 20}});
    Tensor y = layer_norm(x, Tensor({2}, {3, 5}), Tensor({2}, {10, 20}), 1e-15);
    // normalized row is [-1, 1]
    CHECK(y.at(0, 0) == doctest::Approx(10.0 - 3.0).epsilon(1e-12));
    CHECK(y.at(0, 1) == doctest::Approx(20.0 + 5.0).epsilon(1e-12));
    (void)gain;
    (void)bias;
}

TEST_CASE("relu and gelu pointwise values") {
    Tensor x = Tensor::from_rows({{-2, 0, 3}});
    Tensor r = relu(x);
    CHECK(r.at(0, 0) == 0.0);
    CHECK(r.at(0, 1) == 0.0);
    CHECK(r.at(0, 2) == 3.0);

    Tensor g = gelu(x);
    CHECK(g.at(0, 1) == 0.0);
    // gelu(x) = x * Phi(x) with the exact Gaussian CDF.
    double phi3 = 0.5 * (1.0 + std::erf(3.0 / std::sqrt(2.0)));
    CHECK(g.at(0, 2) == doctest::Approx(3.0 * phi3).epsilon(1e-15));
    // gelu(x) - gelu(-x) = x * (Phi(x) + Phi(-x)) = x.
    CHECK(g.at(0, 2) - gelu(Tensor::from_rows({{-3.0}})).at(0, 0) ==
          doctest::Approx(3.0).epsilon(1e-12));

    // Derivative against central differences.
    for (double v : {-1.5, -0.2, 0.7, 2.0}) {
        double h = 1e-6;
        double num = (gelu(Tensor::scalar(v + h)).scalar_value() -
                      gelu(Tensor::scalar(v - h)).scalar_value()) /
                     (2 * h);
        CHECK(rel_err(gelu_derivative(v), num) < 1e-8);
    }
}

TEST_CASE("conv2d hand example") {
    Tensor x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor k({1, 1, 2, 2}, {1, 0, 0, 1});
    Tensor bias({1}, {0.5});
    Tensor y = conv2d(x, k, bias, 1, 0);
    CHECK(y.shape() == Shape{1, 2, 2});
    CHECK(y.at3(0, 0, 0) == 6.5);
    CHECK(y.at3(0, 0, 1) == 8.5);
    CHECK(y.at3(0, 1, 0) == 12.5);
    CHECK(y.at3(0, 1, 1) == 14.5);
}

TEST_CASE("conv2d vs quadruple-loop oracle") {
    Rng rng(16);
    for (int trial = 0; trial < 10; ++trial) {
        std::size_t c_in = 1 + rng.index(3), c_out = 1 + rng.index(3);
        std::size_t h = 4 + rng.index(5), w = 4 + rng.index(5);
        std::size_t k = 2 + rng.index(2), stride = 1 + rng.index(2), pad = rng.index(2);
        Tensor x = random_tensor({c_in, h, w}, rng);
        Tensor kern = random_tensor({c_out, c_in, k, k}, rng);
        Tensor bias = random_tensor({c_out}, rng);
        Tensor got = conv2d(x, kern, bias, stride, pad);
        Tensor want = conv2d_oracle(x, kern, bias, stride, pad);
        CHECK(got.shape() == want.shape());
        CHECK(max_abs_diff(got, want) < 1e-12);
    }
}

TEST_CASE("conv geometry: 224 -> 112 -> 56 path") {
    CHECK(conv_out_extent(224, 7, 2, 3) == 112);
    CHECK(conv_out_extent(112, 3, 2, 1) == 56);
    CHECK_THROWS_AS(conv_out_extent(2, 5, 1, 0), DimensionError);
}

TEST_CASE("max_pool2d hand examples and oracle") {
    Tensor x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor a = max_pool2d(x, 2, 1, 0);
    CHECK(a.shape() == Shape{1, 2, 2});
    CHECK(a.at3(0, 0, 0) == 5);
    CHECK(a.at3(0, 1, 1) == 9);

    Tensor b = max_pool2d(x, 2, 2, 1);
    CHECK(b.shape() == Shape{1, 2, 2});
    CHECK(b.at3(0, 0, 0) == 1);
    CHECK(b.at3(0, 0, 1) == 3);
    CHECK(b.at3(0, 1, 0) == 7);
    CHECK(b.at3(0, 1, 1) == 9);

    CHECK_THROWS_AS(max_pool2d(x, 2, 1, 2), DimensionError);

    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        std::size_t c = 1 + rng.index(3), h = 4 + rng.index(6), w = 4 + rng.index(6);
        std::size_t k = 2 + rng.index(2), stride = 1 + rng.index(3), pad = rng.index(2);
        Tensor in = random_tensor({c, h, w}, rng);
        CHECK(max_abs_diff(max_pool2d(in, k, stride, pad), max_pool_oracle(in, k, stride, pad)) ==
              0.0);
    }
}

TEST_CASE("rng substreams are independent and deterministic") {
    Rng a = Rng::substream(42, "data");
    Rng b = Rng::substream(42, "data");
    Rng c = Rng::substream(42, "init");
    CHECK(a.next_u64() == b.next_u64());
    CHECK(a.next_u64() == b.next_u64());
    Rng a2 = Rng::substream(42, "data");
    Rng c2 = Rng::substream(42, "init");
    CHECK(a2.next_u64() != c2.next_u64());
    (void)c;
}

TEST_CASE("rng uniform01 stays in [0,1) and permutation is a bijection") {
    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
        double u = rng.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    auto p = rng.permutation(50);
    std::vector<bool> seen(50, false);
    for (auto v : p) {
        CHECK(v < 50);
        CHECK(!seen[v]);
        seen[v] = true;
    }
    CHECK_THROWS_AS(rng.index(0), InputError);
}

TEST_CASE("rng permutation is approximately uniform (chi-square)") {
    // All 6 permutations of 3 elements over 6000 draws; chi-square with 5
    // degrees of freedom, p > 0.001 critical value 20.515.
    Rng rng(123);
    std::vector<int> counts(6, 0);
    for (int i = 0; i < 6000; ++i) {
        auto p = rng.permutation(3);
        int code = static_cast<int>(p[0]) * 2 + (p[1] > p[2] ? 1 : 0);
        counts[code]++;
    }
    double chi = 0.0;
    for (int c : counts) {
        double diff = c - 1000.0;
        chi += diff * diff / 1000.0;
    }
    CHECK(chi < 20.515);
}

TEST_CASE("rng normal moments") {
    Rng rng(99);
    const int n = 200000;
    double sum = 0, sumsq = 0;
    for (int i = 0; i < n; ++i) {
        double v = rng.normal();
        sum += v;
        sumsq += v * v;
    }
    double mean = sum / n;
    double var = sumsq / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.03);
}
