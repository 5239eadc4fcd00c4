#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_util.hpp"
#include "viewset/error.hpp"
#include "viewset/graph.hpp"
#include "viewset/rng.hpp"

#include <cmath>
#include <functional>

using namespace viewset;
using namespace viewset::testutil;

TEST_CASE("parameter starts with zero gradient of matching shape") {
    Parameter p("w", Tensor::from_rows({{1, 2}, {3, 4}}));
    CHECK(p.grad.same_shape(p.value));
    for (std::size_t i = 0; i < p.grad.size(); ++i) CHECK(p.grad[i] == 0.0);
    p.grad[0] = 5.0;
    p.zero_grad();
    CHECK(p.grad[0] == 0.0);
}

TEST_CASE("linear case: loss = sum(W x) gives grad(W) = broadcast of x") {
    Parameter w("w", Tensor::from_rows({{0.5, -1.0, 2.0}, {1.5, 0.0, -0.5}}));
    Tensor x({3, 1}, {2.0, 3.0, 4.0});
    Graph g;
    Val loss = g.sum_all(g.matmul(g.param(w), g.constant(x)));
    g.backward(loss);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(w.grad.at(i, j) == doctest::Approx(x[j]).epsilon(1e-15));
}

TEST_CASE("quadratic case: loss = |W|^2 / 2 gives grad(W) = W") {
    Parameter w("w", Tensor::from_rows({{1.0, -2.0}, {3.0, 0.25}}));
    Graph g;
    Val loss = g.scale(g.sum_squares(g.param(w)), 0.5);
    g.backward(loss);
    for (std::size_t i = 0; i < w.value.size(); ++i)
        CHECK(w.grad[i] == doctest::Approx(w.value[i]).epsilon(1e-14));
}

TEST_CASE("backward rejects non-scalar loss and double use") {
    Parameter w("w", Tensor::from_rows({{1, 2}}));
    Graph g;
    Val v = g.param(w);
    CHECK_THROWS_AS(g.backward(v), ContractError);
    Val s = g.sum_all(v);
    g.backward(s);
    CHECK_THROWS_AS(g.backward(s), StateError);
    CHECK_THROWS_AS(g.sum_all(v), StateError);
}

TEST_CASE("backward on constants-only graph is a contract error") {
    Graph g;
    Val c = g.sum_all(g.constant(Tensor::from_rows({{1, 2}})));
    CHECK_THROWS_AS(g.backward(c), ContractError);
}

TEST_CASE("gradient-disabled graph evaluates but refuses backward") {
    Parameter w("w", Tensor::from_rows({{1, 2}}));
    Graph g(false);
    Val s = g.sum_all(g.param(w));
    CHECK(g.value(s).scalar_value() == 3.0);
    CHECK_THROWS_AS(g.backward(s), StateError);
}

TEST_CASE("parameter used twice accumulates both paths") {
    // loss = sum(W) + |W|^2 -> grad = 1 + 2W
    Parameter w("w", Tensor::from_rows({{2.0, -1.0}}));
    Graph g;
    Val p = g.param(w);
    Val loss = g.add(g.sum_all(p), g.sum_squares(p));
    g.backward(loss);
    CHECK(w.grad[0] == doctest::Approx(1.0 + 4.0).epsilon(1e-14));
    CHECK(w.grad[1] == doctest::Approx(1.0 - 2.0).epsilon(1e-14));
}

namespace {

// Wraps a loss builder into the grad_check closure shape.
std::function<double(bool)> closure(std::vector<Parameter*> params,
                                    const std::function<Val(Graph&)>& build) {
    return [params, build](bool with_grad) {
        Graph g(with_grad);
        Val loss = build(g);
        double out = g.value(loss).scalar_value();
        if (with_grad) g.backward(loss);
        return out;
    };
}

} // namespace

TEST_CASE("grad_check on a quadratic is exact to roundoff") {
    Parameter w("w", Tensor::from_rows({{1.0, -0.5, 2.0}}));
    auto f = closure({&w}, [&](Graph& g) { return g.scale(g.sum_squares(g.param(w)), 0.5); });
    double err = grad_check(f, {&w}, 1e-6);
    CHECK(err <= 1e-8);
}

TEST_CASE("grad_check detects a corrupted backward pass") {
    Parameter w("w", Tensor::from_rows({{1.0, -0.5, 2.0}}));
    auto f = closure({&w}, [&](Graph& g) { return g.scale(g.sum_squares(g.param(w)), 0.5); });
    double err = grad_check(f, {&w}, 1e-6, [&] { w.grad[1] *= 1.01; });
    CHECK(err > 1e-4);
}

TEST_CASE("grad_check flags a non-deterministic closure") {
    Parameter w("w", Tensor::from_rows({{1.0}}));
    int calls = 0;
    auto f = [&](bool) {
        calls++;
        return static_cast<double>(calls);
    };
    CHECK_THROWS_AS(grad_check(f, {&w}, 1e-6), DeterminismError);
}

TEST_CASE("every op matches central finite differences") {
    Rng rng(21);
    auto check_op = [&](const char* name, std::vector<Parameter*> params,
                        const std::function<Val(Graph&)>& build, double tol = 1e-6) {
        INFO(name);
        double err = grad_check(closure(params, build), params, 1e-5);
        CHECK(err <= tol);
    };

    Parameter a("a", random_tensor({3, 4}, rng));
    Parameter b("b", random_tensor({4, 5}, rng));
    check_op("matmul", {&a, &b},
             [&](Graph& g) { return g.sum_squares(g.matmul(g.param(a), g.param(b))); });

    Parameter sq("sq", random_tensor({4, 4}, rng));
    Parameter vx("vx", random_tensor({4, 3}, rng));
    check_op("attend", {&sq, &vx},
             [&](Graph& g) { return g.sum_squares(g.attend(g.param(sq), g.param(vx))); });

    check_op("transpose", {&a},
             [&](Graph& g) { return g.sum_squares(g.transpose(g.param(a))); });

    Parameter a2("a2", random_tensor({3, 4}, rng));
    check_op("add+scale", {&a, &a2}, [&](Graph& g) {
        return g.sum_squares(g.scale(g.add(g.param(a), g.param(a2)), 1.7));
    });

    Parameter bias("bias", random_tensor({4}, rng));
    check_op("add_row_bias", {&a, &bias}, [&](Graph& g) {
        return g.sum_squares(g.add_row_bias(g.param(a), g.param(bias)));
    });

    check_op("softmax_rows", {&a},
             [&](Graph& g) { return g.sum_squares(g.softmax_rows(g.param(a))); });

    Parameter gain("gain", random_tensor({4}, rng, 0.5, 1.5));
    Parameter lbias("lbias", random_tensor({4}, rng));
    check_op("layer_norm", {&a, &gain, &lbias}, [&](Graph& g) {
        return g.sum_squares(g.layer_norm(g.param(a), g.param(gain), g.param(lbias), 1e-5));
    });

    // Keep relu inputs away from the kink at 0.
    Parameter ra("ra", random_tensor({3, 4}, rng, 0.2, 2.0));
    check_op("relu", {&ra}, [&](Graph& g) { return g.sum_squares(g.relu(g.param(ra))); });

    check_op("gelu", {&a}, [&](Graph& g) { return g.sum_squares(g.gelu(g.param(a))); });

    check_op("slices+concats", {&a}, [&](Graph& g) {
        Val p = g.param(a);
        Val top = g.slice_rows(p, 0, 2);
        Val bot = g.slice_rows(p, 2, 3);
        Val back = g.concat_rows({top, bot});
        Val left = g.slice_cols(back, 0, 1);
        Val right = g.slice_cols(back, 1, 4);
        return g.sum_squares(g.concat_cols({left, right}));
    });

    check_op("reshape", {&a}, [&](Graph& g) {
        return g.sum_squares(g.reshape(g.param(a), {4, 3}));
    });

    check_op("mean_rows", {&a},
             [&](Graph& g) { return g.sum_squares(g.mean_rows(g.param(a))); });
    check_op("max_rows", {&a},
             [&](Graph& g) { return g.sum_squares(g.max_rows(g.param(a))); });

    Parameter logits("logits", random_tensor({1, 5}, rng, -2, 2));
    check_op("cross_entropy_smoothed", {&logits}, [&](Graph& g) {
        return g.cross_entropy_smoothed(g.param(logits), 2, 0.1);
    });
    check_op("cross_entropy_unsmoothed", {&logits}, [&](Graph& g) {
        return g.cross_entropy_smoothed(g.param(logits), 4, 0.0);
    });

    Parameter img("img", random_tensor({2, 6, 6}, rng));
    Parameter kern("kern", random_tensor({3, 2, 3, 3}, rng));
    Parameter cbias("cbias", random_tensor({3}, rng));
    check_op("conv2d", {&img, &kern, &cbias}, [&](Graph& g) {
        return g.sum_squares(g.conv2d(g.param(img), g.param(kern), g.param(cbias), 2, 1));
    });

    check_op("max_pool2d", {&img}, [&](Graph& g) {
        return g.sum_squares(g.max_pool2d(g.param(img), 2, 2, 0));
    });

    Parameter bng("bng", random_tensor({2}, rng, 0.5, 1.5));
    Parameter bnb("bnb", random_tensor({2}, rng));
    check_op("batch_norm2d training stats", {&img, &bng, &bnb}, [&](Graph& g) {
        Tensor rm({2}), rv = Tensor::filled({2}, 1.0);
        g.training = true;
        return g.sum_squares(
            g.batch_norm2d(g.param(img), g.param(bng), g.param(bnb), rm, rv, 0.1, 1e-5));
    });
    check_op("batch_norm2d running stats", {&img, &bng, &bnb}, [&](Graph& g) {
        Tensor rm = Tensor::filled({2}, 0.2);
        Tensor rv = Tensor::filled({2}, 1.3);
        return g.sum_squares(
            g.batch_norm2d(g.param(img), g.param(bng), g.param(bnb), rm, rv, 0.1, 1e-5));
    });
}

TEST_CASE("dropout: eval is identity, training masks and rescales") {
    Rng rng(22);
    Parameter w("w", random_tensor({4, 8}, rng, 0.5, 1.5));
    Graph ge;
    Rng dre = Rng::substream(1, "dropout");
    Val ve = ge.dropout(ge.param(w), 0.5, dre);
    CHECK(bitwise_equal(ge.value(ve), w.value));

    Graph gt;
    gt.training = true;
    Rng drt = Rng::substream(1, "dropout");
    Val vt = gt.dropout(gt.param(w), 0.5, drt);
    const Tensor& masked = gt.value(vt);
    int zeros = 0;
    for (std::size_t i = 0; i < masked.size(); ++i) {
        if (masked[i] == 0.0)
            zeros++;
        else
            CHECK(masked[i] == doctest::Approx(w.value[i] * 2.0).epsilon(1e-15));
    }
    CHECK(zeros > 0);
    CHECK(zeros < 32);

    CHECK_THROWS_AS(gt.dropout(vt, 1.0, drt), InputError);

    // Backward routes gradient only through kept entries.
    Graph gb;
    gb.training = true;
    Rng drb = Rng::substream(1, "dropout");
    Val pb = gb.param(w);
    Val vb = gb.dropout(pb, 0.5, drb);
    w.zero_grad();
    gb.backward(gb.sum_all(vb));
    const Tensor& maskedb = gb.value(vb);
    for (std::size_t i = 0; i < w.grad.size(); ++i) {
        if (maskedb[i] == 0.0)
            CHECK(w.grad[i] == 0.0);
        else
            CHECK(w.grad[i] == doctest::Approx(2.0).epsilon(1e-15));
    }
}

TEST_CASE("batch_norm2d updates running statistics only in training mode") {
    Rng rng(23);
    Tensor img = random_tensor({2, 4, 4}, rng, -1, 3);
    Parameter gain("g", Tensor::filled({2}, 1.0));
    Parameter bias("b", Tensor::zeros({2}));
    Tensor rm({2}), rv = Tensor::filled({2}, 1.0);

    Graph ge(false);
    ge.batch_norm2d(ge.constant(img), ge.param(gain), ge.param(bias), rm, rv, 0.1, 1e-5);
    CHECK(rm[0] == 0.0);
    CHECK(rv[0] == 1.0);

    Graph gt;
    gt.training = true;
    gt.batch_norm2d(gt.constant(img), gt.param(gain), gt.param(bias), rm, rv, 0.1, 1e-5);
    // Direct per-channel oracle.
    for (std::size_t c = 0; c < 2; ++c) {
        double mean = 0;
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 4; ++x) mean += img.at3(c, y, x);
        mean /= 16.0;
        double var = 0;
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 4; ++x) {
                double d = img.at3(c, y, x) - mean;
                var += d * d;
            }
        var /= 16.0;
        CHECK(rm[c] == doctest::Approx(0.1 * mean).epsilon(1e-12));
        CHECK(rv[c] == doctest::Approx(0.9 + 0.1 * var * 16.0 / 15.0).epsilon(1e-12));
    }
}

TEST_CASE("taped forward values are bitwise equal under view permutation") {
    // The composed pipeline used by the attention path: scores -> softmax ->
    // attend -> layer_norm; permuting input rows must permute outputs bitwise.
    Rng rng(24);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t m = 2 + rng.index(9), d = 4;
        Tensor z = random_tensor({m, d}, rng);
        Tensor wq = random_tensor({d, d}, rng), wk = random_tensor({d, d}, rng);
        Tensor gain = Tensor::filled({d}, 1.0), bias = Tensor::zeros({d});
        auto run = [&](const Tensor& in) {
            Graph g(false);
            Val zi = g.constant(in);
            Val q = g.matmul(zi, g.constant(wq));
            Val k = g.matmul(zi, g.constant(wk));
            Val scores = g.scale(g.matmul(q, g.transpose(k)), 1.0 / std::sqrt(2.0));
            Val att = g.softmax_rows(scores);
            Val mixed = g.attend(att, zi);
            Val out = g.layer_norm(mixed, g.constant(gain), g.constant(bias), 1e-5);
            return g.value(out);
        };
        Tensor base = run(z);
        auto perm = rng.permutation(m);
        Tensor permuted_out = run(permute_rows(z, perm));
        CHECK(bitwise_equal(permuted_out, permute_rows(base, perm)));
    }
}
