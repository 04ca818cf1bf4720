#include <cmath>

#include "doctest.h"
#include "pae/autodiff.hpp"
#include "pae/rng.hpp"
#include "support/gradcheck.hpp"

using namespace pae;
using namespace pae::ad;
using pae::testsupport::gradcheck;

namespace {

Tensor randn(std::vector<int64_t> shape, uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * scale;
    return t;
}

}  // namespace

TEST_CASE("forward values of basic ops") {
    auto a = constant(Tensor::from({1.0, 2.0, 3.0}));
    auto b = constant(Tensor::from({4.0, 5.0, 6.0}));
    CHECK(add(a, b)->val[1] == 7.0);
    CHECK(sub(a, b)->val[0] == -3.0);
    CHECK(mul(a, b)->val[2] == 18.0);
    CHECK(div(b, a)->val[1] == 2.5);
    CHECK(sum(a)->val[0] == 6.0);
    CHECK(mean(b)->val[0] == 5.0);
}

TEST_CASE("matmul forward against hand computation") {
    auto a = constant(Tensor({2, 2}, {1, 2, 3, 4}));
    auto b = constant(Tensor({2, 2}, {5, 6, 7, 8}));
    auto c = matmul(a, b);
    CHECK(c->val.at(0, 0) == 19.0);
    CHECK(c->val.at(0, 1) == 22.0);
    CHECK(c->val.at(1, 0) == 43.0);
    CHECK(c->val.at(1, 1) == 50.0);
}

TEST_CASE("gradients of elementwise chains match finite differences") {
    auto res = gradcheck(
        [](const std::vector<Var>& in) {
            auto x = in[0], y = in[1];
            auto z = mul(add(x, y), tanh_(sub(x, scale(y, 0.5))));
            z = add(z, gelu(x));
            z = add(z, relu(sub(y, x)));
            return mean(square(z));
        },
        {randn({3, 4}, 1), randn({3, 4}, 2)});
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("gradients of matmul / transpose / slices / concat") {
    auto res = gradcheck(
        [](const std::vector<Var>& in) {
            auto a = in[0], b = in[1];
            auto c = matmul(a, b);                      // [3x3]
            auto d = matmul(transpose(c), c);           // [3x3]
            auto e = concat_cols({slice_cols(d, 0, 2), slice_rows(d, 0, 3)});
            return mean(mul(e, e));
        },
        {randn({3, 4}, 3), randn({4, 3}, 4)});
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("gradients of exp/log/sqrt/abs/div") {
    auto x0 = randn({2, 5}, 5);
    for (int64_t i = 0; i < x0.numel(); ++i) x0[i] = std::fabs(x0[i]) + 0.5;
    auto res = gradcheck(
        [](const std::vector<Var>& in) {
            auto x = in[0];
            auto y = add(exp_(log_(sqrt_(x))), abs_(add_scalar(x, -1.0)));
            return sum(div(y, add_scalar(x, 1.0)));
        },
        {x0});
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("gradients of reductions and broadcasts") {
    auto res = gradcheck(
        [](const std::vector<Var>& in) {
            auto x = in[0];
            auto v = in[1];
            auto n = in[2];
            auto y = add_rowvec(mul_rowvec(x, v), v);
            y = mul_colvec(add_colvec(y, n), n);
            auto cm = mean_rows(y);        // [C]
            auto rs = sum_rows(square(y));
            return add(mean(cm), scale(mean(rs), 0.25));
        },
        {randn({4, 3}, 6), randn({3}, 7), randn({4}, 8)});
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("gradients of softmax, layernorm, rms and l2 normalizations") {
    auto res = gradcheck(
        [](const std::vector<Var>& in) {
            auto x = in[0];
            auto a = softmax_rows(x);
            auto b = layernorm_rows(x, 1e-6);
            auto c = rms_normalize_rows(x, 1e-6);
            auto d = l2_normalize_rows(x, 1e-12);
            auto e = rms_normalize_all(x, 1e-6);
            return mean(add(add(mul(a, b), mul(c, d)), square(e)));
        },
        {randn({3, 6}, 9)});
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("rms_normalize_rows puts rows on the unit-mean-square shell") {
    auto x = constant(Tensor({1, 2}, {3.0, 4.0}));
    auto y = rms_normalize_rows(x, 0.0);
    CHECK(y->val[0] == doctest::Approx(3.0 / std::sqrt(12.5)).epsilon(1e-12));
    CHECK(y->val[1] == doctest::Approx(4.0 / std::sqrt(12.5)).epsilon(1e-12));
    double ms = (y->val[0] * y->val[0] + y->val[1] * y->val[1]) / 2.0;
    CHECK(ms == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gradients of conv2d") {
    auto res = gradcheck(
        [](const std::vector<Var>& in) {
            auto y = conv2d(in[0], in[1], in[2], 1, 1);
            auto z = conv2d(y, in[3], in[4], 2, 0);
            return mean(square(z));
        },
        {randn({2, 5, 5}, 10), randn({3, 2, 3, 3}, 11, 0.4), randn({3}, 12),
         randn({2, 3, 2, 2}, 13, 0.4), randn({2}, 14)});
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("gradients of gather and index shuffles") {
    auto res = gradcheck(
        [](const std::vector<Var>& in) {
            auto table = in[0];
            auto g = gather_rows(table, {2, 0, 2, 1});
            auto shuffled = index_gather(g, {7, 6, 5, 4, 3, 2, 1, 0}, {4, 2});
            return sum(square(shuffled));
        },
        {randn({3, 2}, 15)});
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("stop_gradient blocks flow exactly") {
    Tensor x0 = randn({2, 2}, 16);
    auto x = leaf(x0, true);
    auto through = mean(square(x));
    auto blocked = mean(mul(stop_gradient(x), x));
    auto root = add(through, blocked);
    backward(root);
    REQUIRE(x->has_grad);
    // d/dx [mean(x^2) + mean(sg(x) * x)] = 2x/n + sg(x)/n, with no second
    // term contribution through sg.
    for (int64_t i = 0; i < 4; ++i) {
        CHECK(x->grad[i] == doctest::Approx(2.0 * x0[i] / 4.0 + x0[i] / 4.0).epsilon(1e-12));
    }

    auto pure = mean(square(stop_gradient(x)));
    CHECK(!pure->requires_grad);
}

TEST_CASE("backward accumulates across reuse of a node") {
    auto x = leaf(Tensor::from({2.0}), true);
    auto y = add(mul(x, x), scale(x, 3.0));  // x^2 + 3x -> dy/dx = 2x + 3 = 7
    backward(sum(y));
    CHECK(x->grad[0] == doctest::Approx(7.0));
}

TEST_CASE("backward rejects non-scalar roots") {
    auto x = leaf(randn({2, 2}, 17), true);
    CHECK_THROWS_AS(backward(add(x, x)), ConfigError);
}
