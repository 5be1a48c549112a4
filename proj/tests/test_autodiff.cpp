#include <doctest.h>

#include <cmath>

#include "framecast/autodiff.hpp"
#include "test_util.hpp"

using namespace framecast;
using testutil::check_gradients;
using testutil::random_tensor;

namespace {

// Naive direct convolution, the oracle for the im2col path.
Tensor conv_reference(const Tensor& x, const Tensor& k, const Tensor& b, int stride, int pad) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int f = k.dim(0), ks = k.dim(2);
    const int oh = ad::conv_out_size(h, ks, stride, pad);
    const int ow = ad::conv_out_size(w, ks, stride, pad);
    Tensor out({n, f, oh, ow});
    for (int i = 0; i < n; ++i) {
        for (int of = 0; of < f; ++of) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double s = b[static_cast<size_t>(of)];
                    for (int ci = 0; ci < c; ++ci) {
                        for (int ky = 0; ky < ks; ++ky) {
                            for (int kx = 0; kx < ks; ++kx) {
                                const int sy = oy * stride - pad + ky;
                                const int sx = ox * stride - pad + kx;
                                if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                                s += x.at(i, ci, sy, sx) * k.at(of, ci, ky, kx);
                            }
                        }
                    }
                    out.at(i, of, oy, ox) = s;
                }
            }
        }
    }
    return out;
}

}  // namespace

TEST_CASE("elementwise ops: values") {
    ad::Tape t;
    ad::Var x = t.constant(Tensor({1, 4}, {-2.0, 0.0, 0.5, 3.0}));
    CHECK(t.value(ad::sigmoid(x))[1] == doctest::Approx(0.5));
    CHECK(t.value(ad::leaky_relu(x, 0.1))[0] == doctest::Approx(-0.2));
    CHECK(t.value(ad::leaky_relu(x, 0.1))[3] == doctest::Approx(3.0));
    CHECK(t.value(ad::abs_(x))[0] == doctest::Approx(2.0));
    CHECK(t.value(ad::affine(x, 2.0, 1.0))[2] == doctest::Approx(2.0));
    CHECK(t.value(ad::tanh_(x))[3] == doctest::Approx(std::tanh(3.0)));
    // eps clamp keeps the log finite at 0
    CHECK(t.value(ad::log_clamped(t.constant(Tensor::scalar(0.0))))[0] ==
          doctest::Approx(std::log(1e-7)));
}

TEST_CASE("gradcheck: dense composition of elementwise ops") {
    Rng rng(7);
    Param a{"a", random_tensor({3, 4}, rng)};
    Param b{"b", random_tensor({3, 4}, rng)};
    auto build = [&](ad::Tape& t) {
        ad::Var av = t.param(a);
        ad::Var bv = t.param(b);
        ad::Var y = ad::mul(ad::sigmoid(av), ad::tanh_(bv));
        y = ad::add(y, ad::leaky_relu(ad::sub(av, bv), 0.2));
        y = ad::add(y, ad::abs_(ad::affine(av, 0.7, 0.05)));
        return ad::mean(ad::mul(y, y));
    };
    auto r = check_gradients(std::vector<Param*>{&a, &b}, build);
    CHECK(r.max_rel < 1e-6);
}

TEST_CASE("gradcheck: linear / matmul / reductions / norms") {
    Rng rng(11);
    Param x{"x", random_tensor({4, 3}, rng)};
    Param w{"w", random_tensor({3, 5}, rng)};
    Param b{"b", random_tensor({1, 5}, rng)};
    auto build = [&](ad::Tape& t) {
        ad::Var y = ad::linear(t.param(x), t.param(w), t.param(b));
        ad::Var n = ad::row_norm(y);
        ad::Var s = ad::sum(ad::matmul(t.param(x), t.param(w)));
        return ad::add(ad::mean(n), ad::affine(s, 0.1, 0.0));
    };
    auto r = check_gradients(std::vector<Param*>{&x, &w, &b}, build);
    CHECK(r.max_rel < 1e-6);
}

TEST_CASE("gradcheck: shape ops") {
    Rng rng(13);
    Param x{"x", random_tensor({4, 6}, rng)};
    Param y{"y", random_tensor({4, 2}, rng)};
    auto build = [&](ad::Tape& t) {
        ad::Var xv = t.param(x);
        ad::Var cat = ad::concat_cols(ad::slice_cols(xv, 1, 3), t.param(y));
        ad::Var g = ad::gather_rows(cat, {0, 2, 2, 3});
        std::vector<ad::Var> parts = {g, ad::gather_rows(cat, {1})};
        ad::Var stacked = ad::concat_rows(parts);
        return ad::mean(ad::mul(stacked, stacked));
    };
    auto r = check_gradients(std::vector<Param*>{&x, &y}, build);
    CHECK(r.max_rel < 1e-6);
}

TEST_CASE("conv2d forward matches the direct convolution oracle") {
    Rng rng(17);
    const Tensor x = random_tensor({2, 3, 7, 6}, rng);
    const Tensor k = random_tensor({4, 3, 3, 3}, rng);
    const Tensor b = random_tensor({4}, rng);
    for (int stride : {1, 2}) {
        ad::Tape t;
        ad::Var y = ad::conv2d(t.constant(x), t.constant(k), t.constant(b), stride, 1);
        const Tensor ref = conv_reference(x, k, b, stride, 1);
        REQUIRE(t.value(y).shape() == ref.shape());
        for (size_t i = 0; i < ref.size(); ++i) {
            CHECK(t.value(y)[i] == doctest::Approx(ref[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("conv2d_transpose is the adjoint of conv2d") {
    // <conv(x), y> == <x, convT(y)> for matching geometry.
    Rng rng(19);
    const int stride = 2, pad = 1;
    const Tensor x = random_tensor({1, 2, 9, 8}, rng);
    const Tensor k = random_tensor({3, 2, 3, 3}, rng);  // conv: 2 -> 3 channels
    const int oh = ad::conv_out_size(9, 3, stride, pad), ow = ad::conv_out_size(8, 3, stride, pad);
    const Tensor y = random_tensor({1, 3, oh, ow}, rng);
    const Tensor zero_f = Tensor::zeros({3});
    const Tensor zero_c = Tensor::zeros({2});

    ad::Tape t;
    ad::Var conv = ad::conv2d(t.constant(x), t.constant(k), t.constant(zero_f), stride, pad);
    // convT kernel layout (C_out_of_conv, C_in_of_conv, K, K) = same tensor
    ad::Var convT =
        ad::conv2d_transpose(t.constant(y), t.constant(k), t.constant(zero_c), stride, pad, 9, 8);
    double lhs = 0.0, rhs = 0.0;
    for (size_t i = 0; i < y.size(); ++i) lhs += t.value(conv)[i] * y[i];
    for (size_t i = 0; i < x.size(); ++i) rhs += t.value(convT)[i] * x[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("gradcheck: conv2d and conv2d_transpose") {
    Rng rng(23);
    Param x{"x", random_tensor({2, 2, 5, 5}, rng)};
    Param k{"k", random_tensor({3, 2, 3, 3}, rng)};
    Param b{"b", random_tensor({3}, rng)};
    auto build = [&](ad::Tape& t) {
        ad::Var y = ad::conv2d(t.param(x), t.param(k), t.param(b), 2, 1);
        return ad::mean(ad::mul(y, y));
    };
    auto r = check_gradients(std::vector<Param*>{&x, &k, &b}, build);
    CHECK(r.max_rel < 1e-5);

    Param xt{"xt", random_tensor({2, 3, 3, 3}, rng)};
    Param kt{"kt", random_tensor({3, 2, 3, 3}, rng)};
    Param bt{"bt", random_tensor({2}, rng)};
    auto build_t = [&](ad::Tape& t) {
        ad::Var y = ad::conv2d_transpose(t.param(xt), t.param(kt), t.param(bt), 2, 1, 5, 6);
        return ad::mean(ad::mul(y, y));
    };
    auto rt = check_gradients(std::vector<Param*>{&xt, &kt, &bt}, build_t);
    CHECK(rt.max_rel < 1e-5);
}

TEST_CASE("gradcheck: instance_norm, including 1x1 spatial maps") {
    Rng rng(29);
    Param x{"x", random_tensor({2, 3, 4, 4}, rng)};
    Param g{"g", random_tensor({3}, rng, 0.5, 1.5)};
    Param b{"b", random_tensor({3}, rng)};
    auto build = [&](ad::Tape& t) {
        ad::Var y = ad::instance_norm(t.param(x), t.param(g), t.param(b));
        return ad::mean(ad::mul(y, y));
    };
    // near-zero gradients leave cancellation noise in the finite differences
    auto r = check_gradients(std::vector<Param*>{&x, &g, &b}, build);
    CHECK(r.max_rel < 1e-4);

    Param x1{"x1", random_tensor({2, 3, 1, 1}, rng)};
    auto build1 = [&](ad::Tape& t) {
        ad::Var y = ad::instance_norm(t.param(x1), t.param(g), t.param(b));
        return ad::mean(ad::mul(y, y));
    };
    auto r1 = check_gradients(std::vector<Param*>{&x1, &g, &b}, build1);
    CHECK(r1.max_rel < 1e-5);
}

TEST_CASE("stop_gradient blocks the backward pass") {
    Param x{"x", Tensor({1, 2}, {3.0, -1.0})};
    ad::Tape t;
    ad::Var v = t.param(x);
    ad::Var loss = ad::mean(ad::mul(ad::stop_gradient(v), v));
    t.backward(loss);
    const Tensor g = t.grad_of(x);
    // d/dv mean(sg(v)*v) = sg(v)/2
    CHECK(g[0] == doctest::Approx(1.5));
    CHECK(g[1] == doctest::Approx(-0.5));
}

TEST_CASE("parameter reuse accumulates gradients through one node") {
    Param x{"x", Tensor({1, 1}, {2.0})};
    ad::Tape t;
    ad::Var a = t.param(x);
    ad::Var b = t.param(x);
    CHECK(a.id() == b.id());
    ad::Var loss = ad::sum(ad::mul(a, b));  // x^2
    t.backward(loss);
    CHECK(t.grad_of(x)[0] == doctest::Approx(4.0));
}

TEST_CASE("backward rejects non-scalar roots and foreign tapes") {
    ad::Tape t;
    ad::Var v = t.constant(Tensor({1, 2}, {1.0, 2.0}));
    CHECK_THROWS_AS(t.backward(v), std::logic_error);
    ad::Tape other;
    ad::Var s = other.constant(Tensor::scalar(1.0));
    CHECK_THROWS_AS(t.backward(s), std::logic_error);
}
