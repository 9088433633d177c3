#include "doctest.h"

#include <array>
#include <cmath>

#include "dcelanm/gradcheck.hpp"
#include "dcelanm/nn.hpp"

using namespace dcelanm;

namespace {

template <typename T>
Tensor<T> randu(Shape s, Rng& rng, T lo = T(-1), T hi = T(1)) {
    return Tensor<T>::uniform(std::move(s), rng, lo, hi);
}

}  // namespace

TEST_CASE("conv2d: identity kernel, shape formula, constant sum") {
    // k=1, s=1, per-channel identity weight, zero bias -> output equals input
    Rng rng(1);
    Tensor<float> x = randu<float>({2, 3, 5, 5}, rng);
    Tensor<float> w = Tensor<float>::zeros({3, 3, 1, 1});
    for (int64_t c = 0; c < 3; ++c) w[c * 3 + c] = 1.f;
    Tensor<float> b = Tensor<float>::zeros({3});
    auto y = conv2d(x, w, b, 1, 0);
    CHECK(y.shape() == x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);

    // H=W=256, k=3, s=2, p=1 -> 128
    Tensor<float> big({1, 1, 256, 256});
    Tensor<float> w3 = Tensor<float>::zeros({4, 1, 3, 3});
    Tensor<float> b3 = Tensor<float>::zeros({4});
    auto y3 = conv2d(big, w3, b3, 2, 1);
    CHECK(y3.shape() == Shape{1, 4, 128, 128});

    // all-ones 3x3 kernel, p=0, constant input c -> every output 9c
    Tensor<float> cst = Tensor<float>::full({1, 1, 6, 6}, 0.5f);
    Tensor<float> ones = Tensor<float>::ones({1, 1, 3, 3});
    Tensor<float> b1 = Tensor<float>::zeros({1});
    auto y9 = conv2d(cst, ones, b1, 1, 0);
    CHECK(y9.shape() == Shape{1, 1, 4, 4});
    for (int64_t i = 0; i < y9.numel(); ++i) CHECK(y9[i] == doctest::Approx(4.5f));
}

TEST_CASE("conv2d: error paths") {
    Tensor<float> x({1, 2, 4, 4});
    Tensor<float> w({3, 5, 3, 3});
    Tensor<float> b({3});
    CHECK_THROWS_WITH_AS(conv2d(x, w, b, 1, 1), doctest::Contains("channel"), std::invalid_argument);
    Tensor<float> w2({3, 2, 3, 3});
    Tensor<float> tiny({1, 2, 2, 2});
    CHECK_THROWS_WITH_AS(conv2d(tiny, w2, b, 1, 0), doctest::Contains("kernel"), std::invalid_argument);
}

TEST_CASE("conv2d: gradients vs finite differences (all kernel regimes)") {
    Rng rng(2);
    for (auto [k, s, p] : {std::tuple<int64_t, int64_t, int64_t>{1, 1, 0}, {3, 1, 1}, {3, 2, 1}}) {
        Tensor<double> x = randu<double>({2, 2, 4, 4}, rng);
        Tensor<double> w = randu<double>({3, 2, k, k}, rng);
        Tensor<double> b = randu<double>({3}, rng);
        Tensor<double> m = randu<double>({2, 3, (4 + 2 * p - k) / s + 1, (4 + 2 * p - k) / s + 1}, rng);
        auto f = [&] { return sum(mul(conv2d(x, w, b, s, p), m)); };
        CHECK(finite_diff_check<double>(f, x, 1e-6) < 1e-5);
        CHECK(finite_diff_check<double>(f, w, 1e-6) < 1e-5);
        CHECK(finite_diff_check<double>(f, b, 1e-6) < 1e-5);
    }
}

TEST_CASE("batch_norm: defining property and running stats update") {
    Rng rng(3);
    BatchNorm2dLayer<double> bn(4);
    Tensor<double> x = randu<double>({2, 4, 3, 3}, rng, -2.0, 3.0);
    auto y = bn.forward(x);
    // gamma=1, beta=0, train mode: per-channel mean ~0, var ~1
    const int64_t HW = 9, B = 2, M = B * HW;
    for (int64_t c = 0; c < 4; ++c) {
        double s = 0, v = 0;
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < HW; ++i) s += y.at({b, c, i / 3, i % 3});
        double m = s / M;
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < HW; ++i) {
                double d = y.at({b, c, i / 3, i % 3}) - m;
                v += d * d;
            }
        v /= M;
        CHECK(std::abs(m) < 1e-4);
        CHECK(std::abs(v - 1.0) < 1e-3);
    }

    // momentum=0.1 on a 2-element batch, recomputed by hand
    BatchNorm2dLayer<double> bn2(1);
    bn2.running_mean[0] = 0.5;
    bn2.running_var[0] = 2.0;
    Tensor<double> two({2, 1, 1, 1}, {1.0, 3.0});  // mean 2, biased var 1
    bn2.forward(two);
    CHECK(bn2.running_mean[0] == doctest::Approx(0.9 * 0.5 + 0.1 * 2.0));
    CHECK(bn2.running_var[0] == doctest::Approx(0.9 * 2.0 + 0.1 * 1.0));

    // eval mode with rm=0, rv=1, gamma=1, beta=0 -> out ~ x
    BatchNorm2dLayer<double> bn3(4);
    bn3.training = false;
    auto y3 = bn3.forward(x);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y3[i] == doctest::Approx(x[i]).epsilon(1e-5));
    // eval never mutates running stats
    CHECK(bn3.running_mean[0] == 0.0);
    CHECK(bn3.running_var[0] == 1.0);

    // train-mode call with a single element per channel errors
    BatchNorm2dLayer<double> bn4(2);
    Tensor<double> single({1, 2, 1, 1});
    CHECK_THROWS_AS(bn4.forward(single), std::invalid_argument);
}

TEST_CASE("batch_norm: gradients in train and eval mode") {
    Rng rng(4);
    BatchNorm2dLayer<double> bn(3);
    Tensor<double> x = randu<double>({2, 3, 2, 2}, rng);
    Tensor<double> m = randu<double>({2, 3, 2, 2}, rng);
    auto f = [&] {
        BatchNorm2dLayer<double> fresh(3);  // stats update must not leak across fd evals
        fresh.gamma = bn.gamma;
        fresh.beta = bn.beta;
        return sum(mul(fresh.forward(x), m));
    };
    CHECK(finite_diff_check<double>(f, x, 1e-6) < 1e-5);
    CHECK(finite_diff_check<double>(f, bn.gamma, 1e-6) < 1e-5);
    CHECK(finite_diff_check<double>(f, bn.beta, 1e-6) < 1e-5);

    bn.training = false;
    bn.running_mean = randu<double>({3}, rng);
    bn.running_var = Tensor<double>::uniform({3}, rng, 0.5, 2.0);
    auto fe = [&] { return sum(mul(bn.forward(x), m)); };
    CHECK(finite_diff_check<double>(fe, x, 1e-6) < 1e-5);
    CHECK(finite_diff_check<double>(fe, bn.gamma, 1e-6) < 1e-5);
}

TEST_CASE("silu: values and derivative at 0") {
    Tensor<double> x({3}, {0.0, 10.0, -1.0});
    auto y = silu(x);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == doctest::Approx(9.999546021).epsilon(1e-8));

    Tensor<double> z({1}, {0.0});
    z.set_requires_grad();
    auto& tape = Tape<double>::current();
    tape.reset();
    auto l = sum(silu(z));
    tape.backward(l);
    CHECK(z.grad()[0] == doctest::Approx(0.5));
    z.set_requires_grad(false);
    tape.reset();

    Rng rng(5);
    Tensor<double> r = randu<double>({8}, rng, -3.0, 3.0);
    auto f = [&] { return sum(silu(r)); };
    CHECK(finite_diff_check<double>(f, r, 1e-6) < 1e-7);
    auto g = [&] { return sum(gelu(r)); };
    CHECK(finite_diff_check<double>(g, r, 1e-6) < 1e-7);
    auto h = [&] { return sum(sigmoid(r)); };
    CHECK(finite_diff_check<double>(h, r, 1e-6) < 1e-7);
}

TEST_CASE("max_pool2d: values, ties, gradient routing") {
    Tensor<float> x({1, 1, 2, 2}, {1, 2, 3, 4});
    auto y = max_pool2d(x);
    CHECK(y.numel() == 1);
    CHECK(y[0] == 4.f);

    Tensor<float> c = Tensor<float>::full({1, 2, 4, 4}, 3.25f);
    auto yc = max_pool2d(c);
    for (int64_t i = 0; i < yc.numel(); ++i) CHECK(yc[i] == 3.25f);

    Tensor<float> odd({1, 1, 3, 3});
    CHECK_THROWS_AS(max_pool2d(odd), std::invalid_argument);

    // gradient reaches exactly one element per window
    Tensor<double> g({1, 1, 4, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
    g.set_requires_grad();
    auto& tape = Tape<double>::current();
    tape.reset();
    tape.backward(sum(max_pool2d(g)));
    int nonzero = 0;
    for (double v : g.grad()) nonzero += (v != 0.0);
    CHECK(nonzero == 4);
    g.zero_grad();
    g.set_requires_grad(false);

    Rng rng(6);
    Tensor<double> r = randu<double>({1, 2, 4, 4}, rng);  // unique maxima a.s.
    auto f = [&] { return sum(mul(max_pool2d(r), max_pool2d(r))); };
    CHECK(finite_diff_check<double>(f, r, 1e-6) < 1e-6);
}

TEST_CASE("bilinear_up2: constants, 1x1, sampling formula") {
    Tensor<float> c = Tensor<float>::full({1, 3, 4, 4}, 0.7f);
    auto yc = bilinear_up2(c);
    CHECK(yc.shape() == Shape{1, 3, 8, 8});
    for (int64_t i = 0; i < yc.numel(); ++i) CHECK(yc[i] == doctest::Approx(0.7f));

    Tensor<float> one({1, 1, 1, 1}, {0.3f});
    auto y1 = bilinear_up2(one);
    CHECK(y1.shape() == Shape{1, 1, 2, 2});
    for (int64_t i = 0; i < 4; ++i) CHECK(y1[i] == doctest::Approx(0.3f));

    // 1-D row [0,1] x2 -> [0, 0.25, 0.75, 1]
    Tensor<float> row({1, 1, 1, 2}, {0.f, 1.f});
    auto yr = bilinear_up2(row);
    CHECK(yr.at({0, 0, 0, 0}) == doctest::Approx(0.f));
    CHECK(yr.at({0, 0, 0, 1}) == doctest::Approx(0.25f));
    CHECK(yr.at({0, 0, 0, 2}) == doctest::Approx(0.75f));
    CHECK(yr.at({0, 0, 0, 3}) == doctest::Approx(1.f));

    Rng rng(7);
    Tensor<double> r = randu<double>({1, 2, 3, 3}, rng);
    Tensor<double> m = randu<double>({1, 2, 6, 6}, rng);
    auto f = [&] { return sum(mul(bilinear_up2(r), m)); };
    CHECK(finite_diff_check<double>(f, r, 1e-6) < 1e-7);
}

TEST_CASE("linear: identity, bias broadcast, gradient") {
    Rng rng(8);
    Tensor<double> x = randu<double>({2, 3, 4}, rng);
    Tensor<double> I = Tensor<double>::zeros({4, 4});
    for (int64_t i = 0; i < 4; ++i) I[i * 4 + i] = 1.0;
    Tensor<double> b0 = Tensor<double>::zeros({4});
    auto y = linear(x, I, b0);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == doctest::Approx(x[i]));

    Tensor<double> W0 = Tensor<double>::zeros({4, 2});
    Tensor<double> b({2}, {1.5, -0.5});
    auto yb = linear(x, W0, b);
    for (int64_t i = 0; i < yb.numel(); i += 2) {
        CHECK(yb[i] == 1.5);
        CHECK(yb[i + 1] == -0.5);
    }

    Tensor<double> W = randu<double>({4, 2}, rng);
    Tensor<double> m = randu<double>({2, 3, 2}, rng);
    auto f = [&] { return sum(mul(linear(x, W, b), m)); };
    CHECK(finite_diff_check<double>(f, W, 1e-6) < 1e-5);
    CHECK(finite_diff_check<double>(f, x, 1e-6) < 1e-5);
    CHECK(finite_diff_check<double>(f, b, 1e-6) < 1e-5);
}

TEST_CASE("layer_norm: normalization, passthrough, scale invariance") {
    Rng rng(9);
    LayerNormLayer<double> ln(6);
    Tensor<double> x = randu<double>({2, 3, 6}, rng, -2.0, 2.0);
    auto y = ln.forward(x);
    for (int64_t t = 0; t < 6; ++t) {
        double m = 0, v = 0;
        for (int64_t i = 0; i < 6; ++i) m += y[t * 6 + i];
        m /= 6;
        for (int64_t i = 0; i < 6; ++i) v += (y[t * 6 + i] - m) * (y[t * 6 + i] - m);
        v /= 6;
        CHECK(std::abs(m) < 1e-4);
        CHECK(std::abs(v - 1.0) < 1e-3);
    }

    // already mean-0/var-1 input passes through (eps-perturbed)
    LayerNormLayer<double> ln4(4);
    Tensor<double> norm({1, 1, 4}, {-1.3416407865, -0.4472135955, 0.4472135955, 1.3416407865});
    auto yn = ln4.forward(norm);
    for (int64_t i = 0; i < 4; ++i) CHECK(yn[i] == doctest::Approx(norm[i]).epsilon(1e-4));

    // layer_norm(alpha x) == layer_norm(x) for alpha=10 within 1e-3
    auto y10 = ln.forward(mul_scalar(x, 10.0));
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(std::abs(y10[i] - y[i]) < 1e-3);

    Tensor<double> m = randu<double>({2, 3, 6}, rng);
    auto f = [&] { return sum(mul(ln.forward(x), m)); };
    CHECK(finite_diff_check<double>(f, x, 1e-6) < 1e-5);
    CHECK(finite_diff_check<double>(f, ln.gamma, 1e-6) < 1e-5);
    CHECK(finite_diff_check<double>(f, ln.beta, 1e-6) < 1e-5);
}

TEST_CASE("attention: single token reduces to value path") {
    Rng rng(10);
    AttentionLayer<double> attn(4, 2, rng);
    Tensor<double> x = randu<double>({2, 1, 4}, rng);
    auto y = attn.forward(x);
    auto expect = matmul(matmul(x, attn.wv.weight), attn.wo.weight);  // biases are zero at init
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(expect[i]).epsilon(1e-10));
    CHECK_THROWS_AS(AttentionLayer<double>(5, 2, rng), std::invalid_argument);
}

TEST_CASE("attention: permutation equivariance") {
    Rng rng(11);
    AttentionLayer<double> attn(8, 4, rng);
    Tensor<double> x = randu<double>({1, 5, 8}, rng);
    auto y = attn.forward(x);
    // reversed token order
    std::vector<double> rev(static_cast<size_t>(x.numel()));
    for (int64_t n = 0; n < 5; ++n)
        for (int64_t d = 0; d < 8; ++d) rev[static_cast<size_t>(n * 8 + d)] = x.at({0, 4 - n, d});
    auto yr = attn.forward(Tensor<double>({1, 5, 8}, rev));
    for (int64_t n = 0; n < 5; ++n)
        for (int64_t d = 0; d < 8; ++d) CHECK(yr.at({0, n, d}) == doctest::Approx(y.at({0, 4 - n, d})).epsilon(1e-12));
}

TEST_CASE("attention: two-token single-head case matches brute force") {
    Rng rng(12);
    AttentionLayer<double> attn(2, 1, rng);
    Tensor<double> x = randu<double>({1, 2, 2}, rng);
    auto y = attn.forward(x);

    // independent dense computation of softmax(QK^T/sqrt(d)) V, then W_o
    auto project = [&](const Tensor<double>& w) {
        std::array<std::array<double, 2>, 2> q{};
        for (int n = 0; n < 2; ++n)
            for (int d = 0; d < 2; ++d)
                q[n][d] = x.at({0, n, 0}) * w.at({0, d}) + x.at({0, n, 1}) * w.at({1, d});
        return q;
    };
    auto Q = project(attn.wq.weight), K = project(attn.wk.weight), V = project(attn.wv.weight);
    double scale = 1.0 / std::sqrt(2.0);
    double ctx[2][2];
    for (int i = 0; i < 2; ++i) {
        double s0 = (Q[i][0] * K[0][0] + Q[i][1] * K[0][1]) * scale;
        double s1 = (Q[i][0] * K[1][0] + Q[i][1] * K[1][1]) * scale;
        double mx = std::max(s0, s1);
        double e0 = std::exp(s0 - mx), e1 = std::exp(s1 - mx);
        double a0 = e0 / (e0 + e1), a1 = e1 / (e0 + e1);
        CHECK(a0 + a1 == doctest::Approx(1.0).epsilon(1e-6));
        for (int d = 0; d < 2; ++d) ctx[i][d] = a0 * V[0][d] + a1 * V[1][d];
    }
    for (int i = 0; i < 2; ++i)
        for (int d = 0; d < 2; ++d) {
            double o = ctx[i][0] * attn.wo.weight.at({0, d}) + ctx[i][1] * attn.wo.weight.at({1, d});
            CHECK(y.at({0, i, d}) == doctest::Approx(o).epsilon(1e-12));
        }
}

TEST_CASE("transformer_block: residual-only path, shapes, gradient") {
    Rng rng(13);
    TransformerBlock<double> blk(8, 4, rng);
    // zero output projections -> pure residual
    blk.attn.wo.weight = Tensor<double>::zeros({8, 8});
    blk.fc2.weight = Tensor<double>::zeros({32, 8});
    Tensor<double> x = randu<double>({2, 3, 8}, rng);
    auto y = blk.forward(x);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-12));

    TransformerBlock<double> blk2(8, 2, rng);
    for (int64_t n : {1, 4, 7}) {
        Tensor<double> xi = randu<double>({1, n, 8}, rng);
        CHECK(blk2.forward(xi).shape() == Shape{1, n, 8});
    }

    Tensor<double> xg = randu<double>({1, 4, 8}, rng);
    Tensor<double> m = randu<double>({1, 4, 8}, rng);
    auto f = [&] { return sum(mul(blk2.forward(xg), m)); };
    CHECK(finite_diff_check<double>(f, xg, 1e-6) < 1e-3);
    CHECK(finite_diff_check<double>(f, blk2.attn.wq.weight, 1e-6) < 1e-3);
    CHECK(finite_diff_check<double>(f, blk2.fc1.weight, 1e-6) < 1e-3);
}

TEST_CASE("layers expose named parameters") {
    Rng rng(14);
    TransformerBlock<float> blk(8, 2, rng);
    std::vector<std::string> names;
    int64_t count = 0;
    blk.visit_params("blk", [&](const std::string& n, Tensor<float>& t, bool trainable) {
        names.push_back(n);
        if (trainable) count += t.numel();
    });
    CHECK(names.size() == 16);  // 2 LN + 4 attn linears + 2 mlp linears, w+b each
    CHECK(count == 8 + 8 + 4 * (64 + 8) + (8 * 32 + 32) + (32 * 8 + 8) + 16);
}
