#include "doctest.h"

#include <cmath>
#include <cstring>

#include "dcelanm/gradcheck.hpp"
#include "dcelanm/ops.hpp"
#include "dcelanm/rng.hpp"
#include "dcelanm/tape.hpp"

using namespace dcelanm;

namespace {

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (std::memcmp(&a.data()[i], &b.data()[i], sizeof(T)) != 0) return false;
    return true;
}

Tensor<double> rand_tensor(Shape s, Rng& rng) { return Tensor<double>::uniform(std::move(s), rng, -1.0, 1.0); }

}  // namespace

TEST_CASE("rng: splitmix64 reference vectors and determinism") {
    Rng r0(0);
    CHECK(r0.next_u64() == 0xE220A8397B1DCDAFULL);
    CHECK(r0.next_u64() == 0x6E789E6AA1B965F4ULL);
    CHECK(r0.next_u64() == 0x06C45D188009454FULL);
    Rng r1(0x12345678);
    CHECK(r1.next_u64() == 0x38F1DC39D1906B6FULL);
    CHECK(r1.next_u64() == 0xDFE4142236DD9517ULL);
    CHECK(r1.next_u64() == 0x30C0356884C4F31FULL);

    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_double() == b.next_double());
    double u = Rng(7).next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);

    // forked streams diverge from the parent and are themselves reproducible
    Rng base(9);
    CHECK(base.fork(1).next_u64() == base.fork(1).next_u64());
    CHECK(base.fork(1).next_u64() != base.fork(2).next_u64());
}

TEST_CASE("elementwise: basic arithmetic and identity") {
    Tensor<float> a({2}, {1.f, 2.f});
    Tensor<float> b({2}, {3.f, 4.f});
    auto c = add(a, b);
    CHECK(c[0] == 4.f);
    CHECK(c[1] == 6.f);

    auto d = mul_scalar(a, 1.0f);
    CHECK(bitwise_equal(a, d));

    Tensor<float> z({2}, {5.f, -1.f});
    auto q = divide(a, z);
    CHECK(q[0] == doctest::Approx(0.2f));
    CHECK(q[1] == doctest::Approx(-2.f));
}

TEST_CASE("elementwise: shape mismatch names both shapes") {
    Tensor<float> a({2, 3});
    Tensor<float> b({4});
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2,3]"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[4]"), std::invalid_argument);
}

TEST_CASE("elementwise: d(a*b)/da via backward matches hand value") {
    Tensor<double> a({1}, {2.0});
    Tensor<double> b({1}, {3.0});
    a.set_requires_grad();
    auto& tape = Tape<double>::current();
    tape.reset();
    auto y = mul(a, b);
    tape.backward(y);
    CHECK(a.grad()[0] == doctest::Approx(3.0));

    // and against the finite-difference oracle
    Rng rng(1);
    Tensor<double> x = rand_tensor({3}, rng);
    Tensor<double> w = rand_tensor({3}, rng);
    auto f = [&] { return sum(mul(x, w)); };
    CHECK(finite_diff_check<double>(f, x, 1e-6) < 1e-7);
}

TEST_CASE("broadcast: trailing-axes rule with gradient reduction") {
    Rng rng(3);
    Tensor<double> a = rand_tensor({2, 3, 4}, rng);
    Tensor<double> b = rand_tensor({3, 4}, rng);
    auto y = add(a, b);
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 3; ++j)
            for (int64_t k = 0; k < 4; ++k)
                CHECK(y.at({i, j, k}) == doctest::Approx(a.at({i, j, k}) + b.at({j, k})));

    auto f = [&] { return sum(mul(add(a, b), add(a, b))); };
    CHECK(finite_diff_check<double>(f, b, 1e-6) < 1e-7);

    Tensor<double> c = rand_tensor({3, 1}, rng);  // dim-1 broadcast
    auto g = [&] { return sum(mul(a, c)); };
    CHECK(finite_diff_check<double>(g, c, 1e-6) < 1e-7);
}

TEST_CASE("pow/div/exp/log/sqrt gradients") {
    Rng rng(4);
    Tensor<double> x = Tensor<double>::uniform({6}, rng, 0.5, 2.0);
    auto f1 = [&] { return sum(pow_scalar(x, 3.0)); };
    CHECK(finite_diff_check<double>(f1, x, 1e-6) < 1e-8);
    auto f2 = [&] { return sum(exp_elem(x)); };
    CHECK(finite_diff_check<double>(f2, x, 1e-6) < 1e-8);
    auto f3 = [&] { return sum(log_elem(x)); };
    CHECK(finite_diff_check<double>(f3, x, 1e-6) < 1e-8);
    auto f4 = [&] { return sum(sqrt_elem(x)); };
    CHECK(finite_diff_check<double>(f4, x, 1e-6) < 1e-8);
    Tensor<double> e = Tensor<double>::uniform({6}, rng, 0.5, 1.5);
    auto f5 = [&] { return sum(pow_elem(x, e)); };
    CHECK(finite_diff_check<double>(f5, x, 1e-6) < 1e-7);
    CHECK(finite_diff_check<double>(f5, e, 1e-6) < 1e-7);
    auto f6 = [&] { return sum(rdiv_scalar(1.0, x)); };
    CHECK(finite_diff_check<double>(f6, x, 1e-6) < 1e-7);
}

TEST_CASE("matmul: identity, hand arithmetic, gradient oracle") {
    Tensor<float> I({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Rng rng(5);
    Tensor<float> M = Tensor<float>::uniform({3, 3}, rng);
    auto y = matmul(I, M);
    for (int64_t i = 0; i < 9; ++i) CHECK(y[i] == doctest::Approx(M[i]));

    Tensor<float> a({2, 2}, {1, 2, 3, 4});
    Tensor<float> b({2, 1}, {5, 6});
    auto c = matmul(a, b);
    CHECK(c[0] == 17.f);
    CHECK(c[1] == 39.f);

    Rng r2(6);
    Tensor<double> A = rand_tensor({4, 3}, r2);
    Tensor<double> B = rand_tensor({3, 5}, r2);
    auto f = [&] { return sum(matmul(A, B)); };
    CHECK(finite_diff_check<double>(f, A, 1e-6) < 1e-5);
    CHECK(finite_diff_check<double>(f, B, 1e-6) < 1e-5);

    // batched with broadcast on one side
    Tensor<double> Ab = rand_tensor({2, 2, 3, 4}, r2);
    Tensor<double> Bb = rand_tensor({2, 1, 4, 2}, r2);
    auto yb = matmul(Ab, Bb);
    CHECK(yb.shape() == Shape{2, 2, 3, 2});
    auto fb = [&] { return sum(matmul(Ab, Bb)); };
    CHECK(finite_diff_check<double>(fb, Bb, 1e-6) < 1e-5);

    Tensor<double> bad({5, 2});
    CHECK_THROWS_AS(matmul(A, bad), std::invalid_argument);
}

TEST_CASE("reduce: sum/mean/max with axes") {
    Tensor<float> x({3}, {1, 2, 3});
    CHECK(sum(x).item() == 6.f);

    Tensor<float> c = Tensor<float>::full({2, 5}, 2.5f);
    auto m = mean(c, {1});
    CHECK(m.shape() == Shape{2});
    CHECK(m[0] == doctest::Approx(2.5f));

    Rng rng(7);
    Tensor<double> r = rand_tensor({2, 3, 4}, rng);
    auto s1 = sum(r, {1}, true);
    CHECK(s1.shape() == Shape{2, 1, 4});
    auto f = [&] { return sum(mul(mean(r, {0, 2}), mean(r, {0, 2}))); };
    CHECK(finite_diff_check<double>(f, r, 1e-6) < 1e-7);

    // max routes gradient to the (unique) argmax only
    Tensor<double> mx({4}, {0.1, 0.9, 0.3, -0.5});
    mx.set_requires_grad();
    auto& tape = Tape<double>::current();
    tape.reset();
    auto l = max_reduce(mx);
    tape.backward(l);
    CHECK(mx.grad()[0] == 0.0);
    CHECK(mx.grad()[1] == 1.0);
    CHECK(mx.grad()[2] == 0.0);
    mx.zero_grad();
    mx.set_requires_grad(false);
    auto fm = [&] { return max_reduce(mx); };
    CHECK(finite_diff_check<double>(fm, mx, 1e-6) < 1e-7);

    CHECK_THROWS_AS(sum(x, {3}), std::invalid_argument);
}

TEST_CASE("reshape/transpose/concat/slice/pad") {
    Rng rng(8);
    Tensor<float> x = Tensor<float>::uniform({2, 3, 4}, rng);

    auto r = reshape(x, {6, 4});
    auto rr = reshape(r, {2, 3, 4});
    CHECK(bitwise_equal(x, rr));
    CHECK_THROWS_AS(reshape(x, Shape{5, 5}), std::invalid_argument);

    auto t = transpose(x, {2, 0, 1});
    CHECK(t.shape() == Shape{4, 2, 3});
    auto tt = transpose(t, {1, 2, 0});
    CHECK(bitwise_equal(x, tt));

    Tensor<float> a = Tensor<float>::uniform({1, 8, 4, 4}, rng);
    Tensor<float> b = Tensor<float>::uniform({1, 8, 4, 4}, rng);
    auto cat = concat<float>({a, b}, 1);
    CHECK(cat.shape() == Shape{1, 16, 4, 4});
    CHECK(bitwise_equal(a, slice(cat, 1, 0, 8)));
    CHECK(bitwise_equal(b, slice(cat, 1, 8, 8)));
    Tensor<float> c({1, 8, 4, 5});
    CHECK_THROWS_AS(concat<float>({a, c}, 1), std::invalid_argument);

    // zero-pad rows 288 -> 384, split 48/48
    Tensor<float> img = Tensor<float>::uniform({3, 288, 384}, rng);
    auto padded = pad(img, {{0, 0}, {48, 48}, {0, 0}});
    CHECK(padded.shape() == Shape{3, 384, 384});
    for (int64_t ch = 0; ch < 3; ++ch) {
        CHECK(padded.at({ch, 0, 100}) == 0.f);
        CHECK(padded.at({ch, 47, 100}) == 0.f);
        CHECK(padded.at({ch, 383, 100}) == 0.f);
    }
    auto cropped = crop(padded, {{0, 0}, {48, 48}, {0, 0}});
    CHECK(bitwise_equal(img, cropped));
}

TEST_CASE("shape op gradients vs finite differences") {
    Rng rng(9);
    Tensor<double> x = rand_tensor({2, 3, 2}, rng);
    Tensor<double> w = rand_tensor({12}, rng);
    auto f1 = [&] { return sum(mul(reshape(x, {12}), w)); };
    CHECK(finite_diff_check<double>(f1, x, 1e-6) < 1e-7);
    Tensor<double> w2 = rand_tensor({2, 2, 3}, rng);
    auto f2 = [&] { return sum(mul(transpose(x, {0, 2, 1}), w2)); };
    CHECK(finite_diff_check<double>(f2, x, 1e-6) < 1e-7);
    Tensor<double> y = rand_tensor({2, 3, 2}, rng);
    auto f3 = [&] { return sum(mul(concat<double>({x, y}, 1), concat<double>({y, x}, 1))); };
    CHECK(finite_diff_check<double>(f3, x, 1e-6) < 1e-7);
    auto f4 = [&] { return sum(mul(pad(x, {{0, 0}, {1, 2}, {0, 1}}), pad(y, {{0, 0}, {1, 2}, {0, 1}}))); };
    CHECK(finite_diff_check<double>(f4, x, 1e-6) < 1e-7);
    auto f5 = [&] { return sum(slice(mul(x, x), 1, 1, 2)); };
    CHECK(finite_diff_check<double>(f5, x, 1e-6) < 1e-7);
}

TEST_CASE("concat backward splits gradient exactly") {
    Rng rng(10);
    Tensor<double> a = rand_tensor({2, 2}, rng);
    Tensor<double> b = rand_tensor({2, 3}, rng);
    Tensor<double> w = rand_tensor({2, 5}, rng);
    a.set_requires_grad();
    b.set_requires_grad();
    auto& tape = Tape<double>::current();
    tape.reset();
    auto cat = concat<double>({a, b}, 1);
    tape.backward(sum(mul(cat, w)));
    // grads of the parts re-concatenate to the output grad (w itself)
    for (int64_t i = 0; i < 2; ++i) {
        for (int64_t j = 0; j < 2; ++j) CHECK(a.grad()[static_cast<size_t>(i * 2 + j)] == w.at({i, j}));
        for (int64_t j = 0; j < 3; ++j) CHECK(b.grad()[static_cast<size_t>(i * 3 + j)] == w.at({i, j + 2}));
    }
    a.set_requires_grad(false);
    b.set_requires_grad(false);
}

TEST_CASE("take_tokens gathers rows and scatter-adds gradient") {
    Rng rng(11);
    Tensor<double> x = rand_tensor({2, 4, 3}, rng);
    std::vector<int64_t> idx = {2, 0, 3, 3};  // per-sample
    auto y = take_tokens(x, idx, 2);
    CHECK(y.shape() == Shape{2, 2, 3});
    CHECK(y.at({0, 0, 1}) == x.at({0, 2, 1}));
    CHECK(y.at({1, 1, 2}) == x.at({1, 3, 2}));
    Tensor<double> w = rand_tensor({2, 2, 3}, rng);
    auto f = [&] { return sum(mul(take_tokens(x, idx, 2), w)); };
    CHECK(finite_diff_check<double>(f, x, 1e-6) < 1e-7);
    std::vector<int64_t> bad = {5, 0, 1, 1};
    CHECK_THROWS_AS(take_tokens(x, bad, 2), std::invalid_argument);
}

TEST_CASE("softmax rows sum to one and gradient checks") {
    Rng rng(12);
    Tensor<double> x = rand_tensor({3, 5}, rng);
    auto y = softmax_lastdim(x);
    for (int64_t r = 0; r < 3; ++r) {
        double s = 0;
        for (int64_t i = 0; i < 5; ++i) s += y.at({r, i});
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
    Tensor<double> w = rand_tensor({3, 5}, rng);
    auto f = [&] { return sum(mul(softmax_lastdim(x), w)); };
    CHECK(finite_diff_check<double>(f, x, 1e-6) < 1e-7);
}

TEST_CASE("backward: seed, accumulation, and error paths") {
    Tensor<double> x({3}, {1.0, 2.0, 3.0});
    x.set_requires_grad();
    auto& tape = Tape<double>::current();
    tape.reset();
    auto loss = sum(x);
    tape.backward(loss);
    CHECK(x.grad() == std::vector<double>{1, 1, 1});

    // grads accumulate across backward calls until zero_grad
    tape.backward(loss);
    CHECK(x.grad() == std::vector<double>{2, 2, 2});
    x.zero_grad();
    tape.backward(loss);
    CHECK(x.grad() == std::vector<double>{1, 1, 1});

    auto v = add(x, x);
    CHECK_THROWS_AS(tape.backward(v), std::invalid_argument);  // non-scalar
    Tensor<double> off({1}, {4.0});
    CHECK_THROWS_AS(tape.backward(off), std::invalid_argument);  // not on tape
    x.zero_grad();
    x.set_requires_grad(false);
    tape.reset();
}

TEST_CASE("no-grad guard and detach stop recording") {
    Tensor<double> x({2}, {1.0, 2.0});
    x.set_requires_grad();
    auto& tape = Tape<double>::current();
    tape.reset();
    {
        NoGradGuard<double> ng;
        auto y = mul(x, x);
        CHECK(tape.size() == 0);
    }
    auto z = sum(mul(x.detach(), x.detach()));
    CHECK_THROWS_AS(tape.backward(z), std::invalid_argument);
    x.set_requires_grad(false);
    tape.reset();
}

TEST_CASE("finite_diff_check: closed forms") {
    Tensor<double> x({2}, {1.0, 2.0});
    auto f = [&] { return sum(mul(x, x)); };  // d/dx = 2x -> [2,4]
    x.set_requires_grad();
    auto& tape = Tape<double>::current();
    tape.reset();
    auto l = f();
    tape.backward(l);
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
    x.zero_grad();
    x.set_requires_grad(false);
    CHECK(finite_diff_check<double>(f, x, 1e-5) <= 1e-7);
    auto g = [&] { return sum(x); };
    CHECK(finite_diff_check<double>(g, x, 1e-5) <= 1e-9);
}

TEST_CASE("determinism: same seed and op sequence is bit-identical") {
    auto run = [] {
        Rng rng(123);
        Tensor<float> a = Tensor<float>::randn({4, 4}, rng);
        Tensor<float> b = Tensor<float>::uniform({4, 4}, rng);
        return sum(matmul(silu(a), sigmoid(b))).item();
    };
    float r1 = run();
    float r2 = run();
    CHECK(std::memcmp(&r1, &r2, sizeof(float)) == 0);
}
