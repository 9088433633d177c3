#include "doctest.h"

#include <cmath>

#include "dcelanm/backbone.hpp"
#include "dcelanm/gradcheck.hpp"

using namespace dcelanm;

namespace {

template <typename T>
Tensor<T> randu(Shape s, Rng& rng, T lo = T(-1), T hi = T(1)) {
    return Tensor<T>::uniform(std::move(s), rng, lo, hi);
}

template <typename T, typename M>
int64_t param_count(M& m) {
    int64_t n = 0;
    m.visit_params("m", [&](const std::string&, Tensor<T>& t, bool trainable) {
        if (trainable) n += t.numel();
    });
    return n;
}

// zero all conv weights/biases, put norms in eval identity mode
template <typename T, typename M>
void zero_eval(M& m) {
    m.set_training(false);
    m.visit_params("m", [&](const std::string& name, Tensor<T>& t, bool) {
        bool keep_one = name.ends_with(".gamma") || name.ends_with("running_var");
        for (auto& v : t.data()) v = keep_one ? T(1) : T(0);
    });
}

template <typename T, typename M>
bool all_params_have_gradient(M& m, const Tensor<T>& out_grad_src) {
    (void)out_grad_src;
    bool ok = true;
    m.visit_params("m", [&](const std::string&, Tensor<T>& t, bool trainable) {
        if (!trainable) return;
        T norm = T(0);
        for (T v : t.grad()) norm += v * v;
        if (!(norm > T(0))) ok = false;
    });
    return ok;
}

}  // namespace

TEST_CASE("cbs: kernel regimes and shape contracts") {
    Rng rng(1);
    CbsUnit<float> c1(CbsKind::cbs1, 256, 64, rng);
    Tensor<float> x = randu<float>({1, 256, 16, 16}, rng);
    CHECK(c1.forward(x).shape() == Shape{1, 64, 16, 16});

    CbsUnit<float> c2(CbsKind::cbs2, 8, 8, rng);
    Tensor<float> x2 = randu<float>({2, 8, 12, 12}, rng);
    CHECK(c2.forward(x2).shape() == Shape{2, 8, 12, 12});

    CbsUnit<float> c3(CbsKind::cbs3, 8, 16, rng);
    CHECK(c3.forward(x2).shape() == Shape{2, 16, 6, 6});
}

TEST_CASE("cbs: silu breaks superposition") {
    Rng rng(2);
    CbsUnit<float> cbs(CbsKind::cbs2, 4, 4, rng);
    cbs.set_training(false);
    Tensor<float> x = randu<float>({1, 4, 6, 6}, rng);
    auto y1 = cbs.forward(mul_scalar(x, 2.f));
    auto y2 = mul_scalar(cbs.forward(x), 2.f);
    double diff = 0;
    for (int64_t i = 0; i < y1.numel(); ++i) diff += std::abs(double(y1[i]) - double(y2[i]));
    CHECK(diff > 1e-3);
}

TEST_CASE("cbs: composite gradient check") {
    Rng rng(3);
    CbsUnit<double> cbs(CbsKind::cbs2, 2, 2, rng);
    Tensor<double> x = randu<double>({1, 2, 4, 4}, rng);
    Tensor<double> m = randu<double>({1, 2, 4, 4}, rng);
    auto f = [&] { return sum(mul(cbs.forward(x), m)); };
    CHECK(finite_diff_check<double>(f, x, 1e-6) < 1e-4);
    CHECK(finite_diff_check<double>(f, cbs.conv.weight, 1e-6) < 1e-4);
    CHECK(finite_diff_check<double>(f, cbs.bn.gamma, 1e-6) < 1e-4);
}

TEST_CASE("dcelan block: shape, zero-weight degenerate, full gradient flow") {
    Rng rng(4);
    AggBlock<float> blk(BlockKind::dcelan, 16, 16, rng);
    Tensor<float> x = randu<float>({1, 16, 128, 128}, rng);
    CHECK(blk.forward(x).shape() == Shape{1, 16, 128, 128});

    CHECK_THROWS_AS(AggBlock<float>(BlockKind::dcelan, 15, 16, rng), std::invalid_argument);

    // zero weights + eval-identity norms -> constant map
    AggBlock<float> z(BlockKind::dcelan, 8, 8, rng);
    zero_eval<float>(z);
    Tensor<float> xr = randu<float>({1, 8, 6, 6}, rng);
    auto yz = z.forward(xr);
    for (int64_t i = 0; i < yz.numel(); ++i) CHECK(yz[i] == yz[0]);

    // every parameter receives gradient on random input
    AggBlock<double> g(BlockKind::dcelan, 4, 4, rng);
    auto& tape = Tape<double>::current();
    tape.reset();
    Tensor<double> xg = randu<double>({2, 4, 6, 6}, rng);
    auto out = g.forward(xg);
    tape.backward(sum(mul(out, out)));
    CHECK(all_params_have_gradient<double>(g, out));
    tape.reset();
}

TEST_CASE("dcelan block: composite gradient check") {
    Rng rng(5);
    AggBlock<double> blk(BlockKind::dcelan, 2, 2, rng);
    Tensor<double> x = randu<double>({1, 2, 4, 4}, rng);
    Tensor<double> m = randu<double>({1, 2, 4, 4}, rng);
    auto f = [&] { return sum(mul(blk.forward(x), m)); };
    CHECK(finite_diff_check<double>(f, x, 1e-6) < 1e-3);
    CHECK(finite_diff_check<double>(f, blk.branch_b[2].conv.weight, 1e-6) < 1e-3);
    CHECK(finite_diff_check<double>(f, blk.residual->conv.weight, 1e-6) < 1e-3);
}

TEST_CASE("elan block: proper substructure of dcelan") {
    Rng rng(6);
    AggBlock<float> elan(BlockKind::elan, 32, 32, rng);
    AggBlock<float> dcelan(BlockKind::dcelan, 32, 32, rng);
    CHECK(param_count<float>(elan) < param_count<float>(dcelan));

    Tensor<float> x = randu<float>({1, 32, 64, 64}, rng);
    CHECK(elan.forward(x).shape() == Shape{1, 32, 64, 64});

    // same branch-A weights: the extra branch still changes the output
    AggBlock<float> e2(BlockKind::elan, 8, 8, rng);
    AggBlock<float> d2(BlockKind::dcelan, 8, 8, rng);
    d2.stem = e2.stem;
    d2.branch_a = e2.branch_a;
    // fuse widths differ (3c vs 6c); compare on the first 3c input lanes by
    // copying the elan fuse weights into the leading slice of the dcelan fuse
    for (int64_t co = 0; co < 8; ++co)
        for (int64_t ci = 0; ci < 12; ++ci)
            d2.fuse.conv.weight[co * 24 + ci] = e2.fuse.conv.weight[co * 12 + ci];
    e2.set_training(false);
    d2.set_training(false);
    Tensor<float> xr = randu<float>({1, 8, 5, 5}, rng);
    auto ye = e2.forward(xr);
    auto yd = d2.forward(xr);
    double diff = 0;
    for (int64_t i = 0; i < ye.numel(); ++i) diff += std::abs(double(ye[i]) - double(yd[i]));
    CHECK(diff > 1e-4);

    AggBlock<double> eg(BlockKind::elan, 2, 2, rng);
    Tensor<double> xg = randu<double>({1, 2, 4, 4}, rng);
    Tensor<double> m = randu<double>({1, 2, 4, 4}, rng);
    auto f = [&] { return sum(mul(eg.forward(xg), m)); };
    CHECK(finite_diff_check<double>(f, xg, 1e-6) < 1e-3);
}

TEST_CASE("down_sample: halves space, doubles channels, both lanes live") {
    Rng rng(7);
    DownSample<float> down(16, 32, rng);
    Tensor<float> x = randu<float>({1, 16, 256, 256}, rng);
    CHECK(down.forward(x).shape() == Shape{1, 32, 128, 128});

    // four downsamplings take 256 -> 16
    std::vector<int64_t> filters{16, 32, 64, 128, 256};
    Tensor<float> t = randu<float>({1, 16, 64, 64}, rng);
    for (int i = 0; i < 4; ++i) {
        DownSample<float> d(filters[static_cast<size_t>(i)], filters[static_cast<size_t>(i + 1)], rng);
        t = d.forward(t);
    }
    CHECK(t.shape() == Shape{1, 256, 4, 4});

    DownSample<double> dg(4, 8, rng);
    auto& tape = Tape<double>::current();
    tape.reset();
    Tensor<double> xg = randu<double>({1, 4, 6, 6}, rng);
    auto out = dg.forward(xg);
    tape.backward(sum(mul(out, out)));
    CHECK(all_params_have_gradient<double>(dg, out));
    tape.reset();

    Tensor<double> m = randu<double>({1, 8, 3, 3}, rng);
    Tensor<double> xs = randu<double>({1, 4, 6, 6}, rng);
    auto f = [&] { return sum(mul(dg.forward(xs), m)); };
    CHECK(finite_diff_check<double>(f, xs, 1e-6) < 1e-3);
}

TEST_CASE("up_sample: doubles space, expected channels") {
    Rng rng(8);
    UpSample<float> u(256, 128, rng);
    Tensor<float> x = randu<float>({1, 256, 16, 16}, rng);
    CHECK(u.forward(x).shape() == Shape{1, 128, 32, 32});

    // up then down restores spatial dims
    DownSample<float> d(128, 256, rng);
    auto restored = d.forward(u.forward(x));
    CHECK(restored.shape() == Shape{1, 256, 16, 16});

    UpSample<double> ug(4, 4, rng);
    Tensor<double> xg = randu<double>({1, 4, 3, 3}, rng);
    Tensor<double> m = randu<double>({1, 4, 6, 6}, rng);
    auto f = [&] { return sum(mul(ug.forward(xg), m)); };
    CHECK(finite_diff_check<double>(f, xg, 1e-6) < 1e-3);
}

TEST_CASE("dcelan_path: unit structure, repeats, identity at zero") {
    Rng rng(9);
    DcelanPath<float> p1(16, 8, rng);
    CHECK(p1.units.size() == 8);
    Tensor<float> x = randu<float>({1, 16, 32, 32}, rng);
    CHECK(p1.forward(x).shape() == Shape{1, 16, 32, 32});

    // zero-weight units with eval-identity norms: output is bias-only (zero here)
    DcelanPath<float> pz(4, 3, rng);
    zero_eval<float>(pz);
    Tensor<float> xr = randu<float>({1, 4, 5, 5}, rng);
    auto yz = pz.forward(xr);
    for (int64_t i = 0; i < yz.numel(); ++i) CHECK(yz[i] == 0.f);

    // repeats = 0 is the identity
    DcelanPath<float> p0(4, 0, rng);
    auto y0 = p0.forward(xr);
    for (int64_t i = 0; i < xr.numel(); ++i) CHECK(y0[i] == xr[i]);

    DcelanPath<double> pg(2, 2, rng);
    Tensor<double> xg = randu<double>({1, 2, 4, 4}, rng);
    Tensor<double> m = randu<double>({1, 2, 4, 4}, rng);
    auto f = [&] { return sum(mul(pg.forward(xg), m)); };
    CHECK(finite_diff_check<double>(f, xg, 1e-6) < 1e-3);
    CHECK(finite_diff_check<double>(f, pg.units[1].main.conv.weight, 1e-6) < 1e-3);
}

TEST_CASE("decoder stage: concat semantics and residual add") {
    Rng rng(10);
    DecoderStage<float> st(BlockKind::dcelan, 256, 128, 128, 2, rng);
    Tensor<float> x = randu<float>({1, 256, 16, 16}, rng);
    Tensor<float> skip = randu<float>({1, 128, 32, 32}, rng);
    CHECK(st.forward(x, skip).shape() == Shape{1, 128, 32, 32});

    Tensor<float> bad({1, 128, 16, 16});
    CHECK_THROWS_AS(st.forward(x, bad), std::invalid_argument);

    // zeroing the agg-block weights leaves the CBS1(up) residual path
    DecoderStage<float> z(BlockKind::dcelan, 8, 4, 4, 1, rng);
    zero_eval<float>(z.block);
    z.up.set_training(false);
    z.path.set_training(false);
    z.res_proj.set_training(false);
    Tensor<float> xz = randu<float>({1, 8, 4, 4}, rng);
    Tensor<float> sz = randu<float>({1, 4, 8, 8}, rng);
    auto out = z.forward(xz, sz);
    auto u = z.up.forward(xz);
    auto expect = z.res_proj.forward(u);  // block contributes a constant (zero biases)
    for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(expect[i]).epsilon(1e-5));

    // skip = 0: upper half of the fused tensor is up, lower half is path-of-zero
    DecoderStage<float> s2(BlockKind::dcelan, 8, 4, 4, 1, rng);
    s2.set_training(false);
    Tensor<float> zskip = Tensor<float>::zeros({1, 4, 8, 8});
    auto u2 = s2.up.forward(xz);
    auto fused = concat<float>({u2, s2.path.forward(zskip)}, 1);
    auto top = slice(fused, 1, 0, 4);
    for (int64_t i = 0; i < top.numel(); ++i) CHECK(top[i] == u2[i]);
}

TEST_CASE("decoder stage: composite gradient check") {
    Rng rng(11);
    DecoderStage<double> st(BlockKind::dcelan, 4, 2, 2, 1, rng);
    Tensor<double> x = randu<double>({1, 4, 2, 2}, rng);
    Tensor<double> skip = randu<double>({1, 2, 4, 4}, rng);
    Tensor<double> m = randu<double>({1, 2, 4, 4}, rng);
    auto f = [&] { return sum(mul(st.forward(x, skip), m)); };
    CHECK(finite_diff_check<double>(f, x, 1e-6) < 1e-3);
    CHECK(finite_diff_check<double>(f, skip, 1e-6) < 1e-3);
}
