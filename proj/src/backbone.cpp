#include "dcelanm/backbone.hpp"

namespace dcelanm {

template <typename T>
CbsUnit<T>::CbsUnit(CbsKind kind, int64_t c_in, int64_t c_out, Rng& rng) : bn(c_out) {
    switch (kind) {
        case CbsKind::cbs1: conv = Conv2dLayer<T>(c_in, c_out, 1, 1, 0, rng); break;
        case CbsKind::cbs2: conv = Conv2dLayer<T>(c_in, c_out, 3, 1, 1, rng); break;
        case CbsKind::cbs3: conv = Conv2dLayer<T>(c_in, c_out, 3, 2, 1, rng); break;
    }
}

template <typename T>
void CbsUnit<T>::visit_params(const std::string& prefix, const ParamFn<T>& fn) {
    conv.visit_params(prefix + ".conv", fn);
    bn.visit_params(prefix + ".bn", fn);
}

template <typename T>
AggBlock<T>::AggBlock(BlockKind kind_, int64_t c_in, int64_t c_out, Rng& rng) : kind(kind_) {
    if (c_in % 2 != 0)
        throw std::invalid_argument("agg block: input channels must be even, got " + std::to_string(c_in));
    const int64_t c = c_in / 2;
    stem = CbsUnit<T>(CbsKind::cbs1, c_in, c, rng);
    for (int i = 0; i < 4; ++i) branch_a.emplace_back(CbsKind::cbs2, c, c, rng);
    int64_t width = 3 * c;  // h + two taps
    if (kind == BlockKind::dcelan) {
        for (int i = 0; i < 4; ++i) branch_b.emplace_back(CbsKind::cbs2, c, c, rng);
        residual = CbsUnit<T>(CbsKind::cbs1, c_in, c, rng);
        width = 6 * c;
    }
    fuse = CbsUnit<T>(CbsKind::cbs1, width, c_out, rng);
}

template <typename T>
Tensor<T> AggBlock<T>::forward(const Tensor<T>& x) {
    Tensor<T> h = stem.forward(x);

    auto run_chain = [&](std::vector<CbsUnit<T>>& chain, std::vector<Tensor<T>>& taps) {
        Tensor<T> t = h;
        for (size_t i = 0; i < chain.size(); ++i) {
            t = chain[i].forward(t);
            if (i == 1 || i == 3) taps.push_back(t);  // after units 2 and 4
        }
    };
    std::vector<Tensor<T>> cat{h};
    run_chain(branch_a, cat);
    if (kind == BlockKind::dcelan) {
        run_chain(branch_b, cat);
        cat.push_back(residual->forward(x));
    }
    return fuse.forward(concat(cat, 1));
}

template <typename T>
void AggBlock<T>::set_training(bool training) {
    stem.set_training(training);
    for (auto& u : branch_a) u.set_training(training);
    for (auto& u : branch_b) u.set_training(training);
    if (residual) residual->set_training(training);
    fuse.set_training(training);
}

template <typename T>
void AggBlock<T>::visit_params(const std::string& prefix, const ParamFn<T>& fn) {
    stem.visit_params(prefix + ".stem", fn);
    for (size_t i = 0; i < branch_a.size(); ++i) branch_a[i].visit_params(prefix + ".a" + std::to_string(i), fn);
    for (size_t i = 0; i < branch_b.size(); ++i) branch_b[i].visit_params(prefix + ".b" + std::to_string(i), fn);
    if (residual) residual->visit_params(prefix + ".res", fn);
    fuse.visit_params(prefix + ".fuse", fn);
}

template <typename T>
DownSample<T>::DownSample(int64_t c_in, int64_t c_out, Rng& rng) {
    if (c_out % 2 != 0) throw std::invalid_argument("down_sample: c_out must be even");
    pool_proj = CbsUnit<T>(CbsKind::cbs1, c_in, c_out / 2, rng);
    conv_proj = CbsUnit<T>(CbsKind::cbs1, c_in, c_out / 2, rng);
    conv_down = CbsUnit<T>(CbsKind::cbs3, c_out / 2, c_out / 2, rng);
}

template <typename T>
Tensor<T> DownSample<T>::forward(const Tensor<T>& x) {
    Tensor<T> a = pool_proj.forward(max_pool2d(x));
    Tensor<T> b = conv_down.forward(conv_proj.forward(x));
    return concat<T>({a, b}, 1);
}

template <typename T>
void DownSample<T>::set_training(bool training) {
    pool_proj.set_training(training);
    conv_proj.set_training(training);
    conv_down.set_training(training);
}

template <typename T>
void DownSample<T>::visit_params(const std::string& prefix, const ParamFn<T>& fn) {
    pool_proj.visit_params(prefix + ".pool", fn);
    conv_proj.visit_params(prefix + ".pre", fn);
    conv_down.visit_params(prefix + ".down", fn);
}

template <typename T>
UpSample<T>::UpSample(int64_t c_in, int64_t c_out, Rng& rng) {
    if (c_out % 2 != 0) throw std::invalid_argument("up_sample: c_out must be even");
    lane_a = CbsUnit<T>(CbsKind::cbs2, c_in, c_out / 2, rng);
    lane_b = CbsUnit<T>(CbsKind::cbs1, c_in, c_out / 2, rng);
}

template <typename T>
Tensor<T> UpSample<T>::forward(const Tensor<T>& x) {
    Tensor<T> u = bilinear_up2(x);
    return concat<T>({lane_a.forward(u), lane_b.forward(u)}, 1);
}

template <typename T>
void UpSample<T>::set_training(bool training) {
    lane_a.set_training(training);
    lane_b.set_training(training);
}

template <typename T>
void UpSample<T>::visit_params(const std::string& prefix, const ParamFn<T>& fn) {
    lane_a.visit_params(prefix + ".a", fn);
    lane_b.visit_params(prefix + ".b", fn);
}

template <typename T>
DcelanPath<T>::DcelanPath(int64_t channels, int64_t repeats, Rng& rng) {
    for (int64_t i = 0; i < repeats; ++i)
        units.push_back(Unit{CbsUnit<T>(CbsKind::cbs2, channels, channels, rng),
                             CbsUnit<T>(CbsKind::cbs1, channels, channels, rng)});
}

template <typename T>
Tensor<T> DcelanPath<T>::forward(const Tensor<T>& x) {
    Tensor<T> t = x;
    for (auto& u : units) t = add(u.main.forward(t), u.res.forward(t));
    return t;
}

template <typename T>
void DcelanPath<T>::set_training(bool training) {
    for (auto& u : units) {
        u.main.set_training(training);
        u.res.set_training(training);
    }
}

template <typename T>
void DcelanPath<T>::visit_params(const std::string& prefix, const ParamFn<T>& fn) {
    for (size_t i = 0; i < units.size(); ++i) {
        units[i].main.visit_params(prefix + ".u" + std::to_string(i) + ".main", fn);
        units[i].res.visit_params(prefix + ".u" + std::to_string(i) + ".res", fn);
    }
}

template <typename T>
DecoderStage<T>::DecoderStage(BlockKind kind, int64_t c_in, int64_t c_skip, int64_t c_out, int64_t repeats, Rng& rng)
    : up(c_in, c_skip, rng),
      path(c_skip, repeats, rng),
      block(kind, 2 * c_skip, c_out, rng),
      res_proj(CbsKind::cbs1, c_skip, c_out, rng) {}

template <typename T>
Tensor<T> DecoderStage<T>::forward(const Tensor<T>& x, const Tensor<T>& skip) {
    Tensor<T> u = up.forward(x);
    if (u.shape() != skip.shape())
        throw std::invalid_argument("decoder stage: upsampled " + shape_str(u.shape()) +
                                    " does not match skip " + shape_str(skip.shape()));
    Tensor<T> fused = concat<T>({u, path.forward(skip)}, 1);
    return add(block.forward(fused), res_proj.forward(u));
}

template <typename T>
void DecoderStage<T>::set_training(bool training) {
    up.set_training(training);
    path.set_training(training);
    block.set_training(training);
    res_proj.set_training(training);
}

template <typename T>
void DecoderStage<T>::visit_params(const std::string& prefix, const ParamFn<T>& fn) {
    up.visit_params(prefix + ".up", fn);
    path.visit_params(prefix + ".path", fn);
    block.visit_params(prefix + ".block", fn);
    res_proj.visit_params(prefix + ".resproj", fn);
}

#define DCELANM_INSTANTIATE_BACKBONE(T) \
    template struct CbsUnit<T>;         \
    template struct AggBlock<T>;        \
    template struct DownSample<T>;      \
    template struct UpSample<T>;        \
    template struct DcelanPath<T>;      \
    template struct DecoderStage<T>;

DCELANM_INSTANTIATE_BACKBONE(float)
DCELANM_INSTANTIATE_BACKBONE(double)

}  // namespace dcelanm
