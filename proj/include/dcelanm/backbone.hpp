#pragma once

#include <optional>
#include <vector>

#include "dcelanm/nn.hpp"

namespace dcelanm {

/// The three conv composites used everywhere in the backbone:
/// CBS.1 = 1x1/s1/p0, CBS.2 = 3x3/s1/p1, CBS.3 = 3x3/s2/p1,
/// each followed by batch norm and SiLU.
enum class CbsKind { cbs1, cbs2, cbs3 };

template <typename T>
struct CbsUnit {
    Conv2dLayer<T> conv;
    BatchNorm2dLayer<T> bn;

    CbsUnit() = default;
    CbsUnit(CbsKind kind, int64_t c_in, int64_t c_out, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x) { return silu(bn.forward(conv.forward(x))); }
    void set_training(bool training) { bn.training = training; }
    void visit_params(const std::string& prefix, const ParamFn<T>& fn);
};

enum class BlockKind { elan, dcelan };

/// Layer-aggregation block. A 1x1 stem halves the channels, one (ELAN) or two
/// (DCELAN) chains of four 3x3 convs extract features with taps after units 2
/// and 4, DCELAN adds a 1x1 projection of the raw input as a residual lane,
/// and a final 1x1 fuses the concatenation back to c_out.
template <typename T>
struct AggBlock {
    BlockKind kind = BlockKind::dcelan;
    CbsUnit<T> stem;                    // c_in -> c_in/2
    std::vector<CbsUnit<T>> branch_a;   // 4x CBS2 at c_in/2
    std::vector<CbsUnit<T>> branch_b;   // DCELAN only
    std::optional<CbsUnit<T>> residual; // DCELAN only, c_in -> c_in/2
    CbsUnit<T> fuse;                    // concat width -> c_out

    AggBlock() = default;
    AggBlock(BlockKind kind, int64_t c_in, int64_t c_out, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x);
    void set_training(bool training);
    void visit_params(const std::string& prefix, const ParamFn<T>& fn);
};

/// Downsampler: max-pool lane and strided-conv lane, each reduced to c_out/2
/// by a 1x1 before merging.
template <typename T>
struct DownSample {
    CbsUnit<T> pool_proj;  // CBS1 c_in -> c_out/2, after max-pool
    CbsUnit<T> conv_proj;  // CBS1 c_in -> c_out/2
    CbsUnit<T> conv_down;  // CBS3 c_out/2 -> c_out/2

    DownSample() = default;
    DownSample(int64_t c_in, int64_t c_out, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x);
    void set_training(bool training);
    void visit_params(const std::string& prefix, const ParamFn<T>& fn);
};

/// Upsampler: shared bilinear x2, then a 3x3 lane and a 1x1 lane, each at
/// c_out/2, concatenated.
template <typename T>
struct UpSample {
    CbsUnit<T> lane_a;  // CBS2 c_in -> c_out/2
    CbsUnit<T> lane_b;  // CBS1 c_in -> c_out/2

    UpSample() = default;
    UpSample(int64_t c_in, int64_t c_out, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x);
    void set_training(bool training);
    void visit_params(const std::string& prefix, const ParamFn<T>& fn);
};

/// Skip-connection block: `repeats` units of x <- CBS2(x) + CBS1(x), channel
/// preserving. repeats = 0 is the identity.
template <typename T>
struct DcelanPath {
    struct Unit {
        CbsUnit<T> main;  // CBS2 C -> C
        CbsUnit<T> res;   // CBS1 C -> C
    };
    std::vector<Unit> units;

    DcelanPath() = default;
    DcelanPath(int64_t channels, int64_t repeats, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x);
    void set_training(bool training);
    void visit_params(const std::string& prefix, const ParamFn<T>& fn);
};

/// One decoder step: upsample, fuse with the path-processed skip, aggregate,
/// and add a 1x1-projected residual of the upsampled features across the
/// block.
template <typename T>
struct DecoderStage {
    UpSample<T> up;       // c_in -> c_skip
    DcelanPath<T> path;   // on the skip, c_skip
    AggBlock<T> block;    // 2*c_skip -> c_out
    CbsUnit<T> res_proj;  // CBS1 c_skip -> c_out

    DecoderStage() = default;
    DecoderStage(BlockKind kind, int64_t c_in, int64_t c_skip, int64_t c_out, int64_t repeats, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& skip);
    void set_training(bool training);
    void visit_params(const std::string& prefix, const ParamFn<T>& fn);
};

}  // namespace dcelanm
