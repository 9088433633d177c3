#pragma once

#include <functional>
#include <string>

#include "dcelanm/ops.hpp"
#include "dcelanm/rng.hpp"

namespace dcelanm {

/// Callback for walking a module's named tensors. `trainable` is false for
/// buffers (batch-norm running statistics) which persist in checkpoints but
/// are excluded from parameter counts and optimizer updates.
template <typename T>
using ParamFn = std::function<void(const std::string& name, Tensor<T>& t, bool trainable)>;

// ---- functional ops ----

/// Cross-correlation conv (no kernel flip), bias per output channel.
/// x[B,Cin,H,W], w[Cout,Cin,k,k] -> [B,Cout,H',W'] with
/// H' = floor((H + 2p - k)/s) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int64_t stride, int64_t padding);

/// 2x2/stride-2 window max. Gradient routes to the first-occurrence argmax.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x);

/// Bilinear x2 upsample, align-corners=false (sample centers at
/// (i+0.5)/2 - 0.5), edge-clamped.
template <typename T>
Tensor<T> bilinear_up2(const Tensor<T>& x);

/// x[..,Din] @ W[Din,Dout] + b
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// ---- init ----

template <typename T>
Tensor<T> kaiming_normal(Shape shape, int64_t fan_in, Rng& rng);

template <typename T>
Tensor<T> trunc_normal(Shape shape, T stddev, Rng& rng);

// ---- layers ----

template <typename T>
struct Conv2dLayer {
    Tensor<T> weight;  // [Cout, Cin, k, k]
    Tensor<T> bias;    // [Cout]
    int64_t stride = 1;
    int64_t padding = 0;

    Conv2dLayer() = default;
    Conv2dLayer(int64_t c_in, int64_t c_out, int64_t k, int64_t stride, int64_t padding, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, padding); }
    void visit_params(const std::string& prefix, const ParamFn<T>& fn);
};

/// Channel batch norm over [B,C,H,W]. Training normalizes by batch statistics
/// (biased variance) and folds them into the running estimates with
/// `momentum`; eval uses the running estimates and never mutates them.
template <typename T>
struct BatchNorm2dLayer {
    Tensor<T> gamma, beta;
    Tensor<T> running_mean, running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);
    bool training = true;

    BatchNorm2dLayer() = default;
    explicit BatchNorm2dLayer(int64_t channels);

    Tensor<T> forward(const Tensor<T>& x);
    void visit_params(const std::string& prefix, const ParamFn<T>& fn);
};

template <typename T>
struct LinearLayer {
    Tensor<T> weight;  // [Din, Dout]
    Tensor<T> bias;    // [Dout]

    LinearLayer() = default;
    LinearLayer(int64_t d_in, int64_t d_out, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight, bias); }
    void visit_params(const std::string& prefix, const ParamFn<T>& fn);
};

/// Per-token normalization over the last axis, then affine.
template <typename T>
struct LayerNormLayer {
    Tensor<T> gamma, beta;
    T eps = T(1e-5);

    LayerNormLayer() = default;
    explicit LayerNormLayer(int64_t dim);

    Tensor<T> forward(const Tensor<T>& x) const;
    void visit_params(const std::string& prefix, const ParamFn<T>& fn);
};

/// Unmasked multi-head self-attention: per head softmax(QK^T/sqrt(hd)) V,
/// heads concatenated and projected.
template <typename T>
struct AttentionLayer {
    LinearLayer<T> wq, wk, wv, wo;
    int64_t heads = 1;

    AttentionLayer() = default;
    AttentionLayer(int64_t dim, int64_t heads, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x) const;  // x[B,N,D]
    void visit_params(const std::string& prefix, const ParamFn<T>& fn);
};

/// Pre-norm block: z = MSA(LN(x)) + x; out = MLP(LN(z)) + z,
/// MLP = linear(D->4D), GELU, linear(4D->D).
template <typename T>
struct TransformerBlock {
    LayerNormLayer<T> ln1, ln2;
    AttentionLayer<T> attn;
    LinearLayer<T> fc1, fc2;

    TransformerBlock() = default;
    TransformerBlock(int64_t dim, int64_t heads, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x) const;
    void visit_params(const std::string& prefix, const ParamFn<T>& fn);
};

}  // namespace dcelanm
