#pragma once

#include <utility>
#include <vector>

#include "dcelanm/nn.hpp"

namespace dcelanm {

/// Non-overlapping PxP patches of x[B,C,H,W] in row-major grid order, each
/// flattened channel-major -> [B, HW/P^2, P^2*C]. Differentiable; exact
/// bitwise inverse of unpatchify.
template <typename T>
Tensor<T> patchify(const Tensor<T>& x, int64_t P);

/// Inverse of patchify: t[B,N,P^2*C] -> [B,C,gh*P,gw*P] with N = gh*gw.
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& t, int64_t channels, int64_t gh, int64_t gw, int64_t P);

/// Fixed 2-D sine-cosine table [gh*gw, D]: D/2 dims per grid axis,
/// sin/cos interleaved over frequency bands 10000^(-2j/(D/2)). D % 4 == 0.
template <typename T>
Tensor<T> sincos_pos_embed(int64_t gh, int64_t gw, int64_t dim);

/// Shuffle/restore bookkeeping for random masking. All index arrays are
/// row-major [B, N].
struct MaskPlan {
    int64_t batch = 0;
    int64_t tokens = 0;
    int64_t n_visible = 0;
    std::vector<int64_t> shuffle;      // shuffled token order; first n_visible kept
    std::vector<int64_t> ids_restore;  // inverse permutation
    std::vector<char> mask_flags;      // 1 = masked
};

MaskPlan make_mask_plan(int64_t batch, int64_t tokens, double ratio, Rng& rng);

/// Keep a per-sample random subset of tokens: masked tokens are absent from
/// the result, not zero-filled. n_visible = N - round(ratio*N).
template <typename T>
std::pair<Tensor<T>, MaskPlan> random_masking(const Tensor<T>& tokens, double ratio, Rng& rng);

/// Asymmetric masked autoencoder over the bottleneck feature map: ViT encoder
/// on visible tokens only, lightweight decoder over the full token set with a
/// single shared mask token, per-token pixel prediction head.
template <typename T>
struct MicroMae {
    int64_t channels = 0, P = 0, gh = 0, gw = 0, tokens = 0;
    int64_t dim = 0, dec_dim = 0, heads = 0;

    LinearLayer<T> patch_proj;  // P^2*C -> D
    Tensor<T> enc_pos;          // [N, D], sincos-initialized
    std::vector<TransformerBlock<T>> enc_blocks;
    Tensor<T> mask_token;  // [dec_dim], shared across masked positions
    LinearLayer<T> enc_to_dec;
    Tensor<T> dec_pos;  // [N, dec_dim]
    std::vector<TransformerBlock<T>> dec_blocks;
    LinearLayer<T> pred_head;  // dec_dim -> P^2*C

    MicroMae() = default;
    MicroMae(int64_t channels, int64_t feat_side, int64_t P, int64_t dim, int64_t dec_dim,
             int64_t enc_depth, int64_t dec_depth, int64_t heads, Rng& rng);

    /// Encoder stack over already-position-embedded visible tokens.
    Tensor<T> encode(const Tensor<T>& visible) const;

    /// Scatter encoded tokens + mask tokens back to original order, add
    /// decoder position embeddings, run the decoder, predict patch pixels.
    Tensor<T> decode(const Tensor<T>& encoded, const MaskPlan& plan) const;

    struct ForwardOut {
        Tensor<T> recon_feat;  // original values at visible positions, predictions at masked
        Tensor<T> recon_loss;  // mean squared error over masked patches only (scalar)
        MaskPlan plan;
    };

    /// Full pass. ratio = 0 short-circuits: recon_feat is the input itself and
    /// the loss is exactly zero.
    ForwardOut forward(const Tensor<T>& feat, double ratio, Rng& rng);

    /// Position tables are fixed during self-pretraining, trainable downstream.
    void set_pos_trainable(bool trainable);

    void visit_params(const std::string& prefix, const ParamFn<T>& fn);
};

}  // namespace dcelanm
