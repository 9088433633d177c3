#include "dcelanm/mae.hpp"

#include <cmath>

namespace dcelanm {

namespace {

template <typename T>
bool recording_for(const Tensor<T>& t) {
    auto& tp = Tape<T>::current();
    return tp.recording() && tp.tracked(t);
}

}  // namespace

template <typename T>
Tensor<T> patchify(const Tensor<T>& x, int64_t P) {
    const Shape& xs = x.shape();
    if (xs.size() != 4) throw std::invalid_argument("patchify: expected [B,C,H,W]");
    const int64_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    if (P < 1 || H % P || W % P)
        throw std::invalid_argument("patchify: spatial dims " + shape_str(xs) + " not divisible by P=" + std::to_string(P));
    const int64_t gh = H / P, gw = W / P, N = gh * gw, D = P * P * C;

    Tensor<T> out({B, N, D});
    const T* px = x.ptr();
    T* po = out.ptr();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t gy = 0; gy < gh; ++gy)
            for (int64_t gx = 0; gx < gw; ++gx) {
                T* tok = po + (b * N + gy * gw + gx) * D;
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t py = 0; py < P; ++py) {
                        const T* src = px + ((b * C + c) * H + gy * P + py) * W + gx * P;
                        T* dst = tok + c * P * P + py * P;
                        for (int64_t qx = 0; qx < P; ++qx) dst[qx] = src[qx];
                    }
            }
    if (recording_for(x)) {
        auto& tp = Tape<T>::current();
        int64_t nx = tp.input_node(x);
        tp.add_node(out, {nx}, [B, C, H, W, P, gh, gw, N, D](const T* g, const std::vector<T*>& pg) {
            if (!pg[0]) return;
            for (int64_t b = 0; b < B; ++b)
                for (int64_t gy = 0; gy < gh; ++gy)
                    for (int64_t gx = 0; gx < gw; ++gx) {
                        const T* tok = g + (b * N + gy * gw + gx) * D;
                        for (int64_t c = 0; c < C; ++c)
                            for (int64_t py = 0; py < P; ++py) {
                                T* dst = pg[0] + ((b * C + c) * H + gy * P + py) * W + gx * P;
                                const T* src = tok + c * P * P + py * P;
                                for (int64_t qx = 0; qx < P; ++qx) dst[qx] += src[qx];
                            }
                    }
        });
    }
    return out;
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& t, int64_t channels, int64_t gh, int64_t gw, int64_t P) {
    const Shape& ts = t.shape();
    if (ts.size() != 3) throw std::invalid_argument("unpatchify: expected [B,N,P^2*C]");
    const int64_t B = ts[0], N = ts[1], D = ts[2];
    if (N != gh * gw || D != P * P * channels)
        throw std::invalid_argument("unpatchify: inconsistent token grid " + shape_str(ts));
    const int64_t H = gh * P, W = gw * P;

    Tensor<T> out({B, channels, H, W});
    const T* pt = t.ptr();
    T* po = out.ptr();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t gy = 0; gy < gh; ++gy)
            for (int64_t gx = 0; gx < gw; ++gx) {
                const T* tok = pt + (b * N + gy * gw + gx) * D;
                for (int64_t c = 0; c < channels; ++c)
                    for (int64_t py = 0; py < P; ++py) {
                        T* dst = po + ((b * channels + c) * H + gy * P + py) * W + gx * P;
                        const T* src = tok + c * P * P + py * P;
                        for (int64_t qx = 0; qx < P; ++qx) dst[qx] = src[qx];
                    }
            }
    if (recording_for(t)) {
        auto& tp = Tape<T>::current();
        int64_t nt = tp.input_node(t);
        const int64_t C = channels;
        tp.add_node(out, {nt}, [B, C, H, W, P, gh, gw, N, D](const T* g, const std::vector<T*>& pg) {
            if (!pg[0]) return;
            for (int64_t b = 0; b < B; ++b)
                for (int64_t gy = 0; gy < gh; ++gy)
                    for (int64_t gx = 0; gx < gw; ++gx) {
                        T* tok = pg[0] + (b * N + gy * gw + gx) * D;
                        for (int64_t c = 0; c < C; ++c)
                            for (int64_t py = 0; py < P; ++py) {
                                const T* src = g + ((b * C + c) * H + gy * P + py) * W + gx * P;
                                T* dst = tok + c * P * P + py * P;
                                for (int64_t qx = 0; qx < P; ++qx) dst[qx] += src[qx];
                            }
                    }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sincos_pos_embed(int64_t gh, int64_t gw, int64_t dim) {
    if (dim % 4 != 0) throw std::invalid_argument("sincos_pos_embed: dim must be divisible by 4");
    const int64_t N = gh * gw;
    const int64_t half = dim / 2;
    const int64_t bands = dim / 4;
    Tensor<T> out({N, dim});
    for (int64_t gy = 0; gy < gh; ++gy)
        for (int64_t gx = 0; gx < gw; ++gx) {
            T* row = out.ptr() + (gy * gw + gx) * dim;
            for (int64_t j = 0; j < bands; ++j) {
                const double omega = std::pow(10000.0, -2.0 * static_cast<double>(j) / static_cast<double>(half));
                row[2 * j] = static_cast<T>(std::sin(static_cast<double>(gy) * omega));
                row[2 * j + 1] = static_cast<T>(std::cos(static_cast<double>(gy) * omega));
                row[half + 2 * j] = static_cast<T>(std::sin(static_cast<double>(gx) * omega));
                row[half + 2 * j + 1] = static_cast<T>(std::cos(static_cast<double>(gx) * omega));
            }
        }
    return out;
}

MaskPlan make_mask_plan(int64_t batch, int64_t tokens, double ratio, Rng& rng) {
    if (ratio < 0.0 || ratio >= 1.0)
        throw std::invalid_argument("mask ratio must be in [0,1), got " + std::to_string(ratio));
    MaskPlan plan;
    plan.batch = batch;
    plan.tokens = tokens;
    const int64_t n_masked = static_cast<int64_t>(std::llround(ratio * static_cast<double>(tokens)));
    plan.n_visible = tokens - n_masked;
    plan.shuffle.resize(static_cast<size_t>(batch * tokens));
    plan.ids_restore.resize(static_cast<size_t>(batch * tokens));
    plan.mask_flags.resize(static_cast<size_t>(batch * tokens));
    for (int64_t b = 0; b < batch; ++b) {
        // nothing masked: identity plan, no rng draws
        std::vector<int64_t> perm;
        if (n_masked == 0) {
            perm.resize(static_cast<size_t>(tokens));
            for (int64_t j = 0; j < tokens; ++j) perm[static_cast<size_t>(j)] = j;
        } else {
            perm = rng.permutation(tokens);
        }
        for (int64_t j = 0; j < tokens; ++j) {
            plan.shuffle[static_cast<size_t>(b * tokens + j)] = perm[static_cast<size_t>(j)];
            plan.ids_restore[static_cast<size_t>(b * tokens + perm[static_cast<size_t>(j)])] = j;
            plan.mask_flags[static_cast<size_t>(b * tokens + perm[static_cast<size_t>(j)])] = j >= plan.n_visible;
        }
    }
    return plan;
}

template <typename T>
std::pair<Tensor<T>, MaskPlan> random_masking(const Tensor<T>& tokens, double ratio, Rng& rng) {
    const Shape& ts = tokens.shape();
    if (ts.size() != 3) throw std::invalid_argument("random_masking: expected [B,N,D]");
    MaskPlan plan = make_mask_plan(ts[0], ts[1], ratio, rng);
    std::vector<int64_t> keep(static_cast<size_t>(ts[0] * plan.n_visible));
    for (int64_t b = 0; b < ts[0]; ++b)
        for (int64_t j = 0; j < plan.n_visible; ++j)
            keep[static_cast<size_t>(b * plan.n_visible + j)] = plan.shuffle[static_cast<size_t>(b * ts[1] + j)];
    Tensor<T> visible = take_tokens(tokens, keep, plan.n_visible);
    return {visible, plan};
}

template <typename T>
MicroMae<T>::MicroMae(int64_t channels_, int64_t feat_side, int64_t P_, int64_t dim_, int64_t dec_dim_,
                      int64_t enc_depth, int64_t dec_depth, int64_t heads_, Rng& rng)
    : channels(channels_), P(P_), dim(dim_), dec_dim(dec_dim_), heads(heads_) {
    if (feat_side % P != 0)
        throw std::invalid_argument("micro-mae: feature side " + std::to_string(feat_side) +
                                    " not divisible by patch size " + std::to_string(P));
    gh = gw = feat_side / P;
    tokens = gh * gw;
    const int64_t patch_dim = P * P * channels;

    patch_proj = LinearLayer<T>(patch_dim, dim, rng);
    enc_pos = sincos_pos_embed<T>(gh, gw, dim);
    enc_pos.set_requires_grad();
    for (int64_t i = 0; i < enc_depth; ++i) enc_blocks.emplace_back(dim, heads, rng);
    mask_token = trunc_normal<T>({dec_dim}, T(0.02), rng);
    mask_token.set_requires_grad();
    enc_to_dec = LinearLayer<T>(dim, dec_dim, rng);
    dec_pos = sincos_pos_embed<T>(gh, gw, dec_dim);
    dec_pos.set_requires_grad();
    for (int64_t i = 0; i < dec_depth; ++i) dec_blocks.emplace_back(dec_dim, heads, rng);
    pred_head = LinearLayer<T>(dec_dim, patch_dim, rng);
}

template <typename T>
Tensor<T> MicroMae<T>::encode(const Tensor<T>& visible) const {
    Tensor<T> t = visible;
    for (const auto& blk : enc_blocks) t = blk.forward(t);
    return t;
}

template <typename T>
Tensor<T> MicroMae<T>::decode(const Tensor<T>& encoded, const MaskPlan& plan) const {
    const int64_t B = encoded.dim(0);
    if (encoded.dim(1) != plan.n_visible)
        throw std::invalid_argument("mae decode: encoded length " + std::to_string(encoded.dim(1)) +
                                    " does not match plan n_visible " + std::to_string(plan.n_visible));
    Tensor<T> vis = enc_to_dec.forward(encoded);  // [B,n_vis,dec_dim]
    const int64_t n_masked = plan.tokens - plan.n_visible;
    Tensor<T> full = vis;
    if (n_masked > 0) {
        // every masked slot receives the same shared vector
        Tensor<T> slots = add(Tensor<T>::zeros({B, n_masked, dec_dim}), mask_token);
        full = concat<T>({vis, slots}, 1);
    }
    Tensor<T> restored = take_tokens(full, plan.ids_restore, plan.tokens);
    restored = add(restored, dec_pos);
    for (const auto& blk : dec_blocks) restored = blk.forward(restored);
    return pred_head.forward(restored);
}

template <typename T>
typename MicroMae<T>::ForwardOut MicroMae<T>::forward(const Tensor<T>& feat, double ratio, Rng& rng) {
    const Shape& fs = feat.shape();
    if (fs.size() != 4 || fs[1] != channels || fs[2] != gh * P || fs[3] != gw * P)
        throw std::invalid_argument("micro-mae: feature map " + shape_str(fs) + " does not match configuration");
    const int64_t B = fs[0];
    const int64_t n_masked_per = static_cast<int64_t>(std::llround(ratio * static_cast<double>(tokens)));
    if (ratio == 0.0 || n_masked_per == 0) {
        // nothing masked: reconstruction is the input itself and the loss term
        // vanishes; predictions at visible positions are discarded by contract
        return {feat, Tensor<T>::scalar(T(0)), make_mask_plan(B, tokens, 0.0, rng)};
    }

    Tensor<T> patches = patchify(feat, P);
    Tensor<T> tok = add(patch_proj.forward(patches), enc_pos);
    auto [visible, plan] = random_masking(tok, ratio, rng);
    Tensor<T> encoded = encode(visible);
    Tensor<T> pred = decode(encoded, plan);

    // masked-patch MSE against the original patch values (the target is part
    // of the objective, so its gradient path stays live)
    std::vector<T> flags(plan.mask_flags.size());
    for (size_t i = 0; i < flags.size(); ++i) flags[i] = plan.mask_flags[i] ? T(1) : T(0);
    Tensor<T> mask_w({B, tokens, 1}, flags);
    Tensor<T> diff = sub(pred, patches);
    const int64_t patch_dim = P * P * channels;
    const T denom = static_cast<T>(B * n_masked_per * patch_dim);
    Tensor<T> loss = mul_scalar(sum(mul(mul(diff, diff), mask_w)), T(1) / denom);

    // visible positions keep the originals; gradients still flow to them
    std::vector<T> keepf(flags.size());
    for (size_t i = 0; i < flags.size(); ++i) keepf[i] = T(1) - flags[i];
    Tensor<T> keep_w({B, tokens, 1}, keepf);
    Tensor<T> blended = add(mul(pred, mask_w), mul(patches, keep_w));
    Tensor<T> recon = unpatchify(blended, channels, gh, gw, P);
    return {recon, loss, plan};
}

template <typename T>
void MicroMae<T>::set_pos_trainable(bool trainable) {
    enc_pos.set_requires_grad(trainable);
    dec_pos.set_requires_grad(trainable);
}

template <typename T>
void MicroMae<T>::visit_params(const std::string& prefix, const ParamFn<T>& fn) {
    patch_proj.visit_params(prefix + ".patch_proj", fn);
    fn(prefix + ".enc_pos", enc_pos, enc_pos.requires_grad());
    for (size_t i = 0; i < enc_blocks.size(); ++i)
        enc_blocks[i].visit_params(prefix + ".enc" + std::to_string(i), fn);
    fn(prefix + ".mask_token", mask_token, true);
    enc_to_dec.visit_params(prefix + ".enc_to_dec", fn);
    fn(prefix + ".dec_pos", dec_pos, dec_pos.requires_grad());
    for (size_t i = 0; i < dec_blocks.size(); ++i)
        dec_blocks[i].visit_params(prefix + ".dec" + std::to_string(i), fn);
    pred_head.visit_params(prefix + ".pred", fn);
}

#define DCELANM_INSTANTIATE_MAE(T)                                                       \
    template Tensor<T> patchify<T>(const Tensor<T>&, int64_t);                           \
    template Tensor<T> unpatchify<T>(const Tensor<T>&, int64_t, int64_t, int64_t, int64_t); \
    template Tensor<T> sincos_pos_embed<T>(int64_t, int64_t, int64_t);                   \
    template std::pair<Tensor<T>, MaskPlan> random_masking<T>(const Tensor<T>&, double, Rng&); \
    template struct MicroMae<T>;

DCELANM_INSTANTIATE_MAE(float)
DCELANM_INSTANTIATE_MAE(double)

}  // namespace dcelanm
