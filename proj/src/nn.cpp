#include "dcelanm/nn.hpp"

#include <cmath>
#include <cstring>

#include "dcelanm/gemm.hpp"

namespace dcelanm {

namespace {

template <typename T>
std::vector<T>& conv_scratch_a() {
    thread_local std::vector<T> buf;
    return buf;
}
template <typename T>
std::vector<T>& conv_scratch_b() {
    thread_local std::vector<T> buf;
    return buf;
}

// col[(c*k+ki)*k+kj, oy*OW+ox] = x[c, oy*s-p+ki, ox*s-p+kj] (0 outside)
template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t k, int64_t s, int64_t p,
            int64_t OH, int64_t OW, T* col) {
    for (int64_t c = 0; c < C; ++c)
        for (int64_t ki = 0; ki < k; ++ki)
            for (int64_t kj = 0; kj < k; ++kj) {
                T* row = col + ((c * k + ki) * k + kj) * OH * OW;
                const T* plane = x + c * H * W;
                for (int64_t oy = 0; oy < OH; ++oy) {
                    const int64_t iy = oy * s - p + ki;
                    T* dst = row + oy * OW;
                    if (iy < 0 || iy >= H) {
                        std::memset(dst, 0, sizeof(T) * static_cast<size_t>(OW));
                        continue;
                    }
                    const T* src = plane + iy * W;
                    int64_t ox = 0;
                    for (; ox < OW; ++ox) {
                        const int64_t ix = ox * s - p + kj;
                        dst[ox] = (ix < 0 || ix >= W) ? T(0) : src[ix];
                    }
                }
            }
}

template <typename T>
void col2im_add(const T* col, int64_t C, int64_t H, int64_t W, int64_t k, int64_t s, int64_t p,
                int64_t OH, int64_t OW, T* dx) {
    for (int64_t c = 0; c < C; ++c)
        for (int64_t ki = 0; ki < k; ++ki)
            for (int64_t kj = 0; kj < k; ++kj) {
                const T* row = col + ((c * k + ki) * k + kj) * OH * OW;
                T* plane = dx + c * H * W;
                for (int64_t oy = 0; oy < OH; ++oy) {
                    const int64_t iy = oy * s - p + ki;
                    if (iy < 0 || iy >= H) continue;
                    const T* src = row + oy * OW;
                    T* dst = plane + iy * W;
                    for (int64_t ox = 0; ox < OW; ++ox) {
                        const int64_t ix = ox * s - p + kj;
                        if (ix >= 0 && ix < W) dst[ix] += src[ox];
                    }
                }
            }
}

template <typename T>
bool rec2(const Tensor<T>& a, const Tensor<T>& b) {
    auto& tp = Tape<T>::current();
    return tp.recording() && (tp.tracked(a) || tp.tracked(b));
}
template <typename T>
bool rec3(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c) {
    auto& tp = Tape<T>::current();
    return tp.recording() && (tp.tracked(a) || tp.tracked(b) || tp.tracked(c));
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int64_t stride, int64_t padding) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4) throw std::invalid_argument("conv2d: expected x[B,C,H,W], w[Co,Ci,k,k]");
    const int64_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    const int64_t Co = ws[0], k = ws[2];
    if (ws[1] != C)
        throw std::invalid_argument("conv2d: channel mismatch, x has " + std::to_string(C) + ", weight expects " + std::to_string(ws[1]));
    if (ws[3] != k) throw std::invalid_argument("conv2d: kernel must be square");
    if (H + 2 * padding < k || W + 2 * padding < k)
        throw std::invalid_argument("conv2d: spatial size " + shape_str(xs) + " smaller than kernel " + std::to_string(k));
    const int64_t OH = (H + 2 * padding - k) / stride + 1;
    const int64_t OW = (W + 2 * padding - k) / stride + 1;
    const int64_t K2 = C * k * k;
    const int64_t N = OH * OW;
    const bool direct = (k == 1 && stride == 1 && padding == 0);

    Tensor<T> out({B, Co, OH, OW});
    T* po = out.ptr();
    const T* pb = b.ptr();
    for (int64_t bi = 0; bi < B; ++bi)
        for (int64_t c = 0; c < Co; ++c) {
            T* row = po + (bi * Co + c) * N;
            for (int64_t i = 0; i < N; ++i) row[i] = pb[c];
        }

    const T* col = nullptr;
    for (int64_t bi = 0; bi < B; ++bi) {
        if (direct) {
            col = x.ptr() + bi * C * H * W;
        } else {
            auto& buf = conv_scratch_a<T>();
            if (static_cast<int64_t>(buf.size()) < K2 * N) buf.resize(static_cast<size_t>(K2 * N));
            im2col(x.ptr() + bi * C * H * W, C, H, W, k, stride, padding, OH, OW, buf.data());
            col = buf.data();
        }
        gemm_nn(Co, N, K2, w.ptr(), K2, col, N, po + bi * Co * N, N);
    }

    if (rec3(x, w, b)) {
        auto& tp = Tape<T>::current();
        int64_t nx = tp.input_node(x);
        int64_t nw = tp.input_node(w);
        int64_t nb = tp.input_node(b);
        Tensor<T> xc = x, wc = w;
        tp.add_node(out, {nx, nw, nb},
                    [xc, wc, B, C, H, W, Co, k, stride, padding, OH, OW, K2, N, direct](
                        const T* g, const std::vector<T*>& pg) {
                        for (int64_t bi = 0; bi < B; ++bi) {
                            const T* gb = g + bi * Co * N;
                            if (pg[2]) {
                                for (int64_t c = 0; c < Co; ++c) {
                                    T s0 = T(0);
                                    const T* row = gb + c * N;
                                    for (int64_t i = 0; i < N; ++i) s0 += row[i];
                                    pg[2][c] += s0;
                                }
                            }
                            if (pg[1]) {
                                const T* col;
                                if (direct) {
                                    col = xc.ptr() + bi * C * H * W;
                                } else {
                                    auto& buf = conv_scratch_a<T>();
                                    if (static_cast<int64_t>(buf.size()) < K2 * N) buf.resize(static_cast<size_t>(K2 * N));
                                    im2col(xc.ptr() + bi * C * H * W, C, H, W, k, stride, padding, OH, OW, buf.data());
                                    col = buf.data();
                                }
                                gemm_nt(Co, K2, N, gb, N, col, N, pg[1], K2);
                            }
                            if (pg[0]) {
                                T* dxb = pg[0] + bi * C * H * W;
                                if (direct) {
                                    gemm_tn(K2, N, Co, wc.ptr(), K2, gb, N, dxb, N);
                                } else {
                                    auto& dcol = conv_scratch_b<T>();
                                    if (static_cast<int64_t>(dcol.size()) < K2 * N) dcol.resize(static_cast<size_t>(K2 * N));
                                    std::fill(dcol.begin(), dcol.begin() + static_cast<size_t>(K2 * N), T(0));
                                    gemm_tn(K2, N, Co, wc.ptr(), K2, gb, N, dcol.data(), N);
                                    col2im_add(dcol.data(), C, H, W, k, stride, padding, OH, OW, dxb);
                                }
                            }
                        }
                    });
    }
    return out;
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x) {
    const Shape& xs = x.shape();
    if (xs.size() != 4) throw std::invalid_argument("max_pool2d: expected [B,C,H,W]");
    const int64_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    if (H % 2 || W % 2)
        throw std::invalid_argument("max_pool2d: spatial dims must be even, got " + shape_str(xs));
    const int64_t OH = H / 2, OW = W / 2;
    Tensor<T> out({B, C, OH, OW});
    auto arg = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.numel()));
    const T* px = x.ptr();
    T* po = out.ptr();
    int64_t o = 0;
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* plane = px + bc * H * W;
        const int64_t base = bc * H * W;
        for (int64_t oy = 0; oy < OH; ++oy)
            for (int64_t ox = 0; ox < OW; ++ox, ++o) {
                const int64_t y = 2 * oy, xq = 2 * ox;
                // row-major first occurrence wins ties
                T best = plane[y * W + xq];
                int64_t bi = y * W + xq;
                if (plane[y * W + xq + 1] > best) { best = plane[y * W + xq + 1]; bi = y * W + xq + 1; }
                if (plane[(y + 1) * W + xq] > best) { best = plane[(y + 1) * W + xq]; bi = (y + 1) * W + xq; }
                if (plane[(y + 1) * W + xq + 1] > best) { best = plane[(y + 1) * W + xq + 1]; bi = (y + 1) * W + xq + 1; }
                po[o] = best;
                (*arg)[static_cast<size_t>(o)] = base + bi;
            }
    }
    auto& tp = Tape<T>::current();
    if (tp.recording() && tp.tracked(x)) {
        int64_t nx = tp.input_node(x);
        tp.add_node(out, {nx}, [arg](const T* g, const std::vector<T*>& pg) {
            if (!pg[0]) return;
            for (size_t i = 0; i < arg->size(); ++i) pg[0][(*arg)[i]] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> bilinear_up2(const Tensor<T>& x) {
    const Shape& xs = x.shape();
    if (xs.size() != 4) throw std::invalid_argument("bilinear_up2: expected [B,C,H,W]");
    const int64_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    const int64_t OH = 2 * H, OW = 2 * W;

    // per-axis source pairs and weights, align_corners=false
    auto make_axis = [](int64_t out_len, int64_t in_len, std::vector<int64_t>& i0, std::vector<int64_t>& i1,
                        std::vector<T>& w1) {
        i0.resize(static_cast<size_t>(out_len));
        i1.resize(static_cast<size_t>(out_len));
        w1.resize(static_cast<size_t>(out_len));
        for (int64_t i = 0; i < out_len; ++i) {
            double src = (static_cast<double>(i) + 0.5) / 2.0 - 0.5;
            double fl = std::floor(src);
            int64_t a = static_cast<int64_t>(fl);
            T f = static_cast<T>(src - fl);
            int64_t b = a + 1;
            if (a < 0) a = 0;
            if (b > in_len - 1) b = in_len - 1;
            if (a > in_len - 1) a = in_len - 1;
            i0[static_cast<size_t>(i)] = a;
            i1[static_cast<size_t>(i)] = b;
            w1[static_cast<size_t>(i)] = f;
        }
    };
    auto y0 = std::make_shared<std::vector<int64_t>>();
    auto y1 = std::make_shared<std::vector<int64_t>>();
    auto wy = std::make_shared<std::vector<T>>();
    auto x0 = std::make_shared<std::vector<int64_t>>();
    auto x1 = std::make_shared<std::vector<int64_t>>();
    auto wx = std::make_shared<std::vector<T>>();
    make_axis(OH, H, *y0, *y1, *wy);
    make_axis(OW, W, *x0, *x1, *wx);

    Tensor<T> out({B, C, OH, OW});
    const T* px = x.ptr();
    T* po = out.ptr();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* plane = px + bc * H * W;
        T* oplane = po + bc * OH * OW;
        for (int64_t oy = 0; oy < OH; ++oy) {
            const T* r0 = plane + (*y0)[static_cast<size_t>(oy)] * W;
            const T* r1 = plane + (*y1)[static_cast<size_t>(oy)] * W;
            const T fy = (*wy)[static_cast<size_t>(oy)];
            T* orow = oplane + oy * OW;
            for (int64_t ox = 0; ox < OW; ++ox) {
                const int64_t a = (*x0)[static_cast<size_t>(ox)], b = (*x1)[static_cast<size_t>(ox)];
                const T fx = (*wx)[static_cast<size_t>(ox)];
                const T top = r0[a] + fx * (r0[b] - r0[a]);
                const T bot = r1[a] + fx * (r1[b] - r1[a]);
                orow[ox] = top + fy * (bot - top);
            }
        }
    }
    auto& tp = Tape<T>::current();
    if (tp.recording() && tp.tracked(x)) {
        int64_t nx = tp.input_node(x);
        tp.add_node(out, {nx}, [=](const T* g, const std::vector<T*>& pg) {
            if (!pg[0]) return;
            for (int64_t bc = 0; bc < B * C; ++bc) {
                T* dplane = pg[0] + bc * H * W;
                const T* gplane = g + bc * OH * OW;
                for (int64_t oy = 0; oy < OH; ++oy) {
                    const int64_t ya = (*y0)[static_cast<size_t>(oy)], yb = (*y1)[static_cast<size_t>(oy)];
                    const T fy = (*wy)[static_cast<size_t>(oy)];
                    const T* grow = gplane + oy * OW;
                    for (int64_t ox = 0; ox < OW; ++ox) {
                        const int64_t xa = (*x0)[static_cast<size_t>(ox)], xb = (*x1)[static_cast<size_t>(ox)];
                        const T fx = (*wx)[static_cast<size_t>(ox)];
                        const T gv = grow[ox];
                        dplane[ya * W + xa] += gv * (T(1) - fy) * (T(1) - fx);
                        dplane[ya * W + xb] += gv * (T(1) - fy) * fx;
                        dplane[yb * W + xa] += gv * fy * (T(1) - fx);
                        dplane[yb * W + xb] += gv * fy * fx;
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.shape().back() != w.shape()[0])
        throw std::invalid_argument("linear: dim mismatch " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
    return add(matmul(x, w), b);
}

// ---- init ----

template <typename T>
Tensor<T> kaiming_normal(Shape shape, int64_t fan_in, Rng& rng) {
    T stddev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in)));
    return Tensor<T>::randn(std::move(shape), rng, stddev);
}

template <typename T>
Tensor<T> trunc_normal(Shape shape, T stddev, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(rng.truncated_normal(static_cast<double>(stddev)));
    return t;
}

// ---- Conv2dLayer ----

template <typename T>
Conv2dLayer<T>::Conv2dLayer(int64_t c_in, int64_t c_out, int64_t k, int64_t stride_, int64_t padding_, Rng& rng)
    : stride(stride_), padding(padding_) {
    weight = kaiming_normal<T>({c_out, c_in, k, k}, c_in * k * k, rng);
    weight.set_requires_grad();
    bias = Tensor<T>::zeros({c_out});
    bias.set_requires_grad();
}

template <typename T>
void Conv2dLayer<T>::visit_params(const std::string& prefix, const ParamFn<T>& fn) {
    fn(prefix + ".w", weight, true);
    fn(prefix + ".b", bias, true);
}

// ---- BatchNorm2dLayer ----

template <typename T>
BatchNorm2dLayer<T>::BatchNorm2dLayer(int64_t channels) {
    gamma = Tensor<T>::ones({channels});
    gamma.set_requires_grad();
    beta = Tensor<T>::zeros({channels});
    beta.set_requires_grad();
    running_mean = Tensor<T>::zeros({channels});
    running_var = Tensor<T>::ones({channels});
}

template <typename T>
Tensor<T> BatchNorm2dLayer<T>::forward(const Tensor<T>& x) {
    const Shape& xs = x.shape();
    if (xs.size() != 4) throw std::invalid_argument("batch_norm: expected [B,C,H,W]");
    const int64_t B = xs[0], C = xs[1], HW = xs[2] * xs[3];
    if (C != gamma.numel()) throw std::invalid_argument("batch_norm: channel mismatch");
    const int64_t M = B * HW;

    auto mu = std::make_shared<std::vector<T>>(static_cast<size_t>(C));
    auto inv = std::make_shared<std::vector<T>>(static_cast<size_t>(C));
    if (training) {
        if (M < 2) throw std::invalid_argument("batch_norm: training needs at least 2 elements per channel");
        for (int64_t c = 0; c < C; ++c) {
            T s = T(0);
            for (int64_t b = 0; b < B; ++b) {
                const T* p = x.ptr() + (b * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) s += p[i];
            }
            const T m = s / static_cast<T>(M);
            T v = T(0);
            for (int64_t b = 0; b < B; ++b) {
                const T* p = x.ptr() + (b * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) {
                    const T d = p[i] - m;
                    v += d * d;
                }
            }
            v /= static_cast<T>(M);  // biased, both for normalization and running update
            (*mu)[static_cast<size_t>(c)] = m;
            (*inv)[static_cast<size_t>(c)] = T(1) / std::sqrt(v + eps);
            running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * m;
            running_var[c] = (T(1) - momentum) * running_var[c] + momentum * v;
        }
    } else {
        for (int64_t c = 0; c < C; ++c) {
            (*mu)[static_cast<size_t>(c)] = running_mean[c];
            (*inv)[static_cast<size_t>(c)] = T(1) / std::sqrt(running_var[c] + eps);
        }
    }

    Tensor<T> out(xs);
    T* po = out.ptr();
    const T* px = x.ptr();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const T m = (*mu)[static_cast<size_t>(c)];
            const T iv = (*inv)[static_cast<size_t>(c)];
            const T gm = gamma[c], bt = beta[c];
            const T* p = px + (b * C + c) * HW;
            T* q = po + (b * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) q[i] = gm * ((p[i] - m) * iv) + bt;
        }

    if (rec3(x, gamma, beta)) {
        auto& tp = Tape<T>::current();
        int64_t nx = tp.input_node(x);
        int64_t ng = tp.input_node(gamma);
        int64_t nb = tp.input_node(beta);
        Tensor<T> xc = x, gc = gamma;
        const bool train_stats = training;
        tp.add_node(out, {nx, ng, nb},
                    [xc, gc, mu, inv, B, C, HW, M, train_stats](const T* g, const std::vector<T*>& pg) {
                        for (int64_t c = 0; c < C; ++c) {
                            const T m = (*mu)[static_cast<size_t>(c)];
                            const T iv = (*inv)[static_cast<size_t>(c)];
                            T sum_g = T(0), sum_gx = T(0);
                            for (int64_t b = 0; b < B; ++b) {
                                const T* gp = g + (b * C + c) * HW;
                                const T* xp = xc.ptr() + (b * C + c) * HW;
                                for (int64_t i = 0; i < HW; ++i) {
                                    sum_g += gp[i];
                                    sum_gx += gp[i] * (xp[i] - m) * iv;
                                }
                            }
                            if (pg[1]) pg[1][c] += sum_gx;
                            if (pg[2]) pg[2][c] += sum_g;
                            if (pg[0]) {
                                const T gm = gc[c];
                                if (train_stats) {
                                    const T mg = sum_g / static_cast<T>(M);
                                    const T mgx = sum_gx / static_cast<T>(M);
                                    for (int64_t b = 0; b < B; ++b) {
                                        const T* gp = g + (b * C + c) * HW;
                                        const T* xp = xc.ptr() + (b * C + c) * HW;
                                        T* dp = pg[0] + (b * C + c) * HW;
                                        for (int64_t i = 0; i < HW; ++i) {
                                            const T xh = (xp[i] - m) * iv;
                                            dp[i] += gm * iv * (gp[i] - mg - xh * mgx);
                                        }
                                    }
                                } else {
                                    const T scale = gm * iv;
                                    for (int64_t b = 0; b < B; ++b) {
                                        const T* gp = g + (b * C + c) * HW;
                                        T* dp = pg[0] + (b * C + c) * HW;
                                        for (int64_t i = 0; i < HW; ++i) dp[i] += scale * gp[i];
                                    }
                                }
                            }
                        }
                    });
    }
    return out;
}

template <typename T>
void BatchNorm2dLayer<T>::visit_params(const std::string& prefix, const ParamFn<T>& fn) {
    fn(prefix + ".gamma", gamma, true);
    fn(prefix + ".beta", beta, true);
    fn(prefix + ".running_mean", running_mean, false);
    fn(prefix + ".running_var", running_var, false);
}

// ---- LinearLayer ----

template <typename T>
LinearLayer<T>::LinearLayer(int64_t d_in, int64_t d_out, Rng& rng) {
    weight = kaiming_normal<T>({d_in, d_out}, d_in, rng);
    weight.set_requires_grad();
    bias = Tensor<T>::zeros({d_out});
    bias.set_requires_grad();
}

template <typename T>
void LinearLayer<T>::visit_params(const std::string& prefix, const ParamFn<T>& fn) {
    fn(prefix + ".w", weight, true);
    fn(prefix + ".b", bias, true);
}

// ---- LayerNormLayer ----

template <typename T>
LayerNormLayer<T>::LayerNormLayer(int64_t dim) {
    gamma = Tensor<T>::ones({dim});
    gamma.set_requires_grad();
    beta = Tensor<T>::zeros({dim});
    beta.set_requires_grad();
}

template <typename T>
Tensor<T> LayerNormLayer<T>::forward(const Tensor<T>& x) const {
    const int64_t D = gamma.numel();
    if (x.shape().back() != D) throw std::invalid_argument("layer_norm: last dim must be " + std::to_string(D));
    const int64_t R = x.numel() / D;

    auto mu = std::make_shared<std::vector<T>>(static_cast<size_t>(R));
    auto inv = std::make_shared<std::vector<T>>(static_cast<size_t>(R));
    Tensor<T> out(x.shape());
    const T* px = x.ptr();
    T* po = out.ptr();
    for (int64_t r = 0; r < R; ++r) {
        const T* xr = px + r * D;
        T s = T(0);
        for (int64_t i = 0; i < D; ++i) s += xr[i];
        const T m = s / static_cast<T>(D);
        T v = T(0);
        for (int64_t i = 0; i < D; ++i) {
            const T d = xr[i] - m;
            v += d * d;
        }
        v /= static_cast<T>(D);
        const T iv = T(1) / std::sqrt(v + eps);
        (*mu)[static_cast<size_t>(r)] = m;
        (*inv)[static_cast<size_t>(r)] = iv;
        T* yr = po + r * D;
        for (int64_t i = 0; i < D; ++i) yr[i] = gamma[i] * ((xr[i] - m) * iv) + beta[i];
    }

    if (rec3(x, gamma, beta)) {
        auto& tp = Tape<T>::current();
        int64_t nx = tp.input_node(x);
        int64_t ng = tp.input_node(gamma);
        int64_t nb = tp.input_node(beta);
        Tensor<T> xc = x, gc = gamma;
        tp.add_node(out, {nx, ng, nb}, [xc, gc, mu, inv, R, D](const T* g, const std::vector<T*>& pg) {
            for (int64_t r = 0; r < R; ++r) {
                const T m = (*mu)[static_cast<size_t>(r)];
                const T iv = (*inv)[static_cast<size_t>(r)];
                const T* gr = g + r * D;
                const T* xr = xc.ptr() + r * D;
                T sum_h = T(0), sum_hx = T(0);
                for (int64_t i = 0; i < D; ++i) {
                    const T xh = (xr[i] - m) * iv;
                    const T h = gr[i] * gc[i];
                    sum_h += h;
                    sum_hx += h * xh;
                    if (pg[1]) pg[1][i] += gr[i] * xh;
                    if (pg[2]) pg[2][i] += gr[i];
                }
                if (pg[0]) {
                    T* dr = pg[0] + r * D;
                    const T mh = sum_h / static_cast<T>(D);
                    const T mhx = sum_hx / static_cast<T>(D);
                    for (int64_t i = 0; i < D; ++i) {
                        const T xh = (xr[i] - m) * iv;
                        dr[i] += iv * (gr[i] * gc[i] - mh - xh * mhx);
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
void LayerNormLayer<T>::visit_params(const std::string& prefix, const ParamFn<T>& fn) {
    fn(prefix + ".gamma", gamma, true);
    fn(prefix + ".beta", beta, true);
}

// ---- AttentionLayer ----

template <typename T>
AttentionLayer<T>::AttentionLayer(int64_t dim, int64_t heads_, Rng& rng) : heads(heads_) {
    if (dim % heads_ != 0)
        throw std::invalid_argument("attention: dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads_));
    wq = LinearLayer<T>(dim, dim, rng);
    wk = LinearLayer<T>(dim, dim, rng);
    wv = LinearLayer<T>(dim, dim, rng);
    wo = LinearLayer<T>(dim, dim, rng);
}

template <typename T>
Tensor<T> AttentionLayer<T>::forward(const Tensor<T>& x) const {
    const Shape& xs = x.shape();
    if (xs.size() != 3) throw std::invalid_argument("attention: expected [B,N,D]");
    const int64_t B = xs[0], N = xs[1], D = xs[2];
    const int64_t hd = D / heads;

    auto split = [&](const Tensor<T>& t) {
        return transpose(reshape(t, {B, N, heads, hd}), {0, 2, 1, 3});  // [B,h,N,hd]
    };
    Tensor<T> q = split(wq.forward(x));
    Tensor<T> k = split(wk.forward(x));
    Tensor<T> v = split(wv.forward(x));
    Tensor<T> scores = mul_scalar(matmul(q, transpose(k, {0, 1, 3, 2})),
                                  static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd))));
    Tensor<T> attn = softmax_lastdim(scores);
    Tensor<T> ctx = reshape(transpose(matmul(attn, v), {0, 2, 1, 3}), {B, N, D});
    return wo.forward(ctx);
}

template <typename T>
void AttentionLayer<T>::visit_params(const std::string& prefix, const ParamFn<T>& fn) {
    wq.visit_params(prefix + ".q", fn);
    wk.visit_params(prefix + ".k", fn);
    wv.visit_params(prefix + ".v", fn);
    wo.visit_params(prefix + ".o", fn);
}

// ---- TransformerBlock ----

template <typename T>
TransformerBlock<T>::TransformerBlock(int64_t dim, int64_t heads, Rng& rng)
    : ln1(dim), ln2(dim), attn(dim, heads, rng), fc1(dim, 4 * dim, rng), fc2(4 * dim, dim, rng) {}

template <typename T>
Tensor<T> TransformerBlock<T>::forward(const Tensor<T>& x) const {
    Tensor<T> z = add(attn.forward(ln1.forward(x)), x);
    return add(fc2.forward(gelu(fc1.forward(ln2.forward(z)))), z);
}

template <typename T>
void TransformerBlock<T>::visit_params(const std::string& prefix, const ParamFn<T>& fn) {
    ln1.visit_params(prefix + ".ln1", fn);
    attn.visit_params(prefix + ".attn", fn);
    ln2.visit_params(prefix + ".ln2", fn);
    fc1.visit_params(prefix + ".mlp1", fn);
    fc2.visit_params(prefix + ".mlp2", fn);
}

// ---- instantiations ----

#define DCELANM_INSTANTIATE_NN(T)                                                                     \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int64_t, int64_t); \
    template Tensor<T> max_pool2d<T>(const Tensor<T>&);                                               \
    template Tensor<T> bilinear_up2<T>(const Tensor<T>&);                                             \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
    template Tensor<T> kaiming_normal<T>(Shape, int64_t, Rng&);                                       \
    template Tensor<T> trunc_normal<T>(Shape, T, Rng&);                                               \
    template struct Conv2dLayer<T>;                                                                   \
    template struct BatchNorm2dLayer<T>;                                                              \
    template struct LinearLayer<T>;                                                                   \
    template struct LayerNormLayer<T>;                                                                \
    template struct AttentionLayer<T>;                                                                \
    template struct TransformerBlock<T>;

DCELANM_INSTANTIATE_NN(float)
DCELANM_INSTANTIATE_NN(double)

}  // namespace dcelanm
