#include "dcelanm/objective.hpp"

#include <cmath>
#include <sstream>

namespace dcelanm {

namespace {

template <typename T>
void check_pair(const char* op, const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(pred.shape()) + " vs " +
                                    shape_str(target.shape()));
    for (int64_t i = 0; i < target.numel(); ++i) {
        const T v = target[i];
        if (v != T(0) && v != T(1))
            throw std::invalid_argument(std::string(op) + ": target must be binary, found " + std::to_string(double(v)) +
                                        " at index " + std::to_string(i));
    }
}

}  // namespace

template <typename T>
Tensor<T> tversky_coeff(const Tensor<T>& pred, const Tensor<T>& target, const TverskyParams& params,
                        const Tensor<T>* pixel_weights) {
    check_pair("tversky", pred, target);
    Tensor<T> g = target.detach();
    Tensor<T> ones_minus_g = add_scalar(neg(g), T(1));
    Tensor<T> p = pred;
    Tensor<T> pg = mul(p, g);
    Tensor<T> fp = mul(p, ones_minus_g);                      // |A - B| soft count
    Tensor<T> fn = mul(add_scalar(neg(p), T(1)), g);          // |B - A| soft count
    if (pixel_weights) {
        pg = mul(pg, *pixel_weights);
        fp = mul(fp, *pixel_weights);
        fn = mul(fn, *pixel_weights);
    }
    Tensor<T> inter = sum(pg);
    Tensor<T> numer = add_scalar(inter, static_cast<T>(params.smooth));
    Tensor<T> denom = add_scalar(
        add(inter, add(mul_scalar(sum(fp), static_cast<T>(params.alpha)), mul_scalar(sum(fn), static_cast<T>(params.beta)))),
        static_cast<T>(params.smooth));
    return divide(numer, denom);
}

template <typename T>
Tensor<T> tversky_loss(const Tensor<T>& pred, const Tensor<T>& target, const TverskyParams& params,
                       const Tensor<T>* pixel_weights) {
    return add_scalar(neg(tversky_coeff(pred, target, params, pixel_weights)), T(1));
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("mse_loss: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> d = sub(a, b);
    return mean(mul(d, d));
}

template <typename T>
Tensor<T> combined_loss(const Tensor<T>& seg_loss, const Tensor<T>& recon_loss, const LossWeights& weights) {
    return add(mul_scalar(seg_loss, static_cast<T>(weights.seg_weight)),
               mul_scalar(recon_loss, static_cast<T>(weights.recon_weight)));
}

template <typename T>
Tensor<T> boundary_weight_map(const Tensor<T>& target, int64_t k, double lambda) {
    const Shape& ts = target.shape();
    if (ts.size() != 4) throw std::invalid_argument("boundary_weight_map: expected [B,1,H,W]");
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("boundary_weight_map: k must be odd and positive");
    const int64_t B = ts[0], C = ts[1], H = ts[2], W = ts[3];
    const int64_t r = k / 2;
    Tensor<T> out(ts);
    // summed-area table per plane; clamped window near edges
    std::vector<double> sat(static_cast<size_t>((H + 1) * (W + 1)));
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* plane = target.ptr() + bc * H * W;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                sat[static_cast<size_t>((y + 1) * (W + 1) + x + 1)] =
                    static_cast<double>(plane[y * W + x]) + sat[static_cast<size_t>(y * (W + 1) + x + 1)] +
                    sat[static_cast<size_t>((y + 1) * (W + 1) + x)] - sat[static_cast<size_t>(y * (W + 1) + x)];
        T* o = out.ptr() + bc * H * W;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                const int64_t y0 = std::max<int64_t>(0, y - r), y1 = std::min<int64_t>(H - 1, y + r);
                const int64_t x0 = std::max<int64_t>(0, x - r), x1 = std::min<int64_t>(W - 1, x + r);
                const double s = sat[static_cast<size_t>((y1 + 1) * (W + 1) + x1 + 1)] -
                                 sat[static_cast<size_t>(y0 * (W + 1) + x1 + 1)] -
                                 sat[static_cast<size_t>((y1 + 1) * (W + 1) + x0)] +
                                 sat[static_cast<size_t>(y0 * (W + 1) + x0)];
                const double m = s / static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1));
                o[y * W + x] = static_cast<T>(1.0 + lambda * std::abs(m - static_cast<double>(plane[y * W + x])));
            }
    }
    return out;
}

std::string MetricReport::to_text() const {
    std::ostringstream os;
    os << "id\tdice\tiou\tprecision\n";
    for (size_t i = 0; i < dice.size(); ++i) {
        os << (i < ids.size() ? ids[i] : std::to_string(i)) << "\t" << dice[i] << "\t" << iou[i] << "\t"
           << precision[i] << "\n";
    }
    os << "threshold\t" << threshold << "\n";
    os << "mDice\t" << mdice << "\n";
    os << "mIOU\t" << miou << "\n";
    os << "mPre\t" << mpre << "\n";
    return os.str();
}

template <typename T>
MetricReport metrics(const Tensor<T>& pred_batch, const Tensor<T>& target_batch, double threshold,
                     const std::vector<std::string>& ids) {
    check_pair("metrics", pred_batch, target_batch);
    const Shape& s = pred_batch.shape();
    if (s.size() != 4) throw std::invalid_argument("metrics: expected [B,1,H,W]");
    const int64_t B = s[0];
    const int64_t plane = s[1] * s[2] * s[3];

    MetricReport rep;
    rep.threshold = threshold;
    for (int64_t b = 0; b < B; ++b) {
        const T* p = pred_batch.ptr() + b * plane;
        const T* g = target_batch.ptr() + b * plane;
        int64_t tp = 0, fp = 0, fn = 0;
        for (int64_t i = 0; i < plane; ++i) {
            const bool pb = static_cast<double>(p[i]) > threshold;
            const bool gb = g[i] == T(1);
            tp += pb && gb;
            fp += pb && !gb;
            fn += !pb && gb;
        }
        // empty-vs-empty counts as a perfect score; a one-sided empty is 0
        const double dice = (2 * tp + fp + fn) == 0 ? 1.0 : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
        const double iou = (tp + fp + fn) == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
        double pre;
        if (tp + fp == 0)
            pre = fn == 0 ? 1.0 : 0.0;
        else
            pre = static_cast<double>(tp) / static_cast<double>(tp + fp);
        rep.dice.push_back(dice);
        rep.iou.push_back(iou);
        rep.precision.push_back(pre);
        rep.ids.push_back(b < static_cast<int64_t>(ids.size()) ? ids[static_cast<size_t>(b)] : std::to_string(b));
    }
    auto mean_of = [](const std::vector<double>& v) {
        double s0 = 0;
        for (double x : v) s0 += x;
        return v.empty() ? 0.0 : s0 / static_cast<double>(v.size());
    };
    rep.mdice = mean_of(rep.dice);
    rep.miou = mean_of(rep.iou);
    rep.mpre = mean_of(rep.precision);
    return rep;
}

#define DCELANM_INSTANTIATE_OBJECTIVE(T)                                                                          \
    template Tensor<T> tversky_coeff<T>(const Tensor<T>&, const Tensor<T>&, const TverskyParams&, const Tensor<T>*); \
    template Tensor<T> tversky_loss<T>(const Tensor<T>&, const Tensor<T>&, const TverskyParams&, const Tensor<T>*);  \
    template Tensor<T> mse_loss<T>(const Tensor<T>&, const Tensor<T>&);                                           \
    template Tensor<T> combined_loss<T>(const Tensor<T>&, const Tensor<T>&, const LossWeights&);                  \
    template Tensor<T> boundary_weight_map<T>(const Tensor<T>&, int64_t, double);                                 \
    template MetricReport metrics<T>(const Tensor<T>&, const Tensor<T>&, double, const std::vector<std::string>&);

DCELANM_INSTANTIATE_OBJECTIVE(float)
DCELANM_INSTANTIATE_OBJECTIVE(double)

}  // namespace dcelanm
