#include "dcelanm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "dcelanm/gemm.hpp"

namespace dcelanm {

namespace {

// ---- broadcast helpers (trailing-axes rule, b into a) ----

template <typename T>
std::vector<int64_t> bcast_strides(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (bs.size() > as.size())
        throw std::invalid_argument(std::string(op) + ": cannot broadcast " + shape_str(bs) + " into " + shape_str(as));
    std::vector<int64_t> bstr(as.size(), 0);
    int64_t stride = 1;
    // walk from the trailing axis; compute b's stride per aligned axis
    for (int64_t d = static_cast<int64_t>(bs.size()) - 1; d >= 0; --d) {
        int64_t ad = as[as.size() - bs.size() + static_cast<size_t>(d)];
        int64_t bd = bs[static_cast<size_t>(d)];
        if (bd != ad && bd != 1)
            throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(as) + " vs " + shape_str(bs));
        bstr[as.size() - bs.size() + static_cast<size_t>(d)] = (bd == 1) ? 0 : stride;
        stride *= bd;
    }
    return bstr;
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// odometer advance tracking a secondary offset
struct Odo {
    const Shape* shape;
    const std::vector<int64_t>* str;
    std::vector<int64_t> idx;
    int64_t off = 0;

    Odo(const Shape& s, const std::vector<int64_t>& st) : shape(&s), str(&st), idx(s.size(), 0) {}

    void advance() {
        for (int64_t d = static_cast<int64_t>(shape->size()) - 1; d >= 0; --d) {
            auto du = static_cast<size_t>(d);
            ++idx[du];
            off += (*str)[du];
            if (idx[du] < (*shape)[du]) return;
            off -= (*str)[du] * (*shape)[du];
            idx[du] = 0;
        }
    }
};

template <typename T>
bool want_record(const Tensor<T>& a) {
    auto& tp = Tape<T>::current();
    return tp.recording() && tp.tracked(a);
}
template <typename T>
bool want_record(const Tensor<T>& a, const Tensor<T>& b) {
    auto& tp = Tape<T>::current();
    return tp.recording() && (tp.tracked(a) || tp.tracked(b));
}

// ---- generic elementwise drivers ----

// Fwd: y = f(a, b); DfA/DfB: partials given (a, b, y).
template <typename T, typename Fwd, typename DfA, typename DfB>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, Fwd f, DfA dfa, DfB dfb) {
    Tensor<T> out(a.shape());
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    const int64_t n = a.numel();
    const bool flat = same_shape(a.shape(), b.shape());
    std::vector<int64_t> bstr;
    if (flat) {
        for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    } else {
        bstr = bcast_strides(name, a, b);
        Odo it(a.shape(), bstr);
        for (int64_t i = 0; i < n; ++i, it.advance()) po[i] = f(pa[i], pb[it.off]);
    }
    if (want_record(a, b)) {
        auto& tp = Tape<T>::current();
        int64_t na = tp.input_node(a);
        int64_t nb = tp.input_node(b);
        Tensor<T> ac = a, bc = b, oc = out;
        tp.add_node(out, {na, nb},
                    [ac, bc, oc, flat, bstr, dfa, dfb](const T* g, const std::vector<T*>& pg) {
                        const T* pa = ac.ptr();
                        const T* pb = bc.ptr();
                        const T* py = oc.ptr();
                        const int64_t n = ac.numel();
                        if (flat) {
                            if (pg[0])
                                for (int64_t i = 0; i < n; ++i) pg[0][i] += g[i] * dfa(pa[i], pb[i], py[i]);
                            if (pg[1])
                                for (int64_t i = 0; i < n; ++i) pg[1][i] += g[i] * dfb(pa[i], pb[i], py[i]);
                        } else {
                            Odo it(ac.shape(), bstr);
                            for (int64_t i = 0; i < n; ++i, it.advance()) {
                                if (pg[0]) pg[0][i] += g[i] * dfa(pa[i], pb[it.off], py[i]);
                                if (pg[1]) pg[1][it.off] += g[i] * dfb(pa[i], pb[it.off], py[i]);
                            }
                        }
                    });
    }
    return out;
}

template <typename T, typename Fwd, typename Df>
Tensor<T> unary_op(const Tensor<T>& a, Fwd f, Df df) {
    Tensor<T> out(a.shape());
    const T* pa = a.ptr();
    T* po = out.ptr();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
    if (want_record(a)) {
        auto& tp = Tape<T>::current();
        int64_t na = tp.input_node(a);
        Tensor<T> ac = a, oc = out;
        tp.add_node(out, {na}, [ac, oc, df](const T* g, const std::vector<T*>& pg) {
            if (!pg[0]) return;
            const T* pa = ac.ptr();
            const T* py = oc.ptr();
            const int64_t n = ac.numel();
            for (int64_t i = 0; i < n; ++i) pg[0][i] += g[i] * df(pa[i], py[i]);
        });
    }
    return out;
}

template <typename T>
inline T sigmoid_val(T x) {
    return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : [&] {
        T e = std::exp(x);
        return e / (T(1) + e);
    }();
}

}  // namespace

// ---- elementwise ----

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
        [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
        [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
        [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
        [](T, T y, T out) { return -out / y; });
}

template <typename T>
Tensor<T> pow_elem(const Tensor<T>& a, const Tensor<T>& b) {
    // gradient wrt the exponent requires a > 0
    return binary_op(
        "pow", a, b, [](T x, T y) { return std::pow(x, y); },
        [](T x, T y, T) { return y * std::pow(x, y - T(1)); },
        [](T x, T, T out) { return out * std::log(x); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    return unary_op(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
    return unary_op(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> pow_scalar(const Tensor<T>& a, T s) {
    return unary_op(a, [s](T x) { return std::pow(x, s); },
                    [s](T x, T) { return s * std::pow(x, s - T(1)); });
}

template <typename T>
Tensor<T> rdiv_scalar(T s, const Tensor<T>& a) {
    return unary_op(a, [s](T x) { return s / x; }, [](T x, T y) { return -y / x; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
    return unary_op(a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> exp_elem(const Tensor<T>& a) {
    return unary_op(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log_elem(const Tensor<T>& a) {
    return unary_op(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> sqrt_elem(const Tensor<T>& a) {
    return unary_op(a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(1) / (T(2) * y); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return unary_op(a, [](T x) { return sigmoid_val(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
    return unary_op(a, [](T x) { return x * sigmoid_val(x); },
                    [](T x, T) {
                        T s = sigmoid_val(x);
                        return s * (T(1) + x * (T(1) - s));
                    });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return unary_op(a,
                    [](T x) { return T(0.5) * x * (T(1) + static_cast<T>(std::erf(static_cast<double>(x) * inv_sqrt2))); },
                    [](T x, T) {
                        double xd = static_cast<double>(x);
                        double cdf = 0.5 * (1.0 + std::erf(xd * inv_sqrt2));
                        double pdf = inv_sqrt2pi * std::exp(-0.5 * xd * xd);
                        return static_cast<T>(cdf + xd * pdf);
                    });
}

// ---- matmul ----

namespace {

struct MmPlan {
    int64_t m, k, n, batches;
    std::vector<int64_t> a_off, b_off, o_off;  // per-batch element offsets
};

template <typename T>
MmPlan mm_plan(const Tensor<T>& a, const Tensor<T>& b, Shape& out_shape) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2 || bs.size() < 2) throw std::invalid_argument("matmul: operands must have rank >= 2");
    MmPlan p;
    p.m = as[as.size() - 2];
    p.k = as[as.size() - 1];
    int64_t bk = bs[bs.size() - 2];
    p.n = bs[bs.size() - 1];
    if (p.k != bk)
        throw std::invalid_argument("matmul: inner dims mismatch " + shape_str(as) + " vs " + shape_str(bs));

    Shape abatch(as.begin(), as.end() - 2), bbatch(bs.begin(), bs.end() - 2);
    size_t br = std::max(abatch.size(), bbatch.size());
    Shape obatch(br, 1);
    for (size_t i = 0; i < br; ++i) {
        int64_t ad = i < br - abatch.size() ? 1 : abatch[i - (br - abatch.size())];
        int64_t bd = i < br - bbatch.size() ? 1 : bbatch[i - (br - bbatch.size())];
        if (ad != bd && ad != 1 && bd != 1)
            throw std::invalid_argument("matmul: batch dims mismatch " + shape_str(as) + " vs " + shape_str(bs));
        obatch[i] = std::max(ad, bd);
    }
    out_shape = obatch;
    out_shape.push_back(p.m);
    out_shape.push_back(p.n);

    p.batches = shape_numel(obatch);
    p.a_off.resize(static_cast<size_t>(p.batches));
    p.b_off.resize(static_cast<size_t>(p.batches));
    p.o_off.resize(static_cast<size_t>(p.batches));
    // batch odometer with per-operand strides (0 where broadcast)
    std::vector<int64_t> astr(br, 0), bstr(br, 0);
    int64_t sa = p.m * p.k, sb = bk * p.n;
    for (int64_t i = static_cast<int64_t>(br) - 1; i >= 0; --i) {
        size_t iu = static_cast<size_t>(i);
        if (iu >= br - abatch.size()) {
            int64_t d = abatch[iu - (br - abatch.size())];
            astr[iu] = d == 1 ? 0 : sa;
            sa *= d;
        }
        if (iu >= br - bbatch.size()) {
            int64_t d = bbatch[iu - (br - bbatch.size())];
            bstr[iu] = d == 1 ? 0 : sb;
            sb *= d;
        }
    }
    Odo ia(obatch, astr), ib(obatch, bstr);
    for (int64_t t = 0; t < p.batches; ++t, ia.advance(), ib.advance()) {
        p.a_off[static_cast<size_t>(t)] = ia.off;
        p.b_off[static_cast<size_t>(t)] = ib.off;
        p.o_off[static_cast<size_t>(t)] = t * p.m * p.n;
    }
    return p;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    Shape out_shape;
    MmPlan p = mm_plan(a, b, out_shape);
    Tensor<T> out(out_shape);
    for (int64_t t = 0; t < p.batches; ++t) {
        gemm_nn(p.m, p.n, p.k, a.ptr() + p.a_off[static_cast<size_t>(t)], p.k,
                b.ptr() + p.b_off[static_cast<size_t>(t)], p.n, out.ptr() + p.o_off[static_cast<size_t>(t)], p.n);
    }
    if (want_record(a, b)) {
        auto& tp = Tape<T>::current();
        int64_t na = tp.input_node(a);
        int64_t nb = tp.input_node(b);
        Tensor<T> ac = a, bc = b;
        tp.add_node(out, {na, nb}, [ac, bc, p](const T* g, const std::vector<T*>& pg) {
            for (int64_t t = 0; t < p.batches; ++t) {
                auto tu = static_cast<size_t>(t);
                const T* gp = g + p.o_off[tu];
                if (pg[0])  // dA += G * B^T
                    gemm_nt(p.m, p.k, p.n, gp, p.n, bc.ptr() + p.b_off[tu], p.n, pg[0] + p.a_off[tu], p.k);
                if (pg[1])  // dB += A^T * G
                    gemm_tn(p.k, p.n, p.m, ac.ptr() + p.a_off[tu], p.k, gp, p.n, pg[1] + p.b_off[tu], p.n);
            }
        });
    }
    return out;
}

// ---- reductions ----

namespace {

struct ReducePlan {
    Shape out_shape;
    std::vector<int64_t> ostr;  // per input-axis stride into the output
    int64_t count = 1;          // elements reduced per output cell
};

ReducePlan reduce_plan(const Shape& xs, std::vector<int64_t>& axes, bool keepdim) {
    const int64_t r = static_cast<int64_t>(xs.size());
    if (axes.empty())
        for (int64_t d = 0; d < r; ++d) axes.push_back(d);
    std::vector<char> red(static_cast<size_t>(r), 0);
    for (int64_t ax : axes) {
        if (ax < 0 || ax >= r) throw std::invalid_argument("reduce: invalid axis " + std::to_string(ax) + " for shape " + shape_str(xs));
        if (red[static_cast<size_t>(ax)]) throw std::invalid_argument("reduce: duplicate axis " + std::to_string(ax));
        red[static_cast<size_t>(ax)] = 1;
    }
    ReducePlan p;
    Shape kept;  // out shape with reduced dims as 1 (for stride math)
    for (int64_t d = 0; d < r; ++d) {
        auto du = static_cast<size_t>(d);
        if (red[du]) {
            p.count *= xs[du];
            kept.push_back(1);
            if (keepdim) p.out_shape.push_back(1);
        } else {
            kept.push_back(xs[du]);
            p.out_shape.push_back(xs[du]);
        }
    }
    if (p.out_shape.empty()) p.out_shape.push_back(1);
    p.ostr.assign(static_cast<size_t>(r), 0);
    int64_t s = 1;
    for (int64_t d = r - 1; d >= 0; --d) {
        auto du = static_cast<size_t>(d);
        p.ostr[du] = kept[du] == 1 ? 0 : s;
        s *= kept[du];
    }
    return p;
}

}  // namespace

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::vector<int64_t> axes, bool keepdim) {
    ReducePlan p = reduce_plan(x.shape(), axes, keepdim);
    Tensor<T> out(p.out_shape);
    T* po = out.ptr();
    const T* px = x.ptr();
    Odo it(x.shape(), p.ostr);
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i, it.advance()) po[it.off] += px[i];
    if (want_record(x)) {
        auto& tp = Tape<T>::current();
        int64_t nx = tp.input_node(x);
        Shape xs = x.shape();
        tp.add_node(out, {nx}, [xs, p, n](const T* g, const std::vector<T*>& pg) {
            if (!pg[0]) return;
            Odo it(xs, p.ostr);
            for (int64_t i = 0; i < n; ++i, it.advance()) pg[0][i] += g[it.off];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::vector<int64_t> axes, bool keepdim) {
    ReducePlan p = reduce_plan(x.shape(), axes, keepdim);
    Tensor<T> out(p.out_shape);
    T* po = out.ptr();
    const T* px = x.ptr();
    Odo it(x.shape(), p.ostr);
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i, it.advance()) po[it.off] += px[i];
    const T inv = T(1) / static_cast<T>(p.count);
    for (int64_t i = 0; i < out.numel(); ++i) po[i] *= inv;
    if (want_record(x)) {
        auto& tp = Tape<T>::current();
        int64_t nx = tp.input_node(x);
        Shape xs = x.shape();
        tp.add_node(out, {nx}, [xs, p, n, inv](const T* g, const std::vector<T*>& pg) {
            if (!pg[0]) return;
            Odo it(xs, p.ostr);
            for (int64_t i = 0; i < n; ++i, it.advance()) pg[0][i] += g[it.off] * inv;
        });
    }
    return out;
}

template <typename T>
Tensor<T> max_reduce(const Tensor<T>& x, std::vector<int64_t> axes, bool keepdim) {
    ReducePlan p = reduce_plan(x.shape(), axes, keepdim);
    Tensor<T> out = Tensor<T>::full(p.out_shape, std::numeric_limits<T>::lowest());
    auto arg = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.numel()), int64_t(-1));
    T* po = out.ptr();
    const T* px = x.ptr();
    Odo it(x.shape(), p.ostr);
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i, it.advance()) {
        if (px[i] > po[it.off]) {  // strict: first occurrence wins ties
            po[it.off] = px[i];
            (*arg)[static_cast<size_t>(it.off)] = i;
        }
    }
    if (want_record(x)) {
        auto& tp = Tape<T>::current();
        int64_t nx = tp.input_node(x);
        tp.add_node(out, {nx}, [arg](const T* g, const std::vector<T*>& pg) {
            if (!pg[0]) return;
            for (size_t o = 0; o < arg->size(); ++o) pg[0][(*arg)[o]] += g[o];
        });
    }
    return out;
}

// ---- shape ops ----

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    check_shape_valid(new_shape);
    if (shape_numel(new_shape) != x.numel())
        throw std::invalid_argument("reshape: element count mismatch " + shape_str(x.shape()) + " -> " + shape_str(new_shape));
    Tensor<T> out(new_shape, x.data());
    if (want_record(x)) {
        auto& tp = Tape<T>::current();
        int64_t nx = tp.input_node(x);
        int64_t n = x.numel();
        tp.add_node(out, {nx}, [n](const T* g, const std::vector<T*>& pg) {
            if (!pg[0]) return;
            for (int64_t i = 0; i < n; ++i) pg[0][i] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::vector<int64_t> perm) {
    const Shape& xs = x.shape();
    const int64_t r = static_cast<int64_t>(xs.size());
    if (static_cast<int64_t>(perm.size()) != r) throw std::invalid_argument("transpose: perm rank mismatch");
    std::vector<char> seen(static_cast<size_t>(r), 0);
    Shape os(static_cast<size_t>(r));
    for (int64_t d = 0; d < r; ++d) {
        int64_t p = perm[static_cast<size_t>(d)];
        if (p < 0 || p >= r || seen[static_cast<size_t>(p)]) throw std::invalid_argument("transpose: invalid permutation");
        seen[static_cast<size_t>(p)] = 1;
        os[static_cast<size_t>(d)] = xs[static_cast<size_t>(p)];
    }
    // source strides arranged in output-axis order
    std::vector<int64_t> xstr(static_cast<size_t>(r), 1);
    for (int64_t d = r - 2; d >= 0; --d)
        xstr[static_cast<size_t>(d)] = xstr[static_cast<size_t>(d + 1)] * xs[static_cast<size_t>(d + 1)];
    std::vector<int64_t> sstr(static_cast<size_t>(r));
    for (int64_t d = 0; d < r; ++d) sstr[static_cast<size_t>(d)] = xstr[static_cast<size_t>(perm[static_cast<size_t>(d)])];

    Tensor<T> out(os);
    T* po = out.ptr();
    const T* px = x.ptr();
    Odo it(os, sstr);
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i, it.advance()) po[i] = px[it.off];
    if (want_record(x)) {
        auto& tp = Tape<T>::current();
        int64_t nx = tp.input_node(x);
        tp.add_node(out, {nx}, [os, sstr, n](const T* g, const std::vector<T*>& pg) {
            if (!pg[0]) return;
            Odo it(os, sstr);
            for (int64_t i = 0; i < n; ++i, it.advance()) pg[0][it.off] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int64_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    const int64_t r = static_cast<int64_t>(s0.size());
    if (axis < 0 || axis >= r) throw std::invalid_argument("concat: invalid axis");
    int64_t axis_total = 0;
    for (const auto& p : parts) {
        const Shape& ps = p.shape();
        if (static_cast<int64_t>(ps.size()) != r) throw std::invalid_argument("concat: rank mismatch");
        for (int64_t d = 0; d < r; ++d)
            if (d != axis && ps[static_cast<size_t>(d)] != s0[static_cast<size_t>(d)])
                throw std::invalid_argument("concat: non-axis dims differ: " + shape_str(s0) + " vs " + shape_str(ps));
        axis_total += ps[static_cast<size_t>(axis)];
    }
    Shape os = s0;
    os[static_cast<size_t>(axis)] = axis_total;
    int64_t outer = 1, inner = 1;
    for (int64_t d = 0; d < axis; ++d) outer *= s0[static_cast<size_t>(d)];
    for (int64_t d = axis + 1; d < r; ++d) inner *= s0[static_cast<size_t>(d)];

    Tensor<T> out(os);
    std::vector<int64_t> chunk(parts.size());
    for (size_t pi = 0; pi < parts.size(); ++pi)
        chunk[pi] = parts[pi].shape()[static_cast<size_t>(axis)] * inner;
    const int64_t row = axis_total * inner;
    T* po = out.ptr();
    for (int64_t o = 0; o < outer; ++o) {
        int64_t at = 0;
        for (size_t pi = 0; pi < parts.size(); ++pi) {
            std::memcpy(po + o * row + at, parts[pi].ptr() + o * chunk[pi], sizeof(T) * static_cast<size_t>(chunk[pi]));
            at += chunk[pi];
        }
    }
    auto& tp = Tape<T>::current();
    bool rec = tp.recording();
    bool any = false;
    if (rec)
        for (const auto& p : parts) any = any || tp.tracked(p);
    if (any) {
        std::vector<int64_t> nodes;
        for (const auto& p : parts) nodes.push_back(tp.input_node(p));
        tp.add_node(out, nodes, [outer, row, chunk](const T* g, const std::vector<T*>& pg) {
            for (int64_t o = 0; o < outer; ++o) {
                int64_t at = 0;
                for (size_t pi = 0; pi < chunk.size(); ++pi) {
                    if (pg[pi]) {
                        const T* gs = g + o * row + at;
                        T* gd = pg[pi] + o * chunk[pi];
                        for (int64_t i = 0; i < chunk[pi]; ++i) gd[i] += gs[i];
                    }
                    at += chunk[pi];
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int64_t axis, int64_t start, int64_t len) {
    const Shape& xs = x.shape();
    const int64_t r = static_cast<int64_t>(xs.size());
    if (axis < 0 || axis >= r) throw std::invalid_argument("slice: invalid axis");
    if (start < 0 || len < 1 || start + len > xs[static_cast<size_t>(axis)])
        throw std::invalid_argument("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                                    ") out of bounds for " + shape_str(xs));
    Shape os = xs;
    os[static_cast<size_t>(axis)] = len;
    int64_t outer = 1, inner = 1;
    for (int64_t d = 0; d < axis; ++d) outer *= xs[static_cast<size_t>(d)];
    for (int64_t d = axis + 1; d < r; ++d) inner *= xs[static_cast<size_t>(d)];
    const int64_t xrow = xs[static_cast<size_t>(axis)] * inner;
    const int64_t orow = len * inner;
    const int64_t off = start * inner;

    Tensor<T> out(os);
    for (int64_t o = 0; o < outer; ++o)
        std::memcpy(out.ptr() + o * orow, x.ptr() + o * xrow + off, sizeof(T) * static_cast<size_t>(orow));
    if (want_record(x)) {
        auto& tp = Tape<T>::current();
        int64_t nx = tp.input_node(x);
        tp.add_node(out, {nx}, [outer, xrow, orow, off](const T* g, const std::vector<T*>& pg) {
            if (!pg[0]) return;
            for (int64_t o = 0; o < outer; ++o) {
                T* gd = pg[0] + o * xrow + off;
                const T* gs = g + o * orow;
                for (int64_t i = 0; i < orow; ++i) gd[i] += gs[i];
            }
        });
    }
    return out;
}

namespace {

template <typename T>
void copy_region(const T* src, const Shape& ss, T* dst, const Shape& ds,
                 const std::vector<int64_t>& dst_off, bool add_to_dst) {
    // copy the whole src block into dst at dst_off (shapes: src fits)
    const int64_t r = static_cast<int64_t>(ss.size());
    std::vector<int64_t> dstr(static_cast<size_t>(r), 1);
    for (int64_t d = r - 2; d >= 0; --d)
        dstr[static_cast<size_t>(d)] = dstr[static_cast<size_t>(d + 1)] * ds[static_cast<size_t>(d + 1)];
    int64_t base = 0;
    for (int64_t d = 0; d < r; ++d) base += dst_off[static_cast<size_t>(d)] * dstr[static_cast<size_t>(d)];
    const int64_t rowlen = ss[static_cast<size_t>(r - 1)];
    const int64_t rows = shape_numel(ss) / rowlen;
    Shape rowshape(ss.begin(), ss.end() - 1);
    if (rowshape.empty()) rowshape.push_back(1);
    std::vector<int64_t> rowstr(dstr.begin(), dstr.end() - 1);
    if (rowstr.empty()) rowstr.push_back(0);
    Odo it(rowshape, rowstr);
    for (int64_t rix = 0; rix < rows; ++rix, it.advance()) {
        T* d = dst + base + it.off;
        const T* s = src + rix * rowlen;
        if (add_to_dst)
            for (int64_t i = 0; i < rowlen; ++i) d[i] += s[i];
        else
            std::memcpy(d, s, sizeof(T) * static_cast<size_t>(rowlen));
    }
}

template <typename T>
void copy_region_out(const T* src, const Shape& ss, const std::vector<int64_t>& src_off, T* dst,
                     const Shape& ds, bool add_to_dst) {
    // gather the dst-shaped block at src_off out of src
    const int64_t r = static_cast<int64_t>(ss.size());
    std::vector<int64_t> sstr(static_cast<size_t>(r), 1);
    for (int64_t d = r - 2; d >= 0; --d)
        sstr[static_cast<size_t>(d)] = sstr[static_cast<size_t>(d + 1)] * ss[static_cast<size_t>(d + 1)];
    int64_t base = 0;
    for (int64_t d = 0; d < r; ++d) base += src_off[static_cast<size_t>(d)] * sstr[static_cast<size_t>(d)];
    const int64_t rowlen = ds[static_cast<size_t>(r - 1)];
    const int64_t rows = shape_numel(ds) / rowlen;
    Shape rowshape(ds.begin(), ds.end() - 1);
    if (rowshape.empty()) rowshape.push_back(1);
    std::vector<int64_t> rowstr(sstr.begin(), sstr.end() - 1);
    if (rowstr.empty()) rowstr.push_back(0);
    Odo it(rowshape, rowstr);
    for (int64_t rix = 0; rix < rows; ++rix, it.advance()) {
        const T* s = src + base + it.off;
        T* d = dst + rix * rowlen;
        if (add_to_dst)
            for (int64_t i = 0; i < rowlen; ++i) d[i] += s[i];
        else
            std::memcpy(d, s, sizeof(T) * static_cast<size_t>(rowlen));
    }
}

inline void check_pad_spec(const Shape& xs, const std::vector<std::pair<int64_t, int64_t>>& lohi, const char* op) {
    if (lohi.size() != xs.size()) throw std::invalid_argument(std::string(op) + ": spec rank mismatch");
    for (auto& [lo, hi] : lohi)
        if (lo < 0 || hi < 0) throw std::invalid_argument(std::string(op) + ": negative amounts");
}

}  // namespace

template <typename T>
Tensor<T> pad(const Tensor<T>& x, const std::vector<std::pair<int64_t, int64_t>>& lohi) {
    const Shape& xs = x.shape();
    check_pad_spec(xs, lohi, "pad");
    Shape os(xs.size());
    std::vector<int64_t> off(xs.size());
    for (size_t d = 0; d < xs.size(); ++d) {
        os[d] = xs[d] + lohi[d].first + lohi[d].second;
        off[d] = lohi[d].first;
    }
    Tensor<T> out(os);
    copy_region(x.ptr(), xs, out.ptr(), os, off, false);
    if (want_record(x)) {
        auto& tp = Tape<T>::current();
        int64_t nx = tp.input_node(x);
        Shape xss = xs;
        tp.add_node(out, {nx}, [xss, os, off](const T* g, const std::vector<T*>& pg) {
            if (!pg[0]) return;
            copy_region_out(g, os, off, pg[0], xss, true);
        });
    }
    return out;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& x, const std::vector<std::pair<int64_t, int64_t>>& lohi) {
    const Shape& xs = x.shape();
    check_pad_spec(xs, lohi, "crop");
    Shape os(xs.size());
    std::vector<int64_t> off(xs.size());
    for (size_t d = 0; d < xs.size(); ++d) {
        os[d] = xs[d] - lohi[d].first - lohi[d].second;
        if (os[d] < 1) throw std::invalid_argument("crop: amounts exceed dim " + std::to_string(d));
        off[d] = lohi[d].first;
    }
    Tensor<T> out(os);
    copy_region_out(x.ptr(), xs, off, out.ptr(), os, false);
    if (want_record(x)) {
        auto& tp = Tape<T>::current();
        int64_t nx = tp.input_node(x);
        Shape xss = xs;
        tp.add_node(out, {nx}, [xss, os, off](const T* g, const std::vector<T*>& pg) {
            if (!pg[0]) return;
            copy_region(g, os, pg[0], xss, off, true);
        });
    }
    return out;
}

template <typename T>
Tensor<T> take_tokens(const Tensor<T>& x, const std::vector<int64_t>& idx, int64_t m) {
    const Shape& xs = x.shape();
    if (xs.size() != 3) throw std::invalid_argument("take_tokens: expected rank-3 [B,N,D], got " + shape_str(xs));
    const int64_t B = xs[0], N = xs[1], D = xs[2];
    if (static_cast<int64_t>(idx.size()) != B * m) throw std::invalid_argument("take_tokens: index count mismatch");
    for (int64_t v : idx)
        if (v < 0 || v >= N) throw std::invalid_argument("take_tokens: index out of range");
    Tensor<T> out({B, m, D});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t j = 0; j < m; ++j)
            std::memcpy(out.ptr() + (b * m + j) * D, x.ptr() + (b * N + idx[static_cast<size_t>(b * m + j)]) * D,
                        sizeof(T) * static_cast<size_t>(D));
    if (want_record(x)) {
        auto& tp = Tape<T>::current();
        int64_t nx = tp.input_node(x);
        auto ixc = std::make_shared<std::vector<int64_t>>(idx);
        tp.add_node(out, {nx}, [ixc, B, N, D, m](const T* g, const std::vector<T*>& pg) {
            if (!pg[0]) return;
            for (int64_t b = 0; b < B; ++b)
                for (int64_t j = 0; j < m; ++j) {
                    T* gd = pg[0] + (b * N + (*ixc)[static_cast<size_t>(b * m + j)]) * D;
                    const T* gs = g + (b * m + j) * D;
                    for (int64_t i = 0; i < D; ++i) gd[i] += gs[i];
                }
        });
    }
    return out;
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
    const Shape& xs = x.shape();
    const int64_t D = xs.back();
    const int64_t R = x.numel() / D;
    Tensor<T> out(xs);
    const T* px = x.ptr();
    T* po = out.ptr();
    for (int64_t r = 0; r < R; ++r) {
        const T* xr = px + r * D;
        T* yr = po + r * D;
        T mx = xr[0];
        for (int64_t i = 1; i < D; ++i) mx = std::max(mx, xr[i]);
        T s = T(0);
        for (int64_t i = 0; i < D; ++i) {
            yr[i] = std::exp(xr[i] - mx);
            s += yr[i];
        }
        const T inv = T(1) / s;
        for (int64_t i = 0; i < D; ++i) yr[i] *= inv;
    }
    if (want_record(x)) {
        auto& tp = Tape<T>::current();
        int64_t nx = tp.input_node(x);
        Tensor<T> oc = out;
        tp.add_node(out, {nx}, [oc, R, D](const T* g, const std::vector<T*>& pg) {
            if (!pg[0]) return;
            const T* py = oc.ptr();
            for (int64_t r = 0; r < R; ++r) {
                const T* yr = py + r * D;
                const T* gr = g + r * D;
                T dot = T(0);
                for (int64_t i = 0; i < D; ++i) dot += gr[i] * yr[i];
                T* gd = pg[0] + r * D;
                for (int64_t i = 0; i < D; ++i) gd[i] += yr[i] * (gr[i] - dot);
            }
        });
    }
    return out;
}

// ---- explicit instantiations ----

#define DCELANM_INSTANTIATE_OPS(T)                                                                      \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> divide<T>(const Tensor<T>&, const Tensor<T>&);                                   \
    template Tensor<T> pow_elem<T>(const Tensor<T>&, const Tensor<T>&);                                 \
    template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                              \
    template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                                              \
    template Tensor<T> pow_scalar<T>(const Tensor<T>&, T);                                              \
    template Tensor<T> rdiv_scalar<T>(T, const Tensor<T>&);                                             \
    template Tensor<T> neg<T>(const Tensor<T>&);                                                        \
    template Tensor<T> exp_elem<T>(const Tensor<T>&);                                                   \
    template Tensor<T> log_elem<T>(const Tensor<T>&);                                                   \
    template Tensor<T> sqrt_elem<T>(const Tensor<T>&);                                                  \
    template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                    \
    template Tensor<T> silu<T>(const Tensor<T>&);                                                       \
    template Tensor<T> gelu<T>(const Tensor<T>&);                                                       \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                   \
    template Tensor<T> sum<T>(const Tensor<T>&, std::vector<int64_t>, bool);                            \
    template Tensor<T> mean<T>(const Tensor<T>&, std::vector<int64_t>, bool);                           \
    template Tensor<T> max_reduce<T>(const Tensor<T>&, std::vector<int64_t>, bool);                     \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                             \
    template Tensor<T> transpose<T>(const Tensor<T>&, std::vector<int64_t>);                            \
    template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int64_t);                               \
    template Tensor<T> slice<T>(const Tensor<T>&, int64_t, int64_t, int64_t);                           \
    template Tensor<T> pad<T>(const Tensor<T>&, const std::vector<std::pair<int64_t, int64_t>>&);       \
    template Tensor<T> crop<T>(const Tensor<T>&, const std::vector<std::pair<int64_t, int64_t>>&);      \
    template Tensor<T> take_tokens<T>(const Tensor<T>&, const std::vector<int64_t>&, int64_t);          \
    template Tensor<T> softmax_lastdim<T>(const Tensor<T>&);

DCELANM_INSTANTIATE_OPS(float)
DCELANM_INSTANTIATE_OPS(double)

}  // namespace dcelanm
