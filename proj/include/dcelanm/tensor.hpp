#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcelanm/rng.hpp"

namespace dcelanm {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

inline void check_shape_valid(const Shape& s) {
    if (s.empty()) throw std::invalid_argument("tensor shape must be non-empty");
    for (int64_t d : s)
        if (d < 1) throw std::invalid_argument("tensor dims must be >= 1, got " + shape_str(s));
}

/// Flat data + optional gradient buffer, shared between tensor handles.
template <typename T>
struct Storage {
    std::vector<T> data;
    std::vector<T> grad;  // empty until first accumulation
};

/// Dense n-dimensional array, row-major with the last axis fastest.
///
/// Copying a Tensor is cheap: handles share the underlying storage, so a
/// parameter's gradient is visible through every copy. Use clone() for a deep
/// copy. Autodiff linkage (node id into the active tape) is carried on the
/// handle and validated against the tape generation, so handles from a
/// previous step silently degrade to plain constants.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        check_shape_valid(shape_);
        store_ = std::make_shared<Storage<T>>();
        store_->data.assign(static_cast<size_t>(shape_numel(shape_)), T(0));
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)) {
        check_shape_valid(shape_);
        if (static_cast<int64_t>(data.size()) != shape_numel(shape_))
            throw std::invalid_argument("data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape_));
        store_ = std::make_shared<Storage<T>>();
        store_->data = std::move(data);
    }

    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        for (auto& x : t.store_->data) x = v;
        return t;
    }

    static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
        Tensor t(std::move(shape));
        for (auto& x : t.store_->data) x = static_cast<T>(rng.normal()) * stddev;
        return t;
    }

    static Tensor uniform(Shape shape, Rng& rng, T lo = T(0), T hi = T(1)) {
        Tensor t(std::move(shape));
        for (auto& x : t.store_->data) x = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    bool defined() const { return static_cast<bool>(store_); }
    const Shape& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int64_t i) const { return shape_.at(static_cast<size_t>(i)); }
    int64_t numel() const { return static_cast<int64_t>(store_->data.size()); }

    std::vector<T>& data() { return store_->data; }
    const std::vector<T>& data() const { return store_->data; }
    T* ptr() { return store_->data.data(); }
    const T* ptr() const { return store_->data.data(); }

    T item() const {
        if (numel() != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape_str(shape_));
        return store_->data[0];
    }

    T& operator[](int64_t i) { return store_->data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return store_->data[static_cast<size_t>(i)]; }

    /// Flat offset of a multi-index (bounds unchecked beyond rank).
    int64_t offset_of(std::initializer_list<int64_t> idx) const {
        int64_t off = 0;
        size_t k = 0;
        for (int64_t i : idx) off = off * shape_[k++] + i;
        return off;
    }
    T at(std::initializer_list<int64_t> idx) const { return store_->data[static_cast<size_t>(offset_of(idx))]; }

    /// The flag lives on the handle (copies carry it; detach() drops it);
    /// the gradient buffer itself lives on the shared storage.
    bool requires_grad() const { return requires_grad_; }

    Tensor& set_requires_grad(bool v = true) {
        requires_grad_ = v;
        return *this;
    }

    bool has_grad() const { return store_ && !store_->grad.empty(); }

    /// Gradient accumulated by backward(). Allocated (zero) on first access.
    std::vector<T>& grad() {
        if (store_->grad.empty()) store_->grad.assign(store_->data.size(), T(0));
        return store_->grad;
    }
    const std::vector<T>& grad() const {
        const_cast<Tensor*>(this)->grad();
        return store_->grad;
    }

    void zero_grad() {
        if (!store_->grad.empty()) std::fill(store_->grad.begin(), store_->grad.end(), T(0));
    }

    /// Same storage, no tape linkage: downstream ops treat it as a constant.
    Tensor detach() const {
        Tensor t;
        t.shape_ = shape_;
        t.store_ = store_;
        return t;
    }

    /// Deep copy of the data (grad and tape linkage are not copied).
    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.store_ = std::make_shared<Storage<T>>();
        t.store_->data = store_->data;
        return t;
    }

    /// Convert elementwise to another scalar type.
    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> d(store_->data.size());
        for (size_t i = 0; i < d.size(); ++i) d[i] = static_cast<U>(store_->data[i]);
        return Tensor<U>(shape_, std::move(d));
    }

    // --- autodiff linkage (used by the tape and ops) ---
    std::shared_ptr<Storage<T>> storage() const { return store_; }
    int64_t node() const { return node_; }
    uint64_t node_gen() const { return gen_; }
    void bind_node(int64_t node, uint64_t gen) const {
        node_ = node;
        gen_ = gen;
    }

private:
    Shape shape_;
    std::shared_ptr<Storage<T>> store_;
    bool requires_grad_ = false;
    // Mutable: binding a leaf to the tape is caching, not mutation of the value.
    mutable int64_t node_ = -1;
    mutable uint64_t gen_ = 0;
};

}  // namespace dcelanm
