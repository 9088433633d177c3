#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "dcelanm/ops.hpp"

namespace dcelanm {

/// Central finite-difference check of d f / d x against the tape gradient.
///
/// `f` must be a deterministic scalar-valued function of the current contents
/// of `x` (re-seed any internal randomness per call). Returns the max over
/// checked coordinates of |analytic - central| / (|central| + 1e-8). When
/// `max_coords` > 0 and x is larger, a random subset of coordinates is
/// checked. Throws on non-finite values, reporting the offending index.
template <typename T>
double finite_diff_check(const std::function<Tensor<T>()>& f, Tensor<T>& x, T eps,
                         int64_t max_coords = -1, Rng* rng = nullptr) {
    bool had_rg = x.requires_grad();
    x.set_requires_grad(true);
    x.zero_grad();

    auto& tape = Tape<T>::current();
    tape.reset();
    tape.set_recording(true);
    Tensor<T> loss = f();
    if (loss.numel() != 1) throw std::invalid_argument("finite_diff_check: f must be scalar-valued");
    tape.backward(loss);
    std::vector<T> analytic = x.grad();
    tape.reset();
    x.zero_grad();
    x.set_requires_grad(had_rg);

    std::vector<int64_t> coords;
    const int64_t n = x.numel();
    if (max_coords > 0 && n > max_coords) {
        if (!rng) throw std::invalid_argument("finite_diff_check: rng required for coordinate sampling");
        std::vector<int64_t> all(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
        rng->shuffle(all);
        coords.assign(all.begin(), all.begin() + static_cast<size_t>(max_coords));
    } else {
        coords.resize(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    }

    double worst = 0.0;
    NoGradGuard<T> ng;
    for (int64_t i : coords) {
        const T orig = x.data()[static_cast<size_t>(i)];
        x.data()[static_cast<size_t>(i)] = orig + eps;
        const double lp = static_cast<double>(f().item());
        x.data()[static_cast<size_t>(i)] = orig - eps;
        const double lm = static_cast<double>(f().item());
        x.data()[static_cast<size_t>(i)] = orig;
        const double fd = (lp - lm) / (2.0 * static_cast<double>(eps));
        const double an = static_cast<double>(analytic[static_cast<size_t>(i)]);
        if (!std::isfinite(fd) || !std::isfinite(an))
            throw std::runtime_error("finite_diff_check: non-finite value at index " + std::to_string(i));
        const double rel = std::abs(an - fd) / (std::abs(fd) + 1e-8);
        if (rel > worst) worst = rel;
    }
    tape.reset();
    return worst;
}

}  // namespace dcelanm
