#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace dcelanm {

/// Deterministic splitmix64 generator.
///
/// State advances by the 64-bit golden-ratio constant and each output is a
/// finalizer mix of the new state, so identical seeds give identical streams
/// on every platform. Reference vectors (asserted in tests):
///   seed 0          -> 0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F
///   seed 0x12345678 -> 0x38F1DC39D1906B6F, 0xDFE4142236DD9517, 0x30C0356884C4F31F
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). Lemire multiply-shift; n must be > 0.
    uint64_t next_below(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Standard normal via Box-Muller (one value per call, no caching, so the
    /// stream position is a pure function of the call count).
    double normal() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    /// Normal(0, sigma) resampled until |z| <= 2 sigma.
    double truncated_normal(double sigma) {
        for (;;) {
            double z = normal();
            if (z >= -2.0 && z <= 2.0) return z * sigma;
        }
    }

    /// In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Random permutation of [0, n).
    std::vector<int64_t> permutation(int64_t n) {
        std::vector<int64_t> p(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
        shuffle(p);
        return p;
    }

    /// Derived independent stream, keyed by (current seed, salt). Used to give
    /// each sample / epoch its own reproducible substream.
    Rng fork(uint64_t salt) const {
        uint64_t z = state_ + 0x9E3779B97F4A7C15ULL * (salt + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return Rng(z ^ (z >> 31));
    }

    uint64_t state() const { return state_; }

private:
    uint64_t state_;
};

}  // namespace dcelanm
