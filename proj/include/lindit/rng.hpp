#pragma once

#include <cstdint>
#include <cmath>

#include "lindit/tensor.hpp"

namespace lindit {

// Deterministic generator with explicit algorithms for every distribution
// so that outputs are bit-identical across platforms and standard-library
// versions. splitmix64 core, Box-Muller normals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // truncated normal: resample outside [-2, 2] std deviations
    double trunc_normal(double stddev) {
        double v = normal();
        while (v < -2.0 || v > 2.0) v = normal();
        return v * stddev;
    }

    Tensor normal_tensor(Shape s, double stddev = 1.0) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = normal() * stddev;
        return t;
    }

    Tensor uniform_tensor(Shape s, double lo, double hi) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = uniform(lo, hi);
        return t;
    }

    Tensor trunc_normal_tensor(Shape s, double stddev) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = trunc_normal(stddev);
        return t;
    }

    // Random values on a dyadic grid (multiples of 1/denom, |v| <= bound).
    // Sums and small products of such values are exact in f64, which lets
    // equivariance tests assert bitwise equality.
    Tensor dyadic_tensor(Shape s, int denom, int bound) {
        Tensor t(std::move(s));
        for (auto& v : t.data) {
            std::int64_t k = std::int64_t(below(std::uint64_t(2 * bound * denom + 1))) -
                             std::int64_t(bound * denom);
            v = double(k) / double(denom);
        }
        return t;
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace lindit
