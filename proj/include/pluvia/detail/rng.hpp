#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "pluvia/errors.hpp"

namespace pluvia::detail {

// splitmix64, used to derive well-separated substream seeds from a base seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t s = base ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    splitmix64(s);
    return splitmix64(s);
}

// Deterministic random source. The mt19937_64 engine has a portable output
// sequence; the std::*_distribution adaptors do not, so the variate
// transforms live here and results are bit-reproducible across platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    // Independent deterministic stream, e.g. one per bootstrap replicate.
    Rng substream(std::uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0,1), 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform on the open interval (0,1); safe as a copula argument.
    double uniform_open() {
        return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) {
        const std::uint64_t rem = std::numeric_limits<std::uint64_t>::max() % n;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - rem;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x > limit);
        return x % n;
    }

    // Box-Muller (cosine branch).
    double normal() {
        const double u1 = uniform_open();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    double exponential() { return -std::log(uniform_open()); }

    // Marsaglia-Tsang for shape >= 1, boosted below 1.
    double gamma(double shape, double scale) {
        if (shape <= 0.0 || scale <= 0.0) throw NumericError("gamma: shape and scale must be positive");
        if (shape < 1.0) {
            const double u = uniform_open();
            return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform_open();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
        }
    }

    // Knuth multiplication for small means, normal approximation above.
    long poisson(double mean) {
        if (mean < 0.0) throw NumericError("poisson: mean must be non-negative");
        if (mean == 0.0) return 0;
        if (mean > 500.0) {
            const double x = std::round(mean + std::sqrt(mean) * normal());
            return x < 0.0 ? 0 : static_cast<long>(x);
        }
        const double limit = std::exp(-mean);
        long k = 0;
        double prod = uniform_open();
        while (prod > limit) {
            ++k;
            prod *= uniform_open();
        }
        return k;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Positive alpha-stable with Laplace transform exp(-s^alpha), alpha in (0,1].
    // Chambers-Mallows-Stuck form, the Gumbel copula frailty.
    double stable_positive(double alpha) {
        if (alpha <= 0.0 || alpha > 1.0) throw NumericError("stable_positive: alpha must lie in (0,1]");
        if (alpha == 1.0) return 1.0;  // degenerate at S = 1
        const double v = std::numbers::pi * uniform_open();
        const double w = exponential();
        const double a = std::sin(alpha * v) / std::pow(std::sin(v), 1.0 / alpha);
        const double b = std::pow(std::sin((1.0 - alpha) * v) / w, (1.0 - alpha) / alpha);
        return a * b;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_int(i)]);
        }
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace pluvia::detail
