#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "pluvia/errors.hpp"

namespace pluvia::detail {

inline double mean(std::span<const double> v) {
    if (v.empty()) throw NumericError("mean: empty sample");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double sample_variance(std::span<const double> v) {
    if (v.size() < 2) throw NumericError("sample_variance: need at least two values");
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return ss / static_cast<double>(v.size() - 1);
}

inline double sample_sd(std::span<const double> v) { return std::sqrt(sample_variance(v)); }

inline double median(std::vector<double> v) {
    if (v.empty()) throw NumericError("median: empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Linear-interpolation quantile (type 7), q in [0,1].
inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw NumericError("quantile: empty sample");
    if (q < 0.0 || q > 1.0) throw NumericError("quantile: q must lie in [0,1]");
    std::sort(v.begin(), v.end());
    const double h = q * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= v.size()) return v.back();
    const double frac = h - static_cast<double>(lo);
    return v[lo] + frac * (v[lo + 1] - v[lo]);
}

namespace kendall_impl {

// Merge sort on y counting exchanges (discordant-ish swaps).
inline std::uint64_t merge_count(std::vector<double>& y, std::vector<double>& buf,
                                 std::size_t lo, std::size_t hi) {
    if (hi - lo < 2) return 0;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::uint64_t swaps = merge_count(y, buf, lo, mid) + merge_count(y, buf, mid, hi);
    std::size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (y[j] < y[i]) {
            swaps += mid - i;
            buf[k++] = y[j++];
        } else {
            buf[k++] = y[i++];
        }
    }
    while (i < mid) buf[k++] = y[i++];
    while (j < hi) buf[k++] = y[j++];
    std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
              y.begin() + static_cast<std::ptrdiff_t>(lo));
    return swaps;
}

inline std::uint64_t pair_count(std::uint64_t t) { return t * (t - 1) / 2; }

}  // namespace kendall_impl

// Kendall's tau-b by Knight's O(n log n) algorithm; reduces to plain tau
// when there are no ties.
inline double kendall_tau(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    if (n != y.size()) throw NumericError("kendall_tau: length mismatch");
    if (n < 2) throw NumericError("kendall_tau: need at least two observations");

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (x[a] != x[b]) return x[a] < x[b];
        return y[a] < y[b];
    });

    std::uint64_t n1 = 0, n3 = 0;  // tie corrections in x and jointly
    {
        std::uint64_t run_x = 1, run_xy = 1;
        for (std::size_t i = 1; i < n; ++i) {
            if (x[idx[i]] == x[idx[i - 1]]) {
                ++run_x;
                if (y[idx[i]] == y[idx[i - 1]]) {
                    ++run_xy;
                } else {
                    n3 += kendall_impl::pair_count(run_xy);
                    run_xy = 1;
                }
            } else {
                n1 += kendall_impl::pair_count(run_x);
                n3 += kendall_impl::pair_count(run_xy);
                run_x = run_xy = 1;
            }
        }
        n1 += kendall_impl::pair_count(run_x);
        n3 += kendall_impl::pair_count(run_xy);
    }

    std::vector<double> ys(n);
    for (std::size_t i = 0; i < n; ++i) ys[i] = y[idx[i]];

    std::uint64_t n2 = 0;  // ties in y
    {
        std::vector<double> sorted_y(ys);
        std::sort(sorted_y.begin(), sorted_y.end());
        std::uint64_t run = 1;
        for (std::size_t i = 1; i < n; ++i) {
            if (sorted_y[i] == sorted_y[i - 1]) {
                ++run;
            } else {
                n2 += kendall_impl::pair_count(run);
                run = 1;
            }
        }
        n2 += kendall_impl::pair_count(run);
    }

    std::vector<double> buf(n);
    const std::uint64_t swaps = kendall_impl::merge_count(ys, buf, 0, n);

    const std::uint64_t n0 = kendall_impl::pair_count(static_cast<std::uint64_t>(n));
    const double num = static_cast<double>(n0) - static_cast<double>(n1) - static_cast<double>(n2) +
                       static_cast<double>(n3) - 2.0 * static_cast<double>(swaps);
    const double den = std::sqrt(static_cast<double>(n0 - n1)) * std::sqrt(static_cast<double>(n0 - n2));
    if (den == 0.0) throw NumericError("kendall_tau: a variable is constant");
    return num / den;
}

// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Inverse standard normal CDF: Acklam's rational approximation polished with
// one Halley step, good to full double precision on (0,1).
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw NumericError("normal_quantile: p must lie in (0,1)");

    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};

    const double p_low = 0.02425;
    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }

    // Halley refinement against erfc.
    const double e = normal_cdf(x) - p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(x * x / 2.0);
    x = x - u / (1.0 + x * u / 2.0);
    return x;
}

// Kahan-compensated accumulator.
class CompensatedSum {
public:
    void add(double x) {
        const double y = x - comp_;
        const double t = sum_ + y;
        comp_ = (t - sum_) - y;
        sum_ = t;
    }
    double value() const { return sum_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

inline double log_sum_exp(std::span<const double> xs) {
    if (xs.empty()) throw NumericError("log_sum_exp: empty input");
    const double m = *std::max_element(xs.begin(), xs.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

}  // namespace pluvia::detail
