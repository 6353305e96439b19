#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pluvia/detail/optim.hpp"
#include "pluvia/detail/rng.hpp"
#include "pluvia/detail/stats.hpp"
#include "pluvia/errors.hpp"

namespace pluvia {

// Rank-based margins: u_ij = rank(y_ij) / (n+1), columnwise.
struct PseudoObservations {
    std::vector<std::vector<double>> u;  // n rows, d columns (row-major)
    std::size_t n_rows() const { return u.size(); }
    std::size_t n_cols() const { return u.empty() ? 0 : u.front().size(); }

    std::vector<double> column(std::size_t c) const {
        std::vector<double> out;
        out.reserve(u.size());
        for (const auto& row : u) out.push_back(row.at(c));
        return out;
    }
};

struct CopulaFit {
    double theta = 1.0;
    double se = 0.0;
    std::string estimator;  // "tau-inversion" or "pairwise-composite-ml"
    std::size_t n = 0;
    std::size_t d = 0;
    std::size_t bootstrap_reps = 0;
    std::uint64_t seed = 0;
};

namespace detail_copula {

inline void check_theta(double theta) {
    if (!(theta >= 1.0)) throw NumericError("gumbel copula: theta must be >= 1");
}

}  // namespace detail_copula

// Gumbel copula CDF exp{-[sum (-ln u_i)^theta]^{1/theta}}. Computed through
// log-sum-exp in log(-log u) space, which is stable out to the comonotonic
// regime of large theta. theta = 1 returns the plain product (independence)
// exactly. Coordinates equal to 1 drop out (Archimedean marginalization);
// any coordinate equal to 0 grounds the copula at 0.
inline double gumbel_cdf(const std::vector<double>& u, double theta) {
    detail_copula::check_theta(theta);
    if (u.empty()) return 1.0;

    if (theta == 1.0) {
        double prod = 1.0;
        for (double ui : u) {
            if (!(ui >= 0.0 && ui <= 1.0)) throw NumericError("gumbel_cdf: u out of [0,1]");
            prod *= ui;
        }
        return prod;
    }

    std::vector<double> log_terms;  // theta * log(-log u_i)
    log_terms.reserve(u.size());
    for (double ui : u) {
        if (!(ui >= 0.0 && ui <= 1.0)) throw NumericError("gumbel_cdf: u out of [0,1]");
        if (ui == 0.0) return 0.0;
        if (ui == 1.0) continue;
        log_terms.push_back(theta * std::log(-std::log(ui)));
    }
    if (log_terms.empty()) return 1.0;
    const double log_sum = detail::log_sum_exp(log_terms);
    return std::exp(-std::exp(log_sum / theta));
}

// Bivariate Gumbel density
//   c(u,v) = C(u,v) (uv)^-1 ((-ln u)(-ln v))^(theta-1) t^(1/theta - 2) (t^(1/theta) + theta - 1),
// t = (-ln u)^theta + (-ln v)^theta, evaluated in log space.
inline double gumbel_bivariate_log_density(double u, double v, double theta) {
    detail_copula::check_theta(theta);
    if (!(u > 0.0 && u < 1.0 && v > 0.0 && v < 1.0)) {
        throw NumericError("gumbel_bivariate_density: arguments must lie strictly inside (0,1)");
    }
    if (theta == 1.0) return 0.0;

    const double lu = -std::log(u);  // positive
    const double lv = -std::log(v);
    const double a = theta * std::log(lu);
    const double b = theta * std::log(lv);
    const double m = std::max(a, b);
    const double log_t = m + std::log(std::exp(a - m) + std::exp(b - m));
    const double t_pow = std::exp(log_t / theta);  // t^(1/theta)

    return -t_pow + lu + lv + (theta - 1.0) * (std::log(lu) + std::log(lv)) +
           (1.0 / theta - 2.0) * log_t + std::log(t_pow + theta - 1.0);
}

inline double gumbel_bivariate_density(double u, double v, double theta) {
    return std::exp(gumbel_bivariate_log_density(u, v, theta));
}

// Frailty sampler: S positive alpha-stable with alpha = 1/theta, independent
// unit exponentials E_i, U_i = exp(-(E_i/S)^(1/theta)). theta = 1 short-cuts
// to independent uniforms. Deterministic per seed.
inline std::vector<std::vector<double>> sample_gumbel(std::size_t n, std::size_t d, double theta,
                                                      std::uint64_t seed) {
    detail_copula::check_theta(theta);
    if (d < 1) throw ConfigError("sample_gumbel: dimension must be >= 1");
    detail::Rng rng(detail::derive_seed(seed, 0x67756d62));

    std::vector<std::vector<double>> out(n, std::vector<double>(d));
    for (std::size_t i = 0; i < n; ++i) {
        if (theta == 1.0) {
            for (std::size_t j = 0; j < d; ++j) out[i][j] = rng.uniform_open();
            continue;
        }
        const double s = rng.stable_positive(1.0 / theta);
        for (std::size_t j = 0; j < d; ++j) {
            const double e = rng.exponential();
            out[i][j] = std::exp(-std::pow(e / s, 1.0 / theta));
        }
    }
    return out;
}

// Column-wise ranks / (n+1); ties get average ranks. A constant column has
// no rank information and is rejected.
inline PseudoObservations pseudo_observations(const std::vector<std::vector<double>>& y) {
    const std::size_t n = y.size();
    if (n < 10) throw DataError("pseudo_observations: need at least 10 rows");
    const std::size_t d = y.front().size();
    for (const auto& row : y) {
        if (row.size() != d) throw DataError("pseudo_observations: ragged input matrix");
    }

    PseudoObservations p;
    p.u.assign(n, std::vector<double>(d));
    std::vector<std::size_t> idx(n);
    for (std::size_t c = 0; c < d; ++c) {
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return y[a][c] < y[b][c]; });
        if (y[idx.front()][c] == y[idx.back()][c]) {
            throw DataError("pseudo_observations: column " + std::to_string(c) + " is constant");
        }
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && y[idx[j + 1]][c] == y[idx[i]][c]) ++j;
            const double avg_rank = 0.5 * static_cast<double>(i + 1 + j + 1);  // 1-based average rank
            for (std::size_t k = i; k <= j; ++k) {
                p.u[idx[k]][c] = avg_rank / static_cast<double>(n + 1);
            }
            i = j + 1;
        }
    }
    return p;
}

// Mean of all d(d-1)/2 pairwise empirical Kendall taus.
inline double mean_pairwise_tau(const PseudoObservations& p) {
    const std::size_t d = p.n_cols();
    if (d < 2) throw DataError("mean_pairwise_tau: need at least two columns");
    std::vector<std::vector<double>> cols;
    cols.reserve(d);
    for (std::size_t c = 0; c < d; ++c) cols.push_back(p.column(c));
    double acc = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = a + 1; b < d; ++b) {
            acc += detail::kendall_tau(cols[a], cols[b]);
            ++pairs;
        }
    }
    return acc / static_cast<double>(pairs);
}

namespace detail_copula {

inline double theta_from_tau(double tau_bar) {
    if (tau_bar >= 1.0) throw NumericError("estimate_theta_tau: mean tau >= 1, theta diverges");
    return std::max(1.0, 1.0 / (1.0 - tau_bar));  // floored at independence
}

inline PseudoObservations resample_rows(const PseudoObservations& p, detail::Rng& rng) {
    PseudoObservations out;
    const std::size_t n = p.n_rows();
    out.u.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.u.push_back(p.u[rng.uniform_int(n)]);
    }
    return out;
}

template <typename PointEstimator>
double bootstrap_se(const PseudoObservations& p, std::size_t reps, std::uint64_t seed,
                    PointEstimator&& estimate) {
    if (reps < 2) return 0.0;
    detail::Rng base(detail::derive_seed(seed, 0x626f6f74));
    std::vector<double> thetas;
    thetas.reserve(reps);
    for (std::size_t r = 0; r < reps; ++r) {
        detail::Rng rng = base.substream(r);  // per-replicate stream, order-independent
        const auto resampled = resample_rows(p, rng);
        thetas.push_back(estimate(resampled));
    }
    return detail::sample_sd(thetas);
}

}  // namespace detail_copula

// Kendall-tau inversion: theta = 1 / (1 - mean pairwise tau), floored at 1.
// Standard error by nonparametric bootstrap over rows.
inline CopulaFit estimate_theta_tau(const PseudoObservations& p, std::size_t bootstrap_reps = 500,
                                    std::uint64_t seed = 0) {
    if (p.n_cols() < 2) throw DataError("estimate_theta_tau: need dimension >= 2");
    CopulaFit fit;
    fit.estimator = "tau-inversion";
    fit.n = p.n_rows();
    fit.d = p.n_cols();
    fit.bootstrap_reps = bootstrap_reps;
    fit.seed = seed;
    fit.theta = detail_copula::theta_from_tau(mean_pairwise_tau(p));
    fit.se = detail_copula::bootstrap_se(p, bootstrap_reps, seed, [](const PseudoObservations& q) {
        return detail_copula::theta_from_tau(mean_pairwise_tau(q));
    });
    return fit;
}

// Sum of log bivariate Gumbel densities over all column pairs and rows.
inline double composite_log_likelihood(const PseudoObservations& p, double theta) {
    const std::size_t d = p.n_cols();
    if (d < 2) throw DataError("composite_log_likelihood: need dimension >= 2");
    double acc = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = a + 1; b < d; ++b) {
            for (const auto& row : p.u) {
                acc += gumbel_bivariate_log_density(row[a], row[b], theta);
            }
        }
    }
    return acc;
}

namespace detail_copula {

inline double cml_point_estimate(const PseudoObservations& p, double lo, double hi) {
    const auto res = detail::brent_minimize([&](double theta) { return -composite_log_likelihood(p, theta); },
                                            lo, hi, 1e-7);
    if (!res.converged) {
        throw NumericError("estimate_theta_cml: 1-D search did not converge after " +
                           std::to_string(res.iterations) + " iterations");
    }
    return res.x;
}

}  // namespace detail_copula

// Pairwise composite (pseudo-)maximum-likelihood over theta in [1, 50],
// bounded 1-D search; SE by row bootstrap.
inline CopulaFit estimate_theta_cml(const PseudoObservations& p, std::size_t bootstrap_reps = 200,
                                    std::uint64_t seed = 0, double theta_lo = 1.0, double theta_hi = 50.0) {
    if (p.n_cols() < 2) throw DataError("estimate_theta_cml: need dimension >= 2");
    CopulaFit fit;
    fit.estimator = "pairwise-composite-ml";
    fit.n = p.n_rows();
    fit.d = p.n_cols();
    fit.bootstrap_reps = bootstrap_reps;
    fit.seed = seed;
    // interior evaluations only; the boundary theta = 1 has zero density slope
    const double lo = std::max(theta_lo, 1.0 + 1e-9);
    fit.theta = detail_copula::cml_point_estimate(p, lo, theta_hi);
    fit.se = detail_copula::bootstrap_se(p, bootstrap_reps, seed, [&](const PseudoObservations& q) {
        return detail_copula::cml_point_estimate(q, lo, theta_hi);
    });
    return fit;
}

inline nlohmann::json copula_to_json(const CopulaFit& fit) {
    return nlohmann::json{{"theta", fit.theta}, {"se", fit.se},
                          {"estimator", fit.estimator}, {"n", fit.n},
                          {"d", fit.d},         {"bootstrap_reps", fit.bootstrap_reps},
                          {"seed", fit.seed}};
}

inline CopulaFit copula_from_json(const nlohmann::json& j) {
    CopulaFit fit;
    fit.theta = j.at("theta").get<double>();
    fit.se = j.at("se").get<double>();
    fit.estimator = j.at("estimator").get<std::string>();
    fit.n = j.at("n").get<std::size_t>();
    fit.d = j.at("d").get<std::size_t>();
    fit.bootstrap_reps = j.at("bootstrap_reps").get<std::size_t>();
    fit.seed = j.at("seed").get<std::uint64_t>();
    if (fit.theta < 1.0) throw DataError("copula_from_json: theta must be >= 1");
    return fit;
}

}  // namespace pluvia
