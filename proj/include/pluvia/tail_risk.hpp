#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "pluvia/copula.hpp"
#include "pluvia/detail/csv.hpp"
#include "pluvia/detail/stats.hpp"
#include "pluvia/errors.hpp"
#include "pluvia/marginals.hpp"

namespace pluvia {

// Joint exceedance probability P(U_1 > u_1, ..., U_d > u_d) under the Gumbel
// copula, by inclusion-exclusion over coordinate subsets (2^d terms, the
// Archimedean family is closed under marginalization so every subset uses the
// same theta). Compensated summation keeps the alternating sum stable.
// theta = 1 factorizes to the exact product of survival probabilities.
inline double joint_tail_exact(const std::vector<double>& u, double theta) {
    if (!(theta >= 1.0)) throw NumericError("joint_tail_exact: theta must be >= 1");
    const std::size_t d = u.size();
    if (d == 0) throw DataError("joint_tail_exact: empty threshold vector");
    if (d > 20) throw DataError("joint_tail_exact: dimension too large for subset enumeration");
    for (double ui : u) {
        if (!(ui >= 0.0 && ui <= 1.0)) throw NumericError("joint_tail_exact: u out of [0,1]");
    }

    if (theta == 1.0) {
        double prod = 1.0;
        for (double ui : u) prod *= 1.0 - ui;
        return prod;
    }

    detail::CompensatedSum sum;
    std::vector<double> subset;
    subset.reserve(d);
    for (std::uint32_t mask = 0; mask < (1u << d); ++mask) {
        subset.clear();
        for (std::size_t j = 0; j < d; ++j) {
            if (mask & (1u << j)) subset.push_back(u[j]);
        }
        const double sign = (subset.size() % 2 == 0) ? 1.0 : -1.0;
        sum.add(sign * gumbel_cdf(subset, theta));
    }
    return std::clamp(sum.value(), 0.0, 1.0);
}

// Monte Carlo estimate of the same exceedance probability from the frailty
// sampler; returns (estimate, binomial standard error). Deterministic per seed.
inline std::pair<double, double> joint_tail_mc(const std::vector<double>& u, double theta, std::size_t n,
                                               std::uint64_t seed) {
    if (!(theta >= 1.0)) throw NumericError("joint_tail_mc: theta must be >= 1");
    if (u.empty()) throw DataError("joint_tail_mc: empty threshold vector");
    if (n < 1) throw ConfigError("joint_tail_mc: need at least one draw");
    const auto sample = sample_gumbel(n, u.size(), theta, seed);
    std::size_t hits = 0;
    for (const auto& row : sample) {
        bool all = true;
        for (std::size_t j = 0; j < u.size(); ++j) {
            if (!(row[j] > u[j])) {
                all = false;
                break;
            }
        }
        if (all) ++hits;
    }
    const double p = static_cast<double>(hits) / static_cast<double>(n);
    const double se = std::sqrt(p * (1.0 - p) / static_cast<double>(n));
    return {p, se};
}

// --- risk curves ---------------------------------------------------------------

struct RiskQuery {
    std::vector<double> thresholds;        // strictly increasing z grid
    std::vector<MarginalFit> marginals;    // one per scenario, d of them
    CopulaFit copula;
    std::size_t mc_draws = 100000;
    std::uint64_t mc_seed = 0;
    std::string city;
    std::string period = "scenario";
};

struct RiskPoint {
    double z = 0.0;
    double phi_exact = 0.0;
    double phi_mc = 0.0;
    double mc_se = 0.0;
};

struct RiskCurve {
    std::vector<RiskPoint> points;
    std::string city;
    std::string period;
};

namespace detail_risk {

inline void check_grid(const std::vector<double>& z) {
    if (z.empty()) throw ConfigError("risk grid: empty threshold grid");
    for (std::size_t i = 1; i < z.size(); ++i) {
        if (!(z[i] > z[i - 1])) throw ConfigError("risk grid: thresholds must be strictly increasing");
    }
}

}  // namespace detail_risk

// Phi(z) over the grid: u_i = F_i(z) per scenario marginal, then the exact
// inclusion-exclusion tail with the fitted theta, cross-checked by Monte Carlo.
inline RiskCurve risk_curve(const RiskQuery& query) {
    detail_risk::check_grid(query.thresholds);
    if (query.marginals.empty()) throw ConfigError("risk_curve: no marginal fits");
    if (query.marginals.size() != query.copula.d) {
        throw ConfigError("risk_curve: marginal count (" + std::to_string(query.marginals.size()) +
                          ") does not match copula dimension (" + std::to_string(query.copula.d) + ")");
    }

    RiskCurve curve;
    curve.city = query.city;
    curve.period = query.period;
    curve.points.reserve(query.thresholds.size());
    for (std::size_t zi = 0; zi < query.thresholds.size(); ++zi) {
        const double z = query.thresholds[zi];
        std::vector<double> u;
        u.reserve(query.marginals.size());
        for (const auto& fit : query.marginals) u.push_back(marginal_cdf(fit, z));

        RiskPoint pt;
        pt.z = z;
        pt.phi_exact = joint_tail_exact(u, query.copula.theta);
        const auto [est, se] = joint_tail_mc(u, query.copula.theta, query.mc_draws,
                                             detail::derive_seed(query.mc_seed, zi));
        pt.phi_mc = est;
        pt.mc_se = se;
        curve.points.push_back(pt);
    }
    return curve;
}

// Control-period analogue: the period has a single observed series, so the
// curve is the univariate tail 1 - F(z) of one marginal fitted to it.
inline RiskCurve univariate_tail_curve(const std::vector<double>& thresholds, const MarginalFit& marginal,
                                       const std::string& city, const std::string& period) {
    detail_risk::check_grid(thresholds);
    RiskCurve curve;
    curve.city = city;
    curve.period = period;
    for (double z : thresholds) {
        RiskPoint pt;
        pt.z = z;
        pt.phi_exact = 1.0 - marginal_cdf(marginal, z);
        pt.phi_mc = pt.phi_exact;  // analytic; no sampling channel for one margin
        pt.mc_se = 0.0;
        curve.points.push_back(pt);
    }
    return curve;
}

// Default grid: log-spaced points between the 50th and 99.9th percentile of
// the pooled predictions.
inline std::vector<double> default_z_grid(std::vector<double> pooled, std::size_t count = 50) {
    if (pooled.size() < 10) throw DataError("default_z_grid: need at least 10 pooled predictions");
    if (count < 2) throw ConfigError("default_z_grid: need at least 2 grid points");
    double lo = detail::quantile(pooled, 0.5);
    const double hi = detail::quantile(pooled, 0.999);
    if (lo <= 0.0) {
        // log spacing needs a positive anchor; fall back to the smallest positive value
        double min_pos = hi;
        for (double v : pooled)
            if (v > 0.0) min_pos = std::min(min_pos, v);
        lo = min_pos * 0.5;
    }
    if (!(hi > lo)) throw DataError("default_z_grid: degenerate prediction spread");
    std::vector<double> grid;
    grid.reserve(count);
    const double ratio = std::log(hi / lo);
    for (std::size_t i = 0; i < count; ++i) {
        grid.push_back(lo * std::exp(ratio * static_cast<double>(i) / static_cast<double>(count - 1)));
    }
    return grid;
}

struct RiskComparisonRow {
    double z = 0.0;
    double phi_a = 0.0;
    double phi_b = 0.0;
    double ratio = 1.0;  // phi_b / phi_a
    double diff = 0.0;   // phi_b - phi_a
};

struct RiskComparison {
    std::vector<RiskComparisonRow> rows;
    double dominance_b_over_a = 0.0;  // fraction of grid where phi_b > phi_a strictly
};

inline RiskComparison compare_risk(const RiskCurve& a, const RiskCurve& b) {
    if (a.points.size() != b.points.size()) throw DataError("compare_risk: grids differ in length");
    RiskComparison cmp;
    std::size_t dominated = 0;
    for (std::size_t i = 0; i < a.points.size(); ++i) {
        if (a.points[i].z != b.points[i].z) throw DataError("compare_risk: mismatched threshold grids");
        RiskComparisonRow row;
        row.z = a.points[i].z;
        row.phi_a = a.points[i].phi_exact;
        row.phi_b = b.points[i].phi_exact;
        row.diff = row.phi_b - row.phi_a;
        if (row.phi_a == row.phi_b) {
            row.ratio = 1.0;  // covers the 0/0 tail
        } else {
            row.ratio = row.phi_b / row.phi_a;
        }
        if (row.phi_b > row.phi_a) ++dominated;
        cmp.rows.push_back(row);
    }
    cmp.dominance_b_over_a = static_cast<double>(dominated) / static_cast<double>(a.points.size());
    return cmp;
}

// --- CSV emission ----------------------------------------------------------------

inline std::string risk_curve_csv(const RiskCurve& curve) {
    std::ostringstream out;
    out << "z,phi_exact,phi_mc,mc_se,city,period\n";
    for (const auto& p : curve.points) {
        out << detail::format_double(p.z) << ',' << detail::format_double(p.phi_exact) << ','
            << detail::format_double(p.phi_mc) << ',' << detail::format_double(p.mc_se) << ',' << curve.city << ','
            << curve.period << '\n';
    }
    return out.str();
}

inline std::vector<RiskCurve> parse_risk_curve_csv(const std::string& path) {
    const auto lines = detail::read_lines(path);
    if (lines.empty() || lines[0] != "z,phi_exact,phi_mc,mc_se,city,period") {
        throw DataError(path + ": header must be 'z,phi_exact,phi_mc,mc_se,city,period'");
    }
    std::vector<RiskCurve> curves;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const std::string context = path + ": line " + std::to_string(i + 1);
        const auto f = detail::split_csv_line(lines[i]);
        if (f.size() != 6) throw DataError(context + ": expected 6 fields");
        RiskPoint pt;
        pt.z = detail::parse_double(f[0], context);
        pt.phi_exact = detail::parse_double(f[1], context);
        pt.phi_mc = detail::parse_double(f[2], context);
        pt.mc_se = detail::parse_double(f[3], context);
        if (curves.empty() || curves.back().city != f[4] || curves.back().period != f[5]) {
            RiskCurve c;
            c.city = f[4];
            c.period = f[5];
            curves.push_back(c);
        }
        curves.back().points.push_back(pt);
    }
    if (curves.empty()) throw DataError(path + ": no data rows");
    return curves;
}

inline std::string comparison_csv(const RiskComparison& cmp) {
    std::ostringstream out;
    out << "z,phi_a,phi_b,ratio,diff\n";
    for (const auto& r : cmp.rows) {
        out << detail::format_double(r.z) << ',' << detail::format_double(r.phi_a) << ','
            << detail::format_double(r.phi_b) << ',' << detail::format_double(r.ratio) << ','
            << detail::format_double(r.diff) << '\n';
    }
    return out.str();
}

}  // namespace pluvia
