#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pluvia/copula.hpp"
#include "pluvia/detail/rng.hpp"
#include "pluvia/errors.hpp"
#include "pluvia/ingest.hpp"
#include "pluvia/marginals.hpp"

namespace pluvia {

// Claim link planted into the synthetic world:
// N_t = softplus(a + b X_t + c1 X_{t-1} + c2 X_{t-2} + g D_t) + noise.
struct ClaimLink {
    double baseline = 0.3;
    double x_weight = 0.03;
    double x_lag1_weight = 0.012;
    double x_lag2_weight = 0.006;
    double d_weight = 0.05;
};

struct WorldConfig {
    std::uint64_t seed = 0;
    int n_years = 10;  // 52 full weeks per year
    double storm_rate = 1.0;   // storm events per week
    double storm_shape = 1.5;  // gamma event-total shape
    double storm_scale = 10.0; // gamma event-total scale, millimetres
    ClaimLink link;
    double noise_scale = 0.1;
    std::size_t n_scenarios = 6;
    double theta_true = 1.327;
    std::vector<double> trend_multipliers = {0.95, 1.0, 1.03, 1.06, 1.1, 1.15};
    std::vector<std::string> scenario_ids = {"s1", "s2", "s3", "s4", "s5", "s6"};

    void validate() const {
        if (n_years < 1) throw ConfigError("WorldConfig: n_years must be >= 1");
        if (storm_rate < 0.0) throw ConfigError("WorldConfig: storm_rate must be non-negative");
        if (storm_shape <= 0.0 || storm_scale <= 0.0)
            throw ConfigError("WorldConfig: storm intensity parameters must be positive");
        if (noise_scale < 0.0) throw ConfigError("WorldConfig: noise_scale must be non-negative");
        if (theta_true < 1.0) throw ConfigError("WorldConfig: theta_true must be >= 1");
        if (n_scenarios < 1) throw ConfigError("WorldConfig: need at least one scenario");
        if (trend_multipliers.size() != n_scenarios || scenario_ids.size() != n_scenarios) {
            throw ConfigError("WorldConfig: scenario ids and trend multipliers must match n_scenarios");
        }
        for (double m : trend_multipliers)
            if (m <= 0.0) throw ConfigError("WorldConfig: trend multipliers must be positive");
    }

    int n_weeks() const { return n_years * 52; }
};

enum class Period { Control, Scenario };

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

namespace detail_world {

inline std::uint64_t precip_stream(Period period, std::size_t scenario_index) {
    return period == Period::Control ? 0x636f6e74ULL : 0x7363656eULL + scenario_index;
}

}  // namespace detail_world

// Compound-Poisson storm process: Poisson arrivals per week, gamma event
// totals spread over 1-3 consecutive days. Scenario streams are scaled by
// their trend multiplier, so changing only the multiplier rescales the same
// storm realization. Deterministic per (seed, period, scenario).
inline std::vector<DailyRecord> gen_daily_precip(const WorldConfig& config, Period period,
                                                 std::size_t scenario_index = 0) {
    config.validate();
    if (period == Period::Scenario && scenario_index >= config.n_scenarios) {
        throw ConfigError("gen_daily_precip: scenario index out of range");
    }
    const int n_days = config.n_weeks() * 7;
    const Date start =
        parse_date(period == Period::Control ? "2002-01-01" : "2021-01-01", "gen_daily_precip");
    const double multiplier = period == Period::Control ? 1.0 : config.trend_multipliers[scenario_index];

    detail::Rng rng(detail::derive_seed(config.seed, detail_world::precip_stream(period, scenario_index)));

    std::vector<double> precip(static_cast<std::size_t>(n_days), 0.0);
    for (int week = 0; week < config.n_weeks(); ++week) {
        const long storms = rng.poisson(config.storm_rate);
        for (long s = 0; s < storms; ++s) {
            const double total = rng.gamma(config.storm_shape, config.storm_scale);
            const int start_day = week * 7 + static_cast<int>(rng.uniform_int(7));
            const int duration = 1 + static_cast<int>(rng.uniform_int(3));
            double weights[3];
            double weight_sum = 0.0;
            for (int k = 0; k < duration; ++k) {
                weights[k] = rng.uniform_open();
                weight_sum += weights[k];
            }
            for (int k = 0; k < duration; ++k) {
                const int day = start_day + k;
                if (day < n_days) precip[static_cast<std::size_t>(day)] += total * weights[k] / weight_sum;
            }
        }
    }

    std::vector<DailyRecord> days;
    days.reserve(static_cast<std::size_t>(n_days));
    for (int i = 0; i < n_days; ++i) {
        DailyRecord rec;
        rec.date = start + std::chrono::days{i};
        rec.precip_mm = precip[static_cast<std::size_t>(i)] * multiplier;
        days.push_back(rec);
    }
    return days;
}

// Weekly claims from the planted link; lags before the series start are
// treated as zero. Noise is zero-mean gaussian, the result truncated at 0.
inline std::vector<double> gen_claims(const WeeklySeries& weeks, const WorldConfig& config) {
    config.validate();
    detail::Rng rng(detail::derive_seed(config.seed, 0x636c6169));
    std::vector<double> claims;
    claims.reserve(weeks.size());
    for (std::size_t t = 0; t < weeks.size(); ++t) {
        const double x0 = weeks[t].x;
        const double x1 = t >= 1 ? weeks[t - 1].x : 0.0;
        const double x2 = t >= 2 ? weeks[t - 2].x : 0.0;
        const double d0 = weeks[t].d;
        const ClaimLink& link = config.link;
        double n = softplus(link.baseline + link.x_weight * x0 + link.x_lag1_weight * x1 +
                            link.x_lag2_weight * x2 + link.d_weight * d0);
        if (config.noise_scale > 0.0) n += rng.normal(0.0, config.noise_scale);
        claims.push_back(std::max(0.0, n));
    }
    return claims;
}

// Control-period daily file in the exact schema `ingest` consumes. Daily
// claims are constant within each week, so the weekly mean recovers the
// planted N_t.
inline std::vector<DailyRecord> generate_control_daily(const WorldConfig& config) {
    auto days = gen_daily_precip(config, Period::Control);
    const auto weeks = aggregate_weekly(days);
    const auto claims = gen_claims(weeks, config);
    for (std::size_t w = 0; w < weeks.size(); ++w) {
        for (std::size_t k = 0; k < 7; ++k) {
            days[w * 7 + k].claims = claims[w];
        }
    }
    return days;
}

// Weekly scenario precipitation for the projection period, one series per
// configured climate scenario.
inline std::vector<ScenarioSeries> generate_scenario_weekly(const WorldConfig& config) {
    config.validate();
    std::vector<ScenarioSeries> scenarios;
    scenarios.reserve(config.n_scenarios);
    for (std::size_t j = 0; j < config.n_scenarios; ++j) {
        ScenarioSeries s;
        s.scenario_id = config.scenario_ids[j];
        s.weeks = aggregate_weekly(gen_daily_precip(config, Period::Scenario, j));
        scenarios.push_back(std::move(s));
    }
    return scenarios;
}

// Planted-truth fixture: Gumbel(theta_true) uniforms pushed through a
// marginal quantile function, one column per scenario.
inline std::vector<std::vector<double>> gen_ensemble_predictions(const WorldConfig& config, std::size_t n,
                                                                 MarginalFamily family,
                                                                 const std::vector<double>& params) {
    config.validate();
    auto sample = sample_gumbel(n, config.n_scenarios, config.theta_true,
                                detail::derive_seed(config.seed, 0x656e7365));
    for (auto& row : sample) {
        for (auto& u : row) u = family_quantile(family, params, u);
    }
    return sample;
}

}  // namespace pluvia
