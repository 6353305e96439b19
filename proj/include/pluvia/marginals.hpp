#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pluvia/detail/optim.hpp"
#include "pluvia/detail/stats.hpp"
#include "pluvia/errors.hpp"

namespace pluvia {

// Candidate claim-frequency families. The discrete ones are fitted on
// integer counts; lognormal is fitted on raw continuous values.
enum class MarginalFamily { Poisson, Nb1, Nb2, Zip, Lognormal };

inline std::string family_name(MarginalFamily f) {
    switch (f) {
        case MarginalFamily::Poisson: return "poisson";
        case MarginalFamily::Nb1: return "nb1";
        case MarginalFamily::Nb2: return "nb2";
        case MarginalFamily::Zip: return "zip";
        case MarginalFamily::Lognormal: return "lognormal";
    }
    throw ConfigError("family_name: unknown family");
}

inline MarginalFamily family_from_name(const std::string& name) {
    if (name == "poisson") return MarginalFamily::Poisson;
    if (name == "nb1") return MarginalFamily::Nb1;
    if (name == "nb2") return MarginalFamily::Nb2;
    if (name == "zip") return MarginalFamily::Zip;
    if (name == "lognormal") return MarginalFamily::Lognormal;
    throw ConfigError("unknown marginal family '" + name + "'");
}

inline bool family_is_discrete(MarginalFamily f) { return f != MarginalFamily::Lognormal; }

inline int family_param_count(MarginalFamily f) { return f == MarginalFamily::Poisson ? 1 : 2; }

struct MarginalFit {
    MarginalFamily family = MarginalFamily::Lognormal;
    std::vector<double> params;  // poisson(lambda); nb1/nb2(mu,sigma); zip(lambda,pi); lognormal(m,s)
    double loglik = 0.0;
    double aic = 0.0;
    double bic = 0.0;
    std::size_t n = 0;
    double exposure = 1.0;  // rescaling used before rounding to counts (discrete families)
    bool converged = false;
};

namespace detail_marg {

// log Gamma(y + r) - log Gamma(r), stable for huge r (near-Poisson regime).
inline double lgamma_ratio(double y, double r) {
    if (r > 1e6 && y <= 4096.0 && y == std::floor(y)) {
        double s = 0.0;
        for (long j = 0; j < static_cast<long>(y); ++j) s += std::log(r + static_cast<double>(j));
        return s;
    }
    return std::lgamma(y + r) - std::lgamma(r);
}

inline void check_nonneg_int(double y, const char* who) {
    if (y < 0.0 || y != std::floor(y)) throw NumericError(std::string(who) + ": y must be a non-negative integer");
}

}  // namespace detail_marg

// --- log pmf / pdf ----------------------------------------------------------

// Negative binomial type I: mean mu, variance mu(1 + sigma*mu).
inline double nb1_log_pmf(double y, double mu, double sigma) {
    if (!(mu > 0.0) || !(sigma > 0.0)) throw NumericError("nb1: mu and sigma must be positive");
    detail_marg::check_nonneg_int(y, "nb1");
    const double r = 1.0 / sigma;
    const double log_sm = std::log(sigma) + std::log(mu);  // log(sigma*mu)
    const double log1p_sm = std::log1p(sigma * mu);
    return detail_marg::lgamma_ratio(y, r) - std::lgamma(y + 1.0) + y * (log_sm - log1p_sm) - r * log1p_sm;
}

inline double nb1_pmf(double y, double mu, double sigma) { return std::exp(nb1_log_pmf(y, mu, sigma)); }

// Negative binomial type II: mean mu, variance mu(1 + sigma).
inline double nb2_log_pmf(double y, double mu, double sigma) {
    if (!(mu > 0.0) || !(sigma > 0.0)) throw NumericError("nb2: mu and sigma must be positive");
    detail_marg::check_nonneg_int(y, "nb2");
    const double r = mu / sigma;
    const double log1p_s = std::log1p(sigma);
    return detail_marg::lgamma_ratio(y, r) - std::lgamma(y + 1.0) + y * (std::log(sigma) - log1p_s) - r * log1p_s;
}

inline double poisson_log_pmf(double y, double lambda) {
    if (!(lambda > 0.0)) throw NumericError("poisson: lambda must be positive");
    detail_marg::check_nonneg_int(y, "poisson");
    return y * std::log(lambda) - lambda - std::lgamma(y + 1.0);
}

inline double zip_log_pmf(double y, double lambda, double pi) {
    if (!(lambda > 0.0)) throw NumericError("zip: lambda must be positive");
    if (!(pi >= 0.0 && pi < 1.0)) throw NumericError("zip: pi must lie in [0,1)");
    detail_marg::check_nonneg_int(y, "zip");
    if (y == 0.0) {
        // log(pi + (1-pi) e^-lambda)
        const double a = std::log1p(-pi) - lambda;
        if (pi == 0.0) return a;
        const double b = std::log(pi);
        const double m = std::max(a, b);
        return m + std::log(std::exp(a - m) + std::exp(b - m));
    }
    return std::log1p(-pi) + poisson_log_pmf(y, lambda);
}

inline double lognormal_log_pdf(double y, double m, double s) {
    if (!(s > 0.0)) throw NumericError("lognormal: s must be positive");
    if (y <= 0.0) return -std::numeric_limits<double>::infinity();
    const double z = (std::log(y) - m) / s;
    return -std::log(y) - std::log(s) - 0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * z * z;
}

inline double family_log_density(MarginalFamily f, const std::vector<double>& p, double y) {
    switch (f) {
        case MarginalFamily::Poisson: return poisson_log_pmf(y, p.at(0));
        case MarginalFamily::Nb1: return nb1_log_pmf(y, p.at(0), p.at(1));
        case MarginalFamily::Nb2: return nb2_log_pmf(y, p.at(0), p.at(1));
        case MarginalFamily::Zip: return zip_log_pmf(y, p.at(0), p.at(1));
        case MarginalFamily::Lognormal: return lognormal_log_pdf(y, p.at(0), p.at(1));
    }
    throw ConfigError("family_log_density: unknown family");
}

// pmf for discrete families, pdf for lognormal.
inline double family_pmf_or_pdf(MarginalFamily f, const std::vector<double>& p, double y) {
    return std::exp(family_log_density(f, p, y));
}

// CDF: summation for discrete families, error-function form for lognormal.
inline double family_cdf(MarginalFamily f, const std::vector<double>& p, double y) {
    if (f == MarginalFamily::Lognormal) {
        if (y <= 0.0) return 0.0;
        return detail::normal_cdf((std::log(y) - p.at(0)) / p.at(1));
    }
    if (y < 0.0) return 0.0;
    const double top = std::floor(y);
    double acc = 0.0;
    for (double k = 0.0; k <= top; k += 1.0) acc += family_pmf_or_pdf(f, p, k);
    return std::min(acc, 1.0);
}

// Smallest y with CDF >= q (discrete), or the exact quantile (lognormal).
inline double family_quantile(MarginalFamily f, const std::vector<double>& p, double q) {
    if (!(q > 0.0 && q < 1.0)) throw NumericError("family_quantile: q must lie in (0,1)");
    if (f == MarginalFamily::Lognormal) {
        return std::exp(p.at(0) + p.at(1) * detail::normal_quantile(q));
    }
    double acc = 0.0;
    for (double k = 0.0; k < 1e7; k += 1.0) {
        acc += family_pmf_or_pdf(f, p, k);
        if (acc >= q) return k;
    }
    throw NumericError("family_quantile: quantile search did not terminate");
}

// --- maximum likelihood -------------------------------------------------------

namespace detail_marg {

inline double loglik(MarginalFamily f, const std::vector<double>& p, const std::vector<double>& sample) {
    double acc = 0.0;
    for (double y : sample) acc += family_log_density(f, p, y);
    return acc;
}

struct MomentSummary {
    double mean = 0.0;
    double var = 0.0;
    double zero_fraction = 0.0;
};

inline MomentSummary moments(const std::vector<double>& sample) {
    MomentSummary m;
    m.mean = detail::mean(sample);
    m.var = sample.size() > 1 ? detail::sample_variance(sample) : 0.0;
    std::size_t zeros = 0;
    for (double y : sample)
        if (y == 0.0) ++zeros;
    m.zero_fraction = static_cast<double>(zeros) / static_cast<double>(sample.size());
    return m;
}

}  // namespace detail_marg

// Maximum-likelihood fit. Discrete families require integer-valued samples;
// continuous predictions are first rescaled by an exposure factor and rounded
// (see prepare_counts). Lognormal fits raw positive values.
inline MarginalFit fit_mle(const std::vector<double>& sample, MarginalFamily family) {
    if (sample.size() < 30) throw DataError("fit_mle: need at least 30 observations");
    const std::size_t n = sample.size();

    MarginalFit fit;
    fit.family = family;
    fit.n = n;

    if (family_is_discrete(family)) {
        for (double y : sample) {
            if (y < 0.0 || y != std::floor(y)) {
                throw DataError("fit_mle: discrete family '" + family_name(family) +
                                "' requires non-negative integer samples; rescale and round first");
            }
        }
    }

    const auto mom = detail_marg::moments(sample);

    switch (family) {
        case MarginalFamily::Poisson: {
            if (mom.mean <= 0.0) throw DataError("fit_mle: poisson needs a positive sample mean");
            fit.params = {mom.mean};  // closed-form MLE
            fit.converged = true;
            break;
        }
        case MarginalFamily::Lognormal: {
            for (double y : sample) {
                if (y <= 0.0) throw DataError("fit_mle: lognormal requires strictly positive values");
            }
            double m = 0.0;
            for (double y : sample) m += std::log(y);
            m /= static_cast<double>(n);
            double s2 = 0.0;
            for (double y : sample) s2 += (std::log(y) - m) * (std::log(y) - m);
            s2 /= static_cast<double>(n);  // MLE variance uses 1/n
            if (s2 <= 0.0) throw DataError("fit_mle: lognormal sample is degenerate");
            fit.params = {m, std::sqrt(s2)};
            fit.converged = true;
            break;
        }
        case MarginalFamily::Nb1:
        case MarginalFamily::Nb2: {
            if (mom.mean <= 0.0) throw DataError("fit_mle: negative binomial needs a positive sample mean");
            // method-of-moments start, optimization over (log mu, log sigma)
            double sigma0 = (family == MarginalFamily::Nb1)
                                ? std::max(1e-3, (mom.var - mom.mean) / (mom.mean * mom.mean))
                                : std::max(1e-3, mom.var / mom.mean - 1.0);
            const std::vector<double> x0 = {std::log(mom.mean), std::log(sigma0)};
            auto objective = [&](const std::vector<double>& x) {
                const double mu = std::exp(std::clamp(x[0], -30.0, 30.0));
                const double sigma = std::exp(std::clamp(x[1], -30.0, 30.0));
                return -detail_marg::loglik(family, {mu, sigma}, sample);
            };
            const auto res = detail::bfgs_minimize(objective, x0);
            if (!res.converged) {
                throw NumericError("fit_mle: " + family_name(family) + " did not converge after " +
                                   std::to_string(res.iterations) + " iterations (|grad| = " +
                                   std::to_string(res.grad_norm) + ")");
            }
            fit.params = {std::exp(res.x[0]), std::exp(res.x[1])};
            fit.converged = true;
            break;
        }
        case MarginalFamily::Zip: {
            if (mom.mean <= 0.0) throw DataError("fit_mle: zip needs a positive sample mean");
            const double pi0 = std::clamp(mom.zero_fraction * 0.5, 1e-4, 0.98);
            const std::vector<double> x0 = {std::log(mom.mean / (1.0 - pi0)),
                                            std::log(pi0 / (1.0 - pi0))};
            auto objective = [&](const std::vector<double>& x) {
                const double lambda = std::exp(std::clamp(x[0], -30.0, 30.0));
                const double pi = 1.0 / (1.0 + std::exp(-std::clamp(x[1], -35.0, 35.0)));
                return -detail_marg::loglik(MarginalFamily::Zip, {lambda, pi}, sample);
            };
            const auto res = detail::bfgs_minimize(objective, x0);
            if (!res.converged) {
                throw NumericError("fit_mle: zip did not converge after " + std::to_string(res.iterations) +
                                   " iterations (|grad| = " + std::to_string(res.grad_norm) + ")");
            }
            fit.params = {std::exp(res.x[0]), 1.0 / (1.0 + std::exp(-res.x[1]))};
            fit.converged = true;
            break;
        }
    }

    fit.loglik = detail_marg::loglik(family, fit.params, sample);
    const int k = family_param_count(family);
    fit.aic = 2.0 * k - 2.0 * fit.loglik;
    fit.bic = k * std::log(static_cast<double>(n)) - 2.0 * fit.loglik;
    return fit;
}

// Continuous predictions -> integer counts for the discrete families.
inline std::vector<double> prepare_counts(const std::vector<double>& sample, double exposure) {
    if (!(exposure > 0.0)) throw ConfigError("prepare_counts: exposure must be positive");
    std::vector<double> counts;
    counts.reserve(sample.size());
    for (double y : sample) {
        if (y < 0.0) throw DataError("prepare_counts: negative value in sample");
        counts.push_back(std::round(y * exposure));
    }
    return counts;
}

// Minimum-AIC selection among candidate families fitted to the same sample;
// ties go to the family with fewer parameters. Mixing discrete and
// continuous families is rejected: their likelihoods are not comparable.
inline MarginalFit select_family(const std::vector<double>& sample, const std::vector<MarginalFamily>& families) {
    if (families.size() < 2) throw ConfigError("select_family: need at least two candidate families");
    const bool discrete = family_is_discrete(families.front());
    for (auto f : families) {
        if (family_is_discrete(f) != discrete) {
            throw ConfigError("select_family: cannot compare discrete and continuous families by AIC");
        }
    }
    bool have_best = false;
    MarginalFit best;
    for (auto f : families) {
        const MarginalFit fit = fit_mle(sample, f);
        if (!have_best || fit.aic < best.aic ||
            (fit.aic == best.aic && family_param_count(f) < family_param_count(best.family))) {
            best = fit;
            have_best = true;
        }
    }
    return best;
}

// CDF on the original (pre-exposure) scale.
inline double marginal_cdf(const MarginalFit& fit, double z) {
    if (family_is_discrete(fit.family)) {
        return family_cdf(fit.family, fit.params, std::floor(z * fit.exposure + 1e-9));
    }
    return family_cdf(fit.family, fit.params, z);
}

inline nlohmann::json marginal_to_json(const MarginalFit& fit) {
    return nlohmann::json{{"family", family_name(fit.family)}, {"params", fit.params},
                          {"loglik", fit.loglik},             {"aic", fit.aic},
                          {"bic", fit.bic},                   {"n", fit.n},
                          {"exposure", fit.exposure},         {"converged", fit.converged}};
}

inline MarginalFit marginal_from_json(const nlohmann::json& j) {
    MarginalFit fit;
    fit.family = family_from_name(j.at("family").get<std::string>());
    fit.params = j.at("params").get<std::vector<double>>();
    fit.loglik = j.at("loglik").get<double>();
    fit.aic = j.at("aic").get<double>();
    fit.bic = j.at("bic").get<double>();
    fit.n = j.at("n").get<std::size_t>();
    fit.exposure = j.at("exposure").get<double>();
    fit.converged = j.at("converged").get<bool>();
    return fit;
}

}  // namespace pluvia
