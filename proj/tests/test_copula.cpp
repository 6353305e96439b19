#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "pluvia/copula.hpp"

using namespace pluvia;

namespace {

// O(n^2) Kendall tau-b, the oracle for the merge-sort implementation.
// Jointly tied pairs count towards both tie corrections.
double kendall_brute(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    long nc = 0, nd = 0;
    std::size_t tx = 0, ty = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = x[i] - x[j];
            const double dy = y[i] - y[j];
            if (dx == 0.0) ++tx;
            if (dy == 0.0) ++ty;
            if (dx == 0.0 || dy == 0.0) continue;
            if (dx * dy > 0.0) ++nc; else ++nd;
        }
    }
    const double n0 = 0.5 * double(n) * double(n - 1);
    return double(nc - nd) / std::sqrt((n0 - tx) * (n0 - ty));
}

double pairwise_tau_of_sample(const std::vector<std::vector<double>>& sample, std::size_t a, std::size_t b) {
    std::vector<double> xa, xb;
    for (const auto& row : sample) {
        xa.push_back(row[a]);
        xb.push_back(row[b]);
    }
    return pluvia::detail::kendall_tau(xa, xb);
}

}  // namespace

TEST_CASE("kendall tau merge-sort matches the quadratic oracle") {
    pluvia::detail::Rng rng(7);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> x, y;
        for (int i = 0; i < 60; ++i) {
            // coarse grid forces ties in both variables
            x.push_back(std::floor(rng.uniform(0.0, 8.0)));
            y.push_back(std::floor(rng.uniform(0.0, 8.0)) + 0.3 * x.back());
        }
        CHECK_THAT(pluvia::detail::kendall_tau(x, y), Catch::Matchers::WithinAbs(kendall_brute(x, y), 1e-12));
    }
}

TEST_CASE("gumbel cdf at theta 1 is the exact product") {
    const std::vector<double> u = {0.3, 0.7, 0.123, 0.9};
    CHECK(gumbel_cdf(u, 1.0) == 0.3 * 0.7 * 0.123 * 0.9);
}

TEST_CASE("gumbel cdf closed-form point at theta 2") {
    const double expected = std::pow(2.0, -std::sqrt(2.0));
    CHECK_THAT(gumbel_cdf({0.5, 0.5}, 2.0), Catch::Matchers::WithinAbs(expected, 1e-12));
}

TEST_CASE("gumbel cdf is grounded and normalized at the corners") {
    CHECK(gumbel_cdf({0.0, 0.5, 0.9}, 2.5) == 0.0);
    CHECK(gumbel_cdf({1.0, 1.0}, 3.0) == 1.0);
    CHECK_THROWS_AS(gumbel_cdf({0.5, 0.5}, 0.9), NumericError);
}

TEST_CASE("frechet bounds hold across random draws") {
    pluvia::detail::Rng rng(11);
    for (int i = 0; i < 10000; ++i) {
        const double theta = rng.uniform(1.0, 12.0);
        std::vector<double> u(2 + rng.uniform_int(5));
        double prod = 1.0, lo = 1.0;
        for (auto& ui : u) {
            ui = rng.uniform_open();
            prod *= ui;
            lo = std::min(lo, ui);
        }
        const double c = gumbel_cdf(u, theta);
        REQUIRE(c >= prod - 1e-12);
        REQUIRE(c <= lo + 1e-12);
    }
}

TEST_CASE("gumbel cdf is nondecreasing in theta on the diagonal") {
    for (double ui : {0.2, 0.5, 0.8}) {
        double prev = 0.0;
        for (double theta : {1.0, 1.3, 2.0, 4.0, 10.0, 30.0}) {
            const double c = gumbel_cdf({ui, ui, ui}, theta);
            CHECK(c >= prev - 1e-15);
            prev = c;
        }
        // approaches min(u) from below
        CHECK_THAT(gumbel_cdf({ui, ui, ui}, 200.0), Catch::Matchers::WithinAbs(ui, 1e-2));
    }
}

TEST_CASE("fixing a coordinate at 1 marginalizes the copula") {
    const double theta = 1.7;
    const std::vector<double> u3 = {0.4, 0.6, 0.85};
    const std::vector<double> u4 = {0.4, 1.0, 0.6, 0.85};
    CHECK_THAT(gumbel_cdf(u4, theta), Catch::Matchers::WithinRel(gumbel_cdf(u3, theta), 1e-14));
}

TEST_CASE("bivariate density is one under independence") {
    for (double u : {0.1, 0.5, 0.9}) {
        for (double v : {0.2, 0.6, 0.95}) {
            CHECK(gumbel_bivariate_density(u, v, 1.0) == 1.0);
        }
    }
}

TEST_CASE("bivariate density rejects boundary arguments") {
    CHECK_THROWS_AS(gumbel_bivariate_density(0.0, 0.5, 1.5), NumericError);
    CHECK_THROWS_AS(gumbel_bivariate_density(0.5, 1.0, 1.5), NumericError);
}

TEST_CASE("bivariate density matches finite differences of the cdf") {
    const double theta = 1.5;
    const double h = 1e-5;
    double worst = 0.0;
    for (int i = 1; i <= 10; ++i) {
        for (int j = 1; j <= 10; ++j) {
            const double u = i / 11.0;
            const double v = j / 11.0;
            const double fd = (gumbel_cdf({u + h, v + h}, theta) - gumbel_cdf({u + h, v - h}, theta) -
                               gumbel_cdf({u - h, v + h}, theta) + gumbel_cdf({u - h, v - h}, theta)) /
                              (4.0 * h * h);
            const double analytic = gumbel_bivariate_density(u, v, theta);
            worst = std::max(worst, std::abs(analytic - fd) / std::abs(analytic));
        }
    }
    INFO("worst relative error " << worst);
    CHECK(worst < 1e-4);
}

TEST_CASE("bivariate density integrates to one") {
    // Substituting u = exp(-w) maps the singular (1,1) corner to the origin;
    // geometrically graded Gauss-Legendre panels resolve it.
    const double theta = 2.0;
    const std::array<double, 5> gl_x = {-0.9061798459386640, -0.5384693101056831, 0.0,
                                        0.5384693101056831, 0.9061798459386640};
    const std::array<double, 5> gl_w = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                                        0.4786286704993665, 0.2369268850561891};
    std::vector<double> edges = {0.0};
    for (int k = 0; k <= 160; ++k) edges.push_back(1e-8 * std::pow(60.0 / 1e-8, k / 160.0));

    std::vector<double> nodes, weights;
    for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
        const double a = edges[p], b = edges[p + 1];
        for (int q = 0; q < 5; ++q) {
            nodes.push_back(0.5 * (a + b) + 0.5 * (b - a) * gl_x[q]);
            weights.push_back(0.5 * (b - a) * gl_w[q]);
        }
    }

    double integral = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const double u = std::exp(-nodes[i]);
        if (u >= 1.0 || u <= 0.0) continue;
        for (std::size_t j = 0; j < nodes.size(); ++j) {
            const double v = std::exp(-nodes[j]);
            if (v >= 1.0 || v <= 0.0) continue;
            // jacobian u*v from (u,v) -> (w,z)
            integral += weights[i] * weights[j] * gumbel_bivariate_density(u, v, theta) * u * v;
        }
    }
    INFO("integral " << integral);
    CHECK_THAT(integral, Catch::Matchers::WithinAbs(1.0, 1e-4));
}

TEST_CASE("independence sampler has uniform margins by KS test") {
    const std::size_t n = 10000;
    const auto sample = sample_gumbel(n, 2, 1.0, 101);
    for (std::size_t c = 0; c < 2; ++c) {
        std::vector<double> col;
        for (const auto& row : sample) col.push_back(row[c]);
        std::sort(col.begin(), col.end());
        double d = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double fe_hi = double(i + 1) / double(n);
            const double fe_lo = double(i) / double(n);
            d = std::max({d, std::abs(fe_hi - col[i]), std::abs(col[i] - fe_lo)});
        }
        // critical value at level 0.01
        CHECK(d < 1.63 / std::sqrt(double(n)));
    }
    // and near-zero dependence
    CHECK_THAT(pairwise_tau_of_sample(sample, 0, 1), Catch::Matchers::WithinAbs(0.0, 0.03));
}

TEST_CASE("sampler dependence matches the tau identity") {
    for (double theta : {1.2, 2.0, 5.0}) {
        const auto sample = sample_gumbel(20000, 2, theta, 202);
        const double tau = pairwise_tau_of_sample(sample, 0, 1);
        CHECK_THAT(tau, Catch::Matchers::WithinAbs(1.0 - 1.0 / theta, 0.02));
    }
}

TEST_CASE("sampler margins stay uniform under dependence") {
    const std::size_t n = 20000;
    const auto sample = sample_gumbel(n, 6, 2.5, 303);
    const double se = std::sqrt(1.0 / 12.0 / double(n));
    for (std::size_t c = 0; c < 6; ++c) {
        double m = 0.0;
        for (const auto& row : sample) m += row[c];
        m /= double(n);
        CHECK_THAT(m, Catch::Matchers::WithinAbs(0.5, 3.0 * se));
    }
}

TEST_CASE("sampler is deterministic per seed") {
    const auto a = sample_gumbel(50, 3, 1.8, 42);
    const auto b = sample_gumbel(50, 3, 1.8, 42);
    CHECK(a == b);
    const auto c = sample_gumbel(50, 3, 1.8, 43);
    CHECK(a != c);
}

TEST_CASE("pseudo observations are ranks over n+1") {
    std::vector<std::vector<double>> y;
    for (double v : {3.0, 1.0, 2.0}) y.push_back({v});
    // bypass the n >= 10 guard by padding a second identical-rank column set
    std::vector<std::vector<double>> padded;
    for (double v : {3.0, 1.0, 2.0, 10.0, 11.0, 12.0, 13.0, 14.0, 15.0, 16.0}) padded.push_back({v});
    const auto p = pseudo_observations(padded);
    CHECK_THAT(p.u[0][0], Catch::Matchers::WithinRel(3.0 / 11.0, 1e-12));
    CHECK_THAT(p.u[1][0], Catch::Matchers::WithinRel(1.0 / 11.0, 1e-12));
    CHECK_THAT(p.u[2][0], Catch::Matchers::WithinRel(2.0 / 11.0, 1e-12));
}

TEST_CASE("pseudo observations of a strictly increasing column") {
    std::vector<std::vector<double>> y;
    for (int i = 0; i < 12; ++i) y.push_back({double(i)});
    const auto p = pseudo_observations(y);
    for (int i = 0; i < 12; ++i) {
        CHECK_THAT(p.u[static_cast<std::size_t>(i)][0], Catch::Matchers::WithinRel((i + 1) / 13.0, 1e-12));
    }
}

TEST_CASE("pseudo observations are invariant under increasing transforms") {
    pluvia::detail::Rng rng(5);
    std::vector<std::vector<double>> y, ty;
    for (int i = 0; i < 40; ++i) {
        const double a = rng.normal();
        const double b = rng.normal();
        y.push_back({a, b});
        ty.push_back({std::exp(a), std::atan(b)});  // strictly increasing maps
    }
    const auto p = pseudo_observations(y);
    const auto q = pseudo_observations(ty);
    for (std::size_t i = 0; i < y.size(); ++i) {
        CHECK(p.u[i][0] == q.u[i][0]);
        CHECK(p.u[i][1] == q.u[i][1]);
    }
}

TEST_CASE("pseudo observations average tied ranks and reject constants") {
    std::vector<std::vector<double>> y;
    for (double v : {5.0, 5.0, 1.0, 2.0, 3.0, 4.0, 6.0, 7.0, 8.0, 9.0}) y.push_back({v});
    const auto p = pseudo_observations(y);
    // the two 5.0s share ranks 5 and 6 -> average 5.5
    CHECK_THAT(p.u[0][0], Catch::Matchers::WithinRel(5.5 / 11.0, 1e-12));
    CHECK(p.u[0][0] == p.u[1][0]);

    std::vector<std::vector<double>> constant(12, {1.0});
    CHECK_THROWS_AS(pseudo_observations(constant), DataError);
}

TEST_CASE("tau inversion formula and floor") {
    // planted dependence: theta 2 -> tau 0.5 -> inversion returns 1/(1-tau_bar)
    const auto sample = sample_gumbel(3000, 4, 2.0, 77);
    const auto p = pseudo_observations(sample);
    const double tau_bar = mean_pairwise_tau(p);
    const auto fit = estimate_theta_tau(p, 0);
    CHECK_THAT(fit.theta, Catch::Matchers::WithinRel(1.0 / (1.0 - tau_bar), 1e-12));
    CHECK_THAT(fit.theta, Catch::Matchers::WithinAbs(2.0, 0.15));

    // negatively associated data floors at independence
    std::vector<std::vector<double>> anti;
    for (int i = 0; i < 30; ++i) anti.push_back({double(i), double(30 - i)});
    const auto floor_fit = estimate_theta_tau(pseudo_observations(anti), 0);
    CHECK(floor_fit.theta == 1.0);
}

TEST_CASE("tau inversion recovers a City-A-scale parameter at decade length") {
    const double theta_true = 1.327;
    const auto sample = sample_gumbel(520, 6, theta_true, 1001);
    const auto fit = estimate_theta_tau(pseudo_observations(sample), 100, 9);
    CHECK_THAT(fit.theta, Catch::Matchers::WithinRel(theta_true, 0.10));
    CHECK(fit.se > 0.0);
    CHECK(fit.se < 0.2);
}

TEST_CASE("bootstrap standard errors are deterministic per seed") {
    const auto sample = sample_gumbel(200, 3, 1.8, 5);
    const auto p = pseudo_observations(sample);
    const auto a = estimate_theta_tau(p, 50, 123);
    const auto b = estimate_theta_tau(p, 50, 123);
    CHECK(a.se == b.se);
    const auto c = estimate_theta_tau(p, 50, 124);
    CHECK(a.se != c.se);
}

TEST_CASE("composite likelihood estimator agrees with tau inversion") {
    const auto sample = sample_gumbel(2000, 6, 2.0, 31);
    const auto p = pseudo_observations(sample);
    const auto tau_fit = estimate_theta_tau(p, 0);
    const auto cml_fit = estimate_theta_cml(p, 0);
    INFO("tau " << tau_fit.theta << " cml " << cml_fit.theta);
    CHECK(std::abs(cml_fit.theta - tau_fit.theta) < 0.1);

    // optimality of the composite likelihood at its argmax
    CHECK(composite_log_likelihood(p, cml_fit.theta) >= composite_log_likelihood(p, 2.0) - 1e-9);
}

TEST_CASE("composite likelihood on independent data stays near one") {
    const auto sample = sample_gumbel(2000, 4, 1.0, 63);
    const auto fit = estimate_theta_cml(pseudo_observations(sample), 0);
    CHECK(fit.theta >= 1.0);
    CHECK(fit.theta <= 1.05);
}

TEST_CASE("tau inversion bias shrinks with sample size") {
    const double theta_true = 2.0;
    auto median_abs_error = [&](std::size_t n, std::uint64_t seed_base) {
        std::vector<double> errs;
        for (int rep = 0; rep < 50; ++rep) {
            const auto sample = sample_gumbel(n, 2, theta_true, seed_base + static_cast<std::uint64_t>(rep));
            const auto fit = estimate_theta_tau(pseudo_observations(sample), 0);
            errs.push_back(std::abs(fit.theta - theta_true));
        }
        return pluvia::detail::median(errs);
    };
    const double coarse = median_abs_error(200, 40000);
    const double fine = median_abs_error(5000, 50000);
    INFO("median abs error n=200: " << coarse << ", n=5000: " << fine);
    CHECK(fine < coarse);
}

TEST_CASE("copula fits round-trip through json") {
    const auto sample = sample_gumbel(100, 3, 1.5, 8);
    const auto fit = estimate_theta_tau(pseudo_observations(sample), 25, 99);
    const auto restored = copula_from_json(nlohmann::json::parse(copula_to_json(fit).dump()));
    CHECK(restored.theta == fit.theta);
    CHECK(restored.se == fit.se);
    CHECK(restored.estimator == fit.estimator);
    CHECK(restored.n == fit.n);
    CHECK(restored.d == fit.d);
}
