#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <vector>

#include "pluvia/errors.hpp"

namespace pluvia::detail {

struct BrentResult {
    double x = 0.0;
    double f = 0.0;
    int iterations = 0;
    bool converged = false;
};

// Brent's bounded 1-D minimizer (golden section + parabolic interpolation).
inline BrentResult brent_minimize(const std::function<double(double)>& f, double lo, double hi,
                                  double tol = 1e-8, int max_iter = 200) {
    if (!(lo < hi)) throw NumericError("brent_minimize: invalid bracket");
    const double golden = 0.5 * (3.0 - std::sqrt(5.0));
    double a = lo, b = hi;
    double x = a + golden * (b - a);
    double w = x, v = x;
    double fx = f(x), fw = fx, fv = fx;
    double d = 0.0, e = 0.0;

    BrentResult res;
    for (int iter = 0; iter < max_iter; ++iter) {
        const double m = 0.5 * (a + b);
        const double tol1 = tol * std::abs(x) + 1e-12;
        const double tol2 = 2.0 * tol1;
        if (std::abs(x - m) <= tol2 - 0.5 * (b - a)) {
            res.converged = true;
            res.iterations = iter;
            break;
        }
        bool golden_step = true;
        if (std::abs(e) > tol1) {
            // parabolic fit through (x, w, v)
            const double r = (x - w) * (fx - fv);
            double q = (x - v) * (fx - fw);
            double p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if (q > 0.0) p = -p;
            q = std::abs(q);
            if (std::abs(p) < std::abs(0.5 * q * e) && p > q * (a - x) && p < q * (b - x)) {
                e = d;
                d = p / q;
                const double u = x + d;
                if (u - a < tol2 || b - u < tol2) d = (m > x) ? tol1 : -tol1;
                golden_step = false;
            }
        }
        if (golden_step) {
            e = (x < m) ? b - x : a - x;
            d = golden * e;
        }
        const double u = (std::abs(d) >= tol1) ? x + d : x + ((d > 0.0) ? tol1 : -tol1);
        const double fu = f(u);
        if (fu <= fx) {
            if (u < x) b = x; else a = x;
            v = w; fv = fw;
            w = x; fw = fx;
            x = u; fx = fu;
        } else {
            if (u < x) a = u; else b = u;
            if (fu <= fw || w == x) {
                v = w; fv = fw;
                w = u; fw = fu;
            } else if (fu <= fv || v == x || v == w) {
                v = u; fv = fu;
            }
        }
        res.iterations = iter + 1;
    }
    res.x = x;
    res.f = fx;
    if (!res.converged && res.iterations >= max_iter) res.converged = false;
    return res;
}

struct BfgsResult {
    std::vector<double> x;
    double f = 0.0;
    double grad_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

using ObjectiveFn = std::function<double(const std::vector<double>&)>;

inline std::vector<double> numeric_gradient(const ObjectiveFn& f, const std::vector<double>& x,
                                            double step = 1e-6) {
    std::vector<double> g(x.size());
    std::vector<double> xp = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double h = step * std::max(1.0, std::abs(x[i]));
        xp[i] = x[i] + h;
        const double fp = f(xp);
        xp[i] = x[i] - h;
        const double fm = f(xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// Quasi-Newton (BFGS) minimizer with central-difference gradients and an
// Armijo backtracking line search. Intended for the low-dimensional MLE
// problems in this library; callers enforce parameter bounds by
// reparameterizing into unconstrained space. Convergence: gradient norm
// small relative to the objective magnitude, or stagnating decrease.
inline BfgsResult bfgs_minimize(const ObjectiveFn& f, std::vector<double> x0,
                                double grad_tol = 1e-6, int max_iter = 200) {
    const std::size_t n = x0.size();
    BfgsResult res;
    res.x = std::move(x0);
    res.f = f(res.x);
    if (!std::isfinite(res.f)) throw NumericError("bfgs_minimize: objective not finite at start");

    // inverse Hessian approximation, starts as identity
    std::vector<std::vector<double>> h(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) h[i][i] = 1.0;

    std::vector<double> g = numeric_gradient(f, res.x);

    for (int iter = 0; iter < max_iter; ++iter) {
        double gnorm = 0.0;
        for (double gi : g) gnorm += gi * gi;
        gnorm = std::sqrt(gnorm);
        res.grad_norm = gnorm;
        res.iterations = iter;
        if (gnorm < grad_tol * std::max(1.0, std::abs(res.f))) {
            res.converged = true;
            return res;
        }

        // direction p = -H g
        std::vector<double> p(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) p[i] -= h[i][j] * g[j];

        double slope = 0.0;
        for (std::size_t i = 0; i < n; ++i) slope += p[i] * g[i];
        if (slope >= 0.0) {
            // reset to steepest descent if curvature info went bad
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) h[i][j] = (i == j) ? 1.0 : 0.0;
                p[i] = -g[i];
            }
            slope = -std::inner_product(g.begin(), g.end(), g.begin(), 0.0);
        }

        // Armijo backtracking
        double alpha = 1.0;
        const double c1 = 1e-4;
        std::vector<double> xn(n);
        double fn = res.f;
        bool moved = false;
        for (int ls = 0; ls < 60; ++ls) {
            for (std::size_t i = 0; i < n; ++i) xn[i] = res.x[i] + alpha * p[i];
            fn = f(xn);
            if (std::isfinite(fn) && fn <= res.f + c1 * alpha * slope) {
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!moved) {
            // no descent possible along p at representable step sizes
            res.converged = gnorm < 1e-3 * std::max(1.0, std::abs(res.f));
            return res;
        }
        if (std::abs(res.f - fn) <= 1e-11 * std::max(1.0, std::abs(res.f))) {
            // objective has stagnated at the optimizer's resolution
            res.x = xn;
            res.f = fn;
            res.converged = true;
            res.iterations = iter + 1;
            return res;
        }

        std::vector<double> gn = numeric_gradient(f, xn);
        std::vector<double> s(n), yv(n);
        double sy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = xn[i] - res.x[i];
            yv[i] = gn[i] - g[i];
            sy += s[i] * yv[i];
        }
        if (sy > 1e-12) {
            // BFGS inverse update: H <- (I - rho s y')H(I - rho y s') + rho s s'
            const double rho = 1.0 / sy;
            std::vector<double> hy(n, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) hy[i] += h[i][j] * yv[j];
            double yhy = 0.0;
            for (std::size_t i = 0; i < n; ++i) yhy += yv[i] * hy[i];
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) +
                               rho * rho * yhy * s[i] * s[j] + rho * s[i] * s[j];
                }
            }
        }

        res.x = xn;
        res.f = fn;
        g = std::move(gn);
    }
    // final gradient check
    double gnorm = 0.0;
    for (double gi : g) gnorm += gi * gi;
    res.grad_norm = std::sqrt(gnorm);
    res.converged = res.grad_norm < 10.0 * grad_tol * std::max(1.0, std::abs(res.f));
    res.iterations = max_iter;
    return res;
}

}  // namespace pluvia::detail
