#pragma once

#include "robustavg/core.hpp"

#include <cmath>
#include <deque>
#include <functional>
#include <limits>

namespace robustavg {

struct LbfgsOptions {
    int memory = 8;
    int max_iters = 100;
    int max_line_search = 30;
    double pgtol = 1e-6;      // stop when |P(x - g) - x|_inf <= pgtol
    double ftol = 1e-10;      // stop on relative decrease below ftol
    double armijo = 1e-4;
};

struct LbfgsResult {
    Vec x;
    double f = 0.0;
    int iterations = 0;
    int evaluations = 0;
    bool line_search_failed = false;
};

/// Objective returning f(x) and writing the gradient into g.
using ValueAndGradient = std::function<double(const Vec& x, Vec& g)>;

/**
 * Minimizes f over the box lo <= x <= hi with a projected limited-memory BFGS
 * iteration: the two-loop direction is restricted to the variables that are
 * not held at a bound by the gradient, and a backtracking Armijo search runs
 * along the projected path. Non-finite trial values count as failed trials.
 * Returns the best iterate; f never exceeds its value at the projected start.
 */
inline LbfgsResult minimize_box(const ValueAndGradient& fg, Vec x, const Vec& lo, const Vec& hi,
                                const LbfgsOptions& opt = {}) {
    const Eigen::Index n = x.size();
    if (lo.size() != n || hi.size() != n) throw ConfigError("bounds have the wrong length");
    x = x.cwiseMax(lo).cwiseMin(hi);
    LbfgsResult out;
    Vec g(n);
    double f = fg(x, g);
    out.evaluations = 1;
    if (!std::isfinite(f) || !g.allFinite()) throw NumericError("non-finite objective at the start point");

    std::deque<Vec> S, Y;
    for (out.iterations = 0; out.iterations < opt.max_iters; ++out.iterations) {
        const Vec pg = (x - g).cwiseMax(lo).cwiseMin(hi) - x;
        if (pg.cwiseAbs().maxCoeff() <= opt.pgtol) break;

        // variables pinned at a bound with the gradient pushing outward stay fixed
        Eigen::Array<bool, Eigen::Dynamic, 1> free(n);
        for (Eigen::Index i = 0; i < n; ++i)
            free[i] = !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0));
        auto mask = [&](Vec v) {
            for (Eigen::Index i = 0; i < n; ++i)
                if (!free[i]) v[i] = 0.0;
            return v;
        };

        Vec q = mask(g);
        std::vector<double> rho(S.size()), alpha(S.size());
        for (std::size_t k = S.size(); k-- > 0;) {
            rho[k] = 1.0 / Y[k].dot(S[k]);
            alpha[k] = rho[k] * S[k].dot(q);
            q -= alpha[k] * mask(Y[k]);
        }
        if (!S.empty()) q *= S.back().dot(Y.back()) / Y.back().squaredNorm();
        for (std::size_t k = 0; k < S.size(); ++k) {
            const double b = rho[k] * Y[k].dot(q);
            q += (alpha[k] - b) * mask(S[k]);
        }
        Vec d = -mask(q);
        if (!(d.dot(g) < 0.0)) {  // not a descent direction: fall back to steepest descent
            d = -mask(g);
            S.clear();
            Y.clear();
        }
        // first step of a fresh memory is scaled to move at most one unit
        double step = S.empty() ? std::min(1.0, 1.0 / std::max(d.cwiseAbs().maxCoeff(), 1e-300)) : 1.0;

        Vec x_new(n), g_new(n);
        double f_new = f;
        bool accepted = false;
        for (int ls = 0; ls < opt.max_line_search; ++ls, step *= 0.5) {
            x_new = (x + step * d).cwiseMax(lo).cwiseMin(hi);
            f_new = fg(x_new, g_new);
            ++out.evaluations;
            if (std::isfinite(f_new) && g_new.allFinite() && f_new <= f + opt.armijo * g.dot(x_new - x)) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            out.line_search_failed = true;
            break;
        }
        const Vec s = x_new - x, y = g_new - g;
        const double f_old = f;
        x = x_new;
        g = g_new;
        f = f_new;
        if (s.dot(y) > 1e-12 * y.squaredNorm() && s.dot(y) > 0.0) {
            S.push_back(s);
            Y.push_back(y);
            if (static_cast<int>(S.size()) > opt.memory) {
                S.pop_front();
                Y.pop_front();
            }
        }
        if (f_old - f <= opt.ftol * std::max({std::abs(f_old), std::abs(f), 1.0})) {
            ++out.iterations;
            break;
        }
    }
    out.x = x;
    out.f = f;
    return out;
}

} // namespace robustavg
