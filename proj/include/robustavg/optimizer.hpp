#pragma once

#include "robustavg/estimator.hpp"
#include "robustavg/projected_lbfgs.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <optional>
#include <thread>
#include <vector>

namespace robustavg {

struct OptimizerConfig {
    double eps_tol = 1e-4;
    int max_outer_iters = 50;
    int n_restarts = 10;
    double theta_init_scale = 0.1;  // restarts draw theta uniformly in scale * [-c0, c0]^p
    bool use_analytic_gradients = true;
    std::uint64_t seed = 0;
    double c0 = 10.0;
    /// Limits on beta; unset means the observed reward range.
    std::optional<std::pair<double, double>> beta_box;
    LbfgsOptions lbfgs;
    int threads = 1;

    void validate() const {
        require(std::isfinite(eps_tol) && eps_tol > 0.0, "eps_tol must be positive");
        require(max_outer_iters >= 1, "max_outer_iters must be at least 1");
        require(n_restarts >= 1, "n_restarts must be at least 1");
        require(theta_init_scale >= 0.0 && theta_init_scale <= 1.0, "theta_init_scale must lie in [0, 1]");
        require(std::isfinite(c0) && c0 > 0.0, "c0 must be positive");
        require(threads >= 1, "threads must be at least 1");
        if (beta_box)
            require(std::isfinite(beta_box->first) && std::isfinite(beta_box->second) &&
                        beta_box->first <= beta_box->second,
                    "beta box must be a finite interval");
    }
};

/// Sorted unique rewards inside [lo, hi], together with lo and hi.
inline std::vector<double> beta_candidates(const Vec& rewards, double lo, double hi) {
    require(lo <= hi, "beta box must satisfy lo <= hi");
    std::vector<double> out{lo, hi};
    for (double r : rewards)
        if (r >= lo && r <= hi) out.push_back(r);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

inline std::vector<double> beta_candidates(const Vec& rewards, const OptimizerConfig& cfg) {
    if (cfg.beta_box) return beta_candidates(rewards, cfg.beta_box->first, cfg.beta_box->second);
    if (rewards.size() == 0) throw DataError("no rewards to build beta candidates from");
    return beta_candidates(rewards, rewards.minCoeff(), rewards.maxCoeff());
}

struct BetaChoice {
    double beta = 0.0;
    double objective = 0.0;
};

/// Leftmost maximizer of values over ascending candidates; non-finite values are skipped.
inline BetaChoice scan_beta(const std::vector<double>& candidates, const std::vector<double>& values) {
    if (candidates.empty()) throw ConfigError("empty beta candidate set");
    if (values.size() != candidates.size()) throw DataError("one value per beta candidate expected");
    std::optional<BetaChoice> best;
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        if (!std::isfinite(values[k])) continue;
        if (!best || values[k] > best->objective) best = BetaChoice{candidates[k], values[k]};
    }
    if (!best) throw NumericError("objective is not finite at any beta candidate");
    return *best;
}

inline BetaChoice maximize_beta(const ObjectiveModel::PolicyFit& fit, const std::vector<double>& candidates) {
    if (candidates.empty()) throw ConfigError("empty beta candidate set");
    return scan_beta(candidates, fit.objectives(candidates));
}

struct ThetaStep {
    Vec theta;
    double objective = 0.0;
    double start_objective = 0.0;
    int iterations = 0;
    bool line_search_failed = false;
};

namespace detail {

inline double objective_at(const ObjectiveModel& model, const Vec& theta, double beta, double c0) {
    return model.at(LogisticPolicy(theta, c0)).objective(beta);
}

/// Central differences, one-sided at the box faces.
inline Vec fd_gradient(const ObjectiveModel& model, const Vec& theta, double beta, double c0) {
    Vec g(theta.size());
    for (Eigen::Index j = 0; j < theta.size(); ++j) {
        const double h = 1e-5 * (1.0 + std::abs(theta[j]));
        Vec up = theta, down = theta;
        up[j] = std::min(theta[j] + h, c0);
        down[j] = std::max(theta[j] - h, -c0);
        g[j] = (objective_at(model, up, beta, c0) - objective_at(model, down, beta, c0)) / (up[j] - down[j]);
    }
    return g;
}

} // namespace detail

/**
 * Bounded quasi-Newton ascent of theta -> objective(beta, pi_theta) over
 * [-c0, c0]^p. Trial points whose fits are singular count as failed line
 * search trials.
 */
inline ThetaStep maximize_theta(const ObjectiveModel& model, double beta, const Vec& start, const OptimizerConfig& cfg) {
    require(start.size() == model.data().p(), "theta has the wrong dimension");
    require(start.cwiseAbs().maxCoeff() <= cfg.c0, "start theta lies outside the box");
    const double c0 = cfg.c0;
    auto negated = [&](const Vec& theta, Vec& g) -> double {
        try {
            const LogisticPolicy pol(theta, c0);
            if (cfg.use_analytic_gradients) {
                const auto [f, grad] = model.at_differentiable(pol).objective_and_gradient(beta);
                g = -grad;
                return -f;
            }
            const double f = model.at(pol).objective(beta);
            g = -detail::fd_gradient(model, theta, beta, c0);
            return -f;
        } catch (const NumericError&) {
            g = Vec::Constant(theta.size(), std::numeric_limits<double>::quiet_NaN());
            return std::numeric_limits<double>::infinity();
        }
    };
    const Vec lo = Vec::Constant(start.size(), -c0), hi = Vec::Constant(start.size(), c0);
    ThetaStep out;
    out.start_objective = detail::objective_at(model, start, beta, c0);
    if (!std::isfinite(out.start_objective)) throw NumericError("non-finite objective at the start theta");
    const LbfgsResult r = minimize_box(negated, start, lo, hi, cfg.lbfgs);
    out.theta = r.x;
    out.objective = -r.f;
    out.iterations = r.iterations;
    out.line_search_failed = r.line_search_failed;
    if (out.objective < out.start_objective) {  // the gradient-form value can differ in the last bits
        out.theta = start;
        out.objective = out.start_objective;
    }
    return out;
}

struct TraceRecord {
    int restart = 0;
    int iteration = 0;
    double beta = 0.0;
    double theta_norm = 0.0;
    double objective = 0.0;
};

struct RestartSummary {
    bool ok = false;
    std::string error;
    Vec theta_start;
    Vec theta;
    double beta = 0.0;
    double objective = -std::numeric_limits<double>::infinity();
    int outer_iterations = 0;
    bool converged = false;
    int line_search_warnings = 0;
};

struct TrainResult {
    Vec theta_hat;
    double beta_hat = 0.0;
    double objective = 0.0;
    int restart_index = -1;
    std::vector<TraceRecord> trace;
    std::vector<RestartSummary> restarts;
};

namespace detail {

inline RestartSummary run_restart(const ObjectiveModel& model, const OptimizerConfig& cfg,
                                  const std::vector<double>& candidates, int restart,
                                  std::vector<TraceRecord>& trace) {
    RestartSummary out;
    Rng rng = make_rng(cfg.seed, "restart", static_cast<std::uint64_t>(restart));
    const Eigen::Index p = model.data().p();
    Vec theta(p);
    for (Eigen::Index j = 0; j < p; ++j) theta[j] = cfg.theta_init_scale * cfg.c0 * (2.0 * uniform01(rng) - 1.0);
    out.theta_start = theta;
    for (int t = 0; t < cfg.max_outer_iters; ++t) {
        const BetaChoice b = maximize_beta(model.at(LogisticPolicy(theta, cfg.c0)), candidates);
        const ThetaStep step = maximize_theta(model, b.beta, theta, cfg);
        out.line_search_warnings += step.line_search_failed ? 1 : 0;
        const double moved = (step.theta - theta).norm();
        const double threshold = std::min(theta.norm(), 1.0) * cfg.eps_tol;
        theta = step.theta;
        out.theta = theta;
        out.beta = b.beta;
        out.objective = step.objective;
        out.outer_iterations = t + 1;
        trace.push_back({restart, t, b.beta, theta.norm(), step.objective});
        if (moved <= threshold) {
            out.converged = true;
            break;
        }
    }
    out.ok = std::isfinite(out.objective);
    return out;
}

} // namespace detail

/**
 * Alternates the beta scan and the theta ascent from cfg.n_restarts random
 * starts and keeps the best restart (ties go to the lowest index). Restarts
 * are independent and run on up to cfg.threads threads; the result does not
 * depend on the thread count.
 */
inline TrainResult block_coordinate_ascent(const ObjectiveModel& model, const OptimizerConfig& cfg) {
    cfg.validate();
    const std::vector<double> candidates = beta_candidates(model.data().rewards(), cfg);
    const int n = cfg.n_restarts;
    std::vector<RestartSummary> summaries(static_cast<std::size_t>(n));
    std::vector<std::vector<TraceRecord>> traces(static_cast<std::size_t>(n));
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int r = next++; r < n; r = next++) {
            auto& s = summaries[static_cast<std::size_t>(r)];
            try {
                s = detail::run_restart(model, cfg, candidates, r, traces[static_cast<std::size_t>(r)]);
            } catch (const Error& e) {
                s.ok = false;
                s.error = e.what();
            }
        }
    };
    const int workers = std::min(cfg.threads, n);
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    TrainResult out;
    for (int r = 0; r < n; ++r) {
        const auto& s = summaries[static_cast<std::size_t>(r)];
        out.trace.insert(out.trace.end(), traces[static_cast<std::size_t>(r)].begin(),
                         traces[static_cast<std::size_t>(r)].end());
        if (s.ok && (out.restart_index < 0 || s.objective > out.objective)) {
            out.restart_index = r;
            out.objective = s.objective;
            out.theta_hat = s.theta;
            out.beta_hat = s.beta;
        }
    }
    out.restarts = std::move(summaries);
    if (out.restart_index < 0) {
        std::string why = out.restarts.front().error;
        throw NumericError("all restarts failed to produce a finite objective" + (why.empty() ? "" : ": " + why));
    }
    return out;
}

} // namespace robustavg
