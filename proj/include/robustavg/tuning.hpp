#pragma once

#include "robustavg/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

namespace robustavg {

/// (mu, lambda) pair, per-sample scale.
struct PenaltyPair {
    double mu = 1e-3;
    double lambda = 1e-3;
};

struct TuningGrid {
    std::vector<PenaltyPair> value;
    std::vector<PenaltyPair> ratio;
    std::vector<Vec> probe_policies;
    std::vector<double> probe_betas;
    int k_folds = 3;
    double c0 = 10.0;
    /// Ridge penalty of the validation regression, per validation sample.
    double validation_mu = 1e-3;

    void validate() const {
        require(!value.empty() && !ratio.empty(), "tuning grids must be nonempty");
        require(!probe_policies.empty(), "at least one probe policy is required");
        require(!probe_betas.empty(), "at least one probe beta is required");
        require(k_folds >= 2, "k_folds must be at least 2");
        require(validation_mu > 0.0, "validation_mu must be positive");
        for (const auto& g : {value, ratio})
            for (const auto& pp : g)
                require(std::isfinite(pp.mu) && pp.mu > 0.0 && std::isfinite(pp.lambda) && pp.lambda >= 0.0,
                        "grid penalties must be finite with mu > 0 and lambda >= 0");
    }
};

/// Type-7 (linear interpolation) empirical quantile.
inline double empirical_quantile(std::vector<double> x, double q) {
    require(!x.empty(), "quantile of an empty sample");
    require(q >= 0.0 && q <= 1.0, "quantile level must lie in [0, 1]");
    std::sort(x.begin(), x.end());
    const double pos = q * static_cast<double>(x.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, x.size() - 1);
    return x[lo] + (pos - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

/// Cartesian product of mu and lambda values, mu varying slowest.
inline std::vector<PenaltyPair> penalty_grid(const std::vector<double>& mus, const std::vector<double>& lambdas) {
    std::vector<PenaltyPair> out;
    for (double m : mus)
        for (double l : lambdas) out.push_back({m, l});
    return out;
}

/**
 * Default grid: 3 x 3 penalties per route, n_probes probe policies drawn
 * uniformly in [-c0, c0]^p and the reward quartiles as probe betas.
 */
inline TuningGrid default_tuning_grid(const Dataset& d, std::uint64_t seed, double c0 = 10.0, int k_folds = 3,
                                      int n_probes = 5) {
    TuningGrid g;
    g.value = penalty_grid({1e-3, 1e-2, 1e-1}, {1e-4, 1e-3, 1e-2});
    g.ratio = g.value;
    g.k_folds = k_folds;
    g.c0 = c0;
    Rng rng = make_rng(seed, "tuning-probe-policy");
    for (int m = 0; m < n_probes; ++m) {
        Vec th(d.p());
        for (Eigen::Index j = 0; j < th.size(); ++j) th[j] = c0 * (2.0 * uniform01(rng) - 1.0);
        g.probe_policies.push_back(th);
    }
    const std::vector<double> r(d.rewards().begin(), d.rewards().end());
    for (double q : {0.25, 0.5, 0.75}) g.probe_betas.push_back(empirical_quantile(r, q));
    return g;
}

/// Episodes shuffled with the seed and dealt round-robin into k folds.
inline std::vector<std::vector<int>> episode_folds(int n_episodes, int k, std::uint64_t seed) {
    require(k >= 2, "k_folds must be at least 2");
    if (n_episodes < k) throw ConfigError("fewer episodes than folds");
    std::vector<int> perm(static_cast<std::size_t>(n_episodes));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = make_rng(seed, "tuning-folds");
    for (std::size_t i = perm.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
        std::swap(perm[i - 1], perm[std::min(j, i - 1)]);
    }
    std::vector<std::vector<int>> folds(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < perm.size(); ++i) folds[i % static_cast<std::size_t>(k)].push_back(perm[i]);
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

/**
 * Index of the row with the smallest maximum; rows with a non-finite entry
 * never win, ties go to the first index.
 */
inline std::size_t select_min_max(const std::vector<std::vector<double>>& errors) {
    if (errors.empty()) throw ConfigError("no candidates to select from");
    std::size_t best = 0;
    double best_val = std::numeric_limits<double>::infinity();
    bool found = false;
    for (std::size_t j = 0; j < errors.size(); ++j) {
        double worst = -std::numeric_limits<double>::infinity();
        for (double e : errors[j]) worst = std::isfinite(e) ? std::max(worst, e) : std::numeric_limits<double>::infinity();
        if (!found ? std::isfinite(worst) : worst < best_val) {
            best = j;
            best_val = worst;
            found = true;
        }
    }
    if (!found) throw NumericError("every tuning candidate failed");
    return best;
}

struct TuningReport {
    TuningParams params;
    TuningGrid grid;
    std::size_t value_index = 0;
    std::size_t ratio_index = 0;
    std::vector<std::vector<int>> folds;
    /// value_errors[j][m * L + l] and ratio_errors[j][m], summed over folds.
    std::vector<std::vector<double>> value_errors;
    std::vector<std::vector<double>> ratio_errors;
};

namespace detail {

/// Mean square of the kernel-ridge fit of y on the validation state-actions.
class ValidationSmoother {
public:
    ValidationSmoother(const Mat& L, double mu) : L_(L) {
        Mat A = L;
        A.diagonal().array() += mu;
        llt_.compute(A);
        if (llt_.info() != Eigen::Success) throw NumericError("validation regression is not positive definite");
    }

    double projected_mse(const Vec& y) const {
        const Vec fitted = L_ * llt_.solve(y);
        return fitted.squaredNorm() / static_cast<double>(fitted.size());
    }

private:
    const Mat& L_;
    Eigen::LLT<Mat> llt_;
};

} // namespace detail

/**
 * K-fold, episode-level cross-validation of both penalty pairs. For each
 * probe policy, probe beta, fold and candidate, the nuisances are fitted on
 * the training folds and scored on the held-out fold by the mean squared
 * kernel-ridge projection of the temporal-difference residuals. Candidates
 * whose fit is singular score +inf.
 */
inline TuningReport select_tuning(const Dataset& d, const TuningGrid& grid, const KernelSpec& spec, double c,
                                  std::uint64_t seed) {
    grid.validate();
    require(c >= 0.0 && c < 1.0, "robustness level c must lie in [0, 1)");
    TuningReport rep;
    rep.grid = grid;
    rep.folds = episode_folds(d.n(), grid.k_folds, seed);
    const std::size_t M = grid.probe_policies.size(), Lb = grid.probe_betas.size();
    rep.value_errors.assign(grid.value.size(), std::vector<double>(M * Lb, 0.0));
    rep.ratio_errors.assign(grid.ratio.size(), std::vector<double>(M, 0.0));
    const double inf = std::numeric_limits<double>::infinity();

    for (const auto& fold : rep.folds) {
        std::vector<int> train_eps;
        for (int i = 0; i < d.n(); ++i)
            if (!std::binary_search(fold.begin(), fold.end(), i)) train_eps.push_back(i);
        const Dataset train = d.select_episodes(train_eps);
        const Dataset val = d.select_episodes(fold);
        const double n_train = static_cast<double>(train.size());
        const Mat L = assemble_gram(train, spec);
        const Mat L_val = assemble_gram(val, spec);
        const detail::ValidationSmoother smoother(L_val, grid.validation_mu * static_cast<double>(val.size()));
        const PolicyKernelBasis basis(train, spec);
        const PolicyKernelBasis cross(val, train, spec);

        std::vector<std::optional<Projection>> value_proj(grid.value.size()), ratio_proj(grid.ratio.size());
        for (std::size_t j = 0; j < grid.value.size(); ++j) value_proj[j].emplace(L, grid.value[j].mu * n_train);
        for (std::size_t j = 0; j < grid.ratio.size(); ++j) ratio_proj[j].emplace(L, grid.ratio[j].mu * n_train);

        Mat R(train.size(), static_cast<Eigen::Index>(Lb)), R_val(val.size(), static_cast<Eigen::Index>(Lb));
        for (std::size_t l = 0; l < Lb; ++l) {
            R.col(static_cast<Eigen::Index>(l)) = modified_rewards(train.rewards(), grid.probe_betas[l], c);
            R_val.col(static_cast<Eigen::Index>(l)) = modified_rewards(val.rewards(), grid.probe_betas[l], c);
        }

        for (std::size_t m = 0; m < M; ++m) {
            const LogisticPolicy pol(grid.probe_policies[m], grid.c0);
            const Mat P_train = next_state_probs(train, pol);
            const Mat K = basis.kernel(P_train);
            const Mat K_cross = cross.kernel(next_state_probs(val, pol), P_train);

            for (std::size_t j = 0; j < grid.value.size(); ++j) {
                auto& err = rep.value_errors[j];
                try {
                    const ValueSolver solver(value_proj[j]->matrix(), K, grid.value[j].lambda * n_train);
                    const auto fits = solver.solve_all(R);
                    for (std::size_t l = 0; l < Lb; ++l) {
                        const auto& f = fits[l];
                        const Vec td = R_val.col(static_cast<Eigen::Index>(l)) - K_cross * f.alpha_hat -
                                       Vec::Constant(val.size(), f.eta_hat);
                        err[m * Lb + l] += smoother.projected_mse(td);
                    }
                } catch (const NumericError&) {
                    for (std::size_t l = 0; l < Lb; ++l) err[m * Lb + l] = inf;
                }
            }
            for (std::size_t j = 0; j < grid.ratio.size(); ++j) {
                try {
                    const RatioSolver solver(L, K, *ratio_proj[j], grid.ratio[j].lambda * n_train);
                    const Vec td = Vec::Ones(val.size()) - K_cross * solver.fit().phi_hat;
                    rep.ratio_errors[j][m] += smoother.projected_mse(td);
                } catch (const NumericError&) {
                    rep.ratio_errors[j][m] = inf;
                }
            }
        }
    }

    rep.value_index = select_min_max(rep.value_errors);
    rep.ratio_index = select_min_max(rep.ratio_errors);
    const PenaltyPair& v = grid.value[rep.value_index];
    const PenaltyPair& r = grid.ratio[rep.ratio_index];
    rep.params = {v.lambda, v.mu, r.lambda, r.mu};
    return rep;
}

} // namespace robustavg
