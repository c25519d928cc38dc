#pragma once

#include "robustavg/estimator.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace robustavg {

/**
 * @brief Finite MDP with transition tensor P(s'|s,a) and state rewards R(s).
 *
 * Row s * n_actions + a of `P` holds the next-state distribution of (s, a).
 */
struct FiniteMDP {
    int n_states = 0;
    int n_actions = 0;
    Mat P;
    Vec R;

    FiniteMDP() = default;
    FiniteMDP(int states, int actions, Mat transitions, Vec rewards)
        : n_states(states), n_actions(actions), P(std::move(transitions)), R(std::move(rewards)) {
        validate();
    }

    void validate() const {
        if (n_states < 1 || n_actions < 1) throw DataError("MDP needs at least one state and action");
        if (P.rows() != static_cast<Eigen::Index>(n_states) * n_actions || P.cols() != n_states)
            throw DataError("transition tensor has the wrong shape");
        if (R.size() != n_states) throw DataError("reward vector has the wrong length");
        if (!P.allFinite() || !R.allFinite()) throw DataError("non-finite value in MDP");
        if (P.minCoeff() < 0.0) throw DataError("negative transition probability");
        for (Eigen::Index i = 0; i < P.rows(); ++i)
            if (std::abs(P.row(i).sum() - 1.0) > 1e-12)
                throw DataError("transition row does not sum to 1");
    }

    auto next_dist(int s, int a) const { return P.row(static_cast<Eigen::Index>(s) * n_actions + a); }
};

/// pi(a|s) as an n_states x n_actions matrix.
struct TabularPolicy {
    Mat probs;

    TabularPolicy() = default;
    explicit TabularPolicy(Mat p) : probs(std::move(p)) { validate(); }

    void validate() const {
        if (!probs.allFinite() || probs.size() == 0 || probs.minCoeff() < 0.0)
            throw DataError("policy table must be finite and nonnegative");
        for (Eigen::Index s = 0; s < probs.rows(); ++s)
            if (std::abs(probs.row(s).sum() - 1.0) > 1e-12) throw DataError("policy row does not sum to 1");
    }

    static TabularPolicy uniform(int n_states, int n_actions) {
        return TabularPolicy(Mat::Constant(n_states, n_actions, 1.0 / n_actions));
    }
};

/**
 * Tabular policy seen through the scalar state embedding used for finite-MDP
 * data (state s is stored as the real number s).
 */
class TabularStatePolicy {
public:
    explicit TabularStatePolicy(TabularPolicy pi) : pi_(std::move(pi)) {}
    int num_actions() const noexcept { return static_cast<int>(pi_.probs.cols()); }
    Vec probs(const Vec& s) const {
        const long idx = std::lround(s[0]);
        if (idx < 0 || idx >= pi_.probs.rows()) throw DataError("state outside the tabular policy");
        return pi_.probs.row(idx).transpose();
    }

private:
    TabularPolicy pi_;
};

namespace detail {
inline void check_policy(const FiniteMDP& m, const TabularPolicy& pi) {
    if (pi.probs.rows() != m.n_states || pi.probs.cols() != m.n_actions)
        throw DataError("policy table does not match the MDP");
}
} // namespace detail

/// State-to-state transition matrix of the chain induced by pi.
inline Mat policy_transition(const FiniteMDP& m, const TabularPolicy& pi) {
    detail::check_policy(m, pi);
    Mat out = Mat::Zero(m.n_states, m.n_states);
    for (int s = 0; s < m.n_states; ++s)
        for (int a = 0; a < m.n_actions; ++a) out.row(s) += pi.probs(s, a) * m.next_dist(s, a);
    return out;
}

/// Stationary distribution of a transition matrix with a unique unit eigenvalue.
inline Vec stationary_distribution(const Mat& chain) {
    const Eigen::Index n = chain.rows();
    const Eigen::VectorXcd ev = Eigen::EigenSolver<Mat>(chain.transpose(), false).eigenvalues();
    int unit = 0;
    for (Eigen::Index i = 0; i < n; ++i)
        if (std::abs(ev[i] - 1.0) < 1e-9) ++unit;
    if (unit != 1) throw NumericError("non-unique stationary distribution");

    Mat A(n + 1, n);
    A.topRows(n) = chain.transpose() - Mat::Identity(n, n);
    A.row(n).setOnes();
    Vec b = Vec::Zero(n + 1);
    b[n] = 1.0;
    const auto qr = A.colPivHouseholderQr();
    Vec d = qr.solve(b);
    d += qr.solve(b - A * d);  // one refinement step
    d = d.cwiseMax(0.0);
    return d / d.sum();
}

inline Vec stationary_distribution(const FiniteMDP& m, const TabularPolicy& pi) {
    return stationary_distribution(policy_transition(m, pi));
}

/// beta - E_d[(beta - R)_+] / (1 - c)
inline double exact_M(const Vec& d, const Vec& R, double beta, double c) {
    require(c >= 0.0 && c < 1.0, "robustness level c must lie in [0, 1)");
    double tail = 0.0;
    for (Eigen::Index s = 0; s < d.size(); ++s) tail += d[s] * std::max(beta - R[s], 0.0);
    return beta - tail / (1.0 - c);
}

inline double exact_M(const FiniteMDP& m, const TabularPolicy& pi, double beta, double c) {
    return exact_M(stationary_distribution(m, pi), m.R, beta, c);
}

struct DualSolution {
    double value = 0.0;
    double beta_star = 0.0;
};

/**
 * c R_min + (1 - c) max_beta M(beta) with R_min over the support of d.
 * M is concave and piecewise linear with kinks at the supported rewards, so
 * the maximum is attained at one of them; ties go to the smallest beta.
 */
inline DualSolution dual_worst_case(const Vec& d, const Vec& R, double c) {
    std::vector<double> kinks;
    for (Eigen::Index s = 0; s < d.size(); ++s)
        if (d[s] > 0.0) kinks.push_back(R[s]);
    if (kinks.empty()) throw DataError("distribution has empty support");
    std::sort(kinks.begin(), kinks.end());
    std::vector<double> values;
    for (double b : kinks) values.push_back(exact_M(d, R, b, c));
    const double best = *std::max_element(values.begin(), values.end());
    const double tol = 1e-12 * (1.0 + std::abs(best));
    std::size_t k = 0;
    while (values[k] < best - tol) ++k;
    return {c * kinks.front() + (1.0 - c) * values[k], kinks[k]};
}

inline DualSolution dual_worst_case(const FiniteMDP& m, const TabularPolicy& pi, double c) {
    return dual_worst_case(stationary_distribution(m, pi), m.R, c);
}

struct PrimalSolution {
    double value = 0.0;
    Vec u;  // worst-case distribution
};

/**
 * Smallest mean reward over distributions u << d with TV(u, d) <= c.
 * Greedy: take up to c mass from the highest-reward states (each capped at
 * its own mass) and move it onto the lowest-reward supported state.
 */
inline PrimalSolution primal_worst_case(const Vec& d, const Vec& R, double c) {
    require(c >= 0.0 && c < 1.0, "robustness level c must lie in [0, 1)");
    std::vector<Eigen::Index> support;
    for (Eigen::Index s = 0; s < d.size(); ++s)
        if (d[s] > 0.0) support.push_back(s);
    if (support.empty()) throw DataError("distribution has empty support");
    std::stable_sort(support.begin(), support.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return R[a] > R[b]; });
    PrimalSolution out;
    out.u = d;
    const Eigen::Index lowest = support.back();
    double budget = c;
    for (Eigen::Index s : support) {
        if (s == lowest || budget <= 0.0) break;
        const double moved = std::min(budget, d[s]);
        out.u[s] -= moved;
        out.u[lowest] += moved;
        budget -= moved;
    }
    out.value = out.u.dot(R);
    return out;
}

inline PrimalSolution primal_worst_case(const FiniteMDP& m, const TabularPolicy& pi, double c) {
    return primal_worst_case(stationary_distribution(m, pi), m.R, c);
}

struct RelativeValue {
    double eta = 0.0;
    Mat Q;  // n_states x n_actions
    double residual = 0.0;
};

/**
 * Solves r_beta(s) + E[sum_a' pi(a'|S') Q(S', a') | s, a] = Q(s, a) + eta with
 * Q(s*, a*) = 0, where r_beta(s) = beta - (beta - R(s))_+ / (1 - c).
 */
inline RelativeValue exact_relative_value(const FiniteMDP& m, const TabularPolicy& pi, double beta,
                                          double c, int ref_state, int ref_action) {
    detail::check_policy(m, pi);
    if (ref_state < 0 || ref_state >= m.n_states || ref_action < 0 || ref_action >= m.n_actions)
        throw ConfigError("reference pair outside the MDP");
    const int S = m.n_states, A = m.n_actions;
    const Eigen::Index n = static_cast<Eigen::Index>(S) * A;
    const Vec rb = modified_rewards(m.R, beta, c);

    // rows: one Bellman equation per (s, a) plus the normalization; unknowns (Q, eta)
    Mat sys = Mat::Zero(n + 1, n + 1);
    Vec rhs = Vec::Zero(n + 1);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) {
            const Eigen::Index row = static_cast<Eigen::Index>(s) * A + a;
            sys(row, row) += 1.0;
            sys(row, n) = 1.0;
            for (int s2 = 0; s2 < S; ++s2)
                for (int a2 = 0; a2 < A; ++a2)
                    sys(row, static_cast<Eigen::Index>(s2) * A + a2) -= m.P(row, s2) * pi.probs(s2, a2);
            rhs[row] = rb[s];
        }
    sys(n, static_cast<Eigen::Index>(ref_state) * A + ref_action) = 1.0;

    const Eigen::FullPivLU<Mat> lu(sys);
    if (!lu.isInvertible()) throw NumericError("singular Bellman system (chain not ergodic)");
    Vec x = lu.solve(rhs);
    x += lu.solve(rhs - sys * x);
    RelativeValue out;
    out.eta = x[n];
    out.Q = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(x.data(), S, A);
    out.residual = (sys * x - rhs).cwiseAbs().maxCoeff();
    return out;
}

/// U(s, a, s') = sum_a' pi(a'|s') Q(s', a') - Q(s, a)
inline double exact_value_difference(const Mat& Q, const TabularPolicy& pi, int s, int a, int s_next) {
    return pi.probs.row(s_next).dot(Q.row(s_next)) - Q(s, a);
}

/// d^pi(s) pi(a|s) / (d^b(s) pi_b(a|s)) for every state-action pair.
inline Mat exact_ratio(const FiniteMDP& m, const TabularPolicy& target, const TabularPolicy& behavior) {
    detail::check_policy(m, target);
    detail::check_policy(m, behavior);
    const Vec dt = stationary_distribution(m, target);
    const Vec db = stationary_distribution(m, behavior);
    Mat out(m.n_states, m.n_actions);
    for (int s = 0; s < m.n_states; ++s)
        for (int a = 0; a < m.n_actions; ++a) {
            const double den = db[s] * behavior.probs(s, a);
            if (!(den > 0.0)) throw DataError("zero behavior density at a state-action pair");
            out(s, a) = dt[s] * target.probs(s, a) / den;
        }
    return out;
}

inline double total_variation(const Vec& p, const Vec& q) { return 0.5 * (p - q).cwiseAbs().sum(); }

/// TV between the average of the first T marginals (d_1 = init) and d^pi.
inline double avg_visitation_tv(const FiniteMDP& m, const TabularPolicy& pi, const Vec& init, int T) {
    require(T >= 1, "horizon T must be at least 1");
    if (init.size() != m.n_states) throw DataError("initial distribution has the wrong length");
    const Mat chain = policy_transition(m, pi);
    const Vec d = stationary_distribution(chain);
    Vec marginal = init;
    Vec avg = Vec::Zero(m.n_states);
    for (int t = 1; t <= T; ++t) {
        avg += marginal;
        marginal = (marginal.transpose() * chain).transpose();
    }
    return total_variation(avg / T, d);
}

/// min(1, C0 alpha / ((1 - alpha) T0))
inline double choose_c(double C0, double alpha, int T0) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
    require(C0 >= 0.0 && std::isfinite(C0), "C0 must be nonnegative");
    require(T0 >= 1, "T0 must be at least 1");
    // (T0 - alpha T0) keeps choose_c(1, 0.9, 100) at exactly 0.09
    return std::min(1.0, C0 * alpha / (T0 - alpha * T0));
}

/// Constants of TV(d_t, d^pi) <= C0 alpha^t (d_1 = init).
struct GeometricBound {
    double C0 = 0.0;
    double alpha = 0.0;
};

/**
 * alpha is set between the second-largest eigenvalue modulus of the chain and
 * 1, then C0 is the smallest constant that covers the exact marginals up to
 * `horizon`.
 */
inline GeometricBound fit_geometric_bound(const FiniteMDP& m, const TabularPolicy& pi, const Vec& init,
                                          int horizon) {
    const Mat chain = policy_transition(m, pi);
    const Vec d = stationary_distribution(chain);
    const Eigen::VectorXcd ev = Eigen::EigenSolver<Mat>(chain, false).eigenvalues();
    std::vector<double> mod;
    for (Eigen::Index i = 0; i < ev.size(); ++i) mod.push_back(std::abs(ev[i]));
    std::sort(mod.begin(), mod.end(), std::greater<>());
    const double slem = mod.size() > 1 ? mod[1] : 0.0;
    GeometricBound out;
    out.alpha = std::clamp(slem + 0.1 * (1.0 - slem), 1e-3, 1.0 - 1e-6);
    Vec marginal = init;
    for (int t = 1; t <= horizon; ++t) {
        out.C0 = std::max(out.C0, total_variation(marginal, d) / std::pow(out.alpha, t));
        marginal = (marginal.transpose() * chain).transpose();
    }
    return out;
}

/// MDP with strictly positive transitions (hence ergodic and aperiodic).
inline FiniteMDP random_ergodic_mdp(int n_states, int n_actions, Rng& rng) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    std::normal_distribution<double> z(0.0, 1.0);
    Mat P(static_cast<Eigen::Index>(n_states) * n_actions, n_states);
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
        for (int j = 0; j < n_states; ++j) P(i, j) = u(rng);
        P.row(i) /= P.row(i).sum();
    }
    Vec R(n_states);
    for (int s = 0; s < n_states; ++s) R[s] = z(rng);
    return FiniteMDP(n_states, n_actions, std::move(P), std::move(R));
}

inline TabularPolicy random_tabular_policy(int n_states, int n_actions, Rng& rng) {
    std::uniform_real_distribution<double> u(0.1, 1.0);
    Mat p(n_states, n_actions);
    for (int s = 0; s < n_states; ++s) {
        for (int a = 0; a < n_actions; ++a) p(s, a) = u(rng);
        p.row(s) /= p.row(s).sum();
    }
    return TabularPolicy(std::move(p));
}

namespace detail {
inline int draw_index(const Eigen::Ref<const Vec>& probs, Rng& rng) {
    double x = uniform01(rng);
    const Eigen::Index last = probs.size() - 1;
    for (Eigen::Index i = 0; i < last; ++i) {
        x -= probs[i];
        if (x < 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(last);
}
} // namespace detail

/**
 * Trajectories of a finite MDP under `behavior`, with scalar states (state s
 * stored as the number s) and rewards R_t = R(S_t). Episode i draws from the
 * stream derived from (seed, "finite-episode", i).
 */
inline Dataset simulate_finite_data(const FiniteMDP& m, const TabularPolicy& behavior, const Vec& init,
                                    int n, int t0, std::uint64_t seed) {
    detail::check_policy(m, behavior);
    require(n >= 1 && t0 >= 1, "need at least one episode and one step");
    if (init.size() != m.n_states) throw DataError("initial distribution has the wrong length");
    Mat states(static_cast<Eigen::Index>(n) * (t0 + 1), 1);
    std::vector<int> actions(static_cast<std::size_t>(n) * t0);
    Vec rewards(static_cast<Eigen::Index>(n) * t0);
    for (int i = 0; i < n; ++i) {
        Rng rng = make_rng(seed, "finite-episode", static_cast<std::uint64_t>(i));
        int s = detail::draw_index(init, rng);
        for (int t = 0; t < t0; ++t) {
            const Eigen::Index h = static_cast<Eigen::Index>(i) * t0 + t;
            states(static_cast<Eigen::Index>(i) * (t0 + 1) + t, 0) = s;
            const int a = detail::draw_index(behavior.probs.row(s).transpose(), rng);
            actions[static_cast<std::size_t>(h)] = a;
            rewards[h] = m.R[s];
            s = detail::draw_index(m.next_dist(s, a).transpose(), rng);
        }
        states(static_cast<Eigen::Index>(i) * (t0 + 1) + t0, 0) = s;
    }
    return Dataset(n, t0, std::move(states), std::move(actions), std::move(rewards), m.n_actions);
}

/// Which nuisance the probe replaces by its exact value; the other one is set
/// to a deliberately wrong constant.
enum class ProbeKind { oracle_u_wrong_omega, oracle_omega_wrong_u, both_oracle };

/// Exact value differences and ratios at the transitions of finite-MDP data.
struct OracleNuisances {
    Vec u;
    Vec omega;
};

inline OracleNuisances oracle_nuisances(const Dataset& d, const FiniteMDP& m, const TabularPolicy& target,
                                        const TabularPolicy& behavior, double beta, double c) {
    const RelativeValue rv = exact_relative_value(m, target, beta, c, 0, 0);
    const Mat w = exact_ratio(m, target, behavior);
    OracleNuisances out{Vec(d.size()), Vec(d.size())};
    for (Eigen::Index h = 0; h < d.size(); ++h) {
        const int s = static_cast<int>(std::lround(d.current_state(h)[0]));
        const int s2 = static_cast<int>(std::lround(d.next_state(h)[0]));
        out.u[h] = exact_value_difference(rv.Q, target, s, d.action(h), s2);
        out.omega[h] = w(s, d.action(h));
    }
    return out;
}

/// Doubly-robust estimate with one nuisance exact and the other misspecified
/// (omega = 1 or u = 0).
inline double double_robustness_probe(const Dataset& d, const FiniteMDP& m, const TabularPolicy& target,
                                      const TabularPolicy& behavior, double beta, double c,
                                      ProbeKind which) {
    OracleNuisances nu = oracle_nuisances(d, m, target, behavior, beta, c);
    if (which == ProbeKind::oracle_u_wrong_omega) nu.omega.setOnes();
    if (which == ProbeKind::oracle_omega_wrong_u) nu.u.setZero();
    return robust_objective_estimate(nu.omega, nu.u, modified_rewards(d.rewards(), beta, c));
}

} // namespace robustavg
