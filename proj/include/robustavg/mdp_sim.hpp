#pragma once

#include "robustavg/data.hpp"
#include "robustavg/policy.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <vector>

namespace robustavg {

enum class InitDist { standard_normal, student_t };

/**
 * @brief Two-dimensional nonlinear test environment with binary actions.
 *
 * `state_bound` clamps every coordinate of the initial and subsequent states
 * to [-state_bound, state_bound]; the unclamped dynamics are quadratic and
 * leave every finite range in a small fraction of long rollouts. A value of
 * +inf turns the clamp off.
 */
struct SimConfig {
    InitDist init = InitDist::standard_normal;
    double df = 2.0;
    double noise_sd = std::sqrt(0.5);
    int n_episodes = 25;
    int horizon = 24;
    double state_bound = 10.0;
    std::uint64_t seed = 0;

    void validate() const {
        require(n_episodes >= 1, "n_episodes must be at least 1");
        require(horizon >= 1, "horizon must be at least 1");
        require(init != InitDist::student_t || (std::isfinite(df) && df > 0.0),
                "student-t degrees of freedom must be positive");
        require(std::isfinite(noise_sd) && noise_sd >= 0.0, "noise_sd must be nonnegative");
        require(state_bound > 0.0, "state_bound must be positive");
    }
};

/// Noise-free drift plus the supplied noise.
inline Vec transition(const Vec& s, int a, const Vec& noise) {
    if (s.size() != 2 || noise.size() != 2) throw DataError("environment states are two-dimensional");
    if (a != 0 && a != 1) throw ConfigError("invalid action index " + std::to_string(a));
    const double sign = 2.0 * a - 1.0;
    const double cross = 0.25 * s[0] * s[1];
    Vec out(2);
    out[0] = 0.75 * sign * s[0] + cross + noise[0];
    out[1] = -0.75 * sign * s[1] - cross + noise[1];
    return out;
}

inline double reward(const Vec& s) { return 2.0 * s[0] + s[1]; }

namespace detail {

inline Vec clamp_state(Vec s, double bound) {
    if (std::isfinite(bound)) s = s.cwiseMax(-bound).cwiseMin(bound);
    return s;
}

inline Vec initial_state(const SimConfig& cfg, Rng& rng) {
    Vec s(2);
    if (cfg.init == InitDist::standard_normal) {
        std::normal_distribution<double> z(0.0, 1.0);
        for (int j = 0; j < 2; ++j) s[j] = z(rng);
    } else {
        std::student_t_distribution<double> t(cfg.df);
        for (int j = 0; j < 2; ++j) s[j] = t(rng);
    }
    return clamp_state(s, cfg.state_bound);
}

template <StatePolicy Policy>
int draw_action(const Policy& pol, const Vec& s, Rng& rng) {
    const Vec p = pol.probs(s);
    double x = uniform01(rng);
    for (Eigen::Index a = 0; a + 1 < p.size(); ++a) {
        x -= p[a];
        if (x < 0.0) return static_cast<int>(a);
    }
    return static_cast<int>(p.size() - 1);
}

/// Episode i uses independent streams for the environment (initial state and
/// noise) and for the actions, so different policies share the environment
/// randomness under the same seed.
template <StatePolicy Policy, class Visit>
void rollout(const SimConfig& cfg, const Policy& pol, int episode, int steps, Visit&& visit) {
    Rng env = make_rng(cfg.seed, "sim-environment", static_cast<std::uint64_t>(episode));
    Rng act = make_rng(cfg.seed, "sim-action", static_cast<std::uint64_t>(episode));
    std::normal_distribution<double> eps(0.0, cfg.noise_sd);
    Vec s = initial_state(cfg, env);
    Vec noise(2);
    for (int t = 0; t < steps; ++t) {
        const int a = draw_action(pol, s, act);
        visit(t, s, a);
        noise[0] = eps(env);
        noise[1] = eps(env);
        s = clamp_state(transition(s, a, noise), cfg.state_bound);
    }
    visit(steps, s, -1);
}

} // namespace detail

/// n_episodes trajectories of length horizon with R_t = reward(S_t).
template <StatePolicy Policy>
Dataset simulate_training_data(const SimConfig& cfg, const Policy& pol) {
    cfg.validate();
    const int n = cfg.n_episodes, t0 = cfg.horizon;
    Mat states(static_cast<Eigen::Index>(n) * (t0 + 1), 2);
    std::vector<int> actions(static_cast<std::size_t>(n) * t0);
    Vec rewards(static_cast<Eigen::Index>(n) * t0);
    for (int i = 0; i < n; ++i) {
        detail::rollout(cfg, pol, i, t0, [&](int t, const Vec& s, int a) {
            states.row(static_cast<Eigen::Index>(i) * (t0 + 1) + t) = s.transpose();
            if (a < 0) return;
            const Eigen::Index h = static_cast<Eigen::Index>(i) * t0 + t;
            actions[static_cast<std::size_t>(h)] = a;
            rewards[h] = reward(s);
        });
    }
    return Dataset(n, t0, std::move(states), std::move(actions), std::move(rewards), 2);
}

struct EvalReport {
    std::vector<int> t_values;
    std::vector<double> mean_avg_reward;
};

/// Mean over episodes of (1/T) sum_{t=1..T} R_t for every T in [t_min, t_max].
inline EvalReport average_reward_curve(const Mat& episode_rewards, int t_min, int t_max) {
    require(t_min >= 1 && t_min <= t_max, "t range must satisfy 1 <= t_min <= t_max");
    if (t_max > episode_rewards.cols()) throw ConfigError("t range exceeds the horizon");
    EvalReport out;
    Vec cum = Vec::Zero(episode_rewards.rows());
    for (int T = 1; T <= t_max; ++T) {
        cum += episode_rewards.col(T - 1);
        if (T < t_min) continue;
        out.t_values.push_back(T);
        out.mean_avg_reward.push_back(cum.mean() / T);
    }
    return out;
}

/// Rolls out `pol` for cfg.n_episodes episodes; needs cfg.horizon >= t_max.
template <StatePolicy Policy>
EvalReport evaluate_policy(const SimConfig& cfg, const Policy& pol, int t_min, int t_max) {
    cfg.validate();
    require(t_min >= 1 && t_min <= t_max, "t range must satisfy 1 <= t_min <= t_max");
    if (t_max > cfg.horizon) throw ConfigError("t range exceeds the horizon");
    Mat rewards(cfg.n_episodes, t_max);
    for (int i = 0; i < cfg.n_episodes; ++i)
        detail::rollout(cfg, pol, i, t_max, [&](int t, const Vec& s, int a) {
            if (a >= 0) rewards(i, t) = reward(s);
        });
    return average_reward_curve(rewards, t_min, t_max);
}

} // namespace robustavg
