#pragma once

#include "robustavg/core.hpp"

#include <algorithm>
#include <cmath>
#include <concepts>

namespace robustavg {

/// Anything that maps a state to a probability vector over actions.
template <class P>
concept StatePolicy = requires(const P& pol, const Vec& s) {
    { pol.num_actions() } -> std::convertible_to<int>;
    { pol.probs(s) } -> std::convertible_to<Vec>;
};

/// A parametrized policy exposing d pi(a|s) / d theta as an (actions x params) matrix.
template <class P>
concept DifferentiablePolicy = StatePolicy<P> && requires(const P& pol, const Vec& s) {
    { pol.num_params() } -> std::convertible_to<int>;
    { pol.prob_jacobian(s) } -> std::convertible_to<Mat>;
};

/// Uniformly random behavior policy.
class UniformPolicy {
public:
    explicit UniformPolicy(int num_actions = 2) : num_actions_(num_actions) {
        require(num_actions >= 1, "uniform policy needs at least one action");
    }
    int num_actions() const noexcept { return num_actions_; }
    Vec probs(const Vec&) const { return Vec::Constant(num_actions_, 1.0 / num_actions_); }

private:
    int num_actions_;
};

inline Vec project_box(Vec theta, double c0) {
    require(c0 > 0.0, "box bound c0 must be positive");
    return theta.cwiseMax(-c0).cwiseMin(c0);
}

/**
 * @brief Two-action logistic policy pi(1|s) = exp(s'theta) / (1 + exp(s'theta)).
 *
 * The parameter is kept inside the box ||theta||_inf <= c0; pi(0|s) is always
 * computed as the complement of pi(1|s) so the two probabilities sum to 1.
 */
class LogisticPolicy {
public:
    LogisticPolicy() = default;
    LogisticPolicy(Vec theta, double c0) : theta_(std::move(theta)), c0_(c0) {
        require(c0_ > 0.0, "box bound c0 must be positive");
        require(theta_.size() >= 1, "theta must be non-empty");
        require(theta_.allFinite(), "theta must be finite");
        require(theta_.cwiseAbs().maxCoeff() <= c0_, "theta lies outside the box");
    }

    const Vec& theta() const noexcept { return theta_; }
    double c0() const noexcept { return c0_; }
    int num_actions() const noexcept { return 2; }
    int num_params() const noexcept { return static_cast<int>(theta_.size()); }

    double prob_one(const Vec& s) const { return sigmoid(s.dot(theta_)); }

    double action_prob(const Vec& s, int a) const {
        check_action(a);
        const double p1 = prob_one(s);
        return a == 1 ? p1 : 1.0 - p1;
    }

    Vec probs(const Vec& s) const {
        const double p1 = prob_one(s);
        Vec out(2);
        out << 1.0 - p1, p1;
        return out;
    }

    /// d pi(a|s) / d theta = +/- pi(1|s) (1 - pi(1|s)) s, plus sign for a = 1.
    Vec grad_action_prob(const Vec& s, int a) const {
        check_action(a);
        const double p1 = prob_one(s);
        const double w = p1 * (1.0 - p1);
        return (a == 1 ? w : -w) * s;
    }

    Mat prob_jacobian(const Vec& s) const {
        const double p1 = prob_one(s);
        const double w = p1 * (1.0 - p1);
        Mat out(2, theta_.size());
        out.row(1) = w * s.transpose();
        out.row(0) = -out.row(1);
        return out;
    }

    int sample_action(const Vec& s, Rng& rng) const {
        return uniform01(rng) < prob_one(s) ? 1 : 0;
    }

    static double sigmoid(double z) {
        if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
        const double e = std::exp(z);
        return e / (1.0 + e);
    }

private:
    static void check_action(int a) {
        if (a != 0 && a != 1) throw ConfigError("invalid action index " + std::to_string(a));
    }

    Vec theta_ = Vec::Zero(1);
    double c0_ = 10.0;
};

} // namespace robustavg
