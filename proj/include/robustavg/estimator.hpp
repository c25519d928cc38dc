#pragma once

#include "robustavg/nuisance.hpp"

#include <cmath>
#include <memory>
#include <optional>
#include <vector>

namespace robustavg {

/// Doubly-robust estimate of M(beta, pi) with its influence values.
struct ObjectiveValue {
    double m_hat = 0.0;
    Vec psi;
    double sigma2_hat = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
};

/**
 * Root of the empirical estimating equation: sum_h e_h (R_h + u_h - m) = 0.
 * `weights` may be e_hat or omega_hat, the scale cancels.
 */
inline double robust_objective_estimate(const Vec& weights, const Vec& u, const Vec& r_beta) {
    const Eigen::Index n = weights.size();
    if (u.size() != n || r_beta.size() != n) throw DataError("estimator inputs differ in length");
    const double denom = weights.sum();
    if (!std::isfinite(denom) || std::abs(denom) < 1e-8 * static_cast<double>(n))
        throw NumericError("degenerate estimator denominator");
    return weights.dot(r_beta + u) / denom;
}

inline double robust_objective_estimate(const ValueFit& value, const RatioFit& ratio,
                                        const Vec& r_beta) {
    return robust_objective_estimate(ratio.e_hat, value.u_hat, r_beta);
}

/// nu' L (R - K alpha) / (nu' L 1); the same number as the weighted form.
inline double robust_objective_ratio_form(const Mat& L, const Mat& Ktilde, const ValueFit& value,
                                          const RatioFit& ratio, const Vec& r_beta) {
    const Vec Lnu = L * ratio.nu_hat;
    const double denom = Lnu.sum();
    if (!std::isfinite(denom) || std::abs(denom) < 1e-8 * static_cast<double>(L.rows()))
        throw NumericError("degenerate estimator denominator");
    return Lnu.dot(r_beta - Ktilde * value.alpha_hat) / denom;
}

/// psi_h = omega_h (r_h + u_h - eta)
inline Vec eif_values(const Vec& omega, const Vec& u, const Vec& r_beta, double eta) {
    if (u.size() != omega.size() || r_beta.size() != omega.size())
        throw DataError("influence inputs differ in length");
    return (omega.array() * ((r_beta + u).array() - eta)).matrix();
}

/// sigma^2 = mean(psi^2) (psi has mean zero at the root) and the 95% interval.
inline ObjectiveValue variance_and_ci(const Vec& psi, double m_hat) {
    if (psi.size() < 2) throw DataError("variance needs at least two transitions");
    ObjectiveValue out;
    out.m_hat = m_hat;
    out.psi = psi;
    out.sigma2_hat = psi.squaredNorm() / static_cast<double>(psi.size());
    const double half = 1.96 * std::sqrt(out.sigma2_hat / static_cast<double>(psi.size()));
    out.ci_lo = m_hat - half;
    out.ci_hi = m_hat + half;
    return out;
}

/// Point estimate, influence values and interval from fitted nuisances.
inline ObjectiveValue summarize_objective(const Vec& omega, const Vec& u, const Vec& r_beta) {
    const double m = robust_objective_estimate(omega, u, r_beta);
    return variance_and_ci(eif_values(omega, u, r_beta, m), m);
}

/**
 * Gradient of e'(R + u) / e'1 given de = d e / d theta and du = d u / d theta
 * (one column per parameter).
 */
inline Vec objective_gradient(const Vec& e, const Mat& de, const Vec& u, const Mat& du,
                              const Vec& r_beta) {
    const double denom = e.sum();
    const Vec target = r_beta + u;
    const double m = e.dot(target) / denom;
    return (de.transpose() * target + du.transpose() * e - m * de.colwise().sum().transpose()) /
           denom;
}

/**
 * @brief Dataset-level cache of the robust objective: the base Gram matrix,
 * both projections, and the policy-independent kernel blocks.
 *
 * `at(policy)` fits both nuisances for one policy and returns an evaluator
 * that answers objective queries for any beta.
 */
class ObjectiveModel {
public:
    /// `tuning` holds per-sample penalties.
    ObjectiveModel(const Dataset& d, const KernelSpec& spec, const TuningParams& tuning, double c,
                   double tol = 1e-8)
        : data_(d), spec_(spec), tuning_(tuning.scaled(d.size())), c_(c), tol_(tol),
          L_(std::make_unique<Mat>(assemble_gram(d, spec))),
          proj1_(std::make_unique<Projection>(*L_, tuning_.mu1)),
          proj2_(std::make_unique<Projection>(*L_, tuning_.mu2)),
          basis_(std::make_unique<PolicyKernelBasis>(d, spec)) {
        tuning.validate();
        require(c >= 0.0 && c < 1.0, "robustness level c must lie in [0, 1)");
    }

    const Dataset& data() const noexcept { return data_; }
    const KernelSpec& spec() const noexcept { return spec_; }
    double c() const noexcept { return c_; }
    const TuningParams& internal_tuning() const noexcept { return tuning_; }
    const Mat& gram() const noexcept { return *L_; }
    const Projection& value_projection() const noexcept { return *proj1_; }
    const Projection& ratio_projection() const noexcept { return *proj2_; }
    const PolicyKernelBasis& basis() const noexcept { return *basis_; }

    Vec modified(double beta) const { return modified_rewards(data_.rewards(), beta, c_); }

    /// Both nuisance fits for one policy.
    class PolicyFit {
    public:
        PolicyFit(const ObjectiveModel& model, Mat probs, std::vector<Mat> dprobs)
            : model_(&model), probs_(std::move(probs)), dprobs_(std::move(dprobs)),
              K_(std::make_unique<Mat>(model.basis().kernel(probs_))),
              value_(std::make_unique<ValueSolver>(model.value_projection().matrix(), *K_,
                                                   model.internal_tuning().lambda1, model.tol_)),
              ratio_(std::make_unique<RatioSolver>(model.gram(), *K_, model.ratio_projection(),
                                                   model.internal_tuning().lambda2, model.tol_)) {}

        const Mat& kernel() const noexcept { return *K_; }
        const RatioFit& ratio() const noexcept { return ratio_->fit(); }
        const ValueSolver& value_solver() const noexcept { return *value_; }
        ValueFit value(double beta) const { return value_->solve(model_->modified(beta)); }

        double objective(double beta) const {
            const Vec r = model_->modified(beta);
            return robust_objective_estimate(ratio().e_hat, value_->solve(r).u_hat, r);
        }

        /// Objective at every beta, one batched solve.
        std::vector<double> objectives(const std::vector<double>& betas) const {
            const Eigen::Index n = model_->data().size();
            Mat R(n, static_cast<Eigen::Index>(betas.size()));
            for (std::size_t k = 0; k < betas.size(); ++k)
                R.col(static_cast<Eigen::Index>(k)) = model_->modified(betas[k]);
            const auto fits = value_->solve_all(R);
            std::vector<double> out(betas.size());
            for (std::size_t k = 0; k < betas.size(); ++k)
                out[k] = robust_objective_estimate(ratio().e_hat, fits[k].u_hat,
                                                   R.col(static_cast<Eigen::Index>(k)));
            return out;
        }

        ObjectiveValue summary(double beta) const {
            const Vec r = model_->modified(beta);
            return summarize_objective(ratio().omega_hat, value_->solve(r).u_hat, r);
        }

        /// d Ktilde / d theta_k, computed on first use.
        const std::vector<Mat>& kernel_gradient() const {
            if (!dK_) {
                if (dprobs_.empty()) throw ConfigError("policy fit was built without derivatives");
                std::vector<Mat> dK;
                dK.reserve(dprobs_.size());
                for (const auto& dp : dprobs_) dK.push_back(model_->basis().kernel_derivative(probs_, dp));
                dK_ = std::move(dK);
            }
            return *dK_;
        }

        const RatioFitGradient& ratio_gradient() const {
            if (!dratio_) dratio_ = ratio_->gradient(kernel_gradient());
            return *dratio_;
        }

        /// Objective and its gradient in the policy parameters.
        std::pair<double, Vec> objective_and_gradient(double beta) const {
            const Vec r = model_->modified(beta);
            const ValueFit v = value_->solve(r);
            const ValueFitGradient dv = value_->gradient(v, kernel_gradient());
            const Vec& e = ratio().e_hat;
            return {robust_objective_estimate(e, v.u_hat, r),
                    objective_gradient(e, ratio_gradient().de, v.u_hat, dv.du, r)};
        }

    private:
        const ObjectiveModel* model_;
        Mat probs_;
        std::vector<Mat> dprobs_;
        std::unique_ptr<Mat> K_;
        std::unique_ptr<ValueSolver> value_;
        std::unique_ptr<RatioSolver> ratio_;
        mutable std::optional<std::vector<Mat>> dK_;
        mutable std::optional<RatioFitGradient> dratio_;
    };

    template <StatePolicy Policy>
    PolicyFit at(const Policy& pol) const {
        return PolicyFit(*this, next_state_probs(data_, pol), {});
    }

    template <DifferentiablePolicy Policy>
    PolicyFit at_differentiable(const Policy& pol) const {
        return PolicyFit(*this, next_state_probs(data_, pol), next_state_prob_jacobians(data_, pol));
    }

private:
    const Dataset& data_;
    KernelSpec spec_;
    TuningParams tuning_;
    double c_;
    double tol_;
    std::unique_ptr<Mat> L_;
    std::unique_ptr<Projection> proj1_;
    std::unique_ptr<Projection> proj2_;
    std::unique_ptr<PolicyKernelBasis> basis_;
};

} // namespace robustavg
