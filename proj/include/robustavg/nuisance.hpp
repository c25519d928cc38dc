#pragma once

#include "robustavg/kernels.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <cmath>
#include <vector>

namespace robustavg {

/**
 * @brief Regularization of the two coupled kernel fits.
 *
 * Values are per-sample; scaled(N) multiplies them by N to obtain the
 * penalties that enter the linear systems.
 */
struct TuningParams {
    double lambda1 = 1e-3;
    double mu1 = 1e-3;
    double lambda2 = 1e-3;
    double mu2 = 1e-3;

    void validate() const {
        require(std::isfinite(lambda1) && lambda1 >= 0.0, "lambda1 must be nonnegative");
        require(std::isfinite(lambda2) && lambda2 >= 0.0, "lambda2 must be nonnegative");
        require(std::isfinite(mu1) && mu1 > 0.0, "mu1 must be positive");
        require(std::isfinite(mu2) && mu2 > 0.0, "mu2 must be positive");
    }

    TuningParams scaled(Eigen::Index n) const {
        const double f = static_cast<double>(n);
        return {lambda1 * f, mu1 * f, lambda2 * f, mu2 * f};
    }
};

/// beta - (beta - r)_+ / (1 - c), entrywise.
inline Vec modified_rewards(const Vec& rewards, double beta, double c) {
    if (!(c >= 0.0 && c < 1.0)) throw ConfigError("robustness level c must lie in [0, 1)");
    const double scale = 1.0 / (1.0 - c);
    return rewards.unaryExpr([&](double r) { return beta - scale * std::max(beta - r, 0.0); });
}

/**
 * @brief Cholesky factor of L + mu I and the projection matrix
 * M = (L + mu I)^{-1} L^2 (L + mu I)^{-1}.
 *
 * M is formed as X X' with X = (L + mu I)^{-1} L, so it is PSD by
 * construction.
 */
class Projection {
public:
    Projection(const Mat& L, double mu) : mu_(mu) {
        require(std::isfinite(mu) && mu > 0.0, "projection penalty mu must be positive");
        if (L.rows() != L.cols()) throw DataError("Gram matrix is not square");
        const Eigen::Index n = L.rows();
        Mat A = L;
        A.diagonal().array() += mu;
        llt_.compute(A);
        if (llt_.info() != Eigen::Success) {
            A.diagonal().array() += 1e-10 * L.trace() / static_cast<double>(n);
            llt_.compute(A);
            if (llt_.info() != Eigen::Success)
                throw NumericError("factorization of L + mu I failed after jitter");
        }
        const Mat X = llt_.solve(L);
        M_.noalias() = X * X.transpose();
        M_ = 0.5 * (M_ + M_.transpose()).eval();
    }

    const Mat& matrix() const noexcept { return M_; }
    double mu() const noexcept { return mu_; }

    /// (L + mu I)^{-1} b
    template <class Rhs>
    Mat solve(const Rhs& b) const { return llt_.solve(b); }

private:
    Eigen::LLT<Mat> llt_;
    Mat M_;
    double mu_;
};

inline Mat build_projection(const Mat& L, double mu) { return Projection(L, mu).matrix(); }

/// The three N x N matrices shared by both nuisance fits for one policy.
struct GramCache {
    Mat L;
    Mat Ktilde;
    Mat M;
};

/// Coupled value fit at one (policy, beta): u_hat = -Ktilde alpha_hat.
struct ValueFit {
    double eta_hat = 0.0;
    Vec alpha_hat;
    Vec u_hat;
};

/// Coupled ratio fit for one policy: e_hat = L nu_hat, omega_hat = e_hat / mean(e_hat).
struct RatioFit {
    Vec phi_hat;
    Vec nu_hat;
    Vec e_hat;
    Vec omega_hat;
};

/// Parameter derivatives, one column per policy parameter.
struct ValueFitGradient {
    Vec deta;
    Mat dalpha;
    Mat du;
};

struct RatioFitGradient {
    Mat dphi;
    Mat dnu;
    Mat de;
};

namespace detail {

inline void check_square(const Mat& A, Eigen::Index n, const char* what) {
    if (A.rows() != n || A.cols() != n)
        throw DataError(std::string(what) + " has the wrong dimensions");
}

/// Throws when a solve leaves a residual above tol (1 + |b|).
inline void check_residual(const Mat& A, const Mat& x, const Mat& b, double tol, const char* what) {
    const double res = (A * x - b).norm();
    if (!std::isfinite(res) || res > tol * (1.0 + b.norm()))
        throw NumericError(std::string("singular ") + what + " system (residual " +
                           std::to_string(res) + ")");
}

} // namespace detail

/**
 * @brief Minimizer of (R - eta 1 - K a)' M (R - eta 1 - K a) + lambda a' K a.
 *
 * Stationarity in (a, eta) is the non-symmetric (N+1) system
 *
 *     [ M K + lambda I   M 1  ] [a  ]   [ M R  ]
 *     [ 1' M K           1'M1 ] [eta] = [ 1'M R]
 *
 * which does not depend on the reward vector, so one LU serves every beta.
 * M and Ktilde are held by reference and must outlive the solver.
 */
class ValueSolver {
public:
    ValueSolver(const Mat& M, const Mat& Ktilde, double lambda, double tol = 1e-8)
        : M_(M), K_(Ktilde), lambda_(lambda), tol_(tol) {
        require(std::isfinite(lambda) && lambda >= 0.0, "lambda1 must be nonnegative");
        const Eigen::Index n = M.rows();
        detail::check_square(M, n, "projection matrix");
        detail::check_square(Ktilde, n, "policy kernel");
        m1_ = M * Vec::Ones(n);
        const double one_m_one = m1_.sum();
        if (!(one_m_one > 0.0)) throw NumericError("1'M1 must be positive");
        J_.resize(n + 1, n + 1);
        J_.topLeftCorner(n, n).noalias() = M * Ktilde;
        J_.bottomLeftCorner(1, n) = J_.topLeftCorner(n, n).colwise().sum();
        J_.topLeftCorner(n, n).diagonal().array() += lambda;
        J_.topRightCorner(n, 1) = m1_;
        J_(n, n) = one_m_one;
        lu_.compute(J_);
    }

    Eigen::Index size() const noexcept { return M_.rows(); }

    /// One fit per column of r_betas.
    std::vector<ValueFit> solve_all(const Mat& r_betas) const {
        const Eigen::Index n = size();
        if (r_betas.rows() != n) throw DataError("reward vector has the wrong length");
        Mat rhs(n + 1, r_betas.cols());
        rhs.topRows(n).noalias() = M_ * r_betas;
        rhs.row(n) = m1_.transpose() * r_betas;
        const Mat x = lu_.solve(rhs);
        detail::check_residual(J_, x, rhs, tol_, "value stationarity");
        const Mat u = -(K_ * x.topRows(n));
        std::vector<ValueFit> out;
        out.reserve(static_cast<std::size_t>(r_betas.cols()));
        for (Eigen::Index k = 0; k < r_betas.cols(); ++k)
            out.push_back({x(n, k), x.col(k).head(n), u.col(k)});
        return out;
    }

    ValueFit solve(const Vec& r_beta) const { return solve_all(r_beta).front(); }

    /// Implicit differentiation of the stationarity system along each dK.
    ValueFitGradient gradient(const ValueFit& fit, const std::vector<Mat>& dK) const {
        const Eigen::Index n = size();
        const Eigen::Index q = static_cast<Eigen::Index>(dK.size());
        Mat dKa(n, q);
        for (Eigen::Index k = 0; k < q; ++k) {
            detail::check_square(dK[static_cast<std::size_t>(k)], n, "kernel derivative");
            dKa.col(k).noalias() = dK[static_cast<std::size_t>(k)] * fit.alpha_hat;
        }
        Mat rhs(n + 1, q);
        rhs.topRows(n).noalias() = -(M_ * dKa);
        rhs.row(n) = rhs.topRows(n).colwise().sum();
        const Mat x = lu_.solve(rhs);
        detail::check_residual(J_, x, rhs, tol_, "value gradient");
        ValueFitGradient g;
        g.dalpha = x.topRows(n);
        g.deta = x.row(n).transpose();
        g.du = -dKa;
        g.du.noalias() -= K_ * g.dalpha;
        return g;
    }

    /// Stationarity residuals |1'M res| and |K (M res - lambda a)| of a fit.
    std::pair<double, double> stationarity_residuals(const ValueFit& fit, const Vec& r_beta) const {
        const Vec res = r_beta - Vec::Constant(size(), fit.eta_hat) - K_ * fit.alpha_hat;
        const Vec mres = M_ * res;
        return {std::abs(mres.sum()), (K_ * (mres - lambda_ * fit.alpha_hat)).norm()};
    }

private:
    const Mat& M_;
    const Mat& K_;
    double lambda_;
    double tol_;
    Vec m1_;
    Mat J_;
    Eigen::PartialPivLU<Mat> lu_;
};

/**
 * @brief Ratio fit for one policy: (M K + lambda I) phi = M 1, then
 * (L + mu I) nu = 1 - K phi.
 *
 * `proj` is the projection built from L with the ratio penalty mu2. L, Ktilde
 * and proj are held by reference.
 */
class RatioSolver {
public:
    RatioSolver(const Mat& L, const Mat& Ktilde, const Projection& proj, double lambda,
                double tol = 1e-8)
        : L_(L), K_(Ktilde), proj_(proj), tol_(tol) {
        require(std::isfinite(lambda) && lambda >= 0.0, "lambda2 must be nonnegative");
        const Eigen::Index n = L.rows();
        detail::check_square(L, n, "Gram matrix");
        detail::check_square(Ktilde, n, "policy kernel");
        detail::check_square(proj.matrix(), n, "projection matrix");
        A_.noalias() = proj.matrix() * Ktilde;
        A_.diagonal().array() += lambda;
        lu_.compute(A_);

        const Vec m1 = proj.matrix() * Vec::Ones(n);
        fit_.phi_hat = lu_.solve(m1);
        detail::check_residual(A_, fit_.phi_hat, m1, tol_, "ratio");
        fit_.nu_hat = proj.solve(Vec(Vec::Ones(n) - K_ * fit_.phi_hat));
        fit_.e_hat = L * fit_.nu_hat;
        const double mean_e = fit_.e_hat.mean();
        if (!std::isfinite(mean_e) || std::abs(mean_e) < 1e-8)
            throw NumericError("degenerate ratio normalization");
        fit_.omega_hat = fit_.e_hat / mean_e;
    }

    const RatioFit& fit() const noexcept { return fit_; }

    RatioFitGradient gradient(const std::vector<Mat>& dK) const {
        const Eigen::Index n = L_.rows();
        const Eigen::Index q = static_cast<Eigen::Index>(dK.size());
        Mat dKphi(n, q);
        for (Eigen::Index k = 0; k < q; ++k) {
            detail::check_square(dK[static_cast<std::size_t>(k)], n, "kernel derivative");
            dKphi.col(k).noalias() = dK[static_cast<std::size_t>(k)] * fit_.phi_hat;
        }
        const Mat rhs = -(proj_.matrix() * dKphi);
        RatioFitGradient g;
        g.dphi = lu_.solve(rhs);
        detail::check_residual(A_, g.dphi, rhs, tol_, "ratio gradient");
        Mat rhs2 = -dKphi;
        rhs2.noalias() -= K_ * g.dphi;
        g.dnu = proj_.solve(rhs2);
        g.de.noalias() = L_ * g.dnu;
        return g;
    }

private:
    const Mat& L_;
    const Mat& K_;
    const Projection& proj_;
    double tol_;
    Mat A_;
    Eigen::PartialPivLU<Mat> lu_;
    RatioFit fit_;
};

/// Value fit from scratch; lambda1 and mu1 are the internal (N-scaled) penalties.
inline ValueFit fit_value_difference(const Mat& L, const Mat& Ktilde, const Vec& r_beta,
                                     double lambda1, double mu1, double tol = 1e-8) {
    const Projection proj(L, mu1);
    return ValueSolver(proj.matrix(), Ktilde, lambda1, tol).solve(r_beta);
}

/// Ratio fit from scratch; lambda2 and mu2 are the internal (N-scaled) penalties.
inline RatioFit fit_ratio(const Mat& L, const Mat& Ktilde, double lambda2, double mu2,
                          double tol = 1e-8) {
    const Projection proj(L, mu2);
    return RatioSolver(L, Ktilde, proj, lambda2, tol).fit();
}

inline ValueFitGradient value_fit_gradient(const ValueFit& fit, const GramCache& grams,
                                           const std::vector<Mat>& dKtilde, double lambda1,
                                           double tol = 1e-8) {
    return ValueSolver(grams.M, grams.Ktilde, lambda1, tol).gradient(fit, dKtilde);
}

/// The fit is recomputed internally; `grams.M` is ignored because the ratio
/// route projects with its own penalty mu2.
inline RatioFitGradient ratio_fit_gradient(const GramCache& grams, const std::vector<Mat>& dKtilde,
                                           double lambda2, double mu2, double tol = 1e-8) {
    const Projection proj(grams.L, mu2);
    return RatioSolver(grams.L, grams.Ktilde, proj, lambda2, tol).gradient(dKtilde);
}

/**
 * @brief Exact nuisance fits for data on finitely many distinct states.
 *
 * Every kernel function of the fits lives in the span of the atoms (distinct
 * state x action), so the N x N systems collapse to systems over the atoms.
 * With Phi the transition-to-atom indicator and D = diag(counts),
 *
 *     L = Phi G Phi',  M = Phi P Phi',  P = A' D A,  A = G (D G + mu I)^{-1},
 *
 * and the policy kernel is B Gs B' with row h of B equal to
 * e_{x(S_h, A_h)} - sum_a pi(a|S'_h) e_{x(S'_h, a)}. The fitted values u_hat
 * and e_hat coincide with the dense fits (the minimizers are unique as
 * functions), while the cost is linear in N.
 */
class CompressedNuisance {
public:
    /// `tuning` holds the internal (N-scaled) penalties.
    CompressedNuisance(const Dataset& d, const KernelSpec& spec, const TuningParams& tuning,
                       double tol = 1e-8)
        : atoms_(build_atom_table(d)), tuning_(tuning), tol_(tol) {
        tuning.validate();
        const Mat G = atom_gram(atoms_, spec, GramKernel::plain);
        Gs_ = atom_gram(atoms_, spec, GramKernel::shifted);
        const Eigen::Index m = atoms_.num_atoms();
        counts_ = Vec::Zero(m);
        for (Eigen::Index h = 0; h < d.size(); ++h) counts_[atoms_.current_atom(h)] += 1.0;
        auto side = [&](double mu, Mat& A, Mat& P) {
            Mat DG = counts_.asDiagonal() * G;
            DG.diagonal().array() += mu;
            A = G * DG.partialPivLu().inverse();
            P = A.transpose() * counts_.asDiagonal() * A;
            P = 0.5 * (P + P.transpose()).eval();
        };
        side(tuning.mu1, A1_, P1_);
        side(tuning.mu2, A2_, P2_);
    }

    const AtomTable& atoms() const noexcept { return atoms_; }
    Eigen::Index size() const noexcept { return static_cast<Eigen::Index>(atoms_.actions.size()); }

    /// Fitted nuisances of one policy; pi(a|s) for every distinct state id.
    struct Fit {
        Mat state_probs;  // distinct states x |A|
        Mat E;            // Phi' B
        Vec e_hat;        // per transition
        Vec omega_hat;
        Mat value_lhs;    // (m+1) x (m+1) stationarity matrix of the value fit
        Eigen::PartialPivLU<Mat> value_lu;
    };

    template <StatePolicy Policy>
    Fit fit(const Policy& pol) const {
        Mat probs(atoms_.states.rows(), atoms_.num_actions);
        for (Eigen::Index s = 0; s < probs.rows(); ++s)
            probs.row(s) = pol.probs(atoms_.states.row(s).transpose()).transpose();
        return fit_probs(probs);
    }

    Fit fit_probs(const Mat& state_probs) const {
        const Eigen::Index m = atoms_.num_atoms();
        const int A = atoms_.num_actions;
        Fit f;
        f.state_probs = state_probs;
        f.E = Mat::Zero(m, m);
        for (Eigen::Index h = 0; h < size(); ++h) {
            const int x = atoms_.current_atom(h);
            f.E(x, x) += 1.0;
            const int s = atoms_.next_state[static_cast<std::size_t>(h)];
            for (int a = 0; a < A; ++a) f.E(x, atoms_.atom(s, a)) -= state_probs(s, a);
        }
        const Mat EGs = f.E * Gs_;

        // ratio: (E'P2 E Gs + lambda2 I) c = E'P2 n, then e = A2 (n - E Gs c)
        {
            const Mat EtP = f.E.transpose() * P2_;
            Mat lhs = EtP * EGs;
            lhs.diagonal().array() += tuning_.lambda2;
            const Vec rhs = EtP * counts_;
            const Vec c = lhs.partialPivLu().solve(rhs);
            detail::check_residual(lhs, c, rhs, tol_, "compressed ratio");
            const Vec atom_e = A2_ * (counts_ - EGs * c);
            f.e_hat.resize(size());
            for (Eigen::Index h = 0; h < size(); ++h) f.e_hat[h] = atom_e[atoms_.current_atom(h)];
            const double mean_e = f.e_hat.mean();
            if (!std::isfinite(mean_e) || std::abs(mean_e) < 1e-8)
                throw NumericError("degenerate ratio normalization");
            f.omega_hat = f.e_hat / mean_e;
        }

        // value: [E'P E Gs + lambda1 I, E'P n; n'P E Gs, n'P n]
        const Mat EtP = f.E.transpose() * P1_;
        const Vec Pn = P1_ * counts_;
        f.value_lhs.resize(m + 1, m + 1);
        f.value_lhs.topLeftCorner(m, m) = EtP * EGs;
        f.value_lhs.topLeftCorner(m, m).diagonal().array() += tuning_.lambda1;
        f.value_lhs.topRightCorner(m, 1) = f.E.transpose() * Pn;
        f.value_lhs.bottomLeftCorner(1, m) = Pn.transpose() * EGs;
        f.value_lhs(m, m) = counts_.dot(Pn);
        f.value_lu.compute(f.value_lhs);
        return f;
    }

    /// u_hat for each column of r_betas (one column per beta).
    Mat value_differences(const Fit& f, const Mat& r_betas) const {
        const Eigen::Index m = atoms_.num_atoms();
        const int A = atoms_.num_actions;
        Mat atom_r = Mat::Zero(m, r_betas.cols());
        for (Eigen::Index h = 0; h < size(); ++h) atom_r.row(atoms_.current_atom(h)) += r_betas.row(h);
        Mat rhs(m + 1, r_betas.cols());
        rhs.topRows(m) = f.E.transpose() * (P1_ * atom_r);
        rhs.row(m) = counts_.transpose() * (P1_ * atom_r);
        const Mat x = f.value_lu.solve(rhs);
        detail::check_residual(f.value_lhs, x, rhs, tol_, "compressed value");
        const Mat g = Gs_ * x.topRows(m);  // fitted function at every atom
        Mat u(size(), r_betas.cols());
        for (Eigen::Index h = 0; h < size(); ++h) {
            const int s = atoms_.next_state[static_cast<std::size_t>(h)];
            u.row(h) = -g.row(atoms_.current_atom(h));
            for (int a = 0; a < A; ++a) u.row(h) += f.state_probs(s, a) * g.row(atoms_.atom(s, a));
        }
        return u;
    }

    Vec value_difference(const Fit& f, const Vec& r_beta) const {
        return value_differences(f, r_beta).col(0);
    }

private:
    AtomTable atoms_;
    TuningParams tuning_;
    double tol_;
    Mat Gs_, A1_, P1_, A2_, P2_;
    Vec counts_;
};

} // namespace robustavg
