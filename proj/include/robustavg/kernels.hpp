#pragma once

#include "robustavg/data.hpp"
#include "robustavg/policy.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

namespace robustavg {

/**
 * Gaussian state kernel bandwidth and the reference pair (s*, a*) that pins
 * every value-type function to zero.
 */
struct KernelSpec {
    double bandwidth = 1.0;
    Vec ref_state;
    int ref_action = 0;

    void validate() const {
        require(std::isfinite(bandwidth) && bandwidth > 0.0, "kernel bandwidth must be positive");
        require(ref_state.size() >= 1, "reference state is empty");
    }
};

/**
 * Median of all pairwise Euclidean distances between the rows of `points`
 * (distinct unordered pairs; even counts average the two middle values).
 */
inline double median_heuristic_bandwidth(const Mat& points) {
    const Eigen::Index m = points.rows();
    if (m < 2) throw DataError("degenerate bandwidth: need at least two points");
    std::vector<double> dist;
    dist.reserve(static_cast<std::size_t>(m * (m - 1) / 2));
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = i + 1; j < m; ++j)
            dist.push_back((points.row(i) - points.row(j)).norm());
    const std::size_t k = dist.size();
    const auto mid = dist.begin() + static_cast<std::ptrdiff_t>(k / 2);
    std::nth_element(dist.begin(), mid, dist.end());
    double med = *mid;
    if (k % 2 == 0) med = 0.5 * (med + *std::max_element(dist.begin(), mid));
    if (!(med > 0.0)) throw DataError("degenerate bandwidth: all points identical");
    return med;
}

/// Bandwidth from the states S_h that enter the transitions, plus the default
/// reference pair (first transition's state and action).
inline KernelSpec default_kernel_spec(const Dataset& d) {
    Mat s(d.size(), d.p());
    for (Eigen::Index h = 0; h < d.size(); ++h) s.row(h) = d.current_state(h);
    KernelSpec spec;
    spec.bandwidth = median_heuristic_bandwidth(s);
    spec.ref_state = d.current_state(0).transpose();
    spec.ref_action = d.action(0);
    return spec;
}

template <class A, class B>
double gaussian_kernel(const A& s1, const B& s2, double bandwidth) {
    return std::exp(-(s1 - s2).squaredNorm() / (2.0 * bandwidth * bandwidth));
}

/// k((s1,a1),(s2,a2)) = 1{a1 = a2} exp(-|s1 - s2|^2 / (2 sigma^2))
inline double state_action_kernel(const Vec& s1, int a1, const Vec& s2, int a2,
                                  const KernelSpec& spec) {
    return a1 == a2 ? gaussian_kernel(s1, s2, spec.bandwidth) : 0.0;
}

/// Reference-shifted kernel; vanishes whenever either argument is (s*, a*).
inline double shifted_kernel(const Vec& s1, int a1, const Vec& s2, int a2,
                             const KernelSpec& spec) {
    return state_action_kernel(s1, a1, s2, a2, spec) -
           state_action_kernel(spec.ref_state, spec.ref_action, s2, a2, spec) -
           state_action_kernel(s1, a1, spec.ref_state, spec.ref_action, spec) + 1.0;
}

/// exp(-|x_i - y_j|^2 / (2 sigma^2)) for rows x_i of X and y_j of Y.
inline Mat gaussian_block(const Mat& X, const Mat& Y, double bandwidth) {
    const double scale = -1.0 / (2.0 * bandwidth * bandwidth);
    Mat out(X.rows(), Y.rows());
    for (Eigen::Index j = 0; j < Y.rows(); ++j)
        for (Eigen::Index i = 0; i < X.rows(); ++i)
            out(i, j) = std::exp(scale * (X.row(i) - Y.row(j)).squaredNorm());
    return out;
}

inline Mat gaussian_block_symmetric(const Mat& X, double bandwidth) {
    const double scale = -1.0 / (2.0 * bandwidth * bandwidth);
    Mat out(X.rows(), X.rows());
    for (Eigen::Index j = 0; j < X.rows(); ++j) {
        out(j, j) = 1.0;
        for (Eigen::Index i = j + 1; i < X.rows(); ++i)
            out(i, j) = out(j, i) = std::exp(scale * (X.row(i) - X.row(j)).squaredNorm());
    }
    return out;
}

namespace detail {

inline Mat current_states(const Dataset& d) {
    Mat s(d.size(), d.p());
    for (Eigen::Index h = 0; h < d.size(); ++h) s.row(h) = d.current_state(h);
    return s;
}

inline Mat next_states(const Dataset& d) {
    Mat s(d.size(), d.p());
    for (Eigen::Index h = 0; h < d.size(); ++h) s.row(h) = d.next_state(h);
    return s;
}

/// k((s, a), (s*, a*)) for each row s.
inline Vec reference_column(const Mat& states, int action, const KernelSpec& spec) {
    Vec out = Vec::Zero(states.rows());
    if (action != spec.ref_action) return out;
    for (Eigen::Index i = 0; i < states.rows(); ++i)
        out[i] = gaussian_kernel(states.row(i), spec.ref_state.transpose(), spec.bandwidth);
    return out;
}

inline Vec reference_column(const Mat& states, const std::vector<int>& actions,
                            const KernelSpec& spec) {
    Vec out(states.rows());
    for (Eigen::Index i = 0; i < states.rows(); ++i)
        out[i] = actions[static_cast<std::size_t>(i)] == spec.ref_action
                     ? gaussian_kernel(states.row(i), spec.ref_state.transpose(), spec.bandwidth)
                     : 0.0;
    return out;
}

} // namespace detail

/// Which state-action kernel fills the base Gram matrix L.
enum class GramKernel { plain, shifted };

/**
 * Base Gram matrix over the observed pairs W_h = (S_h, A_h) in flat order.
 * The projection space uses the plain state-action kernel by default.
 */
inline Mat assemble_gram(const Dataset& d, const KernelSpec& spec,
                         GramKernel kind = GramKernel::plain) {
    spec.validate();
    const Mat s = detail::current_states(d);
    Mat L = gaussian_block_symmetric(s, spec.bandwidth);
    for (Eigen::Index j = 0; j < d.size(); ++j)
        for (Eigen::Index i = 0; i < d.size(); ++i)
            if (d.action(i) != d.action(j)) L(i, j) = 0.0;
    if (kind == GramKernel::shifted) {
        const Vec ref = detail::reference_column(s, d.actions(), spec);
        L.rowwise() -= ref.transpose();
        L.colwise() -= ref;
        L.array() += 1.0;
    }
    return L;
}

/// pi(a | S'_h) for every transition, as an N x |A| matrix.
template <StatePolicy Policy>
Mat next_state_probs(const Dataset& d, const Policy& pol) {
    if (pol.num_actions() != d.num_actions())
        throw ConfigError("policy and dataset disagree on the number of actions");
    Mat P(d.size(), d.num_actions());
    for (Eigen::Index h = 0; h < d.size(); ++h) {
        const Vec p = pol.probs(d.next_state(h).transpose());
        if (p.size() != d.num_actions() || !p.allFinite() || p.minCoeff() < 0.0 ||
            std::abs(p.sum() - 1.0) > 1e-12)
            throw ConfigError("policy returns non-probability vector");
        P.row(h) = p.transpose();
    }
    return P;
}

/// d pi(a | S'_h) / d theta_k, one N x |A| matrix per parameter k.
template <DifferentiablePolicy Policy>
std::vector<Mat> next_state_prob_jacobians(const Dataset& d, const Policy& pol) {
    const int q = pol.num_params();
    std::vector<Mat> out(static_cast<std::size_t>(q), Mat(d.size(), d.num_actions()));
    for (Eigen::Index h = 0; h < d.size(); ++h) {
        const Mat J = pol.prob_jacobian(d.next_state(h).transpose());
        for (int k = 0; k < q; ++k) out[static_cast<std::size_t>(k)].row(h) = J.col(k).transpose();
    }
    return out;
}

/**
 * @brief Policy-independent pieces of the policy-shifted kernel between two
 * transition sets.
 *
 * With k the reference-shifted state-action kernel and
 * k~_h = k(W_h, .) - sum_a pi(a|S'_h) k((S'_h, a), .), entry (h, j) of the
 * policy kernel is <k~_h, k~_j>. Expanding the four terms leaves products of
 * next-state probabilities with four Gaussian blocks, so a new policy only
 * costs O(N^2 |A|) elementwise work on top of this cache.
 */
class PolicyKernelBasis {
public:
    /// Square basis over one dataset (rows and columns are the same transitions).
    PolicyKernelBasis(const Dataset& d, const KernelSpec& spec)
        : PolicyKernelBasis(d, d, spec, true) {}

    /// Rectangular basis: rows from `rows`, columns from `cols`.
    PolicyKernelBasis(const Dataset& rows, const Dataset& cols, const KernelSpec& spec)
        : PolicyKernelBasis(rows, cols, spec, false) {}

    Eigen::Index rows() const noexcept { return ww_.rows(); }
    Eigen::Index cols() const noexcept { return ww_.cols(); }
    bool symmetric() const noexcept { return symmetric_; }

    /// Policy kernel given next-state probabilities of the row and column sets.
    Mat kernel(const Mat& prob_rows, const Mat& prob_cols) const {
        const Side r = side(prob_rows, row_);
        const Side c = side(prob_cols, col_);
        Mat K = base_;
        subtract_cross(K, wn_, row_.actions, c, row_.ref_w);
        if (symmetric_)
            subtract_cross_transposed(K, wn_.transpose(), col_.actions, r, col_.ref_w);
        else
            subtract_cross_transposed(K, nw_, col_.actions, r, col_.ref_w);
        add_next_next(K, r, c);
        return K;
    }

    Mat kernel(const Mat& probs) const { return kernel(probs, probs); }

    /**
     * Directional derivative of the policy kernel when the next-state
     * probabilities move by `dprob_rows` / `dprob_cols`.
     */
    Mat kernel_derivative(const Mat& prob_rows, const Mat& dprob_rows, const Mat& prob_cols,
                          const Mat& dprob_cols) const {
        const Side r = side(prob_rows, row_);
        const Side c = side(prob_cols, col_);
        const Side dr = side(dprob_rows, row_);
        const Side dc = side(dprob_cols, col_);
        // cross terms are linear in the probabilities, the next-next term bilinear
        Mat dK = Mat::Zero(rows(), cols());
        subtract_cross(dK, wn_, row_.actions, dc, row_.ref_w);
        if (symmetric_)
            subtract_cross_transposed(dK, wn_.transpose(), col_.actions, dr, col_.ref_w);
        else
            subtract_cross_transposed(dK, nw_, col_.actions, dr, col_.ref_w);
        add_next_next(dK, dr, c);
        add_next_next(dK, r, dc);
        return dK;
    }

    Mat kernel_derivative(const Mat& probs, const Mat& dprobs) const {
        return kernel_derivative(probs, dprobs, probs, dprobs);
    }

private:
    struct SetData {
        std::vector<int> actions;
        Mat ref_next;  // N x |A|: k((S'_h, a), (s*, a*))
        Vec ref_w;     // k(W_h, (s*, a*))
    };
    struct Side {
        Mat probs;
        Vec rho;   // sum_a p_a(h) k((S'_h, a), ref)
        Vec mass;  // sum_a p_a(h)
    };

    PolicyKernelBasis(const Dataset& X, const Dataset& Y, const KernelSpec& spec, bool symmetric)
        : symmetric_(symmetric), num_actions_(X.num_actions()) {
        spec.validate();
        if (X.num_actions() != Y.num_actions() || X.p() != Y.p())
            throw DataError("transition sets have different shapes");
        const Mat sx = detail::current_states(X);
        const Mat nx = detail::next_states(X);
        row_ = set_data(X, sx, nx, spec);
        if (symmetric_) {
            col_ = row_;
            ww_ = gaussian_block_symmetric(sx, spec.bandwidth);
            wn_ = gaussian_block(sx, nx, spec.bandwidth);
            nn_ = gaussian_block_symmetric(nx, spec.bandwidth);
        } else {
            const Mat sy = detail::current_states(Y);
            const Mat ny = detail::next_states(Y);
            col_ = set_data(Y, sy, ny, spec);
            ww_ = gaussian_block(sx, sy, spec.bandwidth);
            wn_ = gaussian_block(sx, ny, spec.bandwidth);
            nw_ = gaussian_block(nx, sy, spec.bandwidth);
            nn_ = gaussian_block(nx, ny, spec.bandwidth);
        }
        base_.resize(ww_.rows(), ww_.cols());
        for (Eigen::Index j = 0; j < base_.cols(); ++j)
            for (Eigen::Index i = 0; i < base_.rows(); ++i)
                base_(i, j) = (row_.actions[static_cast<std::size_t>(i)] ==
                                       col_.actions[static_cast<std::size_t>(j)]
                                   ? ww_(i, j)
                                   : 0.0) -
                              row_.ref_w[i] - col_.ref_w[j] + 1.0;
    }

    SetData set_data(const Dataset& d, const Mat& s, const Mat& next, const KernelSpec& spec) const {
        SetData out;
        out.actions = d.actions();
        out.ref_w = detail::reference_column(s, d.actions(), spec);
        out.ref_next.resize(d.size(), num_actions_);
        for (int a = 0; a < num_actions_; ++a)
            out.ref_next.col(a) = detail::reference_column(next, a, spec);
        return out;
    }

    Side side(const Mat& probs, const SetData& set) const {
        if (probs.rows() != static_cast<Eigen::Index>(set.actions.size()) ||
            probs.cols() != num_actions_)
            throw ConfigError("probability matrix has the wrong shape");
        Side out;
        out.probs = probs;
        out.rho = probs.cwiseProduct(set.ref_next).rowwise().sum();
        out.mass = probs.rowwise().sum();
        return out;
    }

    /// K -= T2 with T2[h, j] = G[h, j] P(j, a_h) - rho(j) - (ref_w(h) - 1) mass(j).
    template <class Block>
    static void subtract_cross(Mat& K, const Block& G, const std::vector<int>& row_actions,
                               const Side& col, const Vec& row_ref) {
        for (Eigen::Index j = 0; j < K.cols(); ++j)
            for (Eigen::Index h = 0; h < K.rows(); ++h)
                K(h, j) -= G(h, j) * col.probs(j, row_actions[static_cast<std::size_t>(h)]) -
                           col.rho[j] - (row_ref[h] - 1.0) * col.mass[j];
    }

    /// K -= T3 with T3[h, j] = G[h, j] P(h, a_j) - rho(h) - (ref_w(j) - 1) mass(h).
    template <class Block>
    static void subtract_cross_transposed(Mat& K, const Block& G,
                                          const std::vector<int>& col_actions, const Side& row,
                                          const Vec& col_ref) {
        for (Eigen::Index j = 0; j < K.cols(); ++j) {
            const int a = col_actions[static_cast<std::size_t>(j)];
            for (Eigen::Index h = 0; h < K.rows(); ++h)
                K(h, j) -= G(h, j) * row.probs(h, a) - row.rho[h] - (col_ref[j] - 1.0) * row.mass[h];
        }
    }

    /// K += sum_a p_a(h) q_a(j) G_nn(h, j) - m_p(h) rho_q(j) - rho_p(h) m_q(j) + m_p(h) m_q(j)
    void add_next_next(Mat& K, const Side& r, const Side& c) const {
        for (int a = 0; a < num_actions_; ++a)
            K.array() += nn_.array() * (r.probs.col(a) * c.probs.col(a).transpose()).array();
        K.noalias() -= r.mass * c.rho.transpose();
        K.noalias() -= r.rho * c.mass.transpose();
        K.noalias() += r.mass * c.mass.transpose();
    }

    bool symmetric_;
    int num_actions_;
    SetData row_, col_;
    Mat ww_, wn_, nw_, nn_, base_;
};

/// Policy-shifted kernel matrix over one dataset.
template <StatePolicy Policy>
Mat assemble_policy_kernel(const Dataset& d, const Policy& pol, const KernelSpec& spec) {
    const Mat P = next_state_probs(d, pol);
    return PolicyKernelBasis(d, spec).kernel(P);
}

/// d Ktilde / d theta_k for every policy parameter.
template <DifferentiablePolicy Policy>
std::vector<Mat> assemble_policy_kernel_gradient(const Dataset& d, const Policy& pol,
                                                 const KernelSpec& spec) {
    const Mat P = next_state_probs(d, pol);
    const auto dP = next_state_prob_jacobians(d, pol);
    const PolicyKernelBasis basis(d, spec);
    std::vector<Mat> out;
    out.reserve(dP.size());
    for (const auto& dp : dP) out.push_back(basis.kernel_derivative(P, dp));
    return out;
}

/**
 * @brief Distinct states of a dataset and the atom index of every transition.
 *
 * Atoms are all (state, action) pairs over the distinct states; atom id is
 * state_id * |A| + action. Data from a finite state space collapses to a
 * handful of atoms, which the compressed nuisance fits exploit.
 */
struct AtomTable {
    Mat states;                  // distinct states, one per row
    int num_actions = 2;
    std::vector<int> cur_state;  // state id of S_h
    std::vector<int> next_state; // state id of S'_h
    std::vector<int> actions;

    Eigen::Index num_atoms() const { return states.rows() * num_actions; }
    int atom(int state_id, int action) const { return state_id * num_actions + action; }
    int current_atom(Eigen::Index h) const {
        return atom(cur_state[static_cast<std::size_t>(h)], actions[static_cast<std::size_t>(h)]);
    }
};

inline AtomTable build_atom_table(const Dataset& d) {
    AtomTable out;
    out.num_actions = d.num_actions();
    std::map<std::vector<double>, int> ids;
    std::vector<std::vector<double>> rows;
    auto id_of = [&](const auto& row) {
        std::vector<double> key(row.data(), row.data() + row.size());
        for (Eigen::Index j = 0; j < row.size(); ++j) key[static_cast<std::size_t>(j)] = row[j];
        const auto [it, inserted] = ids.emplace(key, static_cast<int>(rows.size()));
        if (inserted) rows.push_back(key);
        return it->second;
    };
    for (Eigen::Index h = 0; h < d.size(); ++h) {
        out.cur_state.push_back(id_of(d.current_state(h)));
        out.next_state.push_back(id_of(d.next_state(h)));
    }
    out.actions = d.actions();
    out.states.resize(static_cast<Eigen::Index>(rows.size()), d.p());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (int j = 0; j < d.p(); ++j)
            out.states(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
    return out;
}

/// Gram matrix over all atoms of the table (plain or reference-shifted kernel).
inline Mat atom_gram(const AtomTable& atoms, const KernelSpec& spec, GramKernel kind) {
    const Eigen::Index m = atoms.num_atoms();
    const int A = atoms.num_actions;
    const Mat G = gaussian_block_symmetric(atoms.states, spec.bandwidth);
    Mat out(m, m);
    for (Eigen::Index x = 0; x < m; ++x)
        for (Eigen::Index y = 0; y < m; ++y)
            out(x, y) = (x % A == y % A) ? G(x / A, y / A) : 0.0;
    if (kind == GramKernel::shifted) {
        Vec ref(m);
        for (Eigen::Index x = 0; x < m; ++x)
            ref[x] = (x % A == spec.ref_action)
                         ? gaussian_kernel(atoms.states.row(x / A), spec.ref_state.transpose(),
                                           spec.bandwidth)
                         : 0.0;
        out.rowwise() -= ref.transpose();
        out.colwise() -= ref;
        out.array() += 1.0;
    }
    return out;
}

} // namespace robustavg
