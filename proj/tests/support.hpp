#pragma once

// Shared fixtures and brute-force reference computations for the tests.

#include "robustavg/kernels.hpp"

#include <functional>
#include <random>

namespace robustavg::fixtures {

inline Dataset random_dataset(int n, int t0, int p, std::uint64_t seed, int num_actions = 2) {
    Rng rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_int_distribution<int> act(0, num_actions - 1);
    Mat s(n * (t0 + 1), p);
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = z(rng);
    std::vector<int> a(static_cast<std::size_t>(n * t0));
    for (auto& x : a) x = act(rng);
    Vec r(n * t0);
    for (Eigen::Index i = 0; i < r.size(); ++i) r[i] = z(rng);
    return Dataset(n, t0, std::move(s), std::move(a), std::move(r), num_actions);
}

inline Vec random_vector(Eigen::Index n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = u(rng);
    return v;
}

inline Mat random_psd(Eigen::Index n, Rng& rng) {
    Mat A(n, n);
    std::normal_distribution<double> z(0.0, 1.0);
    for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = z(rng);
    return A * A.transpose() / static_cast<double>(n);
}

/// Policy kernel entry by the four-term definition with the shifted kernel.
inline double naive_policy_kernel_entry(const Dataset& rows, const Mat& prow, Eigen::Index h,
                                        const Dataset& cols, const Mat& pcol, Eigen::Index j,
                                        const KernelSpec& spec) {
    const Vec sh = rows.current_state(h).transpose();
    const Vec nh = rows.next_state(h).transpose();
    const Vec sj = cols.current_state(j).transpose();
    const Vec nj = cols.next_state(j).transpose();
    const int ah = rows.action(h);
    const int aj = cols.action(j);
    const int A = rows.num_actions();
    double v = shifted_kernel(sh, ah, sj, aj, spec);
    for (int a = 0; a < A; ++a) v -= prow(h, a) * shifted_kernel(nh, a, sj, aj, spec);
    for (int a = 0; a < A; ++a) v -= pcol(j, a) * shifted_kernel(nj, a, sh, ah, spec);
    for (int a = 0; a < A; ++a)
        for (int b = 0; b < A; ++b) v += prow(h, a) * pcol(j, b) * shifted_kernel(nh, a, nj, b, spec);
    return v;
}

inline Mat naive_policy_kernel(const Dataset& rows, const Mat& prow, const Dataset& cols,
                               const Mat& pcol, const KernelSpec& spec) {
    Mat K(rows.size(), cols.size());
    for (Eigen::Index h = 0; h < rows.size(); ++h)
        for (Eigen::Index j = 0; j < cols.size(); ++j)
            K(h, j) = naive_policy_kernel_entry(rows, prow, h, cols, pcol, j, spec);
    return K;
}

/// Central difference of a vector-valued map along each coordinate of x.
inline Mat central_difference(const std::function<Vec(const Vec&)>& f, const Vec& x,
                              const std::function<double(double)>& step) {
    const Vec f0 = f(x);
    Mat J(f0.size(), x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double h = step(x[k]);
        Vec xp = x, xm = x;
        xp[k] += h;
        xm[k] -= h;
        J.col(k) = (f(xp) - f(xm)) / (2.0 * h);
    }
    return J;
}

inline double relative_error(const Mat& a, const Mat& b) {
    return (a - b).norm() / std::max(1.0, b.norm());
}

} // namespace robustavg::fixtures
