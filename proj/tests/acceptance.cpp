// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset.

#include "robustavg/mdp_sim.hpp"
#include "robustavg/oracle.hpp"
#include "robustavg/train.hpp"
#include "lp_simplex.hpp"
#include "support.hpp"

#include <Eigen/QR>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>

using namespace robustavg;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3g", x);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double mean(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}

double sample_sd(const std::vector<double>& x) {
    const double m = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(x.size() - 1));
}

Outcome duality() {
    const auto t0 = std::chrono::steady_clock::now();
    Vec d = Vec::Constant(3, 1.0 / 3.0), R(3);
    R << 0, 1, 2;
    const DualSolution hand = dual_worst_case(d, R, 0.25);
    bool ok = std::abs(hand.value - 0.5) <= 1e-12 && hand.beta_star == 2.0 &&
              std::abs(primal_worst_case(d, R, 0.25).value - 0.5) <= 1e-12;
    Rng rng(101);
    double gap = 0.0, lp_gap = 0.0;
    for (int k = 0; k < 50; ++k) {
        const int S = 1 + static_cast<int>(uniform01(rng) * 8), A = 1 + static_cast<int>(uniform01(rng) * 3);
        const FiniteMDP m = random_ergodic_mdp(S, A, rng);
        const TabularPolicy pi = random_tabular_policy(S, A, rng);
        const Vec dist = stationary_distribution(m, pi);
        for (int j = 0; j <= 9; ++j) {
            const double c = 0.1 * j;
            const double dual = dual_worst_case(dist, m.R, c).value;
            gap = std::max(gap, std::abs(primal_worst_case(dist, m.R, c).value - dual));
            lp_gap = std::max(lp_gap, std::abs(fixtures::worst_case_mean_lp(dist, m.R, c) - dual));
        }
    }
    const double secs = seconds_since(t0);
    ok = ok && gap <= 1e-8 && lp_gap <= 1e-8 && secs < 5.0;
    return {ok, "hand instance 0.5 at beta 2, max |primal - dual| " + fmt(gap) + ", max |LP - dual| " + fmt(lp_gap) +
                    ", " + fmt(secs) + " s"};
}

Outcome degenerate_levels() {
    Rng rng(102);
    double err0 = 0.0, err1 = 0.0;
    for (int k = 0; k < 50; ++k) {
        const FiniteMDP m = random_ergodic_mdp(2 + k % 7, 1 + k % 3, rng);
        const TabularPolicy pi = random_tabular_policy(m.n_states, m.n_actions, rng);
        const Vec d = stationary_distribution(m, pi);
        err0 = std::max(err0, std::abs(dual_worst_case(d, m.R, 0.0).value - d.dot(m.R)));
        err1 = std::max(err1, std::abs(dual_worst_case(d, m.R, 1.0 - 1e-9).value - m.R.minCoeff()));
    }
    return {err0 <= 1e-10 && err1 <= 1e-6, "c = 0 error " + fmt(err0) + ", c = 1 - 1e-9 error " + fmt(err1)};
}

Outcome bellman() {
    Rng rng(103);
    double resid = 0.0, eta_err = 0.0;
    for (int k = 0; k < 20; ++k) {
        const FiniteMDP m = random_ergodic_mdp(2 + k % 7, 1 + k % 3, rng);
        const TabularPolicy pi = random_tabular_policy(m.n_states, m.n_actions, rng);
        const double beta = m.R.minCoeff() + uniform01(rng) * (m.R.maxCoeff() - m.R.minCoeff());
        const double c = 0.9 * uniform01(rng);
        const RelativeValue rv = exact_relative_value(m, pi, beta, c, 0, 0);
        // residual of the Bellman equation recomputed from Q and eta
        const Vec rb = modified_rewards(m.R, beta, c);
        for (int s = 0; s < m.n_states; ++s)
            for (int a = 0; a < m.n_actions; ++a) {
                double next = 0.0;
                for (int s2 = 0; s2 < m.n_states; ++s2)
                    next += m.next_dist(s, a)[s2] * pi.probs.row(s2).dot(rv.Q.row(s2));
                resid = std::max(resid, std::abs(rb[s] + next - rv.Q(s, a) - rv.eta));
            }
        eta_err = std::max(eta_err, std::abs(rv.eta - exact_M(m, pi, beta, c)));
    }
    return {resid <= 1e-10 && eta_err <= 1e-10, "max residual " + fmt(resid) + ", max |eta - M| " + fmt(eta_err)};
}

Outcome closed_forms() {
    double obj_gap = 0.0, value_resid = 0.0, ratio_resid = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const int n = 2 + static_cast<int>(seed % 3), t0 = 16 / n;
        const Dataset d = fixtures::random_dataset(n, t0, 2, 200 + seed);
        const KernelSpec spec = default_kernel_spec(d);
        Rng rng(300 + seed);
        const Mat L = assemble_gram(d, spec);
        const Mat K = assemble_policy_kernel(d, LogisticPolicy(fixtures::random_vector(2, rng, -3, 3), 10.0), spec);
        const Eigen::Index N = d.size();
        const double lambda = 0.01 + 0.1 * uniform01(rng), mu = 0.05 + 0.5 * uniform01(rng);
        const Mat M = build_projection(L, mu);

        // value route as a generic convex quadratic in (alpha, eta)
        const Vec r = modified_rewards(d.rewards(), std::normal_distribution<double>(0.0, 1.0)(rng), 0.3);
        Mat D(N, N + 1);
        D.leftCols(N) = K;
        D.col(N).setOnes();
        Mat H = D.transpose() * M * D;
        H.topLeftCorner(N, N) += lambda * K;
        const Vec g = D.transpose() * M * r;
        const Vec z_star = H.completeOrthogonalDecomposition().solve(g);
        auto value_obj = [&](const Vec& z) {
            const Vec res = r - D * z;
            return res.dot(M * res) + lambda * z.head(N).dot(K * z.head(N));
        };
        const ValueFit v = fit_value_difference(L, K, r, lambda, mu);
        Vec z(N + 1);
        z << v.alpha_hat, v.eta_hat;
        obj_gap = std::max(obj_gap, std::abs(value_obj(z) - value_obj(z_star)));
        value_resid = std::max(value_resid, (H * z - g).cwiseAbs().maxCoeff());

        // ratio route: dense solve of the stationarity system
        const RatioFit w = fit_ratio(L, K, lambda, mu);
        const Mat Hr = K * M * K + lambda * K;
        const Vec gr = K * M * Vec::Ones(N);
        const Vec phi_star = Hr.completeOrthogonalDecomposition().solve(gr);
        auto ratio_obj = [&](const Vec& phi) {
            const Vec res = Vec::Ones(N) - K * phi;
            return res.dot(M * res) + lambda * phi.dot(K * phi);
        };
        obj_gap = std::max(obj_gap, std::abs(ratio_obj(w.phi_hat) - ratio_obj(phi_star)));
        ratio_resid = std::max(ratio_resid,
                               ((M * K + lambda * Mat::Identity(N, N)) * w.phi_hat - M * Vec::Ones(N)).cwiseAbs().maxCoeff());
    }
    return {obj_gap <= 1e-6 && value_resid <= 1e-10 && ratio_resid <= 1e-10,
            "max objective gap " + fmt(obj_gap) + ", value residual " + fmt(value_resid) + ", ratio residual " +
                fmt(ratio_resid)};
}

Outcome ratio_sanity() {
    Rng rng(105);
    const FiniteMDP m = random_ergodic_mdp(4, 2, rng);
    const TabularPolicy pi = random_tabular_policy(4, 2, rng);
    const Dataset d = simulate_finite_data(m, pi, stationary_distribution(m, pi), 40, 100, 5);
    const KernelSpec spec = default_kernel_spec(d);
    const TuningParams tp = TuningParams{}.scaled(d.size());
    const RatioFit w = fit_ratio(assemble_gram(d, spec), assemble_policy_kernel(d, TabularStatePolicy(pi), spec),
                                 tp.lambda2, tp.mu2);
    const double rmse = std::sqrt((w.omega_hat.array() - 1.0).square().mean());
    const double mean_w = w.omega_hat.mean();
    return {rmse <= 0.1 && std::abs(mean_w - 1.0) <= 1e-12,
            "N = " + std::to_string(d.size()) + ", RMSE " + fmt(rmse) + ", mean " + fmt(mean_w)};
}

struct OffPolicyInstance {
    FiniteMDP mdp;
    TabularPolicy target, behavior;
    Vec init;
    double beta = 0.0, c = 0.0, truth = 0.0;
};

OffPolicyInstance off_policy_instance(std::uint64_t seed) {
    Rng rng(seed);
    OffPolicyInstance in{random_ergodic_mdp(4, 2, rng), {}, {}, {}};
    in.target = random_tabular_policy(4, 2, rng);
    in.behavior = random_tabular_policy(4, 2, rng);
    in.init = stationary_distribution(in.mdp, in.behavior);
    std::vector<double> r(in.mdp.R.begin(), in.mdp.R.end());
    std::sort(r.begin(), r.end());
    in.beta = 0.5 * (r[1] + r[2]);
    in.c = 0.3;
    in.truth = exact_M(in.mdp, in.target, in.beta, in.c);
    return in;
}

Outcome double_robustness() {
    const auto t0 = std::chrono::steady_clock::now();
    const OffPolicyInstance in = off_policy_instance(106);
    const std::vector<int> sizes{1000, 4000, 16000};
    bool ok = true;
    std::string detail;
    for (ProbeKind kind : {ProbeKind::oracle_u_wrong_omega, ProbeKind::oracle_omega_wrong_u}) {
        std::vector<double> mae;
        double bias = 0.0, se = 0.0;
        for (int N : sizes) {
            std::vector<double> est, abs_err;
            for (int rep = 0; rep < 50; ++rep) {
                const Dataset d = simulate_finite_data(in.mdp, in.behavior, in.init, N / 50, 50,
                                                       derive_seed(static_cast<std::uint64_t>(N), "replicate",
                                                                   static_cast<std::uint64_t>(rep)));
                est.push_back(double_robustness_probe(d, in.mdp, in.target, in.behavior, in.beta, in.c, kind));
                abs_err.push_back(std::abs(est.back() - in.truth));
            }
            mae.push_back(mean(abs_err));
            bias = std::abs(mean(est) - in.truth);
            se = sample_sd(est) / std::sqrt(50.0);
        }
        const bool decreasing = mae[0] > mae[1] && mae[1] > mae[2];
        ok = ok && decreasing && bias <= 3.0 * se;
        detail += std::string(kind == ProbeKind::oracle_u_wrong_omega ? "exact U, omega = 1" : "exact omega, u = 0") +
                  ": |bias| " + fmt(bias) + " vs 3 se " + fmt(3.0 * se) + ", MAE " + fmt(mae[0]) + " > " +
                  fmt(mae[1]) + " > " + fmt(mae[2]) + "; ";
    }
    const double secs = seconds_since(t0);
    ok = ok && secs < 120.0;
    return {ok, detail + fmt(secs) + " s"};
}

/// Full estimator with fitted nuisances on finite-state data.
ObjectiveValue fitted_estimate(const OffPolicyInstance& in, const Dataset& d, const TuningParams& per_sample) {
    const KernelSpec spec = default_kernel_spec(d);
    const CompressedNuisance nu(d, spec, per_sample.scaled(d.size()));
    const auto fit = nu.fit(TabularStatePolicy(in.target));
    const Vec r = modified_rewards(d.rewards(), in.beta, in.c);
    return summarize_objective(fit.omega_hat, nu.value_difference(fit, r), r);
}

Outcome root_n_rate() {
    const OffPolicyInstance in = off_policy_instance(107);
    const TuningParams tp{1e-4, 1e-3, 1e-4, 1e-3};
    const std::vector<int> sizes{500, 2000, 8000};
    std::vector<double> lx, ly;
    std::string detail = "RMSE";
    for (int N : sizes) {
        double se2 = 0.0;
        for (int rep = 0; rep < 50; ++rep) {
            const Dataset d = simulate_finite_data(in.mdp, in.behavior, in.init, N / 50, 50,
                                                   derive_seed(static_cast<std::uint64_t>(N), "rate",
                                                               static_cast<std::uint64_t>(rep)));
            const double e = fitted_estimate(in, d, tp).m_hat - in.truth;
            se2 += e * e / 50.0;
        }
        lx.push_back(std::log(static_cast<double>(N)));
        ly.push_back(std::log(std::sqrt(se2)));
        detail += " " + fmt(std::sqrt(se2));
    }
    const double mx = mean(lx), my = mean(ly);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t k = 0; k < lx.size(); ++k) {
        sxy += (lx[k] - mx) * (ly[k] - my);
        sxx += (lx[k] - mx) * (lx[k] - mx);
    }
    const double slope = sxy / sxx;

    int covered = 0;
    const int n_cov = 200, N_cov = 2000;
    for (int rep = 0; rep < n_cov; ++rep) {
        const Dataset d = simulate_finite_data(in.mdp, in.behavior, in.init, N_cov / 50, 50,
                                               derive_seed(777, "coverage", static_cast<std::uint64_t>(rep)));
        const ObjectiveValue v = fitted_estimate(in, d, tp);
        covered += (v.ci_lo <= in.truth && in.truth <= v.ci_hi) ? 1 : 0;
    }
    const double coverage = covered / static_cast<double>(n_cov);
    return {slope >= -0.7 && slope <= -0.3 && coverage >= 0.90 && coverage <= 0.99,
            detail + ", log-log slope " + fmt(slope) + ", coverage " + fmt(coverage) + " at N = " +
                std::to_string(N_cov)};
}

Outcome gradient_fidelity() {
    Rng rng(108);
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
        const Dataset d = fixtures::random_dataset(3 + k % 3, 8, 2, 400 + static_cast<std::uint64_t>(k));
        const ObjectiveModel model(d, default_kernel_spec(d), TuningParams{1e-3, 1e-2, 1e-3, 1e-2}, 0.45 * uniform01(rng));
        const Vec theta = fixtures::random_vector(2, rng, -5, 5);
        // beta inside the reward range, otherwise the objective is flat in theta
        const double lo = d.rewards().minCoeff(), hi = d.rewards().maxCoeff();
        const double beta = lo + (0.1 + 0.8 * uniform01(rng)) * (hi - lo);
        const Vec g = model.at_differentiable(LogisticPolicy(theta, 10.0)).objective_and_gradient(beta).second;
        const Mat fd = fixtures::central_difference(
            [&](const Vec& th) { return Vec::Constant(1, model.at(LogisticPolicy(th, 10.0)).objective(beta)); }, theta,
            [](double x) { return 1e-5 * (1 + std::abs(x)); });
        worst = std::max(worst, (g - fd.row(0).transpose()).norm() / std::max(g.norm(), 1e-8));
    }
    return {worst <= 1e-4, "max relative error " + fmt(worst)};
}

Outcome beta_scan() {
    Rng rng(109);
    double worst = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < 20; ++k) {
        const Dataset d = fixtures::random_dataset(3, 6, 2, 500 + static_cast<std::uint64_t>(k));
        const ObjectiveModel model(d, default_kernel_spec(d), TuningParams{1e-3, 1e-2, 1e-3, 1e-2}, 0.9 * uniform01(rng));
        const auto fit = model.at(LogisticPolicy(fixtures::random_vector(2, rng, -10, 10), 10.0));
        const double lo = d.rewards().minCoeff(), hi = d.rewards().maxCoeff();
        const BetaChoice b = maximize_beta(fit, beta_candidates(d.rewards(), lo, hi));
        std::vector<double> grid;
        for (int i = 0; lo + 1e-3 * i <= hi; ++i) grid.push_back(lo + 1e-3 * i);
        const auto vals = fit.objectives(grid);
        worst = std::max(worst, *std::max_element(vals.begin(), vals.end()) - b.objective);
    }
    return {worst <= 1e-6, "max (grid - scan) " + fmt(worst)};
}

Outcome simulation_study() {
    const std::vector<double> levels{0.0, 0.1, 0.3, 0.5};
    int t2_wins = 0;
    double widest = 0.0, slowest = 0.0;
    std::ostringstream t2_log;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        SimConfig sim;
        sim.seed = derive_seed(seed, "simulate");
        const Dataset d = simulate_training_data(sim, UniformPolicy{});
        std::vector<LogisticPolicy> policies;
        for (double c : levels) {
            TrainOptions opt;
            opt.seed = seed;
            const auto t0 = std::chrono::steady_clock::now();
            const TrainOutcome out = train_robust_policy(d, c, opt);
            slowest = std::max(slowest, seconds_since(t0));
            policies.emplace_back(out.result.theta_hat, opt.optimizer.c0);
        }
        SimConfig eval;
        eval.n_episodes = 1000;
        eval.horizon = 100;
        eval.seed = derive_seed(seed, "evaluate");
        std::vector<std::vector<double>> normal_curves;
        for (const auto& pol : policies) normal_curves.push_back(evaluate_policy(eval, pol, 50, 100).mean_avg_reward);
        for (std::size_t t = 0; t < normal_curves.front().size(); ++t) {
            double lo = normal_curves[0][t], hi = lo;
            for (const auto& curve : normal_curves) {
                lo = std::min(lo, curve[t]);
                hi = std::max(hi, curve[t]);
            }
            widest = std::max(widest, hi - lo);
        }
        eval.init = InitDist::student_t;
        const double robust = mean(evaluate_policy(eval, policies[3], 50, 100).mean_avg_reward);
        const double baseline = mean(evaluate_policy(eval, policies[0], 50, 100).mean_avg_reward);
        t2_wins += robust >= baseline ? 1 : 0;
        t2_log << (seed > 1 ? " " : "") << fmt(robust - baseline);
    }
    return {t2_wins >= 7 && widest <= 0.5 && slowest < 600.0,
            "t(2): c = 0.5 >= c = 0 in " + std::to_string(t2_wins) + "/10 seeds (differences " + t2_log.str() +
                "), normal band width " + fmt(widest) + ", slowest training " + fmt(slowest) + " s"};
}

Outcome choose_c_rule() {
    bool ok = choose_c(1.0, 0.9, 100) == 0.09;
    Rng rng(111);
    double margin = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 20; ++k) {
        const FiniteMDP m = random_ergodic_mdp(3 + k % 5, 2, rng);
        const TabularPolicy pi = random_tabular_policy(m.n_states, 2, rng);
        Vec init = Vec::Zero(m.n_states);
        init[k % m.n_states] = 1.0;
        const GeometricBound gb = fit_geometric_bound(m, pi, init, 200);
        for (int T0 : {10, 50, 100})
            margin = std::min(margin, choose_c(gb.C0, gb.alpha, T0) - avg_visitation_tv(m, pi, init, T0));
    }
    ok = ok && margin >= 0.0;
    return {ok, "choose_c(1, 0.9, 100) = 0.09, min(bound - average visitation TV) " + fmt(margin)};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome cli_determinism() {
    namespace fs = std::filesystem;
    const fs::path root = fs::temp_directory_path() / ("robustavg_acceptance_" + std::to_string(::getpid()));
    const std::string cli = ROBUSTAVG_CLI_PATH;
    const std::vector<std::string> commands{
        "simulate --n 6 --t0 10 --seed 3 --out data.csv --report simulate.json",
        "tune --data data.csv --seed 3 --c 0.3 --out tune.json",
        "train --data data.csv --seed 3 --c 0.3 --restarts 2 --max-outer 3 --policy-out policy.json "
        "--report-out train.json",
        "evaluate --policy policy.json --episodes 50 --seed 3 --init t2 --out evaluate.json",
        "oracle-check --seed 3 --instances 5 --out oracle.json",
    };
    const std::vector<std::string> artifacts{"data.csv",  "simulate.json", "tune.json",  "policy.json",
                                             "train.json", "evaluate.json", "oracle.json"};
    // identical relative paths in two directories, so the embedded configs agree too
    bool ok = true;
    std::string failed;
    for (const char* run : {"a", "b"}) {
        const fs::path dir = root / run;
        fs::create_directories(dir);
        for (const auto& args : commands) {
            const std::string cmd = "cd '" + dir.string() + "' && '" + cli + "' " + args + " > /dev/null 2>&1";
            if (std::system(cmd.c_str()) != 0) {
                ok = false;
                failed += " [" + args.substr(0, args.find(' ')) + " exited nonzero]";
            }
        }
    }
    for (const auto& f : artifacts) {
        const std::string a = slurp(root / "a" / f), b = slurp(root / "b" / f);
        if (a.empty() || a != b) {
            ok = false;
            failed += " [" + f + " differs]";
        }
    }
    fs::remove_all(root);
    return {ok, std::to_string(artifacts.size()) + " artifacts byte-identical across two runs" + failed};
}

struct Criterion {
    const char* name;
    std::function<Outcome()> run;
};

} // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria{
        {"duality", duality},
        {"degenerate robustness levels", degenerate_levels},
        {"oracle Bellman correctness", bellman},
        {"nuisance closed forms", closed_forms},
        {"ratio sanity", ratio_sanity},
        {"double robustness", double_robustness},
        {"root-N rate and coverage", root_n_rate},
        {"gradient fidelity", gradient_fidelity},
        {"beta scan exactness", beta_scan},
        {"end-to-end simulation study", simulation_study},
        {"c-selection rule", choose_c_rule},
        {"CLI determinism", cli_determinism},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    int failures = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int id = static_cast<int>(k) + 1;
        if (!only.empty() && !only.count(id)) continue;
        Outcome o;
        try {
            o = criteria[k].run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::cout << "AC" << id << ' ' << (o.pass ? "PASS" : "FAIL") << ' ' << criteria[k].name << ": " << o.detail
                  << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
