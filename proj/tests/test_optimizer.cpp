#include "robustavg/optimizer.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace robustavg;

namespace {

Vec vec3(double a, double b, double c) {
    Vec v(3);
    v << a, b, c;
    return v;
}

Dataset with_rewards(const Dataset& d, const Vec& r) { return Dataset(d.n(), d.t0(), d.states(), d.actions(), r); }

Dataset constant_reward_data(double r0) {
    const Dataset d = fixtures::random_dataset(3, 8, 2, 51);
    return with_rewards(d, Vec::Constant(d.size(), r0));
}

const TuningParams kTuning{1e-3, 1e-2, 1e-3, 1e-2};

double scan_with_unit_weights(const Vec& rewards, double c, double& beta) {
    const auto cand = beta_candidates(rewards, rewards.minCoeff(), rewards.maxCoeff());
    std::vector<double> vals;
    for (double b : cand)
        vals.push_back(robust_objective_estimate(Vec::Ones(rewards.size()), Vec::Zero(rewards.size()),
                                                 modified_rewards(rewards, b, c)));
    const BetaChoice ch = scan_beta(cand, vals);
    beta = ch.beta;
    return ch.objective;
}

} // namespace

TEST(BetaScan, UnitWeightExamples) {
    double beta = 0.0;
    EXPECT_NEAR(scan_with_unit_weights(vec3(0, 1, 2), 0.25, beta), 2.0 / 3.0, 1e-15);
    EXPECT_EQ(beta, 2.0);
    // worst-case mean c R_min + (1 - c) g agrees with moving mass c from the top reward to the bottom
    EXPECT_NEAR(0.25 * 0.0 + 0.75 * (2.0 / 3.0), 0.5, 1e-15);
    EXPECT_NEAR(scan_with_unit_weights(vec3(0, 1, 2), 0.0, beta), 1.0, 1e-15);
    EXPECT_EQ(beta, 2.0);
    EXPECT_NEAR(scan_with_unit_weights(Vec::Constant(4, 1.5), 0.4, beta), 1.5, 1e-15);
    EXPECT_EQ(beta, 1.5);
}

TEST(BetaScan, CandidatesAndErrors) {
    const auto cand = beta_candidates(vec3(2, 0, 2), -1.0, 1.0);
    EXPECT_EQ(cand, (std::vector<double>{-1.0, 0.0, 1.0}));
    EXPECT_THROW(scan_beta({}, {}), ConfigError);
    EXPECT_THROW(scan_beta({0.0, 1.0}, {1.0}), DataError);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(scan_beta({0.0}, {nan}), NumericError);
    // leftmost maximizer, non-finite values skipped
    const BetaChoice b = scan_beta({0.0, 1.0, 2.0, 3.0}, {nan, 2.0, 2.0, 1.0});
    EXPECT_EQ(b.beta, 1.0);
}

TEST(BetaScan, MatchesDenseGrid) {
    Rng rng(52);
    for (int k = 0; k < 20; ++k) {
        const Dataset d = fixtures::random_dataset(3, 6, 2, 600 + k);
        const double c = 0.45 * uniform01(rng);
        const ObjectiveModel model(d, default_kernel_spec(d), kTuning, c);
        const auto fit = model.at(LogisticPolicy(fixtures::random_vector(2, rng, -10, 10), 10.0));
        const double lo = d.rewards().minCoeff(), hi = d.rewards().maxCoeff();
        const BetaChoice b = maximize_beta(fit, beta_candidates(d.rewards(), lo, hi));
        std::vector<double> grid;
        for (double x = lo; x <= hi; x += 1e-3) grid.push_back(x);
        const auto vals = fit.objectives(grid);
        const double dense = *std::max_element(vals.begin(), vals.end());
        EXPECT_GE(b.objective, dense - 1e-6) << "config " << k;
    }
}

TEST(ProjectedLbfgs, BoxConstrainedQuadratic) {
    Vec a(3);
    a << 2.0, -0.3, -5.0;
    const ValueAndGradient fg = [&](const Vec& x, Vec& g) {
        g = x - a;
        return 0.5 * g.squaredNorm();
    };
    const Vec lo = Vec::Constant(3, -1.0), hi = Vec::Constant(3, 1.0);
    const LbfgsResult r = minimize_box(fg, Vec::Zero(3), lo, hi, LbfgsOptions{});
    EXPECT_NEAR(r.x[0], 1.0, 1e-9);
    EXPECT_NEAR(r.x[1], -0.3, 1e-6);
    EXPECT_NEAR(r.x[2], -1.0, 1e-9);
    EXPECT_FALSE(r.line_search_failed);
}

TEST(MaximizeTheta, ConstantRewardsReturnStart) {
    const Dataset d = constant_reward_data(0.8);
    const ObjectiveModel model(d, default_kernel_spec(d), kTuning, 0.3);
    Vec start(2);
    start << 0.5, -0.2;
    const ThetaStep s = maximize_theta(model, 0.8, start, OptimizerConfig{});
    EXPECT_LE(s.iterations, 1);
    EXPECT_LE((s.theta - start).norm(), 1e-9);
    EXPECT_NEAR(s.objective, 0.8, 1e-9);
}

TEST(MaximizeTheta, NeverWorseThanStartAndFeasible) {
    const Dataset d = fixtures::random_dataset(4, 8, 2, 53);
    const ObjectiveModel model(d, default_kernel_spec(d), kTuning, 0.2);
    Rng rng(54);
    OptimizerConfig cfg;
    for (int k = 0; k < 4; ++k) {
        const Vec start = fixtures::random_vector(2, rng, -10, 10);
        const ThetaStep s = maximize_theta(model, 0.0, start, cfg);
        EXPECT_GE(s.objective, s.start_objective - 1e-9);
        EXPECT_LE(s.theta.cwiseAbs().maxCoeff(), cfg.c0);
    }
    Vec outside(2);
    outside << 11.0, 0.0;
    EXPECT_THROW(maximize_theta(model, 0.0, outside, cfg), ConfigError);
}

TEST(BlockAscent, OneDimensionalToyMatchesExhaustiveGrid) {
    const Dataset d = fixtures::random_dataset(3, 6, 1, 55);
    const double c = 0.2;
    const ObjectiveModel model(d, default_kernel_spec(d), kTuning, c);
    const auto cand = beta_candidates(d.rewards(), d.rewards().minCoeff(), d.rewards().maxCoeff());
    double grid_best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 20000; ++i) {
        Vec th(1);
        th << -10.0 + 1e-3 * i;
        grid_best = std::max(grid_best, maximize_beta(model.at(LogisticPolicy(th, 10.0)), cand).objective);
    }
    OptimizerConfig cfg;
    cfg.seed = 3;
    cfg.theta_init_scale = 1.0;
    const TrainResult r = block_coordinate_ascent(model, cfg);
    EXPECT_NEAR(r.objective, grid_best, 1e-2);
}

TEST(BlockAscent, AnalyticAndFiniteDifferenceRunsAgree) {
    const Dataset d = fixtures::random_dataset(4, 8, 2, 56);
    const ObjectiveModel model(d, default_kernel_spec(d), kTuning, 0.3);
    OptimizerConfig cfg;
    cfg.seed = 4;
    cfg.n_restarts = 3;
    const TrainResult analytic = block_coordinate_ascent(model, cfg);
    cfg.use_analytic_gradients = false;
    const TrainResult fd = block_coordinate_ascent(model, cfg);
    EXPECT_NEAR(analytic.objective, fd.objective, 1e-4);
}

TEST(BlockAscent, MonotoneTraceAndFeasibleIterates) {
    const Dataset d = fixtures::random_dataset(5, 8, 2, 57);
    const ObjectiveModel model(d, default_kernel_spec(d), kTuning, 0.4);
    OptimizerConfig cfg;
    cfg.seed = 5;
    cfg.n_restarts = 4;
    cfg.theta_init_scale = 1.0;
    const TrainResult r = block_coordinate_ascent(model, cfg);
    ASSERT_FALSE(r.trace.empty());
    for (std::size_t k = 1; k < r.trace.size(); ++k)
        if (r.trace[k].restart == r.trace[k - 1].restart) {
            EXPECT_GE(r.trace[k].objective, r.trace[k - 1].objective - 1e-9);
        }
    for (const auto& t : r.trace) EXPECT_LE(t.theta_norm, std::sqrt(2.0) * cfg.c0 + 1e-12);
    for (const auto& s : r.restarts) {
        ASSERT_TRUE(s.ok);
        EXPECT_LE(s.theta.cwiseAbs().maxCoeff(), cfg.c0);
        EXPECT_LE(s.objective, r.objective);
    }
    EXPECT_EQ(r.restarts[static_cast<std::size_t>(r.restart_index)].objective, r.objective);
}

TEST(BlockAscent, ConstantRewardsConvergeImmediately) {
    const Dataset d = constant_reward_data(1.3);
    const ObjectiveModel model(d, default_kernel_spec(d), kTuning, 0.25);
    OptimizerConfig cfg;
    cfg.n_restarts = 1;
    const TrainResult r = block_coordinate_ascent(model, cfg);
    EXPECT_EQ(r.restarts.front().outer_iterations, 1);
    EXPECT_TRUE(r.restarts.front().converged);
    EXPECT_NEAR(r.objective, 1.3, 1e-9);
    EXPECT_EQ(r.beta_hat, 1.3);
}

TEST(BlockAscent, DeterministicAcrossRunsAndThreadCounts) {
    const Dataset d = fixtures::random_dataset(4, 8, 2, 58);
    const ObjectiveModel model(d, default_kernel_spec(d), kTuning, 0.1);
    OptimizerConfig cfg;
    cfg.seed = 6;
    cfg.n_restarts = 4;
    const TrainResult a = block_coordinate_ascent(model, cfg);
    const TrainResult b = block_coordinate_ascent(model, cfg);
    cfg.threads = 3;
    const TrainResult t = block_coordinate_ascent(model, cfg);
    for (const TrainResult* o : {&b, &t}) {
        EXPECT_EQ(a.theta_hat, o->theta_hat);
        EXPECT_EQ(a.beta_hat, o->beta_hat);
        EXPECT_EQ(a.objective, o->objective);
        EXPECT_EQ(a.restart_index, o->restart_index);
        ASSERT_EQ(a.trace.size(), o->trace.size());
        for (std::size_t k = 0; k < a.trace.size(); ++k) EXPECT_EQ(a.trace[k].objective, o->trace[k].objective);
    }
    cfg.seed = 7;
    EXPECT_NE(block_coordinate_ascent(model, cfg).restarts.front().theta_start, a.restarts.front().theta_start);
}

TEST(OptimizerConfig, Validation) {
    OptimizerConfig cfg;
    cfg.eps_tol = 0.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = OptimizerConfig{};
    cfg.n_restarts = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = OptimizerConfig{};
    cfg.beta_box = std::make_pair(1.0, 0.0);
    EXPECT_THROW(cfg.validate(), ConfigError);
}
