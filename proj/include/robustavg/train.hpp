#pragma once

#include "robustavg/optimizer.hpp"
#include "robustavg/tuning.hpp"

#include <optional>

namespace robustavg {

/// Tuning grid values and optimizer settings of one training run.
struct TrainOptions {
    OptimizerConfig optimizer;
    /// Skips cross-validation when set (per-sample penalties).
    std::optional<TuningParams> fixed_tuning;
    int k_folds = 3;
    std::vector<double> value_mu{1e-3, 1e-2, 1e-1};
    std::vector<double> value_lambda{1e-4, 1e-3, 1e-2};
    std::vector<double> ratio_mu{1e-3, 1e-2, 1e-1};
    std::vector<double> ratio_lambda{1e-4, 1e-3, 1e-2};
    int n_probe_policies = 5;
    std::uint64_t seed = 0;
};

struct TrainOutcome {
    KernelSpec spec;
    TuningParams tuning;
    std::optional<TuningReport> tuning_report;
    TrainResult result;
    /// c R_min + (1 - c) objective: the estimated worst-case average reward.
    double worst_case_value = 0.0;
};

/// Probe policies and betas for cross-validation, drawn from the "tuning" stream of the seed.
inline TuningGrid training_grid(const Dataset& d, const TrainOptions& opt) {
    require(opt.n_probe_policies >= 1, "at least one probe policy is required");
    TuningGrid g = default_tuning_grid(d, derive_seed(opt.seed, "tuning"), opt.optimizer.c0, opt.k_folds,
                                       opt.n_probe_policies);
    g.value = penalty_grid(opt.value_mu, opt.value_lambda);
    g.ratio = penalty_grid(opt.ratio_mu, opt.ratio_lambda);
    return g;
}

/// Cross-validated penalties (unless fixed), then block coordinate ascent.
inline TrainOutcome train_robust_policy(const Dataset& d, double c, const TrainOptions& opt) {
    require(std::isfinite(c) && c >= 0.0 && c < 1.0, "robustness level c must lie in [0, 1)");
    opt.optimizer.validate();
    TrainOutcome out;
    out.spec = default_kernel_spec(d);
    if (opt.fixed_tuning) {
        opt.fixed_tuning->validate();
        out.tuning = *opt.fixed_tuning;
    } else {
        out.tuning_report = select_tuning(d, training_grid(d, opt), out.spec, c, derive_seed(opt.seed, "tuning"));
        out.tuning = out.tuning_report->params;
    }
    const ObjectiveModel model(d, out.spec, out.tuning, c);
    OptimizerConfig oc = opt.optimizer;
    oc.seed = derive_seed(opt.seed, "optimizer");
    out.result = block_coordinate_ascent(model, oc);
    out.worst_case_value = c * d.rewards().minCoeff() + (1.0 - c) * out.result.objective;
    return out;
}

} // namespace robustavg
