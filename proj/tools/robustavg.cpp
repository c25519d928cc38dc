// Command-line front end: simulate, tune, train, evaluate, oracle-check.

#include "robustavg/json_io.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#ifndef ROBUSTAVG_GIT_DESCRIBE
#define ROBUSTAVG_GIT_DESCRIBE "unknown"
#endif

using namespace robustavg;

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

const std::vector<std::string> kCommands{"simulate", "tune", "train", "evaluate", "oracle-check"};

/// Lines `key = value`; blank lines and lines starting with # are skipped.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string{};
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    for (int no = 1; std::getline(in, line); ++no) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(no) + " is not of the form key=value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("config line " + std::to_string(no) + " has an empty key");
        out.emplace_back(key, trim(line.substr(eq + 1)));
    }
    return out;
}

/**
 * Moves the entries of --config FILE in front of the command-line options of
 * the subcommand as --key=value, so that CLI11 validates them and explicit
 * options win (last value is taken).
 */
std::vector<std::string> expand_config(std::vector<std::string> args) {
    std::string path;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + static_cast<long>(i));
            break;
        }
    }
    if (path.empty()) return args;
    auto cmd = std::find_if(args.begin() + 1, args.end(), [](const std::string& a) {
        return std::find(kCommands.begin(), kCommands.end(), a) != kCommands.end();
    });
    if (cmd == args.end()) throw ConfigError("--config needs a subcommand");
    std::vector<std::string> injected;
    for (const auto& [k, v] : read_config_file(path)) injected.push_back("--" + k + "=" + v);
    args.insert(cmd + 1, injected.begin(), injected.end());
    return args;
}

/// Final value of every option of a subcommand, keyed by its long name.
json resolved_config(const CLI::App& app) {
    json cfg = json::object();
    for (const CLI::Option* opt : app.get_options()) {
        const std::string name = opt->get_single_name();
        if (name == "help" || name == "config") continue;
        if (opt->count() > 0) {
            const auto& res = opt->results();
            if (opt->get_expected_max() == 0)  // flag
                cfg[name] = opt->as<bool>() ? "true" : "false";
            else if (opt->get_expected_max() > 1)
                cfg[name] = CLI::detail::join(res, ",");
            else
                cfg[name] = res.back();
        } else if (opt->get_expected_max() == 0) {
            cfg[name] = "false";
        } else {
            std::string def = opt->get_default_str();
            if (opt->get_expected_max() > 1 && def.size() >= 2 && def.front() == '[' && def.back() == ']')
                def = def.substr(1, def.size() - 2);  // CLI11 prints vector defaults as [a,b]
            cfg[name] = def;
        }
    }
    return cfg;
}

json report_header(const std::string& command, const CLI::App& sub) {
    return json{{"command", command}, {"version", ROBUSTAVG_GIT_DESCRIBE}, {"config", resolved_config(sub)}};
}

void emit(const json& j, const std::string& path) {
    if (path.empty() || path == "-")
        std::cout << j.dump(2) << '\n';
    else
        write_json_file(path, j);
}

InitDist parse_init(const std::string& s) {
    if (s == "normal") return InitDist::standard_normal;
    if (s == "t2" || s == "t") return InitDist::student_t;
    throw ConfigError("unknown initial distribution '" + s + "'");
}

struct SimulateArgs {
    int n = 25, t0 = 24;
    std::uint64_t seed = 0;
    std::string init = "normal";
    double df = 2.0, noise_sd = std::sqrt(0.5), state_bound = 10.0;
    std::string behavior, out, report;
};

struct DataArgs {
    std::string data;
    int p = 2, actions = 2;
};

struct TuneArgs {
    DataArgs data;
    double c = 0.5, c0 = 10.0;
    std::uint64_t seed = 0;
    int folds = 3, probes = 5;
    std::vector<double> value_mu{1e-3, 1e-2, 1e-1}, value_lambda{1e-4, 1e-3, 1e-2};
    std::vector<double> ratio_mu{1e-3, 1e-2, 1e-1}, ratio_lambda{1e-4, 1e-3, 1e-2};
    std::string out;
};

struct TrainArgs {
    TuneArgs tune;
    int restarts = 10, max_outer = 50, threads = 1, lbfgs_iters = 100;
    double eps_tol = 1e-4, theta_init_scale = 0.1;
    bool fd_gradients = false;
    std::vector<double> penalties;  // lambda1 mu1 lambda2 mu2
    std::string policy_out = "policy.json", report_out = "train_report.json";
};

struct EvaluateArgs {
    std::string policy, init = "normal", out;
    int episodes = 1000, t_min = 50, t_max = 100;
    double df = 2.0, noise_sd = std::sqrt(0.5), state_bound = 10.0;
    std::uint64_t seed = 0;
};

struct OracleArgs {
    std::string mdp, out;
    std::uint64_t seed = 0;
    int instances = 50, max_states = 8, max_actions = 3;
};

void add_data_options(CLI::App* sub, DataArgs& a) {
    sub->add_option("--data", a.data, "trajectory CSV")->required();
    sub->add_option("--p", a.p, "state dimension")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--actions", a.actions, "number of actions")->capture_default_str()->check(CLI::Range(2, 1000));
}

void add_tuning_options(CLI::App* sub, TuneArgs& a) {
    add_data_options(sub, a.data);
    sub->add_option("--c", a.c, "robustness level in [0, 1)")->capture_default_str();
    sub->add_option("--seed", a.seed, "root seed")->capture_default_str();
    sub->add_option("--c0", a.c0, "box bound on theta")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--folds", a.folds, "cross-validation folds")->capture_default_str();
    sub->add_option("--probes", a.probes, "probe policies")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--value-mu", a.value_mu, "mu1 grid (per sample)")->capture_default_str()->delimiter(',');
    sub->add_option("--value-lambda", a.value_lambda, "lambda1 grid (per sample)")->capture_default_str()->delimiter(',');
    sub->add_option("--ratio-mu", a.ratio_mu, "mu2 grid (per sample)")->capture_default_str()->delimiter(',');
    sub->add_option("--ratio-lambda", a.ratio_lambda, "lambda2 grid (per sample)")->capture_default_str()->delimiter(',');
}

void check_c(double c) {
    if (!(std::isfinite(c) && c >= 0.0 && c < 1.0)) throw ConfigError("--c must lie in [0, 1)");
}

TrainOptions train_options(const TuneArgs& a) {
    check_c(a.c);
    TrainOptions o;
    o.k_folds = a.folds;
    o.n_probe_policies = a.probes;
    o.value_mu = a.value_mu;
    o.value_lambda = a.value_lambda;
    o.ratio_mu = a.ratio_mu;
    o.ratio_lambda = a.ratio_lambda;
    o.seed = a.seed;
    o.optimizer.c0 = a.c0;
    for (const auto* g : {&o.value_mu, &o.value_lambda, &o.ratio_mu, &o.ratio_lambda})
        if (g->empty()) throw ConfigError("tuning grids must be nonempty");
    return o;
}

Dataset load(const DataArgs& a) { return load_dataset(a.data, a.p, a.actions); }

int run_simulate(const CLI::App& sub, const SimulateArgs& a) {
    SimConfig cfg;
    cfg.init = parse_init(a.init);
    cfg.df = a.df;
    cfg.noise_sd = a.noise_sd;
    cfg.n_episodes = a.n;
    cfg.horizon = a.t0;
    cfg.state_bound = a.state_bound;
    cfg.seed = derive_seed(a.seed, "simulate");
    cfg.validate();
    const Dataset d = a.behavior.empty() ? simulate_training_data(cfg, UniformPolicy{})
                                         : simulate_training_data(cfg, policy_from_json(read_json_file(a.behavior)));
    save_dataset(a.out, d);
    if (!a.report.empty()) {
        json rep = report_header("simulate", sub);
        rep["transitions"] = d.size();
        rep["reward_mean"] = d.rewards().mean();
        emit(rep, a.report);
    }
    return kOk;
}

int run_tune(const CLI::App& sub, const TuneArgs& a) {
    const TrainOptions o = train_options(a);
    const Dataset d = load(a.data);
    const KernelSpec spec = default_kernel_spec(d);
    const TuningReport r = select_tuning(d, training_grid(d, o), spec, a.c, derive_seed(o.seed, "tuning"));
    json rep = report_header("tune", sub);
    rep["kernel"] = to_json(spec);
    rep["tuning"] = to_json(r);
    emit(rep, a.out);
    return kOk;
}

int run_train(const CLI::App& sub, const TrainArgs& a) {
    TrainOptions o = train_options(a.tune);
    o.optimizer.n_restarts = a.restarts;
    o.optimizer.max_outer_iters = a.max_outer;
    o.optimizer.eps_tol = a.eps_tol;
    o.optimizer.theta_init_scale = a.theta_init_scale;
    o.optimizer.use_analytic_gradients = !a.fd_gradients;
    o.optimizer.threads = a.threads;
    o.optimizer.lbfgs.max_iters = a.lbfgs_iters;
    o.optimizer.validate();
    if (!a.penalties.empty()) {
        if (a.penalties.size() != 4) throw ConfigError("--penalties takes lambda1,mu1,lambda2,mu2");
        o.fixed_tuning = TuningParams{a.penalties[0], a.penalties[1], a.penalties[2], a.penalties[3]};
        o.fixed_tuning->validate();
    }
    const Dataset d = load(a.tune.data);
    const TrainOutcome out = train_robust_policy(d, a.tune.c, o);
    const LogisticPolicy pol(out.result.theta_hat, o.optimizer.c0);
    write_json_file(a.policy_out, policy_to_json(pol));

    json rep = report_header("train", sub);
    rep["kernel"] = to_json(out.spec);
    rep["penalties"] = to_json(out.tuning);
    if (out.tuning_report) rep["tuning"] = to_json(*out.tuning_report);
    rep["worst_case_value"] = out.worst_case_value;
    rep["result"] = to_json(out.result);
    emit(rep, a.report_out);
    return kOk;
}

int run_evaluate(const CLI::App& sub, const EvaluateArgs& a) {
    SimConfig cfg;
    cfg.init = parse_init(a.init);
    cfg.df = a.df;
    cfg.noise_sd = a.noise_sd;
    cfg.n_episodes = a.episodes;
    cfg.horizon = a.t_max;
    cfg.state_bound = a.state_bound;
    cfg.seed = derive_seed(a.seed, "evaluate");
    if (a.t_min < 1 || a.t_min > a.t_max) throw ConfigError("need 1 <= --t-min <= --t-max");
    cfg.validate();
    const LogisticPolicy pol = policy_from_json(read_json_file(a.policy));
    json rep = report_header("evaluate", sub);
    rep["policy"] = policy_to_json(pol);
    rep["report"] = to_json(evaluate_policy(cfg, pol, a.t_min, a.t_max));
    emit(rep, a.out);
    return kOk;
}

/// Duality gap, Bellman residual and eta - M over the c grid for one (MDP, policy).
json check_instance(const FiniteMDP& m, const TabularPolicy& pi, double& max_gap, double& max_residual,
                    double& max_eta_err) {
    const Vec d = stationary_distribution(m, pi);
    json per_c = json::array();
    for (int j = 0; j <= 9; ++j) {
        const double c = 0.1 * j;
        const DualSolution dual = dual_worst_case(d, m.R, c);
        const PrimalSolution primal = primal_worst_case(d, m.R, c);
        const RelativeValue rv = exact_relative_value(m, pi, dual.beta_star, c, 0, 0);
        const double gap = std::abs(primal.value - dual.value);
        const double eta_err = std::abs(rv.eta - exact_M(d, m.R, dual.beta_star, c));
        max_gap = std::max(max_gap, gap);
        max_residual = std::max(max_residual, rv.residual);
        max_eta_err = std::max(max_eta_err, eta_err);
        per_c.push_back({{"c", c},
                         {"dual", dual.value},
                         {"primal", primal.value},
                         {"beta_star", dual.beta_star},
                         {"abs_gap", gap},
                         {"bellman_residual", rv.residual}});
    }
    return per_c;
}

int run_oracle_check(const CLI::App& sub, const OracleArgs& a) {
    json rep = report_header("oracle-check", sub);
    double max_gap = 0.0, max_residual = 0.0, max_eta_err = 0.0;
    json instances = json::array();
    if (!a.mdp.empty()) {
        const json j = read_json_file(a.mdp);
        const FiniteMDP m = mdp_from_json(j);
        const TabularPolicy pi = j.contains("policy") ? tabular_policy_from_json(j.at("policy"), m)
                                                      : TabularPolicy::uniform(m.n_states, m.n_actions);
        instances.push_back({{"mdp", mdp_to_json(m)}, {"checks", check_instance(m, pi, max_gap, max_residual, max_eta_err)}});
    } else {
        if (a.instances < 1 || a.max_states < 2 || a.max_actions < 1)
            throw ConfigError("need --instances >= 1, --max-states >= 2, --max-actions >= 1");
        // the hand-checkable instance: uniform d on rewards {0, 1, 2}
        {
            Vec d = Vec::Constant(3, 1.0 / 3.0), R(3);
            R << 0, 1, 2;
            const DualSolution dual = dual_worst_case(d, R, 0.25);
            const double primal = primal_worst_case(d, R, 0.25).value;
            max_gap = std::max(max_gap, std::abs(primal - dual.value));
            rep["hand_instance"] = {{"c", 0.25}, {"dual", dual.value}, {"primal", primal}, {"beta_star", dual.beta_star}};
        }
        Rng rng = make_rng(derive_seed(a.seed, "oracle-check"), "instances");
        for (int k = 0; k < a.instances; ++k) {
            const int S = 2 + static_cast<int>(uniform01(rng) * (a.max_states - 1));
            const int A = 1 + static_cast<int>(uniform01(rng) * a.max_actions);
            const FiniteMDP m = random_ergodic_mdp(S, A, rng);
            const TabularPolicy pi = random_tabular_policy(S, A, rng);
            json per_c = check_instance(m, pi, max_gap, max_residual, max_eta_err);
            instances.push_back({{"n_states", S}, {"n_actions", A}, {"checks", per_c}});
        }
    }
    rep["max_abs_primal_minus_dual"] = max_gap;
    rep["max_bellman_residual"] = max_residual;
    rep["max_abs_eta_minus_M"] = max_eta_err;
    rep["instances"] = instances;
    emit(rep, a.out);
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Distributionally robust average-reward policy learning from batch trajectories"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.set_version_flag("--version", std::string(ROBUSTAVG_GIT_DESCRIBE));
    std::string config_path;  // handled before parsing, declared for --help
    auto add_config = [&](CLI::App* sub) { sub->add_option("--config", config_path, "key=value file of option defaults"); };

    SimulateArgs sim;
    CLI::App* simulate = app.add_subcommand("simulate", "simulate training trajectories (CSV)");
    simulate->add_option("--n", sim.n, "episodes")->capture_default_str()->check(CLI::PositiveNumber);
    simulate->add_option("--t0", sim.t0, "transitions per episode")->capture_default_str()->check(CLI::PositiveNumber);
    simulate->add_option("--seed", sim.seed, "root seed")->capture_default_str();
    simulate->add_option("--init", sim.init, "initial distribution: normal or t2")->capture_default_str();
    simulate->add_option("--df", sim.df, "degrees of freedom of the t start")->capture_default_str();
    simulate->add_option("--noise-sd", sim.noise_sd, "transition noise sd")->capture_default_str();
    simulate->add_option("--state-bound", sim.state_bound, "state clamp")->capture_default_str();
    simulate->add_option("--behavior", sim.behavior, "policy JSON (default uniform)");
    simulate->add_option("--out", sim.out, "output CSV")->required();
    simulate->add_option("--report", sim.report, "optional JSON summary");
    add_config(simulate);

    TuneArgs tune;
    CLI::App* tune_cmd = app.add_subcommand("tune", "cross-validate the nuisance penalties");
    add_tuning_options(tune_cmd, tune);
    tune_cmd->add_option("--out", tune.out, "report JSON (default stdout)");
    add_config(tune_cmd);

    TrainArgs train;
    CLI::App* train_cmd = app.add_subcommand("train", "learn a robust policy");
    add_tuning_options(train_cmd, train.tune);
    train_cmd->add_option("--restarts", train.restarts, "random restarts")->capture_default_str();
    train_cmd->add_option("--max-outer", train.max_outer, "outer iterations per restart")->capture_default_str();
    train_cmd->add_option("--eps-tol", train.eps_tol, "stopping tolerance")->capture_default_str();
    train_cmd->add_option("--theta-init-scale", train.theta_init_scale, "restart spread as a fraction of c0")
        ->capture_default_str();
    train_cmd->add_option("--lbfgs-iters", train.lbfgs_iters, "quasi-Newton iterations per theta step")
        ->capture_default_str();
    train_cmd->add_flag("--fd-gradients", train.fd_gradients, "finite-difference gradients");
    train_cmd->add_option("--threads", train.threads, "worker threads for restarts")->capture_default_str();
    train_cmd->add_option("--penalties", train.penalties, "fixed lambda1,mu1,lambda2,mu2 (skips tuning)")
        ->delimiter(',')
        ->expected(4);
    train_cmd->add_option("--policy-out", train.policy_out, "policy JSON")->capture_default_str();
    train_cmd->add_option("--report-out", train.report_out, "training report JSON")->capture_default_str();
    add_config(train_cmd);

    EvaluateArgs ev;
    CLI::App* eval_cmd = app.add_subcommand("evaluate", "average reward of a policy in the simulator");
    eval_cmd->add_option("--policy", ev.policy, "policy JSON")->required();
    eval_cmd->add_option("--episodes", ev.episodes, "test trajectories")->capture_default_str();
    eval_cmd->add_option("--t-min", ev.t_min, "shortest horizon")->capture_default_str();
    eval_cmd->add_option("--t-max", ev.t_max, "longest horizon")->capture_default_str();
    eval_cmd->add_option("--init", ev.init, "initial distribution: normal or t2")->capture_default_str();
    eval_cmd->add_option("--df", ev.df, "degrees of freedom of the t start")->capture_default_str();
    eval_cmd->add_option("--noise-sd", ev.noise_sd, "transition noise sd")->capture_default_str();
    eval_cmd->add_option("--state-bound", ev.state_bound, "state clamp")->capture_default_str();
    eval_cmd->add_option("--seed", ev.seed, "root seed")->capture_default_str();
    eval_cmd->add_option("--out", ev.out, "report JSON (default stdout)");
    add_config(eval_cmd);

    OracleArgs oc;
    CLI::App* oracle_cmd = app.add_subcommand("oracle-check", "duality and Bellman checks on finite MDPs");
    oracle_cmd->add_option("--mdp", oc.mdp, "MDP JSON {P, R[, policy]}");
    oracle_cmd->add_option("--seed", oc.seed, "root seed")->capture_default_str();
    oracle_cmd->add_option("--instances", oc.instances, "random instances")->capture_default_str();
    oracle_cmd->add_option("--max-states", oc.max_states, "largest state count")->capture_default_str();
    oracle_cmd->add_option("--max-actions", oc.max_actions, "largest action count")->capture_default_str();
    oracle_cmd->add_option("--out", oc.out, "report JSON (default stdout)");
    add_config(oracle_cmd);

    try {
        std::vector<std::string> args(argv, argv + argc);
        args = expand_config(std::move(args));
        args.erase(args.begin());
        std::reverse(args.begin(), args.end());  // CLI11 consumes arguments from the back
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsageError;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsageError;
    }

    try {
        if (simulate->parsed()) return run_simulate(*simulate, sim);
        if (tune_cmd->parsed()) return run_tune(*tune_cmd, tune);
        if (train_cmd->parsed()) return run_train(*train_cmd, train);
        if (eval_cmd->parsed()) return run_evaluate(*eval_cmd, ev);
        if (oracle_cmd->parsed()) return run_oracle_check(*oracle_cmd, oc);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
    return kUsageError;
}
