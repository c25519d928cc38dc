#pragma once

// JSON encodings of policies, finite MDPs and reports. Needs nlohmann_json.

#include "robustavg/mdp_sim.hpp"
#include "robustavg/oracle.hpp"
#include "robustavg/train.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <string>

namespace robustavg {

using json = nlohmann::ordered_json;

inline json to_json_array(const Vec& v) { return json(std::vector<double>(v.begin(), v.end())); }

inline json to_json_rows(const Mat& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(to_json_array(m.row(i).transpose()));
    return rows;
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError("invalid JSON in '" + path + "': " + e.what());
    }
}

inline void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
    if (!out) throw DataError("failed writing '" + path + "'");
}

namespace detail {

inline double json_number(const json& j, const std::string& where) {
    if (!j.is_number()) throw DataError("schema error: " + where + " must be a number");
    return j.get<double>();
}

inline Vec json_vector(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) throw DataError("schema error: " + where + " must be a nonempty array");
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i)
        v[static_cast<Eigen::Index>(i)] = json_number(j[i], where + "[" + std::to_string(i) + "]");
    return v;
}

inline Mat json_matrix(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) throw DataError("schema error: " + where + " must be a nonempty array of rows");
    Mat m;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const Vec row = json_vector(j[i], where + "[" + std::to_string(i) + "]");
        if (i == 0) m.resize(static_cast<Eigen::Index>(j.size()), row.size());
        if (row.size() != m.cols()) throw DataError("schema error: " + where + " has rows of different lengths");
        m.row(static_cast<Eigen::Index>(i)) = row.transpose();
    }
    return m;
}

} // namespace detail

/// {"theta": [...], "c0": number}
inline json policy_to_json(const LogisticPolicy& pol) {
    return json{{"theta", to_json_array(pol.theta())}, {"c0", pol.c0()}};
}

inline LogisticPolicy policy_from_json(const json& j) {
    if (!j.is_object() || !j.contains("theta") || !j.contains("c0"))
        throw DataError("schema error: policy needs 'theta' and 'c0'");
    const Vec theta = detail::json_vector(j.at("theta"), "theta");
    const double c0 = detail::json_number(j.at("c0"), "c0");
    try {
        return LogisticPolicy(theta, c0);
    } catch (const ConfigError& e) {
        throw DataError(std::string("invalid policy: ") + e.what());
    }
}

/**
 * {"R": [R(s)], "P": [[[P(s'|s,a) for s'] for a] for s]}, with optional
 * "policy": [[pi(a|s) for a] for s].
 */
inline FiniteMDP mdp_from_json(const json& j) {
    if (!j.is_object() || !j.contains("P") || !j.contains("R"))
        throw DataError("schema error: MDP needs 'P' and 'R'");
    const Vec R = detail::json_vector(j.at("R"), "R");
    const json& P = j.at("P");
    const auto S = static_cast<int>(R.size());
    if (!P.is_array() || static_cast<int>(P.size()) != S)
        throw DataError("schema error: P must have one entry per state");
    int A = -1;
    Mat flat;
    for (int s = 0; s < S; ++s) {
        const Mat block = detail::json_matrix(P[static_cast<std::size_t>(s)], "P[" + std::to_string(s) + "]");
        if (A < 0) {
            A = static_cast<int>(block.rows());
            flat.resize(static_cast<Eigen::Index>(S) * A, S);
        }
        if (block.rows() != A || block.cols() != S)
            throw DataError("schema error: P[" + std::to_string(s) + "] must be n_actions x n_states");
        flat.middleRows(static_cast<Eigen::Index>(s) * A, A) = block;
    }
    return FiniteMDP(S, A, std::move(flat), R);
}

inline json mdp_to_json(const FiniteMDP& m) {
    json P = json::array();
    for (int s = 0; s < m.n_states; ++s)
        P.push_back(to_json_rows(m.P.middleRows(static_cast<Eigen::Index>(s) * m.n_actions, m.n_actions)));
    return json{{"R", to_json_array(m.R)}, {"P", P}};
}

inline TabularPolicy tabular_policy_from_json(const json& j, const FiniteMDP& m) {
    const Mat p = detail::json_matrix(j, "policy");
    if (p.rows() != m.n_states || p.cols() != m.n_actions)
        throw DataError("schema error: policy must be n_states x n_actions");
    return TabularPolicy(p);
}

inline json to_json(const KernelSpec& k) {
    return json{{"bandwidth", k.bandwidth}, {"ref_state", to_json_array(k.ref_state)}, {"ref_action", k.ref_action}};
}

inline json to_json(const TuningParams& t) {
    return json{{"lambda1", t.lambda1}, {"mu1", t.mu1}, {"lambda2", t.lambda2}, {"mu2", t.mu2}};
}

inline json to_json(const TuningReport& r) {
    const TuningGrid& g = r.grid;
    json value = json::array(), ratio = json::array();
    for (std::size_t j = 0; j < g.value.size(); ++j)
        value.push_back({{"mu", g.value[j].mu}, {"lambda", g.value[j].lambda}, {"errors", r.value_errors[j]}});
    for (std::size_t j = 0; j < g.ratio.size(); ++j)
        ratio.push_back({{"mu", g.ratio[j].mu}, {"lambda", g.ratio[j].lambda}, {"errors", r.ratio_errors[j]}});
    json probes = json::array();
    for (const auto& th : g.probe_policies) probes.push_back(to_json_array(th));
    return json{{"selected", to_json(r.params)},
                {"value_index", r.value_index},
                {"ratio_index", r.ratio_index},
                {"folds", r.folds},
                {"probe_policies", probes},
                {"probe_betas", g.probe_betas},
                {"validation_mu", g.validation_mu},
                {"value_candidates", value},
                {"ratio_candidates", ratio}};
}

inline json to_json(const TrainResult& r) {
    json trace = json::array();
    for (const auto& t : r.trace)
        trace.push_back({{"restart", t.restart},
                         {"iteration", t.iteration},
                         {"beta", t.beta},
                         {"theta_norm", t.theta_norm},
                         {"objective", t.objective}});
    json restarts = json::array();
    for (std::size_t i = 0; i < r.restarts.size(); ++i) {
        const auto& s = r.restarts[i];
        json e{{"restart", i}, {"ok", s.ok}};
        if (!s.ok) {
            e["error"] = s.error;
        } else {
            e["theta_start"] = to_json_array(s.theta_start);
            e["theta"] = to_json_array(s.theta);
            e["beta"] = s.beta;
            e["objective"] = s.objective;
            e["outer_iterations"] = s.outer_iterations;
            e["converged"] = s.converged;
            e["line_search_warnings"] = s.line_search_warnings;
        }
        restarts.push_back(e);
    }
    return json{{"theta_hat", to_json_array(r.theta_hat)},
                {"beta_hat", r.beta_hat},
                {"objective", r.objective},
                {"restart_index", r.restart_index},
                {"restarts", restarts},
                {"trace", trace}};
}

inline json to_json(const EvalReport& r) {
    return json{{"t", r.t_values}, {"mean_avg_reward", r.mean_avg_reward}};
}

} // namespace robustavg
