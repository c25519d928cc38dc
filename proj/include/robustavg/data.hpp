#pragma once

#include "robustavg/core.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace robustavg {

/// One observed transition (S_t, A_t, R_t, S_{t+1}).
struct TransitionTuple {
    Vec s;
    int a = 0;
    double r = 0.0;
    Vec s_next;
};

/**
 * @brief Batch of n equal-length trajectories.
 *
 * Episode i holds states S_0..S_{t0} (the last one terminal), actions
 * A_0..A_{t0-1} and rewards R_0..R_{t0-1}. The flat transition index
 * h = i * t0 + t is the ordering used by every kernel matrix.
 *
 * The loader cannot check that the behavior policy was time-stationary;
 * that is an assumption on the caller's data.
 */
class Dataset {
public:
    Dataset() = default;

    /**
     * @param states (n * (t0 + 1)) x p, row i * (t0 + 1) + t is S_t of episode i
     * @param actions n * t0 entries in episode-major order
     * @param rewards n * t0 entries in episode-major order
     */
    Dataset(int n, int t0, Mat states, std::vector<int> actions, Vec rewards,
            int num_actions = 2)
        : n_(n), t0_(t0), num_actions_(num_actions), states_(std::move(states)),
          actions_(std::move(actions)), rewards_(std::move(rewards)) {
        if (n_ < 1) throw DataError("no episodes");
        if (t0_ < 1) throw DataError("episodes must contain at least one transition");
        if (num_actions_ < 1) throw DataError("action space is empty");
        if (states_.cols() < 1) throw DataError("state dimension must be positive");
        if (states_.rows() != static_cast<Eigen::Index>(n_) * (t0_ + 1))
            throw DataError("state array has the wrong number of rows");
        if (actions_.size() != static_cast<std::size_t>(size()) || rewards_.size() != size())
            throw DataError("action/reward arrays have the wrong length");
        if (!states_.allFinite() || !rewards_.allFinite())
            throw DataError("non-finite value in dataset");
        for (int a : actions_)
            if (a < 0 || a >= num_actions_)
                throw DataError("unknown action index " + std::to_string(a));
    }

    int n() const noexcept { return n_; }
    int t0() const noexcept { return t0_; }
    int p() const noexcept { return static_cast<int>(states_.cols()); }
    int num_actions() const noexcept { return num_actions_; }
    /// Total number of transitions N = n * t0.
    Eigen::Index size() const noexcept { return static_cast<Eigen::Index>(n_) * t0_; }

    const Mat& states() const noexcept { return states_; }
    const std::vector<int>& actions() const noexcept { return actions_; }
    const Vec& rewards() const noexcept { return rewards_; }

    auto state(int episode, int t) const { return states_.row(state_row(episode, t)); }

    /// S_h for flat transition index h.
    auto current_state(Eigen::Index h) const { return states_.row(state_row_of(h)); }
    /// S'_h for flat transition index h.
    auto next_state(Eigen::Index h) const { return states_.row(state_row_of(h) + 1); }
    int action(Eigen::Index h) const { return actions_[static_cast<std::size_t>(h)]; }
    double reward(Eigen::Index h) const { return rewards_[h]; }

    /// Sub-dataset made of the listed episodes, in the given order.
    Dataset select_episodes(const std::vector<int>& episodes) const {
        const int m = static_cast<int>(episodes.size());
        Mat s(static_cast<Eigen::Index>(m) * (t0_ + 1), p());
        std::vector<int> a;
        Vec r(static_cast<Eigen::Index>(m) * t0_);
        a.reserve(static_cast<std::size_t>(m) * t0_);
        for (int k = 0; k < m; ++k) {
            const int i = episodes[static_cast<std::size_t>(k)];
            if (i < 0 || i >= n_) throw DataError("episode index out of range");
            s.middleRows(static_cast<Eigen::Index>(k) * (t0_ + 1), t0_ + 1) =
                states_.middleRows(static_cast<Eigen::Index>(i) * (t0_ + 1), t0_ + 1);
            for (int t = 0; t < t0_; ++t) {
                a.push_back(actions_[static_cast<std::size_t>(i) * t0_ + t]);
                r[static_cast<Eigen::Index>(k) * t0_ + t] = rewards_[static_cast<Eigen::Index>(i) * t0_ + t];
            }
        }
        return Dataset(m, t0_, std::move(s), std::move(a), std::move(r), num_actions_);
    }

private:
    Eigen::Index state_row(int episode, int t) const {
        return static_cast<Eigen::Index>(episode) * (t0_ + 1) + t;
    }
    Eigen::Index state_row_of(Eigen::Index h) const {
        return (h / t0_) * (t0_ + 1) + h % t0_;
    }

    int n_ = 0;
    int t0_ = 0;
    int num_actions_ = 2;
    Mat states_;
    std::vector<int> actions_;
    Vec rewards_;
};

/// Robustness level and solver settings shared by the pipeline.
struct RobustConfig {
    double c = 0.0;
    double beta_lo = 0.0;
    double beta_hi = 0.0;
    double tol_solve = 1e-8;
    std::uint64_t seed = 0;

    void validate() const {
        require(std::isfinite(c) && c >= 0.0 && c < 1.0, "robustness level c must lie in [0, 1)");
        require(beta_lo <= beta_hi, "beta box is empty");
        require(tol_solve > 0.0, "tol_solve must be positive");
    }
};

/// Transitions in flat order h = i * t0 + t.
inline std::vector<TransitionTuple> flatten_transitions(const Dataset& d) {
    std::vector<TransitionTuple> out;
    out.reserve(static_cast<std::size_t>(d.size()));
    for (Eigen::Index h = 0; h < d.size(); ++h)
        out.push_back({d.current_state(h).transpose(), d.action(h), d.reward(h),
                       d.next_state(h).transpose()});
    return out;
}

/// Smallest and largest observed reward; the default beta box.
inline std::pair<double, double> reward_bounds(const Dataset& d) {
    return {d.rewards().minCoeff(), d.rewards().maxCoeff()};
}

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

inline double parse_real(std::string_view field, std::size_t line_no) {
    double value = 0.0;
    const auto* first = field.data();
    const auto* last = field.data() + field.size();
    if (!field.empty() && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last || field.empty())
        throw DataError("malformed number '" + std::string(field) + "' on line " +
                        std::to_string(line_no));
    if (!std::isfinite(value))
        throw DataError("non-finite value on line " + std::to_string(line_no));
    return value;
}

inline long parse_int(std::string_view field, std::size_t line_no) {
    long value = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size() || field.empty())
        throw DataError("malformed integer '" + std::string(field) + "' on line " +
                        std::to_string(line_no));
    return value;
}

/// Shortest-safe decimal form with 17 significant digits.
inline std::string format_real(double x) {
    std::array<char, 40> buf{};
    const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x,
                                         std::chars_format::general, 17);
    if (ec != std::errc()) throw DataError("cannot format number");
    return std::string(buf.data(), ptr);
}

} // namespace detail

/**
 * Reads the trajectory CSV `episode,t,s1,...,sp,a,r`.
 *
 * Rows are grouped by episode and ordered by consecutive t; each episode ends
 * with a terminal row whose `a` and `r` fields are empty.
 */
inline Dataset read_dataset(std::istream& in, int p, int num_actions = 2) {
    require(p >= 1, "state dimension must be positive");
    std::string line;
    std::size_t line_no = 0;

    auto next_line = [&]() -> bool {
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) return true;
        }
        return false;
    };

    if (!next_line()) throw DataError("no episodes");
    {
        std::string expected = "episode,t";
        for (int j = 1; j <= p; ++j) expected += ",s" + std::to_string(j);
        expected += ",a,r";
        if (line != expected)
            throw DataError("unexpected header '" + line + "', expected '" + expected + "'");
    }

    const std::size_t n_fields = static_cast<std::size_t>(p) + 4;
    std::vector<double> states;
    std::vector<int> actions;
    std::vector<double> rewards;
    int n = 0;
    int t0 = -1;
    bool open = false;     // an episode has started and has no terminal row yet
    long episode_id = 0;
    long last_t = 0;
    int steps = 0;

    while (next_line()) {
        const auto fields = detail::split_csv(line);
        if (fields.size() != n_fields)
            throw DataError("malformed row on line " + std::to_string(line_no) + ": expected " +
                            std::to_string(n_fields) + " fields");
        const long ep = detail::parse_int(fields[0], line_no);
        const long t = detail::parse_int(fields[1], line_no);
        if (open) {
            if (ep != episode_id || t != last_t + 1)
                throw DataError("episode " + std::to_string(episode_id) +
                                " ends without a terminal row or is out of order (line " +
                                std::to_string(line_no) + ")");
        } else {
            if (n > 0 && ep == episode_id)
                throw DataError("episode " + std::to_string(ep) + " continues after its terminal row");
            open = true;
            episode_id = ep;
            steps = 0;
        }
        last_t = t;
        for (int j = 0; j < p; ++j)
            states.push_back(detail::parse_real(fields[2 + static_cast<std::size_t>(j)], line_no));

        const auto a_field = fields[n_fields - 2];
        const auto r_field = fields[n_fields - 1];
        if (a_field.empty() != r_field.empty())
            throw DataError("action and reward must both be present or both empty (line " +
                            std::to_string(line_no) + ")");
        if (a_field.empty()) {
            if (steps == 0)
                throw DataError("episode " + std::to_string(ep) + " has no transitions");
            if (t0 < 0) t0 = steps;
            if (steps != t0)
                throw DataError("ragged episodes: episode " + std::to_string(ep) + " has " +
                                std::to_string(steps) + " transitions, expected " +
                                std::to_string(t0));
            open = false;
            ++n;
        } else {
            const long a = detail::parse_int(a_field, line_no);
            if (a < 0 || a >= num_actions)
                throw DataError("unknown action index " + std::to_string(a) + " on line " +
                                std::to_string(line_no));
            actions.push_back(static_cast<int>(a));
            rewards.push_back(detail::parse_real(r_field, line_no));
            ++steps;
        }
    }
    if (open) throw DataError("episode " + std::to_string(episode_id) + " has no terminal row");
    if (n == 0) throw DataError("no episodes");

    Mat s(static_cast<Eigen::Index>(states.size()) / p, p);
    for (Eigen::Index i = 0; i < s.rows(); ++i)
        for (int j = 0; j < p; ++j) s(i, j) = states[static_cast<std::size_t>(i * p + j)];
    Vec r = Eigen::Map<const Vec>(rewards.data(), static_cast<Eigen::Index>(rewards.size()));
    return Dataset(n, t0, std::move(s), std::move(actions), std::move(r), num_actions);
}

inline Dataset load_dataset(const std::string& path, int p, int num_actions = 2) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file '" + path + "'");
    return read_dataset(in, p, num_actions);
}

/// Writes the CSV read by read_dataset; reals use 17 significant digits.
inline void write_dataset(std::ostream& out, const Dataset& d) {
    out << "episode,t";
    for (int j = 1; j <= d.p(); ++j) out << ",s" << j;
    out << ",a,r\n";
    for (int i = 0; i < d.n(); ++i) {
        for (int t = 0; t <= d.t0(); ++t) {
            out << i << ',' << t;
            const auto s = d.state(i, t);
            for (int j = 0; j < d.p(); ++j) out << ',' << detail::format_real(s[j]);
            if (t < d.t0()) {
                const Eigen::Index h = static_cast<Eigen::Index>(i) * d.t0() + t;
                out << ',' << d.action(h) << ',' << detail::format_real(d.reward(h)) << '\n';
            } else {
                out << ",,\n";
            }
        }
    }
}

inline void save_dataset(const std::string& path, const Dataset& d) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write dataset file '" + path + "'");
    write_dataset(out, d);
    if (!out) throw DataError("failed writing dataset file '" + path + "'");
}

} // namespace robustavg
