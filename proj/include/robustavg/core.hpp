#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

/// Robust average-reward policy learning from batch MDP trajectories.
namespace robustavg {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (CSV, JSON, dimensions).
class DataError : public Error {
public:
    using Error::Error;
};

/// A precondition on a configuration value was violated.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A factorization or normalization failed numerically.
class NumericError : public Error {
public:
    using Error::Error;
};

/// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// 64-bit FNV-1a hash of a label.
constexpr std::uint64_t fnv1a(std::string_view label) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : label) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/**
 * Derives the seed of an independent random stream from a root seed, a
 * purpose label and an integer index.
 *
 * Derivation is pure 64-bit integer arithmetic:
 * `mix64(mix64(root ^ fnv1a(label)) + index)`, so the same (root, label,
 * index) triple yields the same stream seed on every platform.
 */
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view label,
                                    std::uint64_t index = 0) noexcept {
    return mix64(mix64(root ^ fnv1a(label)) + index);
}

inline Rng make_rng(std::uint64_t root, std::string_view label, std::uint64_t index = 0) {
    return Rng(derive_seed(root, label, index));
}

/// Uniform draw in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline void require(bool condition, const std::string& message) {
    if (!condition) throw ConfigError(message);
}

} // namespace robustavg
