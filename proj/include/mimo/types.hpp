#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace mimo {

/// Row-major so that each row is one contiguous graph signal.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using DenseMatrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

using Rng = std::mt19937_64;

/// SplitMix64 finalizer. Used to fan a master seed out into independent
/// per-job seeds: derive_seed(s, i) = splitmix64(s + (i + 1) * 0x9E3779B97F4A7C15).
inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed + (stream + 1) * 0x9E3779B97F4A7C15ULL);
}

}  // namespace mimo
