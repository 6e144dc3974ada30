#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Dense>

namespace sdml {

using Vec = Eigen::VectorXd;
/// Row-major so that each row (one embedding) is contiguous.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline bool all_finite(const Eigen::Ref<const Mat>& m) { return m.allFinite(); }

/// Length-normalizes every row in place; zero rows are left untouched.
inline void normalize_rows(Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (n > 0.0) m.row(i) /= n;
  }
}

/// SplitMix64 finalizer. Used to derive independent RNG substreams from (seed, index).
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace sdml
