#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace almreg {

using Scalar = double;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

inline constexpr Scalar kInf = std::numeric_limits<Scalar>::infinity();

/// Thrown when vector or matrix sizes do not fit together.
class DimensionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an iterative or direct solver cannot deliver its result.
class SolverError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline void require_size(const Vector &v, Index expected, const char *what) {
  if (v.size() != expected)
    throw DimensionError(std::string(what) + ": expected length " +
                         std::to_string(expected) + ", got " +
                         std::to_string(v.size()));
}

/// Deterministic engine used everywhere a seed appears.
using Rng = std::mt19937_64;

inline Vector gaussian_vector(Index n, Rng &rng) {
  std::normal_distribution<Scalar> normal(0.0, 1.0);
  Vector v(n);
  for (Index i = 0; i < n; ++i)
    v(i) = normal(rng);
  return v;
}

inline Matrix gaussian_matrix(Index rows, Index cols, Rng &rng) {
  std::normal_distribution<Scalar> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i)
      m(i, j) = normal(rng);
  return m;
}

} // namespace almreg
