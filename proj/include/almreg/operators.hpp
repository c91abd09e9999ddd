#pragma once

// Finite-dimensional linear operators K (and bounded L) with adjoints, dense
// SVD, and fractional powers of the Gram operator K*K.

#include "almreg/common.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace almreg {

struct SvdFactorization {
  Matrix U;     // rows x r, orthonormal columns
  Vector sigma; // r, non-increasing, >= 0
  Matrix V;     // cols x r, orthonormal columns

  Index rank_cutoff_count() const {
    if (sigma.size() == 0)
      return 0;
    const Scalar tol = sigma(0) * static_cast<Scalar>(std::max(U.rows(), V.rows())) *
                       std::numeric_limits<Scalar>::epsilon();
    Index r = 0;
    while (r < sigma.size() && sigma(r) > tol)
      ++r;
    return r;
  }

  Matrix reconstruct() const { return U * sigma.asDiagonal() * V.transpose(); }
};

class LinearOperator {
public:
  struct Dense {
    Matrix matrix;
  };
  /// Square diagonal operator; entries are used as given.
  struct Diagonal {
    Vector values;
  };
  /// "Same"-size discrete convolution (Ku)_i = sum_j kernel_j u_{i-j}, j in
  /// [-h, h], with zero padding outside [0, n).
  struct Convolution {
    Vector kernel; // odd length 2h+1, centre at index h
    Index size;
  };
  /// Matrix-free operator given by callbacks. Used for test fixtures.
  struct Custom {
    Index rows;
    Index cols;
    std::function<Vector(const Vector &)> apply;
    std::function<Vector(const Vector &)> adjoint;
  };
  using Kind = std::variant<Dense, Diagonal, Convolution, Custom>;

  static LinearOperator dense(Matrix m) {
    if (m.rows() < 1 || m.cols() < 1)
      throw std::invalid_argument("dense operator needs positive dimensions");
    return LinearOperator(Dense{std::move(m)});
  }
  static LinearOperator diagonal(Vector values) {
    if (values.size() < 1)
      throw std::invalid_argument("diagonal operator needs at least one entry");
    return LinearOperator(Diagonal{std::move(values)});
  }
  static LinearOperator identity(Index n) { return diagonal(Vector::Ones(n)); }
  static LinearOperator convolution(Vector kernel, Index size) {
    if (size < 1)
      throw std::invalid_argument("convolution size must be positive");
    if (kernel.size() % 2 != 1)
      throw std::invalid_argument("convolution kernel must have odd length");
    return LinearOperator(Convolution{std::move(kernel), size});
  }
  static LinearOperator custom(Index rows, Index cols,
                               std::function<Vector(const Vector &)> apply,
                               std::function<Vector(const Vector &)> adjoint) {
    if (rows < 1 || cols < 1)
      throw std::invalid_argument("custom operator needs positive dimensions");
    return LinearOperator(Custom{rows, cols, std::move(apply), std::move(adjoint)});
  }

  Index rows() const {
    return std::visit(
        [](const auto &k) -> Index {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, Dense>)
            return k.matrix.rows();
          else if constexpr (std::is_same_v<T, Diagonal>)
            return k.values.size();
          else if constexpr (std::is_same_v<T, Convolution>)
            return k.size;
          else
            return k.rows;
        },
        kind_);
  }

  Index cols() const {
    return std::visit(
        [](const auto &k) -> Index {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, Dense>)
            return k.matrix.cols();
          else if constexpr (std::is_same_v<T, Diagonal>)
            return k.values.size();
          else if constexpr (std::is_same_v<T, Convolution>)
            return k.size;
          else
            return k.cols;
        },
        kind_);
  }

  const Kind &kind() const { return kind_; }
  bool is_diagonal() const { return std::holds_alternative<Diagonal>(kind_); }

  Vector apply(const Vector &u) const {
    require_size(u, cols(), "LinearOperator::apply");
    return std::visit(
        [&](const auto &k) -> Vector {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, Dense>)
            return k.matrix * u;
          else if constexpr (std::is_same_v<T, Diagonal>)
            return k.values.cwiseProduct(u);
          else if constexpr (std::is_same_v<T, Convolution>)
            return convolve(k, u, false);
          else
            return k.apply(u);
        },
        kind_);
  }

  Vector adjoint_apply(const Vector &g) const {
    require_size(g, rows(), "LinearOperator::adjoint_apply");
    return std::visit(
        [&](const auto &k) -> Vector {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, Dense>)
            return k.matrix.transpose() * g;
          else if constexpr (std::is_same_v<T, Diagonal>)
            return k.values.cwiseProduct(g);
          else if constexpr (std::is_same_v<T, Convolution>)
            return convolve(k, g, true);
          else
            return k.adjoint(g);
        },
        kind_);
  }

  /// Dense materialisation, column by column for the implicit kinds.
  Matrix to_dense() const {
    if (const auto *d = std::get_if<Dense>(&kind_))
      return d->matrix;
    if (const auto *d = std::get_if<Diagonal>(&kind_))
      return d->values.asDiagonal();
    Matrix m(rows(), cols());
    Vector e = Vector::Zero(cols());
    for (Index j = 0; j < cols(); ++j) {
      e(j) = 1.0;
      m.col(j) = apply(e);
      e(j) = 0.0;
    }
    return m;
  }

private:
  explicit LinearOperator(Kind kind) : kind_(std::move(kind)) {}

  static Vector convolve(const Convolution &c, const Vector &x, bool adjoint) {
    const Index n = c.size;
    const Index h = (c.kernel.size() - 1) / 2;
    Vector out = Vector::Zero(n);
    for (Index i = 0; i < n; ++i) {
      Scalar acc = 0.0;
      for (Index j = -h; j <= h; ++j) {
        const Index src = adjoint ? i + j : i - j;
        if (src >= 0 && src < n)
          acc += c.kernel(j + h) * x(src);
      }
      out(i) = acc;
    }
    return out;
  }

  Kind kind_;
};

inline constexpr Index kMaxSvdSize = 2000;

inline SvdFactorization svd(const LinearOperator &op) {
  if (std::min(op.rows(), op.cols()) > kMaxSvdSize)
    throw std::length_error("svd: min(rows, cols) exceeds " +
                            std::to_string(kMaxSvdSize));
  SvdFactorization f;
  if (const auto *d = std::get_if<LinearOperator::Diagonal>(&op.kind())) {
    const Index n = d->values.size();
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
      return std::abs(d->values(a)) > std::abs(d->values(b));
    });
    f.U = Matrix::Zero(n, n);
    f.V = Matrix::Zero(n, n);
    f.sigma.resize(n);
    for (Index r = 0; r < n; ++r) {
      const Index i = order[static_cast<std::size_t>(r)];
      const Scalar s = d->values(i);
      f.sigma(r) = std::abs(s);
      f.V(i, r) = 1.0;
      f.U(i, r) = s < 0 ? -1.0 : 1.0;
    }
    return f;
  }
  Eigen::BDCSVD<Matrix> dec(op.to_dense(), Eigen::ComputeThinU | Eigen::ComputeThinV);
  f.U = dec.matrixU();
  f.sigma = dec.singularValues();
  f.V = dec.matrixV();
  return f;
}

inline Scalar spectral_norm(const SvdFactorization &f) {
  return f.sigma.size() ? f.sigma(0) : 0.0;
}

/// (K*K)^nu p = V diag(sigma^{2 nu}) V^T p. Singular values below the rank
/// cutoff count as zero, so nu = 0 projects onto the span of the retained V.
inline Vector fractional_gram_apply(const SvdFactorization &f, Scalar nu,
                                    const Vector &p) {
  if (!(nu >= 0.0 && nu <= 0.5))
    throw std::domain_error("fractional_gram_apply: nu must lie in [0, 1/2]");
  require_size(p, f.V.rows(), "fractional_gram_apply");
  const Index r = f.rank_cutoff_count();
  Vector coeffs = f.V.leftCols(r).transpose() * p;
  for (Index i = 0; i < r; ++i)
    coeffs(i) *= std::pow(f.sigma(i), 2.0 * nu);
  return f.V.leftCols(r) * coeffs;
}

struct OperatorSpec {
  /// sigma_i = i^{-decay}, i = 1..size
  struct DiagonalDecay {
    Index size;
    Scalar decay;
  };
  /// Gaussian blur of standard deviation `width` (in samples); width 0 is Id.
  struct GaussianConvolution {
    Index size;
    Scalar width;
  };
  /// i.i.d. N(0, 1/rows) entries.
  struct RandomDense {
    Index rows;
    Index cols;
    std::uint64_t seed;
  };
  std::variant<DiagonalDecay, GaussianConvolution, RandomDense> kind;
};

inline LinearOperator make_test_operator(const OperatorSpec &spec) {
  return std::visit(
      [](const auto &s) -> LinearOperator {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, OperatorSpec::DiagonalDecay>) {
          if (s.size < 1 || !(s.decay >= 0.0))
            throw std::invalid_argument("diagonal spec: size >= 1 and decay >= 0 required");
          Vector sigma(s.size);
          for (Index i = 0; i < s.size; ++i)
            sigma(i) = std::pow(static_cast<Scalar>(i + 1), -s.decay);
          return LinearOperator::diagonal(std::move(sigma));
        } else if constexpr (std::is_same_v<T, OperatorSpec::GaussianConvolution>) {
          if (s.size < 1 || !(s.width >= 0.0))
            throw std::invalid_argument("convolution spec: size >= 1 and width >= 0 required");
          if (s.width == 0.0)
            return LinearOperator::convolution(Vector::Ones(1), s.size);
          const Index h = static_cast<Index>(std::ceil(3.0 * s.width));
          Vector kernel(2 * h + 1);
          for (Index j = -h; j <= h; ++j)
            kernel(j + h) = std::exp(-0.5 * static_cast<Scalar>(j * j) / (s.width * s.width));
          kernel /= kernel.sum();
          return LinearOperator::convolution(std::move(kernel), s.size);
        } else {
          if (s.rows < 1 || s.cols < 1)
            throw std::invalid_argument("dense spec: rows and cols must be positive");
          Rng rng(s.seed);
          Matrix m = gaussian_matrix(s.rows, s.cols, rng) /
                     std::sqrt(static_cast<Scalar>(s.rows));
          return LinearOperator::dense(std::move(m));
        }
      },
      spec.kind);
}

} // namespace almreg
