#pragma once

// Convex regularisers J: values, Fenchel conjugates, subgradients, Bregman
// distances and proximal maps.
//
//   Quadratic(L):      J(u) = 1/2 |Lu|^2          (L = Id when no matrix given)
//   PowerSparsity(q):  J(u) = sum_i |u_i|^q,      1 <= q < 2

#include "almreg/common.hpp"

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <variant>

namespace almreg {

class Regularizer {
public:
  struct Quadratic {
    // Shared so that copies of a Regularizer stay cheap.
    std::shared_ptr<const Matrix> L;   // null means identity
    std::shared_ptr<const Matrix> LtL; // null means identity
    std::shared_ptr<const Eigen::SelfAdjointEigenSolver<Matrix>> gram_eigen;
  };
  struct PowerSparsity {
    Scalar q;
  };

  static Regularizer quadratic_identity() { return Regularizer(Quadratic{}); }

  static Regularizer quadratic(Matrix L) {
    if (L.rows() < 1 || L.cols() < 1)
      throw std::invalid_argument("quadratic regularizer needs a non-empty L");
    auto Lp = std::make_shared<const Matrix>(std::move(L));
    auto LtL = std::make_shared<const Matrix>(Lp->transpose() * *Lp);
    auto eig = std::make_shared<const Eigen::SelfAdjointEigenSolver<Matrix>>(*LtL);
    return Regularizer(Quadratic{std::move(Lp), std::move(LtL), std::move(eig)});
  }

  static Regularizer power_sparsity(Scalar q) {
    if (!(q >= 1.0 && q < 2.0))
      throw std::invalid_argument("power sparsity exponent q must lie in [1, 2)");
    return Regularizer(PowerSparsity{q});
  }

  bool is_quadratic() const { return std::holds_alternative<Quadratic>(kind_); }
  bool is_sparsity() const { return std::holds_alternative<PowerSparsity>(kind_); }
  const Quadratic &as_quadratic() const { return std::get<Quadratic>(kind_); }
  Scalar q() const { return std::get<PowerSparsity>(kind_).q; }
  bool has_identity_L() const { return is_quadratic() && !as_quadratic().L; }

  /// L^T L u, or u for L = Id.
  Vector gram_apply(const Vector &u) const {
    const auto &quad = as_quadratic();
    if (!quad.LtL)
      return u;
    require_size(u, quad.LtL->cols(), "Regularizer::gram_apply");
    return *quad.LtL * u;
  }

  /// L^T L as a dense matrix of order n.
  Matrix gram_matrix(Index n) const {
    const auto &quad = as_quadratic();
    if (!quad.LtL)
      return Matrix::Identity(n, n);
    if (quad.LtL->rows() != n)
      throw DimensionError("Regularizer::gram_matrix: L has " +
                           std::to_string(quad.LtL->cols()) + " columns, expected " +
                           std::to_string(n));
    return *quad.LtL;
  }

  const std::variant<Quadratic, PowerSparsity> &kind() const { return kind_; }

private:
  explicit Regularizer(std::variant<Quadratic, PowerSparsity> k) : kind_(std::move(k)) {}
  std::variant<Quadratic, PowerSparsity> kind_;
};

struct Subgradient {
  Vector xi;
  Vector at;
};

inline Scalar eval_J(const Regularizer &reg, const Vector &u) {
  if (reg.is_quadratic()) {
    const auto &quad = reg.as_quadratic();
    if (!quad.L)
      return 0.5 * u.squaredNorm();
    require_size(u, quad.L->cols(), "eval_J");
    return 0.5 * (*quad.L * u).squaredNorm();
  }
  const Scalar q = reg.q();
  if (q == 1.0)
    return u.lpNorm<1>();
  return u.array().abs().pow(q).sum();
}

/// J*(xi) = sup_u <xi, u> - J(u). For q = 1 the conjugate is the indicator of
/// the unit max-norm ball; `feasibility_tol` widens that ball so that dual
/// iterates produced by inexact inner solves are not rejected by roundoff.
inline Scalar eval_conjugate(const Regularizer &reg, const Vector &xi,
                             Scalar feasibility_tol = 0.0) {
  if (reg.is_quadratic()) {
    const auto &quad = reg.as_quadratic();
    if (!quad.L)
      return 0.5 * xi.squaredNorm();
    require_size(xi, quad.LtL->rows(), "eval_conjugate");
    const auto &eig = *quad.gram_eigen;
    const Vector coeffs = eig.eigenvectors().transpose() * xi;
    const Vector &lambda = eig.eigenvalues();
    const Scalar cutoff = lambda.cwiseAbs().maxCoeff() *
                          static_cast<Scalar>(lambda.size()) *
                          std::numeric_limits<Scalar>::epsilon();
    Scalar value = 0.0;
    Scalar null_part = 0.0;
    for (Index i = 0; i < coeffs.size(); ++i) {
      if (lambda(i) > cutoff)
        value += coeffs(i) * coeffs(i) / lambda(i);
      else
        null_part += coeffs(i) * coeffs(i);
    }
    if (std::sqrt(null_part) > 1e-8 * xi.norm())
      return kInf;
    return 0.5 * value;
  }
  const Scalar q = reg.q();
  if (q == 1.0)
    return xi.size() == 0 || xi.lpNorm<Eigen::Infinity>() <= 1.0 + feasibility_tol ? 0.0 : kInf;
  const Scalar r = q / (q - 1.0);
  return (q - 1.0) * (xi.array().abs() / q).pow(r).sum();
}

/// A canonical element of dJ(u); for q = 1 the zero coordinates get 0.
inline Subgradient subgradient(const Regularizer &reg, const Vector &u) {
  if (reg.is_quadratic())
    return {reg.gram_apply(u), u};
  const Scalar q = reg.q();
  Vector xi(u.size());
  for (Index i = 0; i < u.size(); ++i) {
    const Scalar s = (u(i) > 0.0) - (u(i) < 0.0);
    xi(i) = q == 1.0 ? s : q * std::pow(std::abs(u(i)), q - 1.0) * s;
  }
  return {std::move(xi), u};
}

/// D_J^xi(v, u) = J(v) - J(u) - <xi, v - u> for xi in dJ(u).
inline Scalar bregman(const Regularizer &reg, const Vector &v, const Vector &u,
                      const Vector &xi) {
  if (v.size() != u.size() || xi.size() != u.size())
    throw DimensionError("bregman: v, u and xi must have equal length");
  Scalar d = 0.0;
  Scalar scale = 1.0;
  const Vector diff = v - u;
  if (reg.is_quadratic()) {
    // Expanded form 1/2|L(v-u)|^2 + <L^T L u - xi, v - u> avoids cancellation.
    const auto &quad = reg.as_quadratic();
    const Scalar quad_part =
        quad.L ? 0.5 * (*quad.L * diff).squaredNorm() : 0.5 * diff.squaredNorm();
    const Scalar lin_part = (reg.gram_apply(u) - xi).dot(diff);
    d = quad_part + lin_part;
    scale = std::max(1.0, quad_part + std::abs(lin_part));
  } else {
    const Scalar q = reg.q();
    for (Index i = 0; i < u.size(); ++i) {
      const Scalar expected = u(i) == 0.0 ? 0.0
                                          : q * std::pow(std::abs(u(i)), q - 1.0) * (u(i) > 0 ? 1.0 : -1.0);
      const bool member = (q == 1.0 && u(i) == 0.0) ? std::abs(xi(i)) <= 1.0 + 1e-8
                                                     : std::abs(xi(i) - expected) <= 1e-8 * (1.0 + std::abs(expected));
      if (!member)
        throw std::invalid_argument("bregman: xi is not a subgradient at u (component " +
                                    std::to_string(i) + ")");
      const Scalar jv = std::pow(std::abs(v(i)), q);
      const Scalar ju = std::pow(std::abs(u(i)), q);
      d += jv - ju - xi(i) * diff(i);
      scale += jv + ju + std::abs(xi(i) * diff(i));
    }
  }
  if (d < -1e-10 * scale)
    throw std::invalid_argument("bregman: negative distance " + std::to_string(d) +
                                ", xi is not a subgradient at u");
  return std::max(d, 0.0);
}

inline Scalar bregman(const Regularizer &reg, const Vector &v, const Subgradient &at_u) {
  return bregman(reg, v, at_u.at, at_u.xi);
}

/// Unique minimiser of 1/2 (x - y)^2 + lambda |x|^q for 1 < q < 2: the root
/// of x + lambda q |x|^{q-1} sign(x) = y in [0, |y|], by safeguarded Newton.
inline Scalar scalar_power_prox(Scalar q, Scalar lambda, Scalar y) {
  if (!(q > 1.0 && q < 2.0))
    throw std::invalid_argument("scalar_power_prox: q must lie in (1, 2)");
  if (!(lambda > 0.0))
    throw std::invalid_argument("scalar_power_prox: lambda must be positive");
  if (y == 0.0)
    return 0.0;
  const Scalar a = std::abs(y);
  const auto h = [&](Scalar x) { return x + lambda * q * std::pow(x, q - 1.0) - a; };
  const auto dh = [&](Scalar x) {
    return 1.0 + lambda * q * (q - 1.0) * std::pow(x, q - 2.0);
  };
  const Scalar tol = 1e-12 * std::max(1.0, a);
  Scalar lo = 0.0;
  Scalar hi = a;
  Scalar x = a;
  for (int it = 0; it < 200; ++it) {
    const Scalar hx = h(x);
    if (hx == 0.0)
      return std::copysign(x, y);
    if (hx > 0.0)
      hi = x;
    else
      lo = x;
    Scalar next = x > 0.0 ? x - hx / dh(x) : 0.5 * (lo + hi);
    if (!(next > lo && next < hi))
      next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= tol || hi - lo <= tol)
      return std::copysign(next, y);
    x = next;
  }
  throw SolverError("scalar_power_prox: no convergence after 200 iterations");
}

/// argmin_x 1/2 |x - y|^2 + lambda J(x).
inline Vector prox(const Regularizer &reg, Scalar lambda, const Vector &y) {
  if (!(lambda > 0.0))
    throw std::invalid_argument("prox: lambda must be positive");
  if (reg.is_quadratic()) {
    const auto &quad = reg.as_quadratic();
    if (!quad.L)
      return y / (1.0 + lambda);
    require_size(y, quad.LtL->rows(), "prox");
    Matrix system = lambda * *quad.LtL;
    system.diagonal().array() += 1.0;
    Eigen::LLT<Matrix> llt(system);
    if (llt.info() != Eigen::Success)
      throw SolverError("prox: factorisation of I + lambda L^T L failed");
    return llt.solve(y);
  }
  const Scalar q = reg.q();
  Vector x(y.size());
  if (q == 1.0) {
    for (Index i = 0; i < y.size(); ++i) {
      const Scalar mag = std::abs(y(i)) - lambda;
      // Points on the threshold map to exactly zero.
      x(i) = mag > 0.0 ? std::copysign(mag, y(i)) : 0.0;
    }
    return x;
  }
  for (Index i = 0; i < y.size(); ++i)
    x(i) = scalar_power_prox(q, lambda, y(i));
  return x;
}

} // namespace almreg
