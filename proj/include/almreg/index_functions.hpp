#pragma once

// Power-law index functions Phi(s) = c s^p together with Phi^{-1}, the
// conjugate Psi = (Phi^{-1})^*, its inverse, and the parameter-choice and
// monotonicity helpers built on top of them.

#include "almreg/common.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace almreg {

class IndexFunction {
public:
  IndexFunction(Scalar c, Scalar p) : IndexFunction(c, p, 0.5) {}

  /// Bypasses the p <= 1/2 cap (still requires 0 < p < 1). Test fixtures only.
  static IndexFunction unchecked_for_testing(Scalar c, Scalar p) {
    return IndexFunction(c, p, 1.0 - 1e-12);
  }

  Scalar c() const { return c_; }
  Scalar p() const { return p_; }

private:
  IndexFunction(Scalar c, Scalar p, Scalar p_max) : c_(c), p_(p) {
    if (!(c > 0.0) || !std::isfinite(c))
      throw std::invalid_argument("index function: coefficient c must be positive");
    if (!(p > 0.0 && p <= p_max))
      throw std::invalid_argument("index function: exponent p must lie in (0, 1/2]");
  }
  Scalar c_;
  Scalar p_;
};

inline Scalar phi(const IndexFunction &f, Scalar s) {
  if (s < 0.0)
    throw std::domain_error("phi: argument must be non-negative");
  return f.c() * std::pow(s, f.p());
}

inline Scalar phi_inv(const IndexFunction &f, Scalar t) {
  if (t < 0.0)
    throw std::domain_error("phi_inv: argument must be non-negative");
  return std::pow(t / f.c(), 1.0 / f.p());
}

/// Psi(s) = k s^{1/(1-p)} with k = (1-p) p^{p/(1-p)} c^{1/(1-p)}; obtained from
/// the stationarity condition s = (Phi^{-1})'(t).
inline Scalar psi_coefficient(const IndexFunction &f) {
  const Scalar p = f.p();
  return (1.0 - p) * std::pow(p, p / (1.0 - p)) * std::pow(f.c(), 1.0 / (1.0 - p));
}

inline Scalar psi(const IndexFunction &f, Scalar s) {
  if (s < 0.0)
    throw std::domain_error("psi: argument must be non-negative");
  return psi_coefficient(f) * std::pow(s, 1.0 / (1.0 - f.p()));
}

inline Scalar psi_inv(const IndexFunction &f, Scalar t) {
  if (t < 0.0)
    throw std::domain_error("psi_inv: argument must be non-negative");
  return std::pow(t / psi_coefficient(f), 1.0 - f.p());
}

/// Thrown by psi_oracle when the maximiser sits on the upper grid boundary.
class GridTooSmall : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct GridRange {
  Scalar upper;              // grid covers [0, upper]
  Index points = 1'000'001;  // initial uniform grid
  int refinements = 40;      // zoom passes around the discrete maximiser
};

/// Brute-force conjugate max_t s t - Phi^{-1}(t) over a uniform grid on
/// [0, upper], followed by repeated grid zooms around the best cell.
inline Scalar psi_oracle(const IndexFunction &f, Scalar s, const GridRange &grid) {
  if (s < 0.0)
    throw std::domain_error("psi_oracle: argument must be non-negative");
  if (!(grid.upper > 0.0) || grid.points < 3)
    throw std::invalid_argument("psi_oracle: empty grid");
  const auto objective = [&](Scalar t) { return s * t - phi_inv(f, t); };

  Scalar lo = 0.0;
  Scalar hi = grid.upper;
  Index n = grid.points;
  Scalar best_t = 0.0;
  Scalar best = objective(0.0);
  for (int pass = 0; pass <= grid.refinements; ++pass) {
    const Scalar h = (hi - lo) / static_cast<Scalar>(n - 1);
    Index best_i = 0;
    Scalar pass_best = -kInf;
    for (Index i = 0; i < n; ++i) {
      const Scalar t = lo + h * static_cast<Scalar>(i);
      const Scalar v = objective(t);
      if (v > pass_best) {
        pass_best = v;
        best_i = i;
      }
    }
    if (pass == 0 && best_i == n - 1 && s > 0.0)
      throw GridTooSmall("psi_oracle: maximiser on the upper grid boundary");
    if (pass_best > best) {
      best = pass_best;
      best_t = lo + h * static_cast<Scalar>(best_i);
    }
    const Scalar centre = lo + h * static_cast<Scalar>(best_i);
    lo = std::max(0.0, centre - h);
    hi = centre + h;
    n = 201;
    if (hi - lo <= 1e-15 * std::max(1.0, best_t))
      break;
  }
  return std::max(best, 0.0);
}

/// Total time t* = 1 / Psi^{-1}(delta^2) for the a priori stopping rule.
inline Scalar apriori_total_time(const IndexFunction &f, Scalar delta) {
  if (!(delta > 0.0))
    throw std::domain_error("apriori_total_time: delta must be positive");
  return 1.0 / psi_inv(f, delta * delta);
}

/// True iff s -> Phi(s)^2 / s is non-increasing along `grid`.
inline bool check_phi_ratio_monotone(const IndexFunction &f, std::span<const Scalar> grid) {
  if (grid.size() < 2)
    throw std::invalid_argument("check_phi_ratio_monotone: grid too small");
  Scalar prev = kInf;
  for (const Scalar s : grid) {
    if (!(s > 0.0))
      throw std::domain_error("check_phi_ratio_monotone: grid must be positive");
    const Scalar v = phi(f, s) * phi(f, s) / s;
    if (v > prev + 1e-12 * std::abs(prev))
      return false;
    prev = v;
  }
  return true;
}

/// True iff t -> t^2 Psi(2/t) is non-decreasing along `grid`.
inline bool check_psi_growth_monotone(const IndexFunction &f, std::span<const Scalar> grid) {
  if (grid.size() < 2)
    throw std::invalid_argument("check_psi_growth_monotone: grid too small");
  Scalar prev = -kInf;
  for (const Scalar t : grid) {
    if (!(t > 0.0))
      throw std::domain_error("check_psi_growth_monotone: grid must be positive");
    const Scalar v = t * t * psi(f, 2.0 / t);
    if (v < prev - 1e-12 * std::abs(prev))
      return false;
    prev = v;
  }
  return true;
}

/// n points, geometrically spaced on [lo, hi].
inline std::vector<Scalar> log_grid(Scalar lo, Scalar hi, std::size_t n) {
  if (!(lo > 0.0 && hi > lo) || n < 2)
    throw std::invalid_argument("log_grid: need 0 < lo < hi and n >= 2");
  std::vector<Scalar> g(n);
  const Scalar step = std::log(hi / lo) / static_cast<Scalar>(n - 1);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = lo * std::exp(step * static_cast<Scalar>(i));
  g.back() = hi;
  return g;
}

} // namespace almreg
