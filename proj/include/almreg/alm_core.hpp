#pragma once

// Augmented Lagrangian (Bregman) iteration
//
//   u_k = argmin_u  tau_k/2 |Ku - g|^2 + J(u) - <p_{k-1}, Ku - g>
//   p_k = p_{k-1} + tau_k (g - K u_k),        p_0 = 0,
//
// with a priori, discrepancy and fixed-count stopping, plus run-time monitors
// for the inequalities the convergence analysis relies on.

#include "almreg/index_functions.hpp"
#include "almreg/operators.hpp"
#include "almreg/regularizers.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace almreg {

class TauSchedule {
public:
  enum class Kind { Constant, Explicit, Geometric };

  static TauSchedule constant(Scalar tau) {
    if (!(tau > 0.0) || !std::isfinite(tau))
      throw std::invalid_argument("tau schedule: constant tau must be positive");
    return TauSchedule(Kind::Constant, {tau}, 1.0);
  }

  /// Explicit step sizes; the last entry repeats once the list is exhausted.
  static TauSchedule explicit_list(std::vector<Scalar> taus) {
    if (taus.empty())
      throw std::invalid_argument("tau schedule: explicit list is empty");
    for (const Scalar t : taus)
      if (!(t > 0.0) || !std::isfinite(t))
        throw std::invalid_argument("tau schedule: all entries must be positive");
    return TauSchedule(Kind::Explicit, std::move(taus), 1.0);
  }

  /// tau_k = tau0 * ratio^{k-1}, ratio >= 1.
  static TauSchedule geometric(Scalar tau0, Scalar ratio) {
    if (!(tau0 > 0.0) || !(ratio >= 1.0) || !std::isfinite(ratio))
      throw std::invalid_argument("tau schedule: geometric needs tau0 > 0 and ratio >= 1");
    return TauSchedule(Kind::Geometric, {tau0}, ratio);
  }

  Kind kind() const { return kind_; }
  Scalar ratio() const { return ratio_; }
  const std::vector<Scalar> &values() const { return values_; }

  /// Step size of iteration k >= 1.
  Scalar tau(Index k) const {
    switch (kind_) {
    case Kind::Constant:
      return values_.front();
    case Kind::Explicit:
      return values_[static_cast<std::size_t>(
          std::min<Index>(k - 1, static_cast<Index>(values_.size()) - 1))];
    case Kind::Geometric:
      return values_.front() * std::pow(ratio_, static_cast<Scalar>(k - 1));
    }
    return values_.front();
  }

  /// sup_k tau_k < infinity.
  bool bounded() const { return kind_ != Kind::Geometric || ratio_ == 1.0; }

private:
  TauSchedule(Kind kind, std::vector<Scalar> values, Scalar ratio)
      : kind_(kind), values_(std::move(values)), ratio_(ratio) {}
  Kind kind_;
  std::vector<Scalar> values_;
  Scalar ratio_;
};

struct AlmState {
  Index k = 0;
  Vector u;
  Vector p;
  Scalar t = 0.0;
  Scalar residual = 0.0; // |K u_k - g_obs|
  Scalar J_value = 0.0;
  Index inner_iterations = 0;

  static AlmState initial(const LinearOperator &K, const Vector &g_obs) {
    require_size(g_obs, K.rows(), "AlmState::initial");
    AlmState s;
    s.u = Vector::Zero(K.cols());
    s.p = Vector::Zero(K.rows());
    s.residual = g_obs.norm();
    return s;
  }
};

class StoppingRule {
public:
  struct APriori {
    Scalar target_time;
  };
  struct Morozov {
    Scalar rho;
    Scalar delta;
  };
  struct FixedIterations {
    Index iterations;
  };

  static StoppingRule apriori(Scalar target_time) {
    if (!(target_time > 0.0))
      throw std::invalid_argument("a priori rule: target time must be positive");
    return StoppingRule(APriori{target_time});
  }
  static StoppingRule morozov(Scalar rho, Scalar delta) {
    if (!(rho > 1.0))
      throw std::invalid_argument("morozov requires rho > 1");
    if (!(delta > 0.0))
      throw std::invalid_argument("morozov requires delta > 0");
    return StoppingRule(Morozov{rho, delta});
  }
  static StoppingRule fixed(Index iterations) {
    if (iterations < 1)
      throw std::invalid_argument("fixed rule: at least one iteration required");
    return StoppingRule(FixedIterations{iterations});
  }

  const std::variant<APriori, Morozov, FixedIterations> &kind() const { return kind_; }
  bool is_morozov() const { return std::holds_alternative<Morozov>(kind_); }

  bool should_stop(const AlmState &s) const {
    return std::visit(
        [&](const auto &r) {
          using T = std::decay_t<decltype(r)>;
          if constexpr (std::is_same_v<T, APriori>)
            return s.t >= r.target_time;
          else if constexpr (std::is_same_v<T, Morozov>)
            return s.residual <= r.rho * r.delta;
          else
            return s.k >= r.iterations;
        },
        kind_);
  }

  std::string name() const {
    return std::visit(
        [](const auto &r) -> std::string {
          using T = std::decay_t<decltype(r)>;
          if constexpr (std::is_same_v<T, APriori>)
            return "apriori";
          else if constexpr (std::is_same_v<T, Morozov>)
            return "morozov";
          else
            return "fixed";
        },
        kind_);
  }

private:
  explicit StoppingRule(std::variant<APriori, Morozov, FixedIterations> k) : kind_(std::move(k)) {}
  std::variant<APriori, Morozov, FixedIterations> kind_;
};

struct InnerOptions {
  Scalar tol = 1e-10;
  Index max_iterations = 50'000;
};

/// Inner solver ran out of iterations; carries the tolerance it reached.
class InnerSolverError : public SolverError {
public:
  InnerSolverError(const std::string &what, Scalar achieved)
      : SolverError(what), achieved_(achieved) {}
  Scalar achieved() const { return achieved_; }

private:
  Scalar achieved_;
};

/// Solves the Tikhonov problem  min_u tau/2 |Ku - b|^2 + J(u).
///
/// Quadratic J: Cholesky of tau K^T K + L^T L, refactored when tau changes.
/// PowerSparsity: accelerated proximal gradient with gradient-based restart
/// on 1/2|Ku - b|^2 + J/tau, step 1/|K|^2, stopped once the gradient mapping
/// of the unscaled problem has norm <= tol.
class SubproblemSolver {
public:
  struct Result {
    Vector u;
    Index iterations = 0;
    Scalar achieved = 0.0;
  };

  SubproblemSolver(const LinearOperator &K, const Regularizer &reg, InnerOptions options = {})
      : reg_(reg), options_(options), Kd_(K.to_dense()) {
    KtK_ = Kd_.transpose() * Kd_;
    if (reg_.is_sparsity()) {
      const Scalar norm = spectral_norm(svd(K));
      if (!(norm > 0.0))
        throw SolverError("SubproblemSolver: operator is zero");
      lipschitz_ = norm * norm;
    } else {
      gram_ = reg_.gram_matrix(Kd_.cols());
    }
  }

  const Matrix &dense_operator() const { return Kd_; }

  Result solve(Scalar tau, const Vector &b, const Vector &warm_start) {
    require_size(b, Kd_.rows(), "SubproblemSolver::solve");
    require_size(warm_start, Kd_.cols(), "SubproblemSolver::solve");
    if (reg_.is_quadratic())
      return solve_quadratic(tau, b);
    return solve_sparse(tau, b, warm_start);
  }

private:
  Result solve_quadratic(Scalar tau, const Vector &b) {
    if (!cached_tau_ || *cached_tau_ != tau) {
      Matrix system = tau * KtK_ + gram_;
      llt_.compute(system);
      if (llt_.info() != Eigen::Success)
        throw SolverError("SubproblemSolver: tau K^T K + L^T L is singular");
      cached_tau_ = tau;
    }
    Result r;
    r.u = llt_.solve(tau * (Kd_.transpose() * b));
    r.iterations = 1;
    return r;
  }

  Result solve_sparse(Scalar tau, const Vector &b, const Vector &warm_start) {
    const Scalar step = 1.0 / lipschitz_;
    const Scalar lambda = step / tau;
    const Vector Ktb = Kd_.transpose() * b;
    Vector x = warm_start;
    Vector y = x;
    Vector x_new(x.size());
    Scalar theta = 1.0;
    Scalar mapping = kInf;
    for (Index it = 1; it <= options_.max_iterations; ++it) {
      const Vector grad = KtK_ * y - Ktb;
      x_new = prox(reg_, lambda, y - step * grad);
      mapping = tau * (y - x_new).norm() / step;
      if (mapping <= options_.tol)
        return {std::move(x_new), it, mapping};
      if ((y - x_new).dot(x_new - x) > 0.0) {
        theta = 1.0;
        y = x_new;
      } else {
        const Scalar theta_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
        y = x_new + ((theta - 1.0) / theta_new) * (x_new - x);
        theta = theta_new;
      }
      x.swap(x_new);
    }
    throw InnerSolverError("SubproblemSolver: proximal gradient did not reach tol " +
                               std::to_string(options_.tol) + " (achieved " +
                               std::to_string(mapping) + ")",
                           mapping);
  }

  Regularizer reg_;
  InnerOptions options_;
  Matrix Kd_;
  Matrix KtK_;
  Matrix gram_;
  Scalar lipschitz_ = 0.0;
  std::optional<Scalar> cached_tau_;
  Eigen::LLT<Matrix> llt_;
};

/// One outer step. The linear term completes the square, so u_{k+1} solves
/// the Tikhonov problem with shifted data b = g_obs + p_k / tau.
inline AlmState alm_step(SubproblemSolver &solver, const AlmState &state, Scalar tau,
                         const Vector &g_obs, const LinearOperator &K, const Regularizer &reg) {
  if (!(tau > 0.0))
    throw std::invalid_argument("alm_step: tau must be positive");
  require_size(g_obs, K.rows(), "alm_step");
  require_size(state.p, K.rows(), "alm_step (dual)");
  require_size(state.u, K.cols(), "alm_step (primal)");
  const Vector b = g_obs + state.p / tau;
  auto inner = solver.solve(tau, b, state.u);
  AlmState next;
  next.k = state.k + 1;
  next.u = std::move(inner.u);
  const Vector misfit = g_obs - K.apply(next.u);
  next.p = state.p + tau * misfit;
  next.t = state.t + tau;
  next.residual = misfit.norm();
  next.J_value = eval_J(reg, next.u);
  next.inner_iterations = inner.iterations;
  return next;
}

inline AlmState alm_step(const AlmState &state, Scalar tau, const Vector &g_obs,
                         const LinearOperator &K, const Regularizer &reg,
                         Scalar inner_tol = 1e-10) {
  SubproblemSolver solver(K, reg, InnerOptions{inner_tol});
  return alm_step(solver, state, tau, g_obs, K, reg);
}

/// argmin_u tau |Ku - g|^2 + |L(u - u_prev)|^2.
inline Vector iterated_tikhonov_step(const Vector &u_prev, Scalar tau, const Vector &g_obs,
                                     const LinearOperator &K, const Matrix &L) {
  require_size(u_prev, K.cols(), "iterated_tikhonov_step");
  require_size(g_obs, K.rows(), "iterated_tikhonov_step");
  if (L.cols() != K.cols())
    throw DimensionError("iterated_tikhonov_step: L must have as many columns as K");
  const Matrix Kd = K.to_dense();
  const Matrix LtL = L.transpose() * L;
  const Matrix system = tau * Kd.transpose() * Kd + LtL;
  Eigen::LLT<Matrix> llt(system);
  if (llt.info() != Eigen::Success)
    throw SolverError("iterated_tikhonov_step: K and L share a null direction");
  return llt.solve(tau * (Kd.transpose() * g_obs) + LtL * u_prev);
}

/// G(p, g) = J*(K* p) - <p, g>.
inline Scalar dual_objective(const Vector &p, const Vector &g, const LinearOperator &K,
                             const Regularizer &reg, Scalar feasibility_tol = 0.0) {
  require_size(g, K.rows(), "dual_objective");
  return eval_conjugate(reg, K.adjoint_apply(p), feasibility_tol) - p.dot(g);
}

/// Default slack in the q = 1 conjugate when it is evaluated at dual iterates.
inline constexpr Scalar kDualFeasibilityTol = 1e-9;

struct GulerSlack {
  Index n = 0;
  std::size_t sample = 0;
  Scalar slack = 0.0; // RHS - LHS
  Scalar rhs = 0.0;
};

/// Slack of
///   t_n |p_n - p_{n-1}|^2 / (2 tau_n^2)
///     <= G(p) - G(p_n) - |p - p_n|^2 / (2 t_n) + |p|^2 / (2 t_n)
/// for one sample p, with G(p) and G(p_n) precomputed.
inline GulerSlack guler_slack(const Vector &p, Scalar G_p, const Vector &p_n,
                              const Vector &p_prev, Scalar G_pn, Scalar t_n, Scalar tau_n) {
  GulerSlack s;
  const Scalar lhs = t_n * (p_n - p_prev).squaredNorm() / (2.0 * tau_n * tau_n);
  s.rhs = G_p - G_pn - (p - p_n).squaredNorm() / (2.0 * t_n) + p.squaredNorm() / (2.0 * t_n);
  s.slack = s.rhs - lhs;
  return s;
}

inline bool guler_slack_ok(const GulerSlack &s) { return s.slack >= -1e-8 * (1.0 + std::abs(s.rhs)); }

/// Largest descent of F(p) = 1/2|p - p_prev|^2 + tau (J*(K*p) - <p, g>) when
/// moving from p_k along the probe directions by eps; zero when p_k is optimal.
inline Scalar check_ppm_optimality(const Vector &p_k, const Vector &p_prev, Scalar tau,
                                   const Vector &g_obs, const LinearOperator &K,
                                   const Regularizer &reg, const std::vector<Vector> &probes,
                                   const std::vector<Scalar> &eps = {1e-3, 1e-4}) {
  const auto F = [&](const Vector &p) {
    return 0.5 * (p - p_prev).squaredNorm() +
           tau * dual_objective(p, g_obs, K, reg, kDualFeasibilityTol);
  };
  const Scalar base = F(p_k);
  Scalar violation = 0.0;
  for (const auto &d : probes) {
    require_size(d, K.rows(), "check_ppm_optimality probe");
    for (const Scalar e : eps) {
      if (e == 0.0)
        continue;
      const Scalar moved = F(p_k + e * d);
      if (std::isfinite(base))
        violation = std::max(violation, base - moved);
    }
  }
  return violation;
}

/// Deviation of K* p_k from the subdifferential of J at u_k.
inline Scalar check_kkt_subgradient(const AlmState &state, const LinearOperator &K,
                                    const Regularizer &reg) {
  const Vector xi = K.adjoint_apply(state.p);
  if (reg.is_quadratic())
    return (xi - reg.gram_apply(state.u)).norm() / (1.0 + state.u.norm());
  if (reg.q() == 1.0) {
    Scalar on_support = 0.0;
    for (Index i = 0; i < xi.size(); ++i)
      if (state.u(i) != 0.0)
        on_support = std::max(on_support,
                              std::abs(xi(i) - (state.u(i) > 0.0 ? 1.0 : -1.0)));
    return std::max(0.0, xi.lpNorm<Eigen::Infinity>() - 1.0) + on_support;
  }
  return (xi - subgradient(reg, state.u).xi).norm() / (1.0 + state.u.norm());
}

/// Upper bound on the stopping time under the discrepancy rule:
/// t_{n*} <= 2 / Psi^{-1}((rho^2 - 1) delta^2) + tau_{n*}.
inline Scalar morozov_growth_bound(const IndexFunction &f, Scalar rho, Scalar delta,
                                   Scalar tau_at_stop) {
  return 2.0 / psi_inv(f, (rho * rho - 1.0) * delta * delta) + tau_at_stop;
}

struct MonitorSet {
  bool guler = false;
  bool ppm = false;
  bool kkt = false;
  std::vector<Vector> guler_duals; // sample duals p with finite G(p, g_obs)
  std::vector<Vector> ppm_probes;  // unit-norm directions in H
};

struct Truth {
  Vector u;  // exact solution
  Vector xi; // subgradient of J at u used for the Bregman distance
};

struct IterateRecord {
  Index k = 0;
  Scalar tau = 0.0;
  Scalar t = 0.0;
  Scalar residual = 0.0;
  Scalar J_value = 0.0;
  Scalar dual_norm = 0.0;
  Scalar dual_objective = 0.0; // G(p_k, g_obs)
  Index inner_iterations = 0;
  Scalar bregman = std::nan("");    // D_J^xi(u_k, u_true) when a truth is given
  Scalar norm_error = std::nan(""); // |u_k - u_true|
  Scalar guler_min_slack = std::nan(""); // min over samples of slack / (1 + |RHS|)
  Scalar ppm_violation = std::nan("");
  Scalar kkt_violation = std::nan("");
  Vector u; // only with RunOptions::keep_iterates
  Vector p;
};

enum class RunStatus { Stopped, SafetyCap, BoundViolation, SolverFailure };

inline const char *to_string(RunStatus s) {
  switch (s) {
  case RunStatus::Stopped:
    return "stopped";
  case RunStatus::SafetyCap:
    return "safety_cap";
  case RunStatus::BoundViolation:
    return "bound_violation";
  case RunStatus::SolverFailure:
    return "solver_failure";
  }
  return "unknown";
}

struct RunOptions {
  Index max_iterations = 1'000'000;
  InnerOptions inner;
  MonitorSet monitors;
  std::optional<IndexFunction> phi; // enables the discrepancy-rule growth guard
  std::optional<Truth> truth;
  bool keep_iterates = false;
};

struct RunResult {
  std::vector<IterateRecord> records;
  AlmState final_state;
  RunStatus status = RunStatus::Stopped;
  std::string message;
};

inline RunResult run(const LinearOperator &K, const Regularizer &reg, const Vector &g_obs,
                     const TauSchedule &schedule, const StoppingRule &stop,
                     const RunOptions &options = {}) {
  if (stop.is_morozov() && !schedule.bounded())
    throw std::invalid_argument("run: discrepancy stopping needs a bounded tau schedule");
  require_size(g_obs, K.rows(), "run");

  RunResult result;
  SubproblemSolver solver(K, reg, options.inner);
  AlmState state = AlmState::initial(K, g_obs);
  const auto &mon = options.monitors;

  std::vector<Scalar> G_samples;
  if (mon.guler)
    for (const auto &p : mon.guler_duals)
      G_samples.push_back(dual_objective(p, g_obs, K, reg, kDualFeasibilityTol));

  while (true) {
    if (state.k >= options.max_iterations) {
      result.status = RunStatus::SafetyCap;
      result.message = "safety cap of " + std::to_string(options.max_iterations) +
                       " iterations reached";
      break;
    }
    const Scalar tau = schedule.tau(state.k + 1);
    AlmState next;
    try {
      next = alm_step(solver, state, tau, g_obs, K, reg);
    } catch (const SolverError &e) {
      result.status = RunStatus::SolverFailure;
      result.message = e.what();
      break;
    }

    IterateRecord rec;
    rec.k = next.k;
    rec.tau = tau;
    rec.t = next.t;
    rec.residual = next.residual;
    rec.J_value = next.J_value;
    rec.dual_norm = next.p.norm();
    rec.dual_objective = dual_objective(next.p, g_obs, K, reg, kDualFeasibilityTol);
    rec.inner_iterations = next.inner_iterations;
    if (options.truth) {
      rec.bregman = bregman(reg, next.u, options.truth->u, options.truth->xi);
      rec.norm_error = (next.u - options.truth->u).norm();
    }
    if (mon.guler && !mon.guler_duals.empty()) {
      Scalar worst = kInf;
      for (std::size_t i = 0; i < mon.guler_duals.size(); ++i) {
        const auto s = guler_slack(mon.guler_duals[i], G_samples[i], next.p, state.p,
                                   rec.dual_objective, next.t, tau);
        worst = std::min(worst, s.slack / (1.0 + std::abs(s.rhs)));
      }
      rec.guler_min_slack = worst;
    }
    if (mon.ppm)
      rec.ppm_violation =
          check_ppm_optimality(next.p, state.p, tau, g_obs, K, reg, mon.ppm_probes);
    if (mon.kkt)
      rec.kkt_violation = check_kkt_subgradient(next, K, reg);
    if (options.keep_iterates) {
      rec.u = next.u;
      rec.p = next.p;
    }
    result.records.push_back(std::move(rec));
    state = std::move(next);

    if (stop.should_stop(state))
      break;
    if (const auto *mz = std::get_if<StoppingRule::Morozov>(&stop.kind());
        mz && options.phi) {
      const Scalar bound = morozov_growth_bound(*options.phi, mz->rho, mz->delta, tau);
      if (state.t > 100.0 * bound) {
        result.status = RunStatus::BoundViolation;
        result.message = "t_n exceeds 100x the discrepancy growth bound";
        break;
      }
    }
  }
  result.final_state = std::move(state);
  return result;
}

/// Guler slacks for every (record, sample) pair. Records must carry their
/// iterates (RunOptions::keep_iterates) and start at k = 1 with p_0 = 0.
inline std::vector<GulerSlack> check_guler(const std::vector<IterateRecord> &records,
                                           const Vector &g_obs, const LinearOperator &K,
                                           const Regularizer &reg,
                                           const std::vector<Vector> &sample_duals) {
  std::vector<Scalar> G_samples;
  for (const auto &p : sample_duals)
    G_samples.push_back(dual_objective(p, g_obs, K, reg, kDualFeasibilityTol));
  std::vector<GulerSlack> out;
  Vector p_prev = Vector::Zero(K.rows());
  for (const auto &rec : records) {
    if (rec.p.size() != K.rows())
      throw std::invalid_argument("check_guler: records do not carry dual iterates");
    const Scalar G_pn = dual_objective(rec.p, g_obs, K, reg, kDualFeasibilityTol);
    for (std::size_t i = 0; i < sample_duals.size(); ++i) {
      auto s = guler_slack(sample_duals[i], G_samples[i], rec.p, p_prev, G_pn, rec.t, rec.tau);
      s.n = rec.k;
      s.sample = i;
      out.push_back(s);
    }
    p_prev = rec.p;
  }
  return out;
}

/// Largest relative increase of G(p_k, g_obs) between consecutive records.
inline Scalar dual_objective_max_increase(const std::vector<IterateRecord> &records) {
  Scalar worst = 0.0;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const Scalar a = records[i - 1].dual_objective;
    const Scalar b = records[i].dual_objective;
    worst = std::max(worst, (b - a) / std::max(1.0, std::abs(a)));
  }
  return worst;
}

} // namespace almreg
