#pragma once

// Synthetic problems with prescribed source conditions, noise injection,
// delta sweeps, log-log rate fits and the quantitative bound checks.

#include "almreg/alm_core.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace almreg {

struct SourceSpec {
  enum class Kind { Standard, Holder };
  Kind kind = Kind::Standard;
  Scalar nu = 0.5;               // Hölder exponent in (0, 1/2]
  std::uint64_t seed = 1;
  Scalar coefficient_decay = 0.5; // source element coefficients ~ i^{-decay}
  Index support_size = 0;         // q = 1 problems only
  std::optional<Vector> dual;     // explicit source element instead of a random one

  static SourceSpec standard(std::uint64_t seed = 1) {
    SourceSpec s;
    s.seed = seed;
    return s;
  }
  static SourceSpec holder(Scalar nu, std::uint64_t seed = 1) {
    if (!(nu > 0.0 && nu <= 0.5))
      throw std::invalid_argument("holder source: nu must lie in (0, 1/2]");
    SourceSpec s;
    s.kind = Kind::Holder;
    s.nu = nu;
    s.seed = seed;
    return s;
  }
  Scalar effective_nu() const { return kind == Kind::Standard ? 0.5 : nu; }
};

enum class DistanceKind { Bregman, NormPower };

/// D(u, u_true) <= J(u) - J(u_true) + Phi(|Ku - g|^2), with
/// D = weight * Bregman  or  D = weight * |u - u_true|^power.
struct VariationalInequalitySpec {
  IndexFunction phi;
  DistanceKind distance = DistanceKind::Bregman;
  Scalar weight = 1.0; // beta in (0, 1] or C > 0
  Scalar power = 1.0;  // only for NormPower
};

struct Problem {
  LinearOperator K;
  Regularizer reg;
  SourceSpec source;
  Vector u_true;
  Vector g;       // K u_true
  Vector xi_true; // element of dJ(u_true) used for Bregman distances
  Vector p_true;  // source element (in H for standard, in X for Hölder)
  IndexFunction phi;                          // drives parameter choice
  std::optional<VariationalInequalitySpec> vi; // when its constants are computable
  Scalar restricted_sigma_min = std::nan("");
};

class ConstructionError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline Vector decaying_coefficients(Index n, Scalar decay, Rng &rng) {
  std::uniform_real_distribution<Scalar> mag(0.5, 1.5);
  std::bernoulli_distribution sign(0.5);
  Vector c(n);
  for (Index i = 0; i < n; ++i)
    c(i) = (sign(rng) ? 1.0 : -1.0) * mag(rng) * std::pow(static_cast<Scalar>(i + 1), -decay);
  return c;
}

inline Scalar smallest_singular_value(const Matrix &m) {
  if (m.cols() == 0)
    return 0.0;
  if (m.rows() < m.cols())
    return 0.0;
  Eigen::JacobiSVD<Matrix> dec(m);
  return dec.singularValues()(dec.singularValues().size() - 1);
}

inline Matrix select_columns(const Matrix &m, const std::vector<Index> &cols) {
  Matrix out(m.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    out.col(static_cast<Index>(j)) = m.col(cols[j]);
  return out;
}

/// beta = 1/2 split of the Hölder interpolation bound
///   <xi, u_true - u> <= A s^nu (D_J)^{(1-2nu)/2},  A = scale * 2^{(1-2nu)/2},
/// giving Phi(s) = c s^{2nu/(1+2nu)}.
inline VariationalInequalitySpec holder_vi(Scalar scale, Scalar nu) {
  if (nu >= 0.5)
    return {IndexFunction(scale, 0.5), DistanceKind::Bregman, 1.0, 1.0};
  const Scalar A = scale * std::pow(2.0, 0.5 - nu);
  const Scalar c = A * (1.0 + 2.0 * nu) / 2.0 *
                   std::pow(A * (1.0 - 2.0 * nu), (1.0 - 2.0 * nu) / (1.0 + 2.0 * nu));
  return {IndexFunction(c, 2.0 * nu / (1.0 + 2.0 * nu)), DistanceKind::Bregman, 0.5, 1.0};
}

inline void verify_quadratic_source(const Problem &pb, bool standard) {
  const Scalar scale = 1.0 + pb.xi_true.norm();
  if ((pb.xi_true - pb.reg.gram_apply(pb.u_true)).norm() > 1e-10 * scale)
    throw ConstructionError("source check: xi_true is not the gradient of J at u_true");
  if (standard && (pb.K.adjoint_apply(pb.p_true) - pb.xi_true).norm() > 1e-10 * scale)
    throw ConstructionError("source check: xi_true != K* p_true");
}

inline Problem build_quadratic(const LinearOperator &K, const Regularizer &reg,
                               const SourceSpec &src) {
  Rng rng(src.seed);
  const auto f = svd(K);
  const Index r = f.rank_cutoff_count();
  const bool standard = src.kind == SourceSpec::Kind::Standard;
  Problem pb{K, reg, src, {}, {}, {}, {}, IndexFunction(1.0, 0.5), std::nullopt};

  if (reg.has_identity_L()) {
    if (standard) {
      pb.p_true = src.dual ? *src.dual
                           : Vector(f.U.leftCols(r) * decaying_coefficients(r, src.coefficient_decay, rng));
      require_size(pb.p_true, K.rows(), "build_problem (source element)");
      pb.xi_true = K.adjoint_apply(pb.p_true);
    } else {
      pb.p_true = src.dual ? *src.dual
                           : Vector(f.V.leftCols(r) * decaying_coefficients(r, src.coefficient_decay, rng));
      require_size(pb.p_true, K.cols(), "build_problem (source element)");
      pb.xi_true = fractional_gram_apply(f, src.nu, pb.p_true);
    }
    pb.u_true = pb.xi_true;
    const Scalar nu = src.effective_nu();
    auto vi = standard ? VariationalInequalitySpec{IndexFunction(pb.p_true.norm(), 0.5),
                                                   DistanceKind::Bregman, 1.0, 1.0}
                       : holder_vi(pb.p_true.norm(), nu);
    pb.phi = vi.phi;
    pb.vi = vi;
  } else {
    const Matrix &L = *reg.as_quadratic().L;
    const Matrix LtL = reg.gram_matrix(K.cols());
    if (standard) {
      pb.p_true = src.dual ? *src.dual
                           : Vector(f.U.leftCols(r) * decaying_coefficients(r, src.coefficient_decay, rng));
      require_size(pb.p_true, K.rows(), "build_problem (source element)");
      pb.xi_true = K.adjoint_apply(pb.p_true);
      Eigen::LLT<Matrix> llt(LtL);
      if (llt.info() != Eigen::Success)
        throw ConstructionError("build_problem: L^T L must be positive definite");
      pb.u_true = llt.solve(pb.xi_true);
      auto vi = VariationalInequalitySpec{IndexFunction(pb.p_true.norm(), 0.5),
                                          DistanceKind::Bregman, 1.0, 1.0};
      pb.phi = vi.phi;
      pb.vi = vi;
    } else {
      // Data smoothing (K = Id): L u_true = (Id + L L^T)^{-nu} omega.
      const Matrix Kd = K.to_dense();
      if (Kd.rows() != Kd.cols() ||
          (Kd - Matrix::Identity(Kd.rows(), Kd.cols())).norm() > 1e-12)
        throw ConstructionError("build_problem: Hölder source with general L needs K = Id");
      Eigen::SelfAdjointEigenSolver<Matrix> eig(L * L.transpose());
      const Index m = L.rows();
      Vector omega = src.dual ? *src.dual
                              : Vector(eig.eigenvectors() *
                                       decaying_coefficients(m, src.coefficient_decay, rng));
      require_size(omega, m, "build_problem (source element)");
      const Vector lam = eig.eigenvalues().cwiseMax(0.0);
      Vector w = eig.eigenvectors().transpose() * omega;
      for (Index i = 0; i < m; ++i)
        w(i) *= std::pow(1.0 + lam(i), -src.nu);
      const Vector Lu = eig.eigenvectors() * w;
      pb.u_true = L.completeOrthogonalDecomposition().solve(Lu);
      if ((L * pb.u_true - Lu).norm() > 1e-10 * (1.0 + Lu.norm()))
        throw ConstructionError("build_problem: L u = L_hat^nu omega has no solution");
      pb.xi_true = LtL * pb.u_true;
      pb.p_true = pb.xi_true;
      // |L (Id + L^T L)^{-1/2}| = max sigma / sqrt(1 + sigma^2) over singular values of L.
      const Scalar smax = std::sqrt(lam.maxCoeff());
      const Scalar M = smax / std::sqrt(1.0 + smax * smax);
      auto vi = holder_vi(omega.norm() * std::pow(M, 2.0 * src.nu), src.nu);
      pb.phi = vi.phi;
      pb.vi = vi;
    }
  }
  pb.g = K.apply(pb.u_true);
  verify_quadratic_source(pb, standard);
  return pb;
}

inline Problem build_l1(const LinearOperator &K, const Regularizer &reg, const SourceSpec &src) {
  const Index n = K.cols();
  const Index s = src.support_size;
  if (s < 1 || 4 * s > n)
    throw ConstructionError("build_problem: support size must lie in [1, cols/4]");
  const bool standard = src.kind == SourceSpec::Kind::Standard;
  const Matrix Kd = K.to_dense();
  const auto f = svd(K);
  Matrix G; // maps the source element to xi
  if (standard)
    G = Kd.transpose();
  else {
    G.resize(n, n);
    Vector e = Vector::Zero(n);
    for (Index j = 0; j < n; ++j) {
      e(j) = 1.0;
      G.col(j) = fractional_gram_apply(f, src.nu, e);
      e(j) = 0.0;
    }
  }
  Rng rng(src.seed);
  std::uniform_real_distribution<Scalar> mag(1.0, 2.0);
  std::bernoulli_distribution coin(0.5);
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<Index> support(idx.begin(), idx.begin() + s);
    std::sort(support.begin(), support.end());
    Vector signs(s);
    for (Index i = 0; i < s; ++i)
      signs(i) = coin(rng) ? 1.0 : -1.0;

    // Minimum-norm source element with (G p)_S = signs.
    Matrix GS(s, G.cols());
    for (Index i = 0; i < s; ++i)
      GS.row(i) = G.row(support[static_cast<std::size_t>(i)]);
    const Matrix gram = GS * GS.transpose();
    Eigen::LDLT<Matrix> ldlt(gram);
    if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-12)
      continue;
    Vector p = GS.transpose() * ldlt.solve(signs);
    Vector xi = G * p;
    Scalar off = 0.0;
    for (Index i = 0; i < n; ++i)
      if (!std::binary_search(support.begin(), support.end(), i))
        off = std::max(off, std::abs(xi(i)));
    if (off >= 1.0 - 1e-6)
      continue;
    // Snap the support entries, which equal +-1 up to roundoff.
    for (Index i = 0; i < s; ++i)
      xi(support[static_cast<std::size_t>(i)]) = signs(i);

    const Scalar smin = smallest_singular_value(select_columns(Kd, support));
    if (!(smin > 1e-6))
      throw ConstructionError("build_problem: restricted injectivity fails on the support");

    Vector u = Vector::Zero(n);
    for (Index i = 0; i < s; ++i)
      u(support[static_cast<std::size_t>(i)]) = signs(i) * mag(rng);

    Problem pb{K, reg, src, u, K.apply(u), xi, p,
               IndexFunction(p.norm(), 0.5), std::nullopt, smin};
    // Source invariants.
    if (xi.lpNorm<Eigen::Infinity>() > 1.0 + 1e-12)
      throw ConstructionError("source check: |xi|_inf > 1");
    const Vector direct = standard ? K.adjoint_apply(p) : fractional_gram_apply(f, src.nu, p);
    if ((direct - xi).norm() > 1e-10 * (1.0 + xi.norm()))
      throw ConstructionError("source check: xi does not match its source element");
    const auto sg = subgradient(reg, u);
    for (Index i = 0; i < n; ++i)
      if (u(i) != 0.0 && sg.xi(i) != xi(i))
        throw ConstructionError("source check: sign mismatch on the support");
    if (src.kind == SourceSpec::Kind::Standard)
      pb.vi = VariationalInequalitySpec{pb.phi, DistanceKind::Bregman, 1.0, 1.0};
    return pb;
  }
  throw ConstructionError("build_problem: no admissible support found (degenerate argmax set)");
}

inline Problem build_power(const LinearOperator &K, const Regularizer &reg, const SourceSpec &src) {
  const Scalar q = reg.q();
  const bool standard = src.kind == SourceSpec::Kind::Standard;
  const auto f = svd(K);
  const Index r = f.rank_cutoff_count();
  Rng rng(src.seed);
  Vector p, xi;
  if (standard) {
    p = src.dual ? *src.dual : Vector(f.U.leftCols(r) * decaying_coefficients(r, src.coefficient_decay, rng));
    require_size(p, K.rows(), "build_problem (source element)");
    xi = K.adjoint_apply(p);
  } else {
    p = src.dual ? *src.dual : Vector(f.V.leftCols(r) * decaying_coefficients(r, src.coefficient_decay, rng));
    require_size(p, K.cols(), "build_problem (source element)");
    xi = fractional_gram_apply(f, src.nu, p);
  }
  Vector u(xi.size());
  std::vector<Index> support;
  for (Index i = 0; i < xi.size(); ++i) {
    u(i) = std::copysign(std::pow(std::abs(xi(i)) / q, 1.0 / (q - 1.0)), xi(i));
    if (u(i) != 0.0)
      support.push_back(i);
  }
  if (support.empty())
    throw ConstructionError("build_problem: empty support");
  const Scalar smin = smallest_singular_value(select_columns(K.to_dense(), support));
  if (!(smin > 1e-6))
    throw ConstructionError("build_problem: restricted injectivity fails on the support");
  const Scalar nu = src.effective_nu();
  const IndexFunction phi(p.norm(), q * nu / (q - 1.0 + 2.0 * nu));
  Problem pb{K, reg, src, u, K.apply(u), subgradient(reg, u).xi, p, phi, std::nullopt, smin};
  if ((pb.xi_true - xi).norm() > 1e-8 * (1.0 + xi.norm()))
    throw ConstructionError("source check: gradient inversion inaccurate");
  return pb;
}

} // namespace detail

inline Problem build_problem(const LinearOperator &K, const Regularizer &reg,
                             const SourceSpec &source) {
  if (source.kind == SourceSpec::Kind::Holder && !(source.nu > 0.0 && source.nu <= 0.5))
    throw std::invalid_argument("build_problem: nu must lie in (0, 1/2]");
  if (reg.is_quadratic())
    return detail::build_quadratic(K, reg, source);
  if (reg.q() == 1.0)
    return detail::build_l1(K, reg, source);
  return detail::build_power(K, reg, source);
}

inline Problem build_problem(const OperatorSpec &op, const Regularizer &reg,
                             const SourceSpec &source) {
  return build_problem(make_test_operator(op), reg, source);
}

/// g + delta * w / |w| for a seeded Gaussian direction w.
inline Vector add_noise(const Vector &g, Scalar delta, std::uint64_t seed) {
  if (!(delta >= 0.0))
    throw std::invalid_argument("add_noise: delta must be non-negative");
  if (delta == 0.0)
    return g;
  Rng rng(seed);
  Vector w = gaussian_vector(g.size(), rng);
  return g + (delta / w.norm()) * w;
}

/// Dual samples for the Guler monitor: Gaussian directions scaled to norms
/// 0.1, 1, 10 (cycling). For q = 1 samples are pulled inside the dual-feasible
/// set so that G stays finite.
inline std::vector<Vector> sample_duals(const Problem &pb, std::size_t count, std::uint64_t seed) {
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const Scalar norms[] = {0.1, 1.0, 10.0};
  std::vector<Vector> out;
  for (std::size_t i = 0; i < count; ++i) {
    Vector p = gaussian_vector(pb.K.rows(), rng);
    p *= norms[i % 3] / p.norm();
    if (pb.reg.is_sparsity() && pb.reg.q() == 1.0) {
      const Scalar m = pb.K.adjoint_apply(p).lpNorm<Eigen::Infinity>();
      if (m > 0.99)
        p *= 0.99 / m;
    }
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<Vector> unit_probes(Index dim, std::size_t count, std::uint64_t seed) {
  Rng rng(seed ^ 0x5851f42d4c957f2dULL);
  std::vector<Vector> out;
  for (std::size_t i = 0; i < count; ++i) {
    Vector d = gaussian_vector(dim, rng);
    out.push_back(d / d.norm());
  }
  return out;
}

struct RunRecord {
  Scalar delta = 0.0;
  std::uint64_t seed = 0;
  Index n_stop = 0;
  Scalar t_stop = 0.0;
  Scalar tau_stop = 0.0;
  Scalar residual_at_stop = 0.0;
  Scalar bregman_to_truth = 0.0;
  Scalar norm_error = 0.0;
  Scalar dual_norm = 0.0;
  std::string stopping;
  RunStatus status = RunStatus::Stopped;
  std::string message;
  Scalar rho = std::nan("");
  std::optional<bool> morozov_growth_ok;
  // Monitor summaries over all iterations (NaN when the monitor is off).
  Scalar guler_min_slack = std::nan("");
  Scalar ppm_max_violation = std::nan("");
  Scalar kkt_max_violation = std::nan("");
  Scalar dual_max_increase = std::nan("");
  Scalar dual_min_gap = std::nan(""); // min_k G(p_k, g_obs) + J(u_true), for delta = 0
};

struct SweepOptions {
  enum class Rule { APriori, Morozov, Fixed };
  Rule rule = Rule::APriori;
  Scalar rho = 1.5;          // Morozov only
  Index fixed_iterations = 0; // Fixed only
  std::vector<Scalar> deltas;
  std::vector<std::uint64_t> seeds{1};
  TauSchedule schedule = TauSchedule::constant(1.0);
  InnerOptions inner;
  Index max_iterations = 1'000'000;
  bool guler = false;
  bool ppm = false;
  bool kkt = false;
  std::size_t guler_samples = 20;
  std::size_t ppm_probes = 10;
  unsigned threads = 1;
};

inline bool check_morozov_growth(const RunRecord &rec, const IndexFunction &phi, Scalar rho,
                                 Scalar delta, Scalar tau_at_stop) {
  const Scalar bound = morozov_growth_bound(phi, rho, delta, tau_at_stop);
  return rec.t_stop - bound <= 1e-10 * bound;
}

inline std::string rule_name(SweepOptions::Rule r) {
  switch (r) {
  case SweepOptions::Rule::APriori:
    return "apriori";
  case SweepOptions::Rule::Morozov:
    return "morozov";
  case SweepOptions::Rule::Fixed:
    return "fixed";
  }
  return "unknown";
}

inline StoppingRule stopping_rule_for(const Problem &pb, const SweepOptions &opt, Scalar delta) {
  switch (opt.rule) {
  case SweepOptions::Rule::APriori:
    if (delta == 0.0)
      throw std::invalid_argument("a priori rule needs delta > 0");
    return StoppingRule::apriori(apriori_total_time(pb.phi, delta));
  case SweepOptions::Rule::Morozov:
    return StoppingRule::morozov(opt.rho, delta);
  case SweepOptions::Rule::Fixed:
    return StoppingRule::fixed(opt.fixed_iterations);
  }
  throw std::logic_error("unknown rule");
}

inline RunOptions run_options_for(const Problem &pb, const SweepOptions &opt, std::uint64_t seed) {
  RunOptions ro;
  ro.max_iterations = opt.max_iterations;
  ro.inner = opt.inner;
  ro.phi = pb.phi;
  ro.truth = Truth{pb.u_true, pb.xi_true};
  ro.monitors.guler = opt.guler;
  ro.monitors.ppm = opt.ppm;
  ro.monitors.kkt = opt.kkt;
  if (opt.guler)
    ro.monitors.guler_duals = sample_duals(pb, opt.guler_samples, seed);
  if (opt.ppm)
    ro.monitors.ppm_probes = unit_probes(pb.K.rows(), opt.ppm_probes, seed);
  return ro;
}

inline RunRecord summarize_run(const Problem &pb, const SweepOptions &opt, Scalar delta,
                               std::uint64_t seed, const RunResult &res) {
  RunRecord rr;
  rr.delta = delta;
  rr.seed = seed;
  rr.stopping = rule_name(opt.rule);
  rr.status = res.status;
  rr.message = res.message;
  if (opt.rule == SweepOptions::Rule::Morozov)
    rr.rho = opt.rho;
  if (res.records.empty()) {
    if (rr.status == RunStatus::Stopped)
      rr.status = RunStatus::SolverFailure;
    return rr;
  }
  const auto &last = res.records.back();
  rr.n_stop = last.k;
  rr.t_stop = last.t;
  rr.tau_stop = last.tau;
  rr.residual_at_stop = last.residual;
  rr.bregman_to_truth = last.bregman;
  rr.norm_error = last.norm_error;
  rr.dual_norm = last.dual_norm;
  const auto fold = [&](auto member, bool take_min) {
    Scalar acc = take_min ? kInf : -kInf;
    bool any = false;
    for (const auto &r : res.records) {
      const Scalar v = r.*member;
      if (std::isnan(v))
        continue;
      any = true;
      acc = take_min ? std::min(acc, v) : std::max(acc, v);
    }
    return any ? acc : std::nan("");
  };
  rr.guler_min_slack = fold(&IterateRecord::guler_min_slack, true);
  rr.ppm_max_violation = fold(&IterateRecord::ppm_violation, false);
  rr.kkt_max_violation = fold(&IterateRecord::kkt_violation, false);
  rr.dual_max_increase = dual_objective_max_increase(res.records);
  rr.dual_min_gap = fold(&IterateRecord::dual_objective, true) + eval_J(pb.reg, pb.u_true);
  if (opt.rule == SweepOptions::Rule::Morozov && res.status == RunStatus::Stopped)
    rr.morozov_growth_ok = check_morozov_growth(rr, pb.phi, opt.rho, delta, rr.tau_stop);
  return rr;
}

/// Runs one cell of a sweep.
inline RunRecord run_cell(const Problem &pb, const SweepOptions &opt, Scalar delta,
                          std::uint64_t seed) {
  const Vector g_obs = add_noise(pb.g, delta, seed);
  const auto stop = stopping_rule_for(pb, opt, delta);
  const auto ro = run_options_for(pb, opt, seed);
  const auto res = run(pb.K, pb.reg, g_obs, opt.schedule, stop, ro);
  return summarize_run(pb, opt, delta, seed, res);
}

/// One record per (delta, seed), sorted by (delta, seed). Cells run on up to
/// `threads` workers; a failing cell is recorded and the sweep continues.
inline std::vector<RunRecord> sweep(const Problem &pb, const SweepOptions &opt) {
  if (opt.rule == SweepOptions::Rule::Morozov && !opt.schedule.bounded())
    throw std::invalid_argument("sweep: discrepancy stopping needs a bounded tau schedule");
  struct Cell {
    Scalar delta;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (const Scalar d : opt.deltas)
    for (const auto s : opt.seeds)
      cells.push_back({d, s});
  std::vector<RunRecord> out(cells.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        out[i] = run_cell(pb, opt, cells[i].delta, cells[i].seed);
      } catch (const std::exception &e) {
        RunRecord rr;
        rr.delta = cells[i].delta;
        rr.seed = cells[i].seed;
        rr.stopping = rule_name(opt.rule);
        rr.status = RunStatus::SolverFailure;
        rr.message = e.what();
        out[i] = rr;
      }
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(cells.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t)
      pool.emplace_back(worker);
    for (auto &th : pool)
      th.join();
  }
  std::sort(out.begin(), out.end(), [](const RunRecord &a, const RunRecord &b) {
    return a.delta != b.delta ? a.delta < b.delta : a.seed < b.seed;
  });
  return out;
}

enum class RateField { Bregman, NormError, DualNorm };

inline Scalar field_value(const RunRecord &r, RateField f) {
  switch (f) {
  case RateField::Bregman:
    return r.bregman_to_truth;
  case RateField::NormError:
    return r.norm_error;
  case RateField::DualNorm:
    return r.dual_norm;
  }
  return std::nan("");
}

struct RateFit {
  Scalar slope = 0.0;
  Scalar intercept = 0.0;
  Scalar r_squared = 0.0;
  Scalar delta_min = 0.0;
  Scalar delta_max = 0.0;
  std::size_t points = 0;
};

/// Least-squares line through (log delta, log y); non-positive y are skipped.
inline RateFit fit_rate(const std::vector<RunRecord> &records, RateField field) {
  std::vector<Scalar> xs, ys;
  RateFit fit;
  fit.delta_min = kInf;
  fit.delta_max = 0.0;
  for (const auto &r : records) {
    const Scalar y = field_value(r, field);
    if (!(y > 0.0) || !std::isfinite(y) || !(r.delta > 0.0))
      continue;
    xs.push_back(std::log(r.delta));
    ys.push_back(std::log(y));
    fit.delta_min = std::min(fit.delta_min, r.delta);
    fit.delta_max = std::max(fit.delta_max, r.delta);
  }
  if (xs.size() < 4)
    throw std::invalid_argument("fit_rate: fewer than 4 usable records");
  const Scalar n = static_cast<Scalar>(xs.size());
  const Scalar mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const Scalar my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  Scalar sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (!(sxx > 0.0))
    throw std::invalid_argument("fit_rate: all deltas coincide");
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = syy > 0.0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 1.0;
  fit.points = xs.size();
  return fit;
}

/// Exponent r in D = O(delta^r) (or |u - u_true| = O(delta^r)).
inline Scalar theoretical_exponent(const SourceSpec &source, const Regularizer &reg,
                                   RateField distance) {
  const Scalar nu = source.effective_nu();
  if (reg.is_quadratic()) {
    const Scalar bregman_rate = 4.0 * nu / (1.0 + 2.0 * nu);
    if (distance == RateField::Bregman)
      return bregman_rate;
    if (distance == RateField::NormError && reg.has_identity_L())
      return 0.5 * bregman_rate;
    throw std::invalid_argument("theoretical_exponent: unsupported distance for quadratic J");
  }
  if (distance == RateField::NormError) {
    const Scalar q = reg.q();
    return 2.0 * nu / (q - 1.0 + 2.0 * nu);
  }
  throw std::invalid_argument("theoretical_exponent: unsupported distance for sparsity J");
}

struct RatioSeries {
  std::vector<Scalar> ratios;
  Scalar max = 0.0;
  Scalar median = 0.0;
  bool all_finite_positive = true;
  bool stable() const { return all_finite_positive && max <= 3.0 * median; }
};

inline RatioSeries summarize_ratios(std::vector<Scalar> ratios) {
  RatioSeries s;
  s.ratios = ratios;
  for (const Scalar r : ratios)
    if (!(r > 0.0) || !std::isfinite(r))
      s.all_finite_positive = false;
  if (ratios.empty()) {
    s.all_finite_positive = false;
    return s;
  }
  std::sort(ratios.begin(), ratios.end());
  const std::size_t n = ratios.size();
  s.median = n % 2 ? ratios[n / 2] : 0.5 * (ratios[n / 2 - 1] + ratios[n / 2]);
  s.max = ratios.back();
  return s;
}

struct BoundCalibration {
  RatioSeries distance; // D / (t (Psi(16/t) + delta^2))
  RatioSeries residual; // |Ku - g_obs|^2 / (Psi(16/t) + delta^2)
  RatioSeries dual;     // |p|^2 / (t^2 (Psi(2/t) + delta^2))
  bool stable() const { return distance.stable() && residual.stable() && dual.stable(); }
};

/// Observed-over-bound ratios for the a priori error estimates and the dual
/// growth estimate. The unknown constants cancel in max/median.
inline BoundCalibration check_mainthm_bound(const std::vector<RunRecord> &records,
                                            const IndexFunction &phi,
                                            RateField distance = RateField::Bregman) {
  std::vector<Scalar> d, r, p;
  for (const auto &rec : records) {
    if (rec.status != RunStatus::Stopped)
      continue;
    const Scalar t = rec.t_stop;
    const Scalar d2 = rec.delta * rec.delta;
    const Scalar a = psi(phi, 16.0 / t) + d2;
    d.push_back(field_value(rec, distance) / (t * a));
    r.push_back(rec.residual_at_stop * rec.residual_at_stop / a);
    p.push_back(rec.dual_norm * rec.dual_norm / (t * t * (psi(phi, 2.0 / t) + d2)));
  }
  return {summarize_ratios(d), summarize_ratios(r), summarize_ratios(p)};
}

struct ViReport {
  Scalar worst_normalized_slack = kInf; // min over samples of slack / scale
  Scalar worst_slack = kInf;
  std::size_t samples = 0;
  bool ok() const { return worst_normalized_slack >= -1e-8; }
};

/// Samples u = u_true + scale * d with scales log-spaced over [1e-3, 1e1] and
/// directions alternating between random unit vectors and +-coordinate axes,
/// and evaluates J(u) - J(u_true) + Phi(|Ku - g|^2) - D(u, u_true).
inline ViReport verify_variational_inequality(const Problem &pb,
                                              const VariationalInequalitySpec &vi,
                                              std::size_t count, std::uint64_t seed = 7) {
  Rng rng(seed);
  const Index n = pb.u_true.size();
  const Scalar J_true = eval_J(pb.reg, pb.u_true);
  const std::vector<Scalar> scales = log_grid(1e-3, 1e1, 9);
  ViReport rep;
  for (std::size_t i = 0; i < count; ++i) {
    const Scalar scale = scales[i % scales.size()];
    Vector d;
    if ((i / scales.size()) % 2 == 0) {
      d = gaussian_vector(n, rng);
      d /= d.norm();
    } else {
      d = Vector::Zero(n);
      const Index axis = static_cast<Index>((i / (2 * scales.size())) % static_cast<std::size_t>(n));
      d(axis) = (i / scales.size()) % 4 == 1 ? 1.0 : -1.0;
    }
    const Vector u = pb.u_true + scale * d;
    const Scalar D = vi.distance == DistanceKind::Bregman
                         ? vi.weight * bregman(pb.reg, u, pb.u_true, pb.xi_true)
                         : vi.weight * std::pow((u - pb.u_true).norm(), vi.power);
    const Scalar slack =
        eval_J(pb.reg, u) - J_true + phi(vi.phi, (pb.K.apply(u) - pb.g).squaredNorm()) - D;
    rep.worst_slack = std::min(rep.worst_slack, slack);
    rep.worst_normalized_slack = std::min(rep.worst_normalized_slack, slack / scale);
    ++rep.samples;
  }
  return rep;
}

} // namespace almreg
