#pragma once

// solve / sweep / check front ends: run what a config describes, write CSV
// tables and map the outcome to an exit code.

#include "almreg/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace almreg {

enum ExitCode : int { kExitPass = 0, kExitAcceptance = 1, kExitUsage = 2, kExitSolver = 3 };

namespace csv {

inline std::string num(Scalar x) {
  if (std::isnan(x))
    return "nan";
  if (std::isinf(x))
    return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.15e", x);
  return buf;
}

inline std::string integer(long long x) { return std::to_string(x); }

inline void write(const std::filesystem::path &path, const std::vector<std::string> &header,
                  const std::vector<std::vector<std::string>> &rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  const auto line = [&](const std::vector<std::string> &cells) {
    for (std::size_t i = 0; i < cells.size(); ++i)
      out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(header);
  for (const auto &r : rows)
    line(r);
}

} // namespace csv

struct CheckRow {
  std::string name;
  Scalar value = 0.0;
  Scalar threshold = 0.0;
  std::string relation; // "<=", ">=" or "info"
  bool pass = true;
};

inline CheckRow at_most(std::string name, Scalar value, Scalar threshold) {
  return {std::move(name), value, threshold, "<=", value <= threshold};
}
inline CheckRow at_least(std::string name, Scalar value, Scalar threshold) {
  return {std::move(name), value, threshold, ">=", value >= threshold};
}
inline CheckRow info(std::string name, Scalar value) {
  return {std::move(name), value, std::nan(""), "info", true};
}

inline std::string status_of(const CheckRow &r) {
  if (r.relation == "info")
    return "info";
  return r.pass ? "pass" : "fail";
}

inline void write_checks(const std::filesystem::path &path, const std::vector<CheckRow> &rows) {
  std::vector<std::vector<std::string>> cells;
  for (const auto &r : rows)
    cells.push_back({r.name, csv::num(r.value), csv::num(r.threshold), status_of(r)});
  csv::write(path, {"rule", "value", "threshold", "status"}, cells);
}

inline void print_checks(std::ostream &os, const std::vector<CheckRow> &rows) {
  for (const auto &r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-34s %-5s %22s  %-4s %s\n", r.name.c_str(),
                  status_of(r).c_str(), csv::num(r.value).c_str(), r.relation.c_str(),
                  r.relation == "info" ? "" : csv::num(r.threshold).c_str());
    os << buf;
  }
}

inline bool all_pass(const std::vector<CheckRow> &rows) {
  return std::all_of(rows.begin(), rows.end(), [](const CheckRow &r) { return r.pass; });
}

// Thresholds of the exact-inequality battery.
inline constexpr Scalar kGulerTol = 1e-8;
inline constexpr Scalar kPpmTol = 1e-8;
inline constexpr Scalar kKktTol = 1e-9;
inline constexpr Scalar kDualIncreaseTol = 1e-10;
inline constexpr Scalar kDualLowerTol = 1e-8;
inline constexpr Scalar kViTol = 1e-8;
inline constexpr Scalar kPsiOracleTol = 1e-6;
inline constexpr Scalar kAdjointTol = 1e-12;
inline constexpr Scalar kIterTikTol = 1e-10;

/// max |<Kx, y> - <x, K*y>| / (|Kx||y| + |x||K*y|) over random pairs.
inline Scalar adjoint_mismatch(const LinearOperator &K, std::uint64_t seed, int pairs = 5) {
  Rng rng(seed);
  Scalar worst = 0.0;
  for (int i = 0; i < pairs; ++i) {
    const Vector x = gaussian_vector(K.cols(), rng);
    const Vector y = gaussian_vector(K.rows(), rng);
    const Vector Kx = K.apply(x);
    const Vector Kty = K.adjoint_apply(y);
    const Scalar scale = Kx.norm() * y.norm() + x.norm() * Kty.norm();
    worst = std::max(worst, std::abs(Kx.dot(y) - x.dot(Kty)) / std::max(scale, 1e-300));
  }
  return worst;
}

/// Largest relative gap between analytic Psi and the grid oracle on a log grid.
inline Scalar psi_oracle_error(const IndexFunction &f, std::size_t points = 9,
                               Index grid_points = 100'001) {
  Scalar worst = 0.0;
  for (const Scalar s : log_grid(1e-2, 1e2, points)) {
    // Maximiser of s t - Phi^{-1}(t) sits at t = c (s p c)^{p/(1-p)}.
    const Scalar t_star = f.c() * std::pow(s * f.p() * f.c(), f.p() / (1.0 - f.p()));
    Scalar upper = 4.0 * t_star;
    Scalar oracle = 0.0;
    for (int tries = 0;; ++tries) {
      try {
        oracle = psi_oracle(f, s, GridRange{upper, grid_points});
        break;
      } catch (const GridTooSmall &) {
        if (tries > 20)
          throw;
        upper *= 2.0;
      }
    }
    const Scalar exact = psi(f, s);
    worst = std::max(worst, std::abs(oracle - exact) / exact);
  }
  return worst;
}

/// max_k |u_k^ALM - u_k^IT|_inf over `steps` iterations.
inline Scalar iterated_tikhonov_gap(const LinearOperator &K, const Regularizer &reg,
                                    const Vector &g_obs, Scalar tau, Index steps) {
  const Matrix L = reg.has_identity_L() ? Matrix::Identity(K.cols(), K.cols())
                                        : *reg.as_quadratic().L;
  SubproblemSolver solver(K, reg);
  AlmState state = AlmState::initial(K, g_obs);
  Vector u_it = Vector::Zero(K.cols());
  Scalar worst = 0.0;
  for (Index k = 0; k < steps; ++k) {
    state = alm_step(solver, state, tau, g_obs, K, reg);
    u_it = iterated_tikhonov_step(u_it, tau, g_obs, K, L);
    worst = std::max(worst, (state.u - u_it).lpNorm<Eigen::Infinity>());
  }
  return worst;
}

/// Monitor rows from a set of sweep records.
inline std::vector<CheckRow> monitor_rows(const std::vector<RunRecord> &records,
                                          const SweepOptions &opt) {
  std::vector<CheckRow> rows;
  const auto extreme = [&](auto member, bool take_min) {
    Scalar acc = take_min ? kInf : -kInf;
    for (const auto &r : records) {
      const Scalar v = r.*member;
      if (!std::isnan(v))
        acc = take_min ? std::min(acc, v) : std::max(acc, v);
    }
    return acc;
  };
  if (opt.guler)
    rows.push_back(at_least("guler_min_slack", extreme(&RunRecord::guler_min_slack, true), -kGulerTol));
  if (opt.ppm)
    rows.push_back(at_most("ppm_max_violation", extreme(&RunRecord::ppm_max_violation, false), kPpmTol));
  if (opt.kkt)
    rows.push_back(at_most("kkt_max_violation", extreme(&RunRecord::kkt_max_violation, false), kKktTol));
  rows.push_back(
      at_most("dual_max_increase", extreme(&RunRecord::dual_max_increase, false), kDualIncreaseTol));
  Scalar gap = kInf;
  bool any_exact = false;
  for (const auto &r : records)
    if (r.delta == 0.0 && !std::isnan(r.dual_min_gap)) {
      gap = std::min(gap, r.dual_min_gap);
      any_exact = true;
    }
  if (any_exact)
    rows.push_back(at_least("dual_lower_bound_gap", gap, -kDualLowerTol));
  return rows;
}

inline RateField rate_field_for(const Regularizer &reg) {
  return reg.is_quadratic() ? RateField::Bregman : RateField::NormError;
}

/// Acceptance rules evaluated on a finished sweep.
inline std::vector<CheckRow> sweep_summary(const Problem &pb, const ExperimentConfig &cfg,
                                           const SweepOptions &opt,
                                           const std::vector<RunRecord> &records) {
  std::vector<CheckRow> rows;
  Scalar failed = 0.0;
  for (const auto &r : records)
    if (r.status != RunStatus::Stopped)
      failed += 1.0;
  rows.push_back(at_most("failed_rows", failed, 0.0));

  if (opt.rule != SweepOptions::Rule::Fixed) {
    const RateField field = rate_field_for(pb.reg);
    const Scalar expected = theoretical_exponent(pb.source, pb.reg, field);
    rows.push_back(info("theoretical_exponent", expected));
    try {
      std::vector<RunRecord> ok;
      for (const auto &r : records)
        if (r.status == RunStatus::Stopped)
          ok.push_back(r);
      const auto fit = fit_rate(ok, field);
      rows.push_back(at_least(field == RateField::Bregman ? "rate_slope_bregman"
                                                           : "rate_slope_norm_error",
                              fit.slope, expected - cfg.rate_tolerance));
      rows.push_back(info("rate_r_squared", fit.r_squared));
    } catch (const std::invalid_argument &) {
      // Too few positive deltas for a fit; nothing to assert.
    }
    if (cfg.bound_stability) {
      const auto cal = check_mainthm_bound(records, pb.phi, field);
      const auto ratio = [](const RatioSeries &s) {
        return s.all_finite_positive && s.median > 0.0 ? s.max / s.median : kInf;
      };
      rows.push_back(at_most("bound_ratio_distance", ratio(cal.distance), 3.0));
      rows.push_back(at_most("bound_ratio_residual", ratio(cal.residual), 3.0));
      rows.push_back(at_most("bound_ratio_dual", ratio(cal.dual), 3.0));
    }
  }
  if (opt.rule == SweepOptions::Rule::Morozov) {
    Scalar worst = 0.0, growth_failures = 0.0;
    for (const auto &r : records) {
      if (r.status != RunStatus::Stopped)
        continue;
      worst = std::max(worst, r.residual_at_stop / (opt.rho * r.delta));
      if (!r.morozov_growth_ok.value_or(false))
        growth_failures += 1.0;
    }
    rows.push_back(at_most("morozov_residual_over_rho_delta", worst, 1.0));
    rows.push_back(at_most("morozov_growth_failures", growth_failures, 0.0));
  }
  if (!std::isnan(pb.restricted_sigma_min))
    rows.push_back(at_least("restricted_sigma_min", pb.restricted_sigma_min, 1e-6));
  for (auto &r : monitor_rows(records, opt))
    rows.push_back(std::move(r));
  if (cfg.vi_samples > 0 && pb.vi) {
    const auto rep = verify_variational_inequality(pb, *pb.vi, cfg.vi_samples);
    rows.push_back(at_least("vi_worst_slack", rep.worst_normalized_slack, -kViTol));
  }
  return rows;
}

/// Invariant battery for one problem. Only the first delta and seed are run.
inline std::vector<CheckRow> run_check_battery(const Problem &pb, const ExperimentConfig &cfg) {
  std::vector<CheckRow> rows;
  rows.push_back(at_most("psi_oracle_rel_error", psi_oracle_error(pb.phi), kPsiOracleTol));

  const auto sgrid = log_grid(1e-6, 1e6, 200);
  const bool phi_mono = check_phi_ratio_monotone(pb.phi, sgrid);
  const bool psi_mono = check_psi_growth_monotone(pb.phi, sgrid);
  rows.push_back(at_least("phi_psi_monotone_agree", phi_mono == psi_mono && phi_mono ? 1.0 : 0.0, 1.0));

  rows.push_back(at_most("adjoint_mismatch", adjoint_mismatch(pb.K, 11), kAdjointTol));

  auto opt = make_sweep_options(cfg, 1);
  opt.guler = opt.ppm = opt.kkt = true;
  opt.deltas = {cfg.deltas.front()};
  opt.seeds = {cfg.seeds.front()};
  const auto records = sweep(pb, opt);
  Scalar failed = 0.0;
  for (const auto &r : records)
    if (r.status != RunStatus::Stopped)
      failed += 1.0;
  rows.push_back(at_most("failed_runs", failed, 0.0));
  for (auto &r : monitor_rows(records, opt))
    rows.push_back(std::move(r));
  if (opt.rule == SweepOptions::Rule::Morozov)
    rows.push_back(at_most("morozov_growth_failures",
                           records.front().morozov_growth_ok.value_or(false) ? 0.0 : 1.0, 0.0));

  if (pb.vi) {
    const auto rep = verify_variational_inequality(pb, *pb.vi, cfg.vi_samples ? cfg.vi_samples : 1000);
    rows.push_back(at_least("vi_worst_slack", rep.worst_normalized_slack, -kViTol));
  }
  if (pb.reg.is_quadratic()) {
    const Vector g_obs = add_noise(pb.g, cfg.deltas.front(), cfg.seeds.front());
    rows.push_back(at_most("iterated_tikhonov_gap",
                           iterated_tikhonov_gap(pb.K, pb.reg, g_obs, cfg.schedule.tau(1), 20),
                           kIterTikTol));
  }
  return rows;
}

inline std::filesystem::path prepare_output(const ExperimentConfig &cfg,
                                            const std::optional<std::string> &out_override) {
  const std::filesystem::path dir = out_override ? *out_override : cfg.output_directory;
  std::filesystem::create_directories(dir);
  return dir;
}

inline int cmd_solve(const ExperimentConfig &cfg, const std::optional<std::string> &out_dir,
                     std::ostream &os = std::cout) {
  if (cfg.deltas.size() != 1)
    throw ConfigError({"solve: noise must specify exactly one delta"});
  const auto pb = make_problem(cfg);
  const Scalar delta = cfg.deltas.front();
  const auto seed = cfg.seeds.front();
  auto opt = make_sweep_options(cfg, 1);
  const Vector g_obs = add_noise(pb.g, delta, seed);
  const auto stop = stopping_rule_for(pb, opt, delta);
  const auto ro = run_options_for(pb, opt, seed);
  const auto res = run(pb.K, pb.reg, g_obs, opt.schedule, stop, ro);

  const auto dir = prepare_output(cfg, out_dir);
  std::vector<std::vector<std::string>> rows;
  for (const auto &r : res.records)
    rows.push_back({csv::integer(r.k), csv::num(r.tau), csv::num(r.t), csv::num(r.residual),
                    csv::num(r.J_value), csv::num(r.dual_norm), csv::num(r.dual_objective),
                    csv::num(r.bregman), csv::num(r.norm_error), csv::num(r.guler_min_slack),
                    csv::num(r.ppm_violation), csv::num(r.kkt_violation)});
  csv::write(dir / "iterates.csv",
             {"k", "tau_k", "t_k", "residual", "J_value", "dual_norm", "dual_objective", "bregman",
              "norm_error", "guler_min_slack", "ppm_violation", "kkt_violation"},
             rows);

  os << "solve: " << res.records.size() << " iterations, status " << to_string(res.status);
  if (!res.message.empty())
    os << " (" << res.message << ")";
  os << "\n";
  if (res.status == RunStatus::SolverFailure || res.status == RunStatus::SafetyCap)
    return kExitSolver;
  if (res.status == RunStatus::BoundViolation)
    return kExitAcceptance;

  const auto rec = summarize_run(pb, opt, delta, seed, res);
  auto checks = monitor_rows({rec}, opt);
  if (opt.rule == SweepOptions::Rule::Morozov) {
    checks.push_back(at_most("morozov_residual_over_rho_delta",
                             rec.residual_at_stop / (opt.rho * delta), 1.0));
    checks.push_back(
        at_most("morozov_growth_failures", rec.morozov_growth_ok.value_or(false) ? 0.0 : 1.0, 0.0));
  }
  print_checks(os, checks);
  return all_pass(checks) ? kExitPass : kExitAcceptance;
}

inline void write_records(const std::filesystem::path &path, const std::vector<RunRecord> &records) {
  std::vector<std::vector<std::string>> rows;
  for (const auto &r : records) {
    const std::string growth =
        r.morozov_growth_ok ? (*r.morozov_growth_ok ? "true" : "false") : "na";
    rows.push_back({csv::num(r.delta), std::to_string(r.seed), csv::integer(r.n_stop),
                    csv::num(r.t_stop), csv::num(r.residual_at_stop), csv::num(r.bregman_to_truth),
                    csv::num(r.norm_error), csv::num(r.dual_norm), growth, to_string(r.status),
                    csv::num(r.guler_min_slack), csv::num(r.ppm_max_violation),
                    csv::num(r.kkt_max_violation), csv::num(r.dual_max_increase)});
  }
  csv::write(path,
             {"delta", "seed", "n_stop", "t_stop", "residual", "bregman", "norm_error", "dual_norm",
              "morozov_growth_ok", "status", "guler_min_slack", "ppm_max_violation",
              "kkt_max_violation", "dual_max_increase"},
             rows);
}

inline int cmd_sweep(const ExperimentConfig &cfg, const std::optional<std::string> &out_dir,
                     unsigned threads, std::ostream &os = std::cout) {
  const auto pb = make_problem(cfg);
  const auto opt = make_sweep_options(cfg, threads);
  const auto records = sweep(pb, opt);
  const auto summary = sweep_summary(pb, cfg, opt, records);
  const auto dir = prepare_output(cfg, out_dir);
  write_records(dir / "records.csv", records);
  write_checks(dir / "summary.csv", summary);
  print_checks(os, summary);
  const bool solver_failure = std::any_of(records.begin(), records.end(), [](const RunRecord &r) {
    return r.status == RunStatus::SolverFailure || r.status == RunStatus::SafetyCap;
  });
  if (solver_failure)
    return kExitSolver;
  return all_pass(summary) ? kExitPass : kExitAcceptance;
}

inline int cmd_check(const ExperimentConfig &cfg, const std::optional<std::string> &out_dir,
                     std::ostream &os = std::cout) {
  const auto pb = make_problem(cfg);
  const auto rows = run_check_battery(pb, cfg);
  const auto dir = prepare_output(cfg, out_dir);
  write_checks(dir / "check.csv", rows);
  print_checks(os, rows);
  return all_pass(rows) ? kExitPass : kExitAcceptance;
}

} // namespace almreg
