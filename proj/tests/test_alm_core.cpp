#include "almreg/alm_core.hpp"

#include <gtest/gtest.h>

using namespace almreg;

namespace {

struct Small {
  LinearOperator K = LinearOperator::dense(Matrix::Zero(1, 1));
  Vector g;
};

Small random_problem(Index m, Index n, std::uint64_t seed) {
  Rng rng(seed);
  Small s;
  s.K = LinearOperator::dense(gaussian_matrix(m, n, rng) / std::sqrt(static_cast<Scalar>(m)));
  s.g = gaussian_vector(m, rng);
  return s;
}

} // namespace

TEST(TauSchedule, Kinds) {
  const auto c = TauSchedule::constant(2.0);
  EXPECT_EQ(c.tau(1), 2.0);
  EXPECT_EQ(c.tau(100), 2.0);
  EXPECT_TRUE(c.bounded());
  const auto e = TauSchedule::explicit_list({1.0, 3.0});
  EXPECT_EQ(e.tau(1), 1.0);
  EXPECT_EQ(e.tau(2), 3.0);
  EXPECT_EQ(e.tau(7), 3.0);
  const auto g = TauSchedule::geometric(1.0, 2.0);
  EXPECT_EQ(g.tau(4), 8.0);
  EXPECT_FALSE(g.bounded());
  EXPECT_TRUE(TauSchedule::geometric(1.0, 1.0).bounded());
  EXPECT_THROW(TauSchedule::constant(0.0), std::invalid_argument);
  EXPECT_THROW(TauSchedule::geometric(1.0, 0.5), std::invalid_argument);
  EXPECT_THROW(TauSchedule::explicit_list({}), std::invalid_argument);
}

TEST(StoppingRule, Validation) {
  EXPECT_THROW(StoppingRule::morozov(0.9, 0.1), std::invalid_argument);
  try {
    StoppingRule::morozov(1.0, 0.1);
  } catch (const std::invalid_argument &e) {
    EXPECT_STREQ(e.what(), "morozov requires rho > 1");
  }
  EXPECT_THROW(StoppingRule::fixed(0), std::invalid_argument);
  EXPECT_THROW(StoppingRule::apriori(-1.0), std::invalid_argument);
}

TEST(AlmCore, ScalarRecursionOracle) {
  // K = 1, J = u^2/2, g = 2, tau = 1: u_k = 2 (1 - 2^{-k}).
  const auto K = LinearOperator::identity(1);
  const auto reg = Regularizer::quadratic_identity();
  const Vector g = Vector::Constant(1, 2.0);
  AlmState s = AlmState::initial(K, g);
  for (int k = 1; k <= 20; ++k) {
    s = alm_step(s, 1.0, g, K, reg);
    EXPECT_NEAR(s.u(0), 2.0 * (1.0 - std::pow(2.0, -k)), 1e-15) << k;
    EXPECT_EQ(s.t, static_cast<Scalar>(k));
  }
}

TEST(AlmCore, FirstStepIsTikhonov) {
  const auto p = random_problem(6, 4, 3);
  const auto reg = Regularizer::quadratic_identity();
  const Scalar tau = 2.5;
  const auto s = alm_step(AlmState::initial(p.K, p.g), tau, p.g, p.K, reg);
  const Matrix Kd = p.K.to_dense();
  const Vector direct =
      (tau * Kd.transpose() * Kd + Matrix::Identity(4, 4)).ldlt().solve(tau * Kd.transpose() * p.g);
  EXPECT_LT((s.u - direct).norm(), 1e-12);
  EXPECT_LT((s.p - tau * (p.g - Kd * s.u)).norm(), 1e-12);
}

TEST(AlmCore, IteratedTikhonovEquivalence) {
  const auto p = random_problem(8, 8, 21);
  Matrix D = Matrix::Identity(8, 8);
  for (Index i = 1; i < 8; ++i)
    D(i, i - 1) = -1.0;
  for (const auto &[reg, L] : {std::pair{Regularizer::quadratic_identity(), Matrix(Matrix::Identity(8, 8))},
                               std::pair{Regularizer::quadratic(D), D}}) {
    SubproblemSolver solver(p.K, reg);
    AlmState s = AlmState::initial(p.K, p.g);
    Vector u = Vector::Zero(8);
    for (int k = 0; k < 20; ++k) {
      s = alm_step(solver, s, 0.7, p.g, p.K, reg);
      u = iterated_tikhonov_step(u, 0.7, p.g, p.K, L);
      EXPECT_LT((s.u - u).lpNorm<Eigen::Infinity>(), 1e-10);
    }
  }
}

TEST(AlmCore, SparseInnerSolverMeetsKkt) {
  const auto p = random_problem(10, 20, 5);
  const auto reg = Regularizer::power_sparsity(1.0);
  SubproblemSolver solver(p.K, reg, InnerOptions{1e-10, 50'000});
  AlmState s = AlmState::initial(p.K, p.g);
  for (int k = 0; k < 5; ++k) {
    s = alm_step(solver, s, 1.0, p.g, p.K, reg);
    EXPECT_LE(check_kkt_subgradient(s, p.K, reg), 1e-9);
  }
}

TEST(AlmCore, InnerSolverFailureIsReported) {
  const auto p = random_problem(10, 20, 5);
  const auto reg = Regularizer::power_sparsity(1.0);
  RunOptions o;
  o.inner = InnerOptions{1e-14, 3};
  const auto res = run(p.K, reg, p.g, TauSchedule::constant(1.0), StoppingRule::fixed(5), o);
  EXPECT_EQ(res.status, RunStatus::SolverFailure);
  EXPECT_TRUE(res.records.empty());
  SubproblemSolver solver(p.K, reg, InnerOptions{1e-14, 3});
  try {
    solver.solve(1.0, p.g, Vector::Zero(20));
    FAIL() << "expected InnerSolverError";
  } catch (const InnerSolverError &e) {
    EXPECT_GT(e.achieved(), 1e-14);
  }
}

TEST(AlmCore, SafetyCap) {
  const auto p = random_problem(5, 5, 8);
  RunOptions o;
  o.max_iterations = 7;
  const auto res = run(p.K, Regularizer::quadratic_identity(), p.g, TauSchedule::constant(1e-6),
                       StoppingRule::apriori(1e9), o);
  EXPECT_EQ(res.status, RunStatus::SafetyCap);
  EXPECT_EQ(res.records.size(), 7u);
}

TEST(AlmCore, MorozovNeedsBoundedSchedule) {
  const auto p = random_problem(5, 5, 8);
  EXPECT_THROW(run(p.K, Regularizer::quadratic_identity(), p.g, TauSchedule::geometric(1.0, 2.0),
                   StoppingRule::morozov(1.5, 0.1)),
               std::invalid_argument);
}

TEST(AlmCore, MorozovStopsAtFirstSmallResidual) {
  const auto p = random_problem(12, 6, 9);
  const Scalar delta = 0.5 * p.g.norm();
  const auto res = run(p.K, Regularizer::quadratic_identity(), p.g, TauSchedule::constant(0.3),
                       StoppingRule::morozov(1.2, delta));
  ASSERT_EQ(res.status, RunStatus::Stopped);
  EXPECT_LE(res.records.back().residual, 1.2 * delta);
  for (std::size_t i = 0; i + 1 < res.records.size(); ++i)
    EXPECT_GT(res.records[i].residual, 1.2 * delta);
}

TEST(AlmCore, DualObjectiveDecreasesAndMonitorsHold) {
  const auto p = random_problem(10, 20, 13);
  Rng rng(1);
  MonitorSet mon;
  mon.guler = mon.ppm = mon.kkt = true;
  for (const Scalar scale : {0.1, 1.0, 10.0}) {
    Vector d = gaussian_vector(10, rng);
    mon.guler_duals.push_back(scale * d / d.norm());
    Vector e = gaussian_vector(10, rng);
    mon.ppm_probes.push_back(e / e.norm());
  }
  for (const auto &reg : {Regularizer::quadratic_identity(), Regularizer::power_sparsity(1.5)}) {
    RunOptions o;
    o.monitors = mon;
    o.keep_iterates = true;
    const auto res = run(p.K, reg, p.g, TauSchedule::explicit_list({0.5, 1.0, 2.0}),
                         StoppingRule::fixed(15), o);
    ASSERT_EQ(res.status, RunStatus::Stopped);
    EXPECT_LE(dual_objective_max_increase(res.records), 1e-10);
    for (const auto &r : res.records) {
      EXPECT_GE(r.guler_min_slack, -1e-8);
      EXPECT_LE(r.ppm_violation, 1e-8);
      EXPECT_LE(r.kkt_violation, 1e-9);
    }
    for (const auto &s : check_guler(res.records, p.g, p.K, reg, mon.guler_duals))
      EXPECT_TRUE(guler_slack_ok(s));
  }
}

TEST(AlmCore, PpmDetectsNonOptimalPoint) {
  const auto p = random_problem(6, 6, 2);
  const auto reg = Regularizer::quadratic_identity();
  const auto s = alm_step(AlmState::initial(p.K, p.g), 1.0, p.g, p.K, reg);
  const Vector wrong = s.p + 0.5 * Vector::Ones(6);
  std::vector<Vector> probes;
  for (Index i = 0; i < 6; ++i) {
    probes.push_back(Vector::Unit(6, i));
    probes.push_back(-Vector::Unit(6, i));
  }
  EXPECT_LE(check_ppm_optimality(s.p, Vector::Zero(6), 1.0, p.g, p.K, reg, probes), 1e-12);
  EXPECT_GT(check_ppm_optimality(wrong, Vector::Zero(6), 1.0, p.g, p.K, reg, probes), 1e-6);
}

TEST(AlmCore, GrowthBoundFormula) {
  const IndexFunction f(1.0, 0.5);
  // Psi^{-1}(x) = 2 sqrt(x): bound = 2 / (2 sqrt(rho^2 - 1) delta) + tau.
  EXPECT_NEAR(morozov_growth_bound(f, 2.0, 0.1, 1.0), 1.0 / (std::sqrt(3.0) * 0.1) + 1.0, 1e-12);
}

TEST(AlmCore, RunIsDeterministic) {
  const auto p = random_problem(10, 20, 31);
  const auto reg = Regularizer::power_sparsity(1.0);
  const auto a = run(p.K, reg, p.g, TauSchedule::constant(1.0), StoppingRule::fixed(10));
  const auto b = run(p.K, reg, p.g, TauSchedule::constant(1.0), StoppingRule::fixed(10));
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].residual, b.records[i].residual);
    EXPECT_EQ(a.records[i].dual_objective, b.records[i].dual_objective);
  }
  EXPECT_EQ(a.final_state.u, b.final_state.u);
}
