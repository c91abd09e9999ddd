#include "almreg/commands.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace almreg;
namespace fs = std::filesystem;

namespace {

const std::string kMinimal = R"({
  "problem": {"operator": {"kind": "diagonal", "size": 20, "decay": 1.0}},
  "regularizer": {"kind": "quadratic"},
  "source": {"kind": "standard"},
  "noise": {"deltas": [0.01]},
  "stopping": {"rule": "apriori"}
})";

std::string replace(std::string s, const std::string &from, const std::string &to) {
  const auto pos = s.find(from);
  EXPECT_NE(pos, std::string::npos) << from;
  return s.replace(pos, from.size(), to);
}

std::vector<std::string> config_problems(const std::string &text) {
  try {
    parse_config(text);
  } catch (const ConfigError &e) {
    return e.problems();
  }
  return {};
}

bool mentions(const std::vector<std::string> &v, const std::string &needle) {
  return std::any_of(v.begin(), v.end(), [&](const std::string &s) { return s.find(needle) != std::string::npos; });
}

fs::path scratch(const std::string &name) {
  const fs::path p = fs::temp_directory_path() / ("almreg_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string &args) {
  const std::string cmd = std::string(ALMREG_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string config_path(const std::string &name) { return std::string(ALMREG_CONFIG_DIR) + "/" + name; }

std::string slurp(const fs::path &p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path &p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ','))
      cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

} // namespace

TEST(Config, MinimalParses) {
  const auto cfg = parse_config(kMinimal);
  EXPECT_EQ(cfg.deltas, std::vector<Scalar>{0.01});
  EXPECT_EQ(cfg.rule, SweepOptions::Rule::APriori);
  EXPECT_EQ(cfg.regularizer.kind, RegularizerSpec::Kind::Quadratic);
  const auto pb = make_problem(cfg);
  EXPECT_EQ(pb.u_true.size(), 20);
}

TEST(Config, AllShippedConfigsParse) {
  for (const auto &e : fs::directory_iterator(ALMREG_CONFIG_DIR))
    EXPECT_NO_THROW(load_config(e.path().string())) << e.path();
}

TEST(Config, RejectsRhoAtMostOne) {
  const auto probs = config_problems(replace(kMinimal, R"("rule": "apriori")", R"("rule": "morozov", "rho": 0.9)"));
  ASSERT_EQ(probs.size(), 1u);
  EXPECT_TRUE(mentions(probs, "morozov requires rho > 1")) << probs.front();
}

TEST(Config, RejectsPhiExponentAboveHalf) {
  const auto text = replace(kMinimal, R"("stopping")", R"("phi": {"c": 1.0, "p": 0.7}, "stopping")");
  EXPECT_TRUE(mentions(config_problems(text), "exponent cap"));
}

TEST(Config, RejectsUnknownKeysAndBatchesErrors) {
  auto text = replace(kMinimal, R"("kind": "standard")", R"("kind": "standard", "colour": 3)");
  text = replace(text, R"("deltas": [0.01])", R"("deltas": [-0.01])");
  const auto probs = config_problems(text);
  EXPECT_GE(probs.size(), 2u);
  EXPECT_TRUE(mentions(probs, "colour"));
  EXPECT_TRUE(mentions(probs, "delta"));
}

TEST(Config, MorozovNeedsBoundedSchedule) {
  auto text = replace(kMinimal, R"("rule": "apriori")", R"("rule": "morozov", "rho": 2.0)");
  text = replace(text, R"("stopping")", R"("solver": {"tau": {"kind": "geometric", "tau0": 1.0, "ratio": 2.0}}, "stopping")");
  EXPECT_FALSE(config_problems(text).empty());
}

TEST(Config, ZeroNoiseOnlyWithFixedRule) {
  EXPECT_FALSE(config_problems(replace(kMinimal, "[0.01]", "[0.0]")).empty());
}

TEST(Config, ParseErrorReportsLine) {
  try {
    parse_config("{\n  \"problem\": {\n    oops\n}");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError &e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Csv, NumberFormat) {
  EXPECT_EQ(csv::num(0.1), "1.000000000000000e-01");
  EXPECT_EQ(csv::num(-2.5e-7), "-2.500000000000000e-07");
  EXPECT_EQ(csv::num(std::nan("")), "nan");
}

TEST(Checks, WrongAdjointIsCaught) {
  auto pb = build_problem(make_test_operator({OperatorSpec::DiagonalDecay{20, 1.0}}),
                          Regularizer::quadratic_identity(), SourceSpec::standard(1));
  const Vector d = pb.K.to_dense().diagonal();
  pb.K = LinearOperator::custom(
      20, 20, [d](const Vector &u) { return Vector(d.cwiseProduct(u)); },
      [d](const Vector &g) { return Vector(1.01 * d.cwiseProduct(g)); });
  EXPECT_GT(adjoint_mismatch(pb.K, 11), kAdjointTol);
  const auto rows = run_check_battery(pb, parse_config(kMinimal));
  const auto it = std::find_if(rows.begin(), rows.end(), [](const CheckRow &r) { return r.name == "adjoint_mismatch"; });
  ASSERT_NE(it, rows.end());
  EXPECT_FALSE(it->pass);
  EXPECT_FALSE(all_pass(rows));
}

TEST(Checks, BatteryPassesOnMinimal) {
  const auto cfg = parse_config(kMinimal);
  const auto rows = run_check_battery(make_problem(cfg), cfg);
  for (const auto &r : rows)
    EXPECT_TRUE(r.pass) << r.name << " " << r.value;
}

TEST(Cli, ScalarToySolveMatchesRecursion) {
  const auto out = scratch("toy");
  ASSERT_EQ(run_cli("solve --config " + config_path("scalar_toy.json") + " --out " + out.string()), 0);
  const auto rows = read_csv(out / "iterates.csv");
  ASSERT_EQ(rows.size(), 21u);
  EXPECT_EQ(rows[0][0], "k");
  for (int k = 1; k <= 20; ++k) {
    // residual = |u_k - 2| = 2^{1-k}
    EXPECT_NEAR(std::stod(rows[k][3]), std::pow(2.0, 1 - k), 1e-14) << k;
    EXPECT_EQ(std::stod(rows[k][2]), static_cast<Scalar>(k));
  }
}

TEST(Cli, MorozovSolveStopsBelowRhoDelta) {
  const auto out = scratch("morozov");
  const fs::path cfg = out / "cfg.json";
  std::ofstream(cfg) << replace(kMinimal, R"("rule": "apriori")", R"("rule": "morozov", "rho": 1.5)");
  ASSERT_EQ(run_cli("solve --config " + cfg.string() + " --out " + out.string()), 0);
  const auto rows = read_csv(out / "iterates.csv");
  ASSERT_GE(rows.size(), 2u);
  EXPECT_LE(std::stod(rows.back()[3]), 1.5 * 0.01);
  if (rows.size() > 2) {
    EXPECT_GT(std::stod(rows[rows.size() - 2][3]), 1.5 * 0.01);
  }
}

TEST(Cli, CheckPassesOnShippedConfigs) {
  for (const auto &name : {"standard_apriori.json", "holder_nu025_morozov_rho15.json", "sparsity_q1_apriori.json",
                           "tikhonov_morozov_nu025.json"}) {
    const auto out = scratch("check");
    EXPECT_EQ(run_cli("check --config " + config_path(name) + " --out " + out.string()), 0) << name;
    EXPECT_TRUE(fs::exists(out / "check.csv"));
  }
}

TEST(Cli, UsageErrorsExitTwo) {
  const auto out = scratch("usage");
  const fs::path bad = out / "bad.json";
  std::ofstream(bad) << replace(kMinimal, R"("rule": "apriori")", R"("rule": "morozov", "rho": 0.9)");
  EXPECT_EQ(run_cli("solve --config " + bad.string() + " --out " + out.string()), 2);
  EXPECT_EQ(run_cli("solve --config " + (out / "missing.json").string()), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("sweep --config " + config_path("scalar_toy.json") + " --threads 0"), 2);
}

TEST(Cli, InnerSolverFailureExitsThree) {
  const auto out = scratch("fail");
  const fs::path cfg = out / "cfg.json";
  std::ofstream(cfg) << R"({
  "problem": {"operator": {"kind": "dense", "rows": 10, "cols": 20, "seed": 5}},
  "regularizer": {"kind": "power_sparsity", "q": 1.0},
  "source": {"kind": "standard", "support_size": 2},
  "noise": {"deltas": [0.01]},
  "solver": {"inner_tol": 1e-15, "max_inner": 2},
  "stopping": {"rule": "fixed", "iterations": 3}
})";
  EXPECT_EQ(run_cli("solve --config " + cfg.string() + " --out " + out.string()), 3);
}

TEST(Cli, SweepOutputIsReproducible) {
  const auto a = scratch("rep_a");
  const auto b = scratch("rep_b");
  const auto cfg = config_path("standard_morozov_rho3.json");
  EXPECT_EQ(run_cli("sweep --config " + cfg + " --out " + a.string() + " --seed-override 4"), 0);
  EXPECT_EQ(run_cli("sweep --config " + cfg + " --out " + b.string() + " --seed-override 4"), 0);
  EXPECT_EQ(slurp(a / "records.csv"), slurp(b / "records.csv"));
  EXPECT_EQ(slurp(a / "summary.csv"), slurp(b / "summary.csv"));
  const auto rows = read_csv(a / "records.csv");
  ASSERT_EQ(rows.size(), 9u);
  for (std::size_t i = 1; i < rows.size(); ++i)
    EXPECT_EQ(rows[i][1], "4");
}
