#pragma once

// JSON experiment descriptions. Every violation found while reading a
// document is collected, so one ConfigError reports all of them.

#include "almreg/experiments.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace almreg {

class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(std::vector<std::string> problems)
      : std::runtime_error(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string> &problems() const { return problems_; }

private:
  static std::string join(const std::vector<std::string> &v) {
    std::string out;
    for (const auto &s : v)
      out += (out.empty() ? "" : "\n") + s;
    return out;
  }
  std::vector<std::string> problems_;
};

struct RegularizerSpec {
  enum class Kind { Quadratic, PowerSparsity };
  Kind kind = Kind::Quadratic;
  std::string L = "identity"; // identity | first_difference
  Scalar q = 1.0;
};

struct ExperimentConfig {
  OperatorSpec op{OperatorSpec::DiagonalDecay{100, 1.0}};
  RegularizerSpec regularizer;
  SourceSpec source;
  std::optional<IndexFunction> phi;
  std::vector<Scalar> deltas;
  std::vector<std::uint64_t> seeds{1};
  TauSchedule schedule = TauSchedule::constant(1.0);
  InnerOptions inner;
  Index max_outer = 1'000'000;
  SweepOptions::Rule rule = SweepOptions::Rule::APriori;
  Scalar rho = 1.5;
  Index fixed_iterations = 0;
  bool guler = false;
  bool ppm = false;
  bool kkt = false;
  std::size_t vi_samples = 0;
  std::size_t guler_samples = 20;
  std::size_t ppm_probes = 10;
  std::string output_directory = "out";
  Scalar rate_tolerance = 0.1;
  bool bound_stability = true;
};

/// First-difference matrix (Lu)_i = u_i - u_{i-1} with u_{-1} = 0 (square, invertible).
inline Matrix first_difference(Index n) {
  Matrix L = Matrix::Identity(n, n);
  for (Index i = 1; i < n; ++i)
    L(i, i - 1) = -1.0;
  return L;
}

namespace detail {

class Reader {
public:
  std::vector<std::string> errors;

  using Json = nlohmann::json;

  void keys(const Json &j, const std::string &path, std::initializer_list<const char *> allowed) {
    if (!j.is_object()) {
      errors.push_back(path + ": expected an object");
      return;
    }
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto &item : j.items())
      if (!ok.count(item.key()))
        errors.push_back(path + "." + item.key() + ": unknown key");
  }

  const Json *object(const Json &j, const std::string &key, const std::string &path,
                     bool required) {
    if (!j.is_object() || !j.contains(key)) {
      if (required)
        errors.push_back(path + "." + key + ": missing");
      return nullptr;
    }
    const Json &v = j.at(key);
    if (!v.is_object()) {
      errors.push_back(path + "." + key + ": expected an object");
      return nullptr;
    }
    return &v;
  }

  std::optional<Scalar> number(const Json &j, const std::string &key, const std::string &path,
                               bool required) {
    if (!j.is_object() || !j.contains(key)) {
      if (required)
        errors.push_back(path + "." + key + ": missing");
      return std::nullopt;
    }
    const Json &v = j.at(key);
    if (!v.is_number()) {
      errors.push_back(path + "." + key + ": expected a number");
      return std::nullopt;
    }
    return v.get<Scalar>();
  }

  std::optional<Index> integer(const Json &j, const std::string &key, const std::string &path,
                               bool required, Index min_value) {
    if (!j.is_object() || !j.contains(key)) {
      if (required)
        errors.push_back(path + "." + key + ": missing");
      return std::nullopt;
    }
    const Json &v = j.at(key);
    if (!v.is_number_integer()) {
      errors.push_back(path + "." + key + ": expected an integer");
      return std::nullopt;
    }
    const auto x = v.get<std::int64_t>();
    if (x < min_value) {
      errors.push_back(path + "." + key + ": must be >= " + std::to_string(min_value));
      return std::nullopt;
    }
    return static_cast<Index>(x);
  }

  std::optional<std::string> string(const Json &j, const std::string &key,
                                    const std::string &path, bool required) {
    if (!j.is_object() || !j.contains(key)) {
      if (required)
        errors.push_back(path + "." + key + ": missing");
      return std::nullopt;
    }
    const Json &v = j.at(key);
    if (!v.is_string()) {
      errors.push_back(path + "." + key + ": expected a string");
      return std::nullopt;
    }
    return v.get<std::string>();
  }

  std::optional<bool> boolean(const Json &j, const std::string &key, const std::string &path) {
    if (!j.is_object() || !j.contains(key))
      return std::nullopt;
    const Json &v = j.at(key);
    if (!v.is_boolean()) {
      errors.push_back(path + "." + key + ": expected true or false");
      return std::nullopt;
    }
    return v.get<bool>();
  }

  std::optional<std::vector<Scalar>> numbers(const Json &j, const std::string &key,
                                             const std::string &path) {
    if (!j.is_object() || !j.contains(key))
      return std::nullopt;
    const Json &v = j.at(key);
    if (!v.is_array() || v.empty()) {
      errors.push_back(path + "." + key + ": expected a non-empty array of numbers");
      return std::nullopt;
    }
    std::vector<Scalar> out;
    for (const auto &x : v) {
      if (!x.is_number()) {
        errors.push_back(path + "." + key + ": expected a non-empty array of numbers");
        return std::nullopt;
      }
      out.push_back(x.get<Scalar>());
    }
    return out;
  }
};

inline std::string parse_error_location(const std::string &text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

} // namespace detail

inline ExperimentConfig parse_config(const std::string &text) {
  using Json = nlohmann::json;
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error &e) {
    throw ConfigError({"parse error at " + detail::parse_error_location(text, e.byte) + ": " +
                       e.what()});
  }
  detail::Reader r;
  ExperimentConfig cfg;
  r.keys(doc, "config",
         {"problem", "regularizer", "source", "phi", "noise", "solver", "stopping", "monitors",
          "output", "acceptance"});

  // problem
  if (const auto *pr = r.object(doc, "problem", "config", true)) {
    r.keys(*pr, "problem", {"operator"});
    if (const auto *op = r.object(*pr, "operator", "problem", true)) {
      const auto kind = r.string(*op, "kind", "problem.operator", true);
      const std::string path = "problem.operator";
      if (kind == "diagonal") {
        r.keys(*op, path, {"kind", "size", "decay"});
        const auto n = r.integer(*op, "size", path, true, 1);
        const auto a = r.number(*op, "decay", path, false);
        if (a && *a < 0.0)
          r.errors.push_back(path + ".decay: must be >= 0");
        if (n)
          cfg.op = {OperatorSpec::DiagonalDecay{*n, a.value_or(1.0)}};
      } else if (kind == "identity") {
        r.keys(*op, path, {"kind", "size"});
        if (const auto n = r.integer(*op, "size", path, true, 1))
          cfg.op = {OperatorSpec::DiagonalDecay{*n, 0.0}};
      } else if (kind == "convolution") {
        r.keys(*op, path, {"kind", "size", "width"});
        const auto n = r.integer(*op, "size", path, true, 1);
        const auto w = r.number(*op, "width", path, true);
        if (w && *w < 0.0)
          r.errors.push_back(path + ".width: must be >= 0");
        if (n && w)
          cfg.op = {OperatorSpec::GaussianConvolution{*n, *w}};
      } else if (kind == "dense") {
        r.keys(*op, path, {"kind", "rows", "cols", "seed"});
        const auto m = r.integer(*op, "rows", path, true, 1);
        const auto n = r.integer(*op, "cols", path, true, 1);
        const auto s = r.integer(*op, "seed", path, false, 0);
        if (m && n)
          cfg.op = {OperatorSpec::RandomDense{*m, *n, static_cast<std::uint64_t>(s.value_or(1))}};
      } else if (kind) {
        r.errors.push_back(path + ".kind: expected diagonal, identity, convolution or dense");
      }
    }
  }

  // regularizer
  if (const auto *rg = r.object(doc, "regularizer", "config", true)) {
    const auto kind = r.string(*rg, "kind", "regularizer", true);
    if (kind == "quadratic") {
      r.keys(*rg, "regularizer", {"kind", "L"});
      cfg.regularizer.kind = RegularizerSpec::Kind::Quadratic;
      if (const auto L = r.string(*rg, "L", "regularizer", false)) {
        if (*L != "identity" && *L != "first_difference")
          r.errors.push_back("regularizer.L: expected identity or first_difference");
        cfg.regularizer.L = *L;
      }
    } else if (kind == "power_sparsity") {
      r.keys(*rg, "regularizer", {"kind", "q"});
      cfg.regularizer.kind = RegularizerSpec::Kind::PowerSparsity;
      if (const auto q = r.number(*rg, "q", "regularizer", true)) {
        if (!(*q >= 1.0 && *q < 2.0))
          r.errors.push_back("regularizer.q: must lie in [1, 2)");
        cfg.regularizer.q = *q;
      }
    } else if (kind) {
      r.errors.push_back("regularizer.kind: expected quadratic or power_sparsity");
    }
  }

  // source
  if (const auto *sc = r.object(doc, "source", "config", true)) {
    r.keys(*sc, "source", {"kind", "nu", "seed", "coefficient_decay", "support_size", "dual"});
    const auto kind = r.string(*sc, "kind", "source", true);
    if (kind == "standard") {
      cfg.source.kind = SourceSpec::Kind::Standard;
      if (sc->contains("nu"))
        r.errors.push_back("source.nu: only valid for holder sources");
    } else if (kind == "holder") {
      cfg.source.kind = SourceSpec::Kind::Holder;
      if (const auto nu = r.number(*sc, "nu", "source", true)) {
        if (!(*nu > 0.0 && *nu <= 0.5))
          r.errors.push_back("source.nu: holder requires nu in (0, 1/2]");
        cfg.source.nu = *nu;
      }
    } else if (kind) {
      r.errors.push_back("source.kind: expected standard or holder");
    }
    if (const auto s = r.integer(*sc, "seed", "source", false, 0))
      cfg.source.seed = static_cast<std::uint64_t>(*s);
    if (const auto d = r.number(*sc, "coefficient_decay", "source", false)) {
      if (*d < 0.0)
        r.errors.push_back("source.coefficient_decay: must be >= 0");
      cfg.source.coefficient_decay = *d;
    }
    if (const auto s = r.integer(*sc, "support_size", "source", false, 1))
      cfg.source.support_size = *s;
    if (const auto d = r.numbers(*sc, "dual", "source"))
      cfg.source.dual = Eigen::Map<const Vector>(d->data(), static_cast<Index>(d->size()));
  }
  if (cfg.regularizer.kind == RegularizerSpec::Kind::PowerSparsity && cfg.regularizer.q == 1.0 &&
      cfg.source.support_size == 0)
    r.errors.push_back("source.support_size: required for q = 1");

  // phi
  if (const auto *ph = r.object(doc, "phi", "config", false)) {
    r.keys(*ph, "phi", {"c", "p"});
    const auto c = r.number(*ph, "c", "phi", true);
    const auto p = r.number(*ph, "p", "phi", true);
    if (c && !(*c > 0.0))
      r.errors.push_back("phi.c: must be positive");
    if (p && !(*p > 0.0 && *p <= 0.5))
      r.errors.push_back("phi.p: exponent cap violated, p must lie in (0, 1/2]");
    if (c && p && *c > 0.0 && *p > 0.0 && *p <= 0.5)
      cfg.phi = IndexFunction(*c, *p);
  }

  // noise
  if (const auto *nz = r.object(doc, "noise", "config", true)) {
    r.keys(*nz, "noise", {"deltas", "delta_range", "seeds"});
    if (const auto d = r.numbers(*nz, "deltas", "noise"))
      cfg.deltas = *d;
    if (const auto *rg = r.object(*nz, "delta_range", "noise", false)) {
      r.keys(*rg, "noise.delta_range", {"max", "min", "points"});
      const auto hi = r.number(*rg, "max", "noise.delta_range", true);
      const auto lo = r.number(*rg, "min", "noise.delta_range", true);
      const auto n = r.integer(*rg, "points", "noise.delta_range", true, 2);
      if (!cfg.deltas.empty())
        r.errors.push_back("noise: give either deltas or delta_range, not both");
      else if (hi && lo && n) {
        if (!(*lo > 0.0 && *hi > *lo))
          r.errors.push_back("noise.delta_range: need 0 < min < max");
        else
          cfg.deltas = log_grid(*lo, *hi, static_cast<std::size_t>(*n));
      }
    }
    if (cfg.deltas.empty() && !nz->contains("delta_range") && !nz->contains("deltas"))
      r.errors.push_back("noise: deltas or delta_range required");
    for (const Scalar d : cfg.deltas)
      if (!(d >= 0.0) || !std::isfinite(d)) {
        r.errors.push_back("noise.deltas: entries must be finite and non-negative");
        break;
      }
    if (nz->contains("seeds")) {
      const auto &s = nz->at("seeds");
      cfg.seeds.clear();
      if (!s.is_array() || s.empty())
        r.errors.push_back("noise.seeds: expected a non-empty array of integers");
      else
        for (const auto &x : s) {
          if (!x.is_number_unsigned() && !(x.is_number_integer() && x.get<std::int64_t>() >= 0)) {
            r.errors.push_back("noise.seeds: expected a non-empty array of integers");
            break;
          }
          cfg.seeds.push_back(x.get<std::uint64_t>());
        }
    }
  }

  // solver
  if (const auto *sv = r.object(doc, "solver", "config", false)) {
    r.keys(*sv, "solver", {"tau", "inner_tol", "max_inner", "max_outer"});
    if (const auto *tau = r.object(*sv, "tau", "solver", false)) {
      const auto kind = r.string(*tau, "kind", "solver.tau", true);
      try {
        if (kind == "constant") {
          r.keys(*tau, "solver.tau", {"kind", "value"});
          if (const auto v = r.number(*tau, "value", "solver.tau", true))
            cfg.schedule = TauSchedule::constant(*v);
        } else if (kind == "geometric") {
          r.keys(*tau, "solver.tau", {"kind", "tau0", "ratio"});
          const auto t0 = r.number(*tau, "tau0", "solver.tau", true);
          const auto q = r.number(*tau, "ratio", "solver.tau", true);
          if (t0 && q)
            cfg.schedule = TauSchedule::geometric(*t0, *q);
        } else if (kind == "explicit") {
          r.keys(*tau, "solver.tau", {"kind", "values"});
          if (const auto v = r.numbers(*tau, "values", "solver.tau"))
            cfg.schedule = TauSchedule::explicit_list(*v);
          else if (!tau->contains("values"))
            r.errors.push_back("solver.tau.values: missing");
        } else if (kind) {
          r.errors.push_back("solver.tau.kind: expected constant, geometric or explicit");
        }
      } catch (const std::invalid_argument &e) {
        r.errors.push_back(std::string("solver.tau: ") + e.what());
      }
    }
    if (const auto tol = r.number(*sv, "inner_tol", "solver", false)) {
      if (!(*tol > 0.0))
        r.errors.push_back("solver.inner_tol: must be positive");
      cfg.inner.tol = *tol;
    }
    if (const auto m = r.integer(*sv, "max_inner", "solver", false, 1))
      cfg.inner.max_iterations = *m;
    if (const auto m = r.integer(*sv, "max_outer", "solver", false, 1))
      cfg.max_outer = *m;
  }

  // stopping
  if (const auto *st = r.object(doc, "stopping", "config", true)) {
    const auto rule = r.string(*st, "rule", "stopping", true);
    if (rule == "apriori") {
      r.keys(*st, "stopping", {"rule"});
      cfg.rule = SweepOptions::Rule::APriori;
    } else if (rule == "morozov") {
      r.keys(*st, "stopping", {"rule", "rho"});
      cfg.rule = SweepOptions::Rule::Morozov;
      if (const auto rho = r.number(*st, "rho", "stopping", true)) {
        if (!(*rho > 1.0))
          r.errors.push_back("stopping.rho: morozov requires rho > 1");
        cfg.rho = *rho;
      }
    } else if (rule == "fixed") {
      r.keys(*st, "stopping", {"rule", "iterations"});
      cfg.rule = SweepOptions::Rule::Fixed;
      if (const auto n = r.integer(*st, "iterations", "stopping", true, 1))
        cfg.fixed_iterations = *n;
    } else if (rule) {
      r.errors.push_back("stopping.rule: expected apriori, morozov or fixed");
    }
  }
  if (cfg.rule == SweepOptions::Rule::Morozov && !cfg.schedule.bounded())
    r.errors.push_back("stopping: morozov requires a bounded tau schedule");
  if (cfg.rule != SweepOptions::Rule::Fixed)
    for (const Scalar d : cfg.deltas)
      if (d == 0.0) {
        r.errors.push_back("noise.deltas: delta = 0 is only allowed with the fixed rule");
        break;
      }

  // monitors
  if (const auto *mn = r.object(doc, "monitors", "config", false)) {
    r.keys(*mn, "monitors", {"guler", "ppm", "kkt", "vi_samples", "guler_samples", "ppm_probes"});
    cfg.guler = r.boolean(*mn, "guler", "monitors").value_or(false);
    cfg.ppm = r.boolean(*mn, "ppm", "monitors").value_or(false);
    cfg.kkt = r.boolean(*mn, "kkt", "monitors").value_or(false);
    if (const auto n = r.integer(*mn, "vi_samples", "monitors", false, 0))
      cfg.vi_samples = static_cast<std::size_t>(*n);
    if (const auto n = r.integer(*mn, "guler_samples", "monitors", false, 1))
      cfg.guler_samples = static_cast<std::size_t>(*n);
    if (const auto n = r.integer(*mn, "ppm_probes", "monitors", false, 1))
      cfg.ppm_probes = static_cast<std::size_t>(*n);
  }

  // output
  if (const auto *out = r.object(doc, "output", "config", false)) {
    r.keys(*out, "output", {"directory", "formats"});
    if (const auto d = r.string(*out, "directory", "output", false))
      cfg.output_directory = *d;
    if (out->contains("formats")) {
      const auto &f = out->at("formats");
      if (!f.is_array() || f.empty())
        r.errors.push_back("output.formats: expected a non-empty array");
      else
        for (const auto &x : f)
          if (!x.is_string() || x.get<std::string>() != "csv")
            r.errors.push_back("output.formats: only \"csv\" is supported");
    }
  }

  // acceptance
  if (const auto *ac = r.object(doc, "acceptance", "config", false)) {
    r.keys(*ac, "acceptance", {"rate_tolerance", "bound_stability"});
    if (const auto t = r.number(*ac, "rate_tolerance", "acceptance", false)) {
      if (!(*t >= 0.0))
        r.errors.push_back("acceptance.rate_tolerance: must be >= 0");
      cfg.rate_tolerance = *t;
    }
    if (const auto b = r.boolean(*ac, "bound_stability", "acceptance"))
      cfg.bound_stability = *b;
  }

  if (!r.errors.empty())
    throw ConfigError(std::move(r.errors));
  return cfg;
}

inline ExperimentConfig load_config(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError({"cannot open config file " + path});
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline Regularizer make_regularizer(const ExperimentConfig &cfg, Index n) {
  if (cfg.regularizer.kind == RegularizerSpec::Kind::PowerSparsity)
    return Regularizer::power_sparsity(cfg.regularizer.q);
  if (cfg.regularizer.L == "first_difference")
    return Regularizer::quadratic(first_difference(n));
  return Regularizer::quadratic_identity();
}

/// Builds the synthetic problem; an explicit phi overrides the constructed one.
inline Problem make_problem(const ExperimentConfig &cfg) {
  const auto K = make_test_operator(cfg.op);
  auto pb = build_problem(K, make_regularizer(cfg, K.cols()), cfg.source);
  if (cfg.phi)
    pb.phi = *cfg.phi;
  return pb;
}

inline SweepOptions make_sweep_options(const ExperimentConfig &cfg, unsigned threads) {
  SweepOptions o;
  o.rule = cfg.rule;
  o.rho = cfg.rho;
  o.fixed_iterations = cfg.fixed_iterations;
  o.deltas = cfg.deltas;
  o.seeds = cfg.seeds;
  o.schedule = cfg.schedule;
  o.inner = cfg.inner;
  o.max_iterations = cfg.max_outer;
  o.guler = cfg.guler;
  o.ppm = cfg.ppm;
  o.kkt = cfg.kkt;
  o.guler_samples = cfg.guler_samples;
  o.ppm_probes = cfg.ppm_probes;
  o.threads = threads;
  return o;
}

} // namespace almreg
