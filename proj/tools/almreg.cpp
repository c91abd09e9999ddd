#include "almreg/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char **argv) {
  using namespace almreg;
  CLI::App app{"ALM / Bregman iteration for linear ill-posed problems"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> out_dir;
  unsigned threads = 1;
  std::optional<std::uint64_t> seed_override;

  const auto add_common = [&](CLI::App *sub) {
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--out", out_dir, "output directory (overrides output.directory)");
    sub->add_option("--threads", threads, "worker threads for sweep cells")
        ->check(CLI::PositiveNumber);
    sub->add_option("--seed-override", seed_override, "replace the noise seeds by this seed");
  };
  auto *solve = app.add_subcommand("solve", "run one ALM trajectory and write iterates.csv");
  auto *sweep = app.add_subcommand("sweep", "run a delta x seed sweep and write records/summary");
  auto *check = app.add_subcommand("check", "run the invariant battery");
  for (auto *sub : {solve, sweep, check})
    add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitPass : kExitUsage;
  }

  try {
    auto cfg = load_config(config_path);
    if (seed_override)
      cfg.seeds = {*seed_override};
    if (solve->parsed())
      return cmd_solve(cfg, out_dir);
    if (sweep->parsed())
      return cmd_sweep(cfg, out_dir, threads);
    return cmd_check(cfg, out_dir);
  } catch (const ConfigError &e) {
    std::cerr << "config error:\n" << e.what() << "\n";
    return kExitUsage;
  } catch (const ConstructionError &e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument &e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception &e) {
    std::cerr << "internal failure: " << e.what() << "\n";
    return kExitSolver;
  }
}
