#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "hivegate/sim/report.hpp"

int main(int argc, char** argv) {
  CLI::App app{"hivegate-sim: deterministic scenario runner"};
  app.require_subcommand(1);

  std::string scenario_path, out_dir = "sim-out", variant, log_level = "warn";
  std::uint64_t seed = 0;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "run one scenario and write its report");
  run->add_option("scenario", scenario_path, "scenario file")->required()->check(CLI::ExistingFile);
  auto* seed_opt = run->add_option("--seed", seed, "override the scenario's seed");
  run->add_option("--out", out_dir, "report directory");
  run->add_option("--variant", variant, "apply a named variant from the scenario file");
  run->add_option("--log-level", log_level, "trace, debug, info, warn, error, off");
  run->add_flag("--quiet", quiet, "do not print the summary");

  auto* check = app.add_subcommand("check", "validate a scenario file");
  check->add_option("scenario", scenario_path, "scenario file")->required()->check(CLI::ExistingFile);
  check->add_option("--variant", variant, "apply a named variant first");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    auto s = hivegate::sim::load_scenario(scenario_path, variant);
    if (*check) {
      std::cout << s.name << (variant.empty() ? "" : " [" + variant + "]") << ": ok\n";
      return 0;
    }
    std::optional<std::uint64_t> seed_override;
    if (*seed_opt) seed_override = seed;
    auto result = hivegate::sim::run_scenario(s, seed_override);
    hivegate::sim::write_report(result, out_dir);
    if (!quiet) std::cout << result.summary.dump(2) << '\n';
    return result.summary.value("audit_passes", false) ? 0 : 3;
  } catch (const hivegate::ScenarioError& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
}
