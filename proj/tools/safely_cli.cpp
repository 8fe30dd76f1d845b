#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <spdlog/spdlog.h>

#include "safely/cli.hpp"
#include "safely/common.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Receding-horizon planner for uncertain moving obstacles"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log every planning cycle");

  safely::RunOptions run;
  std::string seed_range;
  auto* run_cmd = app.add_subcommand("run", "Simulate a scenario and write logs");
  run_cmd->add_option("--scenario", run.scenario, "Scenario JSON file")->required();
  auto* seed_opt = run_cmd->add_option("--seed", seed_range, "Seed (overrides the scenario)");
  run_cmd->add_option("--seeds", seed_range, "Inclusive seed range A..B")->excludes(seed_opt);
  run_cmd->add_option("--out", run.out_dir, "Output directory");
  run_cmd->add_option("--set", run.overrides, "Override a scenario field, key.path=value");
  run_cmd->add_flag("--data-only", run.data_only, "Skip the SVG figure");
  bool no_timing = false;
  run_cmd->add_flag("--no-timing", no_timing, "Record zero solve times for reproducible output");

  safely::AuditOptions audit;
  auto* audit_cmd = app.add_subcommand("audit", "Monte Carlo check of every logged plan");
  audit_cmd->add_option("--log", audit.log, "runlog.jsonl")->required();
  audit_cmd->add_option("--samples", audit.samples, "Samples per plan");

  safely::SlaterOptions slater;
  std::uint64_t slater_seed = 0;
  auto* slater_cmd = app.add_subcommand("slater", "Chebyshev radius of the first refined QP");
  slater_cmd->add_option("--scenario", slater.scenario, "Scenario JSON file")->required();
  auto* sseed = slater_cmd->add_option("--seed", slater_seed, "Seed");
  slater_cmd->add_option("--set", slater.overrides, "Override a scenario field");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : safely::kExitBadInput;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::warn);

  try {
    if (*run_cmd) {
      if (!seed_range.empty()) run.seeds = safely::parse_seed_range(seed_range);
      run.timing = !no_timing;
      if (const char* t = std::getenv("SAFELY_THREADS")) run.threads = std::max(1, std::atoi(t));
      return safely::cmd_run(run, std::cout, std::cerr);
    }
    if (*audit_cmd) return safely::cmd_audit(audit, std::cout, std::cerr);
    if (*sseed) slater.seed = slater_seed;
    return safely::cmd_slater(slater, std::cout, std::cerr);
  } catch (const safely::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return safely::kExitBadInput;
  }
}
