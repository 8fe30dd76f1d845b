#include "safely/cli.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <ostream>
#include <spdlog/fmt/fmt.h>
#include <thread>

#include "safely/report.hpp"
#include "safely/sim.hpp"

namespace safely {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::uint64_t> parse_seed_range(const std::string& text) {
  auto parse = [&](const std::string& s) -> std::uint64_t {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (s.empty() || used != s.size() || s.front() == '-') throw ConfigError("bad seed range '" + text + "'");
    return v;
  };
  const auto dots = text.find("..");
  if (dots == std::string::npos) return {parse(text)};
  const std::uint64_t a = parse(text.substr(0, dots)), b = parse(text.substr(dots + 2));
  if (b < a) throw ConfigError("bad seed range '" + text + "': end before start");
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = a; s <= b; ++s) seeds.push_back(s);
  return seeds;
}

namespace {

int exit_code(Outcome o) {
  switch (o) {
    case Outcome::Reached: return kExitReached;
    case Outcome::PlannerFailed: return kExitPlannerFailed;
    case Outcome::Collision: return kExitCollision;
    case Outcome::MaxCycles: return kExitMaxCycles;
  }
  return kExitBadInput;
}

json load_document(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open scenario file '" + path + "'");
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("scenario '" + path + "': " + e.what());
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return doc;
}

Scenario scenario_with_seed(json doc, std::optional<std::uint64_t> seed) {
  if (seed) doc["seed"] = *seed;
  try {
    return parse_scenario(doc);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
}

json write_outputs(const RunLog& log, const fs::path& dir, bool data_only) {
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "runlog.jsonl");
    write_runlog(f, log);
  }
  {
    std::ofstream f(dir / "trajectory.csv");
    write_trajectory_csv(f, log);
  }
  const json summary = summary_json(log);
  {
    std::ofstream f(dir / "summary.json");
    f << summary.dump(2) << '\n';
  }
  if (!data_only) {
    std::ofstream f(dir / "trajectory.svg");
    write_svg(f, log);
  }
  return summary;
}

}  // namespace

int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err) {
  json doc;
  std::vector<std::optional<std::uint64_t>> seeds;
  try {
    doc = load_document(options.scenario, options.overrides);
    if (options.seeds.empty()) {
      seeds.push_back(std::nullopt);
    } else {
      for (auto s : options.seeds) seeds.push_back(s);
    }
    for (const auto& s : seeds) scenario_with_seed(doc, s);  // validate up front
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadInput;
  }

  const bool batch = seeds.size() > 1;
  std::vector<BatchRow> rows(seeds.size());
  std::vector<int> codes(seeds.size(), kExitReached);
  std::vector<std::string> failures(seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex io;

  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        const Scenario sc = scenario_with_seed(doc, seeds[i]);
        EpisodeOptions eo;
        eo.timing = options.timing;
        const RunLog log = run_episode(sc, eo);
        const fs::path dir = batch ? fs::path(options.out_dir) / fmt::format("seed_{}", sc.seed)
                                   : fs::path(options.out_dir);
        rows[i] = {sc.seed, write_outputs(log, dir, options.data_only)};
        codes[i] = exit_code(log.outcome);
        std::lock_guard<std::mutex> lock(io);
        out << fmt::format("seed {}: {} after {} cycles\n", sc.seed, to_string(log.outcome), log.cycles.size());
      } catch (const std::exception& e) {
        codes[i] = kExitBadInput;
        failures[i] = e.what();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(options.threads, static_cast<int>(seeds.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < seeds.size(); ++i)
    if (!failures[i].empty()) err << "error: " << failures[i] << '\n';
  if (batch) {
    fs::create_directories(options.out_dir);
    std::ofstream f(fs::path(options.out_dir) / "aggregate.csv");
    write_aggregate_csv(f, rows);
  }
  for (int c : codes)
    if (c != kExitReached) return c;
  return kExitReached;
}

int cmd_audit(const AuditOptions& options, std::ostream& out, std::ostream& err) {
  LoggedRun run;
  Scenario sc;
  try {
    std::ifstream f(options.log);
    if (!f) throw ConfigError("cannot open run log '" + options.log + "'");
    run = read_runlog(f);
    sc = parse_scenario(run.header.at("scenario"));
    if (options.samples <= 0) throw ConfigError("--samples must be positive");
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadInput;
  }
  if (run.cycles.empty()) {
    err << "error: run log has no cycles\n";
    return kExitBadInput;
  }

  const auto model = sc.make_robot();
  const auto models = sc.obstacle_models();
  const int pd = model->position_dim();
  for (const auto& c : run.cycles) {
    const int cycle = c.at("cycle").get<int>();
    const auto& em = c.at("executed_margin");
    if (!em.is_null() && em.get<double>() < -1e-6) {
      out << fmt::format("cycle {}: executed position inside a keep-out (margin {:.3g})\n", cycle, em.get<double>());
      return kExitAuditFailed;
    }
    std::vector<GaussianBelief> beliefs;
    for (const auto& b : c.at("beliefs")) beliefs.push_back(belief_from_json(b));
    const PlanIterate plan = plan_from_json(c.at("x_pr"));
    std::vector<Vec> positions;
    for (int t = 1; t <= plan.horizon(); ++t) positions.push_back(plan.state(t).head(pd));
    const auto est = estimate_collide_pr(positions, beliefs, models, options.samples,
                                         sc.seed * 1000003ULL + static_cast<std::uint64_t>(cycle));
    if (est.p > sc.alpha + 3.0 * est.se) {
      out << fmt::format("cycle {}: estimated collision probability {:.5f} (se {:.5f}) exceeds alpha {}\n", cycle,
                         est.p, est.se, sc.alpha);
      return kExitAuditFailed;
    }
  }
  out << fmt::format("audit passed: {} cycles, {} samples each\n", run.cycles.size(), options.samples);
  return kExitReached;
}

int cmd_slater(const SlaterOptions& options, std::ostream& out, std::ostream& err) {
  Scenario sc;
  try {
    sc = scenario_with_seed(load_document(options.scenario, options.overrides), options.seed);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadInput;
  }
  const auto model = sc.make_robot();
  const Vec x0 = sc.initial_state(*model);
  std::vector<GaussianBelief> beliefs;
  for (const auto& o : sc.obstacles) beliefs.push_back(o.initial);

  // The refined QP of cycle 0. When planning itself fails, the half-spaces are
  // built around the initial guess instead so the radius is still reported.
  KeepOutGrid keepouts;
  PlanIterate around;
  try {
    CycleResult cr = plan_cycle(sc, *model, x0, beliefs, nullptr, -1);
    keepouts = std::move(cr.keepouts);
    around = cr.sqp.plan;
  } catch (const std::exception& e) {
    err << "warning: planning failed (" << e.what() << "); using the initial guess\n";
    std::vector<std::vector<GaussianBelief>> horizon;
    const auto models = sc.obstacle_models();
    for (int o = 0; o < sc.num_obstacles(); ++o) horizon.push_back(propagate_horizon(beliefs[o], models[o], sc.T));
    keepouts = build_keepouts(horizon, {sc.alpha, sc.T, std::max(1, sc.num_obstacles())}, models, sc.l0_policy);
    around = initial_guess(*model, x0, sc.cost.goal, sc.T, keepouts);
  }
  const auto hs = build_supporting_halfspaces(*model, keepouts, around);
  const auto rows = hs.position_rows();
  const GoalCost cost(*model, sc.cost.goal);
  const QuadraticProgram qp = assemble_qp(*model, {}, around, cost, sc.planner.slack_weight, &rows);
  const ChebyshevResult r = feasible_set_radius(qp);
  if (r.unbounded) {
    out << "chebyshev radius: unbounded\n";
    return kExitReached;
  }
  out << fmt::format("chebyshev radius: {:.9g}\n", r.radius);
  return r.radius > 0.0 ? kExitReached : kExitNoInterior;
}

}  // namespace safely
