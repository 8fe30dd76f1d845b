// Acceptance suite: one PASS/FAIL line per criterion. Exits 0 once every
// criterion has been evaluated; --strict turns any FAIL into exit code 1.

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>

#include "CLI11.hpp"
#include "oracles.hpp"
#include "safely/refine.hpp"
#include "safely/sim.hpp"

using namespace safely;

namespace {

std::string scenario_path(const std::string& name) { return std::string(SAFELY_SCENARIO_DIR) + "/" + name; }

nlohmann::json scenario_doc(const std::string& name) {
  std::ifstream f(scenario_path(name));
  return nlohmann::json::parse(f);
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::vector<Vec> plan_positions(const RobotModel& m, const PlanIterate& p) {
  std::vector<Vec> out;
  for (int t = 1; t <= p.horizon(); ++t) out.push_back(m.position(p.state(t)));
  return out;
}

std::vector<RunLog> run_batch(const Scenario& base, int first, int last) {
  std::vector<RunLog> logs;
  for (int s = first; s <= last; ++s) {
    Scenario sc = base;
    sc.seed = static_cast<std::uint64_t>(s);
    const auto t0 = std::chrono::steady_clock::now();
    logs.push_back(run_episode(sc));
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto& l = logs.back();
    std::string obs;
    for (int o = 0; o < static_cast<int>(l.observation_counts.size()); ++o)
      obs += fmt::format("{}{}", o ? "," : "", l.observation_counts[o]);
    fmt::print(stderr, "  {} seed {}: {} after {} cycles, observations [{}] ({:.1f} s)\n", sc.name, s,
               to_string(l.outcome), l.cycles.size(), obs, sec);
  }
  return logs;
}

// 1. Every logged plan of the 20-seed batch passes the Monte Carlo bound.
Verdict criterion1(const Scenario& sc, const std::vector<RunLog>& logs) {
  const auto model = sc.make_robot();
  const auto models = sc.obstacle_models();
  const long M = 100000;
  int cycles = 0, violations = 0;
  double worst = 0.0, worst_bound = sc.alpha;
  for (std::size_t s = 0; s < logs.size(); ++s) {
    for (const auto& c : logs[s].cycles) {
      const auto est = estimate_collide_pr(plan_positions(*model, c.x_pr), c.beliefs, models, M,
                                           (s + 1) * 1000003ULL + static_cast<std::uint64_t>(c.cycle));
      ++cycles;
      if (est.p > worst) {
        worst = est.p;
        worst_bound = sc.alpha + 3.0 * est.se;
      }
      if (est.p > sc.alpha + 3.0 * est.se) ++violations;
    }
  }
  return {violations == 0 && cycles > 0,
          fmt::format("{} plans, {} above alpha + 3 SE, max p = {:.5f} (bound {:.5f})", cycles, violations, worst,
                      worst_bound)};
}

// 2. The 3-D example reaches the goal in the expected band, safely and fast.
// Reach and cycle count apply to the scenario's own seed; the rest to every
// seed of the batch (logs[k] is seed k + 1).
Verdict criterion2(const Scenario& sc, const std::vector<RunLog>& logs) {
  if (sc.seed < 1 || sc.seed > logs.size()) return {false, "scenario seed outside the batch"};
  const RunLog& own = logs[sc.seed - 1];
  const int own_cycles = static_cast<int>(own.cycles.size());
  const bool own_ok = own.outcome == Outcome::Reached && own_cycles >= 62 && own_cycles <= 142;
  int reached = 0, collisions = 0, o5_obs = 0, o2_first = 0;
  double ms = 0.0;
  long n_cycles = 0;
  for (const auto& l : logs) {
    reached += l.outcome == Outcome::Reached;
    collisions += l.outcome == Outcome::Collision;
    if (l.observation_counts.size() > 4) o5_obs += l.observation_counts[4];
    if (!l.cycles.empty()) {
      const auto& sel = l.cycles.front().report.selected;
      o2_first += std::find(sel.begin(), sel.end(), 1) != sel.end();
    }
    for (const auto& cr : l.cycles) ms += cr.solve_ms;
    n_cycles += static_cast<long>(l.cycles.size());
  }
  const int n = static_cast<int>(logs.size());
  const double mean_ms = n_cycles ? ms / n_cycles : 0.0;
  const bool pass = own_ok && collisions == 0 && o5_obs == 0 && o2_first == n && mean_ms < 1000.0;
  return {pass, fmt::format("seed {}: {} after {} cycles (want 62..142); over {} seeds: {} reached, {} collisions, "
                            "{} observations of O5, O2 selected first in {}, mean solve {:.1f} ms",
                            sc.seed, to_string(own.outcome), own_cycles, n, reached, collisions, o5_obs, o2_first,
                            mean_ms)};
}

// 3. The Dubins example reaches the goal and only ever looks at O2.
Verdict criterion3(const std::vector<RunLog>& logs) {
  int good = 0, reached = 0;
  for (const auto& l : logs) {
    reached += l.outcome == Outcome::Reached;
    bool only_o2 = true;
    for (int o = 0; o < static_cast<int>(l.observation_counts.size()); ++o)
      if (o != 1 && l.observation_counts[o] > 0) only_o2 = false;
    const bool saw_o2 = l.observation_counts.size() > 1 && l.observation_counts[1] > 0;
    good += l.outcome == Outcome::Reached && only_o2 && saw_o2;
  }
  return {good >= 8, fmt::format("{}/{} seeds reached with observations only on O2 ({} reached)", good,
                                 static_cast<int>(logs.size()), reached)};
}

struct SensitivityTally {
  int qps = 0;
  int rows = 0;
  int bound_failures = 0;
  double worst_bound = -kInf;
  int first_order_failures = 0;
  double worst_rel = 0.0;
  double worst_small_rel = 0.0;
};

void audit_qp(const QuadraticProgram& qp, const QpSolution& sol, SensitivityTally& tally) {
  const double delta = 0.01;
  int top = -1;
  for (int i = 0; i < qp.num_in(); ++i) {
    const double lam = sol.lambda_in(i);
    if (lam <= 1e-7) continue;
    if (top < 0 || lam > sol.lambda_in(top)) top = i;
    const SensitivityResult r = sensitivity_audit(qp, sol, i, delta);
    ++tally.rows;
    const double gap = r.p0 - r.predicted_drop - r.p_delta;  // > 0 breaks the bound
    if (gap > 1e-6) ++tally.bound_failures;
    tally.worst_bound = std::max(tally.worst_bound, gap);
  }
  ++tally.qps;
  if (top >= 0) {
    const SensitivityResult r = sensitivity_audit(qp, sol, top, delta);
    const double rel = std::abs(r.predicted_drop - r.actual_drop) / std::abs(r.actual_drop);
    tally.worst_rel = std::max(tally.worst_rel, rel);
    if (!(rel <= 0.2)) ++tally.first_order_failures;
    // The same row at a hundredth of the step separates curvature from a
    // wrong multiplier.
    const SensitivityResult small = sensitivity_audit(qp, sol, top, 1e-4);
    tally.worst_small_rel =
        std::max(tally.worst_small_rel, std::abs(small.predicted_drop - small.actual_drop) / small.actual_drop);
  }
}

// 4. Multiplier sensitivity of refined QPs.
Verdict criterion4(const Scenario& ex1) {
  SensitivityTally tally;
  {
    const auto model = ex1.make_robot();
    std::vector<GaussianBelief> b;
    for (const auto& o : ex1.obstacles) b.push_back(o.initial);
    const CycleResult cr = plan_cycle(ex1, *model, ex1.initial_state(*model), b, nullptr, -1);
    if (!cr.refined.qp_ok) return {false, "ex1 cycle-0 refined QP did not solve"};
    audit_qp(cr.refined.qp, cr.refined.solution, tally);
  }
  std::mt19937 rng(404);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  int attempts = 0;
  const nlohmann::json base = scenario_doc("ex1.json");
  while (tally.qps < 101 && attempts < 1000) {
    ++attempts;
    nlohmann::json doc = base;
    doc["horizon"]["T"] = 10;
    const Scenario proto = parse_scenario(doc);
    const Vec start = proto.initial_state(*proto.make_robot()).head(3);
    const Vec goal = proto.cost.goal;
    // Obstacles scattered around the first stretch of the straight line.
    for (auto& o : doc["obstacles"]) {
      const double s = 0.1 + 0.25 * (U(rng) + 1.0);
      Vec m = start + s * (goal - start);
      for (int i = 0; i < 3; ++i) m(i) += 0.6 * U(rng);
      o["mean0"] = std::vector<double>(m.data(), m.data() + 3);
    }
    Scenario sc;
    try {
      sc = parse_scenario(doc);
    } catch (const ConfigError&) {
      continue;
    }
    const auto model = sc.make_robot();
    std::vector<GaussianBelief> b;
    for (const auto& o : sc.obstacles) b.push_back(o.initial);
    CycleResult cr;
    try {
      cr = plan_cycle(sc, *model, sc.initial_state(*model), b, nullptr, -1);
    } catch (const std::exception&) {
      continue;
    }
    if (!cr.refined.qp_ok || cr.refined.report.selected.empty()) continue;  // want active half-spaces
    audit_qp(cr.refined.qp, cr.refined.solution, tally);
  }
  const bool pass = tally.qps == 101 && tally.bound_failures == 0 && tally.first_order_failures == 0;
  return {pass, fmt::format("{} QPs ({} generated), {} active rows, {} bound violations (largest excess {:.1e}), "
                            "{} first-order misses at delta 0.01 (worst {:.1f}%, worst at delta 1e-4 {:.3f}%)",
                            tally.qps, attempts + 1, tally.rows, tally.bound_failures, tally.worst_bound,
                            tally.first_order_failures, 100.0 * tally.worst_rel, 100.0 * tally.worst_small_rel)};
}

// 5. QP solver against active-set enumeration.
Verdict criterion5() {
  std::mt19937 rng(5005);
  std::uniform_int_distribution<int> dn(1, 10), dm(0, 6);
  QpSolver solver;
  int bad = 0;
  double worst_primal = 0.0, worst_dual = 0.0, worst_kkt = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = dn(rng);
    const int m = dm(rng);
    const int me = std::min({m, n - 1, trial % 3});
    const int mi = m - me;
    const auto qp = oracle::random_feasible_qp(rng, n, me, mi);
    const auto ref = oracle::brute_force_qp(qp);
    const auto sol = solver.solve(qp);
    if (!ref || sol.status != QpStatus::Optimal) {
      ++bad;
      continue;
    }
    const double ep = (sol.y - ref->y).cwiseAbs().maxCoeff();
    double ed = 0.0;
    if (mi) ed = std::max(ed, (sol.lambda_in - ref->lambda_in).cwiseAbs().maxCoeff());
    if (me) ed = std::max(ed, (sol.lambda_eq - ref->lambda_eq).cwiseAbs().maxCoeff());
    const double kkt = kkt_residuals(qp, sol.y, sol.lambda_eq, sol.lambda_in).max();
    worst_primal = std::max(worst_primal, ep);
    worst_dual = std::max(worst_dual, ed);
    worst_kkt = std::max(worst_kkt, kkt);
    if (ep > 1e-5 || ed > 1e-5 || kkt > 1e-6) ++bad;
  }
  return {bad == 0, fmt::format("200 QPs, {} mismatches, max primal err {:.1e}, max dual err {:.1e}, max KKT {:.1e}",
                                bad, worst_primal, worst_dual, worst_kkt)};
}

// 6. Projection against the dense grid oracle.
Verdict criterion6() {
  std::mt19937 rng(6006);
  std::uniform_real_distribution<double> U(-4.0, 4.0), S(0.05, 3.0), A(0.0, M_PI);
  int done = 0, bad = 0;
  double worst = 0.0;
  while (done < 500) {
    const double th = A(rng);
    Mat R(2, 2);
    R << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    const Vec d = (Vec(2) << S(rng), S(rng)).finished();
    const Mat Q = R * d.asDiagonal() * R.transpose();
    const Vec c = (Vec(2) << U(rng) / 4, U(rng) / 4).finished();
    const auto e = KeepOutEllipsoid::make(c, Q);
    const Vec x = (Vec(2) << U(rng), U(rng)).finished();
    if (constraint_value(e, x) <= 1.0) continue;
    ++done;
    const double dp = (project_to_ellipsoid(e, x) - x).norm();
    const double dg = (oracle::grid_projection_2d(e, x) - x).norm();
    worst = std::max(worst, std::abs(dp - dg));
    if (std::abs(dp - dg) > 1e-6) ++bad;
  }
  return {bad == 0, fmt::format("500 pairs, {} mismatches, max distance gap {:.1e}", bad, worst)};
}

// 7. Sampled obstacle paths match the propagated mean and covariance.
Verdict criterion7() {
  const long n = 100000;
  const int t = 10;
  int checked = 0, bad = 0;
  double worst_z = 0.0, worst_cov = 0.0;
  for (const char* name : {"ex1.json", "ex2.json", "hw.json"}) {
    const Scenario sc = load_scenario(scenario_path(name));
    const auto models = sc.obstacle_models();
    std::vector<GaussianBelief> initial;
    for (const auto& o : sc.obstacles) initial.push_back(o.initial);
    const int no = sc.num_obstacles();
    std::vector<Vec> sum(no);
    std::vector<Mat> second(no);
    for (int o = 0; o < no; ++o) {
      sum[o] = Vec::Zero(models[o].state_dim());
      second[o] = Mat::Zero(models[o].state_dim(), models[o].state_dim());
    }
    for (long k = 0; k < n; ++k) {
      GroundTruthWorld w(models, initial, 90000000ULL + static_cast<std::uint64_t>(k));
      for (int o = 0; o < no; ++o) {
        const Vec& x = w.state(o, t);
        sum[o] += x;
        second[o].noalias() += x * x.transpose();
      }
    }
    for (int o = 0; o < no; ++o) {
      const GaussianBelief ref = propagate_horizon(initial[o], models[o], t).back();
      const Vec mean = sum[o] / static_cast<double>(n);
      const Mat cov = second[o] / static_cast<double>(n) - mean * mean.transpose();
      bool ok = true;
      for (int i = 0; i < mean.size(); ++i) {
        const double z = std::abs(mean(i) - ref.mean(i)) / std::sqrt(ref.cov(i, i) / n);
        worst_z = std::max(worst_z, z);
        ok = ok && z <= 3.0;
      }
      const double rel = (cov - ref.cov).norm() / ref.cov.norm();
      worst_cov = std::max(worst_cov, rel);
      ok = ok && rel <= 0.05;
      ++checked;
      bad += !ok;
    }
  }
  return {bad == 0, fmt::format("{} obstacles, {} outside tolerance, max mean error {:.2f} SE, max covariance "
                                "error {:.2f}%",
                                checked, bad, worst_z, 100.0 * worst_cov)};
}

// 8. The refined plan never costs more than the SQP plan.
Verdict criterion8(const std::vector<const std::vector<RunLog>*>& batches) {
  int cycles = 0, bad = 0;
  double worst = -kInf;
  for (const auto* logs : batches)
    for (const auto& l : *logs)
      for (const auto& c : l.cycles) {
        ++cycles;
        const double gap = c.x_pr.objective - c.x_sqp.objective;
        worst = std::max(worst, gap);
        if (gap > 1e-8) ++bad;
      }
  return {bad == 0 && cycles > 0,
          fmt::format("{} cycles, {} violations, max obj(x_pr) - obj(x_sqp) = {:.2e}", cycles, bad, worst)};
}

bool close_rel(double a, double b) { return std::abs(a - b) <= 1e-5 * std::max(1.0, std::abs(b)); }

PlanIterate random_plan(const RobotModel& m, std::mt19937& rng, int T) {
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  PlanIterate p;
  p.states.resize(T + 1, m.state_dim());
  p.inputs.resize(T, m.input_dim());
  for (int i = 0; i < p.states.size(); ++i) p.states.data()[i] = U(rng);
  for (int i = 0; i < p.inputs.size(); ++i) p.inputs.data()[i] = U(rng);
  return p;
}

// Central differences of a cost over the stacked decision vector.
int check_cost(const CostModel& c, const RobotModel& m, std::mt19937& rng, int points) {
  const int T = 6;
  const auto L = layout_for(m, T);
  const double h = 1e-6;
  int bad = 0;
  for (int k = 0; k < points; ++k) {
    const PlanIterate p = random_plan(m, rng, T);
    const Vec g = c.gradient(p);
    bool ok = g.size() == L.size();
    for (int t = 1; t <= T && ok; ++t)
      for (int j = 0; j < m.state_dim(); ++j) {
        PlanIterate a = p, b = p;
        a.states(t, j) += h;
        b.states(t, j) -= h;
        ok = ok && close_rel(g(L.x_index(t) + j), (c.value(a) - c.value(b)) / (2 * h));
      }
    for (int t = 0; t < T && ok; ++t)
      for (int j = 0; j < m.input_dim(); ++j) {
        PlanIterate a = p, b = p;
        a.inputs(t, j) += h;
        b.inputs(t, j) -= h;
        ok = ok && close_rel(g(L.u_index(t) + j), (c.value(a) - c.value(b)) / (2 * h));
      }
    bad += !ok;
  }
  return bad;
}

int check_dynamics(const RobotModel& m, std::mt19937& rng, int points) {
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  const double h = 1e-6;
  int bad = 0;
  for (int k = 0; k < points; ++k) {
    Vec x(m.state_dim()), u(m.input_dim());
    for (int i = 0; i < x.size(); ++i) x(i) = U(rng);
    for (int i = 0; i < u.size(); ++i) u(i) = U(rng);
    Mat fx, fu;
    m.jacobians(x, u, fx, fu);
    bool ok = true;
    for (int j = 0; j < x.size(); ++j) {
      Vec a = x, b = x;
      a(j) += h;
      b(j) -= h;
      const Vec col = (m.step(a, u) - m.step(b, u)) / (2 * h);
      for (int i = 0; i < x.size(); ++i) ok = ok && close_rel(fx(i, j), col(i));
    }
    for (int j = 0; j < u.size(); ++j) {
      Vec a = u, b = u;
      a(j) += h;
      b(j) -= h;
      const Vec col = (m.step(x, a) - m.step(x, b)) / (2 * h);
      for (int i = 0; i < x.size(); ++i) ok = ok && close_rel(fu(i, j), col(i));
    }
    bad += !ok;
  }
  return bad;
}

// 9. Analytic derivatives against central differences.
Verdict criterion9() {
  std::mt19937 rng(9009);
  const Box big{Vec::Constant(2, -10.0), Vec::Constant(2, 10.0)};
  const DubinsVehicle dub(0.5, 0.01, 0.25, -M_PI / 3, M_PI / 3, big);
  const DoubleIntegrator3D di(0.25, 1.0, Box::unbounded(3));
  const int bad_dub = check_dynamics(dub, rng, 100);
  const int bad_di = check_dynamics(di, rng, 100);
  const int bad_goal = check_cost(GoalCost(dub, (Vec(2) << 2.0, 1.0).finished()), dub, rng, 100) +
                       check_cost(GoalCost(di, (Vec(3) << 1.0, -1.0, 0.5).finished()), di, rng, 100);
  std::vector<Vec> targets;
  for (int t = 1; t <= 6; ++t) targets.push_back((Vec(2) << 0.3 * t, -0.5 + 0.1 * t).finished());
  const int bad_att = check_cost(AttentionCost(dub, (Vec(2) << 2.0, 1.0).finished(), 10.0, 0.8, targets), dub, rng, 100);
  const int bad = bad_dub + bad_di + bad_goal + bad_att;
  return {bad == 0, fmt::format("failures: dubins jacobians {}/100, double integrator jacobians {}/100, goal cost "
                                "{}/200, attention cost {}/100",
                                bad_dub, bad_di, bad_goal, bad_att)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks for the planner"};
  bool strict = false;
  std::vector<int> only;
  app.add_flag("--strict", strict, "Exit with status 1 when any criterion fails");
  app.add_option("--only", only, "Criteria to run (default: all)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::err);
  auto wanted = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };

  const Scenario ex1 = load_scenario(scenario_path("ex1.json"));
  const Scenario ex2 = load_scenario(scenario_path("ex2.json"));
  std::vector<RunLog> ex1_logs, ex2_logs;
  if (wanted(1) || wanted(2) || wanted(8)) ex1_logs = run_batch(ex1, 1, 20);
  if (wanted(3) || wanted(8)) ex2_logs = run_batch(ex2, 1, 10);

  std::map<int, Verdict> verdicts;
  const std::map<int, std::function<Verdict()>> checks = {
      {1, [&] { return criterion1(ex1, ex1_logs); }},
      {2, [&] { return criterion2(ex1, ex1_logs); }},
      {3, [&] { return criterion3(ex2_logs); }},
      {4, [&] { return criterion4(ex1); }},
      {5, [&] { return criterion5(); }},
      {6, [&] { return criterion6(); }},
      {7, [&] { return criterion7(); }},
      {8, [&] { return criterion8({&ex1_logs, &ex2_logs}); }},
      {9, [&] { return criterion9(); }},
  };
  int failed = 0;
  for (const auto& [k, check] : checks) {
    if (!wanted(k)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, fmt::format("threw: {}", e.what())};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !v.pass;
    fmt::print("criterion {}: {} - {} [{:.1f} s]\n", k, v.pass ? "PASS" : "FAIL", v.detail, sec);
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria failed\n", failed, only.empty() ? 9 : static_cast<int>(only.size()));
  return strict && failed ? 1 : 0;
}
