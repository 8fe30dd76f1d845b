#include "safely/sim.hpp"

#include <algorithm>
#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/seed_seq.hpp>
#include <chrono>
#include <cmath>
#include <spdlog/spdlog.h>

#include <Eigen/Eigenvalues>

namespace safely {

Vec keyed_normal_vector(std::uint64_t seed, std::uint64_t stream, std::uint64_t step, int n) {
  boost::random::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                              static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                              static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32)};
  boost::random::mt19937 gen(seq);
  boost::random::normal_distribution<double> normal;
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = normal(gen);
  return v;
}

double keyed_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t step, std::uint64_t index) {
  return keyed_normal_vector(seed, stream, step, static_cast<int>(index) + 1)(static_cast<int>(index));
}

GroundTruthWorld::GroundTruthWorld(std::vector<ObstacleModel> models,
                                   const std::vector<GaussianBelief>& initial, std::uint64_t seed)
    : models_(std::move(models)), seed_(seed) {
  if (initial.size() != models_.size()) throw ConfigError("ground truth: one initial belief per obstacle");
  for (std::size_t o = 0; o < models_.size(); ++o) {
    noise_factor_.push_back(psd_sqrt(models_[o].Sigma_w));
    const Mat L0 = psd_sqrt(initial[o].cov);
    const Vec xi = keyed_normal_vector(seed_, kInitialStream + o, 0, initial[o].dim());
    paths_.push_back({initial[o].mean + L0 * xi});
  }
}

const Vec& GroundTruthWorld::state(int o, int step) {
  auto& path = paths_.at(static_cast<std::size_t>(o));
  const auto& m = models_[o];
  while (static_cast<int>(path.size()) <= step) {
    const int k = static_cast<int>(path.size());
    const Vec xi = keyed_normal_vector(seed_, kProcessStream + o, static_cast<std::uint64_t>(k), m.noise_dim());
    const Vec w = m.mu_w + noise_factor_[o] * xi;
    path.push_back(m.A * path.back() + m.B * w);
  }
  return path[step];
}

Vec GroundTruthWorld::measure(int o, int step, const SensorModel& sensor) {
  const Vec& x = state(o, step);
  const Vec xi = keyed_normal_vector(seed_, kMeasurementStream + o, static_cast<std::uint64_t>(step),
                                     static_cast<int>(sensor.mu_nu.size()));
  return sensor.H * x + sensor.mu_nu + psd_sqrt(sensor.Sigma_nu) * xi;
}

GroundTruthWorld sample_ground_truth(const Scenario& scenario) {
  std::vector<GaussianBelief> initial;
  for (const auto& o : scenario.obstacles) initial.push_back(o.initial);
  return GroundTruthWorld(scenario.obstacle_models(), initial, scenario.seed);
}

const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::Reached: return "REACHED";
    case Outcome::MaxCycles: return "MAX_CYCLES";
    case Outcome::Collision: return "COLLISION";
    case Outcome::PlannerFailed: return "PLANNER_FAILED";
  }
  return "?";
}

namespace {

std::unique_ptr<CostModel> make_cost(const Scenario& sc, const RobotModel& model,
                                     const std::vector<std::vector<GaussianBelief>>& horizon,
                                     int target) {
  if (sc.cost.type != "attention") return std::make_unique<GoalCost>(model, sc.cost.goal);
  std::vector<Vec> means;
  if (target >= 0 && target < static_cast<int>(horizon.size()))
    for (const auto& b : horizon[target]) means.push_back(b.mean.head(model.position_dim()));
  return std::make_unique<AttentionCost>(model, sc.cost.goal, sc.cost.beta, sc.cost.gamma_hat,
                                         std::move(means), sc.cost.reward_alignment);
}

SqpSettings sqp_settings(const Scenario& sc, const RobotModel& model) {
  SqpSettings s;
  s.slack_weight = sc.planner.slack_weight;
  s.tolerance = sc.planner.sqp_tolerance;
  s.max_iter = sc.planner.max_sqp_iter;
  if (!model.is_linear()) {
    s.keepout_margin = 1e-4;
    s.adaptive_damping = true;
  }
  return s;
}

// Robot positions used to orient keep-outs under the TowardRobot policy.
std::vector<Vec> reference_positions(const Scenario& sc, const RobotModel& model, const Vec& x,
                                     const PlanIterate* previous) {
  std::vector<Vec> pos;
  const Vec p0 = model.position(x);
  for (int t = 1; t <= sc.T; ++t) {
    if (previous && previous->horizon() > 0) {
      const int k = std::min(t + 1, previous->horizon());
      pos.push_back(model.position(previous->state(k)));
    } else {
      const double s = static_cast<double>(t) / sc.T;
      pos.push_back(p0 + s * (sc.cost.goal - p0));
    }
  }
  return pos;
}

// Multipliers of the linearized keep-out rows, for cycles without a refined QP.
Mat keepout_duals(const QuadraticProgram& qp, const QpSolution& sol, int N, int T) {
  Mat grid = Mat::Zero(N, T);
  if (sol.lambda_in.size() != qp.num_in()) return grid;
  for (int i = 0; i < qp.num_in(); ++i) {
    const auto& tag = qp.in_tags[i];
    if (tag.kind != ConstraintTag::Kind::KeepOut) continue;
    if (tag.obstacle >= 0 && tag.obstacle < N && tag.time >= 1 && tag.time <= T)
      grid(tag.obstacle, tag.time - 1) = std::max(0.0, sol.lambda_in(i));
  }
  return grid;
}

}  // namespace

CycleResult plan_cycle(const Scenario& sc, const RobotModel& model, const Vec& x,
                       const std::vector<GaussianBelief>& beliefs, const PlanIterate* previous,
                       int attention_target) {
  const int N = sc.num_obstacles();
  const auto models = sc.obstacle_models();
  std::vector<std::vector<GaussianBelief>> horizon;
  for (int o = 0; o < N; ++o) horizon.push_back(propagate_horizon(beliefs[o], models[o], sc.T));

  CycleResult out;
  RiskBudget budget{sc.alpha, sc.T, std::max(N, 1)};
  std::vector<Vec> refs;
  if (sc.l0_policy == L0Policy::TowardRobot) refs = reference_positions(sc, model, x, previous);
  out.keepouts = build_keepouts(horizon, budget, models, sc.l0_policy, refs);

  const PlanIterate guess = previous ? shifted_guess(model, *previous, x, out.keepouts)
                                     : initial_guess(model, x, sc.cost.goal, sc.T, out.keepouts);
  const auto cost = make_cost(sc, model, horizon, attention_target);
  const SqpSettings settings = sqp_settings(sc, model);
  out.sqp = sqp_solve(model, *cost, out.keepouts, guess, settings);
  // An infeasible local minimum is common when the path has to bend around an
  // obstacle it is heading straight at; restart from a braking plan and, when
  // warm-started, from a fresh guess, and keep the best result.
  auto better = [](const SqpResult& a, const SqpResult& b) {
    const bool fa = a.status != SqpStatus::InfeasibleSoft, fb = b.status != SqpStatus::InfeasibleSoft;
    if (fa != fb) return fa;
    return a.merit < b.merit;
  };
  if (out.sqp.status == SqpStatus::InfeasibleSoft) {
    std::vector<PlanIterate> restarts{hold_guess(model, x, sc.T)};
    if (previous) restarts.push_back(initial_guess(model, x, sc.cost.goal, sc.T, out.keepouts));
    for (const auto& start : restarts) {
      SqpResult alt = sqp_solve(model, *cost, out.keepouts, start, settings);
      if (better(alt, out.sqp)) out.sqp = std::move(alt);
      if (out.sqp.status != SqpStatus::InfeasibleSoft) break;
    }
  }
  out.halfspaces = build_supporting_halfspaces(model, out.keepouts, out.sqp.plan);

  if (out.sqp.status != SqpStatus::InfeasibleSoft) {
    RefineSettings rs;
    rs.gamma = sc.sensing.gamma;
    rs.K = sc.sensing.K;
    rs.threshold = sc.sensing.threshold;
    rs.sqp = settings;
    out.refined = solve_refined(model, *cost, out.halfspaces, out.sqp.plan, N, rs);
    out.refined_ok = true;
  } else {
    out.refined.plan = out.sqp.plan;
    out.refined.report = compute_relevance(keepout_duals(out.sqp.last_qp, out.sqp.last_solution, N, sc.T),
                                           sc.sensing.gamma, sc.sensing.K, sc.sensing.threshold);
  }
  return out;
}

RunLog run_episode(const Scenario& sc, const EpisodeOptions& options) {
  const auto model = sc.make_robot();
  const int N = sc.num_obstacles();
  const int pd = model->position_dim();
  const auto models = sc.obstacle_models();
  GroundTruthWorld world = sample_ground_truth(sc);

  RunLog log;
  log.scenario = sc.document;
  log.initial_state = sc.initial_state(*model);
  log.observation_counts.assign(N, 0);
  log.selection_counts.assign(N, 0);

  std::vector<GaussianBelief> beliefs;
  for (const auto& o : sc.obstacles) beliefs.push_back(o.initial);

  Vec x = log.initial_state;
  PlanIterate previous;
  bool have_previous = false;
  int target = -1;
  int soft_failures = 0;
  const bool fov_gate = pd == 2 && sc.robot.fov_angle > 0.0;
  const bool attention = sc.cost.type == "attention";

  for (int cycle = 0;; ++cycle) {
    if ((model->position(x) - sc.cost.goal).norm() < sc.goal_tolerance) {
      log.outcome = Outcome::Reached;
      break;
    }
    if (cycle >= sc.max_cycles) {
      log.outcome = Outcome::MaxCycles;
      break;
    }

    const auto t0 = std::chrono::steady_clock::now();
    CycleResult cr = plan_cycle(sc, *model, x, beliefs, have_previous ? &previous : nullptr, target);
    // The attention term follows the current most relevant obstacle, which is
    // only known after a solve. When it changes, plan the cycle again.
    if (attention) {
      const int top = cr.refined.report.selected.empty() ? -1 : cr.refined.report.selected.front();
      if (top != target) {
        target = top;
        cr = plan_cycle(sc, *model, x, beliefs, have_previous ? &previous : nullptr, target);
      }
    }
    const auto t1 = std::chrono::steady_clock::now();

    CycleRecord rec;
    rec.cycle = cycle;
    rec.state = x;
    rec.beliefs = beliefs;
    rec.attention_target = target;
    rec.x_sqp = cr.sqp.plan;
    rec.x_pr = cr.refined.plan;
    rec.report = cr.refined.report;
    rec.sqp_status = to_string(cr.sqp.status);
    rec.sqp_iterations = cr.sqp.iterations;
    rec.refine_iterations = cr.refined.iterations;
    rec.refine_improved = cr.refined.improved;
    rec.soft_failure = !cr.refined_ok;
    rec.solve_ms = options.timing ? std::chrono::duration<double, std::milli>(t1 - t0).count() : 0.0;

    rec.margins = Mat::Constant(N, sc.T, std::numeric_limits<double>::quiet_NaN());
    for (int o = 0; o < N; ++o)
      for (int t = 1; t <= sc.T; ++t) {
        const auto& e = cr.keepouts[o][t - 1];
        if (e.vacuous) continue;
        rec.margins(o, t - 1) = constraint_value(e, model->position(rec.x_pr.state(t))) - 1.0;
        rec.margin_min = std::min(rec.margin_min, rec.margins(o, t - 1));
      }

    soft_failures = rec.soft_failure ? soft_failures + 1 : 0;

    // Execute the first step of the refined plan.
    Vec next = sc.mode == ExecutionMode::Waypoint ? rec.x_pr.state(1)
                                                  : model->step(x, rec.x_pr.input(0));
    next = model->wrap_state(next);
    rec.next_state = next;
    for (int o = 0; o < N; ++o) {
      const auto& e = cr.keepouts[o][0];
      if (!e.vacuous)
        rec.executed_margin = std::min(rec.executed_margin, constraint_value(e, model->position(next)) - 1.0);
    }

    bool collided = false;
    for (int o = 0; o < N; ++o) {
      const Vec p = world.state(o, cycle + 1).head(pd);
      rec.true_obstacles.push_back(p);
      if ((model->position(next) - p).norm() <= models[o].radius) collided = true;
    }

    for (int o = 0; o < N; ++o) beliefs[o] = predict_step(beliefs[o], models[o]);
    for (int o : rec.report.selected) {
      ++log.selection_counts[o];
      if (fov_gate && !in_field_of_view(next, beliefs[o].mean.head(pd), sc.robot.fov_angle)) continue;
      const Vec z = world.measure(o, cycle + 1, sc.sensing.sensor);
      beliefs[o] = kalman_update(beliefs[o], sc.sensing.sensor, z);
      rec.observed.push_back(o);
      ++log.observation_counts[o];
    }
    rec.keepouts = std::move(cr.keepouts);

    spdlog::debug("cycle {} status {} margin {:.3g} selected {}", cycle, rec.sqp_status, rec.margin_min,
                  rec.report.selected.empty() ? -1 : rec.report.selected.front());
    if (options.on_cycle) options.on_cycle(rec);

    previous = rec.x_pr;
    have_previous = true;
    target = rec.report.selected.empty() ? -1 : rec.report.selected.front();
    x = next;
    log.cycles.push_back(std::move(rec));

    if (collided) {
      log.outcome = Outcome::Collision;
      break;
    }
    if (soft_failures >= sc.planner.max_soft_failures) {
      log.outcome = Outcome::PlannerFailed;
      break;
    }
  }
  log.final_state = x;
  return log;
}

CollisionEstimate estimate_collide_pr(const std::vector<Vec>& positions,
                                      const std::vector<GaussianBelief>& beliefs,
                                      const std::vector<ObstacleModel>& models, long samples,
                                      std::uint64_t seed) {
  if (beliefs.size() != models.size()) throw ConfigError("estimate_collide_pr: one belief per obstacle");
  if (samples <= 0) throw ConfigError("estimate_collide_pr: samples must be positive");
  const int T = static_cast<int>(positions.size());
  constexpr double kPruneSigmas = 9.0;

  // Per obstacle: the step window [first, last] where a hit is not negligible.
  struct Window {
    int o, first, last, n, m;
    Mat start_factor;
    Vec start_mean;
    Mat noise_factor;
  };
  std::vector<Window> windows;
  for (std::size_t o = 0; o < models.size(); ++o) {
    const auto& m = models[o];
    const int pd = static_cast<int>(positions.empty() ? 0 : positions.front().size());
    const auto path = propagate_horizon(beliefs[o], m, T);
    int first = -1, last = -1;
    for (int t = 1; t <= T; ++t) {
      const auto& b = path[t - 1];
      const double gap = (positions[t - 1] - b.mean.head(pd)).norm() - m.radius;
      const double lmax = b.cov.size() ? Eigen::SelfAdjointEigenSolver<Mat>(symmetrize(b.cov), Eigen::EigenvaluesOnly)
                                             .eigenvalues()
                                             .maxCoeff()
                                       : 0.0;
      const double sd = std::sqrt(std::max(lmax, 0.0));
      const bool near = sd > 0.0 ? gap < kPruneSigmas * sd : gap <= 0.0;
      if (near) {
        if (first < 0) first = t;
        last = t;
      }
    }
    if (first < 0) continue;
    Window w{static_cast<int>(o), first, last, m.state_dim(), m.noise_dim(), psd_sqrt(path[first - 1].cov),
             path[first - 1].mean, psd_sqrt(m.Sigma_w)};
    windows.push_back(std::move(w));
  }

  CollisionEstimate est;
  est.samples = samples;
  if (windows.empty()) return est;

  boost::random::mt19937 gen(static_cast<std::uint32_t>(seed ^ (seed >> 32)));
  boost::random::normal_distribution<double> normal;
  Vec x, xi, w;
  for (long s = 0; s < samples; ++s) {
    bool hit = false;
    for (const auto& win : windows) {
      const auto& m = models[win.o];
      xi.resize(win.n);
      for (int i = 0; i < win.n; ++i) xi(i) = normal(gen);
      x = win.start_mean + win.start_factor * xi;
      for (int t = win.first;; ++t) {
        const Vec& p = positions[t - 1];
        if ((x.head(p.size()) - p).squaredNorm() <= m.radius * m.radius) {
          hit = true;
          break;
        }
        if (t == win.last) break;
        xi.resize(win.m);
        for (int i = 0; i < win.m; ++i) xi(i) = normal(gen);
        w = m.mu_w + win.noise_factor * xi;
        x = m.A * x + m.B * w;
      }
      if (hit) break;
    }
    if (hit) ++est.hits;
  }
  est.p = static_cast<double>(est.hits) / samples;
  est.se = std::sqrt(est.p * (1.0 - est.p) / samples);
  return est;
}

}  // namespace safely
