#include "doctest.h"
#include "safely/sim.hpp"
#include "util.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>

using namespace safely;

namespace {

nlohmann::json scenario_doc(const char* name) {
  std::ifstream f(std::string(SAFELY_SCENARIO_DIR) + "/" + name);
  return nlohmann::json::parse(f);
}

// P(|X - p| <= r) for X ~ N(0, s2 I2), by midpoint quadrature over the disk.
double disk_probability(const Vec& p, double s2, double r) {
  const int nr = 400, na = 400;
  double acc = 0.0;
  for (int i = 0; i < nr; ++i) {
    const double rho = (i + 0.5) * r / nr;
    for (int j = 0; j < na; ++j) {
      const double a = (j + 0.5) * 2.0 * M_PI / na;
      const double x = p(0) + rho * std::cos(a), y = p(1) + rho * std::sin(a);
      acc += std::exp(-(x * x + y * y) / (2.0 * s2)) / (2.0 * M_PI * s2) * rho;
    }
  }
  return acc * (r / nr) * (2.0 * M_PI / na);
}

}  // namespace

TEST_CASE("sim: keyed normals are reproducible and order independent") {
  const double a = keyed_normal(7, 3, 11, 0);
  CHECK(keyed_normal(7, 3, 11, 0) == a);
  CHECK(keyed_normal(7, 3, 12, 0) != a);
  CHECK(keyed_normal(8, 3, 11, 0) != a);
  CHECK(keyed_normal(7, 1003, 11, 0) != a);
  const Vec v = keyed_normal_vector(7, 3, 11, 4);
  CHECK(v(0) == a);
  CHECK(v(3) == keyed_normal(7, 3, 11, 3));

  double s = 0.0, s2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = keyed_normal(1, 0, i, 0);
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / n) < 4.0 / std::sqrt(n));
  CHECK(std::abs(s2 / n - 1.0) < 4.0 * std::sqrt(2.0 / n));
}

TEST_CASE("sim: ground truth paths follow the obstacle statistics") {
  Mat Sw(2, 2);
  Sw << 0.006, 0.0015, 0.0015, 0.008;
  const auto m = ObstacleModel::integrator(2, 0.5, vec({0.05, 0.15}), Sw, 0.25);
  const GaussianBelief b0{vec({-0.5, -2.0}), Mat::Zero(2, 2)};
  const auto hz = propagate_horizon(b0, m, 10);
  const int n = 4000;
  Vec mean = Vec::Zero(2);
  Mat second = Mat::Zero(2, 2);
  for (int k = 0; k < n; ++k) {
    GroundTruthWorld w({m}, {b0}, 100 + k);
    CHECK(w.state(0, 0) == b0.mean);
    const Vec x = w.state(0, 10);
    mean += x;
    second += x * x.transpose();
  }
  mean /= n;
  const Mat cov = second / n - mean * mean.transpose();
  const Mat& S = hz[9].cov;
  for (int i = 0; i < 2; ++i) CHECK(std::abs(mean(i) - hz[9].mean(i)) < 3.5 * std::sqrt(S(i, i) / n));
  CHECK((cov - S).norm() / S.norm() < 0.08);

  // Same seed, same path, whatever the query order.
  GroundTruthWorld a({m}, {b0}, 5), b({m}, {b0}, 5);
  const Vec late = a.state(0, 7);
  for (int t = 0; t <= 7; ++t) b.state(0, t);
  CHECK(b.state(0, 7) == late);
  SensorModel sensor{Mat::Identity(2, 2), Vec::Zero(2), 0.05 * Mat::Identity(2, 2)};
  CHECK(a.measure(0, 3, sensor) == b.measure(0, 3, sensor));
}

TEST_CASE("sim: collision estimate matches disk quadrature") {
  const auto m = ObstacleModel::integrator(2, 1.0, Vec::Zero(2), 0.04 * Mat::Identity(2, 2), 0.25);
  const GaussianBelief b0{Vec::Zero(2), Mat::Zero(2, 2)};
  // One step: obstacle ~ N(0, 0.04 I); robot 0.3 m away.
  const Vec p = vec({0.3, 0.0});
  const auto est = estimate_collide_pr({p}, {b0}, {m}, 100000, 9);
  const double exact = disk_probability(p, 0.04, 0.25);
  CHECK(est.samples == 100000);
  CHECK(std::abs(est.p - exact) < 4.0 * std::sqrt(exact * (1 - exact) / 100000) + 1e-4);
  CHECK(est.se == doctest::Approx(std::sqrt(est.p * (1 - est.p) / 100000)));

  // Far away: nothing to hit.
  const auto far = estimate_collide_pr({vec({50, 50})}, {b0}, {m}, 10000, 9);
  CHECK(far.p == 0.0);
  CHECK(far.hits == 0);
  // No obstacles.
  CHECK(estimate_collide_pr({p}, {}, {}, 1000, 9).p == 0.0);
}

TEST_CASE("sim: an empty world goes straight to the goal") {
  nlohmann::json doc = scenario_doc("ex1.json");
  doc["obstacles"] = nlohmann::json::array();
  const Scenario sc = parse_scenario(doc);
  const RunLog log = run_episode(sc, {false, {}});
  CHECK(log.outcome == Outcome::Reached);
  CHECK(log.observation_counts.empty());
  for (const auto& c : log.cycles) {
    CHECK(c.report.selected.empty());
    CHECK(c.solve_ms == 0.0);
  }
  CHECK((log.final_state.head(3) - sc.cost.goal).norm() < sc.goal_tolerance);
}

TEST_CASE("sim: a huge goal tolerance ends before the first cycle") {
  nlohmann::json doc = scenario_doc("ex1.json");
  doc["horizon"]["goal_tolerance"] = 100.0;
  const RunLog log = run_episode(parse_scenario(doc));
  CHECK(log.outcome == Outcome::Reached);
  CHECK(log.cycles.empty());
}

TEST_CASE("sim: episodes are deterministic per seed") {
  nlohmann::json doc = scenario_doc("ex1.json");
  doc["horizon"]["max_cycles"] = 3;
  const Scenario sc = parse_scenario(doc);
  const RunLog a = run_episode(sc, {false, {}});
  const RunLog b = run_episode(sc, {false, {}});
  CHECK(a.outcome == Outcome::MaxCycles);
  REQUIRE(a.cycles.size() == 3);
  REQUIRE(b.cycles.size() == 3);
  for (int c = 0; c < 3; ++c) {
    CHECK(a.cycles[c].next_state == b.cycles[c].next_state);
    CHECK(a.cycles[c].x_pr.states == b.cycles[c].x_pr.states);
    CHECK(a.cycles[c].observed == b.cycles[c].observed);
    for (int o = 0; o < 5; ++o) CHECK(a.cycles[c].true_obstacles[o] == b.cycles[c].true_obstacles[o]);
  }
  // First cycle picks the second obstacle and measures it.
  CHECK(a.cycles[0].report.selected == std::vector<int>{1});
  CHECK(a.cycles[0].observed == std::vector<int>{1});
  CHECK(a.cycles[0].x_pr.objective <= a.cycles[0].x_sqp.objective + 1e-8);
  CHECK(a.cycles[0].executed_margin >= -1e-6);
}
