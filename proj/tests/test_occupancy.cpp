#include "doctest.h"
#include "safely/occupancy.hpp"
#include "util.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>

using namespace safely;

namespace {

Mat random_spd(std::mt19937& rng, int n) {
  std::normal_distribution<double> N(0.0, 1.0);
  Mat R(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) R(i, j) = N(rng);
  return R * R.transpose() + 0.2 * Mat::Identity(n, n);
}

Vec random_unit(std::mt19937& rng, int n) {
  std::normal_distribution<double> N(0.0, 1.0);
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = N(rng);
  return v.normalized();
}

}  // namespace

TEST_CASE("occupancy: ball volumes") {
  CHECK(unit_ball_volume(3, 0.25) == doctest::Approx(0.0654498469497873591));
  CHECK(unit_ball_volume(2, 1.0) == doctest::Approx(M_PI));
  CHECK(unit_ball_volume(1, 2.0) == doctest::Approx(4.0));
}

TEST_CASE("occupancy: keep-out scale for the first example budget") {
  const RiskBudget budget{0.01, 25, 5};
  CHECK(budget.per_constraint() == doctest::Approx(8e-5));
  const GaussianBelief b{Vec::Zero(3), 0.0125 * Mat::Identity(3, 3)};
  const auto Q = q_matrix(b, budget, 0.25);
  REQUIRE(Q.has_value());
  // -2 log(8e-5 sqrt(det(2 pi 0.0125 I3)) / vol(0.25)), evaluated at 30 digits.
  const double scale = 21.046474301257411860;
  CHECK((*Q - scale * 0.0125 * Mat::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("occupancy: vacuous boundary and isotropy") {
  const RiskBudget budget{0.01, 25, 5};
  // Choose sigma so that the log argument is exactly zero.
  const double vol = unit_ball_volume(2, 0.25);
  const double sigma2 = vol / (budget.per_constraint() * 2.0 * M_PI);
  const GaussianBelief edge{Vec::Zero(2), sigma2 * Mat::Identity(2, 2)};
  CHECK(std::abs(occupancy_log_argument(edge, budget, 0.25)) < 1e-12);
  const GaussianBelief wider{Vec::Zero(2), 1.01 * sigma2 * Mat::Identity(2, 2)};
  CHECK_FALSE(q_matrix(wider, budget, 0.25).has_value());

  const GaussianBelief iso{Vec::Zero(2), 0.02 * Mat::Identity(2, 2)};
  const auto Q = q_matrix(iso, budget, 0.25);
  REQUIRE(Q.has_value());
  CHECK(std::abs((*Q)(0, 1)) < 1e-15);
  CHECK((*Q)(0, 0) == doctest::Approx((*Q)(1, 1)));
  CHECK((*Q)(0, 0) > 0.0);
}

TEST_CASE("occupancy: outer shape formula") {
  const Vec e1 = vec({1, 0});
  const Mat Q4 = 4.0 * Mat::Identity(2, 2);
  std::mt19937 rng(3);
  for (int k = 0; k < 10; ++k) {
    const Mat Qp = q_plus_matrix(Q4, 1.0, random_unit(rng, 2));
    CHECK((Qp - 9.0 * Mat::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12);
  }
  const Mat Qd = vec({4, 1}).asDiagonal();
  const Mat Qp = q_plus_matrix(Qd, 0.5, e1);
  CHECK((Qp - Mat(vec({6.25, 2.5}).asDiagonal())).cwiseAbs().maxCoeff() < 1e-12);
  const Mat Q0 = q_plus_matrix(Qd, 1e-12, e1);
  CHECK((Q0 - Qd).cwiseAbs().maxCoeff() < 1e-9);
  CHECK_THROWS_AS(q_plus_matrix(Qd, 0.5, vec({1, 1})), ConfigError);
}

TEST_CASE("occupancy: outer shape is tight along l0 and contains the Minkowski sum") {
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> U(0.05, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + trial % 2;
    const Mat Q = random_spd(rng, n);
    const double r = U(rng);
    const Vec l0 = random_unit(rng, n);
    const Mat Qp = q_plus_matrix(Q, r, l0);
    CHECK(std::sqrt(l0.dot(Qp * l0)) == doctest::Approx(std::sqrt(l0.dot(Q * l0)) + r).epsilon(1e-9));
    // Support function of E(Q) + Ball(r) never exceeds that of E(Q+).
    for (int k = 0; k < 20; ++k) {
      const Vec d = random_unit(rng, n);
      CHECK(std::sqrt(d.dot(Q * d)) + r <= std::sqrt(d.dot(Qp * d)) + 1e-9);
    }
  }
}

TEST_CASE("occupancy: shrinking the covariance shrinks the keep-out along l0") {
  std::mt19937 rng(23);
  const RiskBudget budget{0.01, 25, 5};
  for (int trial = 0; trial < 50; ++trial) {
    const Mat S = 0.01 * random_spd(rng, 3);
    const GaussianBelief b{Vec::Zero(3), S}, small{Vec::Zero(3), 0.5 * S};
    const auto Q = q_matrix(b, budget, 0.25);
    const auto Qs = q_matrix(small, budget, 0.25);
    if (!Q || !Qs) continue;
    const Vec l0 = leading_eigenvector(*Q);
    const Mat P = q_plus_matrix(*Q, 0.25, l0), Ps = q_plus_matrix(*Qs, 0.25, l0);
    CHECK(l0.dot(Ps * l0) <= l0.dot(P * l0) + 1e-12);
  }
}

TEST_CASE("occupancy: leading eigenvector sign convention") {
  Mat m(2, 2);
  m << 1, 0, 0, 3;
  const Vec v = leading_eigenvector(m);
  CHECK(std::abs(v(1)) == doctest::Approx(1.0));
  CHECK(leading_eigenvector(m) == leading_eigenvector((-1.0) * (-1.0) * m));
  const Vec w = leading_eigenvector(-m + 5.0 * Mat::Identity(2, 2));
  CHECK(std::abs(w(0)) == doctest::Approx(1.0));
}

TEST_CASE("occupancy: constraint values") {
  const auto e = KeepOutEllipsoid::make(vec({1, -1}), 4.0 * Mat::Identity(2, 2));
  CHECK(constraint_value(e, vec({1, -1})) == 0.0);
  CHECK(constraint_value(e, vec({3, -1})) == doctest::Approx(1.0));
  std::mt19937 rng(29);
  std::normal_distribution<double> N(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Mat Q = random_spd(rng, 3);
    const Vec c = vec({N(rng), N(rng), N(rng)});
    const Vec x = vec({N(rng), N(rng), N(rng)});
    const auto el = KeepOutEllipsoid::make(c, Q);
    const Vec s = Q.fullPivLu().solve(x - c);
    CHECK(constraint_value(el, x) == doctest::Approx((x - c).dot(s)).epsilon(1e-10));
  }
  KeepOutEllipsoid vac;
  vac.vacuous = true;
  CHECK(std::isinf(constraint_value(vac, vec({0, 0}))));
}

TEST_CASE("occupancy: keep-out grid construction") {
  const RiskBudget budget{0.01, 25, 5};
  std::vector<ObstacleModel> models;
  std::vector<std::vector<GaussianBelief>> beliefs;
  for (int o = 0; o < 5; ++o) {
    models.push_back(ObstacleModel::integrator(3, 0.25, Vec::Zero(3), 0.01 * Mat::Identity(3, 3), 0.25));
    beliefs.push_back(propagate_horizon({Vec::Constant(3, o), Mat::Zero(3, 3)}, models.back(), 25));
  }
  const auto grid = build_keepouts(beliefs, budget, models, L0Policy::MaxUncertainty);
  REQUIRE(grid.size() == 5);
  for (int o = 0; o < 5; ++o) {
    REQUIRE(grid[o].size() == 25);
    for (int t = 1; t <= 25; ++t) {
      const auto& e = grid[o][t - 1];
      CHECK_FALSE(e.vacuous);
      CHECK(e.obstacle_id == o);
      CHECK(e.time_index == t);
      CHECK((e.center - beliefs[o][t - 1].mean).norm() == 0.0);
      CHECK(min_eigenvalue(e.shape) > 0.0);
    }
  }
  CHECK(build_keepouts({}, budget, {}, L0Policy::MaxUncertainty).empty());

  // A wide belief has peak occupancy below the allocated risk: nothing to avoid.
  const RiskBudget loose{0.999, 1, 1};
  const std::vector<std::vector<GaussianBelief>> wide{{{Vec::Zero(3), Mat::Identity(3, 3)}}};
  const double la = occupancy_log_argument(wide[0][0], loose, 0.25);
  CHECK(la == doctest::Approx(std::log(0.999 * std::pow(2.0 * M_PI, 1.5) / unit_ball_volume(3, 0.25))));
  CHECK(la >= 0.0);
  const auto vac = build_keepouts(wide, loose, {models[0]}, L0Policy::MaxUncertainty);
  CHECK(vac[0][0].vacuous);
}

TEST_CASE("occupancy: toward-robot policy is tight toward the robot") {
  const RiskBudget budget{0.01, 3, 1};
  const auto m = ObstacleModel::integrator(2, 0.5, Vec::Zero(2), vec({0.02, 0.005}).asDiagonal(), 0.25);
  const std::vector<std::vector<GaussianBelief>> beliefs{propagate_horizon({Vec::Zero(2), Mat::Zero(2, 2)}, m, 3)};
  const std::vector<Vec> robot(3, vec({0.0, 3.0}));
  const auto grid = build_keepouts(beliefs, budget, {m}, L0Policy::TowardRobot, robot);
  for (int t = 1; t <= 3; ++t) {
    const auto Q = q_matrix(beliefs[0][t - 1], budget, 0.25);
    REQUIRE(Q.has_value());
    const Vec l0 = vec({0, 1});
    CHECK(std::sqrt(l0.dot(grid[0][t - 1].shape * l0)) ==
          doctest::Approx(std::sqrt(l0.dot(*Q * l0)) + 0.25).epsilon(1e-9));
  }
}
