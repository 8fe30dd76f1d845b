#include "doctest.h"
#include "oracles.hpp"
#include "safely/qp.hpp"

#include <random>

using namespace safely;

TEST_CASE("qp: single lower bound on the first coordinate") {
  QuadraticProgram qp = QuadraticProgram::unconstrained(Mat::Identity(3, 3), Vec::Zero(3));
  qp.A_in = Mat::Zero(1, 3);
  qp.A_in(0, 0) = -1.0;
  qp.b_in = Vec::Constant(1, -1.0);
  const auto sol = QpSolver().solve(qp);
  REQUIRE(sol.status == QpStatus::Optimal);
  CHECK(sol.y(0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(sol.y(1)) < 1e-9);
  CHECK(sol.lambda_in(0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("qp: equality constrained minimum norm point") {
  QuadraticProgram qp = QuadraticProgram::unconstrained(Mat::Identity(2, 2), Vec::Zero(2));
  qp.A_eq = Mat::Ones(1, 2);
  qp.b_eq = Vec::Ones(1);
  const auto sol = QpSolver().solve(qp);
  REQUIRE(sol.status == QpStatus::Optimal);
  CHECK(sol.y(0) == doctest::Approx(0.5));
  CHECK(sol.y(1) == doctest::Approx(0.5));
  CHECK(sol.lambda_eq(0) == doctest::Approx(-0.5));
}

TEST_CASE("qp: unconstrained problem") {
  Mat P(2, 2);
  P << 2, 0.5, 0.5, 1;
  Vec q(2);
  q << -1, 2;
  const auto qp = QuadraticProgram::unconstrained(P, q);
  const auto sol = QpSolver().solve(qp);
  REQUIRE(sol.status == QpStatus::Optimal);
  const Vec expect = P.ldlt().solve(-q);
  CHECK((sol.y - expect).cwiseAbs().maxCoeff() < 1e-9);
  const auto r = kkt_residuals(qp, sol.y, sol.lambda_eq, sol.lambda_in);
  CHECK(r.max() < 1e-9);
}

TEST_CASE("qp: random instances agree with active-set enumeration") {
  std::mt19937 rng(11);
  std::uniform_int_distribution<int> dn(2, 10), dm(0, 6);
  QpSolver solver;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = dn(rng);
    const int mi = dm(rng);
    const int me = std::min(n - 1, trial % 3);
    const auto qp = oracle::random_feasible_qp(rng, n, me, mi);
    const auto ref = oracle::brute_force_qp(qp);
    REQUIRE(ref.has_value());
    const auto sol = solver.solve(qp);
    REQUIRE(sol.status == QpStatus::Optimal);
    CHECK((sol.y - ref->y).cwiseAbs().maxCoeff() < 1e-5);
    if (mi) CHECK((sol.lambda_in - ref->lambda_in).cwiseAbs().maxCoeff() < 1e-5);
    if (me) CHECK((sol.lambda_eq - ref->lambda_eq).cwiseAbs().maxCoeff() < 1e-5);
    CHECK(sol.kkt.max() < 1e-6);
    CHECK(sol.objective == doctest::Approx(sol.dual_objective(qp)).epsilon(1e-5));
  }
}

TEST_CASE("qp: infeasible constraints are reported with a certificate") {
  QuadraticProgram qp = QuadraticProgram::unconstrained(Mat::Identity(2, 2), Vec::Zero(2));
  qp.A_in = Mat(2, 2);
  qp.A_in << 1, 0, -1, 0;
  qp.b_in = Vec(2);
  qp.b_in << -1, -1;  // y0 <= -1 and y0 >= 1
  const auto sol = QpSolver().solve(qp);
  CHECK(sol.status == QpStatus::PrimalInfeasible);
  REQUIRE(sol.certificate.size() == 2);
  const Vec d = sol.certificate;
  CHECK((qp.A_in.transpose() * d).norm() < 1e-4 * d.norm());
  CHECK(qp.b_in.dot(d) < 0.0);
}

TEST_CASE("qp: scaling the cost scales multipliers and keeps the primal") {
  std::mt19937 rng(5);
  const auto qp = oracle::random_feasible_qp(rng, 6, 1, 5);
  auto scaled = qp;
  scaled.P *= 7.0;
  scaled.q *= 7.0;
  QpSolver solver;
  const auto a = solver.solve(qp);
  const auto b = solver.solve(scaled);
  CHECK((a.y - b.y).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((7.0 * a.lambda_in - b.lambda_in).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("qp: deterministic output") {
  std::mt19937 rng(3);
  const auto qp = oracle::random_feasible_qp(rng, 8, 2, 6);
  QpSolver s1, s2;
  const auto a = s1.solve(qp);
  const auto b = s2.solve(qp);
  CHECK(a.y == b.y);
  CHECK(a.lambda_in == b.lambda_in);
}

TEST_CASE("qp: kkt residual grows linearly along a perturbation") {
  const auto qp = QuadraticProgram::unconstrained(Mat::Identity(2, 2), Vec::Zero(2));
  Vec y = Vec::Zero(2);
  const Vec e = Vec::Unit(2, 0);
  const double r1 = kkt_residuals(qp, y + 1e-3 * e, Vec(), Vec()).stationarity;
  const double r2 = kkt_residuals(qp, y + 2e-3 * e, Vec(), Vec()).stationarity;
  CHECK(r2 == doctest::Approx(2.0 * r1));
  CHECK(kkt_residuals(qp, y, Vec(), Vec()).max() == 0.0);
}

TEST_CASE("qp: json round trip") {
  std::mt19937 rng(9);
  const auto qp = oracle::random_feasible_qp(rng, 4, 1, 3);
  const auto back = qp_from_json(qp_to_json(qp));
  CHECK(back.P == qp.P);
  CHECK(back.b_in == qp.b_in);
  CHECK(back.A_eq == qp.A_eq);
}
