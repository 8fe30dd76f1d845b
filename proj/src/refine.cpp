#include "safely/refine.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace safely {

namespace {

struct EigenFrame {
  Vec q;  // eigenvalues of the shape matrix, ascending
  Mat V;
  Vec w;  // V^T (x - center)
};

EigenFrame frame_of(const KeepOutEllipsoid& e, const Vec& x) {
  if (e.vacuous) throw ConfigError("projection: vacuous ellipsoid");
  if (x.size() != e.dim()) throw ConfigError("projection: dimension mismatch");
  Eigen::SelfAdjointEigenSolver<Mat> es(e.shape);
  return {es.eigenvalues(), es.eigenvectors(), es.eigenvectors().transpose() * (x - e.center)};
}

// phi(nu) = sum q_i w_i^2 / (q_i + nu)^2 and its derivative.
double secular(const EigenFrame& f, double nu, double* deriv) {
  double v = 0.0, d = 0.0;
  for (Eigen::Index i = 0; i < f.q.size(); ++i) {
    const double den = f.q(i) + nu;
    const double term = f.q(i) * f.w(i) * f.w(i) / (den * den);
    v += term;
    d += -2.0 * term / den;
  }
  if (deriv) *deriv = d;
  return v;
}

// Root of phi(nu) = 1 on [lo, hi] where phi is decreasing, phi(lo) > 1 > phi(hi).
double solve_secular(const EigenFrame& f, double lo, double hi) {
  double nu = 0.5 * (lo + hi);
  for (int it = 0; it < 300; ++it) {
    double d;
    const double F = secular(f, nu, &d) - 1.0;
    if (std::abs(F) <= 1e-13) break;
    if (F > 0.0) lo = nu;
    else hi = nu;
    double next = (d < 0.0) ? nu - F / d : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (hi - lo <= 1e-15 * std::max(1.0, std::abs(nu))) {
      nu = next;
      break;
    }
    nu = next;
  }
  return nu;
}

Vec point_for(const KeepOutEllipsoid& e, const EigenFrame& f, double nu) {
  Vec y(f.q.size());
  for (Eigen::Index i = 0; i < f.q.size(); ++i) y(i) = f.q(i) * f.w(i) / (f.q(i) + nu);
  return e.center + f.V * y;
}

}  // namespace

Vec project_to_ellipsoid(const KeepOutEllipsoid& e, const Vec& x) {
  const EigenFrame f = frame_of(e, x);
  if (secular(f, 0.0, nullptr) <= 1.0) return x;
  // phi(hi) <= sum q_i w_i^2 / hi^2 = 1 at this hi.
  double hi = 0.0;
  for (Eigen::Index i = 0; i < f.q.size(); ++i) hi += f.q(i) * f.w(i) * f.w(i);
  hi = std::sqrt(hi);
  return point_for(e, f, solve_secular(f, 0.0, hi));
}

Vec nearest_boundary_point(const KeepOutEllipsoid& e, const Vec& x) {
  const EigenFrame f = frame_of(e, x);
  const double phi0 = secular(f, 0.0, nullptr);
  if (phi0 >= 1.0) return project_to_ellipsoid(e, x);
  const double qmin = f.q(0);
  const double scale = f.q.maxCoeff();
  // Components along the smallest axis decide whether the root is interior.
  double wmin2 = 0.0;
  for (Eigen::Index i = 0; i < f.q.size(); ++i)
    if (f.q(i) - qmin <= 1e-12 * scale) wmin2 += f.w(i) * f.w(i);
  if (std::sqrt(wmin2) > 1e-12 * std::sqrt(scale)) {
    double lo = -qmin + 0.5 * std::sqrt(qmin * wmin2);
    while (secular(f, lo, nullptr) <= 1.0) lo = -qmin + 0.5 * (lo + qmin);
    return point_for(e, f, solve_secular(f, lo, 0.0));
  }
  // Degenerate: x lies in the span of the larger axes. At nu = -qmin the
  // smallest-axis coordinate is free and fills the remaining boundary budget.
  EigenFrame g = f;
  Eigen::Index first_min = 0;
  double used = 0.0;
  for (Eigen::Index i = f.q.size() - 1; i >= 0; --i) {
    if (f.q(i) - qmin <= 1e-12 * scale) {
      g.w(i) = 0.0;
      first_min = i;
    } else {
      const double yi = f.q(i) * f.w(i) / (f.q(i) - qmin);
      used += yi * yi / f.q(i);
    }
  }
  if (used < 1.0) {
    Vec y = Vec::Zero(f.q.size());
    for (Eigen::Index i = 0; i < f.q.size(); ++i)
      if (f.q(i) - qmin > 1e-12 * scale) y(i) = f.q(i) * f.w(i) / (f.q(i) - qmin);
    y(first_min) = std::sqrt(qmin * (1.0 - used));
    return e.center + f.V * y;
  }
  return point_for(e, g, solve_secular(g, -qmin, 0.0));
}

FixedPositionRows SupportingHalfspaceSet::position_rows() const {
  FixedPositionRows rows;
  std::vector<int> keep;
  for (int r = 0; r < size(); ++r)
    if (!vacuous[r]) keep.push_back(r);
  rows.normals.resize(static_cast<Eigen::Index>(keep.size()), position_dim);
  rows.bounds.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const int r = keep[k];
    const int t = row_tags[r].time;
    rows.time.push_back(t);
    rows.normals.row(k) = C_proj.row(r).segment((t - 1) * position_dim, position_dim);
    rows.bounds(k) = d_proj(r);
    rows.tags.push_back(row_tags[r]);
  }
  return rows;
}

SupportingHalfspaceSet build_supporting_halfspaces(const RobotModel& model,
                                                   const KeepOutGrid& keepouts,
                                                   const PlanIterate& x_sqp) {
  const int T = x_sqp.horizon();
  const int pd = model.position_dim();
  const int rows = static_cast<int>(keepouts.size()) * T;
  SupportingHalfspaceSet hs;
  hs.position_dim = pd;
  hs.horizon = T;
  hs.C_proj = Mat::Zero(rows, T * pd);
  hs.d_proj = Vec::Zero(rows);
  for (std::size_t o = 0; o < keepouts.size(); ++o) {
    if (static_cast<int>(keepouts[o].size()) != T)
      throw ConfigError("build_supporting_halfspaces: horizon mismatch");
    for (int t = 1; t <= T; ++t) {
      const int r = static_cast<int>(o) * T + (t - 1);
      const KeepOutEllipsoid& e = keepouts[o][t - 1];
      const Vec x = model.position(x_sqp.state(t));
      hs.row_tags.push_back({ConstraintTag::Kind::Halfspace, static_cast<int>(o), t, r});
      if (e.vacuous) {
        hs.d_proj(r) = 1.0;  // 0 <= 1
        hs.projection_points.push_back(x);
        hs.vacuous.push_back(1);
        hs.flagged.push_back(0);
        continue;
      }
      const double value = constraint_value(e, x);
      Vec p;
      bool flag = false;
      if (value >= 1.0) {
        p = project_to_ellipsoid(e, x);
      } else {
        p = nearest_boundary_point(e, x);
        flag = value < 1.0 - 1e-6;
        if (flag)
          spdlog::warn("halfspace: plan knot inside keep-out of obstacle {} at t={} (value {:.6f})",
                       o, t, value);
      }
      Vec a = e.shape_inv * (p - e.center);
      a.normalize();
      hs.C_proj.block(r, (t - 1) * pd, 1, pd) = -a.transpose();
      hs.d_proj(r) = -a.dot(p);
      hs.projection_points.push_back(p);
      hs.vacuous.push_back(0);
      hs.flagged.push_back(flag ? 1 : 0);
    }
  }
  return hs;
}

RelevanceReport compute_relevance(const Mat& lambda_grid, double gamma, int K, double threshold) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("relevance: gamma must be in (0, 1]");
  if (K < 0) throw ConfigError("relevance: K must be nonnegative");
  RelevanceReport rep;
  rep.gamma = gamma;
  rep.lambda_grid = lambda_grid;
  if (lambda_grid.size() && lambda_grid.minCoeff() < -1e-8)
    throw NumericalError("relevance: negative multiplier below tolerance");
  rep.lambda_grid = rep.lambda_grid.cwiseMax(0.0);
  const auto N = rep.lambda_grid.rows();
  rep.scores = Vec::Zero(N);
  for (Eigen::Index o = 0; o < N; ++o) {
    double w = 1.0, s = 0.0;
    for (Eigen::Index t = 0; t < rep.lambda_grid.cols(); ++t) {
      w *= gamma;
      s += w * rep.lambda_grid(o, t);
    }
    rep.scores(o) = s;
  }
  std::vector<int> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return rep.scores(a) > rep.scores(b); });
  for (int o : order) {
    if (static_cast<int>(rep.selected.size()) >= K) break;
    if (rep.scores(o) > threshold) rep.selected.push_back(o);
  }
  return rep;
}

Mat halfspace_duals(const QuadraticProgram& qp, const QpSolution& sol, int num_obstacles, int T) {
  Mat grid = Mat::Zero(num_obstacles, T);
  if (sol.lambda_in.size() != qp.num_in()) return grid;
  for (int i = 0; i < qp.num_in() && i < static_cast<int>(qp.in_tags.size()); ++i) {
    const auto& tag = qp.in_tags[i];
    if (tag.kind != ConstraintTag::Kind::Halfspace || tag.obstacle < 0) continue;
    if (tag.obstacle < num_obstacles && tag.time >= 1 && tag.time <= T)
      grid(tag.obstacle, tag.time - 1) = std::max(0.0, sol.lambda_in(i));
  }
  return grid;
}

RefinedResult solve_refined(const RobotModel& model, const CostModel& cost,
                            const SupportingHalfspaceSet& halfspaces, const PlanIterate& x_sqp,
                            int num_obstacles, const RefineSettings& settings) {
  const int T = x_sqp.horizon();
  const FixedPositionRows rows = halfspaces.position_rows();
  const KeepOutGrid none;
  RefinedResult res;
  PlanIterate candidate;
  bool have_candidate = false;

  if (model.is_linear()) {
    res.qp = assemble_qp(model, none, x_sqp, cost, settings.sqp.slack_weight, &rows);
    QpSolver solver(settings.sqp.qp);
    const auto L = layout_for(model, T);
    Vec warm = Vec::Zero(res.qp.num_vars());
    for (int t = 1; t <= T; ++t) warm.segment(L.x_index(t), L.nx) = x_sqp.state(t);
    for (int t = 0; t < T; ++t) warm.segment(L.u_index(t), L.nu) = x_sqp.input(t);
    res.solution = solver.solve(res.qp, warm);
    res.iterations = 1;
    res.qp_ok = res.solution.status == QpStatus::Optimal;
    if (res.qp_ok) {
      Mat u(T, L.nu);
      for (int t = 0; t < T; ++t)
        u.row(t) = model.input_box().clamp(res.solution.y.segment(L.u_index(t), L.nu)).transpose();
      candidate = model.rollout(x_sqp.state(0), u);
      have_candidate = true;
    }
  } else {
    SqpSettings s = settings.sqp;
    s.require_feasible = true;
    SqpResult r = sqp_solve(model, cost, none, x_sqp, s, &rows);
    res.qp = std::move(r.last_qp);
    res.solution = std::move(r.last_solution);
    res.iterations = r.iterations;
    res.qp_ok = res.solution.status == QpStatus::Optimal && res.solution.y.size() > 0;
    candidate = std::move(r.plan);
    have_candidate = true;
  }

  // Keep x_sqp unless the candidate is feasible for the half-spaces, the
  // boxes, and at least as good.
  const double base = cost.value(x_sqp);
  res.plan = x_sqp;
  res.plan.objective = base;
  if (have_candidate) {
    double viol = box_violation(model, candidate);
    for (int r = 0; r < rows.size(); ++r)
      viol += std::max(0.0, rows.normals.row(r).dot(model.position(candidate.state(rows.time[r]))) -
                                rows.bounds(r));
    const double value = cost.value(candidate);
    if (viol <= settings.sqp.feasibility_tol && value <= base) {
      res.plan = std::move(candidate);
      res.plan.objective = value;
      res.improved = true;
    }
  }
  res.plan.slack_total = 0.0;

  const Mat grid = res.qp_ok ? halfspace_duals(res.qp, res.solution, num_obstacles, T)
                             : Mat::Zero(num_obstacles, T);
  res.report = compute_relevance(grid, settings.gamma, settings.K, settings.threshold);
  return res;
}

SensitivityResult sensitivity_audit(const QuadraticProgram& qp, const QpSolution& solution, int row,
                                    double delta, const QpSettings& settings) {
  if (row < 0 || row >= qp.num_in()) throw ConfigError("sensitivity_audit: row out of range");
  QuadraticProgram relaxed = qp;
  relaxed.b_in(row) += delta;
  QpSolver solver(settings);
  const QpSolution s = solver.solve(relaxed, solution.y);
  if (s.status != QpStatus::Optimal) throw NumericalError("sensitivity_audit: re-solve failed");
  SensitivityResult r;
  r.p0 = solution.objective;
  r.p_delta = s.objective;
  r.predicted_drop = solution.lambda_in(row) * delta;
  r.actual_drop = r.p0 - r.p_delta;
  return r;
}

ChebyshevResult chebyshev_radius(const Mat& G, const Vec& h) {
  constexpr double cap = 1e6;
  const int n = static_cast<int>(G.cols());
  std::vector<int> keep;
  for (int i = 0; i < G.rows(); ++i) {
    const double nrm = G.row(i).norm();
    if (nrm > 1e-12) {
      keep.push_back(i);
    } else if (h(i) < 0.0) {
      return {-kInf, Vec::Zero(n), false};
    }
  }
  const int m = static_cast<int>(keep.size());
  QuadraticProgram qp;
  qp.P = Mat::Zero(n + 1, n + 1);
  qp.P.topLeftCorner(n, n) = 1e-10 * Mat::Identity(n, n);  // picks a unique center
  qp.q = Vec::Zero(n + 1);
  qp.q(n) = -1.0;
  qp.A_eq = Mat::Zero(0, n + 1);
  qp.b_eq = Vec::Zero(0);
  qp.A_in = Mat::Zero(m + 1 + 2 * n, n + 1);
  qp.b_in = Vec::Zero(m + 1 + 2 * n);
  for (int k = 0; k < m; ++k) {
    const int i = keep[k];
    qp.A_in.row(k).head(n) = G.row(i);
    qp.A_in(k, n) = G.row(i).norm();
    qp.b_in(k) = h(i);
  }
  qp.A_in(m, n) = 1.0;
  qp.b_in(m) = cap;
  for (int j = 0; j < n; ++j) {
    qp.A_in(m + 1 + 2 * j, j) = 1.0;
    qp.b_in(m + 1 + 2 * j) = cap;
    qp.A_in(m + 2 + 2 * j, j) = -1.0;
    qp.b_in(m + 2 + 2 * j) = cap;
  }
  QpSettings st;
  st.max_iter = 100000;
  const QpSolution sol = QpSolver(st).solve(qp);
  if (sol.status == QpStatus::PrimalInfeasible) return {-kInf, Vec::Zero(n), false};
  ChebyshevResult res;
  res.center = sol.y.head(n);
  res.radius = sol.y(n);
  if (res.radius >= cap * (1.0 - 1e-6)) {
    res.radius = kInf;
    res.unbounded = true;
  }
  return res;
}

ChebyshevResult feasible_set_radius(const QuadraticProgram& qp) {
  const int n = qp.num_vars();
  if (qp.num_eq() == 0) return chebyshev_radius(qp.A_in, qp.b_in);
  Eigen::ColPivHouseholderQR<Mat> qr(qp.A_eq.transpose());
  const int rank = static_cast<int>(qr.rank());
  const Mat Q = qr.householderQ() * Mat::Identity(n, n);
  const Mat N = Q.rightCols(n - rank);
  const Vec yp = qp.A_eq.colPivHouseholderQr().solve(qp.b_eq);
  if ((qp.A_eq * yp - qp.b_eq).cwiseAbs().maxCoeff() > 1e-8 * (1.0 + qp.b_eq.cwiseAbs().maxCoeff()))
    return {-kInf, Vec::Zero(n), false};
  if (N.cols() == 0) {
    const bool inside = qp.num_in() == 0 || (qp.A_in * yp - qp.b_in).maxCoeff() <= 0.0;
    return {inside ? 0.0 : -kInf, yp, false};
  }
  ChebyshevResult r = chebyshev_radius(qp.A_in * N, qp.b_in - qp.A_in * yp);
  r.center = yp + N * r.center;
  return r;
}

}  // namespace safely
