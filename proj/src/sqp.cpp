#include "safely/sqp.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <ostream>

namespace safely {

DynamicsLinearization linearize_dynamics(const RobotModel& model, const PlanIterate& iterate, int t) {
  if (t < 0 || t >= iterate.horizon()) throw ConfigError("linearize_dynamics: t out of range");
  const Vec x = iterate.state(t), u = iterate.input(t);
  Mat fx, fu;
  model.jacobians(x, u, fx, fu);
  DynamicsLinearization lin;
  lin.C.resize(model.state_dim() + model.input_dim(), model.state_dim());
  lin.C.topRows(model.state_dim()) = fx.transpose();
  lin.C.bottomRows(model.input_dim()) = fu.transpose();
  lin.d = model.step(x, u) - fx * x - fu * u;
  return lin;
}

KeepOutLinearization linearize_keepout(const KeepOutEllipsoid& e, const Vec& x_k_pos) {
  if (e.vacuous) throw ConfigError("linearize_keepout: vacuous ellipsoid");
  const Vec rel = x_k_pos - e.center;
  const Vec grad = e.shape_inv * rel;
  KeepOutLinearization lin;
  if (grad.norm() <= 1e-12 * (1.0 + e.shape_inv.norm())) {
    // No gradient at the center: tangent plane at the boundary point along
    // the leading axis of the shape.
    const Vec l0 = leading_eigenvector(e.shape);
    const Vec boundary = e.center + l0 / std::sqrt(l0.dot(e.shape_inv * l0));
    const Vec n = e.shape_inv * (boundary - e.center);
    lin.c = -n;
    lin.d = -n.dot(boundary);
    lin.fallback = true;
    spdlog::debug("keep-out linearization at the center of obstacle {} t={}", e.obstacle_id,
                  e.time_index);
    return lin;
  }
  lin.c = -2.0 * grad;
  lin.d = rel.dot(grad) - 1.0 + lin.c.dot(x_k_pos);
  return lin;
}

namespace {

Vec stack_decision(const PlanIterate& it) {
  const int T = it.horizon();
  const int nx = static_cast<int>(it.states.cols()), nu = static_cast<int>(it.inputs.cols());
  Vec z(T * (nx + nu));
  for (int t = 1; t <= T; ++t) z.segment((t - 1) * nx, nx) = it.state(t);
  for (int t = 0; t < T; ++t) z.segment(T * nx + t * nu, nu) = it.input(t);
  return z;
}

int count_active(const KeepOutGrid& grid) {
  int n = 0;
  for (const auto& row : grid)
    for (const auto& e : row) n += e.vacuous ? 0 : 1;
  return n;
}

double fixed_violation(const RobotModel& model, const FixedPositionRows& rows, const PlanIterate& p) {
  double v = 0.0;
  for (int r = 0; r < rows.size(); ++r) {
    const Vec pos = model.position(p.state(rows.time[r]));
    v += std::max(0.0, rows.normals.row(r).dot(pos) - rows.bounds(r));
  }
  return v;
}

}  // namespace

QuadraticProgram assemble_qp(const RobotModel& model, const KeepOutGrid& keepouts,
                             const PlanIterate& iterate, const CostModel& cost,
                             double slack_weight, const FixedPositionRows* fixed,
                             double keepout_margin) {
  const int T = iterate.horizon();
  const auto L = layout_for(model, T);
  const int nx = L.nx, nu = L.nu, pd = model.position_dim();
  const int ns = count_active(keepouts);
  const int nz = L.size() + ns;

  QuadraticProgram qp;
  const Mat M = cost.hessian(iterate);
  const Vec zk = stack_decision(iterate);
  qp.P = Mat::Zero(nz, nz);
  qp.P.topLeftCorner(L.size(), L.size()) = M;
  qp.q = Vec::Zero(nz);
  qp.q.head(L.size()) = cost.gradient(iterate) - M * zk;
  qp.q.tail(ns).setConstant(slack_weight);

  // Linearized dynamics, one block of n_x rows per step.
  qp.A_eq = Mat::Zero(T * nx, nz);
  qp.b_eq = Vec::Zero(T * nx);
  for (int t = 0; t < T; ++t) {
    const Vec x = iterate.state(t), u = iterate.input(t);
    Mat fx, fu;
    model.jacobians(x, u, fx, fu);
    const int r = t * nx;
    qp.A_eq.block(r, L.x_index(t + 1), nx, nx) = Mat::Identity(nx, nx);
    qp.A_eq.block(r, L.u_index(t), nx, nu) = -fu;
    Vec rhs = model.step(x, u) - fx * x - fu * u;
    if (t == 0) rhs += fx * x;  // x[0] is fixed
    else qp.A_eq.block(r, L.x_index(t), nx, nx) = -fx;
    qp.b_eq.segment(r, nx) = rhs;
    for (int i = 0; i < nx; ++i) qp.eq_tags.push_back({ConstraintTag::Kind::Dynamics, -1, t, i});
  }

  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> bounds;
  auto add_row = [&](Eigen::RowVectorXd row, double b, ConstraintTag tag) {
    rows.push_back(std::move(row));
    bounds.push_back(b);
    qp.in_tags.push_back(tag);
  };

  int slack = 0;
  for (std::size_t o = 0; o < keepouts.size(); ++o) {
    for (const auto& e : keepouts[o]) {
      if (e.vacuous) continue;
      const int t = e.time_index;
      const auto lin = linearize_keepout(e, model.position(iterate.state(t)));
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nz);
      row.segment(L.x_index(t), pd) = lin.c.transpose();
      row(L.size() + slack) = -1.0;
      add_row(row, lin.d - keepout_margin, {ConstraintTag::Kind::KeepOut, static_cast<int>(o), t, slack});
      ++slack;
    }
  }
  for (int s = 0; s < ns; ++s) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nz);
    row(L.size() + s) = -1.0;
    add_row(row, 0.0, {ConstraintTag::Kind::Slack, -1, -1, s});
  }
  if (fixed) {
    for (int r = 0; r < fixed->size(); ++r) {
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nz);
      row.segment(L.x_index(fixed->time[r]), pd) = fixed->normals.row(r);
      ConstraintTag tag = fixed->tags.empty()
                              ? ConstraintTag{ConstraintTag::Kind::Halfspace, -1, fixed->time[r], r}
                              : fixed->tags[r];
      add_row(row, fixed->bounds(r), tag);
    }
  }
  const Box& U = model.input_box();
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < nu; ++i) {
      if (std::isfinite(U.upper(i))) {
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nz);
        row(L.u_index(t) + i) = 1.0;
        add_row(row, U.upper(i), {ConstraintTag::Kind::InputBox, -1, t, i});
      }
      if (std::isfinite(U.lower(i))) {
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nz);
        row(L.u_index(t) + i) = -1.0;
        add_row(row, -U.lower(i), {ConstraintTag::Kind::InputBox, -1, t, nu + i});
      }
    }
  }
  const Box& S = model.safe_box();
  for (int t = 1; t <= T; ++t) {
    for (int i = 0; i < pd; ++i) {
      if (std::isfinite(S.upper(i))) {
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nz);
        row(L.x_index(t) + i) = 1.0;
        add_row(row, S.upper(i), {ConstraintTag::Kind::SafeBox, -1, t, i});
      }
      if (std::isfinite(S.lower(i))) {
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nz);
        row(L.x_index(t) + i) = -1.0;
        add_row(row, -S.lower(i), {ConstraintTag::Kind::SafeBox, -1, t, pd + i});
      }
    }
  }
  qp.A_in.resize(static_cast<Eigen::Index>(rows.size()), nz);
  qp.b_in.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    qp.A_in.row(r) = rows[r];
    qp.b_in(r) = bounds[r];
  }
  return qp;
}

const char* to_string(SqpStatus s) {
  switch (s) {
    case SqpStatus::Converged: return "CONVERGED";
    case SqpStatus::MaxIter: return "MAX_SQP_ITER";
    case SqpStatus::InfeasibleSoft: return "INFEASIBLE_SOFT";
  }
  return "UNKNOWN";
}

double keepout_violation(const RobotModel& model, const KeepOutGrid& keepouts,
                         const PlanIterate& plan, double* max_violation) {
  double total = 0.0, worst = 0.0;
  for (const auto& row : keepouts)
    for (const auto& e : row) {
      if (e.vacuous) continue;
      const double v = std::max(0.0, 1.0 - constraint_value(e, model.position(plan.state(e.time_index))));
      total += v;
      worst = std::max(worst, v);
    }
  if (max_violation) *max_violation = worst;
  return total;
}

double box_violation(const RobotModel& model, const PlanIterate& plan) {
  const Box& S = model.safe_box();
  double v = 0.0;
  for (int t = 1; t <= plan.horizon(); ++t) {
    const Vec p = model.position(plan.state(t));
    v += (p - S.upper).cwiseMax(0.0).sum() + (S.lower - p).cwiseMax(0.0).sum();
  }
  return v;
}

SqpResult sqp_solve(const RobotModel& model, const CostModel& cost, const KeepOutGrid& keepouts,
                    const PlanIterate& init, const SqpSettings& settings,
                    const FixedPositionRows* fixed) {
  const int T = init.horizon();
  if (T < 1) throw ConfigError("sqp_solve: empty horizon");
  const auto L = layout_for(model, T);
  const Vec x0 = init.state(0);
  QpSolver solver(settings.qp);

  auto violation = [&](const PlanIterate& p) {
    double v = keepout_violation(model, keepouts, p) + box_violation(model, p);
    if (fixed) v += fixed_violation(model, *fixed, p);
    return v;
  };
  auto merit = [&](const PlanIterate& p) {
    return cost.value(p) + settings.slack_weight * violation(p);
  };

  SqpResult res;
  PlanIterate current = init;
  double current_merit = merit(current);
  // A guess is only a linearization point; in feasibility-preserving mode the
  // initial plan is a genuine iterate that later steps must improve on.
  bool have_iterate = settings.require_feasible;
  auto acceptable = [&](const PlanIterate& p, double m) {
    if (settings.require_feasible && violation(p) > settings.feasibility_tol) return false;
    return m <= current_merit;
  };

  // Proximal weight on the inputs. It grows while the line search has to cut
  // the QP step and decays when full steps are accepted.
  double damping = 0.0;
  for (int k = 1; k <= settings.max_iter; ++k) {
    QuadraticProgram qp = assemble_qp(model, keepouts, current, cost, settings.slack_weight, fixed,
                                       settings.keepout_margin);
    if (damping > 0.0)
      for (int t = 0; t < T; ++t)
        for (int j = 0; j < L.nu; ++j) {
          const int i = L.u_index(t) + j;
          qp.P(i, i) += damping;
          qp.q(i) -= damping * current.inputs(t, j);
        }
    Vec warm = Vec::Zero(qp.num_vars());
    warm.head(L.size()) = stack_decision(current);
    QpSolution sol = solver.solve(qp, warm);
    if (sol.status == QpStatus::PrimalInfeasible) {
      spdlog::warn("sqp: QP subproblem infeasible at iteration {}", k);
      res.last_qp = std::move(qp);
      res.last_solution = std::move(sol);
      res.status = SqpStatus::InfeasibleSoft;
      break;
    }
    Mat u_qp(T, L.nu);
    for (int t = 0; t < T; ++t) u_qp.row(t) = sol.y.segment(L.u_index(t), L.nu).transpose();
    for (int t = 0; t < T; ++t)
      u_qp.row(t) = model.input_box().clamp(u_qp.row(t).transpose()).transpose();

    PlanIterate cand = model.rollout(x0, u_qp);
    double cand_merit = merit(cand);
    int halvings = 0;
    if (have_iterate && !acceptable(cand, cand_merit)) {
      bool improved = false;
      for (int h = 1; h <= settings.max_halvings; ++h) {
        const double s = std::ldexp(1.0, -h);
        const Mat u = current.inputs + s * (u_qp - current.inputs);
        PlanIterate trial = model.rollout(x0, u);
        const double m = merit(trial);
        halvings = h;
        if (acceptable(trial, m)) {
          cand = std::move(trial);
          cand_merit = m;
          improved = true;
          break;
        }
      }
      if (!improved) {
        res.last_qp = std::move(qp);
        res.last_solution = std::move(sol);
        res.trace.push_back({k, cost.value(current), current_merit, violation(current), 0.0, halvings,
                             sol.iterations});
        res.iterations = k;
        res.status = SqpStatus::Converged;
        break;
      }
    }
    if (settings.adaptive_damping && have_iterate) {
      if (halvings >= 2)
        damping = std::min(settings.max_damping, std::max(damping, settings.min_damping) * 8.0);
      else if (halvings == 0)
        damping = damping < 2.0 * settings.min_damping ? 0.0 : 0.25 * damping;
    }
    const double step = have_iterate ? (cand.inputs - current.inputs).cwiseAbs().maxCoeff() : 0.0;
    const double change = std::abs(cand_merit - current_merit);
    const bool first = !have_iterate;
    current = std::move(cand);
    current_merit = cand_merit;
    have_iterate = true;
    res.last_qp = std::move(qp);
    res.last_solution = std::move(sol);
    res.iterations = k;
    res.trace.push_back({k, cost.value(current), current_merit, violation(current), step, halvings,
                         res.last_solution.iterations});
    if (!first && change < settings.tolerance) {
      res.status = SqpStatus::Converged;
      break;
    }
    if (k == settings.max_iter) res.status = SqpStatus::MaxIter;
  }

  if (res.iterations == 0 || (!settings.require_feasible && res.trace.empty()))
    current = model.rollout(x0, init.inputs);
  current.objective = cost.value(current);
  double worst = 0.0;
  current.slack_total = keepout_violation(model, keepouts, current, &worst);
  res.max_violation = worst;
  const double total = violation(current);
  if (total > settings.feasibility_tol && res.status != SqpStatus::InfeasibleSoft) {
    spdlog::debug("sqp: terminal violation {:.3e}", total);
    res.status = SqpStatus::InfeasibleSoft;
  }
  res.merit = merit(current);
  res.plan = std::move(current);
  return res;
}

void write_trace_csv(std::ostream& os, const std::vector<SqpTraceRow>& trace) {
  os << "iteration,objective,merit,slack,step_norm,halvings,qp_iterations\n";
  for (const auto& r : trace)
    os << r.iteration << ',' << r.objective << ',' << r.merit << ',' << r.slack << ','
       << r.step_norm << ',' << r.halvings << ',' << r.qp_iterations << '\n';
}

namespace {

// Moves knots that sit inside (or within 5% of) a keep-out ellipsoid out
// sideways, perpendicular to the local path direction. When the knot lies on
// the line through the center the sideways axis is chosen deterministically.
void push_out(const RobotModel& model, std::vector<Vec>& pos, const KeepOutGrid& keepouts) {
  constexpr double target = 1.05;
  const int T = static_cast<int>(pos.size()) - 1;
  const int pd = model.position_dim();
  for (int pass = 0; pass < 3; ++pass) {
    for (int t = 1; t <= T; ++t) {
      Vec tangent = pos[std::min(t + 1, T)] - pos[t - 1];
      if (tangent.norm() < 1e-12) tangent = Vec::Unit(pd, 0);
      tangent.normalize();
      for (const auto& row : keepouts) {
        const KeepOutEllipsoid& e = row[t - 1];
        if (e.vacuous || e.dim() != pd) continue;
        if (constraint_value(e, pos[t]) >= target) continue;
        const Vec rel = pos[t] - e.center;
        Vec d = rel - tangent * tangent.dot(rel);
        if (d.norm() < 1e-6 * (1.0 + rel.norm())) {
          Eigen::Index k;
          tangent.cwiseAbs().minCoeff(&k);
          d = Vec::Unit(pd, k) - tangent * tangent(k);
        }
        d.normalize();
        const double a = d.dot(e.shape_inv * d);
        const double b = d.dot(e.shape_inv * rel);
        const double c = rel.dot(e.shape_inv * rel) - target;
        const double s = (-b + std::sqrt(std::max(0.0, b * b - a * c))) / a;
        pos[t] += s * d;
      }
      const Box& S = model.safe_box();
      pos[t] = pos[t].cwiseMax(S.lower).cwiseMin(S.upper);
    }
  }
}

std::vector<Vec> positions_of(const RobotModel& model, const PlanIterate& p) {
  std::vector<Vec> pos;
  for (int t = 0; t <= p.horizon(); ++t) pos.push_back(model.position(p.state(t)));
  return pos;
}

}  // namespace

PlanIterate initial_guess(const RobotModel& model, const Vec& x0, const Vec& goal, int T,
                          const KeepOutGrid& keepouts) {
  if (T < 1) throw ConfigError("initial_guess: horizon must be >= 1");
  const Vec p0 = model.position(x0);
  PlanIterate line;
  line.states.resize(T + 1, model.state_dim());
  line.inputs.resize(T, model.input_dim());
  line.states.row(0) = x0.transpose();
  for (int t = 1; t <= T; ++t) {
    const Vec p = p0 + (static_cast<double>(t) / T) * (goal - p0);
    const Vec vel = (goal - p0) / (model.dt() * T);
    line.states.row(t) = model.guess_state(p, vel, line.state(t - 1)).transpose();
  }
  for (int t = 0; t < T; ++t)
    line.inputs.row(t) = model.fit_input(line.state(t), line.state(t + 1)).transpose();

  // The straight line ignores the input limits, so its timing is unreachable
  // from rest. Re-time it by planning toward the goal with the keep-outs
  // dropped, then move the offending knots sideways.
  const GoalCost cost(model, goal);
  SqpSettings free_settings;
  free_settings.max_iter = 20;
  PlanIterate g = sqp_solve(model, cost, {}, line, free_settings).plan;

  std::vector<Vec> pos = positions_of(model, g);
  push_out(model, pos, keepouts);
  const int pd = model.position_dim();
  for (int t = 1; t <= T; ++t) g.states.row(t).head(pd) = pos[t].transpose();
  return g;
}

PlanIterate hold_guess(const RobotModel& model, const Vec& x0, int T) {
  Mat u(T, model.input_dim());
  Vec x = x0;
  for (int t = 0; t < T; ++t) {
    const Vec rest = model.guess_state(model.position(x), Vec::Zero(model.position_dim()), x);
    u.row(t) = model.fit_input(x, rest).transpose();
    x = model.step(x, u.row(t).transpose());
  }
  return model.rollout(x0, u);
}

PlanIterate shifted_guess(const RobotModel& model, const PlanIterate& previous, const Vec& x0,
                          const KeepOutGrid& keepouts) {
  const int T = previous.horizon();
  PlanIterate g;
  g.states.resize(T + 1, model.state_dim());
  g.inputs.resize(T, model.input_dim());
  g.states.row(0) = x0.transpose();
  for (int t = 1; t <= T; ++t) {
    const Vec s = previous.state(std::min(t + 1, T));
    g.states.row(t) = model.align_state(s, g.state(t - 1)).transpose();
  }
  for (int t = 0; t < T; ++t) g.inputs.row(t) = previous.inputs.row(std::min(t + 1, T - 1));

  std::vector<Vec> pos = positions_of(model, g);
  push_out(model, pos, keepouts);
  const int pd = model.position_dim();
  for (int t = 1; t <= T; ++t) g.states.row(t).head(pd) = pos[t].transpose();
  return g;
}

}  // namespace safely
