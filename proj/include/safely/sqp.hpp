#pragma once

#include <iosfwd>
#include <vector>

#include "safely/models.hpp"
#include "safely/occupancy.hpp"
#include "safely/qp.hpp"

namespace safely {

/// First-order model x[t+1] = C' [x; u] + d around (x^k[t], u^k[t]).
struct DynamicsLinearization {
  Mat C;  // (n_x + n_u) x n_x, i.e. [f_x f_u]^T
  Vec d;
};

DynamicsLinearization linearize_dynamics(const RobotModel& model, const PlanIterate& iterate, int t);

/// Half-space c'x <= d excluding the ellipsoid interior, linearized at x_k.
struct KeepOutLinearization {
  Vec c;
  double d = 0.0;
  bool fallback = false;  // x_k at the center: boundary tangent plane used
};

KeepOutLinearization linearize_keepout(const KeepOutEllipsoid& e, const Vec& x_k_pos);

/// Extra position rows a'x[t] <= b held fixed across SQP iterations.
struct FixedPositionRows {
  std::vector<int> time;  // t in 1..T
  Mat normals;            // rows x position_dim
  Vec bounds;
  std::vector<ConstraintTag> tags;

  int size() const { return static_cast<int>(bounds.size()); }
};

/// QP over (x[1..T], u[0..T-1], s): quadratic cost model at the iterate,
/// linearized dynamics, keep-out rows with nonnegative slacks penalized
/// linearly, input and safe-set boxes. `fixed` rows are added without slack.
/// Keep-out rows ask for constraint value 1 + keepout_margin to first order.
QuadraticProgram assemble_qp(const RobotModel& model, const KeepOutGrid& keepouts,
                             const PlanIterate& iterate, const CostModel& cost,
                             double slack_weight, const FixedPositionRows* fixed = nullptr,
                             double keepout_margin = 0.0);

struct SqpSettings {
  double slack_weight = 1e4;
  double tolerance = 1e-4;  // absolute merit change
  int max_iter = 50;
  int max_halvings = 8;
  double feasibility_tol = 1e-6;
  /// Absorbs the second-order gap between the linearized rows and rollouts
  /// through nonlinear dynamics.
  double keepout_margin = 0.0;
  /// Treat `init` as a feasible iterate: every accepted step must keep the
  /// plan feasible and not increase the merit.
  bool require_feasible = false;
  /// Levenberg-style proximal term on the inputs, raised when steps need
  /// backtracking.
  bool adaptive_damping = false;
  double min_damping = 1.0;
  double max_damping = 1e5;
  QpSettings qp;
};

enum class SqpStatus { Converged, MaxIter, InfeasibleSoft };

const char* to_string(SqpStatus s);

struct SqpTraceRow {
  int iteration = 0;
  double objective = 0.0;
  double merit = 0.0;
  double slack = 0.0;
  double step_norm = 0.0;
  int halvings = 0;
  int qp_iterations = 0;
};

struct SqpResult {
  PlanIterate plan;
  SqpStatus status = SqpStatus::MaxIter;
  int iterations = 0;
  double merit = 0.0;
  /// max over (o,t) of 1 - constraint_value, clipped at 0.
  double max_violation = 0.0;
  QuadraticProgram last_qp;
  QpSolution last_solution;
  std::vector<SqpTraceRow> trace;
};

/// Total keep-out violation sum max(0, 1 - h) and safe-box violation of a plan.
double keepout_violation(const RobotModel& model, const KeepOutGrid& keepouts,
                         const PlanIterate& plan, double* max_violation = nullptr);
double box_violation(const RobotModel& model, const PlanIterate& plan);

/// Damped SQP loop. Iterates are rollouts of QP inputs through the true
/// dynamics, so every returned plan is dynamically consistent. The first QP
/// step from the initial guess is always accepted.
SqpResult sqp_solve(const RobotModel& model, const CostModel& cost, const KeepOutGrid& keepouts,
                    const PlanIterate& init, const SqpSettings& settings = {},
                    const FixedPositionRows* fixed = nullptr);

void write_trace_csv(std::ostream& os, const std::vector<SqpTraceRow>& trace);

/// Plan toward the goal with keep-outs ignored, then knots that fall inside a
/// keep-out ellipsoid pushed out sideways (perpendicular to the path). The
/// pushed states are linearization points only.
PlanIterate initial_guess(const RobotModel& model, const Vec& x0, const Vec& goal, int T,
                          const KeepOutGrid& keepouts);

/// Rollout that brakes and holds position; a fallback start when the other
/// guesses lead the SQP into an infeasible local minimum.
PlanIterate hold_guess(const RobotModel& model, const Vec& x0, int T);

/// Previous plan advanced one step (last knot repeated), restarted at x0,
/// with the same sideways push-out applied to knots inside keep-outs.
PlanIterate shifted_guess(const RobotModel& model, const PlanIterate& previous, const Vec& x0,
                          const KeepOutGrid& keepouts);

}  // namespace safely
