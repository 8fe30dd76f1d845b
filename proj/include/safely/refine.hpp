#pragma once

#include <vector>

#include "safely/sqp.hpp"

namespace safely {

/// Closest point of the solid ellipsoid to x (x itself when inside). Solves
/// the secular equation sum_i q_i w_i^2 / (q_i + nu)^2 = 1 in the shape's
/// eigenbasis with safeguarded Newton steps.
Vec project_to_ellipsoid(const KeepOutEllipsoid& e, const Vec& x);

/// Closest point of the ellipsoid boundary to x; used for points inside.
Vec nearest_boundary_point(const KeepOutEllipsoid& e, const Vec& x);

/// One supporting half-space per (obstacle, step), rows ordered obstacle-major.
/// Row r reads C_proj.row(r) [x[1]; ...; x[T]] <= d_proj(r) on positions.
struct SupportingHalfspaceSet {
  Mat C_proj;
  Vec d_proj;
  std::vector<ConstraintTag> row_tags;
  std::vector<Vec> projection_points;
  std::vector<char> vacuous;
  /// Built at the boundary point nearest a plan knot that was inside.
  std::vector<char> flagged;
  int position_dim = 0;
  int horizon = 0;

  int size() const { return static_cast<int>(d_proj.size()); }
  /// Non-vacuous rows in the form consumed by the QP assembly.
  FixedPositionRows position_rows() const;
};

SupportingHalfspaceSet build_supporting_halfspaces(const RobotModel& model,
                                                   const KeepOutGrid& keepouts,
                                                   const PlanIterate& x_sqp);

struct RelevanceReport {
  Mat lambda_grid;  // N_O x T, column t-1 holds step t
  Vec scores;
  std::vector<int> selected;
  double gamma = 1.0;
};

/// Lambda_o = sum_t gamma^t lambda_{o,t}; the K largest scores above
/// `threshold` are selected (ties to the lower index).
RelevanceReport compute_relevance(const Mat& lambda_grid, double gamma, int K,
                                  double threshold = 1e-9);

struct RefineSettings {
  double gamma = 1.0;
  int K = 1;
  double threshold = 1e-9;
  SqpSettings sqp;
};

struct RefinedResult {
  PlanIterate plan;  // x_pr
  RelevanceReport report;
  QuadraticProgram qp;  // final refined QP (halfspace rows tagged Halfspace)
  QpSolution solution;
  /// False when x_sqp was kept because no feasible improvement was found.
  bool improved = false;
  bool qp_ok = false;
  int iterations = 0;
};

/// Re-solve the planning problem with the supporting half-spaces in place of
/// the keep-out constraints. Linear models take a single QP; nonlinear models
/// run the SQP with the rows held fixed. The result never has a larger cost
/// than x_sqp.
RefinedResult solve_refined(const RobotModel& model, const CostModel& cost,
                            const SupportingHalfspaceSet& halfspaces, const PlanIterate& x_sqp,
                            int num_obstacles, const RefineSettings& settings = {});

/// Multipliers of Halfspace-tagged rows arranged as an N_O x T grid.
Mat halfspace_duals(const QuadraticProgram& qp, const QpSolution& sol, int num_obstacles, int T);

struct SensitivityResult {
  double predicted_drop = 0.0;  // lambda_row * delta
  double actual_drop = 0.0;     // p*(0) - p*(delta)
  double p0 = 0.0;
  double p_delta = 0.0;
};

/// Relax inequality row `row` by delta and re-solve.
SensitivityResult sensitivity_audit(const QuadraticProgram& qp, const QpSolution& solution, int row,
                                    double delta, const QpSettings& settings = {});

struct ChebyshevResult {
  double radius = 0.0;
  Vec center;
  bool unbounded = false;
};

/// Largest ball {c + r u : |u| <= 1} inside {y : G y <= h}. Rows with a zero
/// normal are skipped when h >= 0 and make the set empty otherwise.
ChebyshevResult chebyshev_radius(const Mat& G, const Vec& h);

/// Chebyshev radius of the feasible set of a QP, measured inside the affine
/// subspace cut out by its equality rows.
ChebyshevResult feasible_set_radius(const QuadraticProgram& qp);

}  // namespace safely
