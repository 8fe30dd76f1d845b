#pragma once

#include "json.hpp"
#include <optional>
#include <string>
#include <vector>

#include "safely/common.hpp"

namespace safely {

/// What a constraint row encodes; used to map multipliers back to their
/// meaning after a solve.
struct ConstraintTag {
  enum class Kind { Generic, KeepOut, Halfspace, Slack, Dynamics, InputBox, SafeBox };
  Kind kind = Kind::Generic;
  int obstacle = -1;
  int time = -1;
  int index = -1;
};

/// min 1/2 y'Py + q'y  s.t.  A_eq y = b_eq,  A_in y <= b_in.
struct QuadraticProgram {
  Mat P;
  Vec q;
  Mat A_eq;
  Vec b_eq;
  Mat A_in;
  Vec b_in;
  std::vector<ConstraintTag> eq_tags;
  std::vector<ConstraintTag> in_tags;

  /// Empty problem with `n` variables and no constraints.
  static QuadraticProgram unconstrained(const Mat& P, const Vec& q);

  int num_vars() const { return static_cast<int>(q.size()); }
  int num_eq() const { return static_cast<int>(b_eq.size()); }
  int num_in() const { return static_cast<int>(b_in.size()); }
  double objective(const Vec& y) const { return 0.5 * y.dot(P * y) + q.dot(y); }

  void validate() const;
};

enum class QpStatus { Optimal, PrimalInfeasible, MaxIter };

const char* to_string(QpStatus s);

struct KktResiduals {
  double stationarity = 0.0;
  double primal = 0.0;
  double complementarity = 0.0;

  double max() const;
};

struct QpSolution {
  Vec y;
  Vec lambda_eq;
  Vec lambda_in;
  double objective = 0.0;
  QpStatus status = QpStatus::MaxIter;
  KktResiduals kkt;
  int iterations = 0;
  bool polished = false;
  /// For PrimalInfeasible: multiplier direction proving infeasibility,
  /// stacked [eq; in].
  Vec certificate;

  /// Dual objective -1/2 y'Py - b_eq'lambda_eq - b_in'lambda_in.
  double dual_objective(const QuadraticProgram& qp) const;
};

KktResiduals kkt_residuals(const QuadraticProgram& qp, const Vec& y,
                           const Vec& lambda_eq, const Vec& lambda_in);

struct QpSettings {
  double eps_abs = 1e-6;
  double eps_rel = 1e-6;
  int max_iter = 20000;
  double rho = 0.1;
  double sigma = 1e-6;
  double relaxation = 1.6;
  int scaling_iters = 10;
  int check_every = 25;
  double eps_prim_inf = 1e-5;
  /// Rows whose residual is within this of the bound seed the polishing
  /// active set.
  double active_tol = 1e-5;
  int polish_rounds = 40;
  /// Splitting iterations before the interior-point stage takes over. The
  /// splitting phase still detects infeasibility and finishes easy problems.
  int splitting_budget = 200;
  int interior_max_iter = 80;
};

/// Operator-splitting QP solver with an active-set polishing stage that
/// recovers multipliers to near machine precision.
///
/// The splitting iterations run on a Ruiz-equilibrated copy of the problem
/// and factor the quasi-definite KKT matrix sparsely; the polishing stage
/// solves the equality-constrained KKT system of the detected active set on
/// the original problem and corrects the set until primal feasibility and
/// dual sign conditions both hold. An instance owns its workspace; use one
/// per thread.
class QpSolver {
 public:
  explicit QpSolver(QpSettings settings = {}) : settings_(settings) {}

  QpSolution solve(const QuadraticProgram& qp,
                   const std::optional<Vec>& warm_start = std::nullopt);

  const QpSettings& settings() const { return settings_; }

 private:
  QpSettings settings_;
};

/// Self-describing JSON for offline reproduction (row-major dense arrays).
nlohmann::json qp_to_json(const QuadraticProgram& qp);
QuadraticProgram qp_from_json(const nlohmann::json& j);
void dump_qp(const QuadraticProgram& qp, const std::string& path);

}  // namespace safely
