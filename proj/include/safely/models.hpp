#pragma once

#include <memory>
#include <string>
#include <vector>

#include "safely/common.hpp"

namespace safely {

/// Stacked state/input trajectory x[0..T], u[0..T-1].
struct PlanIterate {
  Mat states;  // (T+1) x n_x
  Mat inputs;  // T x n_u
  double objective = 0.0;
  double slack_total = 0.0;

  int horizon() const { return static_cast<int>(inputs.rows()); }
  Vec state(int t) const { return states.row(t).transpose(); }
  Vec input(int t) const { return inputs.row(t).transpose(); }
};

/// Discrete-time robot x[t+1] = f(x[t], u[t]) with a box input set and a box
/// safe set on the position sub-vector (the first position_dim() states).
class RobotModel {
 public:
  RobotModel(double dt, Box input_box, Box safe_box);
  virtual ~RobotModel() = default;

  virtual std::string name() const = 0;
  virtual int state_dim() const = 0;
  virtual int input_dim() const = 0;
  virtual int position_dim() const = 0;
  virtual bool is_linear() const = 0;

  virtual Vec step(const Vec& x, const Vec& u) const = 0;
  /// fx = df/dx (n_x x n_x), fu = df/du (n_x x n_u).
  virtual void jacobians(const Vec& x, const Vec& u, Mat& fx, Mat& fu) const = 0;

  /// Applied to executed states only; planning keeps angles unwrapped.
  virtual Vec wrap_state(const Vec& x) const { return x; }
  /// Same physical state expressed continuously with `reference` (angles
  /// shifted by whole turns).
  virtual Vec align_state(const Vec& x, const Vec& /*reference*/) const { return x; }

  /// State located at `position` moving with `velocity` (path tangent per
  /// second); `previous` disambiguates headings. Used by initial guesses.
  virtual Vec guess_state(const Vec& position, const Vec& velocity, const Vec& previous) const = 0;

  /// Goal heading/velocity conventions live in the model; this completes a
  /// position-only initial condition (e.g. a 2-vector for a unicycle).
  virtual Vec complete_state(const Vec& x0, const Vec& goal) const;

  Vec position(const Vec& x) const { return x.head(position_dim()); }
  /// Selection matrix S with S x = position(x).
  Mat position_map() const;

  /// One Gauss-Newton step of min_u ||x_next - f(x, u)|| from the input box
  /// center, clamped to the box.
  Vec fit_input(const Vec& x, const Vec& x_next) const;

  /// Simulate inputs through f from x0.
  PlanIterate rollout(const Vec& x0, const Mat& inputs) const;

  double dt() const { return dt_; }
  const Box& input_box() const { return input_box_; }
  const Box& safe_box() const { return safe_box_; }

 protected:
  double dt_;
  Box input_box_;
  Box safe_box_;
};

/// p[t+1] = p + dt v + dt^2/2 a,  v[t+1] = v + dt a, a bounded in infinity norm.
class DoubleIntegrator3D final : public RobotModel {
 public:
  DoubleIntegrator3D(double dt, double u_max, Box safe_box);

  std::string name() const override { return "double_integrator_3d"; }
  int state_dim() const override { return 6; }
  int input_dim() const override { return 3; }
  int position_dim() const override { return 3; }
  bool is_linear() const override { return true; }

  Vec step(const Vec& x, const Vec& u) const override;
  void jacobians(const Vec& x, const Vec& u, Mat& fx, Mat& fu) const override;
  Vec guess_state(const Vec& position, const Vec& velocity, const Vec& previous) const override;
  Vec complete_state(const Vec& x0, const Vec& goal) const override;

  const Mat& A() const { return A_; }
  const Mat& B() const { return B_; }

 private:
  Mat A_;
  Mat B_;
};

/// Unicycle (x1, x2, theta) with inputs (v, omega), Euler-discretized.
class DubinsVehicle final : public RobotModel {
 public:
  DubinsVehicle(double dt, double v_min, double v_max, double omega_min, double omega_max,
                Box safe_box);

  std::string name() const override { return "dubins"; }
  int state_dim() const override { return 3; }
  int input_dim() const override { return 2; }
  int position_dim() const override { return 2; }
  bool is_linear() const override { return false; }

  Vec step(const Vec& x, const Vec& u) const override;
  void jacobians(const Vec& x, const Vec& u, Mat& fx, Mat& fu) const override;
  Vec wrap_state(const Vec& x) const override;
  Vec align_state(const Vec& x, const Vec& reference) const override;
  Vec guess_state(const Vec& position, const Vec& velocity, const Vec& previous) const override;
  /// A 2-vector start gets the bearing toward the goal as its heading.
  Vec complete_state(const Vec& x0, const Vec& goal) const override;
};

/// Wrap an angle to (-pi, pi].
double wrap_angle(double a);

Vec dubins_step(const Vec& state, double v, double omega, double dt);

/// |wrap(bearing(target) - theta)| <= theta_v / 2, theta_v the full angle.
bool in_field_of_view(const Vec& state, const Vec& target, double theta_v);

struct AttentionValue {
  double value = 0.0;
  Vec grad_p;  // 2-vector
  double grad_theta = 0.0;
};

/// beta * gamma_hat^t * <mu_r - p, (cos theta, sin theta)>; positive when the
/// heading points at the target.
AttentionValue attention_term(const Vec& p, double theta, const Vec& mu_r, double beta,
                              double gamma_hat, int t);

/// Smooth cost over a plan. Derivatives are taken w.r.t. the stacked decision
/// [x[1..T], u[0..T-1]] (x[0] is fixed).
class CostModel {
 public:
  virtual ~CostModel() = default;
  virtual double value(const PlanIterate& plan) const = 0;
  virtual Vec gradient(const PlanIterate& plan) const = 0;
  /// Positive definite surrogate of the Hessian.
  virtual Mat hessian(const PlanIterate& plan) const = 0;
};

/// Regularization added to every Hessian surrogate.
inline constexpr double kHessianRegularization = 1e-6;

/// sum_{t=1..T} ||position(x[t]) - goal||^2.
class GoalCost : public CostModel {
 public:
  GoalCost(const RobotModel& model, Vec goal);

  double value(const PlanIterate& plan) const override;
  Vec gradient(const PlanIterate& plan) const override;
  Mat hessian(const PlanIterate& plan) const override;

  const Vec& goal() const { return goal_; }

 protected:
  const RobotModel& model_;
  Vec goal_;
};

/// GoalCost plus a discounted heading-alignment term toward a target
/// obstacle's predicted means. Requires a (x1, x2, theta) state layout.
class AttentionCost final : public GoalCost {
 public:
  /// `targets[t-1]` is the target mean at step t; empty means inactive.
  /// `reward_alignment` subtracts the term (turn toward the target); false
  /// adds it, which penalizes facing the target.
  AttentionCost(const RobotModel& model, Vec goal, double beta, double gamma_hat,
                std::vector<Vec> targets, bool reward_alignment = true);

  bool active() const { return !targets_.empty(); }

  double value(const PlanIterate& plan) const override;
  Vec gradient(const PlanIterate& plan) const override;
  Mat hessian(const PlanIterate& plan) const override;

 private:
  double sign() const { return reward_alignment_ ? -1.0 : 1.0; }

  double beta_;
  double gamma_hat_;
  std::vector<Vec> targets_;
  bool reward_alignment_;
};

/// Decision-vector offsets for a plan with horizon T.
struct DecisionLayout {
  int nx = 0;
  int nu = 0;
  int T = 0;
  int x_index(int t) const { return (t - 1) * nx; }  // t in 1..T
  int u_index(int t) const { return T * nx + t * nu; }  // t in 0..T-1
  int size() const { return T * (nx + nu); }
};

DecisionLayout layout_for(const RobotModel& model, int T);

}  // namespace safely
