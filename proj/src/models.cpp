#include "safely/models.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <cmath>
#include <numbers>

namespace safely {

RobotModel::RobotModel(double dt, Box input_box, Box safe_box)
    : dt_(dt), input_box_(std::move(input_box)), safe_box_(std::move(safe_box)) {
  if (!(dt > 0.0)) throw ConfigError("robot: dt must be positive");
}

Vec RobotModel::complete_state(const Vec& x0, const Vec& /*goal*/) const {
  if (x0.size() != state_dim()) throw ConfigError("robot: initial state has wrong dimension");
  return x0;
}

Mat RobotModel::position_map() const {
  Mat S = Mat::Zero(position_dim(), state_dim());
  S.leftCols(position_dim()).setIdentity();
  return S;
}

Vec RobotModel::fit_input(const Vec& x, const Vec& x_next) const {
  const int nu = input_dim();
  Vec u0(nu);
  for (int i = 0; i < nu; ++i) {
    const double lo = input_box_.lower(i), hi = input_box_.upper(i);
    if (std::isfinite(lo) && std::isfinite(hi)) u0(i) = 0.5 * (lo + hi);
    else if (std::isfinite(lo)) u0(i) = std::max(lo, 0.0);
    else if (std::isfinite(hi)) u0(i) = std::min(hi, 0.0);
    else u0(i) = 0.0;
  }
  Mat fx, fu;
  jacobians(x, u0, fx, fu);
  const Vec r = x_next - step(x, u0);
  const Vec du = Eigen::CompleteOrthogonalDecomposition<Mat>(fu).solve(r);
  return input_box_.clamp(u0 + du);
}

PlanIterate RobotModel::rollout(const Vec& x0, const Mat& inputs) const {
  PlanIterate p;
  const auto T = inputs.rows();
  p.inputs = inputs;
  p.states.resize(T + 1, state_dim());
  p.states.row(0) = x0.transpose();
  for (Eigen::Index t = 0; t < T; ++t)
    p.states.row(t + 1) = step(p.states.row(t).transpose(), inputs.row(t).transpose()).transpose();
  return p;
}

DoubleIntegrator3D::DoubleIntegrator3D(double dt, double u_max, Box safe_box)
    : RobotModel(dt, Box{Vec::Constant(3, -u_max), Vec::Constant(3, u_max)}, std::move(safe_box)) {
  if (!(u_max > 0.0)) throw ConfigError("double integrator: u_max must be positive");
  if (safe_box_.dim() != 3) throw ConfigError("double integrator: safe box must be 3-D");
  A_ = Mat::Identity(6, 6);
  A_.topRightCorner(3, 3) = dt * Mat::Identity(3, 3);
  B_ = Mat::Zero(6, 3);
  B_.topRows(3) = 0.5 * dt * dt * Mat::Identity(3, 3);
  B_.bottomRows(3) = dt * Mat::Identity(3, 3);
}

Vec DoubleIntegrator3D::step(const Vec& x, const Vec& u) const { return A_ * x + B_ * u; }

void DoubleIntegrator3D::jacobians(const Vec&, const Vec&, Mat& fx, Mat& fu) const {
  fx = A_;
  fu = B_;
}

Vec DoubleIntegrator3D::guess_state(const Vec& position, const Vec& velocity, const Vec&) const {
  Vec x(6);
  x << position, velocity;
  return x;
}

Vec DoubleIntegrator3D::complete_state(const Vec& x0, const Vec& goal) const {
  if (x0.size() == 3) {
    Vec x(6);
    x << x0, Vec::Zero(3);
    return x;
  }
  return RobotModel::complete_state(x0, goal);
}

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(a + std::numbers::pi, two_pi);
  if (w <= 0.0) w += two_pi;
  return w - std::numbers::pi;
}

Vec dubins_step(const Vec& state, double v, double omega, double dt) {
  Vec next(3);
  next(0) = state(0) + dt * v * std::cos(state(2));
  next(1) = state(1) + dt * v * std::sin(state(2));
  next(2) = wrap_angle(state(2) + dt * omega);
  return next;
}

DubinsVehicle::DubinsVehicle(double dt, double v_min, double v_max, double omega_min,
                             double omega_max, Box safe_box)
    : RobotModel(dt, Box{Vec{{v_min, omega_min}}, Vec{{v_max, omega_max}}}, std::move(safe_box)) {
  if (!(v_min > 0.0) || !(v_max >= v_min)) throw ConfigError("dubins: need 0 < v_min <= v_max");
  if (!(omega_max >= omega_min)) throw ConfigError("dubins: need omega_min <= omega_max");
  if (safe_box_.dim() != 2) throw ConfigError("dubins: safe box must be 2-D");
}

Vec DubinsVehicle::step(const Vec& x, const Vec& u) const {
  Vec next(3);
  next(0) = x(0) + dt_ * u(0) * std::cos(x(2));
  next(1) = x(1) + dt_ * u(0) * std::sin(x(2));
  next(2) = x(2) + dt_ * u(1);
  return next;
}

void DubinsVehicle::jacobians(const Vec& x, const Vec& u, Mat& fx, Mat& fu) const {
  const double c = std::cos(x(2)), s = std::sin(x(2));
  fx = Mat::Identity(3, 3);
  fx(0, 2) = -dt_ * u(0) * s;
  fx(1, 2) = dt_ * u(0) * c;
  fu = Mat::Zero(3, 2);
  fu(0, 0) = dt_ * c;
  fu(1, 0) = dt_ * s;
  fu(2, 1) = dt_;
}

Vec DubinsVehicle::wrap_state(const Vec& x) const {
  Vec w = x;
  w(2) = wrap_angle(x(2));
  return w;
}

Vec DubinsVehicle::align_state(const Vec& x, const Vec& reference) const {
  Vec a = x;
  a(2) = reference(2) + wrap_angle(x(2) - reference(2));
  return a;
}

Vec DubinsVehicle::guess_state(const Vec& position, const Vec& velocity, const Vec& previous) const {
  double theta = previous(2);
  if (velocity.norm() > 1e-9) {
    const double raw = std::atan2(velocity(1), velocity(0));
    theta = previous(2) + wrap_angle(raw - previous(2));
  }
  return Vec{{position(0), position(1), theta}};
}

Vec DubinsVehicle::complete_state(const Vec& x0, const Vec& goal) const {
  if (x0.size() == 2) {
    const Vec d = goal.head(2) - x0;
    return Vec{{x0(0), x0(1), std::atan2(d(1), d(0))}};
  }
  return RobotModel::complete_state(x0, goal);
}

bool in_field_of_view(const Vec& state, const Vec& target, double theta_v) {
  const double bearing = std::atan2(target(1) - state(1), target(0) - state(0));
  return std::abs(wrap_angle(bearing - state(2))) <= 0.5 * theta_v + 1e-12;
}

AttentionValue attention_term(const Vec& p, double theta, const Vec& mu_r, double beta,
                              double gamma_hat, int t) {
  const double w = beta * std::pow(gamma_hat, t);
  const double c = std::cos(theta), s = std::sin(theta);
  const Vec d = mu_r.head(2) - p.head(2);
  AttentionValue a;
  a.value = w * (d(0) * c + d(1) * s);
  a.grad_p = Vec{{-w * c, -w * s}};
  a.grad_theta = w * (-d(0) * s + d(1) * c);
  return a;
}

DecisionLayout layout_for(const RobotModel& model, int T) {
  return {model.state_dim(), model.input_dim(), T};
}

GoalCost::GoalCost(const RobotModel& model, Vec goal) : model_(model), goal_(std::move(goal)) {
  if (goal_.size() != model.position_dim()) throw ConfigError("goal cost: goal dimension mismatch");
}

double GoalCost::value(const PlanIterate& plan) const {
  double v = 0.0;
  for (int t = 1; t <= plan.horizon(); ++t)
    v += (model_.position(plan.state(t)) - goal_).squaredNorm();
  return v;
}

Vec GoalCost::gradient(const PlanIterate& plan) const {
  const auto L = layout_for(model_, plan.horizon());
  Vec g = Vec::Zero(L.size());
  const int pd = model_.position_dim();
  for (int t = 1; t <= L.T; ++t)
    g.segment(L.x_index(t), pd) = 2.0 * (model_.position(plan.state(t)) - goal_);
  return g;
}

Mat GoalCost::hessian(const PlanIterate& plan) const {
  const auto L = layout_for(model_, plan.horizon());
  Mat H = kHessianRegularization * Mat::Identity(L.size(), L.size());
  const int pd = model_.position_dim();
  for (int t = 1; t <= L.T; ++t)
    for (int i = 0; i < pd; ++i) H(L.x_index(t) + i, L.x_index(t) + i) += 2.0;
  return H;
}

AttentionCost::AttentionCost(const RobotModel& model, Vec goal, double beta, double gamma_hat,
                             std::vector<Vec> targets, bool reward_alignment)
    : GoalCost(model, std::move(goal)),
      beta_(beta),
      gamma_hat_(gamma_hat),
      targets_(std::move(targets)),
      reward_alignment_(reward_alignment) {
  if (model.position_dim() != 2 || model.state_dim() < 3)
    throw ConfigError("attention cost: needs a planar state with heading");
  if (!(beta >= 0.0)) throw ConfigError("attention cost: beta must be nonnegative");
  if (!(gamma_hat > 0.0 && gamma_hat <= 1.0))
    throw ConfigError("attention cost: gamma_hat must be in (0, 1]");
}

double AttentionCost::value(const PlanIterate& plan) const {
  double v = GoalCost::value(plan);
  if (!active()) return v;
  if (static_cast<int>(targets_.size()) < plan.horizon())
    throw ConfigError("attention cost: fewer targets than horizon steps");
  double a = 0.0;
  for (int t = 1; t <= plan.horizon(); ++t) {
    const Vec x = plan.state(t);
    a += attention_term(x.head(2), x(2), targets_[t - 1], beta_, gamma_hat_, t).value;
  }
  return v + sign() * a;
}

Vec AttentionCost::gradient(const PlanIterate& plan) const {
  Vec g = GoalCost::gradient(plan);
  if (!active()) return g;
  const auto L = layout_for(model_, plan.horizon());
  for (int t = 1; t <= L.T; ++t) {
    const Vec x = plan.state(t);
    const auto a = attention_term(x.head(2), x(2), targets_[t - 1], beta_, gamma_hat_, t);
    g.segment(L.x_index(t), 2) += sign() * a.grad_p;
    g(L.x_index(t) + 2) += sign() * a.grad_theta;
  }
  return g;
}

Mat AttentionCost::hessian(const PlanIterate& plan) const {
  if (!active()) return GoalCost::hessian(plan);
  const auto L = layout_for(model_, plan.horizon());
  Mat H = kHessianRegularization * Mat::Identity(L.size(), L.size());
  for (int t = 1; t <= L.T; ++t) {
    const Vec x = plan.state(t);
    const auto a = attention_term(x.head(2), x(2), targets_[t - 1], beta_, gamma_hat_, t);
    const double w = beta_ * std::pow(gamma_hat_, t);
    const double c = std::cos(x(2)), s = std::sin(x(2));
    // Exact per-knot Hessian in (p1, p2, theta), then clipped to PSD.
    Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
    h(0, 0) = h(1, 1) = 2.0;
    h(0, 2) = h(2, 0) = sign() * (w * s);
    h(1, 2) = h(2, 1) = sign() * (-w * c);
    h(2, 2) = sign() * (-a.value);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(h);
    const Eigen::Vector3d lam = es.eigenvalues().cwiseMax(0.0);
    const Eigen::Matrix3d clipped = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
    H.block(L.x_index(t), L.x_index(t), 3, 3) += 0.5 * (clipped + clipped.transpose());
  }
  return H;
}

}  // namespace safely
