#include "safely/occupancy.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <numbers>

namespace safely {

KeepOutEllipsoid KeepOutEllipsoid::make(Vec center, Mat shape, int obstacle_id,
                                        int time_index) {
  KeepOutEllipsoid e;
  e.center = std::move(center);
  e.shape = symmetrize(shape);
  Eigen::LLT<Mat> llt(e.shape);
  if (llt.info() != Eigen::Success)
    throw ConfigError("keep-out shape must be positive definite");
  e.shape_inv = symmetrize(llt.solve(Mat::Identity(e.dim(), e.dim())));
  e.obstacle_id = obstacle_id;
  e.time_index = time_index;
  return e;
}

double RiskBudget::per_constraint() const {
  return alpha / (static_cast<double>(horizon) * num_obstacles);
}

void RiskBudget::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("risk: alpha must be in (0, 1]");
  if (horizon < 1) throw ConfigError("risk: horizon must be >= 1");
  if (num_obstacles < 1) throw ConfigError("risk: need at least one obstacle");
  const double r = per_constraint();
  if (!(r > 0.0 && r < 1.0)) throw ConfigError("risk: per-constraint risk must be in (0, 1)");
}

double unit_ball_volume(int n, double r) {
  if (n < 1 || !(r > 0.0)) throw ConfigError("unit_ball_volume: need n >= 1, r > 0");
  const double half = 0.5 * n;
  return std::pow(std::numbers::pi, half) * std::pow(r, n) / std::tgamma(half + 1.0);
}

namespace {

Mat floored_covariance(const Mat& cov) {
  require_psd(cov, "occupancy covariance");
  Mat s = symmetrize(cov);
  if (min_eigenvalue(s) < kCovarianceFloor)
    s += kCovarianceFloor * Mat::Identity(s.rows(), s.cols());
  return s;
}

double log_argument_for(const Mat& sigma, const RiskBudget& budget, double r_o) {
  const int n = static_cast<int>(sigma.rows());
  Eigen::LLT<Mat> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw NumericalError("occupancy: covariance factorization failed");
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return std::log(budget.per_constraint()) +
         0.5 * (n * std::log(2.0 * std::numbers::pi) + logdet) -
         std::log(unit_ball_volume(n, r_o));
}

}  // namespace

double occupancy_log_argument(const GaussianBelief& belief,
                              const RiskBudget& budget, double r_o) {
  return log_argument_for(floored_covariance(belief.cov), budget, r_o);
}

std::optional<Mat> q_matrix(const GaussianBelief& belief,
                            const RiskBudget& budget, double r_o) {
  const Mat sigma = floored_covariance(belief.cov);
  const double log_arg = log_argument_for(sigma, budget, r_o);
  if (log_arg >= 0.0) return std::nullopt;
  return Mat(-2.0 * log_arg * sigma);
}

Mat q_plus_matrix(const Mat& Q, double r_o, const Vec& l0) {
  const auto n = Q.rows();
  if (l0.size() != n) throw ConfigError("q_plus_matrix: l0 dimension mismatch");
  if (std::abs(l0.norm() - 1.0) > 1e-9) throw ConfigError("q_plus_matrix: l0 must be a unit vector");
  const double s = std::sqrt(l0.dot(Q * l0));
  if (!(s > 0.0)) throw ConfigError("q_plus_matrix: Q must be positive definite");
  return symmetrize((s + r_o) * (Q / s + r_o * Mat::Identity(n, n)));
}

Vec leading_eigenvector(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m));
  Vec v = es.eigenvectors().col(m.rows() - 1);
  Eigen::Index k;
  v.cwiseAbs().maxCoeff(&k);
  if (v(k) < 0.0) v = -v;
  return v;
}

KeepOutGrid build_keepouts(
    const std::vector<std::vector<GaussianBelief>>& beliefs,
    const RiskBudget& budget, const std::vector<ObstacleModel>& models,
    L0Policy policy, const std::vector<Vec>& robot_positions) {
  if (beliefs.size() != models.size())
    throw ConfigError("build_keepouts: one belief horizon per obstacle required");
  KeepOutGrid grid(beliefs.size());
  for (std::size_t o = 0; o < beliefs.size(); ++o) {
    if (static_cast<int>(beliefs[o].size()) != budget.horizon)
      throw ConfigError("build_keepouts: horizon length mismatch");
    grid[o].reserve(beliefs[o].size());
    for (int t = 1; t <= budget.horizon; ++t) {
      const GaussianBelief& b = beliefs[o][t - 1];
      KeepOutEllipsoid e;
      e.center = b.mean;
      e.obstacle_id = static_cast<int>(o);
      e.time_index = t;
      auto Q = q_matrix(b, budget, models[o].radius);
      if (!Q) {
        e.vacuous = true;
        grid[o].push_back(std::move(e));
        continue;
      }
      Vec l0;
      if (policy == L0Policy::TowardRobot &&
          static_cast<int>(robot_positions.size()) >= t) {
        l0 = robot_positions[t - 1] - b.mean;
        if (l0.norm() < 1e-12) l0.resize(0);
        else l0.normalize();
      }
      if (l0.size() == 0) l0 = leading_eigenvector(*Q);
      grid[o].push_back(KeepOutEllipsoid::make(
          b.mean, q_plus_matrix(*Q, models[o].radius, l0), e.obstacle_id, t));
    }
  }
  return grid;
}

double constraint_value(const KeepOutEllipsoid& e, const Vec& x_pos) {
  if (e.vacuous) return kInf;
  const Vec d = x_pos - e.center;
  return d.dot(e.shape_inv * d);
}

}  // namespace safely
