#include "safely/beliefs.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <spdlog/spdlog.h>

namespace safely {

namespace {

// Covariances leave every operation symmetrized with eigenvalues >= -1e-10.
Mat clean_covariance(const Mat& cov) { return symmetrize(cov); }

}  // namespace

ObstacleModel ObstacleModel::integrator(int n, double dt, Vec mu_w,
                                        Mat Sigma_w, double radius) {
  ObstacleModel m;
  m.A = Mat::Identity(n, n);
  m.B = dt * Mat::Identity(n, n);
  m.mu_w = std::move(mu_w);
  m.Sigma_w = std::move(Sigma_w);
  m.radius = radius;
  return m;
}

void ObstacleModel::validate() const {
  const auto n = A.rows();
  if (A.cols() != n) throw ConfigError("obstacle: A must be square");
  if (B.rows() != n) throw ConfigError("obstacle: B rows must match A");
  const auto p = B.cols();
  if (mu_w.size() != p) throw ConfigError("obstacle: mu_w size must match B columns");
  if (Sigma_w.rows() != p || Sigma_w.cols() != p)
    throw ConfigError("obstacle: Sigma_w must be p x p");
  require_psd(Sigma_w, "obstacle Sigma_w");
  if (!(radius > 0.0)) throw ConfigError("obstacle: radius must be positive");
}

void GaussianBelief::validate() const {
  if (cov.rows() != mean.size() || cov.cols() != mean.size())
    throw ConfigError("belief: covariance dimension mismatch");
  require_psd(cov, "belief covariance");
}

void SensorModel::validate() const {
  const auto q = H.rows();
  if (mu_nu.size() != q) throw ConfigError("sensor: mu_nu size must match H rows");
  if (Sigma_nu.rows() != q || Sigma_nu.cols() != q)
    throw ConfigError("sensor: Sigma_nu must be q x q");
  require_psd(Sigma_nu, "sensor Sigma_nu");
  Eigen::LLT<Mat> llt(symmetrize(Sigma_nu));
  if (llt.info() != Eigen::Success)
    throw ConfigError("sensor: Sigma_nu must be positive definite");
  if (!allow_bias && mu_nu.cwiseAbs().maxCoeff() > 0.0)
    throw ConfigError("sensor: nonzero mu_nu requires allow_bias");
}

GaussianBelief predict_step(const GaussianBelief& belief,
                            const ObstacleModel& model) {
  if (belief.dim() != model.state_dim() || belief.cov.rows() != belief.dim())
    throw ConfigError("predict_step: belief/model dimension mismatch");
  GaussianBelief out;
  out.mean = model.A * belief.mean + model.B * model.mu_w;
  out.cov = clean_covariance(model.A * belief.cov * model.A.transpose() +
                             model.B * model.Sigma_w * model.B.transpose());
  return out;
}

std::vector<GaussianBelief> propagate_horizon(const GaussianBelief& belief0,
                                              const ObstacleModel& model,
                                              int horizon) {
  if (horizon < 1) throw ConfigError("propagate_horizon: horizon must be >= 1");
  std::vector<GaussianBelief> out;
  out.reserve(horizon);
  GaussianBelief b = belief0;
  for (int t = 0; t < horizon; ++t) {
    b = predict_step(b, model);
    out.push_back(b);
  }
  return out;
}

GaussianBelief kalman_update(const GaussianBelief& prior,
                             const SensorModel& sensor, const Vec& z) {
  const int n = prior.dim();
  if (sensor.H.cols() != n) throw ConfigError("kalman_update: H columns must match state");
  if (z.size() != sensor.H.rows()) throw ConfigError("kalman_update: measurement size");

  const Mat& H = sensor.H;
  const Mat S = symmetrize(H * prior.cov * H.transpose() + sensor.Sigma_nu);
  const Mat PHt = prior.cov * H.transpose();

  // K = PHt S^-1, computed as (S^-1 PHt^T)^T since S is symmetric.
  Mat K;
  Eigen::LLT<Mat> llt(S);
  if (llt.info() == Eigen::Success) {
    K = llt.solve(PHt.transpose()).transpose();
  } else {
    spdlog::warn("kalman_update: innovation covariance not positive definite, using pseudo-inverse");
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(S);
    K = PHt * cod.pseudoInverse();
  }
  if (!K.allFinite()) throw NumericalError("kalman_update: non-finite gain");

  Vec innovation = z - H * prior.mean;
  if (sensor.allow_bias) innovation -= sensor.mu_nu;

  GaussianBelief out;
  out.mean = prior.mean + K * innovation;
  out.cov = clean_covariance((Mat::Identity(n, n) - K * H) * prior.cov);
  return out;
}

}  // namespace safely
