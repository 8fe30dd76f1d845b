#pragma once

#include <string>
#include <vector>

#include "safely/common.hpp"

namespace safely {

/// Linear Gaussian obstacle motion x+ = A x + B w, w ~ N(mu_w, Sigma_w).
/// The body is a ball of radius `radius` centered on the obstacle state.
struct ObstacleModel {
  Mat A;
  Mat B;
  Vec mu_w;
  Mat Sigma_w;
  double radius = 0.0;
  std::string color_tag;

  int state_dim() const { return static_cast<int>(A.rows()); }
  int noise_dim() const { return static_cast<int>(B.cols()); }

  /// A = I, B = dt I: the integrator obstacles used in every bundled scene.
  static ObstacleModel integrator(int n, double dt, Vec mu_w, Mat Sigma_w,
                                  double radius);

  void validate() const;
};

struct GaussianBelief {
  Vec mean;
  Mat cov;

  int dim() const { return static_cast<int>(mean.size()); }
  void validate() const;
};

/// z = H x + nu, nu ~ N(mu_nu, Sigma_nu).
struct SensorModel {
  Mat H;
  Vec mu_nu;
  Mat Sigma_nu;
  /// The filter assumes unbiased noise; set to accept a nonzero mu_nu.
  bool allow_bias = false;

  void validate() const;
};

GaussianBelief predict_step(const GaussianBelief& belief,
                            const ObstacleModel& model);

/// Open-loop beliefs at steps 1..T (element t-1 is predict_step applied t
/// times).
std::vector<GaussianBelief> propagate_horizon(const GaussianBelief& belief0,
                                              const ObstacleModel& model,
                                              int horizon);

/// Measurement update of a one-step-ahead prior.
GaussianBelief kalman_update(const GaussianBelief& prior,
                             const SensorModel& sensor, const Vec& z);

}  // namespace safely
