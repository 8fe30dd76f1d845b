#pragma once

#include <optional>
#include <vector>

#include "safely/beliefs.hpp"

namespace safely {

/// Ellipsoid {x : (x - center)^T shape^-1 (x - center) <= 1} that the robot
/// position must stay out of. A vacuous entry carries no constraint.
struct KeepOutEllipsoid {
  Vec center;
  Mat shape;
  Mat shape_inv;
  int obstacle_id = 0;
  int time_index = 0;
  bool vacuous = false;

  int dim() const { return static_cast<int>(center.size()); }

  /// Non-vacuous ellipsoid with its inverse shape precomputed.
  static KeepOutEllipsoid make(Vec center, Mat shape, int obstacle_id = 0,
                               int time_index = 0);
};

/// Union-bound risk allocation: each (obstacle, step) pair receives
/// alpha / (T * N_O).
struct RiskBudget {
  double alpha = 0.01;
  int horizon = 1;
  int num_obstacles = 1;

  double per_constraint() const;
  void validate() const;
};

enum class L0Policy {
  MaxUncertainty,  // leading eigenvector of Q
  TowardRobot,     // from the obstacle mean toward the robot iterate
};

/// Covariances with an eigenvalue below this get this much added to the
/// diagonal before the density-level computation.
inline constexpr double kCovarianceFloor = 1e-9;

double unit_ball_volume(int n, double r);

/// Log of the superlevel-set argument alpha' sqrt(det(2 pi Sigma)) / vol(r).
/// The level set is empty (vacuous) when this is >= 0.
double occupancy_log_argument(const GaussianBelief& belief,
                              const RiskBudget& budget, double r_o);

/// Q = -2 log(argument) Sigma, or nullopt when the level set is empty.
std::optional<Mat> q_matrix(const GaussianBelief& belief,
                            const RiskBudget& budget, double r_o);

/// Outer ellipsoid of E(0, Q) + Ball(0, r_o), tight along the unit vector l0.
Mat q_plus_matrix(const Mat& Q, double r_o, const Vec& l0);

/// Leading eigenvector of a symmetric matrix with a deterministic sign.
Vec leading_eigenvector(const Mat& m);

/// Keep-out ellipsoids indexed [obstacle][t-1] for t = 1..T.
using KeepOutGrid = std::vector<std::vector<KeepOutEllipsoid>>;

/// `beliefs[o][t-1]` is obstacle o's open-loop belief at step t. For the
/// TowardRobot policy, `robot_positions[t-1]` is the robot position guess at
/// step t; it may be empty for MaxUncertainty.
KeepOutGrid build_keepouts(
    const std::vector<std::vector<GaussianBelief>>& beliefs,
    const RiskBudget& budget, const std::vector<ObstacleModel>& models,
    L0Policy policy, const std::vector<Vec>& robot_positions = {});

/// (x - center)^T shape^-1 (x - center); >= 1 is safe. +inf for vacuous.
double constraint_value(const KeepOutEllipsoid& e, const Vec& x_pos);

}  // namespace safely
