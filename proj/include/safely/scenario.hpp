#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "safely/beliefs.hpp"
#include "safely/models.hpp"
#include "safely/occupancy.hpp"

namespace safely {

enum class ExecutionMode { Waypoint, VelocityInput };

struct RobotSpec {
  std::string model;  // "double_integrator_3d" | "dubins"
  double dt = 0.25;
  Vec x0;
  double u_max = 0.5;
  double v_min = 0.01, v_max = 0.25;
  double omega_min = -1.0, omega_max = 1.0;
  double fov_angle = 0.0;  // full viewing angle; 0 disables the gate
  Box safe_box;
};

struct CostSpec {
  std::string type = "goal";  // "goal" | "attention"
  Vec goal;
  double beta = 0.0;
  double gamma_hat = 1.0;
  bool reward_alignment = true;
};

struct ObstacleSpec {
  ObstacleModel model;
  GaussianBelief initial;
};

struct SensingSpec {
  int K = 1;
  double gamma = 1.0;
  double threshold = 1e-9;
  SensorModel sensor;
};

struct PlannerSpec {
  double slack_weight = 1e4;
  double sqp_tolerance = 1e-4;
  int max_sqp_iter = 50;
  /// Consecutive INFEASIBLE_SOFT cycles before the episode is abandoned.
  int max_soft_failures = 3;
};

struct Scenario {
  std::string name;
  nlohmann::json document;  // resolved source, overrides applied
  RobotSpec robot;
  CostSpec cost;
  std::vector<ObstacleSpec> obstacles;
  SensingSpec sensing;
  double alpha = 0.01;
  L0Policy l0_policy = L0Policy::MaxUncertainty;
  int T = 25;
  int max_cycles = 400;
  double goal_tolerance = 0.1;
  ExecutionMode mode = ExecutionMode::Waypoint;
  std::uint64_t seed = 0;
  PlannerSpec planner;

  int num_obstacles() const { return static_cast<int>(obstacles.size()); }
  std::unique_ptr<RobotModel> make_robot() const;
  /// x0 completed to a full state (velocity zero, heading toward the goal).
  Vec initial_state(const RobotModel& model) const;
  std::vector<ObstacleModel> obstacle_models() const;
  void validate() const;
};

/// Parse a scenario document; throws ConfigError naming the bad field.
Scenario parse_scenario(const nlohmann::json& doc);

/// Apply "dotted.key=value" to a document. The key must already exist and
/// the value must have a compatible JSON type.
void apply_override(nlohmann::json& doc, const std::string& assignment);

Scenario load_scenario(const std::string& path, const std::vector<std::string>& overrides = {});

const char* to_string(ExecutionMode m);

}  // namespace safely
