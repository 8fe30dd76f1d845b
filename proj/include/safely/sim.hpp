#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "safely/refine.hpp"
#include "safely/scenario.hpp"

namespace safely {

/// Standard normal draw that depends only on (seed, stream, step, index), so
/// changing how often one stream is consumed never shifts another.
double keyed_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t step,
                    std::uint64_t index);
Vec keyed_normal_vector(std::uint64_t seed, std::uint64_t stream, std::uint64_t step, int n);

/// Sampled true obstacle trajectories, extended lazily step by step.
class GroundTruthWorld {
 public:
  GroundTruthWorld(std::vector<ObstacleModel> models, const std::vector<GaussianBelief>& initial,
                   std::uint64_t seed);

  int num_obstacles() const { return static_cast<int>(models_.size()); }
  /// True state of obstacle o at `step` (step 0 is drawn from the initial belief).
  const Vec& state(int o, int step);
  /// z = H x_true + nu with nu from the measurement stream of (o, step).
  Vec measure(int o, int step, const SensorModel& sensor);

  static constexpr std::uint64_t kProcessStream = 0;
  static constexpr std::uint64_t kMeasurementStream = 1000;
  static constexpr std::uint64_t kInitialStream = 2000;

 private:
  std::vector<ObstacleModel> models_;
  std::vector<Mat> noise_factor_;
  std::uint64_t seed_;
  std::vector<std::vector<Vec>> paths_;
};

GroundTruthWorld sample_ground_truth(const Scenario& scenario);

enum class Outcome { Reached, MaxCycles, Collision, PlannerFailed };
const char* to_string(Outcome o);

struct CycleRecord {
  int cycle = 0;
  Vec state;                            // robot state the plan starts from
  Vec next_state;                       // after executing one step
  std::vector<GaussianBelief> beliefs;  // obstacle beliefs at planning time
  std::vector<Vec> true_obstacles;      // true positions after the step
  KeepOutGrid keepouts;
  PlanIterate x_sqp;
  PlanIterate x_pr;
  Mat margins;  // N_O x T, constraint_value - 1 of x_pr (NaN where vacuous)
  double margin_min = kInf;
  double executed_margin = kInf;  // of next_state against the t = 1 keep-outs
  RelevanceReport report;
  int attention_target = -1;
  std::vector<int> observed;  // selected obstacles actually measured
  std::string sqp_status;
  int sqp_iterations = 0;
  int refine_iterations = 0;
  bool refine_improved = false;
  bool soft_failure = false;
  double solve_ms = 0.0;
};

struct RunLog {
  nlohmann::json scenario;
  std::vector<CycleRecord> cycles;
  Outcome outcome = Outcome::MaxCycles;
  Vec initial_state;
  Vec final_state;
  std::vector<int> observation_counts;
  std::vector<int> selection_counts;
};

struct EpisodeOptions {
  bool timing = true;  // false records solve_ms = 0 for byte-stable output
  std::function<void(const CycleRecord&)> on_cycle;
};

/// Closed-loop receding-horizon run: plan, refine, schedule sensing, execute
/// one step, advance the world, update beliefs; repeat until the goal is
/// reached or the run fails.
RunLog run_episode(const Scenario& scenario, const EpisodeOptions& options = {});

/// Planner state for a single cycle, exposed for diagnostics and tests.
struct CycleResult {
  KeepOutGrid keepouts;
  SqpResult sqp;
  SupportingHalfspaceSet halfspaces;
  RefinedResult refined;
  bool refined_ok = false;
};

/// One planning cycle from state x with current beliefs. `previous` warm
/// starts from an earlier plan; `attention_target` selects the obstacle the
/// attention cost turns toward (-1 for none).
CycleResult plan_cycle(const Scenario& scenario, const RobotModel& model, const Vec& x,
                       const std::vector<GaussianBelief>& beliefs, const PlanIterate* previous,
                       int attention_target);

struct CollisionEstimate {
  double p = 0.0;
  double se = 0.0;
  long samples = 0;
  long hits = 0;
};

/// Fraction of sampled obstacle path bundles that come within r_o of the
/// robot positions. `positions[t-1]` is the robot position at step t and
/// `beliefs` are the obstacle beliefs at step 0. Obstacles and steps that
/// stay nine standard deviations clear are skipped (tail mass below 1e-15).
CollisionEstimate estimate_collide_pr(const std::vector<Vec>& positions,
                                      const std::vector<GaussianBelief>& beliefs,
                                      const std::vector<ObstacleModel>& models, long samples,
                                      std::uint64_t seed);

}  // namespace safely
