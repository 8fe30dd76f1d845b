#include "safely/scenario.hpp"

#include <fstream>
#include <sstream>

namespace safely {

using nlohmann::json;

namespace {

const json& at(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError("scenario: missing field '" + path + key + "'");
  return j.at(key);
}

double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError("scenario: '" + path + "' must be a number");
  return j.get<double>();
}

double number_or(const json& j, const std::string& key, double fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  return number(j.at(key), path + key);
}

Vec vector_of(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError("scenario: '" + path + "' must be an array of numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = number(j[i], path);
  return v;
}

// Scalar s means s * I(n); otherwise a nested row-major array.
Mat matrix_of(const json& j, int n, const std::string& path) {
  if (j.is_number()) return j.get<double>() * Mat::Identity(n, n);
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw ConfigError("scenario: '" + path + "' must be a number or an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (!j[r].is_array() || static_cast<Eigen::Index>(j[r].size()) != cols)
      throw ConfigError("scenario: '" + path + "' has ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = number(j[r][c], path);
  }
  return m;
}

Box box_of(const json& j, const std::string& path) {
  Box b{vector_of(at(j, "lower", path + "."), path + ".lower"),
        vector_of(at(j, "upper", path + "."), path + ".upper")};
  if (b.lower.size() != b.upper.size()) throw ConfigError("scenario: '" + path + "' bound sizes differ");
  return b;
}

}  // namespace

const char* to_string(ExecutionMode m) {
  return m == ExecutionMode::Waypoint ? "waypoint" : "velocity_input";
}

Scenario parse_scenario(const json& doc) {
  Scenario s;
  s.document = doc;
  s.name = doc.value("name", std::string("scenario"));

  const json& r = at(doc, "robot", "");
  s.robot.model = at(r, "model", "robot.").get<std::string>();
  s.robot.dt = number(at(r, "dt", "robot."), "robot.dt");
  s.robot.x0 = vector_of(at(r, "x0", "robot."), "robot.x0");
  s.robot.safe_box = box_of(at(r, "safe_box", "robot."), "robot.safe_box");
  if (s.robot.model == "double_integrator_3d") {
    s.robot.u_max = number(at(r, "u_max", "robot."), "robot.u_max");
  } else if (s.robot.model == "dubins") {
    s.robot.v_min = number(at(r, "v_min", "robot."), "robot.v_min");
    s.robot.v_max = number(at(r, "v_max", "robot."), "robot.v_max");
    s.robot.omega_min = number(at(r, "omega_min", "robot."), "robot.omega_min");
    s.robot.omega_max = number(at(r, "omega_max", "robot."), "robot.omega_max");
  } else {
    throw ConfigError("scenario: unknown robot.model '" + s.robot.model + "'");
  }
  s.robot.fov_angle = number_or(r, "fov_angle", 0.0, "robot.");

  const json& c = at(doc, "cost", "");
  s.cost.type = c.value("type", std::string("goal"));
  s.cost.goal = vector_of(at(c, "goal", "cost."), "cost.goal");
  if (s.cost.type == "attention") {
    s.cost.beta = number(at(c, "beta", "cost."), "cost.beta");
    s.cost.gamma_hat = number(at(c, "gamma_hat", "cost."), "cost.gamma_hat");
    s.cost.reward_alignment = c.value("reward_alignment", true);
  } else if (s.cost.type != "goal") {
    throw ConfigError("scenario: unknown cost.type '" + s.cost.type + "'");
  }

  const json& obs = at(doc, "obstacles", "");
  if (!obs.is_array()) throw ConfigError("scenario: 'obstacles' must be an array");
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const std::string p = "obstacles." + std::to_string(i) + ".";
    const json& o = obs[i];
    ObstacleSpec spec;
    spec.initial.mean = vector_of(at(o, "mean0", p), p + "mean0");
    const int n = spec.initial.dim();
    spec.initial.cov = o.contains("cov0") ? matrix_of(o.at("cov0"), n, p + "cov0") : Mat::Zero(n, n);
    const double radius = number(at(o, "r", p), p + "r");
    const Vec mu_w = vector_of(at(o, "mu_w", p), p + "mu_w");
    const Mat Sigma_w = matrix_of(at(o, "Sigma_w", p), static_cast<int>(mu_w.size()), p + "Sigma_w");
    if (o.contains("integrator")) {
      const double dt = number(at(o.at("integrator"), "dt", p + "integrator."), p + "integrator.dt");
      spec.model = ObstacleModel::integrator(n, dt, mu_w, Sigma_w, radius);
    } else {
      spec.model.A = matrix_of(at(o, "A", p), n, p + "A");
      spec.model.B = matrix_of(at(o, "B", p), n, p + "B");
      spec.model.mu_w = mu_w;
      spec.model.Sigma_w = Sigma_w;
      spec.model.radius = radius;
    }
    spec.model.color_tag = o.value("color", std::string());
    s.obstacles.push_back(std::move(spec));
  }

  const json& sn = at(doc, "sensing", "");
  s.sensing.K = at(sn, "K", "sensing.").get<int>();
  s.sensing.gamma = number_or(sn, "gamma", 1.0, "sensing.");
  s.sensing.threshold = number_or(sn, "threshold", 1e-9, "sensing.");
  const int obs_dim = s.obstacles.empty() ? static_cast<int>(s.cost.goal.size())
                                          : s.obstacles.front().initial.dim();
  s.sensing.sensor.H = sn.contains("H") ? matrix_of(sn.at("H"), obs_dim, "sensing.H")
                                        : Mat::Identity(obs_dim, obs_dim);
  const int q = static_cast<int>(s.sensing.sensor.H.rows());
  s.sensing.sensor.mu_nu = sn.contains("mu_nu") ? vector_of(sn.at("mu_nu"), "sensing.mu_nu") : Vec::Zero(q);
  s.sensing.sensor.Sigma_nu = matrix_of(at(sn, "Sigma_nu", "sensing."), q, "sensing.Sigma_nu");
  s.sensing.sensor.allow_bias = sn.value("allow_bias", false);

  const json& rk = at(doc, "risk", "");
  s.alpha = number(at(rk, "alpha", "risk."), "risk.alpha");
  const std::string pol = rk.value("l0_policy", std::string("max_uncertainty"));
  if (pol == "max_uncertainty") s.l0_policy = L0Policy::MaxUncertainty;
  else if (pol == "toward_robot") s.l0_policy = L0Policy::TowardRobot;
  else throw ConfigError("scenario: unknown risk.l0_policy '" + pol + "'");

  const json& h = at(doc, "horizon", "");
  s.T = at(h, "T", "horizon.").get<int>();
  s.max_cycles = h.value("max_cycles", 400);
  s.goal_tolerance = number_or(h, "goal_tolerance", 0.1, "horizon.");

  if (doc.contains("execution")) {
    const std::string mode = doc.at("execution").value("mode", std::string("waypoint"));
    if (mode == "waypoint") s.mode = ExecutionMode::Waypoint;
    else if (mode == "velocity_input") s.mode = ExecutionMode::VelocityInput;
    else throw ConfigError("scenario: unknown execution.mode '" + mode + "'");
  }
  s.seed = doc.value("seed", std::uint64_t{0});

  if (doc.contains("planner")) {
    const json& pl = doc.at("planner");
    s.planner.slack_weight = number_or(pl, "slack_weight", s.planner.slack_weight, "planner.");
    s.planner.sqp_tolerance = number_or(pl, "sqp_tolerance", s.planner.sqp_tolerance, "planner.");
    s.planner.max_sqp_iter = pl.value("max_sqp_iter", s.planner.max_sqp_iter);
    s.planner.max_soft_failures = pl.value("max_soft_failures", s.planner.max_soft_failures);
  }
  s.validate();
  return s;
}

std::unique_ptr<RobotModel> Scenario::make_robot() const {
  if (robot.model == "double_integrator_3d")
    return std::make_unique<DoubleIntegrator3D>(robot.dt, robot.u_max, robot.safe_box);
  return std::make_unique<DubinsVehicle>(robot.dt, robot.v_min, robot.v_max, robot.omega_min,
                                         robot.omega_max, robot.safe_box);
}

Vec Scenario::initial_state(const RobotModel& model) const {
  return model.complete_state(robot.x0, cost.goal);
}

std::vector<ObstacleModel> Scenario::obstacle_models() const {
  std::vector<ObstacleModel> m;
  for (const auto& o : obstacles) m.push_back(o.model);
  return m;
}

void Scenario::validate() const {
  const auto model = make_robot();
  const int pd = model->position_dim();
  if (cost.goal.size() != pd) throw ConfigError("scenario: cost.goal must match the robot position dimension");
  const Vec x0 = initial_state(*model);
  if (x0.size() != model->state_dim()) throw ConfigError("scenario: robot.x0 has the wrong dimension");
  if (T < 1) throw ConfigError("scenario: horizon.T must be >= 1");
  if (max_cycles < 0) throw ConfigError("scenario: horizon.max_cycles must be >= 0");
  if (!(goal_tolerance > 0.0)) throw ConfigError("scenario: horizon.goal_tolerance must be positive");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("scenario: risk.alpha must be in (0, 1]");
  if (!(sensing.gamma > 0.0 && sensing.gamma <= 1.0))
    throw ConfigError("scenario: sensing.gamma must be in (0, 1]");
  if (sensing.K < 0) throw ConfigError("scenario: sensing.K must be >= 0");
  if (!obstacles.empty() && sensing.K >= num_obstacles())
    throw ConfigError("scenario: sensing.K must be smaller than the number of obstacles");
  if (cost.type == "attention" && !(cost.gamma_hat > 0.0 && cost.gamma_hat <= 1.0))
    throw ConfigError("scenario: cost.gamma_hat must be in (0, 1]");
  for (std::size_t i = 0; i < obstacles.size(); ++i) {
    const auto& o = obstacles[i];
    const std::string p = "scenario: obstacles." + std::to_string(i) + ": ";
    try {
      o.model.validate();
      o.initial.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(p + e.what());
    }
    if (o.model.state_dim() != o.initial.dim()) throw ConfigError(p + "mean0 does not match A");
    if (o.initial.dim() != pd) throw ConfigError(p + "state must match the robot position dimension");
  }
  if (!obstacles.empty()) {
    sensing.sensor.validate();
    if (sensing.sensor.H.cols() != obstacles.front().initial.dim())
      throw ConfigError("scenario: sensing.H columns must match the obstacle state");
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  json* node = &doc;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (node->is_object()) {
      if (!node->contains(part)) throw ConfigError("unknown override key '" + key + "'");
      node = &(*node)[part];
    } else if (node->is_array()) {
      std::size_t idx = 0;
      try {
        std::size_t used = 0;
        idx = std::stoul(part, &used);
        if (used != part.size()) throw std::invalid_argument(part);
      } catch (const std::exception&) {
        throw ConfigError("unknown override key '" + key + "'");
      }
      if (idx >= node->size()) throw ConfigError("unknown override key '" + key + "'");
      node = &(*node)[idx];
    } else {
      throw ConfigError("unknown override key '" + key + "'");
    }
  }

  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  const bool ok = node->is_null() ||
                  (node->is_number_integer() && value.is_number_integer()) ||
                  (node->is_number_float() && value.is_number()) ||
                  (node->is_boolean() && value.is_boolean()) ||
                  (node->is_string() && value.is_string()) ||
                  (node->is_array() && value.is_array()) ||
                  (node->is_object() && value.is_object());
  if (!ok) throw ConfigError("override '" + key + "' has the wrong type");
  *node = value;
}

Scenario load_scenario(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open scenario file '" + path + "'");
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("scenario '" + path + "': " + e.what());
  }
  for (const auto& o : overrides) apply_override(doc, o);
  try {
    return parse_scenario(doc);
  } catch (const json::exception& e) {
    throw ConfigError("scenario '" + path + "': " + e.what());
  }
}

}  // namespace safely
