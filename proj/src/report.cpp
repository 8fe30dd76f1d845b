#include "safely/report.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <spdlog/fmt/fmt.h>

namespace safely {

using nlohmann::json;

namespace {

json vec_json(const Vec& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json mat_json(const Mat& m) {
  json a = json::array();
  for (int i = 0; i < m.rows(); ++i) a.push_back(vec_json(m.row(i).transpose()));
  return a;
}

Vec vec_from(const json& j) {
  Vec v(static_cast<int>(j.size()));
  for (int i = 0; i < v.size(); ++i) v(i) = j[i].is_null() ? std::nan("") : j[i].get<double>();
  return v;
}

Mat mat_from(const json& j, int cols_if_empty = 0) {
  const int r = static_cast<int>(j.size());
  const int c = r ? static_cast<int>(j[0].size()) : cols_if_empty;
  Mat m(r, c);
  for (int i = 0; i < r; ++i) m.row(i) = vec_from(j[i]).transpose();
  return m;
}

json int_list(const std::vector<int>& v) { return json(v); }

}  // namespace

json to_json(const GaussianBelief& b) { return {{"mean", vec_json(b.mean)}, {"cov", mat_json(b.cov)}}; }

json to_json(const PlanIterate& p) {
  return {{"states", mat_json(p.states)}, {"inputs", mat_json(p.inputs)}, {"objective", p.objective}};
}

GaussianBelief belief_from_json(const json& j) {
  return {vec_from(j.at("mean")), mat_from(j.at("cov"))};
}

PlanIterate plan_from_json(const json& j) {
  PlanIterate p;
  p.states = mat_from(j.at("states"));
  p.inputs = mat_from(j.at("inputs"));
  p.objective = j.value("objective", 0.0);
  return p;
}

json to_json(const CycleRecord& r) {
  json beliefs = json::array();
  for (const auto& b : r.beliefs) beliefs.push_back(to_json(b));
  json truth = json::array();
  for (const auto& p : r.true_obstacles) truth.push_back(vec_json(p));
  return {{"type", "cycle"},
          {"cycle", r.cycle},
          {"state", vec_json(r.state)},
          {"next_state", vec_json(r.next_state)},
          {"beliefs", beliefs},
          {"true_obstacles", truth},
          {"x_sqp", to_json(r.x_sqp)},
          {"x_pr", to_json(r.x_pr)},
          {"margins", mat_json(r.margins)},
          {"margin_min", std::isfinite(r.margin_min) ? json(r.margin_min) : json(nullptr)},
          {"executed_margin", std::isfinite(r.executed_margin) ? json(r.executed_margin) : json(nullptr)},
          {"lambda", mat_json(r.report.lambda_grid)},
          {"relevance", vec_json(r.report.scores)},
          {"selected", int_list(r.report.selected)},
          {"observed", int_list(r.observed)},
          {"attention_target", r.attention_target},
          {"sqp_status", r.sqp_status},
          {"sqp_iterations", r.sqp_iterations},
          {"refine_iterations", r.refine_iterations},
          {"refine_improved", r.refine_improved},
          {"soft_failure", r.soft_failure},
          {"cost_sqp", r.x_sqp.objective},
          {"cost_pr", r.x_pr.objective},
          {"solve_ms", r.solve_ms}};
}

json summary_json(const RunLog& log) {
  double mean_ms = 0.0, max_ms = 0.0, min_margin = kInf;
  for (const auto& c : log.cycles) {
    mean_ms += c.solve_ms;
    max_ms = std::max(max_ms, c.solve_ms);
    min_margin = std::min(min_margin, c.executed_margin);
  }
  if (!log.cycles.empty()) mean_ms /= static_cast<double>(log.cycles.size());
  return {{"schema_version", kSchemaVersion},
          {"scenario", log.scenario.value("name", "")},
          {"seed", log.scenario.value("seed", 0)},
          {"outcome", to_string(log.outcome)},
          {"cycles", log.cycles.size()},
          {"mean_solve_ms", mean_ms},
          {"max_solve_ms", max_ms},
          {"min_executed_margin", std::isfinite(min_margin) ? json(min_margin) : json(nullptr)},
          {"observation_counts", log.observation_counts},
          {"selection_counts", log.selection_counts},
          {"final_state", vec_json(log.final_state)}};
}

void write_runlog(std::ostream& os, const RunLog& log) {
  os << json{{"type", "header"}, {"schema_version", kSchemaVersion}, {"scenario", log.scenario},
             {"initial_state", vec_json(log.initial_state)}}
            .dump()
     << '\n';
  for (const auto& c : log.cycles) os << to_json(c).dump() << '\n';
  json s = summary_json(log);
  s["type"] = "summary";
  os << s.dump() << '\n';
}

LoggedRun read_runlog(std::istream& is) {
  LoggedRun run;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("runlog line {}: {}", lineno, e.what()));
    }
    const std::string type = j.value("type", "");
    if (type == "header") {
      run.header = std::move(j);
    } else if (type == "cycle") {
      run.cycles.push_back(std::move(j));
    } else if (type == "summary") {
      run.summary = std::move(j);
    } else {
      throw ConfigError(fmt::format("runlog line {}: unknown record type '{}'", lineno, type));
    }
  }
  if (run.header.is_null()) throw ConfigError("runlog: missing header record");
  if (run.header.value("schema_version", -1) != kSchemaVersion)
    throw ConfigError("runlog: unsupported schema_version");
  return run;
}

void write_trajectory_csv(std::ostream& os, const RunLog& log) {
  const int n = static_cast<int>(log.initial_state.size());
  const int N = static_cast<int>(log.observation_counts.size());
  os << "cycle";
  for (int i = 0; i < n; ++i) os << ",x" << i;
  os << ",selected_obstacle";
  for (int o = 0; o < N; ++o) os << ",Lambda" << o;
  os << ",solve_ms,margin_min\n";
  for (const auto& c : log.cycles) {
    os << c.cycle;
    for (int i = 0; i < n; ++i) os << fmt::format(",{:.9g}", c.state(i));
    os << ',' << (c.report.selected.empty() ? -1 : c.report.selected.front());
    for (int o = 0; o < N; ++o)
      os << fmt::format(",{:.9g}", o < c.report.scores.size() ? c.report.scores(o) : 0.0);
    os << fmt::format(",{:.3f},{:.9g}\n", c.solve_ms, std::isfinite(c.margin_min) ? c.margin_min : 0.0);
  }
}

namespace {

struct Panel {
  int a, b;  // coordinate indices
  double ox, oy;
};

const char* palette(int o) {
  static const char* colors[] = {"#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b"};
  return colors[o % 6];
}

}  // namespace

void write_svg(std::ostream& os, const RunLog& log) {
  const int pd = static_cast<int>(log.scenario.at("cost").at("goal").size());
  const auto& box = log.scenario.at("robot").at("safe_box");
  const Vec lo = vec_from(box.at("lower")), hi = vec_from(box.at("upper"));
  const double px = 80.0;  // pixels per unit
  std::vector<Panel> panels;
  if (pd == 2) {
    panels.push_back({0, 1, 20, 20});
  } else {
    panels = {{0, 1, 20, 20}, {0, 2, 0, 20}, {1, 2, 0, 20}};
    double x = 20;
    for (auto& p : panels) {
      p.ox = x;
      x += (hi(p.a) - lo(p.a)) * px + 40;
    }
  }
  double width = 0, height = 0;
  for (const auto& p : panels) {
    width = std::max(width, p.ox + (hi(p.a) - lo(p.a)) * px + 20);
    height = std::max(height, p.oy + (hi(p.b) - lo(p.b)) * px + 20);
  }
  os << fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\">\n", width, height);
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  const int N = static_cast<int>(log.observation_counts.size());
  for (const auto& p : panels) {
    auto X = [&](double v) { return p.ox + (v - lo(p.a)) * px; };
    auto Y = [&](double v) { return p.oy + (hi(p.b) - v) * px; };
    os << fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"none\" stroke=\"black\"/>\n",
                      X(lo(p.a)), Y(hi(p.b)), (hi(p.a) - lo(p.a)) * px, (hi(p.b) - lo(p.b)) * px);

    // Keep-outs one step ahead, every fifth cycle.
    for (std::size_t k = 0; k < log.cycles.size(); k += 5) {
      for (const auto& row : log.cycles[k].keepouts) {
        if (row.empty() || row.front().vacuous) continue;
        const auto& e = row.front();
        Mat S(2, 2);
        S << e.shape(p.a, p.a), e.shape(p.a, p.b), e.shape(p.b, p.a), e.shape(p.b, p.b);
        Eigen::SelfAdjointEigenSolver<Mat> es(S);
        const Vec ax = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        const double ang = std::atan2(es.eigenvectors()(1, 1), es.eigenvectors()(0, 1)) * 180.0 / M_PI;
        os << fmt::format(
            "<ellipse cx=\"{:.1f}\" cy=\"{:.1f}\" rx=\"{:.1f}\" ry=\"{:.1f}\" transform=\"rotate({:.1f} {:.1f} {:.1f})\" "
            "fill=\"{}\" fill-opacity=\"0.08\" stroke=\"{}\" stroke-opacity=\"0.3\"/>\n",
            X(e.center(p.a)), Y(e.center(p.b)), ax(1) * px, ax(0) * px, -ang, X(e.center(p.a)),
            Y(e.center(p.b)), palette(e.obstacle_id), palette(e.obstacle_id));
      }
    }
    for (int o = 0; o < N; ++o) {
      std::string pts;
      for (const auto& c : log.cycles)
        if (o < static_cast<int>(c.true_obstacles.size()))
          pts += fmt::format("{:.1f},{:.1f} ", X(c.true_obstacles[o](p.a)), Y(c.true_obstacles[o](p.b)));
      os << fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-dasharray=\"4 3\"/>\n", pts,
                        palette(o));
    }
    std::string pts = fmt::format("{:.1f},{:.1f} ", X(log.initial_state(p.a)), Y(log.initial_state(p.b)));
    for (const auto& c : log.cycles)
      pts += fmt::format("{:.1f},{:.1f} ", X(c.next_state(p.a)), Y(c.next_state(p.b)));
    os << fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n", pts);
    const Vec goal = vec_from(log.scenario.at("cost").at("goal"));
    os << fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"5\" fill=\"black\"/>\n", X(goal(p.a)), Y(goal(p.b)));
    os << fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"12\">x{} / x{}</text>\n", p.ox, p.oy - 5,
                      p.a + 1, p.b + 1);
  }
  os << "</svg>\n";
}

void write_aggregate_csv(std::ostream& os, const std::vector<BatchRow>& rows) {
  os << "seed,outcome,cycles,mean_solve_ms,max_solve_ms,min_executed_margin,observations,selections\n";
  for (const auto& r : rows) {
    const auto& s = r.summary;
    auto join = [](const json& a) {
      std::string out;
      for (std::size_t i = 0; i < a.size(); ++i) out += (i ? ";" : "") + std::to_string(a[i].get<int>());
      return out;
    };
    const double margin = s["min_executed_margin"].is_null() ? 0.0 : s["min_executed_margin"].get<double>();
    os << fmt::format("{},{},{},{:.3f},{:.3f},{:.9g},{},{}\n", r.seed, s["outcome"].get<std::string>(),
                      s["cycles"].get<int>(), s["mean_solve_ms"].get<double>(), s["max_solve_ms"].get<double>(),
                      margin, join(s["observation_counts"]), join(s["selection_counts"]));
  }
}

}  // namespace safely
