#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "safely/sim.hpp"

namespace safely {

inline constexpr int kSchemaVersion = 1;

nlohmann::json to_json(const GaussianBelief& b);
nlohmann::json to_json(const PlanIterate& plan);
nlohmann::json to_json(const CycleRecord& rec);
GaussianBelief belief_from_json(const nlohmann::json& j);
PlanIterate plan_from_json(const nlohmann::json& j);

/// Summary fields shared by summary.json and the last runlog line.
nlohmann::json summary_json(const RunLog& log);

/// One JSON object per line: a header with the resolved scenario, one record
/// per cycle, and a closing summary.
void write_runlog(std::ostream& os, const RunLog& log);
void write_trajectory_csv(std::ostream& os, const RunLog& log);
void write_svg(std::ostream& os, const RunLog& log);

/// Reads back what write_runlog produced. Throws ConfigError on malformed input.
struct LoggedRun {
  nlohmann::json header;
  std::vector<nlohmann::json> cycles;
  nlohmann::json summary;
};
LoggedRun read_runlog(std::istream& is);

struct BatchRow {
  std::uint64_t seed = 0;
  nlohmann::json summary;
};
void write_aggregate_csv(std::ostream& os, const std::vector<BatchRow>& rows);

}  // namespace safely
