#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace safely {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitReached = 0,
  kExitBadInput = 1,
  kExitPlannerFailed = 2,
  kExitCollision = 3,
  kExitAuditFailed = 4,
  kExitMaxCycles = 5,
  kExitNoInterior = 6,
};

struct RunOptions {
  std::string scenario;
  std::vector<std::uint64_t> seeds;  // empty: the scenario's own seed
  std::string out_dir = "out";
  std::vector<std::string> overrides;
  bool data_only = false;
  bool timing = true;
  int threads = 1;
};

struct AuditOptions {
  std::string log;
  long samples = 100000;
};

struct SlaterOptions {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

/// "A..B" (inclusive) or a single number.
std::vector<std::uint64_t> parse_seed_range(const std::string& text);

int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err);
int cmd_audit(const AuditOptions& options, std::ostream& out, std::ostream& err);
int cmd_slater(const SlaterOptions& options, std::ostream& out, std::ostream& err);

}  // namespace safely
