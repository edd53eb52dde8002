#pragma once

// Scenario files: a JSON description of the bus, the RbT rules and the
// attacks, plus the runner that turns one into traces and a summary.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "cansim/attacks.hpp"
#include "cansim/bus.hpp"
#include "cansim/metrics.hpp"
#include "cansim/rbt.hpp"

namespace cansim {

/// Validation failure. `where` is "line N, column M" for syntax errors and a
/// JSON pointer (e.g. "/bus/nodes/1/role") for schema errors.
class ScenarioError : public std::runtime_error {
 public:
  ScenarioError(std::string where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(std::move(where)) {}
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

struct PeriodicTx {
  ScheduledFrame first;
  std::int64_t period_us = 0;
  std::optional<std::uint64_t> count;
};

/// Recorded traffic of one node, captured from a preliminary run without replay attackers.
struct ReplayRecording {
  std::string node;
  std::int64_t from_us = 0;
  std::int64_t to_us = 0;
};

struct AttackEntry {
  std::string node;
  std::int64_t start_time_us = 0;
  AttackSpec spec;
  std::optional<ReplayRecording> recording;  // replay attacks without an inline slice
};

struct ScenarioConfig {
  BusConfig bus;
  std::vector<std::pair<std::string, PeriodicTx>> periodic;  // node → periodic transmissions
  bool rbt_enabled = false;
  std::string rbt_name = "rbt";
  RuleSet rules;
  std::vector<AttackEntry> attacks;
  std::int64_t duration_us = 1'000'000;
  std::string tx_node;  // gateway send_frame target
};

/// Parses and validates. Throws ScenarioError.
ScenarioConfig parse_scenario(const nlohmann::json& doc);
ScenarioConfig parse_scenario_text(const std::string& text);
/// Throws ScenarioError with where = path when the file cannot be read.
ScenarioConfig load_scenario(const std::string& path);

/// The simulated bus, with the RbT attached when `with_rbt` and enabled.
Bus build_scenario_bus(const ScenarioConfig& config, bool with_rbt = true);

struct ScenarioResult {
  Trace trace;
  Trace trace_without_rbt;  // same run with the RbT detached
  ScenarioSummary summary;
};

ScenarioResult run_scenario(const ScenarioConfig& config);

nlohmann::ordered_json summary_json(const ScenarioSummary& s);

}  // namespace cansim
