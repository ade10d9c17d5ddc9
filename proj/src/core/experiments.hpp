#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scenario.hpp"

namespace fleetsim::experiments {

/// waypoint_accuracy, avoidance, door, latency, multi_uav_map
const std::vector<std::string>& experiment_names();

struct ExperimentRequest {
  std::string name;
  /// Scenario file text; experiment parameters live under its "experiment" key.
  std::string scenario_json;
  std::vector<std::uint64_t> seeds;
  /// Directory for per-run trajectory CSV files; none written when empty.
  std::string log_dir;
  /// Worker threads for independent seeds (0 = hardware concurrency).
  unsigned threads = 0;
};

/// Runs the closed loop headless and returns the report as JSON text. Metric
/// values depend only on (scenario, seeds). Per-run failures (crash, timeout,
/// runtime error) are recorded in the report. Throws kParse for a bad
/// scenario and kInvalidArgument for an unknown experiment or no seeds.
std::string run_experiment(const ExperimentRequest& request);

/// "1..10", "3", "1,4,7" or mixtures such as "1..3,8".
std::vector<std::uint64_t> parse_seeds(const std::string& text);

}  // namespace fleetsim::experiments
