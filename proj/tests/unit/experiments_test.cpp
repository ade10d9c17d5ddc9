#include "experiments.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "error.hpp"
#include "json.hpp"

using namespace fleetsim;
using namespace fleetsim::experiments;
using nlohmann::json;

namespace {

std::string scenario(const std::string& name) {
  std::ifstream in(std::string(FLEETSIM_SOURCE_DIR) + "/scenarios/" + name);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(ParseSeeds, RangesAndLists) {
  EXPECT_EQ(parse_seeds("1..3"), (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(parse_seeds("7"), (std::vector<std::uint64_t>{7}));
  EXPECT_EQ(parse_seeds("1,4,7"), (std::vector<std::uint64_t>{1, 4, 7}));
  EXPECT_EQ(parse_seeds("1..2,9"), (std::vector<std::uint64_t>{1, 2, 9}));
  for (const char* bad : {"", "a", "3..1", "1..", ",", "1,,2", "-1"}) {
    EXPECT_THROW(parse_seeds(bad), Error) << bad;
  }
}

TEST(RunExperiment, RejectsBadRequests) {
  ExperimentRequest req{"nope", scenario("waypoint.json"), {1}, "", 1};
  try {
    run_experiment(req);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
  }
  req.name = "waypoint_accuracy";
  req.seeds.clear();
  EXPECT_THROW(run_experiment(req), Error);
  req.seeds = {1};
  req.scenario_json = "{not json";
  try {
    run_experiment(req);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParse);
  }
}

TEST(RunExperiment, MissingParametersAreRunFailures) {
  auto sc = json::parse(scenario("waypoint.json"));
  sc.erase("experiment");
  const auto report = json::parse(run_experiment({"avoidance", sc.dump(), {1, 2}, "", 2}));
  ASSERT_EQ(report["runs"].size(), 2u);
  for (const auto& r : report["runs"]) {
    EXPECT_FALSE(r["ok"].get<bool>());
    EXPECT_TRUE(r.contains("error"));
  }
  EXPECT_EQ(report["summary"]["failed_runs"], 2);
}

TEST(RunExperiment, ReportIsReproducibleAcrossThreadCounts) {
  const auto sc = scenario("avoidance.json");
  const auto a = run_experiment({"avoidance", sc, {1, 2, 3}, "", 1});
  const auto b = run_experiment({"avoidance", sc, {1, 2, 3}, "", 3});
  EXPECT_EQ(a, b);
  const auto j = json::parse(a);
  EXPECT_EQ(j["experiment"], "avoidance");
  EXPECT_EQ(j["seeds"], json({1, 2, 3}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(j["runs"][i]["seed"], i + 1);
}

TEST(RunExperiment, WaypointWritesTrajectoryLogs) {
  auto sc = json::parse(scenario("waypoint.json"));
  sc["experiment"]["targets"] = json::array({sc["experiment"]["targets"][0]});
  sc["experiment"]["hold_s"] = 2.0;
  const auto dir = std::filesystem::temp_directory_path() / "fleetsim_experiments_test";
  std::filesystem::remove_all(dir);
  const auto report = json::parse(run_experiment({"waypoint_accuracy", sc.dump(), {4}, dir.string(), 1}));
  const auto& run = report["runs"][0];
  ASSERT_TRUE(run["ok"].get<bool>());
  EXPECT_TRUE(run["visits"][0]["reached"].get<bool>());
  EXPECT_EQ(report["summary"]["target_visits"], 1);
  ASSERT_EQ(run["trajectory_logs"].size(), 1u);
  std::ifstream in(dir / run["trajectory_logs"][0].get<std::string>());
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header.rfind("t,x,y,z,yaw,truth_x", 0), 0u);
  std::filesystem::remove_all(dir);
}

TEST(RunExperiment, LatencyMeasuresActuationAndRtt) {
  const auto report = json::parse(run_experiment({"latency", scenario("latency.json"), {1}, "", 1}));
  const auto& run = report["runs"][0];
  ASSERT_TRUE(run["ok"].get<bool>());
  const double dt = run["dt_s"];
  EXPECT_NEAR(run["command_to_motion_s"].get<double>(), 0.496, dt + 1e-9);
  EXPECT_NEAR(run["heartbeat_rtt_s"]["mean"].get<double>(), 0.0045, 1e-3);
  EXPECT_EQ(run["heartbeat_rtt_s"]["n"], 20);
}
