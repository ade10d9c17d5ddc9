#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geometry.hpp"

namespace fleetsim::sim {

using geometry::Pose;
using geometry::Vec2;
using geometry::Vec3;

enum class UavModel : std::uint8_t { kMini3 = 0, kMini4 = 1, kMavic3T = 2 };

const char* model_name(UavModel m);
UavModel parse_model(const std::string& name);

struct Wall {
  Vec2 a;
  Vec2 b;
  double height = 3.0;
};

struct Cylinder {
  Vec2 center;
  double radius = 0.2;
  double height = 3.0;
};

struct UavSpec {
  UavModel model = UavModel::kMini3;
  Pose start;
  bool gnss = false;
};

struct Latencies {
  double actuation_s = 0.496;
  double telemetry_s = 0.344;
  double rtt_s = 0.0045;
};

/// Scenario file contents. JSON keys: walls [{x1,y1,x2,y2,height}],
/// cylinders [{x,y,r,height}], uavs [{model,start:{x,y,z,yaw},gnss}],
/// latencies {actuation_s,telemetry_s,rtt_s}, seed. Unknown keys are ignored.
struct Scenario {
  std::string name;
  std::vector<Wall> walls;
  std::vector<Cylinder> cylinders;
  std::vector<UavSpec> uavs;
  Latencies latencies;
  std::uint64_t seed = 1;

  /// Axis-aligned 2D bounds of all geometry and UAV starts: {min, max}.
  std::pair<Vec2, Vec2> bounds() const;
};

Scenario parse_scenario(const std::string& json_text);
Scenario load_scenario(const std::string& path);
std::string scenario_to_json(const Scenario& s);

}  // namespace fleetsim::sim
