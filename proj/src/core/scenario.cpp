#include "scenario.hpp"

#include <fstream>
#include <limits>
#include <sstream>

#include "error.hpp"
#include "json.hpp"

namespace fleetsim::sim {

using nlohmann::json;

const char* model_name(UavModel m) {
  switch (m) {
    case UavModel::kMini3: return "mini3";
    case UavModel::kMini4: return "mini4";
    case UavModel::kMavic3T: return "mavic3t";
  }
  return "mini3";
}

UavModel parse_model(const std::string& name) {
  if (name == "mini3" || name == "mini3-like") return UavModel::kMini3;
  if (name == "mini4" || name == "mini4-like") return UavModel::kMini4;
  if (name == "mavic3t" || name == "mavic3t-like") return UavModel::kMavic3T;
  throw Error(ErrorCode::kParse, "unknown UAV model '" + name + "'");
}

std::pair<Vec2, Vec2> Scenario::bounds() const {
  constexpr double inf = std::numeric_limits<double>::infinity();
  Vec2 lo(inf, inf), hi(-inf, -inf);
  auto grow = [&](const Vec2& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  };
  for (const auto& w : walls) {
    grow(w.a);
    grow(w.b);
  }
  for (const auto& c : cylinders) {
    grow(c.center - Vec2(c.radius, c.radius));
    grow(c.center + Vec2(c.radius, c.radius));
  }
  for (const auto& u : uavs) grow(u.start.position.head<2>());
  if (!std::isfinite(lo.x())) return {Vec2::Zero(), Vec2::Zero()};
  return {lo, hi};
}

Scenario parse_scenario(const std::string& json_text) {
  Scenario s;
  try {
    const json j = json::parse(json_text);
    s.name = j.value("name", "");
    for (const auto& w : j.value("walls", json::array())) {
      s.walls.push_back(Wall{Vec2(w.at("x1").get<double>(), w.at("y1").get<double>()),
                             Vec2(w.at("x2").get<double>(), w.at("y2").get<double>()),
                             w.value("height", 3.0)});
    }
    for (const auto& c : j.value("cylinders", json::array())) {
      s.cylinders.push_back(Cylinder{Vec2(c.at("x").get<double>(), c.at("y").get<double>()),
                                     c.at("r").get<double>(), c.value("height", 3.0)});
      if (!(s.cylinders.back().radius > 0.0)) {
        throw Error(ErrorCode::kParse, "cylinder radius must be positive");
      }
    }
    for (const auto& u : j.at("uavs")) {
      UavSpec spec;
      spec.model = parse_model(u.value("model", std::string("mini3")));
      const auto& st = u.at("start");
      spec.start = Pose::make(st.value("x", 0.0), st.value("y", 0.0), st.value("z", 1.0),
                              st.value("yaw", 0.0));
      spec.gnss = u.value("gnss", false);
      s.uavs.push_back(spec);
    }
    if (j.contains("latencies")) {
      const auto& l = j["latencies"];
      s.latencies.actuation_s = l.value("actuation_s", s.latencies.actuation_s);
      s.latencies.telemetry_s = l.value("telemetry_s", s.latencies.telemetry_s);
      s.latencies.rtt_s = l.value("rtt_s", s.latencies.rtt_s);
    }
    s.seed = j.value("seed", std::uint64_t{1});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("scenario: ") + e.what());
  }
  if (s.uavs.empty()) throw Error(ErrorCode::kParse, "scenario: no uavs");
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open scenario '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  Scenario s = parse_scenario(ss.str());
  if (s.name.empty()) s.name = path;
  return s;
}

std::string scenario_to_json(const Scenario& s) {
  json j;
  j["name"] = s.name;
  j["walls"] = json::array();
  for (const auto& w : s.walls) {
    j["walls"].push_back(
        {{"x1", w.a.x()}, {"y1", w.a.y()}, {"x2", w.b.x()}, {"y2", w.b.y()}, {"height", w.height}});
  }
  j["cylinders"] = json::array();
  for (const auto& c : s.cylinders) {
    j["cylinders"].push_back(
        {{"x", c.center.x()}, {"y", c.center.y()}, {"r", c.radius}, {"height", c.height}});
  }
  j["uavs"] = json::array();
  for (const auto& u : s.uavs) {
    j["uavs"].push_back({{"model", model_name(u.model)},
                         {"start",
                          {{"x", u.start.position.x()},
                           {"y", u.start.position.y()},
                           {"z", u.start.position.z()},
                           {"yaw", u.start.yaw}}},
                         {"gnss", u.gnss}});
  }
  j["latencies"] = {{"actuation_s", s.latencies.actuation_s},
                    {"telemetry_s", s.latencies.telemetry_s},
                    {"rtt_s", s.latencies.rtt_s}};
  j["seed"] = s.seed;
  return j.dump(2);
}

}  // namespace fleetsim::sim
