#include "ui.hpp"

#include <cmath>

#include "controller.hpp"
#include "error.hpp"
#include "json.hpp"

namespace fleetsim::ui {

using nlohmann::json;
using protocol::uuid_to_string;

namespace {

json pose_json(const geometry::Pose& p) {
  return {{"x", p.position.x()}, {"y", p.position.y()}, {"z", p.position.z()}, {"yaw", p.yaw}};
}

geometry::Pose pose_from(const json& j) {
  const geometry::Pose p = geometry::Pose::make(j.at("x").get<double>(), j.at("y").get<double>(),
                                                j.at("z").get<double>(), j.value("yaw", 0.0));
  if (!p.position.allFinite() || !std::isfinite(p.yaw)) throw Error(ErrorCode::kInvalidArgument, "non-finite pose");
  return p;
}

const char* event_name(std::uint8_t code) {
  static const char* names[] = {"info",          "target_reached",   "blocked",         "aborted",
                                "clearance_lost", "version_rejected", "session_replaced", "unknown_frame",
                                "door_detected",  "reactivated",      "mission_paused",   "mission_resumed",
                                "mission_completed", "mission_failed"};
  return code < std::size(names) ? names[code] : "unknown";
}

}  // namespace

std::string fleet_snapshot_json(const gcs::GroundStation& station, double now) {
  json uavs = json::array();
  const auto sessions = station.sessions().snapshot();
  for (const auto& [id, e] : station.fleet()) {
    json u = {{"id", uuid_to_string(id)}, {"model", e.model}, {"online", e.online},
              {"aligned", e.alignment.has_value()}};
    if (e.alignment) {
      u["alignment"] = {{"scale", e.alignment->scale}, {"yaw", e.alignment->yaw},
                        {"tx", e.alignment->translation.x()}, {"ty", e.alignment->translation.y()},
                        {"tz", e.alignment->translation.z()}};
    }
    if (e.last_telemetry) {
      const auto& t = *e.last_telemetry;
      const auto local = geometry::Pose::make(t.pose[0], t.pose[1], t.pose[2], t.pose[3]);
      u["pose_local"] = pose_json(local);
      if (e.alignment) u["pose"] = pose_json(e.alignment->apply(local));
      u["velocity"] = {t.velocity[0], t.velocity[1], t.velocity[2]};
      u["mode"] = control::mode_name(static_cast<control::Mode>(t.mode));
      u["battery"] = t.battery;
      u["telemetry_t"] = t.timestamp;
    }
    if (e.mission) {
      u["mission"] = {{"state", gcs::mission_state_name(e.mission->state)},
                      {"index", e.mission->index},
                      {"count", e.mission->waypoints.size()},
                      {"failure", e.mission->failure}};
    }
    if (const auto rtt = station.last_rtt(id)) u["rtt_s"] = *rtt;
    u["buffered_scans"] = station.buffered_scans(id);
    if (const auto target = station.current_local_target(id)) u["target_local"] = pose_json(*target);
    uavs.push_back(std::move(u));
  }
  return json{{"v", kUiProtocolVersion}, {"type", "fleet"}, {"t", now}, {"uavs", uavs},
              {"map_points", station.map_size()}}
      .dump();
}

std::string map_delta_json(const std::vector<gcs::MapPoint>& points, std::size_t from, std::size_t to) {
  json pts = json::array();
  for (const auto& p : points) {
    pts.push_back({p.position.x(), p.position.y(), p.position.z(), uuid_to_string(p.source)});
  }
  return json{{"v", kUiProtocolVersion}, {"type", "map_delta"}, {"from", from}, {"to", to}, {"points", pts}}.dump();
}

std::string event_json(const gcs::GcsEvent& e) {
  return json{{"v", kUiProtocolVersion}, {"type", "event"}, {"t", e.time}, {"uav", uuid_to_string(e.uav)},
              {"code", e.code}, {"name", event_name(e.code)}, {"detail", e.detail}}
      .dump();
}

std::optional<AvoidanceView> avoidance_view(const gcs::GroundStation& station, const protocol::Uuid& uav,
                                            const avoidance::AvoidanceParams& params) {
  const auto scan = station.last_scan(uav);
  if (!scan) return std::nullopt;
  const auto& [s, pose] = *scan;
  const geometry::Vec2 c = pose.position.head<2>();
  const auto pts = avoidance::scan_points(s, c, pose.yaw);
  AvoidanceView v;
  v.image = avoidance::image_from_points(pts, c);
  v.field = avoidance::distance_transform_l1(avoidance::seed_forces(v.image, params.safety_distance), params.decay);
  geometry::Vec3 cmd = geometry::Vec3::Zero();
  if (const auto target = station.current_local_target(uav)) {
    cmd = control::velocity_to_target(pose, *target, 0.5).linear;
  }
  v.chosen = cmd.norm() > 0.0 ? avoidance::adjust(cmd, v.image, params) : avoidance::AdjustedCommand{};
  if (cmd.norm() == 0.0) v.chosen.stop = true;
  v.dump = avoidance::dump_field(v.field, v.chosen);
  return v;
}

std::string avoidance_json(const protocol::Uuid& uav, double now, const AvoidanceView& view) {
  return json{{"v", kUiProtocolVersion},
              {"type", "avoidance"},
              {"t", now},
              {"uav", uuid_to_string(uav)},
              {"format", "PFG1"},
              {"stop", view.chosen.stop},
              {"chosen", {view.chosen.azimuth_pixel, view.chosen.elevation_pixel}},
              {"velocity", {view.chosen.velocity.x(), view.chosen.velocity.y(), view.chosen.velocity.z()}},
              {"dump_hex", protocol::to_hex(view.dump, false)}}
      .dump();
}

std::string CommandHandler::handle(const std::string& line, double now) {
  json ack = {{"v", kUiProtocolVersion}, {"type", "ack"}, {"id", nullptr}, {"ok", false}};
  try {
    const json j = json::parse(line);
    if (j.contains("id")) ack["id"] = j["id"];
    if (j.value("v", kUiProtocolVersion) != kUiProtocolVersion) {
      throw Error(ErrorCode::kInvalidArgument, "unsupported version");
    }
    const std::string cmd = j.at("cmd").get<std::string>();
    ack["cmd"] = cmd;
    auto uav = [&] { return protocol::uuid_from_string(j.at("uav").get<std::string>()); };
    bool ok = true;
    json result = json::object();
    if (cmd == "carrot") {
      const auto id = uav();
      auto it = last_carrot_.find(id);
      if (it != last_carrot_.end() && now - it->second < carrot_interval_ - 1e-9) {
        throw Error(ErrorCode::kInvalidArgument, "carrot updates limited to 10 Hz");
      }
      ok = station_.send_carrot(id, pose_from(j));
      if (ok) last_carrot_[id] = now;
    } else if (cmd == "goto") {
      ok = station_.send_goto(uav(), pose_from(j));
    } else if (cmd == "arm_door") {
      ok = station_.arm_door(uav());
    } else if (cmd == "abort") {
      ok = station_.abort(uav());
    } else if (cmd == "hold") {
      ok = station_.hold(uav());
    } else if (cmd == "set_gimbal") {
      ok = station_.set_gimbal(uav(), j.at("pitch").get<double>(), j.value("yaw", 0.0));
    } else if (cmd == "set_mission") {
      const auto wps = gcs::parse_mission_file(j.at("waypoints").dump());
      const auto m = station_.set_mission(uav(), wps);
      ok = m.state != gcs::MissionState::kFailed;
      result = {{"state", gcs::mission_state_name(m.state)}, {"waypoints", m.waypoints.size()},
                {"failure", m.failure}};
    } else if (cmd == "start_mission") {
      ok = station_.start_mission(uav());
    } else if (cmd == "pause_mission") {
      ok = station_.pause_mission(uav());
    } else if (cmd == "resume_mission") {
      ok = station_.resume_mission(uav());
    } else if (cmd == "expand_pattern") {
      gcs::CirclePattern p;
      p.radius = j.at("radius").get<double>();
      p.count = j.at("count").get<int>();
      p.face_center = j.value("face_center", true);
      json wps = json::array();
      for (const auto& w : gcs::expand_pattern(pose_from(j.at("center")), p)) {
        json jw = pose_json(w.pose);
        jw["wait"] = w.wait_time;
        wps.push_back(jw);
      }
      result = {{"waypoints", wps}};
    } else {
      throw Error(ErrorCode::kInvalidArgument, "unknown command '" + cmd + "'");
    }
    ack["ok"] = ok;
    if (!ok && !result.contains("failure")) ack["error"] = "rejected: uav offline, unaligned or in the wrong state";
    if (!result.empty()) ack["result"] = result;
  } catch (const json::exception& e) {
    ack["error"] = std::string("bad command: ") + e.what();
  } catch (const Error& e) {
    ack["error"] = e.what();
  }
  return ack.dump();
}

UiServer::UiServer(gcs::GroundStation& station, UiServerConfig config)
    : station_(station), config_(config), commands_(station) {}

std::uint16_t UiServer::listen(const transport::Endpoint& ep) {
  listener_ = std::make_unique<transport::TcpListener>(ep);
  return listener_->port();
}

void UiServer::add_client(std::unique_ptr<transport::Connection> conn) {
  Client c;
  c.conn = std::move(conn);
  clients_.push_back(std::move(c));
}

void UiServer::send_line(Client& c, const std::string& line) {
  std::vector<std::uint8_t> bytes(line.begin(), line.end());
  bytes.push_back('\n');
  try {
    c.conn->send(bytes);
  } catch (const Error&) {
    c.conn->close();
  }
}

void UiServer::poll(double now) {
  if (listener_) {
    while (auto conn = listener_->accept(0)) add_client(std::move(conn));
  }
  const bool snapshot = now - last_snapshot_ >= config_.snapshot_period - 1e-9;
  const bool avoid = now - last_avoidance_ >= config_.avoidance_period - 1e-9;
  if (snapshot) last_snapshot_ = now;
  if (avoid) last_avoidance_ = now;

  std::optional<std::string> snap;
  std::vector<std::string> avoid_lines;
  if (avoid && !clients_.empty()) {
    for (const auto& [id, e] : station_.fleet()) {
      if (const auto v = avoidance_view(station_, id)) avoid_lines.push_back(avoidance_json(id, now, *v));
    }
  }
  for (auto& c : clients_) {
    if (!c.conn->is_open()) continue;
    if (!c.greeted) {
      send_line(c, json{{"v", kUiProtocolVersion}, {"type", "hello"}, {"server", "fleet-sim gcs"}}.dump());
      c.greeted = true;
    }
    try {
      const auto bytes = c.conn->receive(0);
      c.inbuf.append(bytes.begin(), bytes.end());
    } catch (const Error&) {
      c.conn->close();
      continue;
    }
    for (auto nl = c.inbuf.find('\n'); nl != std::string::npos; nl = c.inbuf.find('\n')) {
      std::string line = c.inbuf.substr(0, nl);
      c.inbuf.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      send_line(c, commands_.handle(line, now));
    }
    if (c.inbuf.size() > (1u << 20)) c.inbuf.clear();

    for (const auto& e : station_.events_since(c.event_cursor)) {
      send_line(c, event_json(e));
      ++c.event_cursor;
    }
    const auto pts = station_.map_points_since(c.map_cursor);
    for (std::size_t k = 0; k < pts.size(); k += config_.max_map_points_per_message) {
      const std::size_t end = std::min(pts.size(), k + config_.max_map_points_per_message);
      std::vector<gcs::MapPoint> part(pts.begin() + static_cast<std::ptrdiff_t>(k),
                                      pts.begin() + static_cast<std::ptrdiff_t>(end));
      send_line(c, map_delta_json(part, c.map_cursor + k, c.map_cursor + end));
    }
    c.map_cursor += pts.size();
    if (snapshot) {
      if (!snap) snap = fleet_snapshot_json(station_, now);
      send_line(c, *snap);
    }
    for (const auto& l : avoid_lines) send_line(c, l);
  }
  std::erase_if(clients_, [](const Client& c) { return !c.conn->is_open(); });
}

}  // namespace fleetsim::ui
