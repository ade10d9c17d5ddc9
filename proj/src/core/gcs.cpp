#include "gcs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "error.hpp"
#include "json.hpp"

namespace fleetsim::gcs {

using geometry::kPi;
using geometry::wrap_angle;
using nlohmann::json;
using protocol::EventCode;
using protocol::TaskKind;
using protocol::TaskState;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Vec2 xy(const Vec3& v) { return v.head<2>(); }

}  // namespace

const char* mission_state_name(MissionState s) {
  switch (s) {
    case MissionState::kPlanned: return "planned";
    case MissionState::kExecuting: return "executing";
    case MissionState::kPaused: return "paused";
    case MissionState::kCompleted: return "completed";
    case MissionState::kFailed: return "failed";
  }
  return "planned";
}

MissionState parse_mission_state(const std::string& s) {
  for (auto m : {MissionState::kPlanned, MissionState::kExecuting, MissionState::kPaused,
                 MissionState::kCompleted, MissionState::kFailed}) {
    if (s == mission_state_name(m)) return m;
  }
  throw Error(ErrorCode::kParse, "unknown mission state '" + s + "'");
}

std::vector<Waypoint> expand_pattern(const Pose& center, const CirclePattern& pattern) {
  if (!(pattern.radius > 0.0)) throw Error(ErrorCode::kInvalidArgument, "expand_pattern: radius must be > 0");
  if (pattern.count < 3) throw Error(ErrorCode::kInvalidArgument, "expand_pattern: count must be >= 3");
  std::vector<Waypoint> out;
  for (int i = 0; i < pattern.count; ++i) {
    const double a = 2.0 * kPi * i / pattern.count;
    Waypoint w;
    w.pose.position = center.position + Vec3(pattern.radius * std::cos(a), pattern.radius * std::sin(a), 0.0);
    w.pose.yaw = pattern.face_center ? wrap_angle(a + kPi) : center.yaw;
    out.push_back(w);
  }
  return out;
}

// ---------------------------------------------------------------- map

GlobalMap::GlobalMap(double voxel_size) : voxel_(voxel_size) {
  if (!(voxel_size > 0.0)) throw Error(ErrorCode::kInvalidArgument, "GlobalMap: voxel size must be > 0");
}

void GlobalMap::set_bounds(const Vec2& lo, const Vec2& hi) { bounds_ = {lo, hi}; }

std::size_t GlobalMap::KeyHash::operator()(const Key& k) const {
  std::size_t h = static_cast<std::size_t>(k.x) * 73856093u;
  h ^= static_cast<std::size_t>(k.y) * 19349663u;
  h ^= static_cast<std::size_t>(k.z) * 83492791u;
  return h;
}

GlobalMap::Key GlobalMap::key_of(const Vec3& p) const {
  return {static_cast<std::int64_t>(std::floor(p.x() / voxel_)),
          static_cast<std::int64_t>(std::floor(p.y() / voxel_)),
          static_cast<std::int64_t>(std::floor(p.z() / voxel_))};
}

bool GlobalMap::insert(const Vec3& p, const Uuid& source) {
  if (!p.allFinite()) return false;
  if (bounds_) {
    const auto& [lo, hi] = *bounds_;
    if (p.x() < lo.x() || p.y() < lo.y() || p.x() > hi.x() || p.y() > hi.y()) return false;
  }
  auto& slot = voxels_[key_of(p)];
  for (std::size_t i : slot) {
    if (points_[i].source == source) return false;
  }
  slot.push_back(points_.size());
  points_.push_back({p, source});
  return true;
}

double GlobalMap::horizontal_clearance(const Vec3& p) const {
  double best = kInf;
  for (const auto& m : points_) best = std::min(best, (xy(m.position) - xy(p)).norm());
  return best;
}

// ---------------------------------------------------------------- planning

namespace {

std::vector<Vec3> sample_segment(const Vec3& a, const Vec3& b, double step) {
  const double len = (b - a).norm();
  const int n = std::max(1, static_cast<int>(std::ceil(len / step)));
  std::vector<Vec3> out;
  out.reserve(n + 1);
  for (int i = 0; i <= n; ++i) out.push_back(a + (b - a) * (static_cast<double>(i) / n));
  return out;
}

bool segment_clear(const Vec3& a, const Vec3& b, const GlobalMap& map, const PlannerOptions& o) {
  for (const auto& s : sample_segment(a, b, o.sample_step)) {
    if (map.horizontal_clearance(s) < o.clearance) return false;
  }
  return true;
}

std::string describe_segment(std::size_t i, const Vec3& a, const Vec3& b) {
  std::ostringstream os;
  os << "segment " << i << " (" << a.x() << ", " << a.y() << ", " << a.z() << ") -> (" << b.x() << ", "
     << b.y() << ", " << b.z() << ")";
  return os.str();
}

}  // namespace

Mission plan_mission(const std::vector<Waypoint>& waypoints, const GlobalMap& map, const Uuid& uav,
                     const PlannerOptions& o) {
  if (waypoints.empty()) throw Error(ErrorCode::kInvalidArgument, "plan_mission: empty waypoint list");
  Mission m;
  m.uav = uav;
  m.frame = Frame::kGlobal;
  auto fail = [&](const std::string& why) {
    m.state = MissionState::kFailed;
    m.failure = why;
    return m;
  };
  for (std::size_t i = 0; i < waypoints.size(); ++i) {
    const Vec3& p = waypoints[i].pose.position;
    if (map.horizontal_clearance(p) < o.clearance) {
      std::ostringstream os;
      os << "waypoint " << i << " (" << p.x() << ", " << p.y() << ", " << p.z() << ") lies within "
         << o.clearance << " m of the map";
      return fail(os.str());
    }
  }
  m.waypoints.push_back(waypoints.front());
  for (std::size_t i = 1; i < waypoints.size(); ++i) {
    const Vec3 a = waypoints[i - 1].pose.position;
    const Vec3 b = waypoints[i].pose.position;
    if (!segment_clear(a, b, map, o)) {
      const auto samples = sample_segment(a, b, o.sample_step);
      std::size_t first = samples.size(), last = 0;
      for (std::size_t k = 0; k < samples.size(); ++k) {
        if (map.horizontal_clearance(samples[k]) < o.clearance) {
          first = std::min(first, k);
          last = k;
        }
      }
      const Vec3 mid = samples[(first + last) / 2];
      Vec2 dir = xy(b - a);
      if (dir.norm() < 1e-9) return fail(describe_segment(i - 1, a, b) + " is blocked");
      dir.normalize();
      const Vec3 normal(-dir.y(), dir.x(), 0.0);
      std::optional<Vec3> detour;
      const int steps = static_cast<int>(std::floor(o.max_offset / o.offset_step + 1e-9));
      for (int k = 1; k <= steps && !detour; ++k) {
        for (const double sign : {1.0, -1.0}) {
          const Vec3 d = mid + sign * k * o.offset_step * normal;
          if (map.horizontal_clearance(d) >= o.clearance && segment_clear(a, d, map, o) &&
              segment_clear(d, b, map, o)) {
            detour = d;
            break;
          }
        }
      }
      if (!detour) return fail(describe_segment(i - 1, a, b) + " has no collision-free detour");
      Waypoint w;
      w.pose.position = *detour;
      w.pose.yaw = waypoints[i].pose.yaw;
      m.waypoints.push_back(w);
    }
    m.waypoints.push_back(waypoints[i]);
  }
  return m;
}

double path_clearance(const Mission& m, const GlobalMap& map, double step) {
  double best = kInf;
  if (m.waypoints.size() == 1) return map.horizontal_clearance(m.waypoints[0].pose.position);
  for (std::size_t i = 1; i < m.waypoints.size(); ++i) {
    for (const auto& s : sample_segment(m.waypoints[i - 1].pose.position, m.waypoints[i].pose.position, step)) {
      best = std::min(best, map.horizontal_clearance(s));
    }
  }
  return best;
}

namespace {

Mission transform_mission(const Mission& m, const SimilarityTransform& t, Frame frame) {
  Mission out = m;
  out.frame = frame;
  for (auto& w : out.waypoints) w.pose = t.apply(w.pose);
  return out;
}

}  // namespace

Mission to_local(const Mission& m, const std::optional<SimilarityTransform>& alignment) {
  if (!alignment) throw Error(ErrorCode::kMissingAlignment, "to_local: UAV has no alignment");
  if (m.frame != Frame::kGlobal) throw Error(ErrorCode::kInvalidArgument, "to_local: mission is not global");
  return transform_mission(m, alignment->inverse(), Frame::kLocal);
}

Mission to_global(const Mission& m, const std::optional<SimilarityTransform>& alignment) {
  if (!alignment) throw Error(ErrorCode::kMissingAlignment, "to_global: UAV has no alignment");
  if (m.frame != Frame::kLocal) throw Error(ErrorCode::kInvalidArgument, "to_global: mission is not local");
  return transform_mission(m, *alignment, Frame::kGlobal);
}

bool keyframe_gate(const CameraFrustum& last, const CameraFrustum& current, double threshold) {
  return geometry::frustum_overlap(last, current) < threshold;
}

std::size_t integrate_scan(GlobalMap& map, const sim::RangeScan& scan, const Pose& pose_local,
                           const SimilarityTransform& alignment, const Uuid& source) {
  std::size_t added = 0;
  for (int i = 0; i < sim::kScanBins; ++i) {
    const double r = scan.distances[i];
    if (!scan.valid[i] || !std::isfinite(r) || r <= 0.0 || r >= scan.max_range - 1e-3) continue;
    const double az = pose_local.yaw + i * kPi / 180.0;
    const Vec3 local = pose_local.position + Vec3(r * std::cos(az), r * std::sin(az), 0.0);
    if (map.insert(alignment.apply(local), source)) ++added;
  }
  return added;
}

protocol::Task pose_task(std::uint32_t task_id, TaskKind kind, const Pose& pose, Frame frame,
                         const Uuid& frame_owner, const Uuid& recipient) {
  if (kind != TaskKind::kGoto && kind != TaskKind::kCarrotUpdate) {
    throw Error(ErrorCode::kInvalidArgument, "pose_task: kind carries no pose");
  }
  if (frame != Frame::kLocal || frame_owner != recipient) {
    throw Error(ErrorCode::kInvalidArgument, "pose_task: pose is not in the recipient's local frame");
  }
  protocol::Task t;
  t.task_id = task_id;
  t.kind = kind;
  t.pose = {static_cast<float>(pose.position.x()), static_cast<float>(pose.position.y()),
            static_cast<float>(pose.position.z()), static_cast<float>(pose.yaw)};
  return t;
}

// ---------------------------------------------------------------- dispatch

DispatchResult dispatch_tick(const Mission& local, DispatchState& ds, bool online,
                             const std::vector<protocol::TaskStatus>& statuses, double now,
                             std::uint32_t& next_task_id, double resend_period) {
  DispatchResult r;
  r.state = local.state;
  r.index = local.index;
  if (local.state != MissionState::kExecuting) return r;
  if (local.frame != Frame::kLocal) throw Error(ErrorCode::kInvalidArgument, "dispatch_tick: mission not local");
  if (local.index >= local.waypoints.size()) {
    throw Error(ErrorCode::kState, "dispatch_tick: index out of range");
  }
  if (!online) {
    r.state = MissionState::kPaused;
    r.events.push_back({static_cast<std::uint8_t>(EventCode::kMissionPaused),
                        "uav offline at waypoint " + std::to_string(local.index)});
    ds = {};
    return r;
  }
  for (const auto& s : statuses) {
    if (ds.task_id == 0 || s.task_id != ds.task_id) continue;
    if (s.state == TaskState::kReached && !ds.reached_at) ds.reached_at = now;
    if (s.state == TaskState::kBlocked || s.state == TaskState::kAborted) {
      r.state = MissionState::kPaused;
      r.events.push_back({static_cast<std::uint8_t>(EventCode::kMissionPaused),
                          std::string("waypoint ") + std::to_string(local.index) +
                              (s.state == TaskState::kBlocked ? " blocked" : " aborted")});
      ds = {};
      return r;
    }
  }
  const Waypoint& w = local.waypoints[local.index];
  if (ds.reached_at) {
    if (w.gimbal && !ds.gimbal_sent) {
      protocol::Task g;
      g.task_id = next_task_id++;
      g.kind = TaskKind::kSetGimbal;
      g.gimbal = {static_cast<float>((*w.gimbal)[0]), static_cast<float>((*w.gimbal)[1])};
      r.tasks.push_back(g);
      ds.gimbal_sent = true;
    }
    if (now - *ds.reached_at + 1e-9 < w.wait_time) return r;
    ds = {};
    r.index = local.index + 1;
    if (r.index >= local.waypoints.size()) {
      r.state = MissionState::kCompleted;
      r.index = local.waypoints.size() - 1;
      r.events.push_back({static_cast<std::uint8_t>(EventCode::kMissionCompleted), "mission completed"});
      return r;
    }
  }
  if (ds.task_id == 0 || now - ds.last_sent >= resend_period - 1e-9) {
    if (ds.task_id == 0) ds.task_id = next_task_id++;
    r.tasks.push_back(pose_task(ds.task_id, TaskKind::kGoto, local.waypoints[r.index].pose, local.frame,
                                local.uav, local.uav));
    ds.last_sent = now;
  }
  return r;
}

// ---------------------------------------------------------------- log

namespace {

json transform_json(const SimilarityTransform& t) {
  return {{"scale", t.scale}, {"yaw", t.yaw},
          {"tx", t.translation.x()}, {"ty", t.translation.y()}, {"tz", t.translation.z()}};
}

SimilarityTransform transform_from_json(const json& j) {
  SimilarityTransform t;
  t.scale = j.at("scale").get<double>();
  t.yaw = j.at("yaw").get<double>();
  t.translation = Vec3(j.at("tx").get<double>(), j.at("ty").get<double>(), j.at("tz").get<double>());
  return t;
}

json mission_json(const Mission& m) {
  json wps = json::array();
  for (const auto& w : m.waypoints) {
    json jw = {{"x", w.pose.position.x()}, {"y", w.pose.position.y()}, {"z", w.pose.position.z()},
               {"yaw", w.pose.yaw}, {"wait", w.wait_time}};
    if (w.gimbal) {
      jw["gimbal_pitch"] = (*w.gimbal)[0];
      jw["gimbal_yaw"] = (*w.gimbal)[1];
    }
    wps.push_back(jw);
  }
  return {{"waypoints", wps}, {"uav", protocol::uuid_to_string(m.uav)}, {"state", mission_state_name(m.state)},
          {"index", m.index}, {"frame", m.frame == Frame::kGlobal ? "global" : "local"}, {"failure", m.failure}};
}

Waypoint waypoint_from_json(const json& j) {
  Waypoint w;
  w.pose.position = Vec3(j.at("x").get<double>(), j.at("y").get<double>(), j.at("z").get<double>());
  w.pose.yaw = j.value("yaw", 0.0);
  w.wait_time = j.value("wait", 0.0);
  if (j.contains("gimbal_pitch") && !j.at("gimbal_pitch").is_null()) {
    w.gimbal = std::array<double, 2>{j.at("gimbal_pitch").get<double>(), j.value("gimbal_yaw", 0.0)};
  }
  if (!w.pose.position.allFinite() || !std::isfinite(w.pose.yaw) || !std::isfinite(w.wait_time) ||
      w.wait_time < 0.0) {
    throw Error(ErrorCode::kParse, "waypoint: non-finite or negative field");
  }
  return w;
}

Mission mission_from_json(const json& j) {
  Mission m;
  for (const auto& jw : j.at("waypoints")) m.waypoints.push_back(waypoint_from_json(jw));
  m.uav = protocol::uuid_from_string(j.at("uav").get<std::string>());
  m.state = parse_mission_state(j.at("state").get<std::string>());
  m.index = j.at("index").get<std::size_t>();
  m.frame = j.at("frame").get<std::string>() == "local" ? Frame::kLocal : Frame::kGlobal;
  m.failure = j.value("failure", "");
  return m;
}

bool same_transform(const std::optional<SimilarityTransform>& a, const std::optional<SimilarityTransform>& b) {
  if (a.has_value() != b.has_value()) return false;
  if (!a) return true;
  return a->scale == b->scale && a->yaw == b->yaw && a->translation == b->translation;
}

bool same_mission(const std::optional<Mission>& a, const std::optional<Mission>& b) {
  if (a.has_value() != b.has_value()) return false;
  if (!a) return true;
  return mission_json(*a) == mission_json(*b);
}

}  // namespace

std::string log_to_jsonl(const std::vector<LogEntry>& log) {
  std::string out;
  for (const auto& e : log) {
    json j = {{"t", e.time}, {"op", e.op}, {"uav", protocol::uuid_to_string(e.uav)}, {"data", json::parse(e.data)}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<LogEntry> log_from_jsonl(const std::string& text) {
  std::vector<LogEntry> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("t").get<double>(), j.at("op").get<std::string>(),
                     protocol::uuid_from_string(j.at("uav").get<std::string>()), j.at("data").dump()});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParse, std::string("mission log: ") + e.what());
    }
  }
  return out;
}

namespace {

void apply_entry(std::map<Uuid, FleetEntry>& fleet, const LogEntry& e) {
  const json d = json::parse(e.data);
  FleetEntry& f = fleet[e.uav];
  f.uav_id = e.uav;
  if (e.op == "registered") {
    f.model = d.at("model").get<std::uint8_t>();
    f.online = true;
  } else if (e.op == "disconnected") {
    f.online = false;
  } else if (e.op == "aligned") {
    f.alignment = transform_from_json(d);
  } else if (e.op == "mission_planned") {
    f.mission = mission_from_json(d);
  } else if (e.op == "mission_state") {
    if (!f.mission) throw Error(ErrorCode::kState, "mission log: state change without mission");
    f.mission->state = parse_mission_state(d.at("state").get<std::string>());
    f.mission->index = d.at("index").get<std::size_t>();
    f.mission->failure = d.value("failure", "");
  } else {
    throw Error(ErrorCode::kParse, "mission log: unknown op '" + e.op + "'");
  }
}

}  // namespace

std::map<Uuid, FleetEntry> replay(const std::vector<LogEntry>& log) {
  std::map<Uuid, FleetEntry> fleet;
  for (const auto& e : log) apply_entry(fleet, e);
  return fleet;
}

bool same_fleet_state(const std::map<Uuid, FleetEntry>& a, const std::map<Uuid, FleetEntry>& b) {
  if (a.size() != b.size()) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    const auto& x = ia->second;
    const auto& y = ib->second;
    if (ia->first != ib->first || x.uav_id != y.uav_id || x.model != y.model || x.online != y.online ||
        !same_transform(x.alignment, y.alignment) || !same_mission(x.mission, y.mission)) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------- mission file

std::vector<Waypoint> parse_mission_file(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("mission file: ") + e.what());
  }
  if (!j.is_array()) throw Error(ErrorCode::kParse, "mission file: expected a JSON list");
  std::vector<Waypoint> out;
  try {
    for (const auto& jw : j) out.push_back(waypoint_from_json(jw));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("mission file: ") + e.what());
  }
  return out;
}

std::vector<Waypoint> load_mission_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open mission file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_mission_file(ss.str());
}

// ---------------------------------------------------------------- ground station

namespace {

CameraFrustum frustum_at(const Pose& p) {
  CameraFrustum f;
  f.pose = p;
  return f;
}

CameraFrustum map_frustum(const CameraFrustum& f, const SimilarityTransform& t) {
  CameraFrustum g = f;
  g.pose = t.apply(f.pose);
  g.near *= t.scale;
  g.far *= t.scale;
  return g;
}

Pose telemetry_pose(const protocol::Telemetry& t) {
  return Pose::make(t.pose[0], t.pose[1], t.pose[2], t.pose[3]);
}

}  // namespace

GroundStation::GroundStation(GcsConfig config) : config_(std::move(config)), map_(config_.voxel_size) {
  if (config_.map_bounds) map_.set_bounds(config_.map_bounds->first, config_.map_bounds->second);
}

void GroundStation::add_connection(std::unique_ptr<transport::Channel> channel) {
  std::lock_guard io(io_mu_);
  Connection c;
  c.channel = std::move(channel);
  connections_.push_back(std::move(c));
}

void GroundStation::set_landmark_source(LandmarkSource* source) {
  std::lock_guard lk(mu_);
  landmarks_ = source;
}

void GroundStation::tick(double now) {
  std::lock_guard io(io_mu_);
  std::vector<std::pair<std::size_t, std::vector<protocol::Message>>> inbox;
  std::vector<std::size_t> dropped;
  for (std::size_t i = 0; i < connections_.size(); ++i) {
    auto& c = connections_[i];
    if (c.closed) continue;
    std::vector<protocol::Message> msgs;
    try {
      msgs = c.channel->poll(0);
    } catch (const Error&) {
      c.channel->close();
    }
    inbox.emplace_back(i, std::move(msgs));
    if (!c.channel->is_open()) dropped.push_back(i);
  }

  std::vector<Outbound> out;
  {
    std::lock_guard lk(mu_);
    now_ = now;
    for (auto& [i, msgs] : inbox) {
      for (const auto& m : msgs) handle(i, m);
    }
    for (std::size_t i : dropped) on_disconnect(i);

    std::uint64_t unknown = 0;
    for (const auto& c : connections_) unknown += c.channel->decoder().unknown_frames();
    unknown_frames_ = unknown;

    for (auto& [uav, f] : fleet_) {
      if (!f.online) continue;
      auto& r = rt_[uav];
      if (now - r.last_probe >= config_.heartbeat_period - 1e-9) {
        r.last_probe = now;
        r.probes.push_back(now);
        if (r.probes.size() > 16) r.probes.pop_front();
        send_to(uav, protocol::Heartbeat{});
      }
      run_dispatch(uav);
    }
    out.swap(outbound_);
  }

  for (auto& o : out) {
    std::optional<std::size_t> target = o.connection;
    if (!target) {
      for (std::size_t i = 0; i < connections_.size(); ++i) {
        const auto& c = connections_[i];
        if (!c.closed && c.uav && *c.uav == o.uav && c.session && sessions_.is_live(*c.session)) target = i;
      }
    }
    if (!target || connections_[*target].closed) continue;
    try {
      connections_[*target].channel->send(o.message);
    } catch (const Error&) {
      connections_[*target].channel->close();
    }
  }
}

void GroundStation::send_to(const Uuid& uav, protocol::Message m) {
  outbound_.push_back({uav, std::nullopt, std::move(m)});
}

bool GroundStation::online(const Uuid& uav) const {
  auto it = fleet_.find(uav);
  return it != fleet_.end() && it->second.online;
}

void GroundStation::record(const std::string& op, const Uuid& uav, const std::string& data) {
  LogEntry e{now_, op, uav, data};
  apply(e);
  log_.push_back(std::move(e));
}

void GroundStation::apply(const LogEntry& e) { apply_entry(fleet_, e); }

void GroundStation::event(const Uuid& uav, EventCode code, const std::string& detail) {
  events_.push_back({now_, uav, static_cast<std::uint8_t>(code), detail});
}

void GroundStation::set_mission_state(const Uuid& uav, MissionState s, std::size_t index,
                                      const std::string& failure) {
  record("mission_state", uav, json{{"state", mission_state_name(s)}, {"index", index}, {"failure", failure}}.dump());
}

void GroundStation::handle(std::size_t ci, const protocol::Message& m) {
  auto& c = connections_[ci];
  if (const auto* h = std::get_if<protocol::Hello>(&m)) {
    const auto res = sessions_.register_hello(*h);
    if (!res.ack) {
      if (res.event) outbound_.push_back({h->uav_id, ci, *res.event});
      event(h->uav_id, EventCode::kVersionRejected, res.event ? res.event->detail : "version rejected");
      return;
    }
    if (res.replaced_session) {
      for (auto& other : connections_) {
        if (other.session == res.replaced_session) {
          other.session.reset();
          other.closed = true;
          other.channel->close();
        }
      }
      event(h->uav_id, EventCode::kSessionReplaced, res.event ? res.event->detail : "session replaced");
    }
    c.session = res.ack->session;
    c.uav = h->uav_id;
    outbound_.push_back({h->uav_id, ci, *res.ack});
    record("registered", h->uav_id, json{{"model", h->model}, {"resumed", res.ack->resumed}}.dump());
    auto& r = rt_[h->uav_id];
    r.probes.clear();
    r.last_probe = -1e300;
    event(h->uav_id, EventCode::kInfo, res.ack->resumed ? "uav reconnected" : "uav registered");

    // First UAV of the fleet: admitted from its declared start.
    auto& f = fleet_[h->uav_id];
    bool any_aligned = false;
    for (const auto& [id, e] : fleet_) any_aligned = any_aligned || e.alignment.has_value();
    if (!f.alignment && !any_aligned) {
      SimilarityTransform t;
      if (auto it = config_.declared_starts.find(h->uav_id); it != config_.declared_starts.end()) {
        // Local frame: origin on the ground below the start, x along its heading.
        t.yaw = it->second.yaw;
        t.translation = Vec3(it->second.position.x(), it->second.position.y(), 0.0);
      }
      record("aligned", h->uav_id, transform_json(t).dump());
      event(h->uav_id, EventCode::kInfo, "admitted to the map as first uav");
    }
    if (r.paused_offline && f.mission && f.mission->state == MissionState::kPaused) {
      r.paused_offline = false;
      r.dispatch = {};
      set_mission_state(h->uav_id, MissionState::kExecuting, f.mission->index);
      event(h->uav_id, EventCode::kMissionResumed, "resumed at waypoint " + std::to_string(f.mission->index));
    }
    return;
  }
  if (!c.session || !sessions_.is_live(*c.session) || !c.uav) return;
  const Uuid uav = *c.uav;
  auto& r = rt_[uav];
  std::visit(
      [&](const auto& msg) {
        using T = std::decay_t<decltype(msg)>;
        if constexpr (std::is_same_v<T, protocol::Telemetry>) {
          if (!sessions_.accept_telemetry(*c.session, msg.timestamp)) return;
          fleet_[uav].last_telemetry = msg;
          c.last_telemetry = msg;
          if (r.trajectory.size() < 10) r.trajectory.push_back(telemetry_pose(msg));
        } else if constexpr (std::is_same_v<T, protocol::ScanChunk>) {
          if (msg.offset == 0) {
            c.assembling.emplace();
            c.assembling->timestamp = msg.timestamp;
            c.assembling->max_range = 10.0;
            c.assembling_pose.reset();
            if (c.last_telemetry) c.assembling_pose = telemetry_pose(*c.last_telemetry);
            c.covered = 0;
          }
          if (!c.assembling || c.assembling->timestamp != msg.timestamp) return;
          for (std::size_t k = 0; k < msg.distances.size() && msg.offset + k < sim::kScanBins; ++k) {
            c.assembling->distances[msg.offset + k] = msg.distances[k];
            c.assembling->valid[msg.offset + k] = msg.valid[k];
          }
          c.covered += static_cast<int>(msg.distances.size());
          if (c.covered >= sim::kScanBins) {
            if (c.assembling_pose) on_scan(uav, *c.assembling, *c.assembling_pose);
            c.assembling.reset();
          }
        } else if constexpr (std::is_same_v<T, protocol::TaskStatus>) {
          r.statuses.push_back(msg);
        } else if constexpr (std::is_same_v<T, protocol::Heartbeat>) {
          if (!r.probes.empty()) {
            r.rtts.push_back(now_ - r.probes.front());
            r.probes.pop_front();
          }
        } else if constexpr (std::is_same_v<T, protocol::Event>) {
          events_.push_back({now_, uav, msg.code, msg.detail});
        }
      },
      m);
}

void GroundStation::on_disconnect(std::size_t ci) {
  auto& c = connections_[ci];
  if (c.closed) return;
  c.closed = true;
  if (!c.session) return;
  const bool was_live = sessions_.is_live(*c.session);
  sessions_.close(*c.session);
  if (!was_live || !c.uav) return;
  const Uuid uav = *c.uav;
  record("disconnected", uav, "{}");
  event(uav, EventCode::kInfo, "uav disconnected");
  auto& f = fleet_[uav];
  if (f.mission && f.mission->state == MissionState::kExecuting) {
    rt_[uav].paused_offline = true;
    rt_[uav].dispatch = {};
    set_mission_state(uav, MissionState::kPaused, f.mission->index);
    event(uav, EventCode::kMissionPaused, "uav offline at waypoint " + std::to_string(f.mission->index));
  }
}

void GroundStation::on_scan(const Uuid& uav, const sim::RangeScan& scan, const Pose& pose_local) {
  auto& r = rt_[uav];
  r.last_scan = {scan, pose_local};
  if (landmarks_) {
    for (const auto& o : landmarks_->observe(uav)) {
      auto& [sum, n] = r.landmarks_local[o.id];
      if (n == 0) sum = Vec3::Zero();
      sum += o.local;
      ++n;
    }
  }
  const CameraFrustum kf = frustum_at(pose_local);
  const bool new_keyframe = !r.last_keyframe || keyframe_gate(*r.last_keyframe, kf, config_.keyframe_threshold);
  if (new_keyframe) r.last_keyframe = kf;
  const auto& f = fleet_[uav];
  if (f.alignment) {
    if (new_keyframe) map_.add_keyframe({map_frustum(kf, *f.alignment), uav});
    integrate(uav, scan, pose_local);
    return;
  }
  if (new_keyframe) r.local_keyframes.push_back(kf);
  r.buffered.emplace_back(scan, pose_local);
  if (r.buffered.size() > 2000) r.buffered.erase(r.buffered.begin());
  try_admit(uav);
}

void GroundStation::integrate(const Uuid& uav, const sim::RangeScan& scan, const Pose& pose_local) {
  integrate_scan(map_, scan, pose_local, *fleet_[uav].alignment, uav);
}

void GroundStation::try_admit(const Uuid& uav) {
  auto& r = rt_[uav];
  // Landmarks in the global frame as seen by admitted UAVs.
  std::map<std::uint32_t, std::pair<Vec3, int>> global;
  for (const auto& [id, e] : fleet_) {
    if (!e.alignment || id == uav) continue;
    for (const auto& [lid, sn] : rt_[id].landmarks_local) {
      auto& [sum, n] = global[lid];
      if (n == 0) sum = Vec3::Zero();
      sum += e.alignment->apply(Vec3(sn.first / sn.second));
      ++n;
    }
  }
  std::vector<Pose> src;
  std::vector<Vec3> dst;
  for (const auto& [lid, sn] : r.landmarks_local) {
    auto it = global.find(lid);
    if (it == global.end()) continue;
    Pose p;
    p.position = sn.first / sn.second;
    src.push_back(p);
    dst.push_back(it->second.first / it->second.second);
  }
  r.overlapping = 0;
  if (src.size() < 3) return;
  SimilarityTransform t;
  try {
    t = geometry::ransac_align(src, dst, config_.ransac).transform;
  } catch (const Error&) {
    return;
  }
  for (const auto& kf : r.local_keyframes) {
    const CameraFrustum g = map_frustum(kf, t);
    for (const auto& other : map_.keyframes()) {
      if (other.source == uav) continue;
      if (geometry::frustum_overlap(g, other.frustum) >= config_.admission_overlap) {
        ++r.overlapping;
        break;
      }
    }
  }
  if (static_cast<int>(r.overlapping) < config_.admission_keyframes) return;
  record("aligned", uav, transform_json(t).dump());
  event(uav, EventCode::kInfo,
        "admitted to the map after " + std::to_string(r.overlapping) + " overlapping keyframes");
  for (const auto& kf : r.local_keyframes) map_.add_keyframe({map_frustum(kf, t), uav});
  for (const auto& [scan, pose] : r.buffered) integrate(uav, scan, pose);
  r.buffered.clear();
  r.local_keyframes.clear();
}

void GroundStation::run_dispatch(const Uuid& uav) {
  auto& f = fleet_[uav];
  auto& r = rt_[uav];
  if (!f.mission || f.mission->state != MissionState::kExecuting) {
    r.statuses.clear();
    return;
  }
  if (!f.alignment) return;
  const Mission local = to_local(*f.mission, f.alignment);
  const auto res = dispatch_tick(local, r.dispatch, f.online, r.statuses, now_, next_task_id_,
                                 config_.resend_period);
  r.statuses.clear();
  for (const auto& t : res.tasks) send_to(uav, t);
  if (res.state != local.state || res.index != local.index) set_mission_state(uav, res.state, res.index);
  for (const auto& e : res.events) events_.push_back({now_, uav, e.code, e.detail});
}

Mission GroundStation::set_mission(const Uuid& uav, const std::vector<Waypoint>& waypoints) {
  std::lock_guard lk(mu_);
  Mission m = plan_mission(waypoints, map_, uav, config_.planner);
  record("mission_planned", uav, mission_json(m).dump());
  rt_[uav].dispatch = {};
  rt_[uav].paused_offline = false;
  if (m.state == MissionState::kFailed) event(uav, EventCode::kMissionFailed, m.failure);
  return m;
}

bool GroundStation::start_mission(const Uuid& uav) {
  std::lock_guard lk(mu_);
  auto& f = fleet_[uav];
  if (!f.mission || f.mission->state != MissionState::kPlanned || !f.alignment || !f.online) return false;
  rt_[uav].dispatch = {};
  set_mission_state(uav, MissionState::kExecuting, 0);
  return true;
}

bool GroundStation::pause_mission(const Uuid& uav) {
  std::lock_guard lk(mu_);
  auto& f = fleet_[uav];
  if (!f.mission || f.mission->state != MissionState::kExecuting) return false;
  rt_[uav].dispatch = {};
  set_mission_state(uav, MissionState::kPaused, f.mission->index);
  event(uav, EventCode::kMissionPaused, "paused by operator");
  protocol::Task t;
  t.task_id = next_task_id_++;
  t.kind = TaskKind::kHold;
  send_to(uav, t);
  return true;
}

bool GroundStation::resume_mission(const Uuid& uav) {
  std::lock_guard lk(mu_);
  auto& f = fleet_[uav];
  if (!f.mission || f.mission->state != MissionState::kPaused || !f.online || !f.alignment) return false;
  rt_[uav].dispatch = {};
  rt_[uav].paused_offline = false;
  set_mission_state(uav, MissionState::kExecuting, f.mission->index);
  event(uav, EventCode::kMissionResumed, "resumed at waypoint " + std::to_string(f.mission->index));
  return true;
}

bool GroundStation::direct_pose_task(const Uuid& uav, TaskKind kind, const Pose& global) {
  auto it = fleet_.find(uav);
  if (it == fleet_.end() || !it->second.online || !it->second.alignment) return false;
  Mission one;
  one.uav = uav;
  one.waypoints.push_back({global, 0.0, std::nullopt});
  const Mission local = to_local(one, it->second.alignment);
  auto& r = rt_[uav];
  r.direct_target = local.waypoints[0].pose;
  // Successive carrot moves keep one task id: the runtime retargets in place.
  std::uint32_t id = 0;
  if (kind == TaskKind::kCarrotUpdate && r.carrot_task != 0) {
    id = r.carrot_task;
  } else {
    id = next_task_id_++;
  }
  r.carrot_task = kind == TaskKind::kCarrotUpdate ? id : 0;
  send_to(uav, pose_task(id, kind, local.waypoints[0].pose, local.frame, uav, uav));
  return true;
}

bool GroundStation::send_carrot(const Uuid& uav, const Pose& global) {
  std::lock_guard lk(mu_);
  return direct_pose_task(uav, TaskKind::kCarrotUpdate, global);
}

bool GroundStation::send_goto(const Uuid& uav, const Pose& global) {
  std::lock_guard lk(mu_);
  return direct_pose_task(uav, TaskKind::kGoto, global);
}

bool GroundStation::simple_task(const Uuid& uav, protocol::Task t) {
  if (!online(uav)) return false;
  t.task_id = next_task_id_++;
  rt_[uav].carrot_task = 0;
  send_to(uav, t);
  return true;
}

bool GroundStation::arm_door(const Uuid& uav) {
  std::lock_guard lk(mu_);
  protocol::Task t;
  t.kind = TaskKind::kArmDoorTraversal;
  return simple_task(uav, t);
}

bool GroundStation::abort(const Uuid& uav) {
  std::lock_guard lk(mu_);
  protocol::Task t;
  t.kind = TaskKind::kAbort;
  return simple_task(uav, t);
}

bool GroundStation::hold(const Uuid& uav) {
  std::lock_guard lk(mu_);
  protocol::Task t;
  t.kind = TaskKind::kHold;
  return simple_task(uav, t);
}

bool GroundStation::set_gimbal(const Uuid& uav, double pitch, double yaw) {
  std::lock_guard lk(mu_);
  protocol::Task t;
  t.kind = TaskKind::kSetGimbal;
  t.gimbal = {static_cast<float>(pitch), static_cast<float>(yaw)};
  return simple_task(uav, t);
}

std::map<Uuid, FleetEntry> GroundStation::fleet() const {
  std::lock_guard lk(mu_);
  return fleet_;
}

std::optional<FleetEntry> GroundStation::entry(const Uuid& uav) const {
  std::lock_guard lk(mu_);
  auto it = fleet_.find(uav);
  if (it == fleet_.end()) return std::nullopt;
  return it->second;
}

std::vector<LogEntry> GroundStation::log() const {
  std::lock_guard lk(mu_);
  return log_;
}

std::vector<GcsEvent> GroundStation::events_since(std::size_t first) const {
  std::lock_guard lk(mu_);
  if (first >= events_.size()) return {};
  return {events_.begin() + static_cast<std::ptrdiff_t>(first), events_.end()};
}

std::size_t GroundStation::event_count() const {
  std::lock_guard lk(mu_);
  return events_.size();
}

std::vector<MapPoint> GroundStation::map_points_since(std::size_t first) const {
  std::lock_guard lk(mu_);
  const auto& p = map_.points();
  if (first >= p.size()) return {};
  return {p.begin() + static_cast<std::ptrdiff_t>(first), p.end()};
}

std::size_t GroundStation::map_size() const {
  std::lock_guard lk(mu_);
  return map_.size();
}

std::vector<Keyframe> GroundStation::keyframes() const {
  std::lock_guard lk(mu_);
  return map_.keyframes();
}

bool GroundStation::admitted(const Uuid& uav) const {
  std::lock_guard lk(mu_);
  auto it = fleet_.find(uav);
  return it != fleet_.end() && it->second.alignment.has_value();
}

std::size_t GroundStation::buffered_scans(const Uuid& uav) const {
  std::lock_guard lk(mu_);
  auto it = rt_.find(uav);
  return it == rt_.end() ? 0 : it->second.buffered.size();
}

std::size_t GroundStation::overlapping_keyframes(const Uuid& uav) const {
  std::lock_guard lk(mu_);
  auto it = rt_.find(uav);
  return it == rt_.end() ? 0 : it->second.overlapping;
}

std::optional<double> GroundStation::last_rtt(const Uuid& uav) const {
  std::lock_guard lk(mu_);
  auto it = rt_.find(uav);
  if (it == rt_.end() || it->second.rtts.empty()) return std::nullopt;
  return it->second.rtts.back();
}

std::vector<double> GroundStation::rtt_samples(const Uuid& uav) const {
  std::lock_guard lk(mu_);
  auto it = rt_.find(uav);
  return it == rt_.end() ? std::vector<double>{} : it->second.rtts;
}

std::optional<std::pair<sim::RangeScan, Pose>> GroundStation::last_scan(const Uuid& uav) const {
  std::lock_guard lk(mu_);
  auto it = rt_.find(uav);
  if (it == rt_.end()) return std::nullopt;
  return it->second.last_scan;
}

std::optional<Pose> GroundStation::current_local_target(const Uuid& uav) const {
  std::lock_guard lk(mu_);
  auto f = fleet_.find(uav);
  if (f == fleet_.end()) return std::nullopt;
  if (f->second.mission && f->second.mission->state == MissionState::kExecuting && f->second.alignment) {
    const Mission local = to_local(*f->second.mission, f->second.alignment);
    return local.waypoints[local.index].pose;
  }
  auto r = rt_.find(uav);
  if (r == rt_.end()) return std::nullopt;
  return r->second.direct_target;
}

std::uint64_t GroundStation::unknown_frames() const {
  std::lock_guard lk(mu_);
  return unknown_frames_;
}

}  // namespace fleetsim::gcs
