#pragma once

#include <array>
#include <deque>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "geometry.hpp"
#include "protocol.hpp"
#include "session.hpp"
#include "sim_world.hpp"
#include "transport.hpp"

namespace fleetsim::gcs {

using geometry::CameraFrustum;
using geometry::Pose;
using geometry::SimilarityTransform;
using geometry::Vec2;
using geometry::Vec3;
using protocol::Uuid;

enum class Frame : std::uint8_t { kGlobal, kLocal };

struct Waypoint {
  Pose pose;
  double wait_time = 0.0;
  /// pitch, yaw in radians
  std::optional<std::array<double, 2>> gimbal;
};

enum class MissionState : std::uint8_t { kPlanned, kExecuting, kPaused, kCompleted, kFailed };
const char* mission_state_name(MissionState s);
MissionState parse_mission_state(const std::string& s);

struct Mission {
  std::vector<Waypoint> waypoints;
  Uuid uav{};
  MissionState state = MissionState::kPlanned;
  std::size_t index = 0;
  /// Frame of the waypoint poses; kLocal missions belong to `uav`'s frame.
  Frame frame = Frame::kGlobal;
  std::string failure;
};

struct CirclePattern {
  double radius = 1.0;
  int count = 4;
  bool face_center = true;
};

/// Poses equally spaced on a circle at the centre's height, starting on +x.
std::vector<Waypoint> expand_pattern(const Pose& center, const CirclePattern& pattern);

struct MapPoint {
  Vec3 position;
  Uuid source{};
};

struct Keyframe {
  CameraFrustum frustum;
  Uuid source{};
};

/// Voxel-filtered global point set, at most one point per (voxel, source).
class GlobalMap {
 public:
  explicit GlobalMap(double voxel_size = 0.1);

  /// Points outside the bounds (when set) are rejected.
  void set_bounds(const Vec2& lo, const Vec2& hi);
  bool insert(const Vec3& p, const Uuid& source);
  void add_keyframe(const Keyframe& k) { keyframes_.push_back(k); }

  const std::vector<MapPoint>& points() const { return points_; }
  const std::vector<Keyframe>& keyframes() const { return keyframes_; }
  double voxel_size() const { return voxel_; }
  std::size_t size() const { return points_.size(); }
  /// Horizontal distance to the nearest stored point (infinity when empty).
  double horizontal_clearance(const Vec3& p) const;

 private:
  struct Key {
    std::int64_t x, y, z;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const;
  };
  Key key_of(const Vec3& p) const;

  double voxel_;
  std::optional<std::pair<Vec2, Vec2>> bounds_;
  std::vector<MapPoint> points_;
  std::unordered_map<Key, std::vector<std::size_t>, KeyHash> voxels_;
  std::vector<Keyframe> keyframes_;
};

struct PlannerOptions {
  double sample_step = 0.1;
  double clearance = 0.6;
  double max_offset = 2.0;
  double offset_step = 0.25;
};

/// Straight segments sampled at `sample_step`; blocked segments get one
/// lateral detour waypoint (first clear offset wins). Unfixable segments
/// yield a failed mission naming the segment. Throws kInvalidArgument on an
/// empty list.
Mission plan_mission(const std::vector<Waypoint>& waypoints, const GlobalMap& map, const Uuid& uav,
                     const PlannerOptions& options = {});

/// Minimum horizontal clearance along the sampled path of a mission.
double path_clearance(const Mission& m, const GlobalMap& map, double sample_step = 0.1);

/// Throws kMissingAlignment when the alignment is absent.
Mission to_local(const Mission& m, const std::optional<SimilarityTransform>& alignment);
Mission to_global(const Mission& m, const std::optional<SimilarityTransform>& alignment);

/// True when the current view overlaps the last keyframe by less than `threshold`.
bool keyframe_gate(const CameraFrustum& last, const CameraFrustum& current, double threshold = 0.6);

/// Adds the valid, non-max-range returns of a body-frame scan taken at
/// `pose_local`; returns the number of new points.
std::size_t integrate_scan(GlobalMap& map, const sim::RangeScan& scan, const Pose& pose_local,
                           const SimilarityTransform& alignment, const Uuid& source);

/// Goto/carrot task for `recipient`; refuses poses not tagged with that UAV's local frame.
protocol::Task pose_task(std::uint32_t task_id, protocol::TaskKind kind, const Pose& pose, Frame frame,
                         const Uuid& frame_owner, const Uuid& recipient);

struct DispatchState {
  std::uint32_t task_id = 0;  // task of the current waypoint, 0 = none yet
  double last_sent = -1e300;
  std::optional<double> reached_at;
  bool gimbal_sent = false;
};

struct DispatchResult {
  std::vector<protocol::Task> tasks;
  /// Mission state after the tick (state and index only change here).
  MissionState state = MissionState::kPlanned;
  std::size_t index = 0;
  std::vector<protocol::Event> events;
};

/// One monitoring step of an executing mission. `local` must be the mission
/// in the UAV's local frame. `next_task_id` is advanced for every new task.
DispatchResult dispatch_tick(const Mission& local, DispatchState& ds, bool online,
                             const std::vector<protocol::TaskStatus>& statuses, double now,
                             std::uint32_t& next_task_id, double resend_period = 1.0);

struct LandmarkObservation {
  std::uint32_t id = 0;
  Vec3 local;  // in the observing UAV's local frame
};

/// Correspondence source for map admission (the simulator's landmark oracle).
class LandmarkSource {
 public:
  virtual ~LandmarkSource() = default;
  virtual std::vector<LandmarkObservation> observe(const Uuid& uav) = 0;
};

/// Persistent fleet state; this is what the mission log reproduces.
struct FleetEntry {
  Uuid uav_id{};
  std::uint8_t model = 0;
  std::optional<SimilarityTransform> alignment;
  std::optional<protocol::Telemetry> last_telemetry;
  std::optional<Mission> mission;  // global frame
  bool online = false;
};

/// Append-only record of fleet-state transitions.
struct LogEntry {
  double time = 0.0;
  std::string op;  // registered, disconnected, aligned, mission_planned, mission_state
  Uuid uav{};
  std::string data;  // JSON object with the op's fields
};

std::string log_to_jsonl(const std::vector<LogEntry>& log);
std::vector<LogEntry> log_from_jsonl(const std::string& text);

/// Fleet state rebuilt from a log alone.
std::map<Uuid, FleetEntry> replay(const std::vector<LogEntry>& log);
/// Equality of the logged parts (telemetry is not logged).
bool same_fleet_state(const std::map<Uuid, FleetEntry>& a, const std::map<Uuid, FleetEntry>& b);

struct GcsConfig {
  double voxel_size = 0.1;
  PlannerOptions planner;
  double keyframe_threshold = 0.6;
  /// Overlap needed for a newcomer keyframe to count as a match.
  double admission_overlap = 0.3;
  int admission_keyframes = 5;
  double resend_period = 1.0;
  double heartbeat_period = 1.0;
  geometry::RansacOptions ransac;
  /// Scenario bounds inflated by the sensor range, when known.
  std::optional<std::pair<Vec2, Vec2>> map_bounds;
  /// Declared start poses (global) by UAV id, used for the first admission.
  std::map<Uuid, Pose> declared_starts;
};

struct GcsEvent {
  double time = 0.0;
  Uuid uav{};
  std::uint8_t code = 0;
  std::string detail;
};

/// Ground station: fleet authority, mission dispatch and map fusion.
/// Every public method takes the state lock, so UI and network threads can
/// call in; tick() does the I/O without holding it across blocking calls.
class GroundStation {
 public:
  explicit GroundStation(GcsConfig config = {});

  /// Takes ownership of a connection; the peer must open with Hello.
  void add_connection(std::unique_ptr<transport::Channel> channel);
  /// Polls connections, runs dispatch, admission and heartbeats.
  void tick(double now);

  void set_landmark_source(LandmarkSource* source);

  // Operator commands. Missions are given in the global frame.
  Mission set_mission(const Uuid& uav, const std::vector<Waypoint>& waypoints);
  bool start_mission(const Uuid& uav);
  bool pause_mission(const Uuid& uav);
  bool resume_mission(const Uuid& uav);
  /// Direct tasks; false when the UAV is offline or not aligned (where needed).
  bool send_carrot(const Uuid& uav, const Pose& global);
  bool send_goto(const Uuid& uav, const Pose& global);
  bool arm_door(const Uuid& uav);
  bool abort(const Uuid& uav);
  bool hold(const Uuid& uav);
  bool set_gimbal(const Uuid& uav, double pitch, double yaw);

  std::map<Uuid, FleetEntry> fleet() const;
  std::optional<FleetEntry> entry(const Uuid& uav) const;
  std::vector<LogEntry> log() const;
  std::vector<GcsEvent> events_since(std::size_t first) const;
  std::size_t event_count() const;
  /// Snapshot copies of the map (points from index `first` on).
  std::vector<MapPoint> map_points_since(std::size_t first) const;
  std::size_t map_size() const;
  std::vector<Keyframe> keyframes() const;
  bool admitted(const Uuid& uav) const;
  std::size_t buffered_scans(const Uuid& uav) const;
  std::size_t overlapping_keyframes(const Uuid& uav) const;
  std::optional<double> last_rtt(const Uuid& uav) const;
  std::vector<double> rtt_samples(const Uuid& uav) const;
  /// Latest body-frame scan and its local pose, for the UI scan view.
  std::optional<std::pair<sim::RangeScan, Pose>> last_scan(const Uuid& uav) const;
  /// Current target of the UAV in its local frame, if any.
  std::optional<Pose> current_local_target(const Uuid& uav) const;
  const session::SessionTable& sessions() const { return sessions_; }
  const GcsConfig& config() const { return config_; }
  std::uint64_t unknown_frames() const;

 private:
  struct Connection {
    std::unique_ptr<transport::Channel> channel;
    std::optional<std::uint32_t> session;
    std::optional<Uuid> uav;
    std::optional<protocol::Telemetry> last_telemetry;  // pose paired with the next scan
    std::optional<sim::RangeScan> assembling;
    std::optional<Pose> assembling_pose;
    int covered = 0;
    bool closed = false;
  };
  struct Runtime {
    DispatchState dispatch;
    std::vector<protocol::TaskStatus> statuses;
    bool paused_offline = false;
    std::optional<Pose> direct_target;  // local frame
    std::uint32_t carrot_task = 0;
    std::vector<Pose> trajectory;       // first local poses
    std::optional<CameraFrustum> last_keyframe;  // local frame
    std::vector<CameraFrustum> local_keyframes;
    std::vector<std::pair<sim::RangeScan, Pose>> buffered;
    std::map<std::uint32_t, std::pair<Vec3, int>> landmarks_local;  // sum, count
    std::optional<std::pair<sim::RangeScan, Pose>> last_scan;
    std::deque<double> probes;  // send times of unanswered heartbeats
    double last_probe = -1e300;
    std::vector<double> rtts;
    std::size_t overlapping = 0;
  };
  struct Outbound {
    Uuid uav{};
    std::optional<std::size_t> connection;  // direct reply (registration)
    protocol::Message message;
  };

  /// The only mutator of the logged fleet state.
  void apply(const LogEntry& e);
  void record(const std::string& op, const Uuid& uav, const std::string& data);
  void event(const Uuid& uav, protocol::EventCode code, const std::string& detail);
  void handle(std::size_t conn, const protocol::Message& m);
  void on_disconnect(std::size_t conn);
  void on_scan(const Uuid& uav, const sim::RangeScan& scan, const Pose& pose_local);
  void integrate(const Uuid& uav, const sim::RangeScan& scan, const Pose& pose_local);
  void try_admit(const Uuid& uav);
  void run_dispatch(const Uuid& uav);
  void set_mission_state(const Uuid& uav, MissionState s, std::size_t index, const std::string& failure = {});
  bool online(const Uuid& uav) const;
  void send_to(const Uuid& uav, protocol::Message m);
  bool direct_pose_task(const Uuid& uav, protocol::TaskKind kind, const Pose& global);
  bool simple_task(const Uuid& uav, protocol::Task t);

  GcsConfig config_;
  std::mutex io_mu_;  // connections; held by tick() only
  mutable std::mutex mu_;  // fleet state
  session::SessionTable sessions_;
  std::vector<Connection> connections_;
  std::vector<Outbound> outbound_;
  std::map<Uuid, FleetEntry> fleet_;
  std::map<Uuid, Runtime> rt_;
  std::vector<LogEntry> log_;
  std::vector<GcsEvent> events_;
  GlobalMap map_;
  LandmarkSource* landmarks_ = nullptr;
  std::uint32_t next_task_id_ = 1;
  double now_ = 0.0;
  std::uint64_t unknown_frames_ = 0;
};

/// Mission file: JSON list of {x, y, z, yaw, wait, gimbal_pitch}.
std::vector<Waypoint> parse_mission_file(const std::string& json_text);
std::vector<Waypoint> load_mission_file(const std::string& path);

}  // namespace fleetsim::gcs
