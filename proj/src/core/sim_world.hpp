#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <vector>

#include "scenario.hpp"

namespace fleetsim::sim {

inline constexpr int kScanBins = 360;

struct SimConfig {
  double velocity_time_constant = 0.3;
  double max_speed = 2.0;
  double uav_radius = 0.1;
  double max_range = 10.0;
  /// Sensor floor: closer returns are unreliable.
  double near_range_limit = 0.5;
  double near_detection_probability = 0.8;
  double near_overestimate_sigma = 0.3;
  double range_noise_sigma = 0.03;
  double range_noise_clamp_sigmas = 5.0;
  double velocity_step = 0.1;
  double yaw_step_deg = 0.1;
  double altitude_step = 0.1;
  double gnss_step = 0.1;
  double command_min_interval = 0.1;
  /// Position random walk while holding, m/sqrt(s).
  double hold_drift_sigma = 0.01;
};

/// Velocity command in the UAV's local frame (origin below the start pose, x along start heading).
struct VelocityCommand {
  Vec3 linear = Vec3::Zero();
  double yaw_rate = 0.0;
  double timestamp = 0.0;
};

enum class CommandKind : std::uint8_t { kVelocity, kHold, kRelease };

struct PendingCommand {
  double apply_time = 0.0;
  CommandKind kind = CommandKind::kVelocity;
  Vec3 linear = Vec3::Zero();
  double yaw_rate = 0.0;
};

enum class Admission { kAccepted, kDropped };

/// Telemetry stored as integer counts of the quantization step, so every
/// reported value is an exact multiple of its step.
struct QuantizedTelemetry {
  std::array<std::int64_t, 3> velocity_counts{};
  std::int64_t yaw_counts = 0;
  std::optional<std::int64_t> altitude_counts;
  std::optional<std::array<std::int64_t, 3>> gnss_counts;
  double velocity_step = 0.1;
  double yaw_step_deg = 0.1;
  double altitude_step = 0.1;
  double gnss_step = 0.1;
  double timestamp = 0.0;

  Vec3 velocity() const;
  /// Radians, local frame.
  double yaw() const;
  double yaw_degrees() const;
  std::optional<double> altitude() const;
  std::optional<Vec3> gnss_position() const;

  /// Compares quantized fields only.
  bool same_reading(const QuantizedTelemetry& other) const;
};

struct RangeScan {
  std::array<double, kScanBins> distances{};
  std::array<bool, kScanBins> valid{};
  double max_range = 10.0;
  std::uint64_t truth_tag = 0;
  double timestamp = 0.0;
};

struct UavTruth {
  Pose pose;
  Vec3 velocity = Vec3::Zero();
  double yaw_rate = 0.0;
  UavModel model = UavModel::kMini3;
  bool gnss_available = false;
  /// Local frame expressed in the world: origin at ground below the start, heading = start yaw.
  Pose local_frame;
  std::deque<PendingCommand> pending_commands;
  Vec3 commanded_velocity = Vec3::Zero();
  double commanded_yaw_rate = 0.0;
  /// Station keeping with drift; set by a hold request or a release.
  bool holding = false;
  bool crashed = false;
  double last_accepted_command = -1e300;

  std::optional<QuantizedTelemetry> last_generated;
  std::deque<std::pair<double, QuantizedTelemetry>> telemetry_in_flight;
};

struct Landmark {
  std::uint32_t id = 0;
  Vec3 position;
};

/// Deterministic world: identical seed, scenario and command stream give a
/// bit-identical trajectory. Owned by one simulation loop.
class World {
 public:
  explicit World(Scenario scenario, SimConfig config = {});

  void step(double dt);

  Admission apply_virtual_stick(std::size_t uav, const VelocityCommand& cmd);
  /// Switch to the vehicle's own position hold after the actuation latency.
  void request_position_hold(std::size_t uav, double timestamp);
  /// VirtualStick released (pilot took over): brake and hold.
  void release_control(std::size_t uav, double timestamp);

  std::optional<QuantizedTelemetry> sample_telemetry(std::size_t uav);
  RangeScan sample_range_scan(std::size_t uav);

  double clock() const { return clock_; }
  std::uint64_t ticks() const { return ticks_; }
  std::size_t uav_count() const { return uavs_.size(); }
  const UavTruth& uav(std::size_t i) const;
  /// Test and experiment hook.
  UavTruth& mutable_uav(std::size_t i);
  const Scenario& scenario() const { return scenario_; }
  const SimConfig& config() const { return config_; }

  /// Distance from a point to the nearest obstacle surface at height z (walls and cylinders).
  double clearance_at(const Vec3& p) const;
  double truth_clearance(std::size_t i) const { return clearance_at(uav(i).pose.position); }
  /// First hit along a horizontal ray, capped at max_range.
  double raycast(const Vec2& origin, double z, double azimuth, double max_range) const;

  /// Wall endpoints and cylinder centres at height z.
  std::vector<Landmark> landmarks(double z) const;
  /// Landmarks within range and line of sight of the UAV.
  std::vector<Landmark> visible_landmarks(std::size_t uav) const;

  /// Whether bin `i` (degrees, body frame) is reported by this model.
  static bool bin_valid_for_model(UavModel model, int bin);

 private:
  void check(std::size_t uav) const;
  bool collides(const Vec3& p) const;
  QuantizedTelemetry quantize(const UavTruth& u) const;

  Scenario scenario_;
  SimConfig config_;
  std::vector<UavTruth> uavs_;
  double clock_ = 0.0;
  std::uint64_t ticks_ = 0;
  std::mt19937_64 rng_;
};

}  // namespace fleetsim::sim
