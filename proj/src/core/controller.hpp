#pragma once

#include <deque>
#include <memory>
#include <optional>
#include <vector>

#include "avoidance.hpp"
#include "estimator.hpp"
#include "geometry.hpp"
#include "sim_world.hpp"

namespace fleetsim::control {

using estimation::Estimate;
using geometry::Pose;
using geometry::Vec3;
using sim::VelocityCommand;

enum class Mode : std::uint8_t { kIdle, kVelocityCarrot, kWaypoint, kDoorTraversal, kPositionHold };

const char* mode_name(Mode m);

struct ControllerParams {
  double gain = 0.8;      // 1/s
  double yaw_gain = 1.0;  // 1/s
  double v_max = 0.5;
  double yaw_rate_max = 0.5;
  double hold_threshold = 0.05;          // per axis
  double yaw_hold_threshold = 0.05;      // rad, arrival only
  double reactivation_threshold = 0.15;  // per axis
  double command_period = 0.1;
  /// Axes still outside the hold zone get at least this speed, so the
  /// command survives rounding to the vehicle's velocity step.
  double min_speed = 0.1;
  double velocity_step = 0.1;
  /// Plant model for the latency predictor; zero latency disables it.
  double actuation_latency = 0.496;
  double time_constant = 0.3;
  /// Obstacle returns beyond the target by more than this are ignored.
  double horizon_margin = 0.5;
  double horizon_cap = 4.0;
  /// Forward cone checked while lateral avoidance is bypassed.
  double emergency_half_angle = 10.0 * geometry::kPi / 180.0;
  avoidance::AvoidanceParams avoidance;
};

/// Proportional command toward the target, norm-clipped to v_max.
VelocityCommand velocity_to_target(const Pose& current, const Pose& target, double v_max,
                                   double gain = 0.8, double yaw_gain = 1.0, double yaw_rate_max = 0.5);

enum class Notification : std::uint8_t { kTargetReached, kBlocked, kAborted, kClearanceLost, kReactivated };

const char* notification_name(Notification n);

struct ControlOutput {
  enum class Kind : std::uint8_t { kNone, kVelocity, kHold, kRelease };
  Kind kind = Kind::kNone;
  VelocityCommand command;
  std::vector<Notification> notifications;
  std::optional<avoidance::AdjustedCommand> avoidance;
};

struct TickInput {
  double now = 0.0;
  Estimate estimate;
  /// Range image in the local frame; nullptr skips avoidance.
  const avoidance::SphericalRangeImage* image = nullptr;
  bool bypass_lateral_avoidance = false;
};

/// Per-UAV mode machine. Owned and ticked by one runtime loop.
class FlightController {
 public:
  explicit FlightController(ControllerParams params = {});

  void grant_clearance() { clearance_ = true; }
  /// Takes effect on the next tick.
  void revoke_clearance() { clearance_ = false; }
  bool clearance() const { return clearance_; }

  /// Autonomy modes need clearance; returns false (and stays put) otherwise.
  bool set_target(const Pose& target, Mode mode);
  void set_idle();

  ControlOutput tick(const TickInput& in);

  Mode mode() const { return mode_; }
  /// Mode to return to when drift ends a position hold.
  Mode resume_mode() const { return resume_mode_; }
  const std::optional<Pose>& target() const { return target_; }
  const ControllerParams& params() const { return params_; }

  /// Pose expected once every already-sent command has taken effect.
  Pose predicted_pose(const Estimate& est, double now) const;

 private:
  struct Sent {
    double time;
    Vec3 linear;
    double yaw_rate;
  };
  bool may_emit(double now) const;
  void remember(double now, const Vec3& linear, double yaw_rate);

  ControllerParams params_;
  bool clearance_ = false;
  Mode mode_ = Mode::kIdle;
  Mode resume_mode_ = Mode::kWaypoint;
  std::optional<Pose> target_;
  double last_emit_ = -1e300;
  bool release_pending_ = false;
  bool hold_pending_ = false;
  std::deque<Sent> sent_;
};

enum class GimbalMode : std::uint8_t { kCommanded, kTracking };

struct GimbalState {
  double pitch = 0.0;
  double yaw = 0.0;  // relative to the body heading, positive to the right
  GimbalMode mode = GimbalMode::kCommanded;
};

inline constexpr double kGimbalPitchMin = -geometry::kPi / 2.0;
inline constexpr double kGimbalPitchMax = geometry::kPi / 6.0;

/// Normalized image rectangle; x grows rightward, y grows downward.
struct BoundingBox {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  bool empty() const { return !(x1 > x0) || !(y1 > y0); }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
};

/// Rate control toward a centred box: yaw follows horizontal error, pitch the vertical one.
GimbalState gimbal_track(const BoundingBox& bbox, const GimbalState& g, double dt, double gain = 1.0);

/// Source of person detections for tracking.
class DetectionSource {
 public:
  virtual ~DetectionSource() = default;
  virtual std::optional<BoundingBox> detect(const Pose& uav_world, const GimbalState& gimbal) = 0;
};

/// Ground-truth boxes from a known person position and a pinhole camera.
class SimPersonDetector final : public DetectionSource {
 public:
  SimPersonDetector(Vec3 person, double hfov = 1.2, double vfov = 0.9, double person_height = 1.7,
                    double person_width = 0.5);
  void move_to(const Vec3& p) { person_ = p; }
  std::optional<BoundingBox> detect(const Pose& uav_world, const GimbalState& gimbal) override;

 private:
  Vec3 person_;
  double hfov_, vfov_, height_, width_;
};

}  // namespace fleetsim::control
