#pragma once

#include <deque>
#include <memory>
#include <optional>
#include <vector>

#include "avoidance.hpp"
#include "controller.hpp"
#include "door.hpp"
#include "estimator.hpp"
#include "protocol.hpp"
#include "sim_world.hpp"

namespace fleetsim::runtime {

using geometry::Pose;
using geometry::Vec3;

struct RuntimeConfig {
  estimation::FilterConfig filter;
  double adapter_rate = 30.0;
  /// Telemetry is filtered only up to now minus this delay, so every reading
  /// generated before that instant has already arrived.
  double telemetry_latency = 0.344;
  control::ControllerParams controller;
  door::DoorParams door;
  double scan_window = 0.5;
  int elevation_bins = 3;
  double telemetry_report_period = 0.1;
  double scan_report_period = 0.5;
  std::uint16_t scan_chunk_bins = 90;
  /// World pose of the local frame; needed to use GNSS fixes.
  std::optional<Pose> gnss_home;
  /// Safety pilot clearance at start-up.
  bool clearance = true;
};

/// One door-detection record, in the local frame.
struct DoorSample {
  double time = 0.0;
  door::Phase phase = door::Phase::kApproaching;
  door::DoorCandidate candidate;
};

/// Per-UAV autonomy running next to the remote controller: state estimation,
/// flight control, avoidance, door traversal and the ground-station link.
/// Single-threaded; the owner feeds vehicle data and messages and calls tick().
class UavRuntime {
 public:
  UavRuntime(protocol::Uuid id, sim::UavModel model, RuntimeConfig config = {});

  void on_vehicle_telemetry(const sim::QuantizedTelemetry& t);
  void on_vehicle_scan(const sim::RangeScan& scan);
  void on_message(const protocol::Message& m, double now);

  /// Runs estimation and control; the returned output goes to the vehicle.
  control::ControlOutput tick(double now);

  std::vector<protocol::Message> take_outbox();
  protocol::Hello hello() const;

  void grant_clearance() { controller_.grant_clearance(); }
  void revoke_clearance() { controller_.revoke_clearance(); }

  bool initialized() const { return filter_.has_value(); }
  /// Latest filtered estimate (timestamp = filter time).
  std::optional<estimation::Estimate> estimate() const;
  std::optional<estimation::Estimate> estimate_at(double t) const;
  const estimation::CvFilter* filter() const { return filter_ ? &*filter_ : nullptr; }
  const control::FlightController& controller() const { return controller_; }
  const control::GimbalState& gimbal() const { return gimbal_; }
  const std::optional<door::TraversalState>& door_state() const { return door_; }
  const std::vector<DoorSample>& door_history() const { return door_history_; }
  const std::optional<avoidance::AdjustedCommand>& last_avoidance() const { return last_avoidance_; }
  /// Avoidance image built at the last tick: local-frame azimuths, seen from
  /// the position predicted one actuation latency ahead.
  const std::optional<avoidance::SphericalRangeImage>& last_image() const { return image_; }
  std::optional<std::uint32_t> active_task() const { return active_task_; }
  const RuntimeConfig& config() const { return config_; }

 private:
  void push_measurements(const sim::QuantizedTelemetry& t);
  void set_task_state(std::uint32_t task, protocol::TaskState s);
  void emit_event(protocol::EventCode code, const std::string& detail);
  void handle_task(const protocol::Task& task, double now);
  void report(double now);

  protocol::Uuid id_;
  sim::UavModel model_;
  RuntimeConfig config_;
  estimation::RateAdapter adapter_;
  std::optional<estimation::CvFilter> filter_;
  control::FlightController controller_;
  control::GimbalState gimbal_;

  /// Obstacle points (local frame) per scan inside the aggregation window.
  std::deque<std::pair<double, std::vector<geometry::Vec2>>> scan_points_;
  std::optional<sim::RangeScan> last_body_scan_;
  std::optional<avoidance::SphericalRangeImage> image_;
  std::optional<avoidance::AdjustedCommand> last_avoidance_;

  std::optional<door::TraversalState> door_;
  bool bypass_lateral_ = false;
  std::vector<DoorSample> door_history_;

  std::optional<std::uint32_t> active_task_;
  std::optional<protocol::TaskState> active_state_;
  std::vector<protocol::Message> outbox_;
  double last_telemetry_report_ = -1e300;
  double last_scan_report_ = -1e300;
  std::optional<sim::RangeScan> pending_report_scan_;
};

}  // namespace fleetsim::runtime
