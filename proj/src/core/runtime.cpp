#include "runtime.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace fleetsim::runtime {

using control::Mode;
using control::Notification;
using estimation::MeasurementEvent;
using estimation::MeasurementKind;
using protocol::EventCode;
using protocol::TaskKind;
using protocol::TaskState;

namespace {

Pose pose_of(const std::array<float, 4>& p) { return Pose::make(p[0], p[1], p[2], p[3]); }

constexpr double kDeg = geometry::kPi / 180.0;

}  // namespace

UavRuntime::UavRuntime(protocol::Uuid id, sim::UavModel model, RuntimeConfig config)
    : id_(id), model_(model), config_(std::move(config)), adapter_(config_.adapter_rate),
      controller_(config_.controller) {
  if (config_.scan_chunk_bins == 0 || config_.scan_chunk_bins > sim::kScanBins) {
    throw Error(ErrorCode::kInvalidArgument, "UavRuntime: scan chunk size must be in [1, 360]");
  }
  if (config_.clearance) controller_.grant_clearance();
}

protocol::Hello UavRuntime::hello() const {
  return protocol::Hello{id_, static_cast<std::uint8_t>(model_), protocol::kProtocolVersion};
}

void UavRuntime::push_measurements(const sim::QuantizedTelemetry& t) {
  const double ts = t.timestamp;
  adapter_.push(MeasurementEvent{MeasurementKind::kVelocity, t.velocity(), t.velocity_step, ts});
  adapter_.push(MeasurementEvent{MeasurementKind::kYaw, Vec3(t.yaw(), 0, 0), t.yaw_step_deg * kDeg, ts});
  if (const auto alt = t.altitude()) {
    adapter_.push(MeasurementEvent{MeasurementKind::kAltitude, Vec3(*alt, 0, 0), t.altitude_step, ts});
  }
  if (const auto g = t.gnss_position(); g && config_.gnss_home) {
    const Vec3 local = geometry::rotate_yaw(*g - config_.gnss_home->position, -config_.gnss_home->yaw);
    adapter_.push(MeasurementEvent{MeasurementKind::kGnssPosition, local, t.gnss_step, ts});
  }
}

void UavRuntime::on_vehicle_telemetry(const sim::QuantizedTelemetry& t) {
  if (!filter_) {
    const double z = t.altitude().value_or(0.0);
    filter_.emplace(Pose::make(0.0, 0.0, z, t.yaw()), t.timestamp, config_.filter);
  }
  push_measurements(t);
}

std::optional<estimation::Estimate> UavRuntime::estimate() const {
  if (!filter_) return std::nullopt;
  return filter_->estimate_at(filter_->state().last_update);
}

std::optional<estimation::Estimate> UavRuntime::estimate_at(double t) const {
  if (!filter_) return std::nullopt;
  return filter_->estimate_at(t);
}

void UavRuntime::on_vehicle_scan(const sim::RangeScan& scan) {
  last_body_scan_ = scan;
  if (!pending_report_scan_ || scan.timestamp - last_scan_report_ >= config_.scan_report_period - 1e-9) {
    pending_report_scan_ = scan;
  }
  if (!filter_) return;
  const auto est = filter_->estimate_at(scan.timestamp);
  scan_points_.emplace_back(scan.timestamp, avoidance::scan_points(scan, est.pose.position.head<2>(), est.pose.yaw));
  while (!scan_points_.empty() && scan_points_.front().first < scan.timestamp - config_.scan_window - 1e-9) {
    scan_points_.pop_front();
  }

  if (!door_ || door_->phase == door::Phase::kDone || door_->phase == door::Phase::kAborted) return;
  const auto before = door_->phase;
  auto [out, st] = door::traversal_tick(*door_, scan, est.pose, scan.timestamp, config_.door);
  door_ = st;
  if (st.phase == door::Phase::kFrozenTraversing && st.door_global) {
    door_history_.push_back({scan.timestamp, st.phase, *st.door_global});
  } else if (out.detection) {
    door_history_.push_back({scan.timestamp, st.phase, *out.detection});
  }
  if (before == door::Phase::kApproaching && st.phase != door::Phase::kApproaching && st.door_global) {
    emit_event(EventCode::kDoorDetected, "door frozen, width " + std::to_string(st.door_global->width) + " m");
  }
  switch (st.phase) {
    case door::Phase::kDone:
      bypass_lateral_ = false;
      controller_.set_target(st.post_pose, Mode::kWaypoint);
      if (active_task_) set_task_state(*active_task_, TaskState::kReached);
      emit_event(EventCode::kTargetReached, "door traversal complete");
      break;
    case door::Phase::kAborted:
      bypass_lateral_ = false;
      controller_.set_target(est.pose, Mode::kPositionHold);
      if (active_task_) set_task_state(*active_task_, TaskState::kAborted);
      emit_event(EventCode::kAborted, "door traversal aborted: door lost");
      break;
    default:
      bypass_lateral_ = out.bypass_lateral_avoidance;
      if (!controller_.set_target(out.target, Mode::kDoorTraversal)) {
        door_.reset();
        bypass_lateral_ = false;
      }
      break;
  }
}

void UavRuntime::set_task_state(std::uint32_t task, TaskState s) {
  if (active_task_ && *active_task_ == task && active_state_ && *active_state_ == s) return;
  if (active_task_ && *active_task_ == task) active_state_ = s;
  outbox_.push_back(protocol::TaskStatus{task, s});
}

void UavRuntime::emit_event(EventCode code, const std::string& detail) {
  outbox_.push_back(protocol::Event{static_cast<std::uint8_t>(code), detail});
}

void UavRuntime::handle_task(const protocol::Task& task, double now) {
  auto start_task = [&](std::uint32_t id) {
    if (active_task_ && *active_task_ != id && active_state_ &&
        (*active_state_ == TaskState::kAccepted || *active_state_ == TaskState::kActive ||
         *active_state_ == TaskState::kBlocked)) {
      outbox_.push_back(protocol::TaskStatus{*active_task_, TaskState::kAborted});
    }
    active_task_ = id;
    active_state_.reset();
  };
  auto reject = [&](const char* why) {
    outbox_.push_back(protocol::TaskStatus{task.task_id, TaskState::kAborted});
    emit_event(EventCode::kAborted, why);
  };

  switch (task.kind) {
    case TaskKind::kGoto:
    case TaskKind::kCarrotUpdate: {
      const Mode mode = task.kind == TaskKind::kGoto ? Mode::kWaypoint : Mode::kVelocityCarrot;
      const bool repeat = active_task_ && *active_task_ == task.task_id;
      if (repeat && active_state_ && *active_state_ != TaskState::kAborted) {
        // Dispatcher re-send: keep the controller state and repeat the status.
        if (*active_state_ != TaskState::kReached) controller_.set_target(pose_of(task.pose), mode);
        outbox_.push_back(protocol::TaskStatus{task.task_id, *active_state_});
        return;
      }
      if (!controller_.clearance()) return reject("no autonomy clearance");
      door_.reset();
      bypass_lateral_ = false;
      start_task(task.task_id);
      controller_.set_target(pose_of(task.pose), mode);
      set_task_state(task.task_id, TaskState::kAccepted);
      set_task_state(task.task_id, TaskState::kActive);
      return;
    }
    case TaskKind::kArmDoorTraversal: {
      if (active_task_ && *active_task_ == task.task_id && active_state_) {
        outbox_.push_back(protocol::TaskStatus{task.task_id, *active_state_});
        return;
      }
      if (!controller_.clearance()) return reject("no autonomy clearance");
      if (!filter_) return reject("no state estimate yet");
      start_task(task.task_id);
      door_ = door::arm_traversal(now);
      // Hold position until the first scan proposes a target.
      controller_.set_target(filter_->estimate_at(now).pose, Mode::kDoorTraversal);
      set_task_state(task.task_id, TaskState::kAccepted);
      set_task_state(task.task_id, TaskState::kActive);
      return;
    }
    case TaskKind::kAbort: {
      if (active_task_ && active_state_ && *active_state_ != TaskState::kReached &&
          *active_state_ != TaskState::kAborted) {
        set_task_state(*active_task_, TaskState::kAborted);
      }
      door_.reset();
      bypass_lateral_ = false;
      controller_.set_idle();
      outbox_.push_back(protocol::TaskStatus{task.task_id, TaskState::kReached});
      emit_event(EventCode::kAborted, "operator abort");
      return;
    }
    case TaskKind::kSetGimbal: {
      gimbal_.pitch = std::clamp(static_cast<double>(task.gimbal[0]), control::kGimbalPitchMin,
                                 control::kGimbalPitchMax);
      gimbal_.yaw = geometry::wrap_angle(task.gimbal[1]);
      gimbal_.mode = control::GimbalMode::kCommanded;
      outbox_.push_back(protocol::TaskStatus{task.task_id, TaskState::kReached});
      return;
    }
    case TaskKind::kHold: {
      if (!filter_) return reject("no state estimate yet");
      if (!controller_.clearance()) return reject("no autonomy clearance");
      if (active_task_ && active_state_ && *active_state_ != TaskState::kReached &&
          *active_state_ != TaskState::kAborted) {
        set_task_state(*active_task_, TaskState::kAborted);
      }
      door_.reset();
      bypass_lateral_ = false;
      controller_.set_target(filter_->estimate_at(now).pose, Mode::kPositionHold);
      outbox_.push_back(protocol::TaskStatus{task.task_id, TaskState::kReached});
      return;
    }
  }
}

void UavRuntime::on_message(const protocol::Message& m, double now) {
  if (const auto* task = std::get_if<protocol::Task>(&m)) {
    handle_task(*task, now);
  } else if (std::holds_alternative<protocol::Heartbeat>(m)) {
    outbox_.push_back(protocol::Heartbeat{});
  }
}

control::ControlOutput UavRuntime::tick(double now) {
  control::ControlOutput out;
  if (!filter_) return out;
  for (const auto& e : adapter_.drain(now - config_.telemetry_latency)) filter_->process(e);
  const auto est = filter_->estimate_at(filter_->state().last_update);

  std::vector<geometry::Vec2> points;
  for (const auto& [t, pts] : scan_points_) {
    if (t < now - config_.scan_window - 1e-9) continue;
    points.insert(points.end(), pts.begin(), pts.end());
  }
  const geometry::Vec2 center = controller_.predicted_pose(est, now).position.head<2>();
  image_ = avoidance::image_from_points(points, center, config_.elevation_bins, config_.scan_window);

  const Mode mode_before = controller_.mode();
  out = controller_.tick(control::TickInput{now, est, &*image_, bypass_lateral_});
  if (out.avoidance) last_avoidance_ = out.avoidance;

  bool blocked = false;
  for (const auto n : out.notifications) {
    switch (n) {
      case Notification::kTargetReached:
        if (active_task_ && mode_before == Mode::kWaypoint && !door_) {
          if (!active_state_ || *active_state_ != TaskState::kReached) {
            emit_event(EventCode::kTargetReached, "target reached");
          }
          set_task_state(*active_task_, TaskState::kReached);
        }
        break;
      case Notification::kBlocked:
        blocked = true;
        if (active_task_ && (!active_state_ || *active_state_ != TaskState::kBlocked)) {
          emit_event(EventCode::kBlocked, "avoidance found no admissible direction");
          set_task_state(*active_task_, TaskState::kBlocked);
        }
        break;
      case Notification::kClearanceLost:
        emit_event(EventCode::kClearanceLost, "autonomy clearance revoked");
        if (active_task_) set_task_state(*active_task_, TaskState::kAborted);
        door_.reset();
        bypass_lateral_ = false;
        break;
      case Notification::kReactivated:
        emit_event(EventCode::kReactivated, "drifted out of hold zone");
        break;
      case Notification::kAborted:
        if (active_task_) set_task_state(*active_task_, TaskState::kAborted);
        break;
    }
  }
  if (!blocked && out.kind == control::ControlOutput::Kind::kVelocity && active_task_ && active_state_ &&
      *active_state_ == TaskState::kBlocked) {
    set_task_state(*active_task_, TaskState::kActive);
  }
  report(now);
  return out;
}

void UavRuntime::report(double now) {
  auto telemetry_at = [&](double t, double stamp) {
    const auto e = filter_->estimate_at(t);
    protocol::Telemetry m;
    m.pose = {static_cast<float>(e.pose.position.x()), static_cast<float>(e.pose.position.y()),
              static_cast<float>(e.pose.position.z()), static_cast<float>(e.pose.yaw)};
    m.velocity = {static_cast<float>(e.velocity.x()), static_cast<float>(e.velocity.y()),
                  static_cast<float>(e.velocity.z())};
    m.mode = static_cast<std::uint8_t>(controller_.mode());
    m.timestamp = stamp;
    return m;
  };

  if (pending_report_scan_ && now - last_scan_report_ >= config_.scan_report_period - 1e-9) {
    const auto& s = *pending_report_scan_;
    // The pose paired with the scan; stamped now so per-session ordering holds.
    outbox_.push_back(telemetry_at(s.timestamp, now));
    for (std::uint16_t off = 0; off < sim::kScanBins; off += config_.scan_chunk_bins) {
      protocol::ScanChunk c;
      c.timestamp = s.timestamp;
      c.offset = off;
      const int end = std::min<int>(sim::kScanBins, off + config_.scan_chunk_bins);
      for (int i = off; i < end; ++i) {
        c.distances.push_back(static_cast<float>(s.distances[i]));
        c.valid.push_back(s.valid[i]);
      }
      outbox_.push_back(std::move(c));
    }
    pending_report_scan_.reset();
    last_scan_report_ = now;
    last_telemetry_report_ = now;
    return;
  }
  if (now - last_telemetry_report_ >= config_.telemetry_report_period - 1e-9) {
    outbox_.push_back(telemetry_at(now, now));
    last_telemetry_report_ = now;
  }
}

std::vector<protocol::Message> UavRuntime::take_outbox() {
  std::vector<protocol::Message> out;
  out.swap(outbox_);
  return out;
}

}  // namespace fleetsim::runtime
