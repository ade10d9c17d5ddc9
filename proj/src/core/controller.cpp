#include "controller.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace fleetsim::control {

using geometry::wrap_angle;

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::kIdle: return "idle";
    case Mode::kVelocityCarrot: return "velocity_carrot";
    case Mode::kWaypoint: return "waypoint";
    case Mode::kDoorTraversal: return "door_traversal";
    case Mode::kPositionHold: return "position_hold";
  }
  return "?";
}

const char* notification_name(Notification n) {
  switch (n) {
    case Notification::kTargetReached: return "target_reached";
    case Notification::kBlocked: return "blocked";
    case Notification::kAborted: return "aborted";
    case Notification::kClearanceLost: return "clearance_lost";
    case Notification::kReactivated: return "reactivated";
  }
  return "?";
}

VelocityCommand velocity_to_target(const Pose& current, const Pose& target, double v_max, double gain,
                                   double yaw_gain, double yaw_rate_max) {
  if (!(v_max > 0.0)) throw Error(ErrorCode::kInvalidArgument, "velocity_to_target: v_max must be positive");
  VelocityCommand c;
  c.linear = gain * (target.position - current.position);
  const double n = c.linear.norm();
  if (n > v_max) c.linear *= v_max / n;
  c.yaw_rate = std::clamp(yaw_gain * wrap_angle(target.yaw - current.yaw), -yaw_rate_max, yaw_rate_max);
  return c;
}

FlightController::FlightController(ControllerParams params) : params_(params) {}

bool FlightController::set_target(const Pose& target, Mode mode) {
  if (mode == Mode::kIdle) {
    set_idle();
    return true;
  }
  if (!clearance_) return false;
  const bool same = target_ && (target_->position - target.position).norm() < 1e-9 &&
                    std::abs(wrap_angle(target_->yaw - target.yaw)) < 1e-9;
  target_ = target;
  if (mode == Mode::kPositionHold) {
    // Explicit hold request: the vehicle is told to hold once, at the next slot.
    if (mode_ != Mode::kPositionHold) hold_pending_ = true;
    mode_ = Mode::kPositionHold;
    return true;
  }
  hold_pending_ = false;
  resume_mode_ = mode;
  // A re-sent waypoint must not break an ongoing hold.
  if (mode_ == Mode::kPositionHold && same && mode == Mode::kWaypoint) return true;
  mode_ = mode;
  return true;
}

void FlightController::set_idle() {
  if (mode_ != Mode::kIdle) release_pending_ = true;
  mode_ = Mode::kIdle;
  hold_pending_ = false;
  target_.reset();
}

bool FlightController::may_emit(double now) const {
  return now - last_emit_ >= params_.command_period - 1e-9;
}

void FlightController::remember(double now, const Vec3& linear, double yaw_rate) {
  last_emit_ = now;
  Vec3 rounded;
  for (int i = 0; i < 3; ++i) {
    rounded[i] = std::round(linear[i] / params_.velocity_step) * params_.velocity_step;
  }
  sent_.push_back({now, rounded, yaw_rate});
  // Only the command in effect at the oldest plausible estimate time matters.
  const double keep = now - params_.actuation_latency - 2.0;
  while (sent_.size() > 1 && sent_[1].time < keep) sent_.pop_front();
}

Pose FlightController::predicted_pose(const Estimate& est, double now) const {
  const double L = params_.actuation_latency;
  Pose p = est.pose;
  if (L <= 0.0) {
    p.position += est.velocity * std::max(0.0, now - est.timestamp);
    return p;
  }
  const double tau = params_.time_constant;
  const double t0 = est.timestamp;
  const double t_end = now + L;

  Vec3 v = est.velocity;
  Vec3 c = Vec3::Zero();
  double c_yaw = 0.0;
  std::size_t i = 0;
  while (i < sent_.size() && sent_[i].time + L <= t0) {
    c = sent_[i].linear;
    c_yaw = sent_[i].yaw_rate;
    ++i;
  }
  double t = t0;
  auto advance = [&](double h) {
    if (h <= 0.0) return;
    const double e = std::exp(-h / tau);
    p.position += c * h + (v - c) * tau * (1.0 - e);
    v = c + (v - c) * e;
    p.yaw = wrap_angle(p.yaw + c_yaw * h);
  };
  for (; i < sent_.size(); ++i) {
    const double a = std::min(sent_[i].time + L, t_end);
    advance(a - t);
    t = std::max(t, a);
    c = sent_[i].linear;
    c_yaw = sent_[i].yaw_rate;
  }
  advance(t_end - t);
  return p;
}

ControlOutput FlightController::tick(const TickInput& in) {
  ControlOutput out;
  const double now = in.now;

  if (!clearance_ && mode_ != Mode::kIdle) {
    out.notifications.push_back(Notification::kClearanceLost);
    set_idle();
  }
  if (mode_ == Mode::kIdle) {
    if (release_pending_) {
      release_pending_ = false;
      out.kind = ControlOutput::Kind::kRelease;
      out.command.timestamp = now;
      sent_.clear();
      sent_.push_back({now - params_.actuation_latency, Vec3::Zero(), 0.0});
    }
    return out;
  }
  if (!target_) return out;

  const Pose& target = *target_;
  const Vec3 est_now = in.estimate.pose.position + in.estimate.velocity * std::max(0.0, now - in.estimate.timestamp);
  auto within = [&](const Vec3& p, double thr) {
    return ((target.position - p).array().abs() <= thr).all();
  };

  if (mode_ == Mode::kPositionHold && hold_pending_) {
    if (!may_emit(now)) return out;
    hold_pending_ = false;
    out.kind = ControlOutput::Kind::kHold;
    out.command.timestamp = now;
    remember(now, Vec3::Zero(), 0.0);
    return out;
  }
  if (mode_ == Mode::kPositionHold) {
    if (within(est_now, params_.reactivation_threshold)) return out;
    mode_ = resume_mode_;
    out.notifications.push_back(Notification::kReactivated);
  }

  const Pose pred = predicted_pose(in.estimate, now);
  if (mode_ == Mode::kWaypoint && within(est_now, params_.hold_threshold) &&
      within(pred.position, params_.hold_threshold) &&
      std::abs(wrap_angle(target.yaw - in.estimate.pose.yaw)) <= params_.yaw_hold_threshold) {
    if (!may_emit(now)) return out;
    out.kind = ControlOutput::Kind::kHold;
    out.command.timestamp = now;
    out.notifications.push_back(Notification::kTargetReached);
    remember(now, Vec3::Zero(), 0.0);
    mode_ = Mode::kPositionHold;
    resume_mode_ = Mode::kWaypoint;
    return out;
  }
  if (!may_emit(now)) return out;

  VelocityCommand cmd = velocity_to_target(pred, target, params_.v_max, params_.gain, params_.yaw_gain,
                                           params_.yaw_rate_max);
  for (int a = 0; a < 3; ++a) {
    const double err = target.position[a] - pred.position[a];
    if (std::abs(err) > params_.hold_threshold && std::abs(cmd.linear[a]) < params_.min_speed) {
      cmd.linear[a] = std::copysign(params_.min_speed, err);
    }
  }

  bool blocked = false;
  if (in.image != nullptr && cmd.linear.norm() > 0.0) {
    if (!in.bypass_lateral_avoidance) {
      avoidance::AvoidanceParams ap = params_.avoidance;
      ap.horizon = std::min((target.position - est_now).norm() + params_.horizon_margin, params_.horizon_cap);
      const auto adj = avoidance::adjust(cmd.linear, *in.image, ap);
      out.avoidance = adj;
      blocked = adj.stop;
      cmd.linear = adj.velocity;
    } else {
      const auto& img = *in.image;
      const auto [az, el] = avoidance::project(cmd.linear, img);
      const int half = static_cast<int>(std::ceil(params_.emergency_half_angle / img.bin_width()));
      for (int k = -half; k <= half && !blocked; ++k) {
        blocked = img.grid.at(img.grid.wrap_az(az + k), img.center_row()) < params_.avoidance.minimum_distance;
      }
      (void)el;
    }
  }
  if (blocked) {
    cmd.linear.setZero();
    cmd.yaw_rate = 0.0;
    out.notifications.push_back(Notification::kBlocked);
  }

  cmd.timestamp = now;
  out.kind = ControlOutput::Kind::kVelocity;
  out.command = cmd;
  remember(now, cmd.linear, cmd.yaw_rate);
  return out;
}

GimbalState gimbal_track(const BoundingBox& bbox, const GimbalState& g, double dt, double gain) {
  if (bbox.empty()) return g;
  GimbalState n = g;
  n.mode = GimbalMode::kTracking;
  n.yaw = wrap_angle(g.yaw + gain * (bbox.cx() - 0.5) * dt);
  n.pitch = std::clamp(g.pitch - gain * (bbox.cy() - 0.5) * dt, kGimbalPitchMin, kGimbalPitchMax);
  return n;
}

SimPersonDetector::SimPersonDetector(Vec3 person, double hfov, double vfov, double person_height,
                                     double person_width)
    : person_(std::move(person)), hfov_(hfov), vfov_(vfov), height_(person_height), width_(person_width) {}

std::optional<BoundingBox> SimPersonDetector::detect(const Pose& uav_world, const GimbalState& gimbal) {
  const double yaw = uav_world.yaw - gimbal.yaw;
  const double cp = std::cos(gimbal.pitch), sp = std::sin(gimbal.pitch);
  const double tx = 2.0 * std::tan(hfov_ / 2.0), ty = 2.0 * std::tan(vfov_ / 2.0);

  BoundingBox box{1e300, 1e300, -1e300, -1e300};
  for (double up : {0.0, height_}) {
    for (double side : {-0.5 * width_, 0.5 * width_}) {
      const Vec3 d = geometry::rotate_yaw(person_ + Vec3(0, 0, up) - uav_world.position, -yaw) + Vec3(0, side, 0);
      const double forward = d.x() * cp + d.z() * sp;
      const double upward = -d.x() * sp + d.z() * cp;
      if (forward <= 1e-6) return std::nullopt;
      const double u = 0.5 - (d.y() / forward) / tx;
      const double v = 0.5 - (upward / forward) / ty;
      box.x0 = std::min(box.x0, u);
      box.x1 = std::max(box.x1, u);
      box.y0 = std::min(box.y0, v);
      box.y1 = std::max(box.y1, v);
    }
  }
  box.x0 = std::clamp(box.x0, 0.0, 1.0);
  box.x1 = std::clamp(box.x1, 0.0, 1.0);
  box.y0 = std::clamp(box.y0, 0.0, 1.0);
  box.y1 = std::clamp(box.y1, 0.0, 1.0);
  if (box.empty()) return std::nullopt;
  return box;
}

}  // namespace fleetsim::control
