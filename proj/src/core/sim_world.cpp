#include "sim_world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "error.hpp"

namespace fleetsim::sim {

using geometry::kPi;
using geometry::rotate_yaw;
using geometry::wrap_angle;

namespace {

constexpr double kDeg = kPi / 180.0;
constexpr double kInf = std::numeric_limits<double>::infinity();

std::int64_t counts(double value, double step) {
  return static_cast<std::int64_t>(std::llround(value / step));
}

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

// Ray o + t*d (|d| = 1) against segment ab; returns t or inf.
double ray_segment(const Vec2& o, const Vec2& d, const Vec2& a, const Vec2& b) {
  const Vec2 e = b - a;
  const double denom = d.x() * e.y() - d.y() * e.x();
  if (std::abs(denom) < 1e-12) return kInf;
  const Vec2 ao = a - o;
  const double t = (ao.x() * e.y() - ao.y() * e.x()) / denom;
  const double u = (ao.x() * d.y() - ao.y() * d.x()) / denom;
  if (t < 0.0 || u < 0.0 || u > 1.0) return kInf;
  return t;
}

double ray_circle(const Vec2& o, const Vec2& d, const Vec2& c, double r) {
  const Vec2 oc = o - c;
  const double b = oc.dot(d);
  const double cc = oc.squaredNorm() - r * r;
  if (cc <= 0.0) return 0.0;  // inside
  const double disc = b * b - cc;
  if (disc < 0.0) return kInf;
  const double t = -b - std::sqrt(disc);
  return t >= 0.0 ? t : kInf;
}

}  // namespace

Vec3 QuantizedTelemetry::velocity() const {
  return Vec3(velocity_counts[0] * velocity_step, velocity_counts[1] * velocity_step,
              velocity_counts[2] * velocity_step);
}

double QuantizedTelemetry::yaw_degrees() const { return yaw_counts * yaw_step_deg; }

double QuantizedTelemetry::yaw() const { return yaw_degrees() * kDeg; }

std::optional<double> QuantizedTelemetry::altitude() const {
  if (!altitude_counts) return std::nullopt;
  return *altitude_counts * altitude_step;
}

std::optional<Vec3> QuantizedTelemetry::gnss_position() const {
  if (!gnss_counts) return std::nullopt;
  return Vec3((*gnss_counts)[0] * gnss_step, (*gnss_counts)[1] * gnss_step,
              (*gnss_counts)[2] * gnss_step);
}

bool QuantizedTelemetry::same_reading(const QuantizedTelemetry& o) const {
  return velocity_counts == o.velocity_counts && yaw_counts == o.yaw_counts &&
         altitude_counts == o.altitude_counts && gnss_counts == o.gnss_counts;
}

World::World(Scenario scenario, SimConfig config)
    : scenario_(std::move(scenario)), config_(config), rng_(scenario_.seed) {
  for (const auto& spec : scenario_.uavs) {
    UavTruth u;
    u.pose = spec.start;
    u.model = spec.model;
    u.gnss_available = spec.gnss;
    u.local_frame = Pose::make(spec.start.position.x(), spec.start.position.y(), 0.0, spec.start.yaw);
    uavs_.push_back(std::move(u));
  }
}

void World::check(std::size_t uav) const {
  if (uav >= uavs_.size()) throw Error(ErrorCode::kUnknownUav, "unknown uav index");
}

const UavTruth& World::uav(std::size_t i) const {
  check(i);
  return uavs_[i];
}

UavTruth& World::mutable_uav(std::size_t i) {
  check(i);
  return uavs_[i];
}

bool World::collides(const Vec3& p) const {
  if (p.z() <= 0.0) return true;
  return clearance_at(p) < config_.uav_radius;
}

double World::clearance_at(const Vec3& p) const {
  double best = kInf;
  const Vec2 q = p.head<2>();
  for (const auto& w : scenario_.walls) {
    if (p.z() > w.height) continue;
    best = std::min(best, point_segment_distance(q, w.a, w.b));
  }
  for (const auto& c : scenario_.cylinders) {
    if (p.z() > c.height) continue;
    best = std::min(best, (q - c.center).norm() - c.radius);
  }
  return best;
}

double World::raycast(const Vec2& origin, double z, double azimuth, double max_range) const {
  const Vec2 d(std::cos(azimuth), std::sin(azimuth));
  double t = max_range;
  for (const auto& w : scenario_.walls) {
    if (z > w.height) continue;
    t = std::min(t, ray_segment(origin, d, w.a, w.b));
  }
  for (const auto& c : scenario_.cylinders) {
    if (z > c.height) continue;
    t = std::min(t, ray_circle(origin, d, c.center, c.radius));
  }
  return t;
}

void World::step(double dt) {
  if (!(dt > 0.0) || dt > 0.1 + 1e-12) {
    throw Error(ErrorCode::kInvalidArgument, "step: dt must be in (0, 0.1]");
  }
  clock_ += dt;
  ++ticks_;
  const double alpha = 1.0 - std::exp(-dt / config_.velocity_time_constant);
  std::normal_distribution<double> unit(0.0, 1.0);

  for (auto& u : uavs_) {
    if (u.crashed) continue;
    while (!u.pending_commands.empty() && u.pending_commands.front().apply_time <= clock_ + 1e-12) {
      const PendingCommand c = u.pending_commands.front();
      u.pending_commands.pop_front();
      switch (c.kind) {
        case CommandKind::kVelocity:
          u.commanded_velocity = rotate_yaw(c.linear, u.local_frame.yaw);
          u.commanded_yaw_rate = c.yaw_rate;
          u.holding = false;
          break;
        case CommandKind::kHold:
        case CommandKind::kRelease:
          u.commanded_velocity.setZero();
          u.commanded_yaw_rate = 0.0;
          u.holding = true;
          break;
      }
    }

    u.velocity += (u.commanded_velocity - u.velocity) * alpha;
    const double speed = u.velocity.norm();
    if (speed > config_.max_speed) u.velocity *= config_.max_speed / speed;
    u.yaw_rate += (u.commanded_yaw_rate - u.yaw_rate) * alpha;

    Vec3 next = u.pose.position + u.velocity * dt;
    if (u.holding && config_.hold_drift_sigma > 0.0) {
      const double s = config_.hold_drift_sigma * std::sqrt(dt);
      next += Vec3(unit(rng_), unit(rng_), unit(rng_)) * s;
    }
    if (collides(next)) {
      u.crashed = true;
      u.velocity.setZero();
      u.yaw_rate = 0.0;
      continue;
    }
    u.pose.position = next;
    u.pose.yaw = wrap_angle(u.pose.yaw + u.yaw_rate * dt);
  }
}

Admission World::apply_virtual_stick(std::size_t uav, const VelocityCommand& cmd) {
  check(uav);
  auto& u = uavs_[uav];
  if (cmd.timestamp - u.last_accepted_command < config_.command_min_interval - 1e-9) {
    return Admission::kDropped;
  }
  u.last_accepted_command = cmd.timestamp;
  PendingCommand p;
  p.kind = CommandKind::kVelocity;
  p.apply_time = std::max(cmd.timestamp, clock_) + scenario_.latencies.actuation_s;
  for (int i = 0; i < 3; ++i) {
    p.linear[i] = static_cast<double>(counts(cmd.linear[i], config_.velocity_step)) * config_.velocity_step;
  }
  p.yaw_rate = cmd.yaw_rate;
  // Sorted by apply time; equal latency keeps FIFO order.
  auto it = std::upper_bound(u.pending_commands.begin(), u.pending_commands.end(), p.apply_time,
                             [](double t, const PendingCommand& c) { return t < c.apply_time; });
  u.pending_commands.insert(it, p);
  return Admission::kAccepted;
}

void World::request_position_hold(std::size_t uav, double timestamp) {
  check(uav);
  auto& u = uavs_[uav];
  PendingCommand p;
  p.kind = CommandKind::kHold;
  p.apply_time = std::max(timestamp, clock_) + scenario_.latencies.actuation_s;
  auto it = std::upper_bound(u.pending_commands.begin(), u.pending_commands.end(), p.apply_time,
                             [](double t, const PendingCommand& c) { return t < c.apply_time; });
  u.pending_commands.insert(it, p);
}

void World::release_control(std::size_t uav, double timestamp) {
  check(uav);
  auto& u = uavs_[uav];
  // Pilot input bypasses the VirtualStick pipeline: queued commands are discarded.
  u.pending_commands.clear();
  PendingCommand p;
  p.kind = CommandKind::kRelease;
  p.apply_time = std::max(timestamp, clock_);
  u.pending_commands.push_back(p);
}

QuantizedTelemetry World::quantize(const UavTruth& u) const {
  QuantizedTelemetry q;
  q.velocity_step = config_.velocity_step;
  q.yaw_step_deg = config_.yaw_step_deg;
  q.altitude_step = config_.altitude_step;
  q.gnss_step = config_.gnss_step;
  const Vec3 v_local = rotate_yaw(u.velocity, -u.local_frame.yaw);
  for (int i = 0; i < 3; ++i) q.velocity_counts[i] = counts(v_local[i], config_.velocity_step);
  const double yaw_deg = wrap_angle(u.pose.yaw - u.local_frame.yaw) / kDeg;
  std::int64_t yc = counts(yaw_deg, config_.yaw_step_deg);
  const auto half_turn = counts(180.0, config_.yaw_step_deg);
  if (yc <= -half_turn) yc += 2 * half_turn;
  q.yaw_counts = yc;
  q.altitude_counts = counts(u.pose.position.z(), config_.altitude_step);
  if (u.gnss_available) {
    q.gnss_counts = std::array<std::int64_t, 3>{counts(u.pose.position.x(), config_.gnss_step),
                                                counts(u.pose.position.y(), config_.gnss_step),
                                                counts(u.pose.position.z(), config_.gnss_step)};
  }
  q.timestamp = clock_;
  return q;
}

std::optional<QuantizedTelemetry> World::sample_telemetry(std::size_t uav) {
  check(uav);
  auto& u = uavs_[uav];
  QuantizedTelemetry q = quantize(u);
  if (!u.last_generated || !u.last_generated->same_reading(q)) {
    u.last_generated = q;
    u.telemetry_in_flight.emplace_back(clock_ + scenario_.latencies.telemetry_s, q);
  }
  if (!u.telemetry_in_flight.empty() && u.telemetry_in_flight.front().first <= clock_ + 1e-12) {
    QuantizedTelemetry out = u.telemetry_in_flight.front().second;
    u.telemetry_in_flight.pop_front();
    return out;
  }
  return std::nullopt;
}

bool World::bin_valid_for_model(UavModel model, int bin) {
  bin = ((bin % kScanBins) + kScanBins) % kScanBins;
  switch (model) {
    case UavModel::kMini3:
      // Forward and backward stereo pairs only.
      return bin <= 53 || bin >= 307 || (bin >= 135 && bin <= 225);
    case UavModel::kMini4:
    case UavModel::kMavic3T:
      return true;
  }
  return false;
}

RangeScan World::sample_range_scan(std::size_t uav) {
  check(uav);
  const auto& u = uavs_[uav];
  RangeScan scan;
  scan.max_range = config_.max_range;
  scan.timestamp = clock_;
  scan.truth_tag = (static_cast<std::uint64_t>(uav) << 48) ^ ticks_;
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const Vec2 origin = u.pose.position.head<2>();
  const double floor = config_.near_range_limit;
  for (int i = 0; i < kScanBins; ++i) {
    scan.valid[i] = false;
    scan.distances[i] = config_.max_range;
    if (!bin_valid_for_model(u.model, i)) continue;
    const double az = u.pose.yaw + i * kDeg;
    const double truth = raycast(origin, u.pose.position.z(), az, config_.max_range);
    if (truth >= config_.max_range) {
      scan.valid[i] = true;
      continue;
    }
    if (truth < floor) {
      if (coin(rng_) >= config_.near_detection_probability) continue;
      const double over = std::abs(unit(rng_)) * config_.near_overestimate_sigma;
      scan.distances[i] = std::min(config_.max_range, std::max(floor, truth + over));
      scan.valid[i] = true;
      continue;
    }
    const double clamp = config_.range_noise_clamp_sigmas;
    const double n = std::clamp(unit(rng_), -clamp, clamp) * config_.range_noise_sigma;
    scan.distances[i] = std::clamp(truth + n, floor, config_.max_range);
    scan.valid[i] = true;
  }
  return scan;
}

std::vector<Landmark> World::landmarks(double z) const {
  std::vector<Landmark> out;
  std::uint32_t id = 0;
  for (const auto& w : scenario_.walls) {
    if (z <= w.height) {
      out.push_back({id, Vec3(w.a.x(), w.a.y(), z)});
      out.push_back({id + 1, Vec3(w.b.x(), w.b.y(), z)});
    }
    id += 2;
  }
  for (const auto& c : scenario_.cylinders) {
    if (z <= c.height) out.push_back({id, Vec3(c.center.x(), c.center.y(), z)});
    ++id;
  }
  return out;
}

std::vector<Landmark> World::visible_landmarks(std::size_t uav) const {
  check(uav);
  const auto& u = uavs_[uav];
  const Vec2 o = u.pose.position.head<2>();
  std::vector<Landmark> out;
  for (const auto& lm : landmarks(u.pose.position.z())) {
    const Vec2 d = lm.position.head<2>() - o;
    const double dist = d.norm();
    if (dist < 1e-6 || dist > config_.max_range) continue;
    const double hit = raycast(o, u.pose.position.z(), std::atan2(d.y(), d.x()), config_.max_range);
    // Cylinder centres sit behind their own surface.
    double surface = dist;
    for (const auto& c : scenario_.cylinders) {
      if ((c.center - lm.position.head<2>()).norm() < 1e-9) surface = dist - c.radius;
    }
    if (hit + 0.05 >= surface) out.push_back(lm);
  }
  return out;
}

}  // namespace fleetsim::sim
