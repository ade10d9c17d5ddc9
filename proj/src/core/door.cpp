#include "door.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace fleetsim::door {

using geometry::kPi;
using geometry::rotate2;
using geometry::wrap_angle;

namespace {

constexpr double kDeg = kPi / 180.0;

Vec2 bin_point(const RangeScan& scan, int bin) {
  const double a = bin * kDeg;
  return scan.distances[bin] * Vec2(std::cos(a), std::sin(a));
}

int wrap_bin(int b) { return ((b % sim::kScanBins) + sim::kScanBins) % sim::kScanBins; }

double angle_of(const Vec2& v) { return std::atan2(v.y(), v.x()); }

}  // namespace

double DoorCandidate::inward_angle() const { return angle_of(inward_normal()); }

DoorCandidate make_candidate(const Vec2& left, const Vec2& right, const Vec2& viewpoint) {
  DoorCandidate c;
  c.left_edge = left;
  c.right_edge = right;
  const Vec2 e = left - right;
  c.width = e.norm();
  Vec2 n(-e.y(), e.x());
  n.normalize();
  const Vec2 mid = c.midpoint();
  if (n.dot(viewpoint - mid) < 0.0) n = -n;
  c.outward_normal = n;
  const Vec2 radial = mid - viewpoint;
  const double rn = radial.norm();
  c.normal_radial_deviation =
      rn > 1e-12 ? std::acos(std::clamp(c.inward_normal().dot(radial / rn), -1.0, 1.0)) : 0.0;
  return c;
}

std::vector<DoorCandidate> detect_doors(const RangeScan& scan, double heading, const DoorParams& params) {
  const int center = static_cast<int>(std::lround(heading / kDeg));
  const int half = static_cast<int>(std::floor(params.search_half_width / kDeg + 1e-9));

  // Offsets (relative to the sector start) of adjacent-bin jumps.
  struct Jump {
    int offset;  // pair (offset, offset + 1)
  };
  std::vector<Jump> rising, falling;
  for (int k = -half; k < half; ++k) {
    const int i = wrap_bin(center + k);
    const int j = wrap_bin(center + k + 1);
    if (!scan.valid[i] || !scan.valid[j]) continue;
    const double d = scan.distances[j] - scan.distances[i];
    if (d > params.jump_threshold) rising.push_back({k});
    if (d < -params.jump_threshold) falling.push_back({k});
  }

  std::vector<DoorCandidate> out;
  const Vec2 origin = Vec2::Zero();
  for (const auto& r : rising) {
    for (const auto& f : falling) {
      if (f.offset <= r.offset) continue;
      const int near_right = wrap_bin(center + r.offset);
      const int near_left = wrap_bin(center + f.offset + 1);
      bool interior_ok = true;
      for (int k = r.offset + 1; k <= f.offset; ++k) interior_ok &= scan.valid[wrap_bin(center + k)];
      if (!interior_ok) continue;

      DoorCandidate c = make_candidate(bin_point(scan, near_left), bin_point(scan, near_right), origin);
      if (c.normal_radial_deviation > params.max_normal_deviation) continue;
      if (c.width < params.min_width) continue;

      const Vec2 inward = c.inward_normal();
      const double plane = c.midpoint().dot(inward);
      double behind = std::numeric_limits<double>::infinity();
      for (int k = r.offset + 1; k <= f.offset; ++k) {
        behind = std::min(behind, bin_point(scan, wrap_bin(center + k)).dot(inward) - plane);
      }
      c.clearance_behind = behind;
      if (behind < params.min_clearance_behind) continue;
      out.push_back(c);
    }
  }
  std::stable_sort(out.begin(), out.end(), [&](const DoorCandidate& a, const DoorCandidate& b) {
    const double da = std::abs(wrap_angle(a.inward_angle() - heading));
    const double db = std::abs(wrap_angle(b.inward_angle() - heading));
    if (da != db) return da < db;
    return a.width > b.width;
  });
  return out;
}

std::optional<DoorCandidate> select_door(std::span<const DoorCandidate> candidates, double heading) {
  std::optional<DoorCandidate> best;
  double best_off = 0.0;
  for (const auto& c : candidates) {
    const double off = std::abs(wrap_angle(c.inward_angle() - heading));
    if (!best || off < best_off) {
      best = c;
      best_off = off;
    }
  }
  return best;
}

Pose pre_traversal_pose(const DoorCandidate& door, double standoff, double height) {
  if (!(standoff > 0.0)) throw Error(ErrorCode::kInvalidArgument, "pre_traversal_pose: standoff must be positive");
  const Vec2 p = door.midpoint() + standoff * door.outward_normal;
  return Pose::make(p.x(), p.y(), height, door.inward_angle());
}

DoorCandidate transform_candidate(const DoorCandidate& c, const Pose& frame) {
  DoorCandidate out = c;
  const Vec2 t = frame.position.head<2>();
  out.left_edge = rotate2(c.left_edge, frame.yaw) + t;
  out.right_edge = rotate2(c.right_edge, frame.yaw) + t;
  out.outward_normal = rotate2(c.outward_normal, frame.yaw);
  return out;
}

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::kApproaching: return "approaching";
    case Phase::kFrozenTraversing: return "frozen_traversing";
    case Phase::kDone: return "done";
    case Phase::kAborted: return "aborted";
  }
  return "?";
}

TraversalState arm_traversal(double now) {
  TraversalState ts;
  ts.last_detection_time = now;
  return ts;
}

namespace {

Vec3 clamp_step(const Vec3& delta, double max_len) {
  const double n = delta.norm();
  return n > max_len ? delta * (max_len / n) : delta;
}

}  // namespace

std::pair<TraversalOutput, TraversalState> traversal_tick(const TraversalState& ts, const RangeScan& scan,
                                                          const Pose& est, double now,
                                                          const DoorParams& params) {
  TraversalState next = ts;
  TraversalOutput out;
  out.target = ts.last_target.value_or(est);

  switch (ts.phase) {
    case Phase::kApproaching: {
      const auto candidates = detect_doors(scan, 0.0, params);
      const auto sel = select_door(candidates, 0.0);
      if (!sel) {
        if (now - ts.last_detection_time > params.lost_timeout) next.phase = Phase::kAborted;
        out.target = ts.last_target.value_or(est);
        break;
      }
      const DoorCandidate local = transform_candidate(*sel, est);
      out.detection = local;
      next.last_detection_time = now;
      next.pre_pose = pre_traversal_pose(local, params.standoff, est.position.z());

      const Vec3 to_pre = next.pre_pose.position - est.position;
      const bool stable = to_pre.norm() < params.stable_tolerance &&
                          std::abs(wrap_angle(next.pre_pose.yaw - est.yaw)) < params.stable_yaw_tolerance;
      next.stable_count = stable ? ts.stable_count + 1 : 0;

      if (next.stable_count >= params.stable_ticks) {
        next.phase = Phase::kFrozenTraversing;
        next.door_global = local;
        const Vec2 post = local.midpoint() + params.post_offset * local.inward_normal();
        next.post_pose = Pose::make(post.x(), post.y(), est.position.z(), local.inward_angle());
        // Fall through to the first traversal step below.
      } else {
        out.target = Pose{est.position + clamp_step(to_pre, params.step_size), next.pre_pose.yaw};
        break;
      }
      [[fallthrough]];
    }
    case Phase::kFrozenTraversing: {
      const DoorCandidate& door = *next.door_global;
      const Vec2 inward = door.inward_normal();
      const Vec2 mid = door.midpoint();
      const Vec3 to_post = next.post_pose.position - est.position;
      if (to_post.head<2>().norm() < params.arrival_tolerance) {
        next.phase = Phase::kDone;
        out.target = next.post_pose;
        break;
      }
      const double along = (est.position.head<2>() - mid).dot(inward);
      const double s = std::min(along + params.step_size, params.post_offset);
      const Vec2 p = mid + s * inward;
      out.target = Pose{Vec3(p.x(), p.y(), next.post_pose.position.z()), next.post_pose.yaw};
      out.bypass_lateral_avoidance = true;
      break;
    }
    case Phase::kDone:
    case Phase::kAborted:
      out.target = ts.last_target.value_or(est);
      break;
  }
  out.increment = out.target.position - est.position;
  next.last_target = out.target;
  return {out, next};
}

}  // namespace fleetsim::door
