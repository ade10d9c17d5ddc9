#pragma once

#include <optional>
#include <span>
#include <vector>

#include "geometry.hpp"
#include "sim_world.hpp"

namespace fleetsim::door {

using geometry::Pose;
using geometry::Vec2;
using geometry::Vec3;
using sim::RangeScan;

struct DoorParams {
  double jump_threshold = 0.8;
  double max_normal_deviation = 30.0 * geometry::kPi / 180.0;
  double min_width = 0.7;
  double min_clearance_behind = 1.0;
  double search_half_width = 60.0 * geometry::kPi / 180.0;
  double standoff = 1.0;
  double post_offset = 1.0;
  double step_size = 0.2;
  int stable_ticks = 5;
  double stable_tolerance = 0.10;
  double stable_yaw_tolerance = 10.0 * geometry::kPi / 180.0;
  double arrival_tolerance = 0.15;
  double lost_timeout = 3.0;
};

/// Opening between two door-frame points. "Left" is the edge at the larger
/// azimuth as seen from the scanner.
struct DoorCandidate {
  Vec2 left_edge = Vec2::Zero();
  Vec2 right_edge = Vec2::Zero();
  double width = 0.0;
  Vec2 outward_normal = Vec2::UnitX();  // toward the scanner's side
  double normal_radial_deviation = 0.0;
  double clearance_behind = 0.0;

  Vec2 midpoint() const { return 0.5 * (left_edge + right_edge); }
  Vec2 inward_normal() const { return -outward_normal; }
  double inward_angle() const;
};

/// Opening from two edge points seen from `viewpoint`; fills normal, width and deviation.
DoorCandidate make_candidate(const Vec2& left, const Vec2& right, const Vec2& viewpoint);

/// Jump-based opening search within the sector around `heading` (scan frame).
/// Sorted by how well the inward normal matches the heading.
std::vector<DoorCandidate> detect_doors(const RangeScan& scan, double heading, const DoorParams& params = {});

std::optional<DoorCandidate> select_door(std::span<const DoorCandidate> candidates, double heading);

Pose pre_traversal_pose(const DoorCandidate& door, double standoff, double height);

/// Re-expresses a candidate given in `frame` coordinates in the parent frame.
DoorCandidate transform_candidate(const DoorCandidate& c, const Pose& frame);

enum class Phase { kApproaching, kFrozenTraversing, kDone, kAborted };

const char* phase_name(Phase p);

struct TraversalState {
  Phase phase = Phase::kApproaching;
  std::optional<DoorCandidate> door_global;  // fixed once traversing
  Pose pre_pose;
  Pose post_pose;
  int stable_count = 0;
  double last_detection_time = 0.0;
  std::optional<Pose> last_target;
};

/// Starts a traversal; the operator arms this mode explicitly.
TraversalState arm_traversal(double now);

struct TraversalOutput {
  Pose target;
  Vec3 increment = Vec3::Zero();
  bool bypass_lateral_avoidance = false;
  /// Selected detection of this tick, in the estimate's frame.
  std::optional<DoorCandidate> detection;
};

/// One step per obstacle scan. `est` is the UAV pose in its local frame; the
/// scan is in the body frame.
std::pair<TraversalOutput, TraversalState> traversal_tick(const TraversalState& ts, const RangeScan& scan,
                                                          const Pose& est, double now,
                                                          const DoorParams& params = {});

}  // namespace fleetsim::door
