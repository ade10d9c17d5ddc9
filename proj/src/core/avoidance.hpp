#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "geometry.hpp"
#include "sim_world.hpp"

namespace fleetsim::avoidance {

using geometry::Vec2;
using geometry::Vec3;
using sim::RangeScan;

inline constexpr double kFree = std::numeric_limits<double>::infinity();

/// Row-major [elevation][azimuth] grid. Azimuth wraps, elevation does not.
struct Grid {
  int azimuth_bins = 360;
  int elevation_bins = 3;
  std::vector<double> values;

  Grid() = default;
  Grid(int az, int el, double fill) : azimuth_bins(az), elevation_bins(el), values(az * el, fill) {}

  double& at(int az, int el) { return values[static_cast<std::size_t>(el) * azimuth_bins + az]; }
  double at(int az, int el) const { return values[static_cast<std::size_t>(el) * azimuth_bins + az]; }
  int wrap_az(int az) const { return ((az % azimuth_bins) + azimuth_bins) % azimuth_bins; }
};

/// Obstacle distance per (azimuth, elevation) cell; kFree where nothing was seen.
struct SphericalRangeImage {
  Grid grid;
  double elevation_pitch = 10.0 * geometry::kPi / 180.0;  // rad per row
  double aggregation_window = 0.5;

  int azimuth_bins() const { return grid.azimuth_bins; }
  int elevation_bins() const { return grid.elevation_bins; }
  int center_row() const { return grid.elevation_bins / 2; }
  double bin_width() const { return 2.0 * geometry::kPi / grid.azimuth_bins; }
};

struct PotentialField {
  Grid values;
  double safety_distance = 0.0;
};

/// Shifts body-frame bins by the heading so scans taken at different yaws line up.
RangeScan rotate_scan(const RangeScan& scan, double yaw);

/// Per-azimuth minimum of valid in-window returns. Returns at max range count
/// as free. The horizontal row is replicated to every elevation row.
SphericalRangeImage aggregate(std::span<const RangeScan> scans, double window, double now,
                              int elevation_bins = 3);

/// Obstacle returns of a body-frame scan as points in the frame where the
/// scanner sat at `origin` with heading `yaw`. Max-range and invalid bins give none.
std::vector<Vec2> scan_points(const RangeScan& scan, const Vec2& origin, double yaw);

/// Range image seen from `center`: per-azimuth minimum distance to the points,
/// floored at 0.5 like the aggregated scans. Lets the image be evaluated at a
/// predicted position instead of where the scans were taken.
SphericalRangeImage image_from_points(std::span<const Vec2> points, const Vec2& center, int elevation_bins = 3,
                                      double window = 0.5);

/// atan2(d_s, r) per finite cell, 0 for free cells.
Grid seed_forces(const SphericalRangeImage& img, double safety_distance);

/// P(p) = max(0, max_q force(q) - decay * L1(p, q)), azimuth wrapping.
/// Separable two-pass chamfer per axis; bit-identical to the brute-force maximum.
PotentialField distance_transform_l1(const Grid& forces, double decay);

struct AvoidanceParams {
  double safety_distance = 1.2;   // d_s
  double minimum_distance = 0.5;  // d_min
  double fov = geometry::kPi / 2.0;  // half-width around the command azimuth
  /// One radian of field per radian of azimuth: a cell is zero-force exactly
  /// when every obstacle sits at least atan2(d, r) away in angle.
  double decay = geometry::kPi / 180.0;
  /// Returns farther than this are ignored when building the fields.
  double horizon = kFree;
};

struct AdjustedCommand {
  Vec3 velocity = Vec3::Zero();
  bool stop = false;
  bool used_fallback = false;
  int azimuth_pixel = -1;
  int elevation_pixel = -1;
  double range_in_direction = kFree;
};

/// Reactive adjustment of a velocity command expressed in the image frame.
AdjustedCommand adjust(const Vec3& command, const SphericalRangeImage& img,
                       const AvoidanceParams& params = {});

/// Image cell a direction projects to: {azimuth, elevation}.
std::pair<int, int> project(const Vec3& direction, const SphericalRangeImage& img);

/// Portable dump of a field and the chosen pixel:
///   "PFG1" | u32 azimuth_bins | u32 elevation_bins | f32 values[el][az] |
///   i32 chosen_az | i32 chosen_el      (all little-endian; -1 when stopped)
std::vector<std::uint8_t> dump_field(const PotentialField& field, const AdjustedCommand& chosen);

}  // namespace fleetsim::avoidance
