#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <vector>

namespace fleetsim::geometry {

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

inline constexpr double kPi = 3.14159265358979323846;

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

/// Rotation of v about the vertical axis.
Vec3 rotate_yaw(const Vec3& v, double yaw);
Vec2 rotate2(const Vec2& v, double yaw);

/// Gravity-aligned pose: position plus heading about +z.
struct Pose {
  Vec3 position = Vec3::Zero();
  double yaw = 0.0;

  static Pose identity() { return {}; }
  static Pose make(double x, double y, double z, double yaw);
};

/// a applied after b: b is expressed in a's frame.
Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);
Vec3 transform_point(const Pose& p, const Vec3& local);

/// x_dst = scale * Rz(yaw) * x_src + translation
struct SimilarityTransform {
  double scale = 1.0;
  double yaw = 0.0;
  Vec3 translation = Vec3::Zero();

  static SimilarityTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const;
  Pose apply(const Pose& p) const;
  SimilarityTransform inverse() const;
  /// (*this) after other
  SimilarityTransform then_after(const SimilarityTransform& other) const;
};

/// Least-squares similarity with rotation restricted to yaw.
/// Throws kDegenerateConfiguration on fewer than three or collinear pairs.
SimilarityTransform umeyama_similarity(std::span<const Vec3> src, std::span<const Vec3> dst);

/// Sum of squared residuals |dst - T(src)|^2.
double similarity_residual(const SimilarityTransform& t, std::span<const Vec3> src,
                           std::span<const Vec3> dst);

struct RansacOptions {
  int iterations = 200;
  double inlier_threshold = 0.3;
  std::uint64_t seed = 42;
};

struct RansacResult {
  SimilarityTransform transform;
  std::vector<bool> inliers;
  std::size_t inlier_count = 0;
};

/// Consensus similarity between pose positions and anchor points.
/// Throws kAlignmentFailure when no hypothesis gathers three inliers.
RansacResult ransac_align(std::span<const Pose> src_poses, std::span<const Vec3> anchors,
                          const RansacOptions& options = {});

/// Scale from arc length over the first min(10, n) poses, origin and heading from
/// reference_start. `metric_poses` is the metric counterpart of `first_poses`
/// (same instants). Throws kScaleIndeterminate when either trajectory has no
/// displacement.
SimilarityTransform align_gnss_denied(std::span<const Pose> first_poses,
                                      std::span<const Pose> metric_poses,
                                      const Pose& reference_start);

/// Camera looking along the pose heading, level.
struct CameraFrustum {
  Pose pose;
  double horizontal_fov = 1.2;
  double vertical_fov = 0.9;
  double near = 0.3;
  double far = 6.0;

  bool valid() const;
  bool contains(const Vec3& world_point) const;
};

/// Deterministic stratified samples filling the frustum volume uniformly (world frame).
std::vector<Vec3> frustum_samples(const CameraFrustum& f, int per_axis = 12);

/// Fraction of a's volume that lies inside b, from a fixed stratified grid
/// of 12^3 = 1728 samples.
double frustum_overlap(const CameraFrustum& a, const CameraFrustum& b);

}  // namespace fleetsim::geometry
