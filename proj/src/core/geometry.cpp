#include "geometry.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "error.hpp"

namespace fleetsim::geometry {

double wrap_angle(double a) {
  if (!std::isfinite(a)) return a;
  double w = std::remainder(a, 2.0 * kPi);  // [-pi, pi]
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

Vec3 rotate_yaw(const Vec3& v, double yaw) {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y(), v.z()};
}

Vec2 rotate2(const Vec2& v, double yaw) {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y()};
}

Pose Pose::make(double x, double y, double z, double yaw) {
  return Pose{Vec3(x, y, z), wrap_angle(yaw)};
}

Pose compose(const Pose& a, const Pose& b) {
  return Pose{a.position + rotate_yaw(b.position, a.yaw), wrap_angle(a.yaw + b.yaw)};
}

Pose inverse(const Pose& p) {
  return Pose{-rotate_yaw(p.position, -p.yaw), wrap_angle(-p.yaw)};
}

Vec3 transform_point(const Pose& p, const Vec3& local) {
  return p.position + rotate_yaw(local, p.yaw);
}

Vec3 SimilarityTransform::apply(const Vec3& p) const {
  return scale * rotate_yaw(p, yaw) + translation;
}

Pose SimilarityTransform::apply(const Pose& p) const {
  return Pose{apply(p.position), wrap_angle(p.yaw + yaw)};
}

SimilarityTransform SimilarityTransform::inverse() const {
  SimilarityTransform inv;
  inv.scale = 1.0 / scale;
  inv.yaw = wrap_angle(-yaw);
  inv.translation = -inv.scale * rotate_yaw(translation, -yaw);
  return inv;
}

SimilarityTransform SimilarityTransform::then_after(const SimilarityTransform& other) const {
  SimilarityTransform out;
  out.scale = scale * other.scale;
  out.yaw = wrap_angle(yaw + other.yaw);
  out.translation = scale * rotate_yaw(other.translation, yaw) + translation;
  return out;
}

namespace {

Vec3 centroid(std::span<const Vec3> pts) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : pts) c += p;
  return c / static_cast<double>(pts.size());
}

bool collinear(std::span<const Vec3> pts, const Vec3& c) {
  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  for (const auto& p : pts) scatter += (p - c) * (p - c).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(scatter, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();  // ascending
  return ev(2) <= 1e-18 || ev(1) <= 1e-12 * ev(2);
}

}  // namespace

SimilarityTransform umeyama_similarity(std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.size() != dst.size()) {
    throw Error(ErrorCode::kInvalidArgument, "umeyama_similarity: size mismatch");
  }
  if (src.size() < 3) {
    throw Error(ErrorCode::kDegenerateConfiguration, "umeyama_similarity: need >= 3 pairs");
  }
  const Vec3 cs = centroid(src);
  const Vec3 cd = centroid(dst);
  if (collinear(src, cs)) {
    throw Error(ErrorCode::kDegenerateConfiguration, "umeyama_similarity: collinear source points");
  }

  // Yaw maximises sum d . Rz(yaw) s; the vertical components are yaw-invariant.
  double a = 0.0, b = 0.0, zz = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vec3 s = src[i] - cs;
    const Vec3 d = dst[i] - cd;
    a += s.x() * d.x() + s.y() * d.y();
    b += s.x() * d.y() - s.y() * d.x();
    zz += s.z() * d.z();
    ss += s.squaredNorm();
  }
  const double yaw = std::atan2(b, a);
  const double scale = (a * std::cos(yaw) + b * std::sin(yaw) + zz) / ss;
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw Error(ErrorCode::kDegenerateConfiguration, "umeyama_similarity: non-positive scale");
  }
  SimilarityTransform t;
  t.scale = scale;
  t.yaw = wrap_angle(yaw);
  t.translation = cd - scale * rotate_yaw(cs, yaw);
  return t;
}

double similarity_residual(const SimilarityTransform& t, std::span<const Vec3> src,
                           std::span<const Vec3> dst) {
  double r = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) r += (dst[i] - t.apply(src[i])).squaredNorm();
  return r;
}

namespace {

struct Consensus {
  std::vector<bool> mask;
  std::size_t count = 0;
  double residual = 0.0;
};

Consensus score(const SimilarityTransform& t, std::span<const Vec3> src, std::span<const Vec3> dst,
                double threshold) {
  Consensus c;
  c.mask.assign(src.size(), false);
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double e = (dst[i] - t.apply(src[i])).norm();
    if (e < threshold) {
      c.mask[i] = true;
      ++c.count;
      c.residual += e * e;
    }
  }
  return c;
}

bool better(const Consensus& a, const Consensus& b) {
  return a.count > b.count || (a.count == b.count && a.residual < b.residual);
}

}  // namespace

RansacResult ransac_align(std::span<const Pose> src_poses, std::span<const Vec3> anchors,
                          const RansacOptions& options) {
  if (src_poses.size() != anchors.size()) {
    throw Error(ErrorCode::kInvalidArgument, "ransac_align: size mismatch");
  }
  const std::size_t n = src_poses.size();
  if (n < 3) throw Error(ErrorCode::kAlignmentFailure, "ransac_align: need >= 3 pairs");

  std::vector<Vec3> src(n);
  for (std::size_t i = 0; i < n; ++i) src[i] = src_poses[i].position;

  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  bool have = false;
  SimilarityTransform best_t;
  Consensus best;
  for (int it = 0; it < options.iterations; ++it) {
    std::size_t idx[3];
    idx[0] = pick(rng);
    do idx[1] = pick(rng); while (idx[1] == idx[0]);
    do idx[2] = pick(rng); while (idx[2] == idx[0] || idx[2] == idx[1]);
    const Vec3 s3[3] = {src[idx[0]], src[idx[1]], src[idx[2]]};
    const Vec3 d3[3] = {anchors[idx[0]], anchors[idx[1]], anchors[idx[2]]};
    SimilarityTransform t;
    try {
      t = umeyama_similarity(s3, d3);
    } catch (const Error&) {
      continue;
    }
    Consensus c = score(t, src, anchors, options.inlier_threshold);
    if (!have || better(c, best)) {
      have = true;
      best = std::move(c);
      best_t = t;
    }
  }
  if (!have || best.count < 3) {
    throw Error(ErrorCode::kAlignmentFailure, "ransac_align: no model with >= 3 inliers");
  }

  // Refit on the consensus set until it stops changing.
  for (int round = 0; round < 5; ++round) {
    std::vector<Vec3> s_in, d_in;
    for (std::size_t i = 0; i < n; ++i) {
      if (best.mask[i]) {
        s_in.push_back(src[i]);
        d_in.push_back(anchors[i]);
      }
    }
    SimilarityTransform refit;
    try {
      refit = umeyama_similarity(s_in, d_in);
    } catch (const Error&) {
      break;
    }
    Consensus c = score(refit, src, anchors, options.inlier_threshold);
    if (c.count < best.count) break;
    const bool same = c.mask == best.mask;
    best_t = refit;
    best = std::move(c);
    if (same) break;
  }

  return RansacResult{best_t, best.mask, best.count};
}

namespace {

double arc_length(std::span<const Pose> poses, std::size_t n) {
  double len = 0.0;
  for (std::size_t i = 1; i < n; ++i) len += (poses[i].position - poses[i - 1].position).norm();
  return len;
}

}  // namespace

SimilarityTransform align_gnss_denied(std::span<const Pose> first_poses,
                                      std::span<const Pose> metric_poses,
                                      const Pose& reference_start) {
  const std::size_t n = std::min<std::size_t>({10, first_poses.size(), metric_poses.size()});
  if (n < 2) {
    throw Error(ErrorCode::kScaleIndeterminate, "align_gnss_denied: need >= 2 poses");
  }
  const double input_len = arc_length(first_poses, n);
  const double metric_len = arc_length(metric_poses, n);
  if (input_len < 1e-9 || metric_len < 1e-9) {
    throw Error(ErrorCode::kScaleIndeterminate, "align_gnss_denied: zero displacement");
  }
  SimilarityTransform t;
  t.scale = metric_len / input_len;
  t.yaw = wrap_angle(reference_start.yaw - first_poses[0].yaw);
  t.translation = reference_start.position - t.scale * rotate_yaw(first_poses[0].position, t.yaw);
  return t;
}

bool CameraFrustum::valid() const {
  return near > 0.0 && near < far && horizontal_fov > 0.0 && horizontal_fov < kPi &&
         vertical_fov > 0.0 && vertical_fov < kPi;
}

bool CameraFrustum::contains(const Vec3& world_point) const {
  const Vec3 d = rotate_yaw(world_point - pose.position, -pose.yaw);
  if (d.x() < near || d.x() > far) return false;
  return std::abs(d.y()) <= d.x() * std::tan(0.5 * horizontal_fov) &&
         std::abs(d.z()) <= d.x() * std::tan(0.5 * vertical_fov);
}

std::vector<Vec3> frustum_samples(const CameraFrustum& f, int per_axis) {
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(per_axis) * per_axis * per_axis);
  const double th = std::tan(0.5 * f.horizontal_fov);
  const double tv = std::tan(0.5 * f.vertical_fov);
  const double n3 = f.near * f.near * f.near;
  const double f3 = f.far * f.far * f.far;
  for (int k = 0; k < per_axis; ++k) {
    // Depth strata of equal volume: the cross-section grows with depth^2.
    const double x = std::cbrt(n3 + (f3 - n3) * (k + 0.5) / per_axis);
    for (int i = 0; i < per_axis; ++i) {
      const double u = -1.0 + (2.0 * i + 1.0) / per_axis;
      for (int j = 0; j < per_axis; ++j) {
        const double w = -1.0 + (2.0 * j + 1.0) / per_axis;
        out.push_back(transform_point(f.pose, Vec3(x, x * th * u, x * tv * w)));
      }
    }
  }
  return out;
}

double frustum_overlap(const CameraFrustum& a, const CameraFrustum& b) {
  if (!a.valid() || !b.valid()) throw Error(ErrorCode::kInvalidArgument, "frustum_overlap: invalid frustum");
  const auto samples = frustum_samples(a);
  std::size_t inside = 0;
  for (const auto& p : samples) {
    if (b.contains(p)) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(samples.size());
}

}  // namespace fleetsim::geometry
