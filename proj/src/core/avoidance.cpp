#include "avoidance.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "error.hpp"

namespace fleetsim::avoidance {

using geometry::kPi;

RangeScan rotate_scan(const RangeScan& scan, double yaw) {
  RangeScan out = scan;
  const int shift = static_cast<int>(std::lround(yaw * 180.0 / kPi));
  for (int i = 0; i < sim::kScanBins; ++i) {
    const int j = ((i + shift) % sim::kScanBins + sim::kScanBins) % sim::kScanBins;
    out.distances[j] = scan.distances[i];
    out.valid[j] = scan.valid[i];
  }
  return out;
}

SphericalRangeImage aggregate(std::span<const RangeScan> scans, double window, double now,
                              int elevation_bins) {
  if (elevation_bins < 1 || elevation_bins % 2 == 0) {
    throw Error(ErrorCode::kInvalidArgument, "aggregate: elevation bins must be odd");
  }
  SphericalRangeImage img;
  img.aggregation_window = window;
  img.grid = Grid(sim::kScanBins, elevation_bins, kFree);
  std::vector<double> row(sim::kScanBins, kFree);
  for (const auto& s : scans) {
    if (s.timestamp < now - window - 1e-9 || s.timestamp > now + 1e-9) continue;
    for (int i = 0; i < sim::kScanBins; ++i) {
      if (!s.valid[i] || s.distances[i] >= s.max_range) continue;
      row[i] = std::min(row[i], std::max(0.5, s.distances[i]));
    }
  }
  for (int el = 0; el < elevation_bins; ++el) {
    for (int az = 0; az < sim::kScanBins; ++az) img.grid.at(az, el) = row[az];
  }
  return img;
}

std::vector<Vec2> scan_points(const RangeScan& scan, const Vec2& origin, double yaw) {
  std::vector<Vec2> out;
  for (int i = 0; i < sim::kScanBins; ++i) {
    if (!scan.valid[i] || scan.distances[i] >= scan.max_range) continue;
    const double az = yaw + i * kPi / 180.0;
    out.push_back(origin + scan.distances[i] * Vec2(std::cos(az), std::sin(az)));
  }
  return out;
}

SphericalRangeImage image_from_points(std::span<const Vec2> points, const Vec2& center, int elevation_bins,
                                      double window) {
  if (elevation_bins < 1 || elevation_bins % 2 == 0) {
    throw Error(ErrorCode::kInvalidArgument, "image_from_points: elevation bins must be odd");
  }
  SphericalRangeImage img;
  img.aggregation_window = window;
  img.grid = Grid(sim::kScanBins, elevation_bins, kFree);
  std::vector<double> row(sim::kScanBins, kFree);
  for (const auto& p : points) {
    const Vec2 d = p - center;
    const int bin = img.grid.wrap_az(static_cast<int>(std::lround(std::atan2(d.y(), d.x()) * 180.0 / kPi)));
    row[bin] = std::min(row[bin], std::max(0.5, d.norm()));
  }
  for (int el = 0; el < elevation_bins; ++el) {
    for (int az = 0; az < sim::kScanBins; ++az) img.grid.at(az, el) = row[az];
  }
  return img;
}

Grid seed_forces(const SphericalRangeImage& img, double safety_distance) {
  if (!(safety_distance > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "seed_forces: safety distance must be positive");
  }
  Grid f(img.grid.azimuth_bins, img.grid.elevation_bins, 0.0);
  for (std::size_t i = 0; i < f.values.size(); ++i) {
    const double r = img.grid.values[i];
    f.values[i] = std::isfinite(r) ? std::atan2(safety_distance, r) : 0.0;
  }
  return f;
}

namespace {

// Each cell remembers the seed force and the L1 distance to it; the value is
// always recomputed as force - decay * distance so it matches a direct
// evaluation bit for bit.
struct Source {
  double force = 0.0;
  int dist = 0;
};

inline double value_of(const Source& s, double decay) {
  return s.force - decay * static_cast<double>(s.dist);
}

inline void relax(Source& cell, const Source& neighbour, int step, double decay) {
  const Source cand{neighbour.force, neighbour.dist + step};
  if (value_of(cand, decay) > value_of(cell, decay)) cell = cand;
}

}  // namespace

PotentialField distance_transform_l1(const Grid& forces, double decay) {
  if (!(decay > 0.0)) throw Error(ErrorCode::kInvalidArgument, "distance_transform_l1: decay must be positive");
  const int naz = forces.azimuth_bins;
  const int nel = forces.elevation_bins;
  std::vector<Source> src(forces.values.size());
  for (std::size_t i = 0; i < src.size(); ++i) src[i] = Source{forces.values[i], 0};
  auto cell = [&](int az, int el) -> Source& { return src[static_cast<std::size_t>(el) * naz + az]; };

  // Azimuth: forward and backward passes, each twice around the ring.
  for (int el = 0; el < nel; ++el) {
    for (int i = 1; i < 2 * naz; ++i) {
      relax(cell(i % naz, el), cell((i - 1) % naz, el), 1, decay);
    }
    for (int i = 2 * naz - 2; i >= 0; --i) {
      relax(cell(i % naz, el), cell((i + 1) % naz, el), 1, decay);
    }
  }
  // Elevation: open interval, one pass each way.
  for (int az = 0; az < naz; ++az) {
    for (int el = 1; el < nel; ++el) relax(cell(az, el), cell(az, el - 1), 1, decay);
    for (int el = nel - 2; el >= 0; --el) relax(cell(az, el), cell(az, el + 1), 1, decay);
  }

  PotentialField field;
  field.values = Grid(naz, nel, 0.0);
  for (std::size_t i = 0; i < src.size(); ++i) {
    field.values.values[i] = std::max(0.0, value_of(src[i], decay));
  }
  return field;
}

std::pair<int, int> project(const Vec3& direction, const SphericalRangeImage& img) {
  const double az = std::atan2(direction.y(), direction.x());
  const double el = std::atan2(direction.z(), direction.head<2>().norm());
  const int az_px = img.grid.wrap_az(static_cast<int>(std::lround(az / img.bin_width())));
  const int el_px = std::clamp(img.center_row() + static_cast<int>(std::lround(el / img.elevation_pitch)), 0,
                               img.elevation_bins() - 1);
  return {az_px, el_px};
}

namespace {

int circular_deviation(int a, int b, int n) {
  const int d = std::abs(a - b) % n;
  return std::min(d, n - d);
}

// Signed shortest azimuth offset from b to a.
int signed_deviation(int a, int b, int n) {
  int d = ((a - b) % n + n) % n;
  if (d > n / 2) d -= n;
  return d;
}

struct Pixel {
  int az = -1;
  int el = -1;
};

}  // namespace

AdjustedCommand adjust(const Vec3& command, const SphericalRangeImage& img, const AvoidanceParams& params) {
  if (!(params.minimum_distance > 0.0 && params.minimum_distance < params.safety_distance)) {
    throw Error(ErrorCode::kInvalidArgument, "adjust: need 0 < d_min < d_s");
  }
  AdjustedCommand out;
  out.velocity = command;
  const double speed = command.norm();
  if (speed == 0.0 || command.head<2>().norm() < 1e-9) return out;

  const int naz = img.azimuth_bins();
  const int nel = img.elevation_bins();
  const auto [az0, el0] = project(command, img);
  const int fov_px = static_cast<int>(std::floor(params.fov / img.bin_width() + 1e-9));
  auto in_fov = [&](int az) { return circular_deviation(az, az0, naz) <= fov_px; };

  SphericalRangeImage masked = img;
  if (std::isfinite(params.horizon)) {
    for (double& r : masked.grid.values) {
      if (r > params.horizon) r = kFree;
    }
  }
  const PotentialField ps = distance_transform_l1(seed_forces(masked, params.safety_distance), params.decay);

  // Steepest descent on P_s, staying inside the field of view.
  Pixel chosen;
  {
    int az = az0, el = el0;
    for (int guard = 0; guard < naz * nel; ++guard) {
      if (ps.values.at(az, el) == 0.0) {
        chosen = {az, el};
        break;
      }
      const double here = ps.values.at(az, el);
      Pixel best;
      double best_v = here;
      int best_daz = 0, best_del = 0;
      for (int del = -1; del <= 1; ++del) {
        for (int daz = -1; daz <= 1; ++daz) {
          if (daz == 0 && del == 0) continue;
          const int nel_px = el + del;
          if (nel_px < 0 || nel_px >= nel) continue;
          const int naz_px = img.grid.wrap_az(az + daz);
          if (!in_fov(naz_px)) continue;
          const double v = ps.values.at(naz_px, nel_px);
          if (!(v < here)) continue;
          const int dev_az = circular_deviation(naz_px, az0, naz);
          const int dev_el = std::abs(nel_px - el0);
          const bool take = best.az < 0 || v < best_v ||
                            (v == best_v && (dev_az < best_daz || (dev_az == best_daz && dev_el < best_del)));
          if (take) {
            best = {naz_px, nel_px};
            best_v = v;
            best_daz = dev_az;
            best_del = dev_el;
          }
        }
      }
      if (best.az < 0) break;  // local minimum above zero
      az = best.az;
      el = best.el;
    }
  }

  if (chosen.az < 0) {
    // Narrow passage: zero-force cells of P_min, least intrusive in P_s.
    const PotentialField pm =
        distance_transform_l1(seed_forces(masked, params.minimum_distance), params.decay);
    double best_v = 0.0;
    int best_daz = 0, best_del = 0;
    for (int el = 0; el < nel; ++el) {
      for (int az = 0; az < naz; ++az) {
        if (!in_fov(az) || pm.values.at(az, el) != 0.0) continue;
        const double v = ps.values.at(az, el);
        const int dev_az = circular_deviation(az, az0, naz);
        const int dev_el = std::abs(el - el0);
        const bool take = chosen.az < 0 || v < best_v ||
                          (v == best_v && (dev_az < best_daz || (dev_az == best_daz && dev_el < best_del)));
        if (take) {
          chosen = {az, el};
          best_v = v;
          best_daz = dev_az;
          best_del = dev_el;
        }
      }
    }
    out.used_fallback = true;
  }

  if (chosen.az < 0) {
    out.velocity.setZero();
    out.stop = true;
    return out;
  }

  out.azimuth_pixel = chosen.az;
  out.elevation_pixel = chosen.el;
  const double r = img.grid.at(chosen.az, chosen.el);
  out.range_in_direction = r;
  double gain = 1.0;
  if (std::isfinite(r)) {
    gain = std::clamp((r - params.minimum_distance) / (params.safety_distance - params.minimum_distance), 0.0, 1.0);
  }
  if (gain == 0.0) {
    out.velocity.setZero();
    out.stop = true;
    return out;
  }

  if (chosen.az == az0 && chosen.el == el0) {
    out.velocity = command * gain;
    return out;
  }
  const double cmd_az = std::atan2(command.y(), command.x());
  const double cmd_el = std::atan2(command.z(), command.head<2>().norm());
  const double new_az = cmd_az + signed_deviation(chosen.az, az0, naz) * img.bin_width();
  const double new_el = std::clamp(cmd_el + (chosen.el - el0) * img.elevation_pitch, -kPi / 2, kPi / 2);
  const Vec3 dir(std::cos(new_el) * std::cos(new_az), std::cos(new_el) * std::sin(new_az), std::sin(new_el));
  out.velocity = dir * speed * gain;
  return out;
}

namespace {

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

}  // namespace

std::vector<std::uint8_t> dump_field(const PotentialField& field, const AdjustedCommand& chosen) {
  std::vector<std::uint8_t> b = {'P', 'F', 'G', '1'};
  put_u32(b, static_cast<std::uint32_t>(field.values.azimuth_bins));
  put_u32(b, static_cast<std::uint32_t>(field.values.elevation_bins));
  for (double v : field.values.values) put_u32(b, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  put_u32(b, static_cast<std::uint32_t>(chosen.stop ? -1 : chosen.azimuth_pixel));
  put_u32(b, static_cast<std::uint32_t>(chosen.stop ? -1 : chosen.elevation_pixel));
  return b;
}

}  // namespace fleetsim::avoidance
