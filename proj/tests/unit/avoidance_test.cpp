#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <random>

#include "avoidance.hpp"
#include "error.hpp"

namespace fs = fleetsim;
using namespace fleetsim::avoidance;
using fleetsim::geometry::kPi;

namespace {

RangeScan free_scan(double t = 0.0) {
  RangeScan s;
  s.timestamp = t;
  s.distances.fill(s.max_range);
  s.valid.fill(true);
  return s;
}

SphericalRangeImage image_from(const RangeScan& s) {
  std::vector<RangeScan> v{s};
  return aggregate(v, 0.5, s.timestamp);
}

// Direct evaluation of max(0, max_q f(q) - decay * L1(p, q)).
Grid brute_force(const Grid& f, double decay) {
  Grid out(f.azimuth_bins, f.elevation_bins, 0.0);
  for (int el = 0; el < f.elevation_bins; ++el) {
    for (int az = 0; az < f.azimuth_bins; ++az) {
      double best = 0.0;
      for (int qe = 0; qe < f.elevation_bins; ++qe) {
        for (int qa = 0; qa < f.azimuth_bins; ++qa) {
          const int da = std::abs(az - qa);
          const int dist = std::min(da, f.azimuth_bins - da) + std::abs(el - qe);
          best = std::max(best, f.at(qa, qe) - decay * static_cast<double>(dist));
        }
      }
      out.at(az, el) = best;
    }
  }
  return out;
}

int deviation(int a, int b, int n) {
  const int d = std::abs(a - b) % n;
  return std::min(d, n - d);
}

}  // namespace

TEST(Aggregate, SingleScanIsReproduced) {
  RangeScan s = free_scan(1.0);
  s.distances[10] = 2.0;
  s.distances[200] = 0.7;
  s.valid[300] = false;
  const auto img = image_from(s);
  ASSERT_EQ(img.elevation_bins(), 3);
  for (int el = 0; el < 3; ++el) {
    EXPECT_EQ(img.grid.at(10, el), 2.0);
    EXPECT_EQ(img.grid.at(200, el), 0.7);
    EXPECT_EQ(img.grid.at(300, el), kFree);
    EXPECT_EQ(img.grid.at(0, el), kFree);  // max-range return
  }
}

TEST(Aggregate, MinimumFusionAndWindow) {
  RangeScan a = free_scan(0.9), b = free_scan(1.0), old = free_scan(0.3);
  a.distances[5] = 2.0;
  b.distances[5] = 1.5;
  old.distances[5] = 0.6;
  old.distances[6] = 0.6;
  std::vector<RangeScan> v{a, b, old};
  const auto img = aggregate(v, 0.5, 1.0);
  EXPECT_EQ(img.grid.at(5, 1), 1.5);
  EXPECT_EQ(img.grid.at(6, 1), kFree);
}

TEST(Aggregate, EvenRowCountRejected) {
  EXPECT_THROW(aggregate({}, 0.5, 0.0, 2), fs::Error);
}

TEST(RotateScan, ShiftsBinsByHeading) {
  RangeScan s = free_scan();
  s.distances[0] = 1.0;
  const auto r = rotate_scan(s, 30.0 * kPi / 180.0);
  EXPECT_EQ(r.distances[30], 1.0);
  const auto back = rotate_scan(s, -10.0 * kPi / 180.0);
  EXPECT_EQ(back.distances[350], 1.0);
}

TEST(SeedForces, Atan2Values) {
  SphericalRangeImage img;
  img.grid = Grid(4, 1, kFree);
  img.grid.at(0, 0) = 0.5;
  img.grid.at(1, 0) = 0.5 / std::sqrt(3.0);
  const auto f = seed_forces(img, 0.5);
  EXPECT_DOUBLE_EQ(f.at(0, 0), kPi / 4);
  EXPECT_NEAR(f.at(1, 0), kPi / 3, 1e-15);
  EXPECT_EQ(f.at(2, 0), 0.0);
  EXPECT_THROW(seed_forces(img, 0.0), fs::Error);
}

TEST(DistanceTransform, ZeroForcesGiveZeroField) {
  const Grid f(32, 8, 0.0);
  const auto p = distance_transform_l1(f, 0.1);
  for (double v : p.values.values) EXPECT_EQ(v, 0.0);
}

TEST(DistanceTransform, SingleSeedDecaysAcrossWrap) {
  Grid f(32, 4, 0.0);
  f.at(1, 2) = kPi / 4;
  const auto p = distance_transform_l1(f, 0.1);
  EXPECT_DOUBLE_EQ(p.values.at(30, 2), kPi / 4 - 0.1 * 3.0);
  EXPECT_NEAR(p.values.at(30, 2), 0.4854, 5e-5);
  EXPECT_DOUBLE_EQ(p.values.at(4, 2), kPi / 4 - 0.1 * 3.0);
  EXPECT_DOUBLE_EQ(p.values.at(0, 0), kPi / 4 - 0.1 * 3.0);
  EXPECT_EQ(p.values.at(17, 2), 0.0);
}

TEST(DistanceTransform, EqualsBruteForceOnRandomGrids) {
  std::mt19937_64 rng(314159);
  std::uniform_int_distribution<int> naz(1, 64), nel(1, 16);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Grid f(naz(rng), nel(rng), 0.0);
    const double density = u(rng);
    for (double& v : f.values) v = u(rng) < density ? u(rng) * kPi / 2 : 0.0;
    const double decay = 0.01 + u(rng) * 0.3;
    const auto fast = distance_transform_l1(f, decay);
    const auto slow = brute_force(f, decay);
    ASSERT_EQ(fast.values.values, slow.values) << "trial " << trial << " " << f.azimuth_bins << "x"
                                               << f.elevation_bins;
  }
}

TEST(DistanceTransform, RejectsNonPositiveDecay) {
  EXPECT_THROW(distance_transform_l1(Grid(4, 1, 0.0), 0.0), fs::Error);
}

TEST(Adjust, EmptyImagePassesCommand) {
  const auto img = image_from(free_scan());
  const Vec3 cmd(0.4, 0.1, 0.0);
  const auto out = adjust(cmd, img);
  EXPECT_FALSE(out.stop);
  EXPECT_EQ(out.velocity, cmd);
}

TEST(Adjust, ZeroCommandUnchanged) {
  RangeScan s = free_scan();
  s.distances.fill(0.6);
  const auto out = adjust(Vec3::Zero(), image_from(s));
  EXPECT_FALSE(out.stop);
  EXPECT_EQ(out.velocity, Vec3::Zero());
}

TEST(Adjust, DeviatesAroundObstacleAhead) {
  RangeScan s = free_scan();
  for (int k = -40; k <= 40; ++k) s.distances[(k + 360) % 360] = 1.0;
  const auto img = image_from(s);
  AvoidanceParams p;
  p.safety_distance = 1.5;
  p.minimum_distance = 0.5;
  const Vec3 cmd(0.5, 0.0, 0.0);
  const auto out = adjust(cmd, img, p);
  ASSERT_FALSE(out.stop);
  EXPECT_LE(out.velocity.norm(), cmd.norm() + 1e-12);
  EXPECT_GT(deviation(out.azimuth_pixel, 0, 360), 40);
  EXPECT_LE(deviation(out.azimuth_pixel, 0, 360), 90);
  // The chosen pixel is free of force in the field that selected it.
  const auto ps = distance_transform_l1(seed_forces(img, p.safety_distance), p.decay);
  const auto pm = distance_transform_l1(seed_forces(img, p.minimum_distance), p.decay);
  const auto& field = out.used_fallback ? pm : ps;
  EXPECT_EQ(field.values.at(out.azimuth_pixel, out.elevation_pixel), 0.0);
  const double az = std::atan2(out.velocity.y(), out.velocity.x());
  EXPECT_NEAR(std::abs(az), deviation(out.azimuth_pixel, 0, 360) * kPi / 180.0, 1e-9);
}

TEST(Adjust, EnclosedStops) {
  RangeScan s = free_scan();
  s.distances.fill(0.5);
  const auto img = image_from(s);
  for (double a = 0.0; a < 2 * kPi; a += 0.3) {
    const auto out = adjust(Vec3(std::cos(a), std::sin(a), 0.0), img);
    EXPECT_TRUE(out.stop);
    EXPECT_EQ(out.velocity, Vec3::Zero());
  }
}

TEST(Adjust, MagnitudeFollowsRangeInChosenDirection) {
  // Returns beyond the horizon leave the field at zero but still set the range.
  struct Case {
    double r, horizon, gain;
  };
  for (const Case c : {Case{0.45, 0.4, 0.0}, Case{0.5, 0.4, 0.0}, Case{0.85, 0.6, 0.5}, Case{1.2, 1.0, 1.0},
                       Case{3.0, 2.0, 1.0}}) {
    SphericalRangeImage img;
    img.grid = Grid(360, 3, kFree);
    for (int el = 0; el < 3; ++el) img.grid.at(90, el) = c.r;
    AvoidanceParams p;
    p.horizon = c.horizon;
    const auto out = adjust(Vec3(0, 1, 0), img, p);
    EXPECT_EQ(out.azimuth_pixel == 90 || out.stop, true);
    EXPECT_NEAR(out.velocity.norm(), c.gain, 1e-12) << "r=" << c.r;
    EXPECT_EQ(out.stop, c.gain == 0.0);
  }
  SphericalRangeImage img;
  img.grid = Grid(360, 3, kFree);
  EXPECT_EQ(adjust(Vec3(1, 0, 0), img).velocity.norm(), 1.0);
}

TEST(Adjust, OutputWithinFovAndEquivariant) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    RangeScan s = free_scan();
    const int blobs = 1 + static_cast<int>(u(rng) * 5);
    for (int b = 0; b < blobs; ++b) {
      const int c = static_cast<int>(u(rng) * 360), w = static_cast<int>(u(rng) * 40);
      const double r = 0.5 + u(rng) * 3.0;
      for (int k = -w; k <= w; ++k) s.distances[(c + k + 360) % 360] = r;
    }
    const auto img = image_from(s);
    const int cmd_bin = static_cast<int>(u(rng) * 360);
    const double a = cmd_bin * kPi / 180.0;
    const Vec3 cmd(0.5 * std::cos(a), 0.5 * std::sin(a), 0.0);
    const auto out = adjust(cmd, img);
    if (!out.stop) EXPECT_LE(deviation(out.azimuth_pixel, cmd_bin, 360), 90);

    const int k = static_cast<int>(u(rng) * 360);
    const auto rot = image_from(rotate_scan(s, k * kPi / 180.0));
    const double ar = (cmd_bin + k) * kPi / 180.0;
    const auto out_r = adjust(Vec3(0.5 * std::cos(ar), 0.5 * std::sin(ar), 0.0), rot);
    ASSERT_EQ(out.stop, out_r.stop);
    if (!out.stop) {
      EXPECT_EQ(out_r.azimuth_pixel, (out.azimuth_pixel + k) % 360) << "trial " << trial;
      EXPECT_EQ(out_r.elevation_pixel, out.elevation_pixel);
    }
  }
}

TEST(Adjust, RejectsInvertedDistances) {
  AvoidanceParams p;
  p.minimum_distance = 2.0;
  EXPECT_THROW(adjust(Vec3(1, 0, 0), image_from(free_scan()), p), fs::Error);
}

TEST(DumpField, LayoutIsPortable) {
  PotentialField f;
  f.values = Grid(4, 3, 0.0);
  f.values.at(2, 1) = 0.5;
  AdjustedCommand c;
  c.azimuth_pixel = 3;
  c.elevation_pixel = 1;
  const auto b = dump_field(f, c);
  ASSERT_EQ(b.size(), 4u + 8u + 12u * 4u + 8u);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "PFG1");
  EXPECT_EQ(b[4], 4);
  EXPECT_EQ(b[8], 3);
  float v;
  std::memcpy(&v, b.data() + 12 + (1 * 4 + 2) * 4, 4);
  EXPECT_EQ(v, 0.5f);
  EXPECT_EQ(b[b.size() - 8], 3);
  EXPECT_EQ(b[b.size() - 4], 1);
  c.stop = true;
  const auto s = dump_field(f, c);
  EXPECT_EQ(s[s.size() - 1], 0xFF);
}

TEST(ScanPoints, SkipsInvalidAndFreeBins) {
  RangeScan s = free_scan();
  s.distances[30] = 2.0;
  s.distances[40] = 3.0;
  s.valid[40] = false;
  const auto pts = scan_points(s, Vec2(1, 1), 0.5);
  ASSERT_EQ(pts.size(), 1u);
  const double az = 0.5 + 30.0 * kPi / 180.0;
  EXPECT_NEAR(pts[0].x(), 1 + 2 * std::cos(az), 1e-12);
  EXPECT_NEAR(pts[0].y(), 1 + 2 * std::sin(az), 1e-12);
}

TEST(ImageFromPoints, SeenFromAnotherCentre) {
  const std::vector<Vec2> pts = {Vec2(3, 0), Vec2(2.5, 0.001), Vec2(0, -1), Vec2(1.1, 0.0)};
  const auto img = image_from_points(pts, Vec2(1, 0), 3);
  ASSERT_EQ(img.elevation_bins(), 3);
  for (int el = 0; el < 3; ++el) {
    EXPECT_NEAR(img.grid.at(0, el), 0.5, 1e-12);  // 0.1 m away, floored
    EXPECT_NEAR(img.grid.at(225, el), std::sqrt(2.0), 1e-12);
  }
  int finite = 0;
  for (double v : img.grid.values) finite += std::isfinite(v) ? 1 : 0;
  EXPECT_EQ(finite, 2 * 3);
  EXPECT_THROW(image_from_points(pts, Vec2(0, 0), 2), fs::Error);
}

TEST(ImageFromPoints, MatchesScanAtItsOrigin) {
  RangeScan s = free_scan();
  for (int i = 0; i < 360; i += 7) s.distances[i] = 1.0 + 0.01 * i;
  const auto pts = scan_points(s, Vec2(0.3, -0.2), 0.0);
  const auto a = image_from_points(pts, Vec2(0.3, -0.2), 3);
  const auto b = image_from(s);
  for (int az = 0; az < 360; ++az) {
    if (std::isfinite(b.grid.at(az, 1))) {
      EXPECT_NEAR(a.grid.at(az, 1), b.grid.at(az, 1), 1e-9) << az;
    } else {
      EXPECT_FALSE(std::isfinite(a.grid.at(az, 1))) << az;
    }
  }
}
