#include <gtest/gtest.h>

#include <cmath>

#include "controller.hpp"
#include "error.hpp"

namespace fs = fleetsim;
using namespace fleetsim::control;
using fleetsim::geometry::kPi;
using Kind = ControlOutput::Kind;

namespace {

Estimate at(const Vec3& p, double t, double yaw = 0.0) {
  Estimate e;
  e.pose = Pose{p, yaw};
  e.timestamp = t;
  return e;
}

ControllerParams no_latency() {
  ControllerParams p;
  p.actuation_latency = 0.0;
  return p;
}

}  // namespace

TEST(VelocityToTarget, ZeroAtTarget) {
  const auto c = velocity_to_target(Pose::make(1, 2, 3, 0.5), Pose::make(1, 2, 3, 0.5), 0.5);
  EXPECT_EQ(c.linear, Vec3::Zero());
  EXPECT_EQ(c.yaw_rate, 0.0);
}

TEST(VelocityToTarget, ClippedToMaximumSpeed) {
  const auto c = velocity_to_target(Pose{}, Pose::make(10, 0, 0, 0), 0.5);
  EXPECT_NEAR((c.linear - Vec3(0.5, 0, 0)).norm(), 0.0, 1e-15);
}

TEST(VelocityToTarget, ThreeFourFiveUnclipped) {
  const auto c = velocity_to_target(Pose{}, Pose::make(0.03, 0.04, 0, 0), 0.5, 1.0);
  EXPECT_NEAR((c.linear - Vec3(0.03, 0.04, 0)).norm(), 0.0, 1e-15);
  EXPECT_NEAR(c.linear.norm(), 0.05, 1e-15);
  EXPECT_THROW(velocity_to_target(Pose{}, Pose{}, 0.0), fs::Error);
}

TEST(VelocityToTarget, YawErrorWrapsAndClips) {
  const auto c = velocity_to_target(Pose::make(0, 0, 0, 3.0), Pose::make(0, 0, 0, -3.0), 0.5, 0.8, 1.0, 0.5);
  EXPECT_NEAR(c.yaw_rate, 2 * kPi - 6.0, 1e-12);
  const auto d = velocity_to_target(Pose{}, Pose::make(0, 0, 0, 2.0), 0.5);
  EXPECT_EQ(d.yaw_rate, 0.5);
}

TEST(Controller, NoCommandWhileIdleOrWithoutClearance) {
  FlightController fc;
  EXPECT_FALSE(fc.set_target(Pose::make(1, 0, 1, 0), Mode::kWaypoint));
  for (int i = 0; i < 20; ++i) {
    EXPECT_EQ(fc.tick({i * 0.1, at(Vec3::Zero(), i * 0.1)}).kind, Kind::kNone);
  }
  EXPECT_EQ(fc.mode(), Mode::kIdle);
}

TEST(Controller, HoldRequestInsideZone) {
  FlightController fc(no_latency());
  fc.grant_clearance();
  ASSERT_TRUE(fc.set_target(Pose::make(1, 1, 1, 0), Mode::kWaypoint));
  const auto out = fc.tick({0.0, at(Vec3(1.04, 0.96, 1.03), 0.0)});
  EXPECT_EQ(out.kind, Kind::kHold);
  EXPECT_EQ(fc.mode(), Mode::kPositionHold);
  ASSERT_EQ(out.notifications.size(), 1u);
  EXPECT_EQ(out.notifications[0], Notification::kTargetReached);
}

TEST(Controller, OutsideZoneOnOneAxisKeepsFlying) {
  FlightController fc(no_latency());
  fc.grant_clearance();
  fc.set_target(Pose::make(1, 1, 1, 0), Mode::kWaypoint);
  const auto out = fc.tick({0.0, at(Vec3(1.0, 1.0, 1.06), 0.0)});
  EXPECT_EQ(out.kind, Kind::kVelocity);
  // Small error still yields a command that survives 0.1 m/s rounding.
  EXPECT_DOUBLE_EQ(out.command.linear.z(), -0.1);
  EXPECT_EQ(out.command.linear.x(), 0.0);
}

TEST(Controller, DriftReactivatesWaypointMode) {
  FlightController fc(no_latency());
  fc.grant_clearance();
  fc.set_target(Pose::make(0, 0, 1, 0), Mode::kWaypoint);
  ASSERT_EQ(fc.tick({0.0, at(Vec3(0, 0, 1), 0.0)}).kind, Kind::kHold);
  EXPECT_EQ(fc.tick({0.5, at(Vec3(0.1, 0, 1), 0.5)}).kind, Kind::kNone);
  EXPECT_EQ(fc.mode(), Mode::kPositionHold);
  const auto out = fc.tick({1.0, at(Vec3(0.2, 0, 1), 1.0)});
  EXPECT_EQ(fc.mode(), Mode::kWaypoint);
  EXPECT_EQ(out.kind, Kind::kVelocity);
  EXPECT_LT(out.command.linear.x(), 0.0);
  ASSERT_FALSE(out.notifications.empty());
  EXPECT_EQ(out.notifications[0], Notification::kReactivated);
}

TEST(Controller, ResentWaypointDoesNotBreakHold) {
  FlightController fc(no_latency());
  fc.grant_clearance();
  fc.set_target(Pose::make(0, 0, 1, 0), Mode::kWaypoint);
  fc.tick({0.0, at(Vec3(0, 0, 1), 0.0)});
  fc.set_target(Pose::make(0, 0, 1, 0), Mode::kWaypoint);
  EXPECT_EQ(fc.mode(), Mode::kPositionHold);
  fc.set_target(Pose::make(2, 0, 1, 0), Mode::kWaypoint);
  EXPECT_EQ(fc.mode(), Mode::kWaypoint);
}

TEST(Controller, ClearanceRevocationForcesIdleWithinOneTick) {
  FlightController fc(no_latency());
  fc.grant_clearance();
  fc.set_target(Pose::make(5, 0, 1, 0), Mode::kWaypoint);
  EXPECT_EQ(fc.tick({0.0, at(Vec3(0, 0, 1), 0.0)}).kind, Kind::kVelocity);
  fc.revoke_clearance();
  const auto out = fc.tick({0.2, at(Vec3(0.1, 0, 1), 0.2)});
  EXPECT_EQ(out.kind, Kind::kRelease);
  EXPECT_EQ(fc.mode(), Mode::kIdle);
  ASSERT_EQ(out.notifications.size(), 1u);
  EXPECT_EQ(out.notifications[0], Notification::kClearanceLost);
  for (int i = 3; i < 20; ++i) EXPECT_EQ(fc.tick({i * 0.1, at(Vec3(0.1, 0, 1), i * 0.1)}).kind, Kind::kNone);
}

TEST(Controller, EmitsAtMostTenHertz) {
  FlightController fc;
  fc.grant_clearance();
  fc.set_target(Pose::make(5, 3, 1, 0), Mode::kVelocityCarrot);
  double last = -1.0;
  int count = 0;
  for (int i = 0; i < 500; ++i) {
    const double t = i * 0.02;
    const auto out = fc.tick({t, at(Vec3(0, 0, 1), t)});
    if (out.kind == Kind::kVelocity) {
      if (last >= 0) EXPECT_GE(t - last, 0.1 - 1e-9);
      last = t;
      ++count;
    }
  }
  EXPECT_EQ(count, 100);
}

TEST(Controller, CarrotNeverHolds) {
  FlightController fc(no_latency());
  fc.grant_clearance();
  fc.set_target(Pose::make(0, 0, 1, 0), Mode::kVelocityCarrot);
  EXPECT_EQ(fc.tick({0.0, at(Vec3(0, 0, 1), 0.0)}).kind, Kind::kVelocity);
  EXPECT_EQ(fc.mode(), Mode::kVelocityCarrot);
}

TEST(Controller, GainScalingKeepsFirstCommandSigns) {
  for (double s : {0.25, 0.5, 2.0, 7.0}) {
    for (const Vec3& off : {Vec3(0.3, -0.2, 0.1), Vec3(-2, 0.04, 0), Vec3(0.07, 0.5, -0.3)}) {
      auto signs = [&](double scale) {
        ControllerParams p;
        p.gain *= scale;
        p.yaw_gain *= scale;
        FlightController fc(p);
        fc.grant_clearance();
        fc.set_target(Pose{Vec3(0, 0, 1) + off, 0.4}, Mode::kWaypoint);
        const auto out = fc.tick({0.0, at(Vec3(0, 0, 1), 0.0)});
        Eigen::Vector4i sg;
        for (int a = 0; a < 3; ++a) sg[a] = (out.command.linear[a] > 0) - (out.command.linear[a] < 0);
        sg[3] = (out.command.yaw_rate > 0) - (out.command.yaw_rate < 0);
        return sg;
      };
      EXPECT_EQ(signs(1.0), signs(s));
    }
  }
}

TEST(Controller, PredictorAccountsForCommandsInFlight) {
  FlightController fc;
  fc.grant_clearance();
  fc.set_target(Pose::make(5, 0, 1, 0), Mode::kWaypoint);
  fc.tick({0.0, at(Vec3(0, 0, 1), 0.0)});
  // The 0.5 m/s command sent at t=0 acts from 0.496 s on.
  const Pose p = fc.predicted_pose(at(Vec3(0, 0, 1), 0.0), 0.0);
  EXPECT_EQ(p.position.x(), 0.0);
  const Pose q = fc.predicted_pose(at(Vec3(0, 0, 1), 0.0), 0.4);
  const double h = 0.4, tau = 0.3;
  EXPECT_NEAR(q.position.x(), 0.5 * h - 0.5 * tau * (1 - std::exp(-h / tau)), 1e-12);
}

TEST(Controller, AvoidanceStopBlocks) {
  FlightController fc(no_latency());
  fc.grant_clearance();
  fc.set_target(Pose::make(5, 0, 1, 0), Mode::kWaypoint);
  fleetsim::avoidance::SphericalRangeImage img;
  img.grid = fleetsim::avoidance::Grid(360, 3, 0.5);
  TickInput in{0.0, at(Vec3(0, 0, 1), 0.0), &img};
  const auto out = fc.tick(in);
  EXPECT_EQ(out.kind, Kind::kVelocity);
  EXPECT_EQ(out.command.linear, Vec3::Zero());
  ASSERT_FALSE(out.notifications.empty());
  EXPECT_EQ(out.notifications.back(), Notification::kBlocked);
}

TEST(Controller, BypassKeepsForwardEmergencyStop) {
  FlightController fc(no_latency());
  fc.grant_clearance();
  fc.set_target(Pose::make(2, 0, 1, 0), Mode::kDoorTraversal);
  fleetsim::avoidance::SphericalRangeImage img;
  img.grid = fleetsim::avoidance::Grid(360, 3, fleetsim::avoidance::kFree);
  for (int el = 0; el < 3; ++el) {
    img.grid.at(90, el) = 0.55;  // door edge beside the UAV: ignored
    img.grid.at(270, el) = 0.55;
  }
  TickInput in{0.0, at(Vec3(0, 0, 1), 0.0), &img, true};
  auto out = fc.tick(in);
  EXPECT_GT(out.command.linear.x(), 0.0);
  for (int el = 0; el < 3; ++el) img.grid.at(3, el) = 0.45;
  in.now = 0.1;
  in.estimate.timestamp = 0.1;
  out = fc.tick(in);
  EXPECT_EQ(out.command.linear, Vec3::Zero());
}

TEST(Gimbal, CentredBoxLeavesGimbalUnchanged) {
  GimbalState g{-0.3, 0.2, GimbalMode::kTracking};
  const auto n = gimbal_track({0.4, 0.4, 0.6, 0.6}, g, 0.1);
  EXPECT_EQ(n.pitch, g.pitch);
  EXPECT_EQ(n.yaw, g.yaw);
}

TEST(Gimbal, RightwardBoxIncreasesYaw) {
  GimbalState g{0.0, 0.0, GimbalMode::kTracking};
  const auto n = gimbal_track({0.7, 0.4, 0.9, 0.6}, g, 0.1);
  EXPECT_GT(n.yaw, 0.0);
  EXPECT_EQ(n.pitch, 0.0);
}

TEST(Gimbal, PitchClampedAtLimits) {
  GimbalState g{-kPi / 2 + 0.01, 0.0, GimbalMode::kTracking};
  const auto n = gimbal_track({0.4, 0.9, 0.6, 1.0}, g, 1.0, 5.0);
  EXPECT_EQ(n.pitch, kGimbalPitchMin);
  GimbalState up{kPi / 6 - 0.01, 0.0, GimbalMode::kTracking};
  EXPECT_EQ(gimbal_track({0.4, 0.0, 0.6, 0.1}, up, 1.0, 5.0).pitch, kGimbalPitchMax);
}

TEST(Gimbal, TrackingSimulatedPersonConverges) {
  SimPersonDetector det(Vec3(6, 2, 0));
  const Pose uav = Pose::make(0, 0, 3, 0);
  GimbalState g;
  for (int i = 0; i < 400; ++i) {
    const auto box = det.detect(uav, g);
    ASSERT_TRUE(box) << "lost at step " << i;
    g = gimbal_track(*box, g, 0.05, 2.0);
  }
  const auto box = det.detect(uav, g);
  EXPECT_NEAR(box->cx(), 0.5, 0.01);
  EXPECT_NEAR(box->cy(), 0.5, 0.01);
  EXPECT_NEAR(g.yaw, -std::atan2(2.0, 6.0), 0.05);
}

TEST(Controller, ArrivalNeedsHeading) {
  FlightController fc(no_latency());
  fc.grant_clearance();
  fc.set_target(Pose::make(0, 0, 1, 1.0), Mode::kWaypoint);
  auto out = fc.tick({0.0, at(Vec3(0, 0, 1), 0.0, 0.9)});
  EXPECT_EQ(out.kind, Kind::kVelocity);
  EXPECT_GT(out.command.yaw_rate, 0.0);
  out = fc.tick({0.2, at(Vec3(0, 0, 1), 0.2, 0.96)});
  EXPECT_EQ(out.kind, Kind::kHold);
}

TEST(Controller, ExplicitHoldEmitsOnceAtNextSlot) {
  FlightController fc(no_latency());
  fc.grant_clearance();
  fc.set_target(Pose::make(3, 0, 1, 0), Mode::kWaypoint);
  EXPECT_EQ(fc.tick({0.0, at(Vec3(0, 0, 1), 0.0)}).kind, Kind::kVelocity);
  fc.set_target(Pose::make(0.5, 0, 1, 0), Mode::kPositionHold);
  // Rate limit still applies to the hold request.
  EXPECT_EQ(fc.tick({0.05, at(Vec3(0.02, 0, 1), 0.05)}).kind, Kind::kNone);
  EXPECT_EQ(fc.tick({0.1, at(Vec3(0.05, 0, 1), 0.1)}).kind, Kind::kHold);
  EXPECT_EQ(fc.mode(), Mode::kPositionHold);
  EXPECT_EQ(fc.tick({0.3, at(Vec3(0.5, 0, 1), 0.3)}).kind, Kind::kNone);
  // A second hold request while holding does not re-emit.
  fc.set_target(Pose::make(0.5, 0, 1, 0), Mode::kPositionHold);
  EXPECT_EQ(fc.tick({0.5, at(Vec3(0.5, 0, 1), 0.5)}).kind, Kind::kNone);
}

TEST(Controller, IdleAfterFlightReleasesOnce) {
  FlightController fc(no_latency());
  fc.grant_clearance();
  fc.set_target(Pose::make(3, 0, 1, 0), Mode::kWaypoint);
  fc.tick({0.0, at(Vec3(0, 0, 1), 0.0)});
  fc.set_idle();
  int releases = 0;
  for (int k = 1; k <= 10; ++k) {
    if (fc.tick({0.1 * k, at(Vec3(0, 0, 1), 0.1 * k)}).kind == Kind::kRelease) ++releases;
  }
  EXPECT_EQ(releases, 1);
}
