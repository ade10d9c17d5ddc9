#include <gtest/gtest.h>

#include <cmath>

#include "harness.hpp"
#include "runtime.hpp"

using namespace fleetsim;
using geometry::Pose;
using geometry::Vec2;
using geometry::Vec3;
using protocol::TaskKind;
using protocol::TaskState;

namespace {

sim::Scenario one_uav() {
  sim::Scenario sc;
  sim::UavSpec u;
  u.start = Pose::make(0, 0, 1, 0);
  sc.uavs.push_back(u);
  sc.walls.push_back({Vec2(6, -6), Vec2(6, 6), 3.0});
  return sc;
}

protocol::Task goto_task(std::uint32_t id, float x, float y, float z, float yaw) {
  protocol::Task t;
  t.task_id = id;
  t.kind = TaskKind::kGoto;
  t.pose = {x, y, z, yaw};
  return t;
}

std::vector<TaskState> states_of(const std::vector<protocol::Message>& msgs, std::uint32_t id) {
  std::vector<TaskState> out;
  for (const auto& m : msgs) {
    if (const auto* s = std::get_if<protocol::TaskStatus>(&m); s && s->task_id == id) out.push_back(s->state);
  }
  return out;
}

// Everything the runtime produced so far, routed or still queued.
std::vector<protocol::Message> drain(harness::SimHarness& h) {
  auto out = h.take_messages(0);
  for (auto& m : h.runtime(0).take_outbox()) out.push_back(std::move(m));
  return out;
}

template <class T>
std::size_t count_of(const std::vector<protocol::Message>& msgs) {
  std::size_t n = 0;
  for (const auto& m : msgs) n += std::holds_alternative<T>(m) ? 1 : 0;
  return n;
}

}  // namespace

TEST(Runtime, EchoesHeartbeat) {
  runtime::UavRuntime rt(protocol::uuid_for_index(0), sim::UavModel::kMini3);
  rt.on_message(protocol::Heartbeat{}, 0.0);
  const auto out = rt.take_outbox();
  ASSERT_EQ(out.size(), 1u);
  EXPECT_TRUE(std::holds_alternative<protocol::Heartbeat>(out[0]));
}

TEST(Runtime, HelloCarriesIdentity) {
  runtime::UavRuntime rt(protocol::uuid_for_index(3), sim::UavModel::kMini4);
  const auto h = rt.hello();
  EXPECT_EQ(h.uav_id, protocol::uuid_for_index(3));
  EXPECT_EQ(h.model, static_cast<std::uint8_t>(sim::UavModel::kMini4));
  EXPECT_EQ(h.proto_version, protocol::kProtocolVersion);
}

TEST(Runtime, GotoLifecycleAndRepeat) {
  harness::SimHarness h(one_uav());
  h.run_for(1.0);
  drain(h);
  h.runtime(0).on_message(goto_task(7, 0.6f, 0.3f, 1.2f, 0.3f), h.now());
  auto msgs = drain(h);
  EXPECT_EQ(states_of(msgs, 7), (std::vector<TaskState>{TaskState::kAccepted, TaskState::kActive}));
  bool reached = false;
  for (int k = 0; k < 1500 && !reached; ++k) {
    h.step();
    for (auto s : states_of(drain(h), 7)) reached = reached || s == TaskState::kReached;
  }
  ASSERT_TRUE(reached);
  const auto truth = h.truth_local(0);
  EXPECT_NEAR(truth.position.x(), 0.6, 0.1);
  EXPECT_NEAR(truth.position.y(), 0.3, 0.1);
  EXPECT_NEAR(truth.position.z(), 1.2, 0.1);
  // A dispatcher re-send repeats the current state without new motion.
  h.runtime(0).on_message(goto_task(7, 0.6f, 0.3f, 1.2f, 0.3f), h.now());
  EXPECT_EQ(states_of(drain(h), 7), (std::vector<TaskState>{TaskState::kReached}));
}

TEST(Runtime, NewTaskAbortsPreviousAndClearanceIsRequired) {
  harness::SimHarness h(one_uav());
  h.run_for(1.0);
  h.runtime(0).on_message(goto_task(1, 2.0f, 0.0f, 1.0f, 0.0f), h.now());
  h.run_for(0.5);
  drain(h);
  h.runtime(0).on_message(goto_task(2, 0.0f, 1.0f, 1.0f, 0.0f), h.now());
  auto msgs = drain(h);
  EXPECT_EQ(states_of(msgs, 1), (std::vector<TaskState>{TaskState::kAborted}));
  EXPECT_EQ(states_of(msgs, 2), (std::vector<TaskState>{TaskState::kAccepted, TaskState::kActive}));

  h.runtime(0).revoke_clearance();
  h.runtime(0).on_message(goto_task(3, 0.0f, 0.0f, 1.0f, 0.0f), h.now());
  EXPECT_EQ(states_of(drain(h), 3), (std::vector<TaskState>{TaskState::kAborted}));
}

TEST(Runtime, AbortHoldAndGimbalTasks) {
  harness::SimHarness h(one_uav());
  h.run_for(1.0);
  h.runtime(0).on_message(goto_task(1, 3.0f, 0.0f, 1.0f, 0.0f), h.now());
  h.run_for(0.5);
  drain(h);
  protocol::Task t;
  t.task_id = 2;
  t.kind = TaskKind::kAbort;
  h.runtime(0).on_message(t, h.now());
  auto msgs = drain(h);
  EXPECT_EQ(states_of(msgs, 1), (std::vector<TaskState>{TaskState::kAborted}));
  EXPECT_EQ(states_of(msgs, 2), (std::vector<TaskState>{TaskState::kReached}));
  EXPECT_EQ(h.runtime(0).controller().mode(), control::Mode::kIdle);

  t.task_id = 3;
  t.kind = TaskKind::kHold;
  h.runtime(0).on_message(t, h.now());
  EXPECT_EQ(states_of(drain(h), 3), (std::vector<TaskState>{TaskState::kReached}));
  EXPECT_EQ(h.runtime(0).controller().mode(), control::Mode::kPositionHold);

  t.task_id = 4;
  t.kind = TaskKind::kSetGimbal;
  t.gimbal = {-3.0f, 0.2f};
  h.runtime(0).on_message(t, h.now());
  EXPECT_EQ(states_of(drain(h), 4), (std::vector<TaskState>{TaskState::kReached}));
  EXPECT_GE(h.runtime(0).gimbal().pitch, -geometry::kPi / 2 - 1e-9);
}

TEST(Runtime, ReportsTelemetryAndChunkedScans) {
  harness::SimHarness h(one_uav());
  h.run_for(2.0);
  const auto msgs = drain(h);
  const auto tel = count_of<protocol::Telemetry>(msgs);
  const auto chunks = count_of<protocol::ScanChunk>(msgs);
  EXPECT_GE(tel, 15u);
  EXPECT_LE(tel, 21u);
  EXPECT_EQ(chunks % 4, 0u);
  EXPECT_GE(chunks, 12u);
  // Every scan is preceded by its telemetry and split into 90-bin chunks.
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    const auto* c = std::get_if<protocol::ScanChunk>(&msgs[i]);
    if (!c || c->offset != 0) continue;
    ASSERT_GT(i, 0u);
    EXPECT_TRUE(std::holds_alternative<protocol::Telemetry>(msgs[i - 1]));
    for (int k = 0; k < 4; ++k) {
      const auto& ck = std::get<protocol::ScanChunk>(msgs[i + k]);
      EXPECT_EQ(ck.offset, 90 * k);
      EXPECT_EQ(ck.distances.size(), 90u);
      EXPECT_EQ(ck.timestamp, c->timestamp);
    }
  }
}

TEST(Harness, RunsAreBitIdentical) {
  auto run = [] {
    harness::SimHarness h(one_uav());
    h.run_for(0.5);
    h.runtime(0).on_message(goto_task(1, 1.0f, 0.5f, 1.3f, 0.5f), h.now());
    std::vector<harness::TrajectorySample> s;
    for (int k = 0; k < 300; ++k) {
      h.step();
      s.push_back(h.sample(0));
    }
    return harness::trajectory_csv(s);
  };
  const auto a = run();
  EXPECT_EQ(a, run());
  EXPECT_EQ(a.substr(0, a.find('\n')), "t,x,y,z,yaw,truth_x,truth_y,truth_z,truth_yaw,mode,clearance");
}

TEST(Harness, MotionStartsOneActuationLatencyAfterCommand) {
  harness::SimHarness h(one_uav());
  h.run_for(1.0);
  h.runtime(0).on_message(goto_task(1, 1.0f, 0.0f, 1.0f, 0.0f), h.now());
  double moved = -1.0;
  for (int k = 0; k < 100 && moved < 0; ++k) {
    h.step();
    if (h.world().uav(0).velocity.norm() > 1e-3) moved = h.now();
  }
  ASSERT_GT(moved, 0.0);
  ASSERT_FALSE(h.accepted_commands(0).empty());
  const double t0 = h.accepted_commands(0).front().first;
  EXPECT_NEAR(moved - t0, 0.496, h.config().dt + 1e-9);
}

TEST(Harness, PredictiveImageFollowsObstacle) {
  auto sc = one_uav();
  sc.cylinders.push_back({Vec2(1.5, 0.0), 0.25, 3.0});
  harness::SimHarness h(sc);
  h.run_for(1.0);
  ASSERT_TRUE(h.runtime(0).last_image().has_value());
  const auto& img = *h.runtime(0).last_image();
  EXPECT_NEAR(img.grid.at(0, 1), 1.25, 0.12);
  EXPECT_FALSE(std::isfinite(img.grid.at(180, 1)));
}
