#include <gtest/gtest.h>

#include <random>
#include <set>
#include <thread>

#include "session.hpp"

using namespace fleetsim::session;
using namespace fleetsim::protocol;

TEST(SessionTable, FirstHelloIsNew) {
  SessionTable t;
  const auto r = t.register_hello(Hello{uuid_for_index(1), 0, 1});
  ASSERT_TRUE(r.ack);
  EXPECT_FALSE(r.ack->resumed);
  EXPECT_FALSE(r.event);
  EXPECT_TRUE(t.is_live(r.ack->session));
}

TEST(SessionTable, ReconnectAfterCloseIsResumedWithFreshSession) {
  SessionTable t;
  const auto a = t.register_hello(Hello{uuid_for_index(1), 0, 1});
  t.close(a.ack->session);
  const auto b = t.register_hello(Hello{uuid_for_index(1), 0, 1});
  ASSERT_TRUE(b.ack);
  EXPECT_TRUE(b.ack->resumed);
  EXPECT_GT(b.ack->session, a.ack->session);
  EXPECT_FALSE(b.replaced_session);
  EXPECT_EQ(t.uav_of(b.ack->session), uuid_for_index(1));
}

TEST(SessionTable, VersionMismatchRejectedWithEvent) {
  SessionTable t;
  const auto r = t.register_hello(Hello{uuid_for_index(1), 0, 2});
  EXPECT_FALSE(r.ack);
  ASSERT_TRUE(r.event);
  EXPECT_EQ(r.event->code, static_cast<std::uint8_t>(EventCode::kVersionRejected));
  EXPECT_FALSE(t.known(uuid_for_index(1)));
}

TEST(SessionTable, DuplicateLiveSessionReplacedAndReported) {
  SessionTable t;
  const auto a = t.register_hello(Hello{uuid_for_index(3), 0, 1});
  const auto b = t.register_hello(Hello{uuid_for_index(3), 0, 1});
  ASSERT_TRUE(b.replaced_session);
  EXPECT_EQ(*b.replaced_session, a.ack->session);
  ASSERT_TRUE(b.event);
  EXPECT_EQ(b.event->code, static_cast<std::uint8_t>(EventCode::kSessionReplaced));
  EXPECT_FALSE(t.is_live(a.ack->session));
  EXPECT_EQ(t.live_session(uuid_for_index(3)), b.ack->session);
}

TEST(SessionTable, StaleTelemetryDropped) {
  SessionTable t;
  const auto s = t.register_hello(Hello{uuid_for_index(1), 0, 1}).ack->session;
  EXPECT_TRUE(t.accept_telemetry(s, 1.0));
  EXPECT_TRUE(t.accept_telemetry(s, 1.0));
  EXPECT_FALSE(t.accept_telemetry(s, 0.9));
  EXPECT_TRUE(t.accept_telemetry(s, 1.1));
  EXPECT_FALSE(t.accept_telemetry(s + 100, 5.0));
  EXPECT_EQ(t.dropped_telemetry(), 2u);
}

TEST(SessionTable, ConcurrentRegistrationsGetDistinctIncreasingIds) {
  SessionTable t;
  std::vector<std::thread> threads;
  std::vector<std::vector<std::uint32_t>> ids(8);
  for (int k = 0; k < 8; ++k) {
    threads.emplace_back([&, k] {
      for (int i = 0; i < 500; ++i) {
        const auto r = t.register_hello(Hello{uuid_for_index(static_cast<std::uint32_t>(i % 20)), 0, 1});
        ids[k].push_back(r.ack->session);
      }
    });
  }
  for (auto& th : threads) th.join();
  std::set<std::uint32_t> all;
  for (const auto& v : ids) {
    for (std::size_t i = 1; i < v.size(); ++i) EXPECT_GT(v[i], v[i - 1]);
    all.insert(v.begin(), v.end());
  }
  EXPECT_EQ(all.size(), 4000u);
  int live = 0;
  for (const auto& s : t.snapshot()) live += s.live ? 1 : 0;
  EXPECT_EQ(live, 20);
}
