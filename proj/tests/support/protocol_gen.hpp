#pragma once

// Seeded random protocol messages covering every field's full range.

#include <bit>
#include <cmath>
#include <random>
#include <string>

#include "protocol.hpp"

namespace fleetsim::testing {

using namespace fleetsim::protocol;

using Rng = std::mt19937_64;

inline float any_finite_float(Rng& rng) {
  for (;;) {
    const float f = std::bit_cast<float>(static_cast<std::uint32_t>(rng()));
    if (std::isfinite(f)) return f;
  }
}

inline double any_finite_double(Rng& rng) {
  for (;;) {
    const double d = std::bit_cast<double>(static_cast<std::uint64_t>(rng()));
    if (std::isfinite(d)) return d;
  }
}

inline void append_utf8(std::string& s, std::uint32_t cp) {
  if (cp < 0x80) {
    s.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    s.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    s.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

inline std::string random_utf8(Rng& rng, std::size_t max_bytes) {
  std::string s;
  const std::size_t target = std::uniform_int_distribution<std::size_t>(0, max_bytes)(rng);
  while (s.size() + 4 <= target) {
    std::uint32_t cp;
    switch (rng() % 4) {
      case 0: cp = static_cast<std::uint32_t>(rng() % 0x80); break;
      case 1: cp = 0x80 + static_cast<std::uint32_t>(rng() % (0x800 - 0x80)); break;
      case 2:
        do cp = 0x800 + static_cast<std::uint32_t>(rng() % (0x10000 - 0x800));
        while (cp >= 0xD800 && cp <= 0xDFFF);
        break;
      default: cp = 0x10000 + static_cast<std::uint32_t>(rng() % (0x110000 - 0x10000)); break;
    }
    append_utf8(s, cp);
  }
  return s;
}

inline Message random_message(MessageType type, Rng& rng) {
  switch (type) {
    case MessageType::kHello: {
      Hello m;
      for (auto& b : m.uav_id) b = static_cast<std::uint8_t>(rng());
      m.model = static_cast<std::uint8_t>(rng());
      m.proto_version = static_cast<std::uint16_t>(rng());
      return m;
    }
    case MessageType::kHelloAck: return HelloAck{static_cast<std::uint32_t>(rng()), (rng() & 1) != 0};
    case MessageType::kTelemetry: {
      Telemetry m;
      for (auto& v : m.pose) v = any_finite_float(rng);
      for (auto& v : m.velocity) v = any_finite_float(rng);
      m.mode = static_cast<std::uint8_t>(rng());
      m.battery = static_cast<std::uint8_t>(rng());
      m.timestamp = any_finite_double(rng);
      return m;
    }
    case MessageType::kScanChunk: {
      ScanChunk m;
      m.timestamp = any_finite_double(rng);
      m.offset = static_cast<std::uint16_t>(rng() % (kScanBins + 1));
      const std::size_t count = rng() % (kScanBins - m.offset + 1);
      for (std::size_t i = 0; i < count; ++i) {
        m.distances.push_back(any_finite_float(rng));
        m.valid.push_back((rng() & 1) != 0);
      }
      return m;
    }
    case MessageType::kTask: {
      Task m;
      m.task_id = static_cast<std::uint32_t>(rng());
      m.kind = static_cast<TaskKind>(rng() % 6);
      if (m.kind == TaskKind::kGoto || m.kind == TaskKind::kCarrotUpdate) {
        for (auto& v : m.pose) v = any_finite_float(rng);
      } else if (m.kind == TaskKind::kSetGimbal) {
        for (auto& v : m.gimbal) v = any_finite_float(rng);
      }
      return m;
    }
    case MessageType::kTaskStatus:
      return TaskStatus{static_cast<std::uint32_t>(rng()), static_cast<TaskState>(rng() % 5)};
    case MessageType::kHeartbeat: return Heartbeat{};
    case MessageType::kEvent: return Event{static_cast<std::uint8_t>(rng()), random_utf8(rng, kMaxEventDetail)};
  }
  return Heartbeat{};
}

constexpr MessageType kAllTypes[] = {MessageType::kHello,     MessageType::kHelloAck, MessageType::kTelemetry,
                                     MessageType::kScanChunk, MessageType::kTask,     MessageType::kTaskStatus,
                                     MessageType::kHeartbeat, MessageType::kEvent};

}  // namespace fleetsim::testing
