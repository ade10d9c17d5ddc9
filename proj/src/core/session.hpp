#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <vector>

#include "protocol.hpp"

namespace fleetsim::session {

using protocol::Uuid;

struct RegisterResult {
  /// Set when the Hello was accepted.
  std::optional<protocol::HelloAck> ack;
  /// Version rejection (to the peer) or replacement notice (to the log).
  std::optional<protocol::Event> event;
  /// Live session that this registration closed.
  std::optional<std::uint32_t> replaced_session;
};

struct SessionSnapshot {
  std::uint32_t session = 0;
  Uuid uav_id{};
  std::uint8_t model = 0;
  bool live = false;
  std::optional<double> last_telemetry;
};

/// Single synchronized authority for UAV sessions. Every mutation takes the lock.
class SessionTable {
 public:
  RegisterResult register_hello(const protocol::Hello& hello);
  /// Marks the session closed; unknown ids are ignored.
  void close(std::uint32_t session);
  /// False for closed/unknown sessions and for timestamps older than the last delivered one.
  bool accept_telemetry(std::uint32_t session, double timestamp);

  std::optional<Uuid> uav_of(std::uint32_t session) const;
  bool is_live(std::uint32_t session) const;
  std::optional<std::uint32_t> live_session(const Uuid& uav) const;
  bool known(const Uuid& uav) const;
  std::vector<SessionSnapshot> snapshot() const;
  std::uint64_t dropped_telemetry() const;

 private:
  mutable std::mutex mu_;
  std::uint32_t next_session_ = 1;
  std::map<std::uint32_t, SessionSnapshot> sessions_;
  std::map<Uuid, std::uint32_t> latest_;  // uav -> most recent session
  std::uint64_t dropped_ = 0;
};

}  // namespace fleetsim::session
