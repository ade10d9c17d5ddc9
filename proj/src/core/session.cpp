#include "session.hpp"

namespace fleetsim::session {

RegisterResult SessionTable::register_hello(const protocol::Hello& hello) {
  std::lock_guard lock(mu_);
  RegisterResult r;
  if (hello.proto_version != protocol::kProtocolVersion) {
    r.event = protocol::Event{static_cast<std::uint8_t>(protocol::EventCode::kVersionRejected),
                              "protocol version " + std::to_string(hello.proto_version) + " not supported (server " +
                                  std::to_string(protocol::kProtocolVersion) + ")"};
    return r;
  }
  const auto prev = latest_.find(hello.uav_id);
  const bool resumed = prev != latest_.end();
  if (resumed) {
    auto& old = sessions_.at(prev->second);
    if (old.live) {
      old.live = false;
      r.replaced_session = old.session;
      r.event = protocol::Event{static_cast<std::uint8_t>(protocol::EventCode::kSessionReplaced),
                                "uav " + protocol::uuid_to_string(hello.uav_id) + " session " +
                                    std::to_string(old.session) + " replaced"};
    }
  }
  SessionSnapshot s;
  s.session = next_session_++;
  s.uav_id = hello.uav_id;
  s.model = hello.model;
  s.live = true;
  sessions_[s.session] = s;
  latest_[hello.uav_id] = s.session;
  r.ack = protocol::HelloAck{s.session, resumed};
  return r;
}

void SessionTable::close(std::uint32_t session) {
  std::lock_guard lock(mu_);
  if (auto it = sessions_.find(session); it != sessions_.end()) it->second.live = false;
}

bool SessionTable::accept_telemetry(std::uint32_t session, double timestamp) {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(session);
  if (it == sessions_.end() || !it->second.live) {
    ++dropped_;
    return false;
  }
  auto& last = it->second.last_telemetry;
  if (last && timestamp < *last) {
    ++dropped_;
    return false;
  }
  last = timestamp;
  return true;
}

std::optional<Uuid> SessionTable::uav_of(std::uint32_t session) const {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(session);
  if (it == sessions_.end()) return std::nullopt;
  return it->second.uav_id;
}

bool SessionTable::is_live(std::uint32_t session) const {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(session);
  return it != sessions_.end() && it->second.live;
}

std::optional<std::uint32_t> SessionTable::live_session(const Uuid& uav) const {
  std::lock_guard lock(mu_);
  const auto it = latest_.find(uav);
  if (it == latest_.end() || !sessions_.at(it->second).live) return std::nullopt;
  return it->second;
}

bool SessionTable::known(const Uuid& uav) const {
  std::lock_guard lock(mu_);
  return latest_.count(uav) != 0;
}

std::vector<SessionSnapshot> SessionTable::snapshot() const {
  std::lock_guard lock(mu_);
  std::vector<SessionSnapshot> out;
  for (const auto& [id, s] : sessions_) out.push_back(s);
  return out;
}

std::uint64_t SessionTable::dropped_telemetry() const {
  std::lock_guard lock(mu_);
  return dropped_;
}

}  // namespace fleetsim::session
