#include "protocol.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include "json.hpp"

#include "error.hpp"

namespace fleetsim::protocol {

namespace {

using Bytes = std::vector<std::uint8_t>;

[[noreturn]] void encode_error(const std::string& what) { throw Error(ErrorCode::kEncode, "encode: " + what); }

struct Writer {
  Bytes out;
  void u8(std::uint8_t v) { out.push_back(v); }
  void u16(std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) {
    if (!std::isfinite(v)) encode_error("non-finite float");
    u32(std::bit_cast<std::uint32_t>(v));
  }
  void f64(double v) {
    if (!std::isfinite(v)) encode_error("non-finite double");
    u64(std::bit_cast<std::uint64_t>(v));
  }
};

struct Reader {
  std::span<const std::uint8_t> in;
  std::size_t pos = 0;
  bool ok = true;

  bool need(std::size_t n) {
    if (pos + n > in.size()) ok = false;
    return ok;
  }
  std::uint8_t u8() { return need(1) ? in[pos++] : 0; }
  std::uint16_t u16() {
    if (!need(2)) return 0;
    const std::uint16_t v = static_cast<std::uint16_t>(in[pos] | (in[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    if (!need(4)) return 0;
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    if (!need(8)) return 0;
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    const float v = std::bit_cast<float>(u32());
    if (!std::isfinite(v)) ok = false;
    return v;
  }
  double f64() {
    const double v = std::bit_cast<double>(u64());
    if (!std::isfinite(v)) ok = false;
    return v;
  }
  bool done() const { return ok && pos == in.size(); }
};

bool valid_utf8(const std::string& s) {
  std::size_t i = 0;
  const auto* p = reinterpret_cast<const unsigned char*>(s.data());
  while (i < s.size()) {
    const unsigned char c = p[i];
    int extra;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (int k = 1; k <= extra; ++k) {
      if ((p[i + k] & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (p[i + k] & 0x3F);
    }
    static constexpr std::uint32_t kMin[] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += extra + 1;
  }
  return true;
}

bool pose_kind(TaskKind k) { return k == TaskKind::kGoto || k == TaskKind::kCarrotUpdate; }

void write_payload(Writer& w, const Hello& m) {
  for (auto b : m.uav_id) w.u8(b);
  w.u8(m.model);
  w.u16(m.proto_version);
}
void write_payload(Writer& w, const HelloAck& m) {
  w.u32(m.session);
  w.u8(m.resumed ? 1 : 0);
}
void write_payload(Writer& w, const Telemetry& m) {
  for (float v : m.pose) w.f32(v);
  for (float v : m.velocity) w.f32(v);
  w.u8(m.mode);
  w.u8(m.battery);
  w.f64(m.timestamp);
}
void write_payload(Writer& w, const ScanChunk& m) {
  if (m.distances.size() != m.valid.size()) encode_error("scan distances/valid length mismatch");
  if (m.offset + m.distances.size() > kScanBins) encode_error("scan chunk exceeds 360 bins");
  w.f64(m.timestamp);
  w.u16(m.offset);
  w.u16(static_cast<std::uint16_t>(m.distances.size()));
  for (float d : m.distances) w.f32(d);
  std::vector<std::uint8_t> bits((m.valid.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < m.valid.size(); ++i) {
    if (m.valid[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  for (auto b : bits) w.u8(b);
}
void write_payload(Writer& w, const Task& m) {
  if (static_cast<std::uint8_t>(m.kind) > 5) encode_error("unknown task kind");
  w.u32(m.task_id);
  w.u8(static_cast<std::uint8_t>(m.kind));
  if (pose_kind(m.kind)) {
    for (float v : m.pose) w.f32(v);
  } else if (m.kind == TaskKind::kSetGimbal) {
    for (float v : m.gimbal) w.f32(v);
  }
}
void write_payload(Writer& w, const TaskStatus& m) {
  if (static_cast<std::uint8_t>(m.state) > 4) encode_error("unknown task state");
  w.u32(m.task_id);
  w.u8(static_cast<std::uint8_t>(m.state));
}
void write_payload(Writer&, const Heartbeat&) {}
void write_payload(Writer& w, const Event& m) {
  if (m.detail.size() > kMaxEventDetail) encode_error("event detail longer than 4096 bytes");
  if (!valid_utf8(m.detail)) encode_error("event detail is not UTF-8");
  w.u8(m.code);
  for (char c : m.detail) w.u8(static_cast<std::uint8_t>(c));
}

std::optional<Message> parse(MessageType type, std::span<const std::uint8_t> payload) {
  Reader r{payload};
  switch (type) {
    case MessageType::kHello: {
      Hello m;
      for (auto& b : m.uav_id) b = r.u8();
      m.model = r.u8();
      m.proto_version = r.u16();
      if (r.done()) return m;
      break;
    }
    case MessageType::kHelloAck: {
      HelloAck m;
      m.session = r.u32();
      const auto b = r.u8();
      m.resumed = b == 1;
      if (r.done() && b <= 1) return m;
      break;
    }
    case MessageType::kTelemetry: {
      Telemetry m;
      for (auto& v : m.pose) v = r.f32();
      for (auto& v : m.velocity) v = r.f32();
      m.mode = r.u8();
      m.battery = r.u8();
      m.timestamp = r.f64();
      if (r.done()) return m;
      break;
    }
    case MessageType::kScanChunk: {
      ScanChunk m;
      m.timestamp = r.f64();
      m.offset = r.u16();
      const std::uint16_t count = r.u16();
      if (!r.ok || m.offset + count > kScanBins) return std::nullopt;
      m.distances.resize(count);
      for (auto& d : m.distances) d = r.f32();
      m.valid.resize(count);
      const std::size_t nbytes = (count + 7u) / 8u;
      for (std::size_t b = 0; b < nbytes; ++b) {
        const std::uint8_t byte = r.u8();
        for (int k = 0; k < 8; ++k) {
          const std::size_t i = b * 8 + k;
          const bool bit = (byte >> k) & 1u;
          if (i < count) {
            m.valid[i] = bit;
          } else if (bit) {
            return std::nullopt;  // padding must be zero
          }
        }
      }
      if (r.done()) return m;
      break;
    }
    case MessageType::kTask: {
      Task m;
      m.task_id = r.u32();
      const auto k = r.u8();
      if (!r.ok || k > 5) return std::nullopt;
      m.kind = static_cast<TaskKind>(k);
      if (pose_kind(m.kind)) {
        for (auto& v : m.pose) v = r.f32();
      } else if (m.kind == TaskKind::kSetGimbal) {
        for (auto& v : m.gimbal) v = r.f32();
      }
      if (r.done()) return m;
      break;
    }
    case MessageType::kTaskStatus: {
      TaskStatus m;
      m.task_id = r.u32();
      const auto s = r.u8();
      if (!r.ok || s > 4) return std::nullopt;
      m.state = static_cast<TaskState>(s);
      if (r.done()) return m;
      break;
    }
    case MessageType::kHeartbeat:
      if (payload.empty()) return Heartbeat{};
      break;
    case MessageType::kEvent: {
      Event m;
      m.code = r.u8();
      if (!r.ok) return std::nullopt;
      m.detail.assign(payload.begin() + 1, payload.end());
      if (m.detail.size() <= kMaxEventDetail && valid_utf8(m.detail)) return m;
      break;
    }
  }
  return std::nullopt;
}

// Admissible frame lengths (type byte included) for known types.
std::optional<std::pair<std::uint32_t, std::uint32_t>> length_bounds(std::uint8_t type) {
  switch (static_cast<MessageType>(type)) {
    case MessageType::kHello: return std::pair{20u, 20u};
    case MessageType::kHelloAck: return std::pair{6u, 6u};
    case MessageType::kTelemetry: return std::pair{39u, 39u};
    case MessageType::kScanChunk:
      return std::pair{13u, static_cast<std::uint32_t>(13 + kScanBins * 4 + (kScanBins + 7) / 8)};
    case MessageType::kTask: return std::pair{6u, 22u};
    case MessageType::kTaskStatus: return std::pair{6u, 6u};
    case MessageType::kHeartbeat: return std::pair{1u, 1u};
    case MessageType::kEvent: return std::pair{2u, static_cast<std::uint32_t>(2 + kMaxEventDetail)};
  }
  return std::nullopt;
}

}  // namespace

MessageType type_of(const Message& m) {
  return static_cast<MessageType>(static_cast<std::uint8_t>(m.index() + 1));
}

const char* type_name(MessageType t) {
  switch (t) {
    case MessageType::kHello: return "hello";
    case MessageType::kHelloAck: return "hello_ack";
    case MessageType::kTelemetry: return "telemetry";
    case MessageType::kScanChunk: return "scan_chunk";
    case MessageType::kTask: return "task";
    case MessageType::kTaskStatus: return "task_status";
    case MessageType::kHeartbeat: return "heartbeat";
    case MessageType::kEvent: return "event";
  }
  return "unknown";
}

std::vector<std::uint8_t> encode(const Message& m) {
  Writer w;
  w.out = {kMagic0, kMagic1, 0, 0, 0, 0, static_cast<std::uint8_t>(type_of(m))};
  std::visit([&](const auto& x) { write_payload(w, x); }, m);
  const auto len = static_cast<std::uint32_t>(w.out.size() - 6);
  w.out[2] = static_cast<std::uint8_t>(len >> 24);
  w.out[3] = static_cast<std::uint8_t>(len >> 16);
  w.out[4] = static_cast<std::uint8_t>(len >> 8);
  w.out[5] = static_cast<std::uint8_t>(len);
  return w.out;
}

void Decoder::feed(std::span<const std::uint8_t> bytes) {
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

void Decoder::drop(std::size_t n) {
  read_ += n;
  discarded_ += n;
  compact();
}

void Decoder::compact() {
  if (read_ == buffer_.size()) {
    buffer_.clear();
    read_ = 0;
  } else if (read_ > 4096 && read_ * 2 > buffer_.size()) {
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(read_));
    read_ = 0;
  }
}

std::optional<Message> Decoder::next() {
  for (;;) {
    const std::size_t avail = buffered();
    const std::uint8_t* p = buffer_.data() + read_;
    if (avail == 0) return std::nullopt;
    if (p[0] != kMagic0) {
      const auto* hit = std::find(p + 1, p + avail, kMagic0);
      drop(static_cast<std::size_t>(hit - p));
      continue;
    }
    if (avail < 2) return std::nullopt;
    if (p[1] != kMagic1) {
      drop(1);
      continue;
    }
    if (avail < kHeaderSize) return std::nullopt;
    const std::uint32_t len = (static_cast<std::uint32_t>(p[2]) << 24) | (static_cast<std::uint32_t>(p[3]) << 16) |
                              (static_cast<std::uint32_t>(p[4]) << 8) | static_cast<std::uint32_t>(p[5]);
    const std::uint8_t type = p[6];
    const auto bounds = length_bounds(type);
    if (len == 0 || len > kMaxFrameLength || (bounds && (len < bounds->first || len > bounds->second))) {
      ++rejected_;
      drop(1);
      continue;
    }
    if (avail < 6 + static_cast<std::size_t>(len)) return std::nullopt;
    if (!bounds) {
      ++unknown_;
      last_unknown_ = type;
      read_ += 6 + len;
      compact();
      continue;
    }
    auto msg = parse(static_cast<MessageType>(type), std::span<const std::uint8_t>(p + kHeaderSize, len - 1));
    if (!msg) {
      ++rejected_;
      drop(1);
      continue;
    }
    read_ += 6 + len;
    compact();
    return msg;
  }
}

std::vector<Message> decode_all(std::span<const std::uint8_t> bytes) {
  Decoder d;
  d.feed(bytes);
  std::vector<Message> out;
  while (auto m = d.next()) out.push_back(std::move(*m));
  if (d.buffered() != 0 || d.discarded_bytes() != 0 || d.unknown_frames() != 0) {
    throw Error(ErrorCode::kParse, "decode: input is not a clean sequence of frames");
  }
  return out;
}

std::string to_hex(std::span<const std::uint8_t> bytes, bool spaced) {
  static constexpr char kDigits[] = "0123456789ABCDEF";
  std::string s;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (spaced && i > 0) s.push_back(' ');
    s.push_back(kDigits[bytes[i] >> 4]);
    s.push_back(kDigits[bytes[i] & 0xF]);
  }
  return s;
}

std::vector<std::uint8_t> from_hex(const std::string& text) {
  std::vector<std::uint8_t> out;
  int pending = -1;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (pending >= 0) throw Error(ErrorCode::kParse, "hex: split byte");
      continue;
    }
    int v;
    if (c >= '0' && c <= '9') v = c - '0';
    else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
    else throw Error(ErrorCode::kParse, std::string("hex: bad digit '") + c + "'");
    if (pending < 0) {
      pending = v;
    } else {
      out.push_back(static_cast<std::uint8_t>(pending * 16 + v));
      pending = -1;
    }
  }
  if (pending >= 0) throw Error(ErrorCode::kParse, "hex: odd digit count");
  return out;
}

std::string uuid_to_string(const Uuid& id) { return to_hex(id, false); }

Uuid uuid_from_string(const std::string& s) {
  std::string clean;
  for (char c : s) {
    if (c != '-') clean.push_back(c);
  }
  const auto bytes = from_hex(clean);
  if (bytes.size() != 16) throw Error(ErrorCode::kParse, "uuid: need 16 bytes");
  Uuid id;
  std::copy(bytes.begin(), bytes.end(), id.begin());
  return id;
}

Uuid uuid_for_index(std::uint32_t index) {
  Uuid id{};
  const char* prefix = "FLEETSIM";
  std::memcpy(id.data(), prefix, 8);
  for (int i = 0; i < 4; ++i) id[12 + i] = static_cast<std::uint8_t>(index >> (8 * (3 - i)));
  return id;
}

namespace {

using nlohmann::json;

const char* task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::kGoto: return "goto";
    case TaskKind::kCarrotUpdate: return "carrot_update";
    case TaskKind::kArmDoorTraversal: return "arm_door_traversal";
    case TaskKind::kAbort: return "abort";
    case TaskKind::kSetGimbal: return "set_gimbal";
    case TaskKind::kHold: return "hold";
  }
  return "?";
}

const char* task_state_name(TaskState s) {
  switch (s) {
    case TaskState::kAccepted: return "accepted";
    case TaskState::kActive: return "active";
    case TaskState::kReached: return "reached";
    case TaskState::kBlocked: return "blocked";
    case TaskState::kAborted: return "aborted";
  }
  return "?";
}

template <std::size_t N>
json floats(const std::array<float, N>& a) {
  json j = json::array();
  for (float v : a) j.push_back(static_cast<double>(v));
  return j;
}

template <std::size_t N>
std::array<float, N> floats_from(const json& j) {
  std::array<float, N> a{};
  if (!j.is_array() || j.size() != N) throw Error(ErrorCode::kParse, "json: wrong float array length");
  for (std::size_t i = 0; i < N; ++i) a[i] = static_cast<float>(j[i].get<double>());
  return a;
}

}  // namespace

std::string to_json(const Message& m) {
  json j;
  j["type"] = type_name(type_of(m));
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Hello>) {
          j["uav_id"] = uuid_to_string(x.uav_id);
          j["model"] = x.model;
          j["proto_version"] = x.proto_version;
        } else if constexpr (std::is_same_v<T, HelloAck>) {
          j["session"] = x.session;
          j["resumed"] = x.resumed;
        } else if constexpr (std::is_same_v<T, Telemetry>) {
          j["pose"] = floats(x.pose);
          j["velocity"] = floats(x.velocity);
          j["mode"] = x.mode;
          j["battery"] = x.battery;
          j["timestamp"] = x.timestamp;
        } else if constexpr (std::is_same_v<T, ScanChunk>) {
          j["timestamp"] = x.timestamp;
          j["offset"] = x.offset;
          json d = json::array(), v = json::array();
          for (float f : x.distances) d.push_back(static_cast<double>(f));
          for (bool b : x.valid) v.push_back(b);
          j["distances"] = d;
          j["valid"] = v;
        } else if constexpr (std::is_same_v<T, Task>) {
          j["task_id"] = x.task_id;
          j["kind"] = task_kind_name(x.kind);
          if (pose_kind(x.kind)) j["pose"] = floats(x.pose);
          if (x.kind == TaskKind::kSetGimbal) j["gimbal"] = floats(x.gimbal);
        } else if constexpr (std::is_same_v<T, TaskStatus>) {
          j["task_id"] = x.task_id;
          j["state"] = task_state_name(x.state);
        } else if constexpr (std::is_same_v<T, Event>) {
          j["code"] = x.code;
          j["detail"] = x.detail;
        }
      },
      m);
  return j.dump();
}

Message from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
    const std::string type = j.at("type").get<std::string>();
    if (type == "hello") {
      Hello m;
      m.uav_id = uuid_from_string(j.at("uav_id").get<std::string>());
      m.model = j.value("model", 0);
      m.proto_version = j.value("proto_version", kProtocolVersion);
      return m;
    }
    if (type == "hello_ack") return HelloAck{j.at("session").get<std::uint32_t>(), j.value("resumed", false)};
    if (type == "telemetry") {
      Telemetry m;
      m.pose = floats_from<4>(j.at("pose"));
      m.velocity = floats_from<3>(j.at("velocity"));
      m.mode = j.value("mode", 0);
      m.battery = j.value("battery", 100);
      m.timestamp = j.value("timestamp", 0.0);
      return m;
    }
    if (type == "scan_chunk") {
      ScanChunk m;
      m.timestamp = j.value("timestamp", 0.0);
      m.offset = j.value("offset", 0);
      for (const auto& d : j.at("distances")) m.distances.push_back(static_cast<float>(d.get<double>()));
      if (j.contains("valid")) {
        for (const auto& v : j.at("valid")) m.valid.push_back(v.get<bool>());
      } else {
        m.valid.assign(m.distances.size(), true);
      }
      return m;
    }
    if (type == "task") {
      Task m;
      m.task_id = j.at("task_id").get<std::uint32_t>();
      const std::string kind = j.at("kind").get<std::string>();
      bool found = false;
      for (std::uint8_t k = 0; k <= 5; ++k) {
        if (kind == task_kind_name(static_cast<TaskKind>(k))) {
          m.kind = static_cast<TaskKind>(k);
          found = true;
        }
      }
      if (!found) throw Error(ErrorCode::kParse, "json: unknown task kind '" + kind + "'");
      if (pose_kind(m.kind)) m.pose = floats_from<4>(j.at("pose"));
      if (m.kind == TaskKind::kSetGimbal) m.gimbal = floats_from<2>(j.at("gimbal"));
      return m;
    }
    if (type == "task_status") {
      TaskStatus m;
      m.task_id = j.at("task_id").get<std::uint32_t>();
      const std::string state = j.at("state").get<std::string>();
      bool found = false;
      for (std::uint8_t s = 0; s <= 4; ++s) {
        if (state == task_state_name(static_cast<TaskState>(s))) {
          m.state = static_cast<TaskState>(s);
          found = true;
        }
      }
      if (!found) throw Error(ErrorCode::kParse, "json: unknown task state '" + state + "'");
      return m;
    }
    if (type == "heartbeat") return Heartbeat{};
    if (type == "event") return Event{j.value<std::uint8_t>("code", 0), j.value("detail", std::string())};
    throw Error(ErrorCode::kParse, "json: unknown message type '" + type + "'");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("json: ") + e.what());
  }
}

}  // namespace fleetsim::protocol
