#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace fleetsim::protocol {

inline constexpr std::uint8_t kMagic0 = 0xDA;
inline constexpr std::uint8_t kMagic1 = 0x7A;
inline constexpr std::size_t kHeaderSize = 7;  // magic(2) + length(4) + type(1)
inline constexpr std::uint32_t kMaxFrameLength = 1u << 20;
inline constexpr std::uint16_t kProtocolVersion = 1;
inline constexpr std::size_t kMaxEventDetail = 4096;
inline constexpr std::size_t kScanBins = 360;

enum class MessageType : std::uint8_t {
  kHello = 0x01,
  kHelloAck = 0x02,
  kTelemetry = 0x03,
  kScanChunk = 0x04,
  kTask = 0x05,
  kTaskStatus = 0x06,
  kHeartbeat = 0x07,
  kEvent = 0x08,
};

using Uuid = std::array<std::uint8_t, 16>;

struct Hello {
  Uuid uav_id{};
  std::uint8_t model = 0;
  std::uint16_t proto_version = kProtocolVersion;
  bool operator==(const Hello&) const = default;
};

struct HelloAck {
  std::uint32_t session = 0;
  bool resumed = false;
  bool operator==(const HelloAck&) const = default;
};

/// Pose and velocity in the sender's local frame.
struct Telemetry {
  std::array<float, 4> pose{};  // x, y, z, yaw
  std::array<float, 3> velocity{};
  std::uint8_t mode = 0;
  std::uint8_t battery = 100;
  double timestamp = 0.0;
  bool operator==(const Telemetry&) const = default;
};

/// Bins [offset, offset + count) of a body-frame scan.
struct ScanChunk {
  double timestamp = 0.0;
  std::uint16_t offset = 0;
  std::vector<float> distances;
  std::vector<bool> valid;  // same length as distances
  bool operator==(const ScanChunk&) const = default;
};

enum class TaskKind : std::uint8_t {
  kGoto = 0,
  kCarrotUpdate = 1,
  kArmDoorTraversal = 2,
  kAbort = 3,
  kSetGimbal = 4,
  kHold = 5,
};

struct Task {
  std::uint32_t task_id = 0;
  TaskKind kind = TaskKind::kGoto;
  std::array<float, 4> pose{};    // goto / carrot_update: x, y, z, yaw
  std::array<float, 2> gimbal{};  // set_gimbal: pitch, yaw
  bool operator==(const Task&) const = default;
};

enum class TaskState : std::uint8_t { kAccepted = 0, kActive = 1, kReached = 2, kBlocked = 3, kAborted = 4 };

struct TaskStatus {
  std::uint32_t task_id = 0;
  TaskState state = TaskState::kAccepted;
  bool operator==(const TaskStatus&) const = default;
};

struct Heartbeat {
  bool operator==(const Heartbeat&) const = default;
};

enum class EventCode : std::uint8_t {
  kInfo = 0,
  kTargetReached = 1,
  kBlocked = 2,
  kAborted = 3,
  kClearanceLost = 4,
  kVersionRejected = 5,
  kSessionReplaced = 6,
  kUnknownFrame = 7,
  kDoorDetected = 8,
  kReactivated = 9,
  kMissionPaused = 10,
  kMissionResumed = 11,
  kMissionCompleted = 12,
  kMissionFailed = 13,
};

struct Event {
  std::uint8_t code = 0;
  std::string detail;
  bool operator==(const Event&) const = default;
};

using Message = std::variant<Hello, HelloAck, Telemetry, ScanChunk, Task, TaskStatus, Heartbeat, Event>;

MessageType type_of(const Message& m);
const char* type_name(MessageType t);

/// Full frame. Throws Error(kEncode) for out-of-range fields.
std::vector<std::uint8_t> encode(const Message& m);

/// Incremental frame parser. Partial input is buffered; corrupt frames are
/// skipped one byte at a time until the next magic.
class Decoder {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  /// Next complete message, or nullopt when more bytes are needed.
  std::optional<Message> next();

  std::size_t buffered() const { return buffer_.size() - read_; }
  std::uint64_t discarded_bytes() const { return discarded_; }
  std::uint64_t rejected_frames() const { return rejected_; }
  std::uint64_t unknown_frames() const { return unknown_; }
  std::optional<std::uint8_t> last_unknown_type() const { return last_unknown_; }

 private:
  void drop(std::size_t n);
  void compact();

  std::vector<std::uint8_t> buffer_;
  std::size_t read_ = 0;
  std::uint64_t discarded_ = 0;
  std::uint64_t rejected_ = 0;
  std::uint64_t unknown_ = 0;
  std::optional<std::uint8_t> last_unknown_;
};

/// Decodes a buffer holding exactly the given frames; throws Error(kParse) otherwise.
std::vector<Message> decode_all(std::span<const std::uint8_t> bytes);

std::string to_hex(std::span<const std::uint8_t> bytes, bool spaced = true);
/// Accepts whitespace between byte pairs; throws Error(kParse) on bad digits.
std::vector<std::uint8_t> from_hex(const std::string& text);

std::string uuid_to_string(const Uuid& id);
Uuid uuid_from_string(const std::string& s);
/// Deterministic UUID for a fleet index (simulation convenience).
Uuid uuid_for_index(std::uint32_t index);

/// JSON form used by the CLI and the C API: {"type": "...", ...fields}.
std::string to_json(const Message& m);
Message from_json(const std::string& text);

}  // namespace fleetsim::protocol
