#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "protocol.hpp"

namespace fleetsim::transport {

class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now() const = 0;
};

/// Virtual time advanced explicitly by the owner; safe to read from any thread.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(double start = 0.0) : t_(start) {}
  double now() const override { return t_.load(); }
  void set(double t) { t_.store(t); }
  void advance(double dt) { t_.store(t_.load() + dt); }

 private:
  std::atomic<double> t_;
};

/// Monotonic wall clock in seconds since construction.
class SteadyClock final : public Clock {
 public:
  SteadyClock();
  double now() const override;

 private:
  std::int64_t origin_ns_;
};

/// Reliable ordered byte stream.
class Connection {
 public:
  virtual ~Connection() = default;
  /// Throws Error(kIo) when the connection is closed.
  virtual void send(std::span<const std::uint8_t> bytes) = 0;
  /// Whatever bytes are available, waiting at most timeout_ms (0 = poll).
  virtual std::vector<std::uint8_t> receive(int timeout_ms = 0) = 0;
  /// False once either side closed and no buffered bytes remain.
  virtual bool is_open() const = 0;
  virtual void close() = 0;
};

/// Two connected in-process endpoints.
std::pair<std::unique_ptr<Connection>, std::unique_ptr<Connection>> make_loopback_pair();

/// Holds received bytes back for `one_way_delay` seconds of `clock` time, so a
/// request/echo pair observes twice the delay as round-trip time.
class DelayedConnection final : public Connection {
 public:
  DelayedConnection(std::unique_ptr<Connection> inner, const Clock& clock, double one_way_delay);
  void send(std::span<const std::uint8_t> bytes) override;
  std::vector<std::uint8_t> receive(int timeout_ms = 0) override;
  bool is_open() const override;
  void close() override;
  double one_way_delay() const { return delay_; }

 private:
  void pull(int timeout_ms);

  std::unique_ptr<Connection> inner_;
  const Clock& clock_;
  double delay_;
  std::deque<std::pair<double, std::vector<std::uint8_t>>> staged_;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

/// "host:port"; throws Error(kInvalidArgument).
Endpoint parse_endpoint(const std::string& text);

class TcpConnection final : public Connection {
 public:
  explicit TcpConnection(int fd);
  ~TcpConnection() override;
  TcpConnection(const TcpConnection&) = delete;
  TcpConnection& operator=(const TcpConnection&) = delete;

  static std::unique_ptr<TcpConnection> connect(const Endpoint& ep, int timeout_ms = 2000);

  void send(std::span<const std::uint8_t> bytes) override;
  std::vector<std::uint8_t> receive(int timeout_ms = 0) override;
  bool is_open() const override { return fd_ >= 0 && !peer_closed_; }
  void close() override;

 private:
  int fd_;
  bool peer_closed_ = false;
};

class TcpListener {
 public:
  /// Port 0 picks a free port; see port().
  explicit TcpListener(const Endpoint& ep);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::unique_ptr<TcpConnection> accept(int timeout_ms = 0);
  std::uint16_t port() const { return port_; }

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

/// Connection plus frame decoder.
class Channel {
 public:
  explicit Channel(std::unique_ptr<Connection> conn) : conn_(std::move(conn)) {}

  void send(const protocol::Message& m);
  /// All complete messages currently available.
  std::vector<protocol::Message> poll(int timeout_ms = 0);
  bool is_open() const { return conn_ && conn_->is_open(); }
  void close() {
    if (conn_) conn_->close();
  }
  const protocol::Decoder& decoder() const { return decoder_; }
  std::uint64_t bytes_sent() const { return bytes_sent_; }
  std::uint64_t bytes_received() const { return bytes_received_; }

 private:
  std::unique_ptr<Connection> conn_;
  protocol::Decoder decoder_;
  std::uint64_t bytes_sent_ = 0;
  std::uint64_t bytes_received_ = 0;
};

}  // namespace fleetsim::transport
