#include "transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <thread>

#include "error.hpp"

namespace fleetsim::transport {

namespace {

std::int64_t steady_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

[[noreturn]] void io_error(const std::string& what) {
  throw Error(ErrorCode::kIo, what + ": " + std::strerror(errno));
}

struct Pipe {
  std::deque<std::uint8_t> bytes;
  bool writer_closed = false;
};

struct LoopbackShared {
  std::mutex mu;
  std::condition_variable cv;
  Pipe pipes[2];  // pipes[i] is read by endpoint i
};

class LoopbackConnection final : public Connection {
 public:
  LoopbackConnection(std::shared_ptr<LoopbackShared> shared, int side) : shared_(std::move(shared)), side_(side) {}
  ~LoopbackConnection() override { close(); }

  void send(std::span<const std::uint8_t> bytes) override {
    {
      std::lock_guard lock(shared_->mu);
      Pipe& out = shared_->pipes[1 - side_];
      if (closed_ || out.writer_closed || shared_->pipes[side_].writer_closed) {
        errno = EPIPE;
        io_error("loopback send");
      }
      out.bytes.insert(out.bytes.end(), bytes.begin(), bytes.end());
    }
    shared_->cv.notify_all();
  }

  std::vector<std::uint8_t> receive(int timeout_ms) override {
    std::unique_lock lock(shared_->mu);
    Pipe& in = shared_->pipes[side_];
    if (timeout_ms > 0) {
      shared_->cv.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                           [&] { return !in.bytes.empty() || in.writer_closed || closed_; });
    }
    std::vector<std::uint8_t> out(in.bytes.begin(), in.bytes.end());
    in.bytes.clear();
    return out;
  }

  bool is_open() const override {
    std::lock_guard lock(shared_->mu);
    const Pipe& in = shared_->pipes[side_];
    return !closed_ && !(in.writer_closed && in.bytes.empty());
  }

  void close() override {
    {
      std::lock_guard lock(shared_->mu);
      if (closed_) return;
      closed_ = true;
      shared_->pipes[1 - side_].writer_closed = true;
    }
    shared_->cv.notify_all();
  }

 private:
  std::shared_ptr<LoopbackShared> shared_;
  int side_;
  bool closed_ = false;
};

}  // namespace

SteadyClock::SteadyClock() : origin_ns_(steady_ns()) {}

double SteadyClock::now() const { return static_cast<double>(steady_ns() - origin_ns_) * 1e-9; }

std::pair<std::unique_ptr<Connection>, std::unique_ptr<Connection>> make_loopback_pair() {
  auto shared = std::make_shared<LoopbackShared>();
  return {std::make_unique<LoopbackConnection>(shared, 0), std::make_unique<LoopbackConnection>(shared, 1)};
}

DelayedConnection::DelayedConnection(std::unique_ptr<Connection> inner, const Clock& clock, double one_way_delay)
    : inner_(std::move(inner)), clock_(clock), delay_(one_way_delay) {
  if (!(one_way_delay >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "DelayedConnection: negative delay");
}

void DelayedConnection::send(std::span<const std::uint8_t> bytes) { inner_->send(bytes); }

void DelayedConnection::pull(int timeout_ms) {
  auto bytes = inner_->receive(timeout_ms);
  if (!bytes.empty()) staged_.emplace_back(clock_.now() + delay_, std::move(bytes));
}

std::vector<std::uint8_t> DelayedConnection::receive(int timeout_ms) {
  pull(0);
  // With a wall clock, wait out the delay of already staged bytes.
  if (timeout_ms > 0 && !staged_.empty() && staged_.front().first > clock_.now()) {
    const double wait = std::min(staged_.front().first - clock_.now(), timeout_ms * 1e-3);
    const auto until = steady_ns() + static_cast<std::int64_t>(wait * 1e9);
    while (steady_ns() < until) {
      pull(0);
      std::this_thread::yield();
    }
  } else if (timeout_ms > 0 && staged_.empty()) {
    pull(timeout_ms);
  }
  std::vector<std::uint8_t> out;
  const double now = clock_.now();
  while (!staged_.empty() && staged_.front().first <= now + 1e-12) {
    auto& chunk = staged_.front().second;
    out.insert(out.end(), chunk.begin(), chunk.end());
    staged_.pop_front();
  }
  return out;
}

bool DelayedConnection::is_open() const { return inner_->is_open() || !staged_.empty(); }

void DelayedConnection::close() { inner_->close(); }

Endpoint parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon + 1 == text.size()) {
    throw Error(ErrorCode::kInvalidArgument, "endpoint must be host:port, got '" + text + "'");
  }
  Endpoint ep;
  ep.host = text.substr(0, colon);
  if (ep.host.empty()) ep.host = "0.0.0.0";
  try {
    std::size_t used = 0;
    const int port = std::stoi(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1 || port < 0 || port > 65535) throw std::out_of_range("port");
    ep.port = static_cast<std::uint16_t>(port);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument, "bad port in endpoint '" + text + "'");
  }
  return ep;
}

namespace {

sockaddr_in resolve(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  if (inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(ep.host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw Error(ErrorCode::kIo, "cannot resolve host '" + ep.host + "'");
  }
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return addr;
}

void set_nonblocking(int fd) { fcntl(fd, F_SETFL, fcntl(fd, F_GETFL, 0) | O_NONBLOCK); }

void set_nodelay(int fd) {
  int one = 1;
  setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

}  // namespace

TcpConnection::TcpConnection(int fd) : fd_(fd) {
  set_nonblocking(fd_);
  set_nodelay(fd_);
}

TcpConnection::~TcpConnection() { close(); }

std::unique_ptr<TcpConnection> TcpConnection::connect(const Endpoint& ep, int timeout_ms) {
  const sockaddr_in addr = resolve(ep);
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) io_error("socket");
  set_nonblocking(fd);
  if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0 && errno != EINPROGRESS) {
    const int saved = errno;
    ::close(fd);
    errno = saved;
    io_error("connect " + ep.host + ":" + std::to_string(ep.port));
  }
  pollfd p{fd, POLLOUT, 0};
  if (::poll(&p, 1, timeout_ms) != 1) {
    ::close(fd);
    errno = ETIMEDOUT;
    io_error("connect " + ep.host + ":" + std::to_string(ep.port));
  }
  int err = 0;
  socklen_t len = sizeof err;
  getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
  if (err != 0) {
    ::close(fd);
    errno = err;
    io_error("connect " + ep.host + ":" + std::to_string(ep.port));
  }
  return std::make_unique<TcpConnection>(fd);
}

void TcpConnection::send(std::span<const std::uint8_t> bytes) {
  if (fd_ < 0) {
    errno = EBADF;
    io_error("tcp send");
  }
  std::size_t off = 0;
  while (off < bytes.size()) {
    const ssize_t n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (n > 0) {
      off += static_cast<std::size_t>(n);
    } else if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
      pollfd p{fd_, POLLOUT, 0};
      ::poll(&p, 1, 100);
    } else if (n < 0 && errno == EINTR) {
      continue;
    } else {
      peer_closed_ = true;
      io_error("tcp send");
    }
  }
}

std::vector<std::uint8_t> TcpConnection::receive(int timeout_ms) {
  std::vector<std::uint8_t> out;
  if (fd_ < 0 || peer_closed_) return out;
  pollfd p{fd_, POLLIN, 0};
  if (::poll(&p, 1, timeout_ms) <= 0) return out;
  std::uint8_t buf[65536];
  for (;;) {
    const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
    if (n > 0) {
      out.insert(out.end(), buf, buf + n);
      continue;
    }
    if (n == 0) {
      peer_closed_ = true;
    } else if (errno == EINTR) {
      continue;
    } else if (errno != EAGAIN && errno != EWOULDBLOCK) {
      peer_closed_ = true;
    }
    break;
  }
  return out;
}

void TcpConnection::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

TcpListener::TcpListener(const Endpoint& ep) {
  const sockaddr_in addr = resolve(ep);
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) io_error("socket");
  int one = 1;
  setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
    const int saved = errno;
    ::close(fd_);
    errno = saved;
    io_error("bind " + ep.host + ":" + std::to_string(ep.port));
  }
  if (::listen(fd_, 16) != 0) io_error("listen");
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
  set_nonblocking(fd_);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<TcpConnection> TcpListener::accept(int timeout_ms) {
  pollfd p{fd_, POLLIN, 0};
  if (::poll(&p, 1, timeout_ms) <= 0) return nullptr;
  const int fd = ::accept(fd_, nullptr, nullptr);
  if (fd < 0) return nullptr;
  return std::make_unique<TcpConnection>(fd);
}

void Channel::send(const protocol::Message& m) {
  const auto bytes = protocol::encode(m);
  conn_->send(bytes);
  bytes_sent_ += bytes.size();
}

std::vector<protocol::Message> Channel::poll(int timeout_ms) {
  std::vector<protocol::Message> out;
  if (!conn_) return out;
  const auto bytes = conn_->receive(timeout_ms);
  bytes_received_ += bytes.size();
  decoder_.feed(bytes);
  while (auto m = decoder_.next()) out.push_back(std::move(*m));
  return out;
}

}  // namespace fleetsim::transport
