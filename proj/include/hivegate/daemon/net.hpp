#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include "hivegate/message/framing.hpp"
#include "hivegate/metrics/queue_metrics.hpp"

namespace hivegate::net {

class BindError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Address {
  std::string host;
  std::uint16_t port = 0;
  std::string str() const { return host + ":" + std::to_string(port); }
  bool operator==(const Address&) const = default;
};

inline std::optional<Address> parse_address(std::string_view s) {
  auto colon = s.rfind(':');
  if (colon == std::string_view::npos || colon == 0) return std::nullopt;
  auto port_text = s.substr(colon + 1);
  unsigned port = 0;
  auto [p, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
  if (ec != std::errc{} || p != port_text.data() + port_text.size() || port == 0 || port > 65535)
    return std::nullopt;
  return Address{std::string(s.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

// Owning file descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Socket() { close(); }

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }
  void close() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

inline void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

// Listens on host:port; port 0 picks a free port.
inline Socket listen_on(const std::string& host, std::uint16_t port, int backlog = 512) {
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!s.valid()) throw BindError(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
    throw BindError("cannot bind to '" + host + "': not an IPv4 address");
  if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
    throw BindError("cannot bind " + host + ":" + std::to_string(port) + ": " + std::strerror(errno));
  if (::listen(s.fd(), backlog) != 0) throw BindError(std::string("listen: ") + std::strerror(errno));
  return s;
}

inline std::uint16_t local_port(int fd) {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  return ntohs(addr.sin_port);
}

inline Socket connect_to(const Address& a) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (int rc = ::getaddrinfo(a.host.c_str(), std::to_string(a.port).c_str(), &hints, &res); rc != 0)
    throw IoError("resolve " + a.str() + ": " + ::gai_strerror(rc));
  Socket s;
  int err = 0;
  for (auto* ai = res; ai; ai = ai->ai_next) {
    Socket c(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
    if (!c.valid()) continue;
    if (::connect(c.fd(), ai->ai_addr, ai->ai_addrlen) == 0) {
      s = std::move(c);
      break;
    }
    err = errno;
  }
  ::freeaddrinfo(res);
  if (!s.valid()) throw IoError("connect " + a.str() + ": " + std::strerror(err));
  set_nodelay(s.fd());
  return s;
}

inline void write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    auto n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError(std::string("send: ") + std::strerror(errno));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

// Reads until the framing layer yields a message. nullopt: clean EOF before
// any byte of a new message.
inline std::optional<HttpFrame> read_frame(int fd, FramingState& state, std::vector<HttpFrame>& backlog) {
  if (!backlog.empty()) {
    auto f = std::move(backlog.front());
    backlog.erase(backlog.begin());
    return f;
  }
  char buf[16384];
  for (;;) {
    auto n = ::recv(fd, buf, sizeof buf, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError(std::string("recv: ") + std::strerror(errno));
    }
    if (n == 0) {
      if (state.buffered() == 0) return std::nullopt;
      throw IoError("connection closed mid-message");
    }
    auto frames = state.feed(std::string_view(buf, static_cast<std::size_t>(n)));
    if (frames.empty()) continue;
    auto f = std::move(frames.front());
    for (std::size_t i = 1; i < frames.size(); ++i) backlog.push_back(std::move(frames[i]));
    return f;
  }
}

// Socket-level figures from the kernel, where available.
inline TransportMetrics read_tcp_info(int fd) {
  TransportMetrics t;
#ifdef TCP_INFO
  struct tcp_info info {};
  socklen_t len = sizeof info;
  if (::getsockopt(fd, IPPROTO_TCP, TCP_INFO, &info, &len) == 0) {
    t.mean_rtt_ms = static_cast<double>(info.tcpi_rtt) / 1000.0;
    t.cwnd_bytes = static_cast<double>(info.tcpi_snd_cwnd) * static_cast<double>(info.tcpi_snd_mss);
    t.inflight_packets = static_cast<double>(info.tcpi_unacked);
  }
#endif
  return t;
}

// A persistent client connection carrying one exchange at a time.
class HttpConnection {
 public:
  explicit HttpConnection(Address a, FramingLimits limits = {}) : addr_(std::move(a)), limits_(limits) {}

  const Address& address() const noexcept { return addr_; }
  int fd() const noexcept { return sock_.fd(); }

  // Sends one serialized request and waits for its response. A connection that
  // was reused and turns out stale is reopened once.
  HttpFrame exchange(std::string_view request_bytes) {
    const bool reused = sock_.valid();
    try {
      return attempt(request_bytes);
    } catch (const IoError&) {
      if (!reused) throw;
      sock_.close();
      return attempt(request_bytes);
    }
  }

  void close() { sock_.close(); }

 private:
  HttpFrame attempt(std::string_view bytes) {
    if (!sock_.valid()) {
      sock_ = connect_to(addr_);
      state_ = FramingState(limits_);
      backlog_.clear();
    }
    try {
      write_all(sock_.fd(), bytes);
      auto f = read_frame(sock_.fd(), state_, backlog_);
      if (!f) throw IoError("upstream closed the connection");
      return std::move(*f);
    } catch (...) {
      sock_.close();
      throw;
    }
  }

  Address addr_;
  FramingLimits limits_;
  Socket sock_;
  FramingState state_;
  std::vector<HttpFrame> backlog_;
};

}  // namespace hivegate::net
