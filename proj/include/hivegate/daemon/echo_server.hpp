#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <mutex>
#include <set>
#include <thread>

#include "hivegate/daemon/net.hpp"

namespace hivegate {

// A small upstream for tests and benchmarks: answers every request with its
// own body, or with the request exactly as received in mirror mode.
class EchoServer {
 public:
  struct Options {
    std::string bind = "127.0.0.1";
    std::uint16_t port = 0;
    bool mirror = false;
    std::chrono::microseconds delay{0};
    std::string name = "echo";
  };

  explicit EchoServer(Options o) : opts_(std::move(o)) {
    listener_ = net::listen_on(opts_.bind, opts_.port);
    port_ = net::local_port(listener_.fd());
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  EchoServer() : EchoServer(Options{}) {}

  ~EchoServer() { stop(); }

  std::uint16_t port() const noexcept { return port_; }
  net::Address address() const { return {opts_.bind, port_}; }
  std::uint64_t requests() const noexcept { return requests_.load(); }

  void stop() {
    if (stopping_.exchange(true)) return;
    ::shutdown(listener_.fd(), SHUT_RDWR);
    if (accept_thread_.joinable()) accept_thread_.join();
    {
      std::lock_guard lk(mu_);
      for (int fd : fds_) ::shutdown(fd, SHUT_RDWR);
    }
    std::unique_lock lk(mu_);
    done_.wait(lk, [this] { return active_ == 0; });
  }

 private:
  void accept_loop() {
    while (!stopping_) {
      int fd = ::accept4(listener_.fd(), nullptr, nullptr, SOCK_CLOEXEC);
      if (fd < 0) {
        if (errno == EINTR) continue;
        return;
      }
      net::set_nodelay(fd);
      {
        std::lock_guard lk(mu_);
        fds_.insert(fd);
        ++active_;
      }
      std::thread([this, fd] { serve(fd); }).detach();
    }
  }

  void serve(int fd) {
    net::Socket sock(fd);
    FramingState fs;
    std::vector<HttpFrame> backlog;
    try {
      while (auto f = net::read_frame(fd, fs, backlog)) {
        requests_.fetch_add(1);
        if (opts_.delay.count() > 0) std::this_thread::sleep_for(opts_.delay);
        HttpFrame r;
        r.start.is_response = true;
        r.start.status = 200;
        r.start.reason = "OK";
        if (opts_.mirror) {
          r.body = serialize(*f);
          r.headers.set("Content-Type", "message/http");
        } else {
          r.body = f->body;
          if (auto ct = f->headers.get("Content-Type")) r.headers.set("Content-Type", std::string(*ct));
        }
        r.headers.set("Server", opts_.name);
        r.headers.set("Content-Length", std::to_string(r.body.size()));
        net::write_all(fd, serialize(r));
      }
    } catch (const std::exception&) {
    }
    std::lock_guard lk(mu_);
    fds_.erase(fd);
    if (--active_ == 0) done_.notify_all();
  }

  Options opts_;
  net::Socket listener_;
  std::uint16_t port_ = 0;
  std::thread accept_thread_;
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> requests_{0};
  std::mutex mu_;
  std::condition_variable done_;
  std::set<int> fds_;
  int active_ = 0;
};

}  // namespace hivegate
