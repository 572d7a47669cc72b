#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include <httplib.h>

#include "hivegate/callback/dispatcher.hpp"

namespace hivegate {

struct EndpointUrl {
  std::string scheme_host_port;  // "http://host:port"
  std::string path = "/";
};

inline std::optional<EndpointUrl> parse_endpoint(std::string_view url) {
  constexpr std::string_view scheme = "http://";
  if (url.substr(0, scheme.size()) != scheme) return std::nullopt;
  auto rest = url.substr(scheme.size());
  auto slash = rest.find('/');
  auto authority = rest.substr(0, slash);
  if (authority.empty()) return std::nullopt;
  for (char c : authority)
    if (std::isspace(static_cast<unsigned char>(c))) return std::nullopt;
  EndpointUrl out;
  out.scheme_host_port = std::string(scheme) + std::string(authority);
  if (slash != std::string_view::npos) out.path = std::string(rest.substr(slash));
  return out;
}

// Posts callback jobs from a small worker pool so callers never wait on the
// network.
class HttpCallbackTransport final : public CallbackTransport {
 public:
  explicit HttpCallbackTransport(const Clock& clock, std::size_t workers = 4) : clock_(clock) {
    for (std::size_t i = 0; i < workers; ++i) threads_.emplace_back([this] { work(); });
  }

  ~HttpCallbackTransport() override { stop(); }

  void stop() {
    {
      std::lock_guard lk(mu_);
      if (stopping_) return;
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_)
      if (t.joinable()) t.join();
  }

  void send(const CallbackJob& job, std::function<void(CallbackOutcome)> done) override {
    {
      std::lock_guard lk(mu_);
      if (stopping_) {
        done({false, 0, {}, "transport stopped"});
        return;
      }
      jobs_.push_back({job, std::move(done)});
    }
    cv_.notify_one();
  }

 private:
  struct Item {
    CallbackJob job;
    std::function<void(CallbackOutcome)> done;
  };

  void work() {
    for (;;) {
      Item item;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [this] { return stopping_ || !jobs_.empty(); });
        if (jobs_.empty()) return;
        item = std::move(jobs_.front());
        jobs_.pop_front();
      }
      item.done(deliver(item.job));
    }
  }

  CallbackOutcome deliver(const CallbackJob& job) {
    auto url = parse_endpoint(job.endpoint);
    if (!url) return {false, 0, {}, "bad endpoint " + job.endpoint};
    auto remaining = std::chrono::duration_cast<Millis>(job.deadline - clock_.now());
    if (remaining <= Millis{0}) return {false, 0, {}, "deadline passed before delivery"};
    httplib::Client cli(url->scheme_host_port);
    cli.set_connection_timeout(remaining);
    cli.set_read_timeout(remaining);
    cli.set_write_timeout(remaining);
    httplib::Headers headers;
    const bool transform = job.kind == CallbackKind::Transform;
    if (transform) headers.emplace("X-Transform-Args", job.args);
    auto res = cli.Post(url->path, headers, job.body,
                        transform ? "application/octet-stream" : "text/plain");
    if (!res) return {false, 0, {}, httplib::to_string(res.error())};
    CallbackOutcome out;
    out.status = res->status;
    out.ok = res->status >= 200 && res->status < 300;
    out.body = std::move(res->body);
    return out;
  }

  const Clock& clock_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Item> jobs_;
  bool stopping_ = false;
  std::vector<std::thread> threads_;
};

}  // namespace hivegate
