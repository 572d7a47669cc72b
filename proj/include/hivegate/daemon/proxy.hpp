#pragma once

#include <atomic>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "hivegate/daemon/manifest.hpp"
#include "hivegate/policy/engine.hpp"

namespace hivegate {

struct ProxyOptions {
  bool passthrough = false;                // no queues, no policies
  std::optional<std::uint16_t> admin_port;  // overrides the manifest
  std::size_t callback_workers = 4;
  bool ephemeral_ports = false;  // bind every enabled listener to a free port
};

namespace detail {

inline bool connection_lists(const Headers& h, std::string_view token) {
  for (auto v : h.get_all("Connection")) {
    while (!v.empty()) {
      auto comma = v.find(',');
      auto item = trim_ows(v.substr(0, comma));
      if (iequals(item, token)) return true;
      if (comma == std::string_view::npos) break;
      v.remove_prefix(comma + 1);
    }
  }
  return false;
}

// Removes hop-by-hop fields, including any named by Connection.
inline void strip_hop_by_hop(Headers& h) {
  std::vector<std::string> named;
  for (auto v : h.get_all("Connection")) {
    while (!v.empty()) {
      auto comma = v.find(',');
      auto item = trim_ows(v.substr(0, comma));
      if (!item.empty()) named.emplace_back(item);
      if (comma == std::string_view::npos) break;
      v.remove_prefix(comma + 1);
    }
  }
  for (const char* n : {"Connection", "Keep-Alive", "Proxy-Connection", "Proxy-Authenticate",
                        "Proxy-Authorization", "TE", "Trailer", "Transfer-Encoding", "Upgrade"})
    h.remove(n);
  for (const auto& n : named)
    if (!iequals(n, "Content-Length")) h.remove(n);
}

inline bool wants_close(const HttpFrame& f) {
  if (connection_lists(f.headers, "close")) return true;
  return f.start.version == "HTTP/1.0" && !connection_lists(f.headers, "keep-alive");
}

inline HttpFrame simple_response(int status, std::string reason, std::string body) {
  HttpFrame f;
  f.start.is_response = true;
  f.start.status = status;
  f.start.reason = std::move(reason);
  f.body = std::move(body);
  f.headers.set("Content-Type", "text/plain");
  f.headers.set("Content-Length", std::to_string(f.body.size()));
  return f;
}

// Logical destination named by the request: absolute-form target first, then Host.
inline std::string requested_host(HttpFrame& f) {
  auto& target = f.start.target;
  if (target.rfind("http://", 0) == 0) {
    auto rest = target.substr(7);
    auto slash = rest.find('/');
    auto authority = rest.substr(0, slash);
    target = slash == std::string::npos ? "/" : rest.substr(slash);
    return authority.substr(0, authority.find(':'));
  }
  auto host = f.headers.get("Host");
  if (!host) return {};
  auto h = std::string(*host);
  return h.substr(0, h.find(':'));
}

}  // namespace detail

// Where a client connection waits while its request, and then the response,
// pass through the queues.
class PendingExchange {
 public:
  enum class Stage { Waiting, Released, Dropped, Aborted };

  void signal(Stage s, MessagePtr m) {
    {
      std::lock_guard lk(mu_);
      if (stage_ != Stage::Waiting) return;
      stage_ = s;
      msg_ = std::move(m);
    }
    cv_.notify_one();
  }

  std::pair<Stage, MessagePtr> wait() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [this] { return stage_ != Stage::Waiting; });
    auto out = std::make_pair(stage_, std::move(msg_));
    stage_ = Stage::Waiting;
    return out;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  Stage stage_ = Stage::Waiting;
  MessagePtr msg_;
};

class ClientSink final : public MessageSink {
 public:
  explicit ClientSink(std::shared_ptr<PendingExchange> p) : pending_(std::move(p)) {}
  void on_dropped(const MessagePtr& m) override { pending_->signal(PendingExchange::Stage::Dropped, m); }
  PendingExchange& pending() const noexcept { return *pending_; }

 private:
  std::shared_ptr<PendingExchange> pending_;
};

// Idle keep-alive connections per upstream.
class UpstreamPool {
 public:
  UpstreamPool(std::map<std::string, net::Address> upstreams, FramingLimits limits)
      : limits_(limits) {
    for (auto& [name, addr] : upstreams) pools_[name].addr = addr;
  }

  const net::Address* address(const std::string& name) const {
    auto it = pools_.find(name);
    return it == pools_.end() ? nullptr : &it->second.addr;
  }

  HttpFrame exchange(const std::string& name, const HttpFrame& request, TransportMetrics* transport = nullptr) {
    auto it = pools_.find(name);
    if (it == pools_.end()) throw net::IoError("unknown upstream '" + name + "'");
    auto& pool = it->second;
    std::unique_ptr<net::HttpConnection> c;
    {
      std::lock_guard lk(pool.mu);
      if (!pool.idle.empty()) {
        c = std::move(pool.idle.back());
        pool.idle.pop_back();
      }
    }
    if (!c) c = std::make_unique<net::HttpConnection>(pool.addr, limits_);
    HttpFrame out = c->exchange(serialize(request));
    if (transport) *transport = net::read_tcp_info(c->fd());
    if (!detail::wants_close(out)) {
      std::lock_guard lk(pool.mu);
      if (pool.idle.size() < 64) pool.idle.push_back(std::move(c));
    }
    return out;
  }

 private:
  struct Pool {
    net::Address addr;
    std::mutex mu;
    std::vector<std::unique_ptr<net::HttpConnection>> idle;
  };
  FramingLimits limits_;
  std::map<std::string, Pool> pools_;
};

// Runs a queue drain when its token bucket will allow the head through.
class DrainTimer {
 public:
  DrainTimer(const Clock& clock, std::function<void(const QueuePtr&)> fire, std::function<void()> tick)
      : clock_(clock), fire_(std::move(fire)), tick_(std::move(tick)), thread_([this] { loop(); }) {}

  ~DrainTimer() { stop(); }

  void arm(const QueuePtr& q, Timestamp at) {
    {
      std::lock_guard lk(mu_);
      auto& slot = armed_[q.get()];
      if (slot.queue && slot.at <= at) return;
      slot = {q, at};
    }
    cv_.notify_one();
  }

  void stop() {
    {
      std::lock_guard lk(mu_);
      if (stopping_) return;
      stopping_ = true;
    }
    cv_.notify_one();
    if (thread_.joinable()) thread_.join();
  }

 private:
  struct Slot {
    QueuePtr queue;
    Timestamp at{};
  };

  void loop() {
    constexpr Millis kTick{5};
    std::unique_lock lk(mu_);
    while (!stopping_) {
      const auto now = clock_.now();
      std::vector<QueuePtr> due;
      Timestamp next = now + kTick;
      for (auto it = armed_.begin(); it != armed_.end();) {
        if (it->second.at <= now) {
          due.push_back(std::move(it->second.queue));
          it = armed_.erase(it);
        } else {
          next = std::min(next, it->second.at);
          ++it;
        }
      }
      lk.unlock();
      for (const auto& q : due) fire_(q);
      if (tick_) tick_();
      lk.lock();
      if (!due.empty()) continue;
      cv_.wait_for(lk, next - clock_.now());
    }
  }

  const Clock& clock_;
  std::function<void(const QueuePtr&)> fire_;
  std::function<void()> tick_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::unordered_map<RouteQueue*, Slot> armed_;
  bool stopping_ = false;
  std::thread thread_;
};

struct ProxyStats {
  std::atomic<std::uint64_t> requests{0};
  std::atomic<std::uint64_t> responses{0};
  std::atomic<std::uint64_t> dropped{0};
  std::atomic<std::uint64_t> rejected{0};
  std::atomic<std::uint64_t> upstream_errors{0};
  std::atomic<std::uint64_t> bad_requests{0};
};

// The daemon: listeners feed the queue manager, per-queue drains hand
// forwardable messages back to the connection that owns them, and the admin
// server reports on the queues.
class Proxy {
 public:
  enum class Side { Egress, Ingress };

  explicit Proxy(Manifest manifest, ProxyOptions options = {})
      : manifest_(std::move(manifest)),
        options_(options),
        limits_{manifest_.max_payload, FramingLimits{}.max_head},
        qm_(manifest_.queues, QueueConfig{}, clock_),
        transport_(clock_, options.callback_workers),
        dispatcher_(qm_, transport_, manifest_.callbacks),
        upstreams_(manifest_.upstreams, limits_) {
    EngineOptions eo;
    eo.callbacks = manifest_.callbacks;
    eo.destination_exists = [this](std::string_view n) { return manifest_.has_upstream(n); };
    engine_ = std::make_unique<PolicyEngine>(qm_, std::move(eo));
    engine_->set_dispatcher(&dispatcher_);
    engine_->set_bindings(manifest_.bindings);
    qm_.set_ready_hook([this](RouteQueue& q) { drain(q); });
    qm_.set_fallback_sink(std::make_shared<MessageSink>());
    for (const auto& w : manifest_.warnings) spdlog::warn("{}: {}", w.where, w.message);
  }

  Proxy(const Proxy&) = delete;
  Proxy& operator=(const Proxy&) = delete;

  ~Proxy() { stop(Millis{0}); }

  // Binds every listener; throws net::BindError.
  void start() {
    const auto& l = manifest_.listen;
    auto port = [&](std::uint16_t p) { return options_.ephemeral_ports ? std::uint16_t{0} : p; };
    if (l.egress_port) listeners_.push_back({Side::Egress, net::listen_on(l.bind, port(l.egress_port))});
    if (l.ingress_port) listeners_.push_back({Side::Ingress, net::listen_on(l.bind, port(l.ingress_port))});
    start_admin(port(options_.admin_port.value_or(l.admin_port)));
    timer_ = std::make_unique<DrainTimer>(
        clock_, [this](const QueuePtr& q) { drain(*q); }, [this] { dispatcher_.expire(clock_.now()); });
    for (auto& li : listeners_) {
      auto* lp = &li;
      accept_threads_.emplace_back([this, lp] { accept_loop(*lp); });
    }
    spdlog::info("hivegate up: egress {} ingress {} admin {}{}", egress_port(), ingress_port(), admin_port(),
                 options_.passthrough ? " (passthrough)" : "");
  }

  // Stops accepting, lets queues drain for up to `grace`, drops what is left
  // and waits for connections to finish.
  void stop(std::optional<Millis> grace = std::nullopt) {
    if (stopped_.exchange(true)) return;
    stopping_ = true;
    for (auto& li : listeners_) ::shutdown(li.sock.fd(), SHUT_RDWR);
    for (auto& t : accept_threads_)
      if (t.joinable()) t.join();

    const auto deadline = std::chrono::steady_clock::now() + grace.value_or(manifest_.shutdown_grace);
    while (std::chrono::steady_clock::now() < deadline && backlog() > 0)
      std::this_thread::sleep_for(Millis{5});
    const auto left = drop_all();
    if (left) spdlog::warn("shutdown dropped {} queued messages", left);

    {
      std::lock_guard lk(conn_mu_);
      for (int fd : conn_fds_) ::shutdown(fd, SHUT_RD);
    }
    {
      std::unique_lock lk(conn_mu_);
      if (!conn_done_.wait_for(lk, std::chrono::seconds(10), [this] { return active_conns_ == 0; })) {
        for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
        conn_done_.wait(lk, [this] { return active_conns_ == 0; });
      }
    }
    if (admin_) admin_->stop();
    if (admin_thread_.joinable()) admin_thread_.join();
    if (timer_) timer_->stop();
    transport_.stop();
  }

  std::uint16_t egress_port() const { return port_of(Side::Egress); }
  std::uint16_t ingress_port() const { return port_of(Side::Ingress); }
  std::uint16_t admin_port() const noexcept { return admin_port_; }

  QueueManager& queues() noexcept { return qm_; }
  PolicyEngine& engine() noexcept { return *engine_; }
  CallbackDispatcher& dispatcher() noexcept { return dispatcher_; }
  const ProxyStats& stats() const noexcept { return stats_; }
  const Clock& clock() const noexcept { return clock_; }

  // Re-reads the manifest file and swaps in its policies. Messages already
  // queued keep whatever ran on them; queue and listener settings need a restart.
  std::vector<Diagnostic> reload() {
    if (manifest_.path.empty())
      throw ConfigError({{Diagnostic::Severity::Error, "", "proxy was not started from a manifest file"}});
    auto fresh = load_manifest(manifest_.path);
    engine_->set_bindings(fresh.bindings);
    spdlog::info("reloaded {} policy bindings from {}", fresh.bindings.size(), manifest_.path.string());
    return fresh.warnings;
  }

  // One line per queue: route_key observed_bw avg_latency_ms length.
  std::string metrics_text() const {
    std::ostringstream out;
    const auto now = clock_.now();
    for (const auto& q : qm_.queues()) {
      auto lk = q->lock();
      out << q->key() << ' ' << lua_number_string(q->metrics().observed_bw(now)) << ' '
          << lua_number_string(q->metrics().avg_latency_ms()) << ' ' << q->length() << '\n';
    }
    return out.str();
  }

  nlohmann::json queues_json() const {
    auto arr = nlohmann::json::array();
    const auto now = clock_.now();
    for (const auto& q : qm_.queues()) {
      auto lk = q->lock();
      nlohmann::json j{{"route", q->key()},
                       {"length", q->length()},
                       {"max_length", q->config().max_length},
                       {"observed_bw", q->metrics().observed_bw(now)},
                       {"avg_latency_ms", q->metrics().avg_latency_ms()},
                       {"latency_samples", q->metrics().latency_samples()}};
      j["rate_kb_per_s"] = q->config().rate_kb_per_s ? nlohmann::json(*q->config().rate_kb_per_s) : nlohmann::json();
      const auto& t = q->metrics().transport;
      if (t.mean_rtt_ms) j["mean_rtt_ms"] = *t.mean_rtt_ms;
      if (t.cwnd_bytes) j["cwnd_bytes"] = *t.cwnd_bytes;
      if (t.inflight_packets) j["inflight_packets"] = *t.inflight_packets;
      arr.push_back(std::move(j));
    }
    return arr;
  }

  nlohmann::json stats_json() const {
    auto e = engine_->stats();
    auto c = dispatcher_.stats();
    return {{"requests", stats_.requests.load()},
            {"responses", stats_.responses.load()},
            {"dropped", stats_.dropped.load()},
            {"rejected", stats_.rejected.load()},
            {"upstream_errors", stats_.upstream_errors.load()},
            {"bad_requests", stats_.bad_requests.load()},
            {"policy_executions", e.executions},
            {"policy_errors", e.program_errors + e.budget_exceeded},
            {"transforms_completed", c.transforms_completed},
            {"transforms_reverted", c.transforms_reverted},
            {"notify_sent", c.notify_sent}};
  }

 private:
  struct Listener {
    Side side;
    net::Socket sock;
  };

  struct DrainRole {
    std::atomic<bool> busy{false};
    std::atomic<bool> again{false};
  };

  std::uint16_t port_of(Side s) const {
    for (const auto& l : listeners_)
      if (l.side == s) return net::local_port(l.sock.fd());
    return 0;
  }

  void start_admin(std::uint16_t port) {
    admin_ = std::make_unique<httplib::Server>();
    admin_->Get("/metrics", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(metrics_text(), "text/plain");
    });
    admin_->Get("/queues", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(queues_json().dump(2), "application/json");
    });
    admin_->Get("/stats", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(stats_json().dump(2), "application/json");
    });
    admin_->Post("/policies/reload", [this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json out;
      try {
        auto warnings = reload();
        out["status"] = "reloaded";
        out["bindings"] = engine_->bindings()->bindings().size();
        for (const auto& w : warnings) out["warnings"].push_back(w.where + ": " + w.message);
        res.status = 200;
      } catch (const ConfigError& e) {
        out["status"] = "rejected";
        for (const auto& d : e.diagnostics())
          out[d.severity == Diagnostic::Severity::Error ? "errors" : "warnings"].push_back(
              (d.where.empty() ? "" : d.where + ": ") + d.message);
        res.status = 400;
      }
      res.set_content(out.dump(2), "application/json");
    });
    const auto& bind = manifest_.listen.bind;
    if (port == 0) {
      int p = admin_->bind_to_any_port(bind);
      if (p < 0) throw net::BindError("cannot bind admin port on " + bind);
      admin_port_ = static_cast<std::uint16_t>(p);
    } else {
      if (!admin_->bind_to_port(bind, port))
        throw net::BindError("cannot bind admin port " + bind + ":" + std::to_string(port));
      admin_port_ = port;
    }
    admin_thread_ = std::thread([this] { admin_->listen_after_bind(); });
  }

  void accept_loop(Listener& l) {
    while (!stopping_) {
      int fd = ::accept4(l.sock.fd(), nullptr, nullptr, SOCK_CLOEXEC);
      if (fd < 0) {
        if (errno == EINTR || errno == ECONNABORTED) continue;
        return;
      }
      net::set_nodelay(fd);
      {
        std::lock_guard lk(conn_mu_);
        conn_fds_.insert(fd);
        ++active_conns_;
      }
      std::thread([this, fd, side = l.side] { serve(fd, side); }).detach();
    }
  }

  void serve(int fd, Side side) {
    {
      net::Socket sock(fd);
      FramingState fs(limits_);
      std::vector<HttpFrame> backlog;
      for (;;) {
        std::optional<HttpFrame> f;
        try {
          f = net::read_frame(fd, fs, backlog);
        } catch (const FramingError& e) {
          stats_.bad_requests.fetch_add(1);
          const bool big = e.kind() == FramingError::Kind::BodyTooLarge;
          auto r = detail::simple_response(big ? 413 : 400, big ? "Payload Too Large" : "Bad Request", e.what());
          r.headers.set("Connection", "close");
          try {
            net::write_all(fd, serialize(r));
          } catch (const std::exception&) {
          }
          break;
        } catch (const std::exception&) {
          break;
        }
        if (!f) break;
        const bool close = detail::wants_close(*f) || stopping_;
        HttpFrame resp;
        if (f->start.is_response) {
          stats_.bad_requests.fetch_add(1);
          resp = detail::simple_response(400, "Bad Request", "expected a request");
        } else {
          resp = handle(std::move(*f), side);
        }
        if (close) resp.headers.set("Connection", "close");
        try {
          net::write_all(fd, serialize(resp));
        } catch (const std::exception&) {
          break;
        }
        if (close) break;
      }
      std::lock_guard lk(conn_mu_);
      conn_fds_.erase(fd);
    }
    std::lock_guard lk(conn_mu_);
    if (--active_conns_ == 0) conn_done_.notify_all();
  }

  HttpFrame dropped_response(const char* why) {
    stats_.dropped.fetch_add(1);
    auto r = detail::simple_response(503, "Service Unavailable", std::string("dropped: ") + why + "\n");
    r.headers.set("X-Hivegate-Dropped", why);
    return r;
  }

  HttpFrame handle(HttpFrame req, Side side) {
    stats_.requests.fetch_add(1);
    const auto t0 = clock_.now();
    detail::strip_hop_by_hop(req.headers);
    const auto& l = manifest_.listen;
    auto named_source = req.headers.get("X-Hivegate-Source");
    std::string source = named_source ? std::string(*named_source)
                                      : (side == Side::Egress ? l.local_name : l.remote_name);
    req.headers.remove("X-Hivegate-Source");
    std::string dest = side == Side::Egress ? detail::requested_host(req) : l.local_name;
    if (!manifest_.has_upstream(dest)) {
      stats_.bad_requests.fetch_add(1);
      return detail::simple_response(502, "Bad Gateway", "unknown upstream '" + dest + "'\n");
    }
    if (source.empty() || source == dest || !detail::valid_endpoint_name(source)) {
      stats_.bad_requests.fetch_add(1);
      return detail::simple_response(400, "Bad Request", "bad source name '" + source + "'\n");
    }

    if (options_.passthrough) {
      try {
        auto resp = upstream_exchange(dest, req, nullptr);
        detail::strip_hop_by_hop(resp.headers);
        stats_.responses.fetch_add(1);
        return resp;
      } catch (const std::exception& e) {
        stats_.upstream_errors.fetch_add(1);
        return detail::simple_response(502, "Bad Gateway", std::string(e.what()) + "\n");
      }
    }

    auto pending = std::make_shared<PendingExchange>();
    auto sink = std::make_shared<ClientSink>(pending);
    auto m = std::make_shared<Message>(qm_.next_id(), Route(source, dest, Direction::Request), std::move(req));
    m->set_sink(sink);
    try {
      engine_->admit(m);
    } catch (const QueueFullError&) {
      stats_.rejected.fetch_add(1);
      return dropped_response("queue-full");
    }
    auto [stage, fwd] = pending->wait();
    if (stage == PendingExchange::Stage::Dropped) return dropped_response("policy");
    if (stage == PendingExchange::Stage::Aborted) return dropped_response("shutdown");

    const Route route = fwd->route();
    HttpFrame up;
    try {
      TransportMetrics t;
      up = upstream_exchange(route.destination(), fwd->frame(), &t);
      fwd->transition(MessageState::Forwarded);
      qm_.update_transport(route, t);
    } catch (const std::exception& e) {
      fwd->transition(MessageState::Forwarded);
      stats_.upstream_errors.fetch_add(1);
      return detail::simple_response(502, "Bad Gateway", std::string(e.what()) + "\n");
    }
    detail::strip_hop_by_hop(up.headers);
    auto rm = std::make_shared<Message>(qm_.next_id(), route.reversed(), std::move(up));
    rm->set_sink(sink);
    try {
      engine_->admit(rm);
    } catch (const QueueFullError&) {
      stats_.rejected.fetch_add(1);
      return dropped_response("queue-full");
    }
    auto [rstage, back] = pending->wait();
    if (rstage == PendingExchange::Stage::Dropped) return dropped_response("policy");
    if (rstage == PendingExchange::Stage::Aborted) return dropped_response("shutdown");
    HttpFrame out = back->frame();
    back->transition(MessageState::Forwarded);
    qm_.record_latency(route, to_seconds(std::chrono::duration_cast<Micros>(clock_.now() - t0)) * 1000.0);
    stats_.responses.fetch_add(1);
    return out;
  }

  // The request goes out with Host naming the upstream actually used.
  HttpFrame upstream_exchange(const std::string& name, HttpFrame req, TransportMetrics* t) {
    const auto* addr = upstreams_.address(name);
    if (!addr) throw net::IoError("unknown upstream '" + name + "'");
    req.headers.set("Host", addr->str());
    return upstreams_.exchange(name, req, t);
  }

  DrainRole& role_for(const RouteQueue& q) {
    std::lock_guard lk(roles_mu_);
    auto& r = roles_[&q];
    if (!r) r = std::make_unique<DrainRole>();
    return *r;
  }

  // One drainer per queue at a time. Whoever finds the queue ready does the
  // draining, so the common case forwards on the admitting thread itself.
  void drain(RouteQueue& q) {
    auto& role = role_for(q);
    role.again.store(true, std::memory_order_release);
    while (role.again.load(std::memory_order_acquire)) {
      bool expected = false;
      if (!role.busy.compare_exchange_strong(expected, true, std::memory_order_acq_rel)) return;
      role.again.store(false, std::memory_order_release);
      std::vector<MessagePtr> ready;
      std::optional<Timestamp> wake;
      {
        auto lk = q.lock();
        while (!q.pinned()) {
          auto r = q.dequeue_ready(clock_.now());
          if (auto* nr = std::get_if<NotReady>(&r)) {
            wake = nr->wakeup_at;
            break;
          }
          ready.push_back(std::get<MessagePtr>(std::move(r)));
        }
      }
      role.busy.store(false, std::memory_order_release);
      if (wake && timer_)
        if (auto qp = qm_.find(q.key())) timer_->arm(qp, *wake);
      for (auto& m : ready) hand_off(std::move(m));
    }
  }

  void hand_off(MessagePtr m) {
    if (auto* cs = dynamic_cast<ClientSink*>(m->sink().get())) {
      cs->pending().signal(PendingExchange::Stage::Released, std::move(m));
      return;
    }
    // A message a policy created: nobody waits for it, so forward it on the side.
    {
      std::lock_guard lk(conn_mu_);
      ++active_conns_;
    }
    std::thread([this, m] {
      try {
        if (!m->is_response()) upstream_exchange(m->route().destination(), m->frame(), nullptr);
      } catch (const std::exception& e) {
        spdlog::debug("policy-created message {} failed upstream: {}", m->id(), e.what());
      }
      m->transition(MessageState::Forwarded);
      std::lock_guard lk(conn_mu_);
      if (--active_conns_ == 0) conn_done_.notify_all();
    }).detach();
  }

  std::size_t backlog() const {
    std::size_t n = 0;
    for (const auto& q : qm_.queues()) {
      auto lk = q->lock();
      n += q->length();
    }
    return n;
  }

  std::size_t drop_all() {
    std::vector<MessagePtr> dropped;
    const auto now = clock_.now();
    for (const auto& q : qm_.queues()) {
      auto lk = q->lock();
      while (!q->empty()) {
        auto m = q->take(q->length() - 1, now);
        m->transition(MessageState::Dropped);
        dropped.push_back(std::move(m));
      }
    }
    for (const auto& m : dropped)
      if (auto* cs = dynamic_cast<ClientSink*>(m->sink().get()))
        cs->pending().signal(PendingExchange::Stage::Aborted, m);
    return dropped.size();
  }

  Manifest manifest_;
  ProxyOptions options_;
  FramingLimits limits_;
  SteadyClock clock_;
  QueueManager qm_;
  HttpCallbackTransport transport_;
  CallbackDispatcher dispatcher_;
  std::unique_ptr<PolicyEngine> engine_;
  UpstreamPool upstreams_;
  ProxyStats stats_;

  std::vector<Listener> listeners_;
  std::vector<std::thread> accept_threads_;
  std::unique_ptr<httplib::Server> admin_;
  std::thread admin_thread_;
  std::uint16_t admin_port_ = 0;
  std::unique_ptr<DrainTimer> timer_;

  std::mutex roles_mu_;
  std::unordered_map<const RouteQueue*, std::unique_ptr<DrainRole>> roles_;

  std::mutex conn_mu_;
  std::condition_variable conn_done_;
  std::set<int> conn_fds_;
  int active_conns_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<bool> stopped_{false};
};

}  // namespace hivegate
