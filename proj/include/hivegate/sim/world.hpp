#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "hivegate/callback/dispatcher.hpp"
#include "hivegate/policy/engine.hpp"
#include "hivegate/queue/queue_manager.hpp"
#include "hivegate/sim/event_loop.hpp"
#include "hivegate/sim/link.hpp"

namespace hivegate::sim {

inline double ms_of(Timestamp t) { return static_cast<double>(t.time_since_epoch().count()) / 1000.0; }
inline Timestamp from_ms(double ms) { return Timestamp{Micros{static_cast<std::int64_t>(std::llround(ms * 1000.0))}}; }

// Outcome of one message, as seen by the harness.
struct MessageRecord {
  MessageId id = 0;
  std::string kind;
  std::string first_route;
  std::string final_route;
  double created_ms = 0;
  std::optional<double> forwarded_ms;
  std::optional<double> dropped_ms;
  std::optional<double> delivered_ms;
  std::optional<double> completed_ms;  // requests: response back at the client
  bool rejected = false;               // queue was full at admission
  bool transformed = false;
  std::size_t original_size = 0;
  std::size_t final_size = 0;
  std::string resolution;  // "resolution" header or chunk path rung when forwarded
  std::optional<MessageId> request_id;

  bool settled() const { return forwarded_ms || dropped_ms || rejected; }
};

struct SeriesPoint {
  double t_ms = 0;
  std::string route;
  std::size_t length = 0;
  double observed_bw = 0;
  double avg_latency_ms = 0;
};

struct Notification {
  double t_ms = 0;
  std::string endpoint;
  std::string body;
};

// A stub upstream. Responses travel back on the reversed route.
struct Service {
  double service_ms = 0;
  std::size_t response_bytes = 16;
  // Builds the response frame; the default is "200 OK" with response_bytes of body.
  std::function<HttpFrame(const Message& request)> respond;
};

struct TransformerModel {
  double latency_ms = 20;
  // label -> payload size after transform; unknown labels fail the job.
  std::map<std::string, std::size_t> sizes;
};

struct AuditRow {
  std::string route;
  std::size_t generated = 0;
  std::size_t forwarded = 0;
  std::size_t dropped = 0;
  std::size_t queued = 0;
  std::size_t resident = 0;  // what the queue actually holds at the end
  bool balanced() const { return generated == forwarded + dropped + queued && queued == resident; }
};

class World;

// Delivers callback jobs through the event loop instead of the network.
class SimCallbackTransport final : public CallbackTransport {
 public:
  explicit SimCallbackTransport(World& w) : world_(w) {}
  void send(const CallbackJob& job, std::function<void(CallbackOutcome)> done) override;

 private:
  World& world_;
};

// Everything a scenario runs on: the live queue manager, policy engine and
// callback dispatcher driven by a single-threaded event loop, with link models
// standing in for the network and stub services for the upstreams.
class World {
 public:
  using ResponseHook = std::function<void(const MessageRecord& request, const MessagePtr& response)>;

  explicit World(std::vector<QueueRule> rules = {}, CallbackConfig callbacks = {})
      : qm_(std::move(rules), QueueConfig{}, loop_.clock()),
        transport_(*this),
        dispatcher_(qm_, transport_, callbacks),
        sink_(std::make_shared<Sink>(*this)) {
    EngineOptions opts;
    opts.callbacks = callbacks;
    opts.destination_exists = [this](std::string_view name) {
      return services_.count(std::string(name)) > 0;
    };
    engine_ = std::make_unique<PolicyEngine>(qm_, std::move(opts));
    engine_->set_dispatcher(&dispatcher_);
    engine_->set_report_hook([this](const Message& m, const ExecutionReport& r) {
      ++executions_;
      for (const auto& mut : r.mutations) {
        ++mutations_[std::string(to_string(mut.op))];
        loop_.log("mut " + std::to_string(m.id()) + " " + std::string(to_string(mut.op)) + " " +
                  std::to_string(mut.id) + " " + mut.detail);
      }
      if (r.outcome != ExecutionOutcome::Completed) ++failed_executions_;
    });
    qm_.set_fallback_sink(sink_);
    qm_.set_created_hook([this](const QueuePtr& q) { on_created(q); });
    qm_.set_ready_hook([this](RouteQueue& q) { schedule_drain(q.key(), loop_.now()); });
  }

  World(const World&) = delete;
  World& operator=(const World&) = delete;

  EventLoop& loop() noexcept { return loop_; }
  const EventLoop& loop() const noexcept { return loop_; }
  QueueManager& queues() noexcept { return qm_; }
  PolicyEngine& engine() noexcept { return *engine_; }
  CallbackDispatcher& dispatcher() noexcept { return dispatcher_; }
  const CallbackDispatcher& dispatcher() const noexcept { return dispatcher_; }
  Timestamp now() const noexcept { return loop_.now(); }
  double now_ms() const noexcept { return ms_of(loop_.now()); }
  std::int64_t epoch_ms() const { return loop_.clock().epoch_ms(); }

  void set_bindings(std::vector<PolicyBinding> b) { engine_->set_bindings(std::move(b)); }
  void add_service(const std::string& name, Service s) { services_[name] = std::move(s); }
  TransformerModel& transformer() noexcept { return transformer_; }

  // Applies every schedule step at its time, to existing and future queues.
  void add_link(LinkModel link) {
    link.validate();
    links_.push_back(std::move(link));
    const std::size_t li = links_.size() - 1;
    for (const auto& step : links_[li].schedule) {
      loop_.at(at_ms(step.t_ms), "link " + links_[li].route_pattern, [this, li, kb = step.kb_per_s] {
        for (auto& [key, q] : registry_) {
          if (link_for(key) != &links_[li]) continue;
          {
            auto lk = q->lock();
            q->set_rate_limit(kb, loop_.now());
          }
          qm_.notify_ready(*q);
        }
      });
    }
  }

  // Samples every queue's length, bandwidth and latency every `period_ms`.
  void sample_every(double period_ms, double until_ms) {
    for (double t = 0; t <= until_ms; t += period_ms)
      loop_.at(from_ms(t), "sample", [this] { sample(); });
  }

  // Admits a new message; `on_response` runs when its response is delivered.
  MessagePtr send(Route route, HttpFrame frame, std::string kind, ResponseHook on_response = {}) {
    auto m = std::make_shared<Message>(qm_.next_id(), std::move(route), std::move(frame));
    m->set_sink(sink_);
    MessageRecord rec;
    rec.id = m->id();
    rec.kind = std::move(kind);
    rec.first_route = rec.final_route = m->route().key();
    rec.created_ms = now_ms();
    rec.original_size = rec.final_size = m->size();
    records_[m->id()] = rec;
    live_[m->id()] = m;
    if (on_response) hooks_[m->id()] = std::move(on_response);
    admit(m);
    return m;
  }

  void run_until(double t_ms) { loop_.run_until(from_ms(t_ms)); }

  const std::map<MessageId, MessageRecord>& records() const noexcept { return records_; }
  MessageRecord* record(MessageId id) {
    auto it = records_.find(id);
    return it == records_.end() ? nullptr : &it->second;
  }
  const std::vector<SeriesPoint>& series() const noexcept { return series_; }
  const std::vector<Notification>& notifications() const noexcept { return notifications_; }
  const std::map<std::string, std::size_t>& mutation_counts() const noexcept { return mutations_; }
  std::size_t executions() const noexcept { return executions_; }
  std::size_t failed_executions() const noexcept { return failed_executions_; }

  // Per final route: generated = forwarded + dropped + still queued, and the
  // still-queued count matches what the queue holds.
  std::vector<AuditRow> audit() const {
    std::map<std::string, AuditRow> rows;
    for (const auto& [id, r] : records_) {
      if (r.rejected) continue;
      auto& row = rows[r.final_route];
      row.route = r.final_route;
      ++row.generated;
      if (r.forwarded_ms) ++row.forwarded;
      else if (r.dropped_ms) ++row.dropped;
      else ++row.queued;
    }
    for (const auto& [key, q] : registry_) {
      auto& row = rows[key];
      row.route = key;
      auto lk = q->lock();
      row.resident = q->length();
    }
    std::vector<AuditRow> out;
    for (auto& [k, row] : rows) out.push_back(row);
    return out;
  }

  bool audit_passes() const {
    for (const auto& row : audit())
      if (!row.balanced()) return false;
    return true;
  }

  std::uint64_t log_hash() const noexcept { return loop_.log_hash(); }

 private:
  friend class SimCallbackTransport;

  class Sink final : public MessageSink {
   public:
    explicit Sink(World& w) : w_(w) {}
    void on_dropped(const MessagePtr& m) override { w_.on_dropped(m); }

   private:
    World& w_;
  };

  struct Pipe {
    Timestamp busy_until{};
    std::optional<Timestamp> drain_at;
  };

  void admit(const MessagePtr& m) {
    try {
      engine_->admit(m);
      loop_.log("admit " + std::to_string(m->id()) + " " + m->route().key());
    } catch (const QueueFullError&) {
      auto& r = records_[m->id()];
      r.rejected = true;
      live_.erase(m->id());
      hooks_.erase(m->id());
      loop_.log("reject " + std::to_string(m->id()));
    }
  }

  const LinkModel* link_for(const std::string& key) const {
    for (const auto& l : links_)
      if (glob_match(l.route_pattern, key)) return &l;
    return nullptr;
  }

  void on_created(const QueuePtr& q) {
    registry_[q->key()] = q;
    if (const auto* l = link_for(q->key())) {
      auto lk = q->lock();
      q->set_rate_limit(l->kb_per_s_at(to_ms(loop_.now())), loop_.now());
    }
  }

  void schedule_drain(const std::string& key, Timestamp t) {
    auto& p = pipes_[key];
    if (p.drain_at && *p.drain_at <= t) return;
    p.drain_at = t;
    loop_.at(t, "drain " + key, [this, key, t] {
      auto& pipe = pipes_[key];
      if (pipe.drain_at != t) return;  // superseded by an earlier drain
      pipe.drain_at.reset();
      drain(key);
    });
  }

  // Forwards at most one message per link transmission slot.
  void drain(const std::string& key) {
    auto it = registry_.find(key);
    if (it == registry_.end()) return;
    auto q = it->second;
    auto& pipe = pipes_[key];
    const auto now = loop_.now();
    if (pipe.busy_until > now) {
      schedule_drain(key, pipe.busy_until);
      return;
    }
    DequeueResult r;
    {
      auto lk = q->lock();
      if (q->pinned()) return;
      r = q->dequeue_ready(now);
    }
    if (auto* nr = std::get_if<NotReady>(&r)) {
      if (nr->wakeup_at) schedule_drain(key, *nr->wakeup_at);
      return;
    }
    transmit(key, std::get<MessagePtr>(r));
    schedule_drain(key, std::max(pipe.busy_until, now));
  }

  void transmit(const std::string& key, const MessagePtr& m) {
    auto& pipe = pipes_[key];
    const auto now = loop_.now();
    double tx_s = 0, delay_ms = 0;
    if (const auto* l = link_for(key)) {
      const double bps = l->kb_per_s_at(to_ms(now)) * kBytesPerKB;
      tx_s = bps > 0 ? static_cast<double>(m->size()) / bps : 0;
      delay_ms = l->delay_ms;
    }
    pipe.busy_until = now + Micros{static_cast<std::int64_t>(std::llround(tx_s * 1e6))};
    m->transition(MessageState::Forwarded);
    if (auto* rec = record(m->id())) {
      rec->forwarded_ms = ms_of(now);
      rec->final_route = key;
      rec->final_size = m->size();
      rec->transformed = m->payload_version() > 0;
      if (auto res = m->headers().get("resolution")) rec->resolution = std::string(*res);
    }
    live_.erase(m->id());
    loop_.log("fwd " + std::to_string(m->id()) + " " + key + " " + std::to_string(m->size()));
    loop_.at(pipe.busy_until + Micros{static_cast<std::int64_t>(std::llround(delay_ms * 1000))},
             "deliver " + std::to_string(m->id()), [this, m] { deliver(m); });
  }

  void on_dropped(const MessagePtr& m) {
    auto* rec = record(m->id());
    if (!rec) return;
    rec->dropped_ms = now_ms();
    rec->final_route = m->route().key();
    rec->final_size = m->size();
    live_.erase(m->id());
    hooks_.erase(m->id());
    loop_.log("drop " + std::to_string(m->id()));
  }

  void deliver(const MessagePtr& m) {
    auto* rec = record(m->id());
    if (rec) rec->delivered_ms = now_ms();
    if (m->is_response()) {
      complete(m);
      return;
    }
    auto svc = services_.find(m->route().destination());
    if (svc == services_.end()) return;
    const Service& s = svc->second;
    loop_.after(Micros{static_cast<std::int64_t>(std::llround(s.service_ms * 1000))},
                "serve " + std::to_string(m->id()), [this, m, &s] {
                  HttpFrame f;
                  if (s.respond) {
                    f = s.respond(*m);
                  } else {
                    f.start.is_response = true;
                    f.start.status = 200;
                    f.start.reason = "OK";
                    f.body.assign(s.response_bytes, 'r');
                    f.headers.set("Content-Length", std::to_string(f.body.size()));
                  }
                  auto resp = std::make_shared<Message>(qm_.next_id(), m->route().reversed(), std::move(f));
                  resp->set_sink(sink_);
                  MessageRecord rr;
                  rr.id = resp->id();
                  rr.kind = "response";
                  rr.first_route = rr.final_route = resp->route().key();
                  rr.created_ms = now_ms();
                  rr.original_size = rr.final_size = resp->size();
                  rr.request_id = m->id();
                  records_[resp->id()] = rr;
                  live_[resp->id()] = resp;
                  admit(resp);
                });
  }

  void complete(const MessagePtr& resp) {
    auto* rr = record(resp->id());
    if (!rr || !rr->request_id) return;
    auto* req = record(*rr->request_id);
    if (!req) return;
    req->completed_ms = now_ms();
    qm_.record_latency(resp->route().reversed(), *req->completed_ms - req->created_ms);
    loop_.log("done " + std::to_string(req->id));
    auto h = hooks_.find(req->id);
    if (h != hooks_.end()) {
      auto fn = std::move(h->second);
      hooks_.erase(h);
      fn(*req, resp);
    }
  }

  void sample() {
    const auto now = loop_.now();
    for (auto& [key, q] : registry_) {
      auto lk = q->lock();
      series_.push_back({ms_of(now), key, q->length(), q->metrics().observed_bw(now),
                         q->metrics().avg_latency_ms()});
    }
  }

  EventLoop loop_;
  QueueManager qm_;
  SimCallbackTransport transport_;
  CallbackDispatcher dispatcher_;
  std::shared_ptr<Sink> sink_;
  std::unique_ptr<PolicyEngine> engine_;
  std::vector<LinkModel> links_;
  std::map<std::string, Service> services_;
  TransformerModel transformer_;
  std::map<std::string, QueuePtr> registry_;
  std::map<std::string, Pipe> pipes_;
  std::map<MessageId, MessageRecord> records_;
  std::unordered_map<MessageId, MessagePtr> live_;
  std::unordered_map<MessageId, ResponseHook> hooks_;
  std::vector<SeriesPoint> series_;
  std::vector<Notification> notifications_;
  std::map<std::string, std::size_t> mutations_;
  std::size_t executions_ = 0;
  std::size_t failed_executions_ = 0;
};

inline void SimCallbackTransport::send(const CallbackJob& job, std::function<void(CallbackOutcome)> done) {
  auto& w = world_;
  const auto latency = Micros{static_cast<std::int64_t>(std::llround(w.transformer_.latency_ms * 1000))};
  CallbackOutcome out;
  if (job.kind == CallbackKind::Notify) {
    w.notifications_.push_back({w.now_ms(), job.endpoint, job.body});
    out.ok = true;
    out.status = 200;
  } else {
    auto it = w.transformer_.sizes.find(job.args);
    if (it != w.transformer_.sizes.end()) {
      out.ok = true;
      out.status = 200;
      out.body.assign(it->second, 't');
    } else {
      out.status = 422;
      out.error = "no rendition " + job.args;
    }
    w.loop_.at(job.deadline, "expire", [&w] { w.dispatcher_.expire(w.now()); });
  }
  w.loop_.after(latency, std::string(to_string(job.kind)) + " " + std::to_string(job.job_id),
                [done = std::move(done), out = std::move(out)]() mutable { done(std::move(out)); });
}

}  // namespace hivegate::sim
