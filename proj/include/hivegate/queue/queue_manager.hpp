#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "hivegate/core/glob.hpp"
#include "hivegate/core/time.hpp"
#include "hivegate/queue/route_queue.hpp"

namespace hivegate {

struct QueueRule {
  std::string route_pattern;
  QueueConfig config;
};

using QueuePtr = std::shared_ptr<RouteQueue>;

// Owns every RouteQueue. Queues are created on first use from the first rule
// whose pattern matches the route key, else from the default (unlimited) config.
// The manager's own mutex is a leaf: it is never held while taking a queue lock.
class QueueManager {
 public:
  QueueManager(std::vector<QueueRule> rules, QueueConfig default_config, const Clock& clock)
      : rules_(std::move(rules)), default_config_(default_config), clock_(clock) {}

  explicit QueueManager(const Clock& clock) : QueueManager({}, QueueConfig{}, clock) {}

  QueueManager(const QueueManager&) = delete;
  QueueManager& operator=(const QueueManager&) = delete;

  const Clock& clock() const noexcept { return clock_; }

  QueuePtr queue_for(const Route& route) {
    auto key = route.key();
    QueuePtr created;
    {
      std::lock_guard lk(mu_);
      if (auto it = queues_.find(key); it != queues_.end()) return it->second;
      auto config = config_for(key);
      created = std::make_shared<RouteQueue>(route, config, clock_.now());
      queues_.emplace(key, created);
    }
    if (on_created_) on_created_(created);
    return created;
  }

  QueuePtr find(std::string_view key) const {
    std::lock_guard lk(mu_);
    auto it = queues_.find(key);
    return it == queues_.end() ? nullptr : it->second;
  }

  // Snapshot of all queues, ordered by route key.
  std::vector<QueuePtr> queues() const {
    std::lock_guard lk(mu_);
    std::vector<QueuePtr> out;
    out.reserve(queues_.size());
    for (const auto& [k, q] : queues_) out.push_back(q);
    return out;
  }

  // Rate for one route; takes effect at the next refill.
  void set_rate_limit(const Route& route, double rate_kb_per_s) {
    if (rate_kb_per_s < 0) throw std::invalid_argument("rate must be non-negative");
    auto q = queue_for(route);
    {
      auto lk = q->lock();
      q->set_rate_limit(rate_kb_per_s, clock_.now());
    }
    notify_ready(*q);
  }

  // Rate for every existing and future queue whose key matches `pattern`.
  void set_rate_limit_pattern(const std::string& pattern, std::optional<double> rate_kb_per_s) {
    if (rate_kb_per_s && *rate_kb_per_s < 0) throw std::invalid_argument("rate must be non-negative");
    {
      std::lock_guard lk(mu_);
      bool found = false;
      for (auto& rule : rules_) {
        if (rule.route_pattern == pattern) {
          rule.config.rate_kb_per_s = rate_kb_per_s;
          found = true;
        }
      }
      if (!found) {
        QueueConfig c = default_config_;
        c.rate_kb_per_s = rate_kb_per_s;
        rules_.insert(rules_.begin(), QueueRule{pattern, c});
      }
    }
    for (auto& q : queues()) {
      if (!glob_match(pattern, q->key())) continue;
      {
        auto lk = q->lock();
        q->set_rate_limit(rate_kb_per_s, clock_.now());
      }
      notify_ready(*q);
    }
  }

  // A completed request/response pair: feeds both directions' latency EWMA.
  void record_latency(const Route& request_route, double rtt_ms) {
    for (const auto& key : {request_route.key(), request_route.reversed().key()}) {
      auto q = find(key);
      if (!q) continue;
      auto lk = q->lock();
      q->metrics().record_latency(rtt_ms);
    }
  }

  void update_transport(const Route& route, const TransportMetrics& t) {
    auto q = find(route.key());
    if (!q) return;
    auto lk = q->lock();
    q->metrics().transport = t;
  }

  MessageId next_id() noexcept { return next_id_.fetch_add(1, std::memory_order_relaxed); }

  // Hook run (without any queue lock held) when a queue may have become
  // forwardable: after enqueue, policy execution, transform completion, rate change.
  void set_ready_hook(std::function<void(RouteQueue&)> hook) { ready_hook_ = std::move(hook); }
  void set_created_hook(std::function<void(const QueuePtr&)> hook) { on_created_ = std::move(hook); }

  void notify_ready(RouteQueue& q) {
    if (ready_hook_) ready_hook_(q);
  }

  // Observes messages that carry no sink of their own (policy-inserted copies).
  void set_fallback_sink(std::shared_ptr<MessageSink> sink) { fallback_sink_ = std::move(sink); }
  MessageSink* sink_for(const Message& m) const {
    if (m.sink()) return m.sink().get();
    return fallback_sink_.get();
  }

  QueueConfig config_for(const std::string& key) const {
    for (const auto& rule : rules_)
      if (glob_match(rule.route_pattern, key)) return rule.config;
    return default_config_;
  }

 private:
  mutable std::mutex mu_;
  std::vector<QueueRule> rules_;
  QueueConfig default_config_;
  const Clock& clock_;
  std::map<std::string, QueuePtr, std::less<>> queues_;
  std::atomic<MessageId> next_id_{1};
  std::function<void(RouteQueue&)> ready_hook_;
  std::function<void(const QueuePtr&)> on_created_;
  std::shared_ptr<MessageSink> fallback_sink_;
};

}  // namespace hivegate
