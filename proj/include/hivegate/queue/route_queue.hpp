#pragma once

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <variant>

#include "hivegate/core/errors.hpp"
#include "hivegate/message/message.hpp"
#include "hivegate/metrics/queue_metrics.hpp"
#include "hivegate/queue/token_bucket.hpp"

namespace hivegate {

inline constexpr std::size_t kDefaultMaxQueueLength = 10'000;
inline constexpr Millis kTimerFloor{1};

struct QueueConfig {
  std::optional<double> rate_kb_per_s;  // nullopt: unlimited
  std::optional<double> capacity_bytes;  // nullopt: derived from rate
  std::size_t max_length = kDefaultMaxQueueLength;
  Millis bw_window = kDefaultBandwidthWindow;
  double latency_alpha = kDefaultLatencyAlpha;
};

enum class NotReadyReason { Empty, InsufficientTokens, AllInProgress };

inline std::string_view to_string(NotReadyReason r) {
  switch (r) {
    case NotReadyReason::Empty: return "empty";
    case NotReadyReason::InsufficientTokens: return "insufficient_tokens";
    case NotReadyReason::AllInProgress: return "all_in_progress";
  }
  return "?";
}

struct NotReady {
  NotReadyReason reason;
  std::optional<Timestamp> wakeup_at;  // only for InsufficientTokens with a nonzero rate
};

using DequeueResult = std::variant<MessagePtr, NotReady>;

enum class MutationStatus { Applied, OutOfWindow, InvalidIndex, NotResident, AlreadyInProgress };

inline std::string_view to_string(MutationStatus s) {
  switch (s) {
    case MutationStatus::Applied: return "applied";
    case MutationStatus::OutOfWindow: return "out_of_window";
    case MutationStatus::InvalidIndex: return "invalid_index";
    case MutationStatus::NotResident: return "not_resident";
    case MutationStatus::AlreadyInProgress: return "already_in_progress";
  }
  return "?";
}

struct MutationResult {
  MutationStatus status;
  std::size_t length;  // new length when applied, unchanged length otherwise
  bool applied() const noexcept { return status == MutationStatus::Applied; }
};

// Mutable message queue for one route. Every member below lock() assumes the
// caller holds the queue's exclusion.
class RouteQueue {
 public:
  RouteQueue(Route route, QueueConfig config, Timestamp now)
      : route_(std::move(route)),
        key_(route_.key()),
        config_(config),
        bucket_(make_bucket(config, now)),
        metrics_(config.bw_window, config.latency_alpha) {}

  RouteQueue(const RouteQueue&) = delete;
  RouteQueue& operator=(const RouteQueue&) = delete;

  const Route& route() const noexcept { return route_; }
  const std::string& key() const noexcept { return key_; }

  std::unique_lock<std::mutex> lock() const { return std::unique_lock<std::mutex>(mutex_); }
  std::mutex& mutex() const noexcept { return mutex_; }
  // Forwarders wait here; enqueue and policy completion signal it.
  std::condition_variable& ready_signal() noexcept { return ready_; }

  std::size_t length() const noexcept { return items_.size(); }
  bool empty() const noexcept { return items_.empty(); }
  const MessagePtr& at(std::size_t idx) const { return items_.at(idx); }
  const std::deque<MessagePtr>& items() const noexcept { return items_; }

  // Leading run of in-progress items, which the forwarder is stepping over.
  std::size_t head_margin() const noexcept {
    std::size_t n = 0;
    while (n < items_.size() && items_[n]->state() == MessageState::InProgress) ++n;
    return n;
  }
  std::size_t tail_margin() const noexcept { return tail_margin_; }

  bool in_window(std::size_t idx) const noexcept {
    return idx < items_.size() && idx >= head_margin() && idx + tail_margin_ < items_.size();
  }

  std::optional<std::size_t> index_of(const Message* m, std::size_t hint = 0) const noexcept {
    if (m == nullptr || m->owner() != this) return std::nullopt;
    const std::size_t n = items_.size();
    if (hint < n && items_[hint].get() == m) return hint;
    for (std::size_t d = 1; d <= n; ++d) {
      if (hint + d < n && items_[hint + d].get() == m) return hint + d;
      if (d <= hint && hint - d < n && items_[hint - d].get() == m) return hint - d;
      if (hint + d >= n && d > hint) break;
    }
    return std::nullopt;
  }

  std::size_t enqueue(MessagePtr m, Timestamp now) {
    if (items_.size() >= config_.max_length)
      throw QueueFullError("queue " + key_ + " is at its limit of " +
                           std::to_string(config_.max_length) + " messages");
    if (m->state() != MessageState::Queued)
      throw std::logic_error("only queued messages can be enqueued");
    if (!(m->route() == route_))
      throw std::logic_error("message route " + m->route().key() + " does not match " + key_);
    m->stamp_enqueue(now);
    bucket_.fit_message(m->size());
    place(items_.end() - static_cast<std::ptrdiff_t>(tail_margin_), std::move(m), now);
    return items_.size();
  }

  // Redirect target: lands at the very end and stays immutable for the rest of
  // the current execution.
  std::size_t append_immutable(MessagePtr m, Timestamp now) {
    if (items_.size() >= config_.max_length)
      throw QueueFullError("queue " + key_ + " is full");
    bucket_.fit_message(m->size());
    place(items_.end(), std::move(m), now);
    ++tail_margin_;
    return items_.size();
  }

  DequeueResult dequeue_ready(Timestamp now) {
    if (items_.empty()) return NotReady{NotReadyReason::Empty, std::nullopt};
    auto it = std::find_if(items_.begin(), items_.end(), [](const MessagePtr& m) {
      return m->state() != MessageState::InProgress;
    });
    if (it == items_.end()) return NotReady{NotReadyReason::AllInProgress, std::nullopt};
    const std::size_t size = (*it)->size();
    if (!bucket_.try_debit(size, now)) {
      auto ready = bucket_.ready_at(size, now);
      std::optional<Timestamp> wakeup;
      if (ready) wakeup = std::max(*ready, now + kTimerFloor);
      return NotReady{NotReadyReason::InsufficientTokens, wakeup};
    }
    MessagePtr m = erase_at(static_cast<std::size_t>(it - items_.begin()));
    m->transition(MessageState::Forwarding);
    metrics_.record_forward(size, now);
    metrics_.note_backlog(!items_.empty(), now);
    return m;
  }

  MutationResult drop(std::size_t idx, Timestamp now) {
    if (auto bad = check(idx)) return *bad;
    MessagePtr m = take(idx, now);
    m->transition(MessageState::Dropped);
    return {MutationStatus::Applied, items_.size()};
  }

  // Places `m` immediately after the item at idx.
  MutationResult insert_after(std::size_t idx, MessagePtr m, Timestamp now) {
    if (auto bad = check(idx)) return *bad;
    if (items_.size() >= config_.max_length) return {MutationStatus::InvalidIndex, items_.size()};
    m->stamp_enqueue(now);
    bucket_.fit_message(m->size());
    place(items_.begin() + static_cast<std::ptrdiff_t>(idx + 1), std::move(m), now);
    return {MutationStatus::Applied, items_.size()};
  }

  MutationResult move_to_front(std::size_t idx) {
    if (auto bad = check(idx)) return *bad;
    move(idx, head_margin());
    return {MutationStatus::Applied, items_.size()};
  }

  MutationResult move_to_back(std::size_t idx) {
    if (auto bad = check(idx)) return *bad;
    move(idx, items_.size() - tail_margin_ - 1);
    return {MutationStatus::Applied, items_.size()};
  }

  // Moves the item at `from` to index `to` (both within bounds).
  void move(std::size_t from, std::size_t to) {
    if (from == to) return;
    MessagePtr m = std::move(items_[from]);
    items_.erase(items_.begin() + static_cast<std::ptrdiff_t>(from));
    items_.insert(items_.begin() + static_cast<std::ptrdiff_t>(to), std::move(m));
  }

  // Removes the item at idx without changing its state (redirect, rollback).
  MessagePtr take(std::size_t idx, Timestamp now) {
    MessagePtr m = erase_at(idx);
    metrics_.note_backlog(!items_.empty(), now);
    return m;
  }

  // Reinserts at a specific position, clamped to the queue length (rollback).
  void restore(std::size_t idx, MessagePtr m, Timestamp now) {
    idx = std::min(idx, items_.size());
    place(items_.begin() + static_cast<std::ptrdiff_t>(idx), std::move(m), now);
  }

  // An execution that appended `n` redirected items releases them at its end.
  void release_tail(std::size_t n) noexcept { tail_margin_ -= std::min(n, tail_margin_); }

  // Queues mutated by a running execution are pinned until it commits or
  // rolls back; forwarders leave pinned queues alone.
  void pin() noexcept { ++pins_; }
  void unpin() noexcept {
    if (pins_ > 0) --pins_;
  }
  bool pinned() const noexcept { return pins_ > 0; }

  void set_rate_limit(std::optional<double> rate_kb_per_s, Timestamp now) {
    if (bucket_.is_unlimited() && rate_kb_per_s) {
      auto fresh = TokenBucket(*rate_kb_per_s, config_.capacity_bytes, now);
      for (const auto& m : items_) fresh.fit_message(m->size());
      bucket_ = fresh;
    } else {
      bucket_.set_rate(rate_kb_per_s, now);
    }
    config_.rate_kb_per_s = rate_kb_per_s;
  }

  const QueueConfig& config() const noexcept { return config_; }
  TokenBucket& bucket() noexcept { return bucket_; }
  const TokenBucket& bucket() const noexcept { return bucket_; }
  QueueMetrics& metrics() noexcept { return metrics_; }
  const QueueMetrics& metrics() const noexcept { return metrics_; }

 private:
  static TokenBucket make_bucket(const QueueConfig& c, Timestamp now) {
    if (!c.rate_kb_per_s) return TokenBucket::unlimited();
    return TokenBucket(*c.rate_kb_per_s, c.capacity_bytes, now);
  }

  std::optional<MutationResult> check(std::size_t idx) const {
    if (idx >= items_.size()) return MutationResult{MutationStatus::InvalidIndex, items_.size()};
    if (!in_window(idx)) return MutationResult{MutationStatus::OutOfWindow, items_.size()};
    return std::nullopt;
  }

  MessagePtr erase_at(std::size_t idx) {
    if (idx + tail_margin_ >= items_.size()) --tail_margin_;
    MessagePtr m = std::move(items_[idx]);
    items_.erase(items_.begin() + static_cast<std::ptrdiff_t>(idx));
    m->set_owner(nullptr);
    return m;
  }

  void place(std::deque<MessagePtr>::iterator pos, MessagePtr m, Timestamp now) {
    m->set_owner(this);
    items_.insert(pos, std::move(m));
    metrics_.note_backlog(true, now);
  }

  Route route_;
  std::string key_;
  QueueConfig config_;
  TokenBucket bucket_;
  QueueMetrics metrics_;
  std::deque<MessagePtr> items_;
  std::size_t tail_margin_ = 0;
  std::size_t pins_ = 0;
  mutable std::mutex mutex_;
  std::condition_variable ready_;
};

}  // namespace hivegate
