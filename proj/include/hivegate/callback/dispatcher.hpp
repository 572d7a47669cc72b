#pragma once

#include <atomic>
#include <functional>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "hivegate/callback/job.hpp"
#include "hivegate/queue/queue_manager.hpp"

namespace hivegate {

struct CallbackOutcome {
  bool ok = false;
  int status = 0;
  std::string body;
  std::string error;
};

// Delivers one job and reports back exactly once, from any thread.
class CallbackTransport {
 public:
  virtual ~CallbackTransport() = default;
  virtual void send(const CallbackJob& job, std::function<void(CallbackOutcome)> done) = 0;
};

enum class TransformResult { Completed, Reverted, Discarded, Unknown };

struct CallbackStats {
  std::uint64_t transforms_dispatched = 0;
  std::uint64_t transforms_completed = 0;
  std::uint64_t transforms_reverted = 0;
  std::uint64_t transforms_discarded = 0;  // message gone or no longer in progress
  std::uint64_t transforms_late = 0;       // result arrived after the job had terminated
  std::uint64_t transform_failures = 0;    // endpoint errors and timeouts
  std::uint64_t notify_sent = 0;
  std::uint64_t notify_failed = 0;
  std::uint64_t notify_retries = 0;
};

// Owns the in-progress lifecycle of transform jobs and fire-and-forget notify
// delivery. The pending table's mutex is a leaf: it is never held while a
// queue lock is being taken.
class CallbackDispatcher {
 public:
  CallbackDispatcher(QueueManager& qm, CallbackTransport& transport, CallbackConfig config = {})
      : qm_(qm), transport_(transport), config_(config) {}

  CallbackDispatcher(const CallbackDispatcher&) = delete;
  CallbackDispatcher& operator=(const CallbackDispatcher&) = delete;

  const CallbackConfig& config() const noexcept { return config_; }

  void dispatch(CallbackJob job) {
    if (job.kind == CallbackKind::Transform) {
      if (!job.message_ref || !job.message) throw std::invalid_argument("transform job needs a message");
      {
        std::lock_guard lk(mu_);
        job.job_id = ++next_job_;
        pending_[job.message_ref->id] = Pending{job.job_id, job.message_ref->queue_key, job.message,
                                                job.deadline};
        ++stats_.transforms_dispatched;
      }
    } else {
      std::lock_guard lk(mu_);
      job.job_id = ++next_job_;
    }
    send(std::move(job));
  }

  // Swaps in the new payload at the message's current position and clears its
  // in-progress mark. A message that was dropped or forwarded meanwhile keeps
  // its fate; the result is discarded.
  TransformResult complete_transform(const MessageRef& ref, std::string payload) {
    auto p = claim(ref);
    if (!p) {
      std::lock_guard lk(mu_);
      ++stats_.transforms_late;
      return TransformResult::Unknown;
    }
    auto m = p->message;
    RouteQueue* q = lock_owner(m, p->lock);
    if (!q || m->state() != MessageState::InProgress) {
      if (p->lock.owns_lock()) p->lock.unlock();
      std::lock_guard lk(mu_);
      ++stats_.transforms_discarded;
      return TransformResult::Discarded;
    }
    m->set_payload(std::move(payload));
    m->transition(MessageState::Queued);
    q->bucket().fit_message(m->size());
    p->lock.unlock();
    {
      std::lock_guard lk(mu_);
      ++stats_.transforms_completed;
    }
    qm_.notify_ready(*q);
    return TransformResult::Completed;
  }

  // Leaves the payload untouched and returns the message to the forwardable set.
  TransformResult revert_transform(const MessageRef& ref) {
    auto p = claim(ref);
    if (!p) return TransformResult::Unknown;
    auto m = p->message;
    RouteQueue* q = lock_owner(m, p->lock);
    if (q && m->state() == MessageState::InProgress) m->transition(MessageState::Queued);
    if (p->lock.owns_lock()) p->lock.unlock();
    {
      std::lock_guard lk(mu_);
      ++stats_.transforms_reverted;
    }
    if (q) qm_.notify_ready(*q);
    return TransformResult::Reverted;
  }

  // Reverts every transform whose deadline has passed; returns how many.
  std::size_t expire(Timestamp now) {
    std::vector<MessageRef> due;
    {
      std::lock_guard lk(mu_);
      for (const auto& [id, p] : pending_)
        if (p.deadline <= now) due.push_back({p.queue_key, id});
    }
    for (const auto& ref : due) {
      {
        std::lock_guard lk(mu_);
        ++stats_.transform_failures;
      }
      revert_transform(ref);
    }
    return due.size();
  }

  std::optional<Timestamp> next_deadline() const {
    std::lock_guard lk(mu_);
    std::optional<Timestamp> out;
    for (const auto& [id, p] : pending_)
      if (!out || p.deadline < *out) out = p.deadline;
    return out;
  }

  std::size_t pending_transforms() const {
    std::lock_guard lk(mu_);
    return pending_.size();
  }

  CallbackStats stats() const {
    std::lock_guard lk(mu_);
    return stats_;
  }

 private:
  struct Pending {
    std::uint64_t job_id = 0;
    std::string queue_key;
    MessagePtr message;
    Timestamp deadline{};
  };

  struct Claimed {
    MessagePtr message;
    std::unique_lock<std::mutex> lock;
  };

  std::optional<Claimed> claim(const MessageRef& ref) {
    std::lock_guard lk(mu_);
    auto it = pending_.find(ref.id);
    if (it == pending_.end()) return std::nullopt;
    Claimed c{it->second.message, {}};
    pending_.erase(it);
    return c;
  }

  static RouteQueue* lock_owner(const MessagePtr& m, std::unique_lock<std::mutex>& lk) {
    for (;;) {
      RouteQueue* o = m->owner();
      if (!o) return nullptr;
      lk = o->lock();
      if (m->owner() == o) return o;
      lk.unlock();
    }
  }

  void send(CallbackJob job) {
    const bool transform = job.kind == CallbackKind::Transform;
    auto ref = job.message_ref;
    auto copy = job;
    transport_.send(copy, [this, job = std::move(job), transform, ref](CallbackOutcome out) mutable {
      if (transform) {
        if (out.ok) {
          if (!still_pending(job)) {
            std::lock_guard lk(mu_);
            ++stats_.transforms_late;
            return;
          }
          complete_transform(*ref, std::move(out.body));
          return;
        }
        if (job.attempt < config_.transform_retries && still_pending(job)) {
          ++job.attempt;
          send(std::move(job));
          return;
        }
        {
          std::lock_guard lk(mu_);
          if (!pending_.count(ref->id) || pending_.at(ref->id).job_id != job.job_id) {
            ++stats_.transforms_late;
            return;
          }
          ++stats_.transform_failures;
        }
        revert_transform(*ref);
        return;
      }
      if (out.ok) {
        std::lock_guard lk(mu_);
        ++stats_.notify_sent;
        return;
      }
      if (job.attempt < config_.notify_retries) {
        {
          std::lock_guard lk(mu_);
          ++stats_.notify_retries;
        }
        ++job.attempt;
        send(std::move(job));
        return;
      }
      std::lock_guard lk(mu_);
      ++stats_.notify_failed;
    });
  }

  bool still_pending(const CallbackJob& job) const {
    std::lock_guard lk(mu_);
    auto it = pending_.find(job.message_ref->id);
    return it != pending_.end() && it->second.job_id == job.job_id;
  }

  QueueManager& qm_;
  CallbackTransport& transport_;
  CallbackConfig config_;
  mutable std::mutex mu_;
  std::unordered_map<MessageId, Pending> pending_;
  std::uint64_t next_job_ = 0;
  CallbackStats stats_;
};

}  // namespace hivegate
