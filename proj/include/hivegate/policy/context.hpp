#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "hivegate/callback/job.hpp"
#include "hivegate/core/errors.hpp"
#include "hivegate/metrics/queue_metrics.hpp"
#include "hivegate/policy/binding.hpp"
#include "hivegate/queue/queue_manager.hpp"

namespace hivegate {

inline constexpr std::uint64_t kDefaultStepBudget = 100'000;

struct QueueHandle {
  RouteQueue* queue = nullptr;
  std::uint64_t generation = 0;
};

struct MessageHandle {
  MessagePtr message;
  RouteQueue* home = nullptr;  // queue the handle was obtained from
  std::size_t hint = 0;        // last known index, speeds up lookups
  std::uint64_t generation = 0;
};

enum class MutationOp { Drop, Insert, MoveToFront, MoveToBack, Redirect, Transform, ReplaceHeader, Notify };

inline std::string_view to_string(MutationOp op) {
  switch (op) {
    case MutationOp::Drop: return "drop";
    case MutationOp::Insert: return "insert";
    case MutationOp::MoveToFront: return "move_to_front";
    case MutationOp::MoveToBack: return "move_to_back";
    case MutationOp::Redirect: return "redirect";
    case MutationOp::Transform: return "transform";
    case MutationOp::ReplaceHeader: return "replace_header";
    case MutationOp::Notify: return "notify";
  }
  return "?";
}

struct MutationRecord {
  MutationOp op;
  MessageId id = 0;
  std::string queue_key;
  std::string detail;

  bool operator==(const MutationRecord&) const = default;
};

enum class ExecutionOutcome { Completed, ProgramError, BudgetExceeded };

struct ExecutionReport {
  ExecutionOutcome outcome = ExecutionOutcome::Completed;
  std::vector<MutationRecord> mutations;
  std::size_t callbacks_issued = 0;
  std::uint64_t steps_used = 0;
  std::size_t soft_errors = 0;  // rejected host calls that did not abort the run
  std::string error;
};

// Resolves a JSON path ("a.b.c" or a JSON pointer "/a/b") inside a document.
inline const nlohmann::json* json_lookup(const nlohmann::json& doc, std::string_view path) {
  if (!path.empty() && path.front() == '/') {
    try {
      auto ptr = nlohmann::json::json_pointer(std::string(path));
      return doc.contains(ptr) ? &doc.at(ptr) : nullptr;
    } catch (const nlohmann::json::exception&) {
      return nullptr;
    }
  }
  const nlohmann::json* cur = &doc;
  std::size_t pos = 0;
  while (pos <= path.size()) {
    auto dot = path.find('.', pos);
    auto part = path.substr(pos, dot == std::string_view::npos ? std::string_view::npos : dot - pos);
    if (!cur->is_object()) return nullptr;
    auto it = cur->find(std::string(part));
    if (it == cur->end()) return nullptr;
    cur = &*it;
    if (dot == std::string_view::npos) break;
    pos = dot + 1;
  }
  return cur;
}

// One program execution. Holds at most one queue lock at a time; queues the
// program mutates are pinned until commit() or rollback(). Callbacks and drop
// notifications are collected and handed back to the engine after release.
class ExecutionContext {
 public:
  using DestinationCheck = std::function<bool(std::string_view)>;

  ExecutionContext(QueueManager& qm, const PolicyBinding& binding, MessagePtr trigger,
                   QueuePtr trigger_queue, std::unique_lock<std::mutex> held,
                   std::uint64_t generation, std::uint64_t budget = kDefaultStepBudget,
                   CallbackConfig callback_config = {}, DestinationCheck destination_exists = {})
      : qm_(qm),
        binding_(binding),
        trigger_(std::move(trigger)),
        trigger_queue_(std::move(trigger_queue)),
        held_(std::move(held)),
        held_q_(held_.owns_lock() ? trigger_queue_.get() : nullptr),
        generation_(generation),
        budget_(budget),
        callback_config_(callback_config),
        destination_exists_(std::move(destination_exists)),
        now_(qm.clock().now()) {}

  ExecutionContext(const ExecutionContext&) = delete;
  ExecutionContext& operator=(const ExecutionContext&) = delete;

  ~ExecutionContext() {
    if (active_) rollback();
  }

  // --- execution bookkeeping --------------------------------------------

  const PolicyBinding& binding() const noexcept { return binding_; }
  const Params& params() const noexcept { return binding_.params; }
  std::uint64_t generation() const noexcept { return generation_; }
  bool active() const noexcept { return active_; }
  ExecutionReport& report() noexcept { return report_; }
  Timestamp now() const noexcept { return now_; }

  void charge(std::uint64_t steps = 1) {
    report_.steps_used += steps;
    if (report_.steps_used > budget_)
      throw BudgetExceeded("step budget of " + std::to_string(budget_) + " exhausted");
  }

  std::optional<std::string> param(std::string_view key) const {
    auto it = binding_.params.find(key);
    if (it == binding_.params.end()) return std::nullopt;
    return it->second;
  }

  double param_number(std::string_view key, double fallback) const {
    auto v = param(key);
    if (!v) return fallback;
    try {
      return std::stod(*v);
    } catch (const std::exception&) {
      throw ProgramError("param '" + std::string(key) + "' is not a number: " + *v);
    }
  }

  // --- handles -------------------------------------------------------------

  MessageHandle trigger() {
    charge();
    MessageHandle h{trigger_, trigger_queue_.get(), 0, generation_};
    if (auto* q = locate(h)) h.hint = q->index_of(trigger_.get(), q->length() ? q->length() - 1 : 0).value_or(0);
    return h;
  }

  QueueHandle trigger_queue() {
    charge();
    return {trigger_queue_.get(), generation_};
  }

  // Queues carrying traffic in the trigger's direction, ordered by route key.
  std::vector<QueueHandle> queues() {
    charge();
    if (!all_queues_) {
      all_queues_ = qm_.queues();
      auto dir = trigger_->route().direction();
      std::erase_if(*all_queues_, [dir](const QueuePtr& q) { return q->route().direction() != dir; });
    }
    std::vector<QueueHandle> out;
    out.reserve(all_queues_->size());
    for (const auto& q : *all_queues_) out.push_back({q.get(), generation_});
    return out;
  }

  // --- queue inspection ----------------------------------------------------

  std::size_t length(const QueueHandle& qh) { return visit_checked(qh).length(); }

  // nullopt when no request/response pair has completed yet.
  std::optional<double> avg_latency_ms(const QueueHandle& qh) {
    auto& q = visit_checked(qh);
    if (!q.metrics().has_latency()) return std::nullopt;
    return q.metrics().avg_latency_ms();
  }

  double observed_bw(const QueueHandle& qh) {
    auto& q = visit_checked(qh);
    return q.metrics().observed_bw(now_);
  }

  std::optional<double> transport_metric(const QueueHandle& qh, std::string_view name) {
    return visit_checked(qh).metrics().transport.get(name);
  }

  std::string route_key(const QueueHandle& qh) {
    check(qh);
    return qh.queue->key();
  }

  // Snapshot of the queue's items; later mutations do not disturb iteration.
  std::vector<MessageHandle> messages(const QueueHandle& qh) {
    auto& q = visit_checked(qh);
    std::vector<MessageHandle> out;
    out.reserve(q.length());
    for (std::size_t i = 0; i < q.length(); ++i) out.push_back({q.at(i), &q, i, generation_});
    return out;
  }

  // --- message inspection --------------------------------------------------

  std::size_t size(MessageHandle& mh) {
    check(mh);
    locate(mh);
    return mh.message->size();
  }

  std::int64_t age_ms(MessageHandle& mh) {
    check(mh);
    locate(mh);
    return message_age_ms(mh.message->enqueue_time(), now_);
  }

  std::string dst(MessageHandle& mh) {
    check(mh);
    locate(mh);
    return mh.message->route().destination();
  }

  std::optional<std::string> header(MessageHandle& mh, std::string_view name) {
    check(mh);
    locate(mh);
    const Message& m = *mh.message;
    if (name == "path" || name == ":path") return m.start_line().target;
    if (name == ":method") return m.start_line().method;
    if (name == ":status") return std::to_string(m.start_line().status);
    if (name == ":authority") name = "Host";
    auto v = m.headers().get(name);
    if (!v) return std::nullopt;
    return std::string(*v);
  }

  bool replace_header(MessageHandle& mh, std::string_view name, std::string value) {
    check(mh);
    auto* q = locate(mh);
    auto idx = resident_index(mh, q);
    // Headers of an in-progress message may change while its payload is away.
    if (!idx || !mh.message->is_mutable() ||
        !(q->in_window(*idx) || mh.message->state() == MessageState::InProgress))
      return false;
    Message& m = *mh.message;
    if (name == ":method" || name == ":status")
      throw ProgramError("pseudo-header " + std::string(name) + " is read-only");
    mark_mutated(*q);
    if (name == "path" || name == ":path") {
      auto old = m.start_line().target;
      m.set_target(value);
      undo_.push_back([this, msg = mh.message, old] {
        if (relocate(msg) && msg->is_mutable()) msg->set_target(old);
      });
    } else {
      if (name == ":authority") name = "Host";
      auto prev = m.headers().get(name);
      std::optional<std::string> old = prev ? std::optional<std::string>(std::string(*prev)) : std::nullopt;
      m.set_header(name, value);
      undo_.push_back([this, msg = mh.message, key = std::string(name), old] {
        if (!relocate(msg) || !msg->is_mutable()) return;
        if (old) msg->set_header(key, *old);
        else msg->remove_header(key);
      });
    }
    record(MutationOp::ReplaceHeader, m, q->key(), std::string(name) + "=" + value);
    return true;
  }

  // Bytes [i, j) of the payload.
  std::string bytes(MessageHandle& mh, std::int64_t i, std::int64_t j) {
    check(mh);
    locate(mh);
    const auto& p = mh.message->payload();
    if (i < 0 || j < i || static_cast<std::size_t>(j) > p.size())
      throw ProgramError("bytes(" + std::to_string(i) + ", " + std::to_string(j) +
                         ") outside payload of " + std::to_string(p.size()) + " bytes");
    return p.substr(static_cast<std::size_t>(i), static_cast<std::size_t>(j - i));
  }

  // Parsed payload, or null when it is not a JSON document.
  std::shared_ptr<const nlohmann::json> json(MessageHandle& mh) {
    check(mh);
    auto* q = locate(mh);
    const Message& m = *mh.message;
    auto& ann = m.annotation();
    const auto version = m.payload_version() + 1;  // 0 marks an empty slot
    if (q && ann.version == version) return std::static_pointer_cast<const nlohmann::json>(ann.value);
    auto doc = nlohmann::json::parse(m.payload(), nullptr, false);
    std::shared_ptr<const nlohmann::json> parsed;
    if (!doc.is_discarded()) parsed = std::make_shared<const nlohmann::json>(std::move(doc));
    if (q) {  // the cache slot is only written under the owner's lock
      ann.version = version;
      ann.value = parsed;
    }
    return parsed;
  }

  std::optional<std::string> json_string(MessageHandle& mh, std::string_view path) {
    auto doc = json(mh);
    if (!doc) return std::nullopt;
    auto* v = json_lookup(*doc, path);
    if (!v) return std::nullopt;
    if (v->is_string()) return v->get<std::string>();
    if (v->is_number() || v->is_boolean()) return v->dump();
    return std::nullopt;
  }

  std::optional<double> json_number(MessageHandle& mh, std::string_view path) {
    auto doc = json(mh);
    if (!doc) return std::nullopt;
    auto* v = json_lookup(*doc, path);
    if (!v) return std::nullopt;
    if (v->is_number()) return v->get<double>();
    if (v->is_string()) {
      try {
        std::size_t used = 0;
        auto s = v->get<std::string>();
        double d = std::stod(s, &used);
        if (used == s.size()) return d;
      } catch (const std::exception&) {
      }
    }
    return std::nullopt;
  }

  std::optional<double> transport_metric(MessageHandle& mh, std::string_view name) {
    check(mh);
    auto* q = locate(mh);
    if (q) return q->metrics().transport.get(name);
    auto rq = qm_.find(mh.message->route().key());
    if (!rq) return std::nullopt;
    visit(*rq);
    return rq->metrics().transport.get(name);
  }

  std::int64_t epoch_ms() {
    charge();
    return qm_.clock().epoch_ms();
  }

  // --- mutations -----------------------------------------------------------

  std::size_t drop(MessageHandle& mh) {
    check(mh);
    auto* q = locate(mh);
    auto idx = resident_index(mh, q);
    if (!idx || !q->in_window(*idx)) return fallback_length(mh, q);
    mark_mutated(*q);
    MessagePtr m = q->take(*idx, now_);
    pending_drops_.push_back(m);
    undo_.push_back([this, m, qp = q, at = *idx] {
      visit(*qp);
      qp->restore(at, m, now_);
      std::erase(pending_drops_, m);
    });
    record(MutationOp::Drop, *m, q->key(), {});
    return q->length();
  }

  // Fresh copy of a message for insert(); it belongs to no queue yet.
  MessagePtr copy(MessageHandle& mh) {
    check(mh);
    locate(mh);
    auto m = mh.message->clone(qm_.next_id());
    fresh_.push_back(m.get());
    return m;
  }

  std::size_t insert(MessageHandle& mh, const MessagePtr& nm) {
    check(mh);
    if (!nm || nm->owner() != nullptr || nm->state() != MessageState::Queued ||
        std::find(fresh_.begin(), fresh_.end(), nm.get()) == fresh_.end())
      throw ProgramError("insert expects a fresh message obtained from copy()");
    auto* q = locate(mh);
    auto idx = resident_index(mh, q);
    if (!idx) return fallback_length(mh, q);
    if (!(nm->route() == q->route())) nm->set_route(q->route());
    auto res = q->insert_after(*idx, nm, now_);
    if (!res.applied()) return res.length;
    std::erase(fresh_, nm.get());
    mark_mutated(*q);
    undo_.push_back([this, nm, qp = q] {
      visit(*qp);
      if (auto i = qp->index_of(nm.get())) qp->take(*i, now_);
    });
    record(MutationOp::Insert, *nm, q->key(), "after " + std::to_string(mh.message->id()));
    return res.length;
  }

  std::size_t move_to_front(MessageHandle& mh) { return move(mh, true); }
  std::size_t move_to_back(MessageHandle& mh) { return move(mh, false); }

  bool redirect(MessageHandle& mh, const std::string& destination) {
    check(mh);
    MessagePtr m = mh.message;
    if (destination == m->route().destination()) return true;
    if (destination.empty() || destination == m->route().source() ||
        (destination_exists_ && !destination_exists_(destination))) {
      ++report_.soft_errors;
      last_soft_error_ = "unknown destination '" + destination + "'";
      return false;
    }
    auto* q = locate(mh);
    auto idx = resident_index(mh, q);
    if (!idx || !q->in_window(*idx)) return false;

    Route old_route = m->route();
    Route new_route = old_route.with_destination(destination);
    auto target = qm_.queue_for(new_route);
    if (target.get() == q) return true;
    auto host = m->headers().get("Host");
    std::optional<std::string> old_host = host ? std::optional<std::string>(std::string(*host)) : std::nullopt;

    mark_mutated(*q);
    m = q->take(*idx, now_);
    m->set_route(new_route);
    m->set_header("Host", destination);
    visit(*target);
    try {
      target->append_immutable(m, now_);
    } catch (const QueueFullError&) {
      m->set_route(old_route);
      restore_host(*m, old_host);
      visit(*q);
      q->restore(*idx, m, now_);
      return false;
    }
    mark_mutated(*target);
    tails_.push_back(target.get());
    keep_.push_back(target);
    undo_.push_back([this, m, from = q, to = target.get(), at = *idx, old_route, old_host] {
      visit(*to);
      auto i = to->index_of(m.get());
      if (!i) return;
      to->take(*i, now_);
      m->set_route(old_route);
      restore_host(*m, old_host);
      visit(*from);
      from->restore(at, m, now_);
    });
    mh.home = target.get();
    mh.hint = target->length() - 1;
    record(MutationOp::Redirect, *m, q->key(), destination);
    return true;
  }

  bool transform(MessageHandle& mh, const std::string& args) {
    check(mh);
    if (!binding_.transform_endpoint) throw ProgramError("transform called without a transform endpoint");
    auto* q = locate(mh);
    auto idx = resident_index(mh, q);
    if (!idx || !q->in_window(*idx)) return false;
    MessagePtr m = mh.message;
    if (m->state() == MessageState::InProgress) return false;
    mark_mutated(*q);
    m->transition(MessageState::InProgress);
    CallbackJob job;
    job.kind = CallbackKind::Transform;
    job.endpoint = *binding_.transform_endpoint;
    job.body = m->payload();
    job.args = args;
    job.message_ref = MessageRef{q->key(), m->id()};
    job.deadline = now_ + callback_config_.transform_timeout;
    job.message = m;
    callbacks_.push_back(std::move(job));
    undo_.push_back([this, m] {
      if (relocate(m) && m->state() == MessageState::InProgress) m->transition(MessageState::Queued);
    });
    record(MutationOp::Transform, *m, q->key(), args);
    return true;
  }

  void notify(const std::string& metrics) {
    charge();
    if (binding_.notify_endpoints.empty()) throw ProgramError("notify called without notify endpoints");
    for (const auto& ep : binding_.notify_endpoints) {
      CallbackJob job;
      job.kind = CallbackKind::Notify;
      job.endpoint = ep;
      job.body = metrics;
      job.deadline = now_ + callback_config_.notify_timeout;
      callbacks_.push_back(std::move(job));
    }
    report_.mutations.push_back({MutationOp::Notify, trigger_->id(), trigger_queue_->key(), metrics});
  }

  const std::string& last_soft_error() const noexcept { return last_soft_error_; }

  // --- completion ------------------------------------------------------------

  // Makes the mutations final. Returns callbacks to dispatch and messages to
  // report as dropped; the caller does both after this returns (no lock held).
  struct Effects {
    std::vector<CallbackJob> callbacks;
    std::vector<MessagePtr> dropped;
    std::vector<QueuePtr> touched;
  };

  Effects commit() {
    for (const auto& m : pending_drops_) m->transition(MessageState::Dropped);
    report_.callbacks_issued = callbacks_.size();
    Effects fx{std::move(callbacks_), std::move(pending_drops_), {}};
    finish(fx);
    return fx;
  }

  Effects rollback() {
    for (auto it = undo_.rbegin(); it != undo_.rend(); ++it) (*it)();
    undo_.clear();
    pending_drops_.clear();
    callbacks_.clear();
    report_.mutations.clear();
    report_.callbacks_issued = 0;
    Effects fx;
    finish(fx);
    return fx;
  }

 private:
  void check(const QueueHandle& qh) {
    charge();
    if (!active_ || qh.generation != generation_ || qh.queue == nullptr)
      throw ProgramError("stale queue handle used outside its execution");
  }

  void check(const MessageHandle& mh) {
    charge();
    if (!active_ || mh.generation != generation_ || !mh.message)
      throw ProgramError("stale message handle used outside its execution");
  }

  RouteQueue& visit_checked(const QueueHandle& qh) {
    check(qh);
    visit(*qh.queue);
    return *qh.queue;
  }

  void visit(RouteQueue& q) {
    if (held_q_ == &q && held_.owns_lock()) return;
    if (held_.owns_lock()) held_.unlock();
    held_ = q.lock();
    held_q_ = &q;
  }

  // Locks the queue currently holding the message; nullptr if it is no
  // longer resident anywhere (forwarded, or dropped by someone else).
  RouteQueue* relocate(const MessagePtr& m) {
    for (;;) {
      RouteQueue* o = m->owner();
      if (!o) return nullptr;
      visit(*o);
      if (m->owner() == o) return o;
    }
  }

  RouteQueue* locate(MessageHandle& mh) { return relocate(mh.message); }

  std::optional<std::size_t> resident_index(MessageHandle& mh, RouteQueue* q) {
    if (!q) return std::nullopt;
    auto idx = q->index_of(mh.message.get(), mh.hint);
    if (idx) {
      mh.hint = *idx;
      mh.home = q;
    }
    return idx;
  }

  std::size_t fallback_length(MessageHandle& mh, RouteQueue* q) {
    RouteQueue* home = q ? q : mh.home;
    if (!home) return 0;
    visit(*home);
    return home->length();
  }

  std::size_t move(MessageHandle& mh, bool to_front) {
    check(mh);
    auto* q = locate(mh);
    auto idx = resident_index(mh, q);
    if (!idx) return fallback_length(mh, q);
    auto res = to_front ? q->move_to_front(*idx) : q->move_to_back(*idx);
    if (!res.applied()) return res.length;
    mark_mutated(*q);
    auto now_idx = q->index_of(mh.message.get(), to_front ? q->head_margin() : *idx);
    if (now_idx) mh.hint = *now_idx;
    undo_.push_back([this, m = mh.message, qp = q, from = *idx] {
      visit(*qp);
      if (auto i = qp->index_of(m.get())) qp->move(*i, std::min(from, qp->length() - 1));
    });
    record(to_front ? MutationOp::MoveToFront : MutationOp::MoveToBack, *mh.message, q->key(), {});
    return res.length;
  }

  void mark_mutated(RouteQueue& q) {
    if (std::find(pinned_.begin(), pinned_.end(), &q) != pinned_.end()) return;
    q.pin();
    pinned_.push_back(&q);
  }

  static void restore_host(Message& m, const std::optional<std::string>& host) {
    if (host) m.set_header("Host", *host);
    else m.remove_header("Host");
  }

  void record(MutationOp op, const Message& m, const std::string& key, std::string detail) {
    report_.mutations.push_back({op, m.id(), key, std::move(detail)});
  }

  void finish(Effects& fx) {
    for (RouteQueue* t : tails_) {
      visit(*t);
      t->release_tail(1);
    }
    for (RouteQueue* q : pinned_) {
      visit(*q);
      q->unpin();
    }
    if (held_.owns_lock()) held_.unlock();
    held_q_ = nullptr;
    auto keep_alive = [&](RouteQueue* q) -> QueuePtr {
      if (q == trigger_queue_.get()) return trigger_queue_;
      for (const auto& k : keep_)
        if (k.get() == q) return k;
      if (all_queues_)
        for (const auto& k : *all_queues_)
          if (k.get() == q) return k;
      return qm_.find(q->key());
    };
    fx.touched.push_back(trigger_queue_);
    for (RouteQueue* q : pinned_) {
      if (q == trigger_queue_.get()) continue;
      if (auto p = keep_alive(q)) fx.touched.push_back(std::move(p));
    }
    tails_.clear();
    pinned_.clear();
    undo_.clear();
    active_ = false;
  }

  QueueManager& qm_;
  const PolicyBinding& binding_;
  MessagePtr trigger_;
  QueuePtr trigger_queue_;
  std::unique_lock<std::mutex> held_;
  RouteQueue* held_q_ = nullptr;
  std::uint64_t generation_;
  std::uint64_t budget_;
  CallbackConfig callback_config_;
  DestinationCheck destination_exists_;
  Timestamp now_;
  bool active_ = true;

  std::optional<std::vector<QueuePtr>> all_queues_;
  std::vector<QueuePtr> keep_;
  std::vector<RouteQueue*> pinned_;
  std::vector<RouteQueue*> tails_;
  std::vector<std::function<void()>> undo_;
  std::vector<MessagePtr> pending_drops_;
  std::vector<CallbackJob> callbacks_;
  std::vector<const Message*> fresh_;
  std::string last_soft_error_;
  ExecutionReport report_;
};

}  // namespace hivegate
