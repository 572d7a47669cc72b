#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <vector>

#include <spdlog/spdlog.h>

#include "hivegate/callback/dispatcher.hpp"
#include "hivegate/policy/binding.hpp"
#include "hivegate/policy/context.hpp"

namespace hivegate {

// Immutable set of bindings; swapped as a whole on reload.
class BindingSet {
 public:
  BindingSet() = default;

  // A later binding for the same (pattern, trigger) replaces the earlier one in
  // place; otherwise declaration order decides which pattern matches first.
  explicit BindingSet(std::vector<PolicyBinding> bindings) {
    for (auto& b : bindings) {
      auto it = std::find_if(bindings_.begin(), bindings_.end(), [&](const PolicyBinding& x) {
        return x.route_pattern == b.route_pattern && x.trigger == b.trigger;
      });
      if (it != bindings_.end()) *it = std::move(b);
      else bindings_.push_back(std::move(b));
    }
  }

  const PolicyBinding* match(std::string_view route_key, Trigger trigger) const {
    for (const auto& b : bindings_)
      if (b.matches(route_key, trigger)) return &b;
    return nullptr;
  }

  const std::vector<PolicyBinding>& bindings() const noexcept { return bindings_; }

 private:
  std::vector<PolicyBinding> bindings_;
};

struct EngineStats {
  std::uint64_t admitted = 0;
  std::uint64_t executions = 0;
  std::uint64_t program_errors = 0;
  std::uint64_t budget_exceeded = 0;
  std::uint64_t soft_errors = 0;
  std::uint64_t callbacks_issued = 0;
};

struct EngineOptions {
  std::uint64_t step_budget = kDefaultStepBudget;
  CallbackConfig callbacks;
  ExecutionContext::DestinationCheck destination_exists;
};

struct AdmitResult {
  std::size_t length = 0;  // queue length right after enqueue
  std::optional<ExecutionReport> report;
};

// Runs the data-path step for one arriving message: enqueue, then the bound
// program (if any) under the queue's exclusion, then commit or roll back.
class PolicyEngine {
 public:
  explicit PolicyEngine(QueueManager& qm, EngineOptions options = {})
      : qm_(qm), options_(std::move(options)), bindings_(std::make_shared<const BindingSet>()) {}

  void set_bindings(std::vector<PolicyBinding> bindings) {
    auto next = std::make_shared<const BindingSet>(std::move(bindings));
    std::lock_guard lk(bindings_mu_);
    bindings_ = std::move(next);
  }

  std::shared_ptr<const BindingSet> bindings() const {
    std::lock_guard lk(bindings_mu_);
    return bindings_;
  }

  void set_dispatcher(CallbackDispatcher* d) noexcept { dispatcher_ = d; }

  // Invoked (without locks) with each execution's report; the emulator records them.
  void set_report_hook(std::function<void(const Message&, const ExecutionReport&)> hook) {
    report_hook_ = std::move(hook);
  }

  // Throws QueueFullError when the route's queue is at its limit.
  AdmitResult admit(const MessagePtr& m) {
    const Trigger trigger = m->route().direction() == Direction::Request ? Trigger::OnRequest
                                                                         : Trigger::OnResponse;
    auto q = qm_.queue_for(m->route());
    auto set = bindings();
    const PolicyBinding* binding = set->match(q->key(), trigger);

    AdmitResult result;
    auto lk = q->lock();
    result.length = q->enqueue(m, qm_.clock().now());
    admitted_.fetch_add(1, std::memory_order_relaxed);
    if (!binding || !binding->program) {
      lk.unlock();
      qm_.notify_ready(*q);
      return result;
    }

    const auto generation = generation_.fetch_add(1, std::memory_order_relaxed) + 1;
    ExecutionContext ctx(qm_, *binding, m, q, std::move(lk), generation, options_.step_budget,
                         options_.callbacks, options_.destination_exists);
    ExecutionContext::Effects fx;
    try {
      binding->program->run(ctx, trigger);
      fx = ctx.commit();
    } catch (const BudgetExceeded& e) {
      fail(ctx, ExecutionOutcome::BudgetExceeded, e.what(), *m);
      fx = ctx.rollback();
    } catch (const ProgramError& e) {
      fail(ctx, ExecutionOutcome::ProgramError, e.what(), *m);
      fx = ctx.rollback();
    } catch (const std::exception& e) {
      fail(ctx, ExecutionOutcome::ProgramError, e.what(), *m);
      fx = ctx.rollback();
    }
    executions_.fetch_add(1, std::memory_order_relaxed);
    if (ctx.report().soft_errors) {
      soft_errors_.fetch_add(ctx.report().soft_errors, std::memory_order_relaxed);
      spdlog::warn("policy on {} (message {}): {}", q->key(), m->id(), ctx.last_soft_error());
    }
    callbacks_issued_.fetch_add(fx.callbacks.size(), std::memory_order_relaxed);
    apply_effects(fx);
    result.report = std::move(ctx.report());
    if (report_hook_) report_hook_(*m, *result.report);
    return result;
  }

  EngineStats stats() const {
    EngineStats s;
    s.admitted = admitted_.load();
    s.executions = executions_.load();
    s.program_errors = program_errors_.load();
    s.budget_exceeded = budget_exceeded_.load();
    s.soft_errors = soft_errors_.load();
    s.callbacks_issued = callbacks_issued_.load();
    return s;
  }

 private:
  void fail(ExecutionContext& ctx, ExecutionOutcome outcome, const char* what, const Message& m) {
    ctx.report().outcome = outcome;
    ctx.report().error = what;
    if (outcome == ExecutionOutcome::BudgetExceeded) budget_exceeded_.fetch_add(1);
    else program_errors_.fetch_add(1);
    spdlog::warn("policy {} on {} (message {}) failed open: {}", ctx.binding().program->describe(),
                 m.route().key(), m.id(), what);
  }

  void apply_effects(ExecutionContext::Effects& fx) {
    for (auto& job : fx.callbacks) {
      if (dispatcher_) {
        dispatcher_->dispatch(std::move(job));
      } else if (job.kind == CallbackKind::Transform) {
        // No delivery path: the transform fails immediately.
        revert_now(job);
      }
    }
    for (const auto& d : fx.dropped)
      if (auto* sink = qm_.sink_for(*d)) sink->on_dropped(d);
    for (const auto& q : fx.touched) qm_.notify_ready(*q);
  }

  void revert_now(const CallbackJob& job) {
    auto m = job.message;
    for (;;) {
      RouteQueue* o = m->owner();
      if (!o) return;
      auto lk = o->lock();
      if (m->owner() != o) continue;
      if (m->state() == MessageState::InProgress) m->transition(MessageState::Queued);
      return;
    }
  }

  QueueManager& qm_;
  EngineOptions options_;
  mutable std::mutex bindings_mu_;
  std::shared_ptr<const BindingSet> bindings_;
  CallbackDispatcher* dispatcher_ = nullptr;
  std::function<void(const Message&, const ExecutionReport&)> report_hook_;
  std::atomic<std::uint64_t> generation_{0};
  std::atomic<std::uint64_t> admitted_{0}, executions_{0}, program_errors_{0}, budget_exceeded_{0},
      soft_errors_{0}, callbacks_issued_{0};
};

}  // namespace hivegate
