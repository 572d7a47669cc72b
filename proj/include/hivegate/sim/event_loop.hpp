#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <queue>
#include <string>
#include <string_view>
#include <vector>

#include "hivegate/core/time.hpp"

namespace hivegate::sim {

// 64-bit FNV-1a, used to fingerprint event logs.
class LogHash {
 public:
  void add(std::string_view s) noexcept {
    for (unsigned char c : s) {
      h_ ^= c;
      h_ *= 0x100000001b3ull;
    }
    h_ ^= 0xff;  // record separator
    h_ *= 0x100000001b3ull;
  }
  std::uint64_t value() const noexcept { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ull;
};

// Single-threaded discrete-event loop over a virtual clock. Events fire in
// (time, insertion sequence) order; every fired event is folded into the log
// hash so that two runs can be compared for bit-identical behavior.
class EventLoop {
 public:
  // Virtual epoch of t=0, so wall-clock-looking timestamps stay reproducible.
  static constexpr std::int64_t kEpochOffsetMs = 1'700'000'000'000;

  EventLoop() : clock_(Timestamp{}, kEpochOffsetMs) {}

  EventLoop(const EventLoop&) = delete;
  EventLoop& operator=(const EventLoop&) = delete;

  const ManualClock& clock() const noexcept { return clock_; }
  Timestamp now() const noexcept { return clock_.now(); }

  void at(Timestamp t, std::string label, std::function<void()> fn) {
    if (t < now()) t = now();
    events_.push(Event{t, seq_++, std::move(label), std::move(fn)});
  }

  void after(Micros d, std::string label, std::function<void()> fn) {
    at(now() + d, std::move(label), std::move(fn));
  }

  // Fires every event due within (now, now + dt] and leaves the clock at now + dt.
  std::size_t advance(Micros dt) { return run_until(now() + dt); }

  std::size_t run_until(Timestamp until) {
    std::size_t fired = 0;
    while (!events_.empty() && events_.top().at <= until) {
      fire();
      ++fired;
    }
    if (until > now()) clock_.set(until);
    return fired;
  }

  // Fires the next event, if any.
  bool step() {
    if (events_.empty()) return false;
    fire();
    return true;
  }

  std::size_t pending() const noexcept { return events_.size(); }
  std::optional<Timestamp> next_time() const {
    if (events_.empty()) return std::nullopt;
    return events_.top().at;
  }

  // Adds an arbitrary record (outcomes, decisions) to the log fingerprint.
  void log(std::string_view record) { hash_.add(record); }
  std::uint64_t log_hash() const noexcept { return hash_.value(); }
  std::uint64_t fired() const noexcept { return fired_; }

 private:
  struct Event {
    Timestamp at;
    std::uint64_t seq;
    std::string label;
    std::function<void()> fn;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.at != b.at ? a.at > b.at : a.seq > b.seq;
    }
  };

  void fire() {
    // priority_queue::top is const; the event is copied out before popping.
    Event e = std::move(const_cast<Event&>(events_.top()));
    events_.pop();
    clock_.set(e.at);
    hash_.add(std::to_string(e.at.time_since_epoch().count()) + " " + e.label);
    ++fired_;
    e.fn();
  }

  ManualClock clock_;
  std::priority_queue<Event, std::vector<Event>, Later> events_;
  std::uint64_t seq_ = 0;
  std::uint64_t fired_ = 0;
  LogHash hash_;
};

}  // namespace hivegate::sim
