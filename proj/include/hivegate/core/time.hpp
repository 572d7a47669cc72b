#pragma once

#include <chrono>
#include <cstdint>

namespace hivegate {

// Tag clock for proxy-local timestamps. Live and virtual clocks both produce
// microseconds since their own origin.
struct ProxyClock {
  using duration = std::chrono::microseconds;
  using rep = duration::rep;
  using period = duration::period;
  using time_point = std::chrono::time_point<ProxyClock, duration>;
  static constexpr bool is_steady = true;
};

using Timestamp = ProxyClock::time_point;
using Micros = std::chrono::microseconds;
using Millis = std::chrono::milliseconds;

inline constexpr Timestamp at_ms(std::int64_t ms) { return Timestamp{Millis{ms}}; }
inline constexpr Timestamp at_us(std::int64_t us) { return Timestamp{Micros{us}}; }

inline constexpr std::int64_t to_ms(Timestamp t) {
  return std::chrono::duration_cast<Millis>(t.time_since_epoch()).count();
}

inline constexpr double to_seconds(Micros d) { return static_cast<double>(d.count()) / 1e6; }

class Clock {
 public:
  virtual ~Clock() = default;
  virtual Timestamp now() const = 0;
  // Wall-clock milliseconds, what h:epoch() reports to programs.
  virtual std::int64_t epoch_ms() const = 0;
};

class SteadyClock final : public Clock {
 public:
  SteadyClock() : origin_(std::chrono::steady_clock::now()) {}

  Timestamp now() const override {
    return Timestamp{std::chrono::duration_cast<Micros>(std::chrono::steady_clock::now() - origin_)};
  }

  std::int64_t epoch_ms() const override {
    return std::chrono::duration_cast<Millis>(std::chrono::system_clock::now().time_since_epoch())
        .count();
  }

 private:
  std::chrono::steady_clock::time_point origin_;
};

// Clock driven by hand (tests) or by the emulation event loop. epoch_ms is the
// virtual time plus a fixed offset so that virtual runs stay reproducible.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(Timestamp start = Timestamp{}, std::int64_t epoch_offset_ms = 0)
      : now_(start), epoch_offset_ms_(epoch_offset_ms) {}

  Timestamp now() const override { return now_; }
  std::int64_t epoch_ms() const override { return epoch_offset_ms_ + to_ms(now_); }

  void set(Timestamp t) { now_ = t; }
  void advance(Micros d) { now_ += d; }

 private:
  Timestamp now_;
  std::int64_t epoch_offset_ms_;
};

}  // namespace hivegate
