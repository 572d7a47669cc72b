#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "hivegate/core/time.hpp"

namespace hivegate {

inline constexpr double kBytesPerKB = 1024.0;
// Burst allowance when no capacity is configured: 100 ms worth of rate.
inline constexpr double kDefaultBurstSeconds = 0.1;

// Byte-denominated token bucket refilled lazily at each observation. A rate of
// nullopt means unlimited; a rate of 0 means the route forwards nothing.
class TokenBucket {
 public:
  static TokenBucket unlimited() { return TokenBucket(); }

  TokenBucket(double rate_kb_per_s, std::optional<double> capacity_bytes, Timestamp now)
      : rate_kb_per_s_(rate_kb_per_s),
        explicit_capacity_(capacity_bytes),
        last_refill_(now) {
    if (rate_kb_per_s < 0) throw std::invalid_argument("rate must be non-negative");
    recompute_capacity();
    tokens_ = capacity_;
  }

  bool is_unlimited() const noexcept { return !rate_kb_per_s_.has_value(); }
  std::optional<double> rate_kb_per_s() const noexcept { return rate_kb_per_s_; }
  double bytes_per_second() const noexcept { return rate_kb_per_s_.value_or(0.0) * kBytesPerKB; }
  double capacity() const noexcept { return capacity_; }
  double tokens() const noexcept { return tokens_; }
  Timestamp last_refill() const noexcept { return last_refill_; }

  void refill(Timestamp now) {
    if (now <= last_refill_) return;
    if (rate_kb_per_s_) {
      tokens_ = std::min(capacity_, tokens_ + bytes_per_second() * to_seconds(now - last_refill_));
    }
    last_refill_ = now;
  }

  bool can_send(std::size_t bytes, Timestamp now) {
    if (is_unlimited()) return true;
    refill(now);
    return *rate_kb_per_s_ > 0 && tokens_ + kSlack >= static_cast<double>(bytes);
  }

  bool try_debit(std::size_t bytes, Timestamp now) {
    if (!can_send(bytes, now)) return false;
    if (!is_unlimited()) tokens_ = std::max(0.0, tokens_ - static_cast<double>(bytes));
    return true;
  }

  // Earliest time `bytes` could be debited, nullopt when the rate is zero.
  // Does not apply the timer floor; callers do.
  std::optional<Timestamp> ready_at(std::size_t bytes, Timestamp now) {
    if (is_unlimited()) return now;
    refill(now);
    if (*rate_kb_per_s_ <= 0) return std::nullopt;
    double deficit = static_cast<double>(bytes) - tokens_;
    if (deficit <= kSlack) return now;
    auto us = static_cast<std::int64_t>(std::ceil(deficit / bytes_per_second() * 1e6));
    return now + Micros{us};
  }

  // Replaces the rate; tokens earned at the old rate are kept (up to the new
  // capacity) except when the route goes dark.
  void set_rate(std::optional<double> rate_kb_per_s, Timestamp now) {
    if (rate_kb_per_s && *rate_kb_per_s < 0) throw std::invalid_argument("rate must be non-negative");
    refill(now);
    rate_kb_per_s_ = rate_kb_per_s;
    recompute_capacity();
    if (rate_kb_per_s_ && *rate_kb_per_s_ == 0) tokens_ = 0;
    tokens_ = std::min(tokens_, capacity_);
  }

  void set_capacity(std::optional<double> capacity_bytes) {
    explicit_capacity_ = capacity_bytes;
    recompute_capacity();
    tokens_ = std::min(tokens_, capacity_);
  }

  // Grows the capacity so a message of `bytes` can ever be forwarded.
  void fit_message(std::size_t bytes) {
    largest_message_ = std::max(largest_message_, static_cast<double>(bytes));
    recompute_capacity();
  }

 private:
  TokenBucket() = default;

  void recompute_capacity() {
    double base = explicit_capacity_ ? *explicit_capacity_
                                     : bytes_per_second() * kDefaultBurstSeconds;
    capacity_ = std::max(base, largest_message_);
  }

  // Absorbs floating-point residue from microsecond rounding.
  static constexpr double kSlack = 1e-6;

  std::optional<double> rate_kb_per_s_;
  std::optional<double> explicit_capacity_;
  double capacity_ = 0;
  double tokens_ = 0;
  double largest_message_ = 0;
  Timestamp last_refill_{};
};

}  // namespace hivegate
