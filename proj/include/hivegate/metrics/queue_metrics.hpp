#pragma once

#include <deque>
#include <optional>
#include <string_view>

#include "hivegate/core/time.hpp"

namespace hivegate {

// Socket-level figures for a route. Absent values mean "unavailable".
struct TransportMetrics {
  std::optional<double> mean_rtt_ms;
  std::optional<double> cwnd_bytes;
  std::optional<double> inflight_packets;

  std::optional<double> get(std::string_view name) const {
    if (name == "mean_rtt_ms" || name == "rtt" || name == "mean_rtt") return mean_rtt_ms;
    if (name == "cwnd_bytes" || name == "cwnd") return cwnd_bytes;
    if (name == "inflight_packets" || name == "inflight") return inflight_packets;
    return std::nullopt;
  }
};

inline constexpr Millis kDefaultBandwidthWindow{350};
inline constexpr double kDefaultLatencyAlpha = 0.3;

// Per-queue observations: windowed forwarding rate and an EWMA of
// request/response round trips.
class QueueMetrics {
 public:
  explicit QueueMetrics(Millis window = kDefaultBandwidthWindow,
                        double latency_alpha = kDefaultLatencyAlpha)
      : window_(window), alpha_(latency_alpha) {}

  void record_forward(std::size_t bytes, Timestamp at) {
    if (bytes == 0) return;
    forwards_.push_back({at, bytes});
    window_bytes_ += bytes;
    trim(at);
    last_progress_ = at;
    held_estimate_ = static_cast<double>(window_bytes_) / window_seconds();
  }

  void record_latency(double rtt_ms) {
    if (rtt_ms < 0) return;
    avg_latency_ms_ = samples_ == 0 ? rtt_ms : alpha_ * rtt_ms + (1 - alpha_) * avg_latency_ms_;
    ++samples_;
  }

  // Called by the owning queue whenever it goes empty <-> nonempty.
  void note_backlog(bool nonempty, Timestamp at) {
    if (nonempty && !backlog_since_) backlog_since_ = at;
    if (!nonempty) backlog_since_.reset();
  }

  // Bytes per second over the trailing window. With no forwards in the window
  // the estimate is 0 only if the queue has been stuck nonempty for a full
  // window (or never forwarded); an idle queue keeps its last estimate.
  double observed_bw(Timestamp now) const {
    std::size_t bytes = 0;
    auto cutoff = now - window_;
    for (auto it = forwards_.rbegin(); it != forwards_.rend() && it->at > cutoff; ++it) {
      if (it->at <= now) bytes += it->bytes;
    }
    if (bytes > 0) return static_cast<double>(bytes) / window_seconds();
    if (!last_progress_) return 0;
    if (backlog_since_ && now - std::max(*last_progress_, *backlog_since_) >= window_) return 0;
    return held_estimate_;
  }

  double avg_latency_ms() const noexcept { return avg_latency_ms_; }
  bool has_latency() const noexcept { return samples_ > 0; }
  std::size_t latency_samples() const noexcept { return samples_; }
  std::optional<Timestamp> last_progress() const noexcept { return last_progress_; }
  std::optional<Timestamp> backlog_since() const noexcept { return backlog_since_; }
  Millis window() const noexcept { return window_; }
  void set_window(Millis w) { window_ = w; }

  TransportMetrics transport;

 private:
  struct Forward {
    Timestamp at;
    std::size_t bytes;
  };

  double window_seconds() const { return static_cast<double>(window_.count()) / 1000.0; }

  void trim(Timestamp now) {
    auto cutoff = now - window_;
    while (!forwards_.empty() && forwards_.front().at <= cutoff) {
      window_bytes_ -= forwards_.front().bytes;
      forwards_.pop_front();
    }
  }

  Millis window_;
  double alpha_;
  std::deque<Forward> forwards_;
  std::size_t window_bytes_ = 0;
  std::optional<Timestamp> last_progress_;
  std::optional<Timestamp> backlog_since_;
  double held_estimate_ = 0;
  double avg_latency_ms_ = 0;
  std::size_t samples_ = 0;
};

// Age of a resident message in whole milliseconds.
inline std::int64_t message_age_ms(Timestamp enqueued, Timestamp now) {
  if (now <= enqueued) return 0;
  return std::chrono::duration_cast<Millis>(now - enqueued).count();
}

}  // namespace hivegate
