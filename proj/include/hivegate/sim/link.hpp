#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "hivegate/core/errors.hpp"
#include "hivegate/core/glob.hpp"
#include "hivegate/core/time.hpp"

namespace hivegate::sim {

// Bandwidth schedule for the routes matching a pattern. The rate applies both
// to the queue's token bucket and to the serial link that carries forwarded
// messages, so a forwarded message still takes size / bandwidth to arrive.
struct LinkModel {
  struct Step {
    std::int64_t t_ms = 0;
    double kb_per_s = 0;  // 0: disconnected
  };

  std::string route_pattern;
  std::vector<Step> schedule;
  double delay_ms = 0;  // one-way propagation

  void validate() const {
    if (!valid_route_pattern(route_pattern)) throw ScenarioError("bad link route pattern '" + route_pattern + "'");
    if (schedule.empty()) throw ScenarioError("link " + route_pattern + " has an empty schedule");
    for (std::size_t i = 0; i < schedule.size(); ++i) {
      if (schedule[i].kb_per_s < 0) throw ScenarioError("link " + route_pattern + " has a negative bandwidth");
      if (i > 0 && schedule[i].t_ms <= schedule[i - 1].t_ms)
        throw ScenarioError("link " + route_pattern + " schedule times must be strictly increasing");
    }
    if (delay_ms < 0) throw ScenarioError("link " + route_pattern + " has a negative delay");
  }

  // Bandwidth in effect at t; before the first step the first step's value.
  double kb_per_s_at(std::int64_t t_ms) const {
    double bw = schedule.front().kb_per_s;
    for (const auto& s : schedule) {
      if (s.t_ms > t_ms) break;
      bw = s.kb_per_s;
    }
    return bw;
  }
};

// Sharp drop for `hold_ms` and fast recovery.
inline std::vector<LinkModel::Step> sharp_drop_trace(double high, double low, std::int64_t drop_at_ms,
                                                     std::int64_t hold_ms, std::int64_t ramp_ms = 1000) {
  std::vector<LinkModel::Step> s{{0, high}, {drop_at_ms, low}};
  const int steps = 4;
  for (int i = 1; i <= steps; ++i)
    s.push_back({drop_at_ms + hold_ms + ramp_ms * (i - 1) / steps, low + (high - low) * i / steps});
  return s;
}

// Gradual decrease over `ramp_ms`, then gradual recovery over `ramp_ms`.
inline std::vector<LinkModel::Step> gradual_trace(double high, double low, std::int64_t start_ms,
                                                  std::int64_t ramp_ms, std::int64_t step_ms = 1000) {
  std::vector<LinkModel::Step> s{{0, high}};
  const std::int64_t n = std::max<std::int64_t>(1, ramp_ms / step_ms);
  for (std::int64_t i = 1; i <= n; ++i) s.push_back({start_ms + i * step_ms, high + (low - high) * i / n});
  for (std::int64_t i = 1; i <= n; ++i)
    s.push_back({start_ms + ramp_ms + i * step_ms, low + (high - low) * i / n});
  return s;
}

}  // namespace hivegate::sim
