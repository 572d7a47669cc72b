#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "hivegate/policies/ladder.hpp"
#include "hivegate/sim/world.hpp"

namespace hivegate::sim {

// Nearest-rank percentile; NaN for an empty sample.
inline double percentile(std::vector<double> v, double p) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(v.size())));
  rank = std::clamp<std::size_t>(rank, 1, v.size());
  return v[rank - 1];
}

inline double median(std::vector<double> v) { return percentile(std::move(v), 50); }

inline std::optional<double> latency_of(const MessageRecord& r) {
  if (!r.completed_ms) return std::nullopt;
  return *r.completed_ms - r.created_ms;
}

// Requests of one kind created in [from, to).
inline std::vector<const MessageRecord*> created_between(const World& w, const std::string& kind, double from,
                                                         double to) {
  std::vector<const MessageRecord*> out;
  for (const auto& [id, r] : w.records())
    if (r.kind == kind && r.created_ms >= from && r.created_ms < to) out.push_back(&r);
  return out;
}

inline std::vector<double> latencies(const std::vector<const MessageRecord*>& rs) {
  std::vector<double> out;
  for (const auto* r : rs)
    if (auto l = latency_of(*r)) out.push_back(*l);
  return out;
}

inline double drop_fraction(const std::vector<const MessageRecord*>& rs) {
  if (rs.empty()) return 0;
  std::size_t d = 0;
  for (const auto* r : rs) d += (r->dropped_ms || r->rejected) ? 1 : 0;
  return static_cast<double>(d) / static_cast<double>(rs.size());
}

inline std::size_t deadline_met(const std::vector<const MessageRecord*>& rs, double deadline_ms) {
  std::size_t n = 0;
  for (const auto* r : rs)
    if (auto l = latency_of(*r); l && *l <= deadline_ms) ++n;
  return n;
}

struct Bin {
  double start_ms = 0;
  std::size_t created = 0;
  std::size_t completed = 0;
  double median_latency_ms = std::numeric_limits<double>::quiet_NaN();
};

// Median latency of the requests created in each bin.
inline std::vector<Bin> latency_bins(const World& w, const std::string& kind, double from, double to, double bin_ms) {
  std::vector<Bin> out;
  for (double t = from; t < to; t += bin_ms) {
    auto rs = created_between(w, kind, t, std::min(t + bin_ms, to));
    Bin b;
    b.start_ms = t;
    b.created = rs.size();
    auto ls = latencies(rs);
    b.completed = ls.size();
    if (!ls.empty()) b.median_latency_ms = median(ls);
    out.push_back(b);
  }
  return out;
}

// Time from `from` until the bin medians fall to `threshold` and stay there.
// Bins without completions count as not recovered. nullopt: never recovered.
inline std::optional<double> recovery_ms(const std::vector<Bin>& bins, double from, double threshold) {
  std::optional<double> candidate;
  for (const auto& b : bins) {
    if (b.start_ms < from) continue;
    const bool ok = b.completed > 0 && b.median_latency_ms <= threshold;
    if (ok && !candidate) candidate = b.start_ms - from;
    if (!ok) candidate.reset();
  }
  return candidate;
}

// Times of a link's first transition to 0 and back.
struct Outage {
  double cut_ms = 0;
  std::optional<double> reconnect_ms;
};

inline std::optional<Outage> first_outage(const LinkModel& link) {
  for (std::size_t i = 0; i < link.schedule.size(); ++i) {
    if (link.schedule[i].kb_per_s != 0) continue;
    Outage o{static_cast<double>(link.schedule[i].t_ms), std::nullopt};
    for (std::size_t j = i + 1; j < link.schedule.size(); ++j)
      if (link.schedule[j].kb_per_s > 0) {
        o.reconnect_ms = static_cast<double>(link.schedule[j].t_ms);
        break;
      }
    return o;
  }
  return std::nullopt;
}

struct RedirectStats {
  std::optional<std::size_t> detection_index;  // 1-based among messages created after the cut
  std::optional<double> detection_ms;
  std::size_t after_detection = 0;  // created in [detection, reconnect)
  std::size_t redirected_after_detection = 0;
};

inline RedirectStats redirect_stats(const World& w, const std::string& kind, const Outage& o) {
  RedirectStats s;
  const double end = o.reconnect_ms.value_or(std::numeric_limits<double>::infinity());
  auto after = created_between(w, kind, o.cut_ms, end);
  std::sort(after.begin(), after.end(), [](auto* a, auto* b) { return a->created_ms < b->created_ms; });
  for (std::size_t i = 0; i < after.size(); ++i) {
    const auto* r = after[i];
    const bool redirected = r->final_route != r->first_route;
    if (!s.detection_index && redirected) {
      s.detection_index = i + 1;
      s.detection_ms = r->created_ms;
    }
    if (s.detection_index) {
      ++s.after_detection;
      if (redirected) ++s.redirected_after_detection;
    }
  }
  return s;
}

inline double transformed_fraction(const World& w, const std::string& kind) {
  std::size_t n = 0, t = 0;
  for (const auto& [id, r] : w.records()) {
    if (r.kind != kind || !r.forwarded_ms) continue;
    ++n;
    if (r.transformed) ++t;
  }
  return n ? static_cast<double>(t) / static_cast<double>(n) : 0;
}

inline double mean_height(const std::vector<std::string>& labels) {
  if (labels.empty()) return 0;
  double sum = 0;
  for (const auto& l : labels) sum += label_height(l);
  return sum / static_cast<double>(labels.size());
}

}  // namespace hivegate::sim
