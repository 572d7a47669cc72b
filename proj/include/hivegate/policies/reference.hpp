#pragma once

#include <cctype>
#include <cstdlib>
#include <string>

#include "hivegate/policies/ladder.hpp"
#include "hivegate/policy/context.hpp"
#include "hivegate/policy/lua_program.hpp"
#include "hivegate/policy/native.hpp"

namespace hivegate::policies {

// Header text to number with the leniency of Lua's tonumber: surrounding
// whitespace is fine, trailing garbage is not.
inline std::optional<double> to_number(std::string_view text) {
  auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!text.empty() && ws(text.front())) text.remove_prefix(1);
  while (!text.empty() && ws(text.back())) text.remove_suffix(1);
  if (text.empty()) return std::nullopt;
  // strtod also reads "inf" and "nan", which tonumber rejects
  if (text.find_first_of("iInN") != std::string_view::npos) return std::nullopt;
  std::string s(text);
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return std::nullopt;
  return v;
}

// Redirect when a matching route is disconnected, downsample when it is slow,
// and tell the source when it is far too slow.
inline void traffic_monitor(ExecutionContext& ctx, Trigger) {
  const auto required_text = ctx.param("required_bw");
  if (!required_text) throw ProgramError("traffic_monitor needs params.required_bw");
  const double required = ctx.param_number("required_bw", 0);
  const std::string edge = ctx.param("edge_name").value_or("edge-detector");
  const std::string match = ctx.param("route_match").value_or("cloud");
  const std::string low = ctx.param("low_res").value_or("180p");
  auto h = ctx.trigger();
  for (const auto& q : ctx.queues()) {
    const auto route = ctx.route_key(q);
    if (route.find(match) == std::string::npos) continue;
    const double bw = ctx.observed_bw(q);
    if (bw == 0) {
      ctx.redirect(h, edge);
    } else if (bw < required) {
      ctx.transform(h, low);
    }
    if (bw < required / 2) ctx.notify(lua_number_string(bw));
  }
}

// Under latency pressure keep only "view" events; always drop late events.
inline void load_shed(ExecutionContext& ctx, Trigger) {
  const double filt = ctx.param_number("filt_thrd", 0.5);
  const double late = ctx.param_number("late_thrd", 1.0);
  for (const auto& q : ctx.queues()) {
    for (auto& m : ctx.messages(q)) {
      const double latency = ctx.avg_latency_ms(q).value_or(0.0);
      if (latency > filt * 1000) {
        auto type = ctx.json_string(m, "event_type");
        if (!type || *type != "view") ctx.drop(m);
      }
      if (auto event_time = ctx.json_number(m, "event_time")) {
        const double age = static_cast<double>(ctx.epoch_ms()) - *event_time;
        if (age > late * 1000) ctx.drop(m);
      }
    }
  }
}

// Newest first while a backlog exists, arrival order otherwise.
inline void fifo_lifo(ExecutionContext& ctx, Trigger) {
  auto q = ctx.trigger_queue();
  auto h = ctx.trigger();
  if (ctx.length(q) > 1) ctx.move_to_front(h);
  else ctx.move_to_back(h);
}

struct ChunkPath {
  std::string prefix;  // "/" or ""
  std::string resolution;
  std::string chunk;
};

inline std::optional<ChunkPath> split_chunk_path(std::string_view path) {
  ChunkPath out;
  if (!path.empty() && path.front() == '/') {
    out.prefix = "/";
    path.remove_prefix(1);
  }
  auto slash = path.find('/');
  if (slash == std::string_view::npos || slash == 0) return std::nullopt;
  out.resolution = std::string(path.substr(0, slash));
  out.chunk = std::string(path.substr(slash + 1));
  return out;
}

// Largest rung whose nominal chunk downloads within one chunk duration at the
// estimated bandwidth (bytes/s); the lowest rung if none does.
inline const ResolutionLadder::Rung& feasible_rung(const ResolutionLadder& ladder, double bw,
                                                   double chunk_seconds) {
  const auto* pred = &ladder.lowest();
  for (const auto& r : ladder.rungs())
    if (r.nominal_bytes / bw <= chunk_seconds) pred = &r;
  return *pred;
}

// Rewrites the requested chunk's resolution from the client's bandwidth
// estimate; lowers eagerly, raises only for a more-than-double gain.
inline void chunk_rewrite(ExecutionContext& ctx, Trigger) {
  auto ladder_text = ctx.param("ladder");
  if (!ladder_text) throw ProgramError("chunk_rewrite needs params.ladder");
  ResolutionLadder ladder;
  try {
    ladder = ResolutionLadder::parse(*ladder_text);
  } catch (const std::exception& e) {
    throw ProgramError(std::string("bad ladder: ") + e.what());
  }
  const double chunk_seconds = ctx.param_number("chunk_duration", 4.0);
  auto h = ctx.trigger();
  auto bw_text = ctx.header(h, "bw-est");
  if (!bw_text) return;
  auto parsed = to_number(*bw_text);
  if (!parsed || !(*parsed > 0)) return;
  const double bw = *parsed;
  auto path = ctx.header(h, "path");
  if (!path) return;
  auto parts = split_chunk_path(*path);
  if (!parts || !ladder.index_of(parts->resolution)) return;
  const auto& pred = feasible_rung(ladder, bw, chunk_seconds);
  const int p = label_height(pred.label);
  const int c = label_height(parts->resolution);
  if (p < c || p > c * 2) ctx.replace_header(h, "path", parts->prefix + pred.label + "/" + parts->chunk);
}

// Rung for a late item: the largest whose scaled transmission time fits both
// the predicted transmission time and the remaining playback deadline.
inline std::string compute_ett_pred(const ResolutionLadder& ladder, const std::string& resolution,
                                    double ptt_ms, double ett_ms, double age_ms, double duration_ms) {
  auto current = ladder.nominal(resolution);
  if (!current) return resolution;
  std::string best = ladder.lowest().label;
  for (const auto& r : ladder.rungs()) {
    const double ett_r = ett_ms * r.nominal_bytes / *current;
    if (ett_r <= ptt_ms && age_ms + ett_r <= duration_ms) best = r.label;
  }
  return best;
}

// Downsamples queued chunks whose estimated transmission time exceeds the
// predicted one, or that have waited longer than their duration.
inline void deadline_downsample(ExecutionContext& ctx, Trigger) {
  auto ladder_text = ctx.param("ladder");
  if (!ladder_text) throw ProgramError("deadline_downsample needs params.ladder");
  ResolutionLadder ladder;
  try {
    ladder = ResolutionLadder::parse(*ladder_text);
  } catch (const std::exception& e) {
    throw ProgramError(std::string("bad ladder: ") + e.what());
  }
  auto q = ctx.trigger_queue();
  const double bw = ctx.observed_bw(q);
  for (auto& item : ctx.messages(q)) {
    const double age = static_cast<double>(ctx.age_ms(item));
    const double size = static_cast<double>(ctx.size(item));
    auto resol = ctx.header(item, "resolution");
    auto ptt_text = ctx.header(item, "ptt");
    auto dur_text = ctx.header(item, "duration");
    if (!resol || !ptt_text || !dur_text) continue;
    auto ptt_v = to_number(*ptt_text), dur_v = to_number(*dur_text);
    if (!ptt_v || !dur_v) continue;
    const double ptt = *ptt_v, dur = *dur_v;
    const double ett = size / bw * 1000;
    if (ett > ptt || age > dur) {
      auto next = compute_ett_pred(ladder, *resol, ptt, ett, age, dur);
      if (next != *resol && ctx.transform(item, next)) ctx.replace_header(item, "resolution", next);
    }
  }
}

inline NativeRegistry builtin_registry() {
  NativeRegistry r;
  r.add("traffic_monitor", {true, true}, traffic_monitor);
  r.add("load_shed", {false, false}, load_shed);
  r.add("fifo_lifo", {false, false}, fifo_lifo);
  r.add("chunk_rewrite", {false, false}, chunk_rewrite);
  r.add("deadline_downsample", {true, false}, deadline_downsample);
  // Baseline programs used by the overhead benchmark.
  r.add("empty", {false, false}, [](ExecutionContext&, Trigger) {});
  r.add("iterate", {false, false}, [](ExecutionContext& ctx, Trigger) {
    auto q = ctx.trigger_queue();
    for (auto& m : ctx.messages(q)) ctx.size(m);
  });
  return r;
}

}  // namespace hivegate::policies
