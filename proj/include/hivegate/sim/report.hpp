#pragma once

#include <filesystem>
#include <fstream>

#include "hivegate/sim/scenario.hpp"

namespace hivegate::sim {

inline json record_json(const MessageRecord& r) {
  json j{{"id", r.id},
         {"kind", r.kind},
         {"first_route", r.first_route},
         {"final_route", r.final_route},
         {"created_ms", r.created_ms},
         {"enqueue_ms", r.rejected ? json(nullptr) : json(r.created_ms)},
         {"forward_ms", opt(r.forwarded_ms)},
         {"drop_ms", opt(r.dropped_ms)},
         {"deliver_ms", opt(r.delivered_ms)},
         {"complete_ms", opt(r.completed_ms)},
         {"rejected", r.rejected},
         {"transformed", r.transformed},
         {"original_size", r.original_size},
         {"final_size", r.final_size}};
  if (!r.resolution.empty()) j["resolution"] = r.resolution;
  if (r.request_id) j["request_id"] = *r.request_id;
  return j;
}

// records.jsonl (one line per message), series.jsonl (one line per queue
// sample) and summary.json.
inline void write_report(const ScenarioRun& run, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const World& w = *run.world;
  {
    std::ofstream out(dir / "records.jsonl");
    for (const auto& [id, r] : w.records()) out << record_json(r).dump() << '\n';
  }
  {
    std::ofstream out(dir / "series.jsonl");
    for (const auto& p : w.series())
      out << json{{"t_ms", p.t_ms}, {"route", p.route}, {"length", p.length}, {"observed_bw", p.observed_bw},
                  {"avg_latency_ms", p.avg_latency_ms}}
                 .dump()
          << '\n';
  }
  std::ofstream out(dir / "summary.json");
  out << run.summary.dump(2) << '\n';
  if (!out) throw ScenarioError("cannot write report to " + dir.string());
}

}  // namespace hivegate::sim
