#pragma once

#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "hivegate/policy/loader.hpp"
#include "hivegate/sim/analysis.hpp"
#include "hivegate/sim/workload.hpp"

namespace hivegate::sim {

using nlohmann::json;

struct Scenario {
  std::string name;
  std::string variant;
  json doc;  // the scenario with the variant already applied
  std::filesystem::path base_dir;
  double duration_ms = 0;
  std::uint64_t seed = 1;
  double sample_ms = 250;
  double policy_start_ms = 0;  // bindings go live here, after a warm-up
  std::vector<QueueRule> queues;
  std::vector<LinkModel> links;
  std::vector<PolicyBinding> policies;
  CallbackConfig callbacks;
};

inline std::vector<LinkModel::Step> parse_trace(const json& t) {
  const auto shape = t.value("shape", "");
  if (shape == "sharp_drop")
    return sharp_drop_trace(t.at("high").get<double>(), t.at("low").get<double>(), t.at("drop_at_ms").get<std::int64_t>(),
                            t.at("hold_ms").get<std::int64_t>(), t.value("ramp_ms", std::int64_t{1000}));
  if (shape == "gradual")
    return gradual_trace(t.at("high").get<double>(), t.at("low").get<double>(), t.at("start_ms").get<std::int64_t>(),
                         t.at("ramp_ms").get<std::int64_t>(), t.value("step_ms", std::int64_t{1000}));
  throw ScenarioError("unknown trace shape '" + shape + "'");
}

// Validates a scenario document, applying the named variant first (a JSON
// merge patch from "variants"). Every problem is reported in one error.
inline Scenario parse_scenario(json doc, const std::filesystem::path& base_dir, const std::string& variant = "") {
  std::vector<std::string> errors;
  Scenario s;
  s.base_dir = base_dir;
  s.variant = variant;
  if (!doc.is_object()) throw ScenarioError("scenario must be an object");
  if (!variant.empty()) {
    if (!doc.contains("variants") || !doc["variants"].contains(variant))
      throw ScenarioError("unknown variant '" + variant + "'");
    doc.merge_patch(doc["variants"][variant]);
  }
  try {
    s.name = doc.value("name", "scenario");
    s.duration_ms = doc.value("duration_ms", 0.0);
    s.seed = doc.value("seed", std::uint64_t{1});
    s.sample_ms = doc.value("sample_ms", 250.0);
    s.policy_start_ms = doc.value("policy_start_ms", 0.0);
    if (s.policy_start_ms < 0) errors.push_back("policy_start_ms must not be negative");
    if (!(s.duration_ms > 0)) errors.push_back("duration_ms must be positive");
    if (!(s.sample_ms > 0)) errors.push_back("sample_ms must be positive");

    for (const auto& q : doc.value("queues", json::array())) {
      QueueRule r;
      r.route_pattern = q.value("route_pattern", "");
      if (!valid_route_pattern(r.route_pattern)) errors.push_back("bad queue pattern '" + r.route_pattern + "'");
      if (q.contains("rate_kb_per_s")) r.config.rate_kb_per_s = q["rate_kb_per_s"].get<double>();
      if (q.contains("capacity_bytes")) r.config.capacity_bytes = q["capacity_bytes"].get<double>();
      r.config.max_length = q.value("max_length", kDefaultMaxQueueLength);
      r.config.bw_window = Millis{q.value("bw_window_ms", kDefaultBandwidthWindow.count())};
      s.queues.push_back(r);
    }

    for (const auto& l : doc.value("links", json::array())) {
      LinkModel m;
      m.route_pattern = l.value("route_pattern", "");
      m.delay_ms = l.value("delay_ms", 0.0);
      if (l.contains("trace")) {
        m.schedule = parse_trace(l["trace"]);
      } else {
        for (const auto& st : l.value("schedule", json::array()))
          m.schedule.push_back({st.at("t_ms").get<std::int64_t>(), st.at("kb_per_s").get<double>()});
      }
      try {
        m.validate();
      } catch (const ScenarioError& e) {
        errors.push_back(e.what());
      }
      s.links.push_back(std::move(m));
    }

    if (doc.contains("callbacks")) {
      const auto& c = doc["callbacks"];
      s.callbacks.transform_timeout = Millis{c.value("transform_timeout_ms", kDefaultTransformTimeout.count())};
      s.callbacks.notify_timeout = Millis{c.value("notify_timeout_ms", kDefaultNotifyTimeout.count())};
    }

    auto loaded = load_bindings(doc.value("policies", json::array()), base_dir);
    for (const auto& d : loaded.diagnostics)
      if (d.severity == Diagnostic::Severity::Error) errors.push_back(d.where + ": " + d.message);
    s.policies = std::move(loaded.bindings);

    const auto& wl = doc.value("workload", json::object());
    const auto type = wl.value("type", "");
    if (type != "ad_events" && type != "periodic" && type != "video")
      errors.push_back("unknown workload type '" + type + "'");
    if (type == "ad_events" && wl.value("phases", json::array()).empty())
      errors.push_back("ad_events workload needs phases");
    if (type == "periodic" && !(wl.value("interval_ms", 0.0) > 0) && !(wl.value("rate_per_s", 0.0) > 0))
      errors.push_back("periodic workload needs a positive interval_ms or rate_per_s");
    if (type == "video") {
      try {
        ResolutionLadder::parse(wl.value("ladder", ""));
      } catch (const std::exception& e) {
        errors.push_back(std::string("video ladder: ") + e.what());
      }
    }
  } catch (const json::exception& e) {
    errors.push_back(e.what());
  }
  if (!errors.empty()) {
    std::string msg = "invalid scenario";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ScenarioError(msg);
  }
  s.doc = std::move(doc);
  return s;
}

inline Scenario load_scenario(const std::filesystem::path& path, const std::string& variant = "") {
  auto text = read_text_file(path);
  if (!text) throw ScenarioError("cannot read " + path.string());
  json doc;
  try {
    doc = json::parse(*text);
  } catch (const json::exception& e) {
    throw ScenarioError(path.string() + ": " + e.what());
  }
  return parse_scenario(std::move(doc), path.parent_path(), variant);
}

struct ScenarioRun {
  Scenario scenario;
  std::unique_ptr<World> world;
  std::shared_ptr<VideoPlayer> player;
  json summary;
};

inline json summarize(const ScenarioRun& run);

// Builds the world, schedules the workload and runs to the scenario's end.
inline ScenarioRun run_scenario(const Scenario& s, std::optional<std::uint64_t> seed = std::nullopt) {
  ScenarioRun run;
  run.scenario = s;
  if (seed) run.scenario.seed = *seed;
  run.world = std::make_unique<World>(s.queues, s.callbacks);
  World& w = *run.world;
  for (const auto& l : s.links) w.add_link(l);
  if (s.policy_start_ms > 0)
    w.loop().at(from_ms(s.policy_start_ms), "policies", [&w, b = s.policies] { w.set_bindings(b); });
  else
    w.set_bindings(s.policies);

  const json services = s.doc.value("services", json::object());
  for (const auto& [name, sv] : services.items()) {
    Service svc;
    svc.service_ms = sv.value("service_ms", 0.0);
    svc.response_bytes = sv.value("response_bytes", std::size_t{16});
    w.add_service(name, svc);
  }
  if (s.doc.contains("transformer")) {
    const auto& t = s.doc["transformer"];
    w.transformer().latency_ms = t.value("latency_ms", 20.0);
    const json sizes = t.value("sizes", json::object());
    for (const auto& [label, bytes] : sizes.items())
      w.transformer().sizes[label] = bytes.get<std::size_t>();
  }

  const auto& wl = s.doc["workload"];
  const auto type = wl["type"].get<std::string>();
  const std::uint64_t wseed = run.scenario.seed;
  if (type == "ad_events") {
    AdEventSpec spec;
    spec.source = wl.value("source", spec.source);
    spec.destination = wl.value("destination", spec.destination);
    spec.event_bytes = wl.value("event_bytes", spec.event_bytes);
    for (const auto& p : wl["phases"]) spec.phases.push_back({p.at("until_ms").get<double>(), p.at("rate_per_s").get<double>()});
    schedule_ad_events(w, spec, wseed);
  } else if (type == "periodic") {
    PeriodicSpec spec;
    spec.kind = wl.value("kind", spec.kind);
    spec.source = wl.value("source", "client");
    spec.destination = wl.value("destination", "server");
    spec.target = wl.value("target", spec.target);
    spec.interval_ms = wl.contains("rate_per_s") ? 1000.0 / wl["rate_per_s"].get<double>() : wl["interval_ms"].get<double>();
    spec.first_at_ms = wl.value("first_at_ms", -1.0);
    spec.until_ms = wl.value("until_ms", s.duration_ms);
    spec.bytes = wl.value("bytes", spec.bytes);
    spec.bytes_jitter = wl.value("bytes_jitter", 0.0);
    const json headers = wl.value("headers", json::object());
    for (const auto& [k, v] : headers.items())
      spec.headers.emplace_back(k, v.is_string() ? v.get<std::string>() : v.dump());
    schedule_periodic(w, spec, wseed);
  } else {
    VideoSpec spec;
    spec.source = wl.value("source", spec.source);
    spec.destination = wl.value("destination", spec.destination);
    spec.ladder = ResolutionLadder::parse(wl["ladder"].get<std::string>());
    spec.chunk_ms = wl.value("chunk_ms", spec.chunk_ms);
    spec.buffer_target_ms = wl.value("buffer_target_ms", spec.buffer_target_ms);
    spec.ewma_alpha = wl.value("ewma_alpha", spec.ewma_alpha);
    spec.initial_estimate = wl.value("initial_estimate", 0.0);
    spec.until_ms = wl.value("until_ms", s.duration_ms);
    spec.downlink = wl.value("downlink", "");
    spec.service_ms = wl.value("service_ms", spec.service_ms);
    const LinkModel* down = nullptr;
    for (const auto& l : s.links)
      if (l.route_pattern == spec.downlink) down = &l;
    w.add_service(spec.destination, VideoPlayer::origin(spec));
    run.player = std::make_shared<VideoPlayer>(w, spec, down);
    run.player->start();
  }

  w.sample_every(s.sample_ms, s.duration_ms);
  w.run_until(s.duration_ms);
  if (run.player) run.player->finish(s.duration_ms);
  run.summary = summarize(run);
  return run;
}

inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
template <class T>
inline json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline json summarize(const ScenarioRun& run) {
  const World& w = *run.world;
  const Scenario& s = run.scenario;
  json out;
  out["scenario"] = s.name;
  out["variant"] = s.variant;
  out["seed"] = s.seed;
  out["duration_ms"] = s.duration_ms;

  std::size_t generated = 0, forwarded = 0, dropped = 0, rejected = 0, queued = 0, responses = 0, transformed = 0,
              redirected = 0;
  std::vector<double> lat;
  std::string kind;
  for (const auto& [id, r] : w.records()) {
    if (r.request_id) {
      ++responses;
      continue;
    }
    kind = r.kind;
    ++generated;
    if (r.rejected) ++rejected;
    else if (r.forwarded_ms) ++forwarded;
    else if (r.dropped_ms) ++dropped;
    else ++queued;
    if (r.transformed) ++transformed;
    if (r.final_route != r.first_route) ++redirected;
    if (auto l = latency_of(r)) lat.push_back(*l);
  }
  out["messages"] = {{"generated", generated}, {"forwarded", forwarded}, {"dropped", dropped},
                     {"rejected", rejected},   {"still_queued", queued}, {"responses", responses},
                     {"transformed", transformed}, {"redirected", redirected}, {"completed", lat.size()}};
  out["latency_ms"] = {{"p50", num(percentile(lat, 50))}, {"p75", num(percentile(lat, 75))},
                       {"p99", num(percentile(lat, 99))}};
  out["policy"] = {{"executions", w.executions()}, {"failed", w.failed_executions()},
                   {"mutations", w.mutation_counts()}, {"notifications", w.notifications().size()}};
  const auto cs = w.dispatcher().stats();
  out["transforms"] = {{"dispatched", cs.transforms_dispatched}, {"completed", cs.transforms_completed},
                       {"reverted", cs.transforms_reverted}, {"late", cs.transforms_late}};
  json audit = json::array();
  for (const auto& row : w.audit())
    audit.push_back({{"route", row.route}, {"generated", row.generated}, {"forwarded", row.forwarded},
                     {"dropped", row.dropped}, {"queued", row.queued}, {"resident", row.resident},
                     {"balanced", row.balanced()}});
  out["audit"] = audit;
  out["audit_passes"] = w.audit_passes();
  out["log_hash"] = hex64(w.log_hash());
  out["events_fired"] = w.loop().fired();

  const auto& wl = s.doc["workload"];
  const auto type = wl.value("type", "");
  const auto& an = s.doc.value("analysis", json::object());
  if (type == "ad_events") {
    const double deadline = an.value("deadline_ms", 1000.0);
    const double bin = an.value("bin_ms", 500.0);
    json phases = json::array();
    double from = 0;
    for (const auto& p : wl["phases"]) {
      const double to = p["until_ms"].get<double>();
      auto rs = created_between(w, "event", from, to);
      phases.push_back({{"from_ms", from}, {"until_ms", to}, {"rate_per_s", p["rate_per_s"]},
                        {"generated", rs.size()}, {"drop_fraction", drop_fraction(rs)},
                        {"deadline_met", deadline_met(rs, deadline)},
                        {"median_latency_ms", num(median(latencies(rs)))}});
      from = to;
    }
    out["phases"] = phases;
    if (wl["phases"].size() >= 3) {
      const double baseline = phases[0]["median_latency_ms"].is_number() ? phases[0]["median_latency_ms"].get<double>() : 0;
      const double burst_end = wl["phases"][1]["until_ms"].get<double>();
      const double threshold = std::max(baseline * an.value("recovery_factor", 1.5), baseline + an.value("recovery_slack_ms", 50.0));
      auto bins = latency_bins(w, "event", 0, s.duration_ms, bin);
      auto rec = recovery_ms(bins, burst_end, threshold);
      out["recovery"] = {{"baseline_ms", baseline}, {"threshold_ms", threshold}, {"after_burst_ms", opt(rec)}};
    }
  } else if (type == "periodic") {
    const std::string k = wl.value("kind", "item");
    out["transformed_fraction"] = transformed_fraction(w, k);
    const double interval = wl.contains("rate_per_s") ? 1000.0 / wl["rate_per_s"].get<double>() : wl["interval_ms"].get<double>();
    for (const auto& l : s.links) {
      auto o = first_outage(l);
      if (!o) continue;
      auto pre = latencies(created_between(w, k, 0, o->cut_ms));
      json outage = {{"route_pattern", l.route_pattern}, {"cut_ms", o->cut_ms}, {"reconnect_ms", opt(o->reconnect_ms)},
                     {"pre_cut_median_ms", num(median(pre))}};
      auto rs = redirect_stats(w, k, *o);
      outage["detection_index"] = opt(rs.detection_index);
      outage["detection_ms"] = opt(rs.detection_ms);
      outage["after_detection"] = rs.after_detection;
      outage["redirected_after_detection"] = rs.redirected_after_detection;
      if (o->reconnect_ms) {
        const int windows = an.value("post_windows", 5);
        const double from = *o->reconnect_ms + interval;
        auto post = latencies(created_between(w, k, from, from + windows * interval));
        outage["post_window_ms"] = {from, from + windows * interval};
        outage["post_reconnect_median_ms"] = num(median(post));
      }
      out["outage"] = outage;
      break;
    }
    json bins = json::array();
    for (const auto& b : latency_bins(w, k, 0, s.duration_ms, an.value("bin_ms", 1000.0)))
      bins.push_back({{"start_ms", b.start_ms}, {"created", b.created}, {"median_latency_ms", num(b.median_latency_ms)}});
    out["latency_bins"] = bins;
  } else if (type == "video" && run.player) {
    const auto& ps = run.player->stats();
    json stalls = json::array();
    for (const auto& [a, b] : ps.stalls) stalls.push_back({a, b});
    out["video"] = {{"stall_ms", ps.stall_ms}, {"startup_ms", ps.startup_ms}, {"chunks", ps.chunks},
                    {"mean_height", mean_height(ps.delivered)}, {"stalls", stalls}, {"delivered", ps.delivered}};
  }
  return out;
}

}  // namespace hivegate::sim
