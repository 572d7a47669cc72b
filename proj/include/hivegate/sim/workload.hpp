#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "hivegate/policies/ladder.hpp"
#include "hivegate/policy/lua_program.hpp"
#include "hivegate/sim/world.hpp"

namespace hivegate::sim {

// Seeded randomness with portable results: mt19937_64's output sequence is
// fixed by the standard, the distributions are derived here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  std::uint64_t below(std::uint64_t n) { return gen_() % n; }

 private:
  std::mt19937_64 gen_;
};

inline HttpFrame post_frame(const std::string& host, const std::string& target, std::string body,
                            const std::string& content_type = "application/octet-stream") {
  HttpFrame f;
  f.start.method = "POST";
  f.start.target = target;
  f.headers.set("Host", host);
  f.headers.set("Content-Type", content_type);
  f.headers.set("Content-Length", std::to_string(body.size()));
  f.body = std::move(body);
  return f;
}

struct RatePhase {
  double until_ms = 0;
  double rate_per_s = 0;
};

inline const char* const kEventTypes[] = {"view", "click", "purchase"};

// Ad events at a fixed interval per phase; event_type uniform over
// view/click/purchase, event_time the emission's epoch milliseconds.
struct AdEventSpec {
  std::string source = "web";
  std::string destination = "analytics";
  std::vector<RatePhase> phases;
  std::size_t event_bytes = 100;
};

inline std::string ad_event_body(const char* type, std::int64_t epoch_ms, std::uint64_t seq, std::size_t bytes) {
  nlohmann::json j{{"event_type", type}, {"event_time", epoch_ms}, {"ad_id", "ad-" + std::to_string(seq % 1000)}};
  j["pad"] = "";
  auto s = j.dump();
  if (s.size() < bytes) {
    j["pad"] = std::string(bytes - s.size(), '-');
    s = j.dump();
  }
  return s;
}

inline void schedule_ad_events(World& w, const AdEventSpec& spec, std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(seed);
  auto seq = std::make_shared<std::uint64_t>(0);
  double t = 0;
  for (const auto& ph : spec.phases) {
    if (ph.rate_per_s <= 0) {
      t = ph.until_ms;
      continue;
    }
    const double gap = 1000.0 / ph.rate_per_s;
    // Emission i of a phase lands at start + i * gap so rounding never drifts.
    const double start = t;
    for (std::uint64_t i = 0;; ++i) {
      const double at = start + static_cast<double>(i) * gap;
      if (at >= ph.until_ms) break;
      w.loop().at(from_ms(at), "event", [&w, spec, rng, seq] {
        const char* type = kEventTypes[rng->below(3)];
        auto body = ad_event_body(type, w.epoch_ms(), (*seq)++, spec.event_bytes);
        w.send(Route(spec.source, spec.destination, Direction::Request),
               post_frame(spec.destination, "/events", std::move(body), "application/json"), "event");
      });
    }
    t = ph.until_ms;
  }
}

// Fixed-interval uploads (camera frames, sensor batches, constant load).
struct PeriodicSpec {
  std::string kind = "item";
  std::string source;
  std::string destination;
  std::string target = "/upload";
  double interval_ms = 1000;
  double first_at_ms = -1;  // default: one interval in
  double until_ms = 0;
  std::size_t bytes = 1024;
  double bytes_jitter = 0;  // uniform +/- fraction of bytes
  std::vector<std::pair<std::string, std::string>> headers;
};

inline void schedule_periodic(World& w, const PeriodicSpec& spec, std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(seed);
  const double first = spec.first_at_ms < 0 ? spec.interval_ms : spec.first_at_ms;
  for (std::uint64_t i = 0;; ++i) {
    const double at = first + static_cast<double>(i) * spec.interval_ms;
    if (at >= spec.until_ms) break;
    w.loop().at(from_ms(at), spec.kind, [&w, spec, rng] {
      std::size_t n = spec.bytes;
      if (spec.bytes_jitter > 0) {
        const double f = 1 + spec.bytes_jitter * (2 * rng->uniform() - 1);
        n = static_cast<std::size_t>(std::max(1.0, std::round(static_cast<double>(spec.bytes) * f)));
      }
      auto frame = post_frame(spec.destination, spec.target, std::string(n, 'x'));
      for (const auto& [k, v] : spec.headers) frame.headers.set(k, v);
      w.send(Route(spec.source, spec.destination, Direction::Request), std::move(frame), spec.kind);
    });
  }
}

// Chunked video playback with a throughput-driven bitrate choice. The player's
// estimate is an EWMA of per-chunk download throughput, so it lags behind
// sudden bandwidth changes. Each request carries the harness's bandwidth
// figure for the downlink in a "bw-est" header (bytes/s).
struct VideoSpec {
  std::string source = "player";
  std::string destination = "origin";
  ResolutionLadder ladder;
  double chunk_ms = 4000;
  double buffer_target_ms = 12000;
  double ewma_alpha = 0.2;
  double initial_estimate = 0;  // bytes/s; 0: the top rung's rate
  double until_ms = 0;
  std::string downlink;  // route pattern whose link feeds bw-est
  double service_ms = 10;
};

struct PlayerStats {
  double stall_ms = 0;
  double startup_ms = 0;
  std::size_t chunks = 0;
  std::vector<std::string> delivered;  // rung label per chunk, in order
  std::vector<std::pair<double, double>> stalls;  // [start, end) in ms
};

class VideoPlayer : public std::enable_shared_from_this<VideoPlayer> {
 public:
  VideoPlayer(World& w, VideoSpec spec, const LinkModel* downlink)
      : w_(w), spec_(std::move(spec)), downlink_(downlink) {
    estimate_ = spec_.initial_estimate > 0 ? spec_.initial_estimate
                                           : spec_.ladder.highest().nominal_bytes / (spec_.chunk_ms / 1000);
  }

  // The origin answers a chunk request with the rung named in its path.
  static Service origin(const VideoSpec& spec) {
    Service s;
    s.service_ms = spec.service_ms;
    s.respond = [ladder = spec.ladder](const Message& req) {
      HttpFrame f;
      f.start.is_response = true;
      f.start.status = 200;
      f.start.reason = "OK";
      std::string label = ladder.lowest().label;
      const auto& target = req.start_line().target;
      auto s = target.find_first_not_of('/');
      if (s != std::string::npos) {
        auto e = target.find('/', s);
        auto l = target.substr(s, e == std::string::npos ? std::string::npos : e - s);
        if (ladder.index_of(l)) label = l;
      }
      f.body.assign(static_cast<std::size_t>(*ladder.nominal(label)), 'v');
      f.headers.set("Content-Type", "video/mp2t");
      f.headers.set("Content-Length", std::to_string(f.body.size()));
      f.headers.set("resolution", label);
      return f;
    };
    return s;
  }

  void start() {
    auto self = shared_from_this();
    w_.loop().at(Timestamp{}, "player start", [self] { self->request(); });
  }

  const PlayerStats& stats() const { return stats_; }

  // Settles playback up to the end of the run.
  void finish(double end_ms) { settle(end_ms); }

 private:
  // Highest rung whose chunk fits in one chunk duration at the estimate.
  std::string choose() const {
    std::string pick = spec_.ladder.lowest().label;
    for (const auto& r : spec_.ladder.rungs())
      if (r.nominal_bytes <= estimate_ * spec_.chunk_ms / 1000) pick = r.label;
    return pick;
  }

  void settle(double now) {
    const double dt = now - last_ms_;
    last_ms_ = now;
    if (!playing_ || dt <= 0) return;
    const double played = std::min(buffer_ms_, dt);
    buffer_ms_ -= played;
    if (played < dt) {
      const double from = now - (dt - played);
      stats_.stall_ms += dt - played;
      if (!stats_.stalls.empty() && stats_.stalls.back().second == from) stats_.stalls.back().second = now;
      else stats_.stalls.push_back({from, now});
    }
  }

  void request() {
    const double now = w_.now_ms();
    if (now >= spec_.until_ms) return;
    settle(now);
    HttpFrame f;
    f.start.method = "GET";
    f.start.target = "/" + choose() + "/seg" + std::to_string(next_chunk_++) + ".ts";
    f.headers.set("Host", spec_.destination);
    if (downlink_) {
      const double bw = downlink_->kb_per_s_at(static_cast<std::int64_t>(now)) * kBytesPerKB;
      f.headers.set("bw-est", lua_number_string(std::floor(bw)));
    }
    requested_ms_ = now;
    auto self = shared_from_this();
    w_.send(Route(spec_.source, spec_.destination, Direction::Request), std::move(f), "chunk",
            [self](const MessageRecord&, const MessagePtr& resp) { self->on_chunk(resp); });
  }

  void on_chunk(const MessagePtr& resp) {
    const double now = w_.now_ms();
    settle(now);
    const double took_s = std::max(1e-3, (now - requested_ms_) / 1000);
    const double sample = static_cast<double>(resp->size()) / took_s;
    estimate_ = spec_.ewma_alpha * sample + (1 - spec_.ewma_alpha) * estimate_;
    auto label = resp->headers().get("resolution");
    stats_.delivered.push_back(label ? std::string(*label) : std::string());
    ++stats_.chunks;
    buffer_ms_ += spec_.chunk_ms;
    if (!playing_) {
      playing_ = true;
      stats_.startup_ms = now;
    }
    const double wait = std::max(0.0, buffer_ms_ - spec_.buffer_target_ms);
    auto self = shared_from_this();
    w_.loop().after(Micros{static_cast<std::int64_t>(std::llround(wait * 1000))}, "player next",
                    [self] { self->request(); });
  }

  World& w_;
  VideoSpec spec_;
  const LinkModel* downlink_;
  double estimate_ = 0;
  double buffer_ms_ = 0;
  double last_ms_ = 0;
  double requested_ms_ = 0;
  bool playing_ = false;
  std::uint64_t next_chunk_ = 1;
  PlayerStats stats_;
};

}  // namespace hivegate::sim
