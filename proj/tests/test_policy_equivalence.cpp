// Each reference policy exists natively and as a script; on identical inputs
// both must produce the same mutation sequence and the same queues.
#include <random>

#include "policy_fixture.hpp"

using namespace hivegate;
using namespace hivegate::test;

namespace {

const char* kLadder = "180p=42000,360p=140000,480p=250000,720p=560000,1080p=1250000";

struct Outcome {
  ExecutionOutcome outcome;
  std::vector<MutationRecord> mutations;
  std::size_t callbacks = 0;
  std::vector<std::string> queues;  // per queue: ids, states, serialized frames
};

// A self-contained proxy state built deterministically from a seed.
struct World {
  ManualClock clock{Timestamp{}, 1'700'000'000'000};
  QueueManager qm{clock};
  PolicyEngine engine{qm};

  Outcome run(std::shared_ptr<Program> program, Trigger trigger, Params params, const MessagePtr& m) {
    PolicyBinding b;
    b.route_pattern = "*";
    b.trigger = trigger;
    b.program = std::move(program);
    b.params = std::move(params);
    b.transform_endpoint = "http://transformer/t";
    b.notify_endpoints = {"http://source/notify"};
    engine.set_bindings({b});
    auto r = engine.admit(m);
    Outcome o{r.report->outcome, r.report->mutations, r.report->callbacks_issued, {}};
    for (const auto& q : qm.queues()) {
      auto lk = q->lock();
      std::string s = q->key() + ":";
      for (const auto& item : q->items())
        s += std::to_string(item->id()) + "/" + std::string(to_string(item->state())) + "/" +
             serialize(item->frame()) + "|";
      o.queues.push_back(std::move(s));
    }
    return o;
  }
};

using Builder = std::function<MessagePtr(World&, std::mt19937_64&)>;

void enqueue(World& w, const MessagePtr& m) {
  auto q = w.qm.queue_for(m->route());
  auto lk = q->lock();
  q->enqueue(m, w.clock.now());
}

void give_bandwidth(World& w, const Route& r, std::mt19937_64& rng) {
  auto q = w.qm.queue_for(r);
  auto lk = q->lock();
  switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
    case 0:
      break;  // never forwarded: zero
    case 1:  // stuck backlog: zero after a window
      q->metrics().record_forward(1000, w.clock.now());
      q->metrics().note_backlog(true, w.clock.now());
      break;
    default: {
      int n = std::uniform_int_distribution<int>(1, 8)(rng);
      for (int i = 0; i < n; ++i)
        q->metrics().record_forward(std::uniform_int_distribution<std::size_t>(100, 200'000)(rng),
                                    w.clock.now() - Millis{std::uniform_int_distribution<int>(0, 300)(rng)});
    }
  }
}

template <typename Gen>
void check_equivalent(const std::string& name, Trigger trigger, Gen&& gen, int runs = 300,
                      double min_active = 0.2) {
  int active = 0;
  auto native_p = policies::builtin_registry().find(name);
  auto lua_p = lua_policy(name);
  ASSERT_TRUE(native_p);
  for (int seed = 0; seed < runs; ++seed) {
    World a, b;
    std::mt19937_64 ra(seed), rb(seed);
    Params pa, pb;
    auto ma = gen(a, ra, pa);
    auto mb = gen(b, rb, pb);
    auto oa = a.run(native_p, trigger, pa, ma);
    auto ob = b.run(lua_p, trigger, pb, mb);
    ASSERT_EQ(oa.outcome, ob.outcome) << name << " seed " << seed;
    ASSERT_EQ(oa.mutations.size(), ob.mutations.size()) << name << " seed " << seed;
    for (std::size_t i = 0; i < oa.mutations.size(); ++i)
      ASSERT_EQ(oa.mutations[i], ob.mutations[i])
          << name << " seed " << seed << " mutation " << i << ": " << to_string(oa.mutations[i].op) << " "
          << oa.mutations[i].detail << " vs " << to_string(ob.mutations[i].op) << " " << ob.mutations[i].detail;
    ASSERT_EQ(oa.callbacks, ob.callbacks) << name << " seed " << seed;
    ASSERT_EQ(oa.queues, ob.queues) << name << " seed " << seed;
    active += !oa.mutations.empty();
  }
  // Guards against generators that never reach the interesting branches.
  EXPECT_GE(active, static_cast<int>(min_active * runs)) << name;
  std::printf("%s: %d/%d runs mutated\n", name.c_str(), active, runs);
}

std::string pick(std::mt19937_64& rng, std::initializer_list<const char*> options) {
  auto i = std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng);
  return *(options.begin() + static_cast<std::ptrdiff_t>(i));
}

}  // namespace

TEST(Equivalence, TrafficMonitor) {
  check_equivalent("traffic_monitor", Trigger::OnRequest, [](World& w, std::mt19937_64& rng, Params& p) {
    const Route cloud("camera", "cloud-detector", Direction::Request);
    const Route edge("camera", "edge-detector", Direction::Request);
    const Route other("camera", "archive", Direction::Request);
    w.clock.set(at_ms(10'000));
    for (const auto& r : {cloud, edge, other})
      if (std::bernoulli_distribution(0.7)(rng)) give_bandwidth(w, r, rng);
    w.clock.advance(Millis{std::uniform_int_distribution<int>(0, 400)(rng)});
    p["required_bw"] = std::to_string(std::uniform_int_distribution<int>(1000, 300'000)(rng));
    if (std::bernoulli_distribution(0.3)(rng)) p["route_match"] = "detector";
    const Route& target = std::bernoulli_distribution(0.8)(rng) ? cloud : other;
    int backlog = std::uniform_int_distribution<int>(0, 3)(rng);
    for (int i = 0; i < backlog; ++i) enqueue(w, make_message(w.qm.next_id(), target, 50));
    return make_message(w.qm.next_id(), target, 5000);
  });
}

TEST(Equivalence, LoadShed) {
  check_equivalent("load_shed", Trigger::OnRequest, [](World& w, std::mt19937_64& rng, Params& p) {
    const Route r1("web", "analytics", Direction::Request);
    const Route r2("web", "audit", Direction::Request);
    w.clock.set(at_ms(std::uniform_int_distribution<int>(0, 5000)(rng)));
    auto event = [&](const Route& r) {
      std::string body;
      switch (std::uniform_int_distribution<int>(0, 4)(rng)) {
        case 0: body = "not json"; break;
        case 1: body = R"({"event_type":"view"})"; break;
        default: {
          auto t = w.clock.epoch_ms() - std::uniform_int_distribution<int>(0, 2500)(rng);
          body = "{\"event_type\":\"" + pick(rng, {"view", "click", "scroll"}) + "\",\"event_time\":" +
                 std::to_string(t) + "}";
        }
      }
      return std::make_shared<Message>(w.qm.next_id(), r, request_frame("/e", body));
    };
    for (const auto& r : {r1, r2}) {
      w.qm.queue_for(r);
      if (std::bernoulli_distribution(0.6)(rng))
        w.qm.record_latency(r, std::uniform_int_distribution<int>(50, 1500)(rng));
      int n = std::uniform_int_distribution<int>(0, 12)(rng);
      for (int i = 0; i < n; ++i) enqueue(w, event(r));
      auto q = w.qm.queue_for(r);
      auto lk = q->lock();
      if (q->length() && std::bernoulli_distribution(0.3)(rng)) q->at(0)->transition(MessageState::InProgress);
    }
    if (std::bernoulli_distribution(0.5)(rng)) p["filt_thrd"] = pick(rng, {"0.2", "0.5", "1"});
    if (std::bernoulli_distribution(0.5)(rng)) p["late_thrd"] = pick(rng, {"0.5", "1.0", "2"});
    return event(std::bernoulli_distribution(0.5)(rng) ? r1 : r2);
  });
}

TEST(Equivalence, FifoLifo) {
  check_equivalent("fifo_lifo", Trigger::OnRequest, [](World& w, std::mt19937_64& rng, Params&) {
    const Route r("sensor", "collector", Direction::Request);
    int n = std::uniform_int_distribution<int>(0, 6)(rng);
    for (int i = 0; i < n; ++i) enqueue(w, make_message(w.qm.next_id(), r, 8));
    auto q = w.qm.queue_for(r);
    {
      auto lk = q->lock();
      for (std::size_t i = 0; i < q->length(); ++i)
        if (std::bernoulli_distribution(0.2)(rng)) q->at(i)->transition(MessageState::InProgress);
    }
    return make_message(w.qm.next_id(), r, 8);
  });
}

TEST(Equivalence, ChunkRewrite) {
  check_equivalent("chunk_rewrite", Trigger::OnRequest, [](World& w, std::mt19937_64& rng, Params& p) {
    const Route r("player", "cdn", Direction::Request);
    p["ladder"] = kLadder;
    if (std::bernoulli_distribution(0.5)(rng)) p["chunk_duration"] = pick(rng, {"2", "4", "6"});
    Headers h;
    switch (std::uniform_int_distribution<int>(0, 9)(rng)) {
      case 0: break;
      case 1: h.add("bw-est", pick(rng, {"abc", "", "0", "-5", "12abc", " 50000 "})); break;
      default: h.add("bw-est", std::to_string(std::uniform_int_distribution<int>(1000, 800'000)(rng)));
    }
    std::string path = pick(rng, {"/", "/", "", "/4k/"}) + pick(rng, {"180p", "360p", "480p", "720p", "1080p", "999p"}) +
                       "/seg-" + std::to_string(std::uniform_int_distribution<int>(0, 99)(rng)) + ".m4s";
    if (std::bernoulli_distribution(0.05)(rng)) path = "/nochunk";
    auto frame = request_frame(path, {}, h);
    return std::make_shared<Message>(w.qm.next_id(), r, frame);
  });
}

TEST(Equivalence, DeadlineDownsample) {
  check_equivalent("deadline_downsample", Trigger::OnResponse, [](World& w, std::mt19937_64& rng, Params& p) {
    const Route r("cdn", "player", Direction::Response);
    p["ladder"] = kLadder;
    w.clock.set(at_ms(20'000));
    give_bandwidth(w, r, rng);
    auto chunk = [&] {
      Headers h;
      auto res = pick(rng, {"180p", "360p", "480p", "720p", "1080p", "8k"});
      if (std::bernoulli_distribution(0.9)(rng)) h.add("resolution", res);
      if (std::bernoulli_distribution(0.9)(rng))
        h.add("ptt", std::bernoulli_distribution(0.05)(rng) ? "soon"
                                                            : std::to_string(std::uniform_int_distribution<int>(50, 4000)(rng)));
      if (std::bernoulli_distribution(0.9)(rng)) h.add("duration", pick(rng, {"2000", "4000"}));
      auto size = std::uniform_int_distribution<std::size_t>(1000, 400'000)(rng);
      return make_message(w.qm.next_id(), r, size, h);
    };
    int n = std::uniform_int_distribution<int>(0, 5)(rng);
    for (int i = 0; i < n; ++i) {
      enqueue(w, chunk());
      w.clock.advance(Millis{std::uniform_int_distribution<int>(0, 1500)(rng)});
    }
    auto q = w.qm.queue_for(r);
    {
      auto lk = q->lock();
      if (q->length() && std::bernoulli_distribution(0.3)(rng)) q->at(0)->transition(MessageState::InProgress);
    }
    return chunk();
  });
}

TEST(Equivalence, Baselines) {
  for (const char* name : {"empty", "iterate"}) {
    check_equivalent(name, Trigger::OnRequest, [](World& w, std::mt19937_64& rng, Params&) {
      const Route r("a", "b", Direction::Request);
      int n = std::uniform_int_distribution<int>(0, 20)(rng);
      for (int i = 0; i < n; ++i) enqueue(w, make_message(w.qm.next_id(), r, 8));
      return make_message(w.qm.next_id(), r, 8);
    }, 20, 0.0);
  }
}
