#include "hivegate/callback/http_transport.hpp"
#include "policy_fixture.hpp"

using namespace hivegate;
using namespace hivegate::test;

namespace {

// Holds jobs until the test decides how each one ends.
struct FakeTransport : CallbackTransport {
  struct Sent {
    CallbackJob job;
    std::function<void(CallbackOutcome)> done;
  };
  std::vector<Sent> sent;

  void send(const CallbackJob& job, std::function<void(CallbackOutcome)> done) override {
    sent.push_back({job, std::move(done)});
  }

  void succeed(std::size_t i, std::string body) { sent.at(i).done({true, 200, std::move(body), {}}); }
  void fail(std::size_t i) { sent.at(i).done({false, 0, {}, "connection refused"}); }
};

}  // namespace

class DispatcherTest : public PolicyFixture {
 protected:
  DispatcherTest() : dispatcher(qm, transport) {
    engine.set_dispatcher(&dispatcher);
    qm.set_ready_hook([this](RouteQueue&) { ++ready_signals; });
  }

  // Binds a program that transforms every arriving message.
  void transform_all(std::string args = "180p") {
    bind(native([args](ExecutionContext& ctx, Trigger) {
      auto h = ctx.trigger();
      ctx.transform(h, args);
    }));
  }

  MessagePtr forward_one() {
    auto q = qm.queue_for(up);
    auto lk = q->lock();
    auto r = q->dequeue_ready(clock.now());
    if (auto* m = std::get_if<MessagePtr>(&r)) return *m;
    return nullptr;
  }

  FakeTransport transport;
  CallbackDispatcher dispatcher;
  int ready_signals = 0;
};

TEST_F(DispatcherTest, CompletionSwapsPayloadInPlace) {
  transform_all();
  auto m = make(up, 1000);
  admit(m);
  ASSERT_EQ(transport.sent.size(), 1u);
  const auto& job = transport.sent[0].job;
  EXPECT_EQ(job.kind, CallbackKind::Transform);
  EXPECT_EQ(job.args, "180p");
  EXPECT_EQ(job.endpoint, "http://transformer/t");
  EXPECT_EQ(job.body.size(), 1000u);
  EXPECT_EQ(job.deadline, clock.now() + Millis{5000});
  EXPECT_EQ(m->state(), MessageState::InProgress);
  EXPECT_EQ(forward_one(), nullptr) << "an in-progress message is not forwarded";

  const int before = ready_signals;
  transport.succeed(0, std::string(40, 'y'));
  EXPECT_EQ(m->state(), MessageState::Queued);
  EXPECT_EQ(m->payload(), std::string(40, 'y'));
  EXPECT_EQ(*m->headers().get("Content-Length"), "40");
  EXPECT_GT(ready_signals, before);
  EXPECT_EQ(forward_one(), m);
  EXPECT_EQ(dispatcher.stats().transforms_completed, 1u);
  EXPECT_EQ(dispatcher.pending_transforms(), 0u);
}

TEST_F(DispatcherTest, FailureRevertsToOriginal) {
  transform_all();
  auto m = make(up, 1000);
  admit(m);
  transport.fail(0);
  EXPECT_EQ(m->state(), MessageState::Queued);
  EXPECT_EQ(m->size(), 1000u);
  EXPECT_EQ(dispatcher.stats().transform_failures, 1u);
  EXPECT_EQ(dispatcher.stats().transforms_reverted, 1u);
}

TEST_F(DispatcherTest, TimeoutRevertsAndLateResultIsIgnored) {
  transform_all();
  auto m = make(up, 1000);
  admit(m);
  EXPECT_EQ(dispatcher.next_deadline(), clock.now() + Millis{5000});
  EXPECT_EQ(dispatcher.expire(clock.now() + Millis{4999}), 0u);
  EXPECT_EQ(dispatcher.expire(clock.now() + Millis{5000}), 1u);
  EXPECT_EQ(m->state(), MessageState::Queued);
  transport.succeed(0, "late");
  EXPECT_EQ(m->size(), 1000u);
  EXPECT_EQ(dispatcher.stats().transforms_late, 1u);
}

TEST_F(DispatcherTest, OlderJobCannotCompleteNewerOne) {
  transform_all();
  auto m = make(up, 1000);
  admit(m);
  dispatcher.expire(clock.now() + Millis{5000});
  // A second execution transforms the same message again.
  bind(native([](ExecutionContext& ctx, Trigger) {
    for (auto& item : ctx.messages(ctx.trigger_queue())) ctx.transform(item, "360p");
  }));
  admit(make(up, 10));
  ASSERT_EQ(transport.sent.size(), 3u);
  transport.succeed(0, "stale");
  EXPECT_EQ(m->state(), MessageState::InProgress);
  transport.succeed(1, "fresh");
  EXPECT_EQ(m->payload(), "fresh");
}

TEST_F(DispatcherTest, DroppedWhileInProgressKeepsItsFate) {
  seed(up);
  seed(up);  // keeps the target out of the head margin
  bind(native([](ExecutionContext& ctx, Trigger) {
    auto h = ctx.trigger();
    ctx.transform(h, "x");
  }));
  auto m = make(up, 100);
  admit(m);
  bind(native([&](ExecutionContext& ctx, Trigger) {
    for (auto& item : ctx.messages(ctx.trigger_queue()))
      if (ctx.size(item) == 100) ctx.drop(item);
  }));
  admit(make(up, 5));
  ASSERT_EQ(m->state(), MessageState::Dropped);
  transport.succeed(0, "done");
  EXPECT_EQ(m->state(), MessageState::Dropped);
  EXPECT_EQ(m->size(), 100u);
  EXPECT_EQ(dispatcher.stats().transforms_discarded, 1u);
}

TEST_F(DispatcherTest, InProgressHeadDoesNotBlockOthers) {
  transform_all();
  auto slow = make(up, 1000);
  admit(slow);
  bind(native([](ExecutionContext&, Trigger) {}));
  auto a = make(up), b = make(up);
  admit(a);
  admit(b);
  EXPECT_EQ(forward_one(), a);
  EXPECT_EQ(forward_one(), b);
  EXPECT_EQ(forward_one(), nullptr);
  transport.succeed(0, "small");
  EXPECT_EQ(forward_one(), slow);
}

TEST_F(DispatcherTest, CompletionFollowsARedirectedMessage) {
  qm.queue_for(side);
  seed(up);
  bind(native([](ExecutionContext& ctx, Trigger) {
    auto h = ctx.trigger();
    EXPECT_TRUE(ctx.transform(h, "x"));
    EXPECT_TRUE(ctx.redirect(h, "edge"));
  }));
  auto m = make(up, 100);
  admit(m);
  ASSERT_EQ(contents(side), (std::vector<MessageId>{m->id()}));
  transport.succeed(0, "ok");
  EXPECT_EQ(m->payload(), "ok");
  EXPECT_EQ(m->state(), MessageState::Queued);
  EXPECT_EQ(m->owner(), qm.find(side.key()).get());
}

TEST_F(DispatcherTest, NotifyIsFireAndForget) {
  bind(native([](ExecutionContext& ctx, Trigger) { ctx.notify("42.0"); }));
  auto m = make(up);
  admit(m);
  ASSERT_EQ(transport.sent.size(), 1u);
  EXPECT_EQ(transport.sent[0].job.kind, CallbackKind::Notify);
  EXPECT_EQ(transport.sent[0].job.body, "42.0");
  EXPECT_EQ(transport.sent[0].job.deadline, clock.now() + Millis{2000});
  EXPECT_EQ(forward_one(), m) << "notify never holds the message";
  transport.fail(0);
  EXPECT_EQ(dispatcher.stats().notify_failed, 1u);
}

TEST(DispatcherRetries, ConfiguredRetriesAreAttempted) {
  ManualClock clock;
  QueueManager qm(clock);
  FakeTransport t;
  CallbackConfig cfg;
  cfg.notify_retries = 2;
  CallbackDispatcher d(qm, t, cfg);
  CallbackJob job;
  job.kind = CallbackKind::Notify;
  job.endpoint = "http://n";
  d.dispatch(job);
  t.fail(0);
  t.fail(1);
  ASSERT_EQ(t.sent.size(), 3u);
  EXPECT_EQ(t.sent[2].job.attempt, 2);
  t.fail(2);
  EXPECT_EQ(d.stats().notify_retries, 2u);
  EXPECT_EQ(d.stats().notify_failed, 1u);
}

TEST(HttpEndpoint, Parse) {
  auto e = parse_endpoint("http://transformer:9000/v1/transform");
  ASSERT_TRUE(e);
  EXPECT_EQ(e->scheme_host_port, "http://transformer:9000");
  EXPECT_EQ(e->path, "/v1/transform");
  auto d = parse_endpoint("http://h");
  ASSERT_TRUE(d);
  EXPECT_EQ(d->path, "/");
  EXPECT_FALSE(parse_endpoint("ftp://x"));
  EXPECT_FALSE(parse_endpoint("http:///x"));
}
