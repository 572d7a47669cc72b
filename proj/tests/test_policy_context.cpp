#include <thread>

#include "policy_fixture.hpp"

using namespace hivegate;
using namespace hivegate::test;

using ContextTest = PolicyFixture;

TEST_F(ContextTest, UnboundRouteJustEnqueues) {
  auto m = make(up);
  auto r = admit(m);
  EXPECT_EQ(r.length, 1u);
  EXPECT_FALSE(r.report);
  EXPECT_EQ(m->state(), MessageState::Queued);
}

TEST_F(ContextTest, TriggerIsAlreadyQueued) {
  std::size_t seen = 0;
  bind(native([&](ExecutionContext& ctx, Trigger) { seen = ctx.length(ctx.trigger_queue()); }));
  seed(up);
  admit(make(up));
  EXPECT_EQ(seen, 2u);
}

TEST_F(ContextTest, DropRemovesAndReportsAfterCommit) {
  auto a = seed(up), b = seed(up);
  std::size_t len = 0;
  bind(native([&](ExecutionContext& ctx, Trigger) {
    auto items = ctx.messages(ctx.trigger_queue());
    len = ctx.drop(items[1]);
    EXPECT_EQ(b->state(), MessageState::Queued) << "drop is final only at commit";
  }));
  auto c = make(up);
  auto r = admit(c);
  EXPECT_EQ(len, 2u);
  EXPECT_EQ(contents(up), (std::vector<MessageId>{a->id(), c->id()}));
  EXPECT_EQ(b->state(), MessageState::Dropped);
  EXPECT_EQ(sink->dropped, (std::vector<MessageId>{b->id()}));
  ASSERT_TRUE(r.report);
  ASSERT_EQ(r.report->mutations.size(), 1u);
  EXPECT_EQ(r.report->mutations[0].op, MutationOp::Drop);
}

TEST_F(ContextTest, DropInHeadMarginIsANoOp) {
  auto a = seed(up);
  a->transition(MessageState::InProgress);
  bind(native([&](ExecutionContext& ctx, Trigger) {
    auto items = ctx.messages(ctx.trigger_queue());
    EXPECT_EQ(ctx.drop(items[0]), 2u);
  }));
  auto r = admit(make(up));
  EXPECT_EQ(contents(up).size(), 2u);
  EXPECT_TRUE(r.report->mutations.empty());
}

TEST_F(ContextTest, FaultRollsBackEveryMutation) {
  auto a = seed(up), b = seed(up, 10, {{"x-tag", "orig"}});
  bind(native([&](ExecutionContext& ctx, Trigger) {
    auto items = ctx.messages(ctx.trigger_queue());
    ctx.move_to_front(items[1]);
    ctx.replace_header(items[1], "x-tag", "changed");
    ctx.drop(items[0]);
    auto h = ctx.trigger();
    ctx.redirect(h, "edge");
    throw ProgramError("boom");
  }));
  auto c = make(up);
  auto r = admit(c);
  ASSERT_TRUE(r.report);
  EXPECT_EQ(r.report->outcome, ExecutionOutcome::ProgramError);
  EXPECT_TRUE(r.report->mutations.empty());
  EXPECT_EQ(contents(up), (std::vector<MessageId>{a->id(), b->id(), c->id()}));
  EXPECT_TRUE(contents(side).empty());
  EXPECT_EQ(a->state(), MessageState::Queued);
  EXPECT_EQ(*b->headers().get("x-tag"), "orig");
  EXPECT_EQ(c->route(), up);
  EXPECT_TRUE(sink->dropped.empty());
  EXPECT_FALSE(qm.queue_for(up)->pinned());
  EXPECT_EQ(engine.stats().program_errors, 1u);
}

TEST_F(ContextTest, BudgetExhaustionFailsOpen) {
  bind(native([&](ExecutionContext& ctx, Trigger) {
    auto q = ctx.trigger_queue();
    auto items = ctx.messages(q);
    ctx.drop(items[0]);
    for (;;) ctx.length(q);
  }));
  auto a = seed(up);
  auto c = make(up);
  auto r = admit(c);
  EXPECT_EQ(r.report->outcome, ExecutionOutcome::BudgetExceeded);
  EXPECT_GT(r.report->steps_used, kDefaultStepBudget);
  EXPECT_EQ(contents(up), (std::vector<MessageId>{a->id(), c->id()}));
  EXPECT_EQ(engine.stats().budget_exceeded, 1u);
}

TEST_F(ContextTest, StaleHandlesAreRejected) {
  std::optional<MessageHandle> kept;
  std::optional<QueueHandle> kept_q;
  int run = 0;
  bind(native([&](ExecutionContext& ctx, Trigger) {
    if (run++ == 0) {
      kept = ctx.trigger();
      kept_q = ctx.trigger_queue();
      return;
    }
    ctx.size(*kept);
  }));
  admit(make(up));
  auto r = admit(make(up));
  EXPECT_EQ(r.report->outcome, ExecutionOutcome::ProgramError);
  EXPECT_NE(r.report->error.find("stale"), std::string::npos);
  bind(native([&](ExecutionContext& ctx, Trigger) { ctx.length(*kept_q); }));
  EXPECT_EQ(admit(make(up)).report->outcome, ExecutionOutcome::ProgramError);
}

TEST_F(ContextTest, RedirectMovesToDestinationQueue) {
  qm.queue_for(side);
  bind(native([&](ExecutionContext& ctx, Trigger) {
    auto h = ctx.trigger();
    EXPECT_TRUE(ctx.redirect(h, "edge"));
    EXPECT_EQ(ctx.dst(h), "edge");
    // the redirected item sits in the target's tail margin until commit
    auto target = qm.find(side.key());
    EXPECT_EQ(target->tail_margin(), 1u);
    EXPECT_FALSE(ctx.move_to_front(h) != 1u);
  }));
  auto c = make(up);
  auto r = admit(c);
  EXPECT_TRUE(contents(up).empty());
  EXPECT_EQ(contents(side), (std::vector<MessageId>{c->id()}));
  EXPECT_EQ(c->route(), side);
  EXPECT_EQ(*c->headers().get("Host"), "edge");
  EXPECT_EQ(qm.find(side.key())->tail_margin(), 0u);
  ASSERT_EQ(r.report->mutations.size(), 1u);
  EXPECT_EQ(r.report->mutations[0].detail, "edge");
}

TEST_F(ContextTest, RedirectToUnknownDestinationIsSoft) {
  EngineOptions opts;
  opts.destination_exists = [](std::string_view d) { return d == "edge"; };
  PolicyEngine eng(qm, opts);
  PolicyBinding b;
  b.route_pattern = "*";
  b.program = native([](ExecutionContext& ctx, Trigger) {
    auto h = ctx.trigger();
    EXPECT_FALSE(ctx.redirect(h, "nowhere"));
  });
  eng.set_bindings({b});
  auto c = make(up);
  auto r = eng.admit(c);
  EXPECT_EQ(r.report->outcome, ExecutionOutcome::Completed);
  EXPECT_EQ(r.report->soft_errors, 1u);
  EXPECT_EQ(contents(up), (std::vector<MessageId>{c->id()}));
}

TEST_F(ContextTest, QueuesListsTriggerDirectionOnly) {
  qm.queue_for(side);
  qm.queue_for(back);
  std::vector<std::string> keys;
  bind(native([&](ExecutionContext& ctx, Trigger) {
    for (auto& q : ctx.queues()) keys.push_back(ctx.route_key(q));
  }));
  admit(make(up));
  EXPECT_EQ(keys, (std::vector<std::string>{up.key(), side.key()}));
}

TEST_F(ContextTest, MoveOperationsRespectMargins) {
  auto a = seed(up), b = seed(up), c = seed(up);
  a->transition(MessageState::InProgress);
  bind(native([&](ExecutionContext& ctx, Trigger) {
    auto items = ctx.messages(ctx.trigger_queue());
    ctx.move_to_front(items[2]);
    ctx.move_to_back(items[1]);
  }));
  auto d = make(up);
  admit(d);
  EXPECT_EQ(contents(up), (std::vector<MessageId>{a->id(), c->id(), d->id(), b->id()}));
}

TEST_F(ContextTest, CopyAndInsert) {
  auto a = seed(up, 5);
  bind(native([&](ExecutionContext& ctx, Trigger) {
    auto items = ctx.messages(ctx.trigger_queue());
    auto dup = ctx.copy(items[0]);
    EXPECT_EQ(ctx.insert(items[0], dup), 3u);
    EXPECT_THROW(ctx.insert(items[0], dup), ProgramError) << "a copy is inserted once";
  }));
  auto t = make(up);
  admit(t);
  auto got = contents(up);
  ASSERT_EQ(got.size(), 3u);
  EXPECT_EQ(got[0], a->id());
  EXPECT_NE(got[1], a->id());
  EXPECT_EQ(got[2], t->id());
  auto q = qm.queue_for(up);
  EXPECT_EQ(q->at(1)->payload(), a->payload());
}

TEST_F(ContextTest, InsertRejectsForeignMessages) {
  auto a = seed(up);
  bind(native([&](ExecutionContext& ctx, Trigger) {
    auto items = ctx.messages(ctx.trigger_queue());
    ctx.insert(items[0], a);
  }));
  EXPECT_EQ(admit(make(up)).report->outcome, ExecutionOutcome::ProgramError);
  EXPECT_EQ(contents(up).size(), 2u);
}

TEST_F(ContextTest, InspectionOperations) {
  clock.set(at_ms(1000));
  Headers hdr;
  hdr.add("Host", "cloud");
  hdr.add("X-Kind", "frame");
  auto frame = request_frame("/infer?x=1", R"({"event_type":"view","meta":{"ts":42}})", hdr);
  auto m = std::make_shared<Message>(qm.next_id(), up, frame);
  bind(native([&](ExecutionContext& ctx, Trigger) {
    auto h = ctx.trigger();
    clock.set(at_ms(1250));
    EXPECT_EQ(ctx.size(h), m->payload().size());
    EXPECT_EQ(ctx.age_ms(h), 0) << "age uses the execution's start time";
    EXPECT_EQ(ctx.dst(h), "cloud");
    EXPECT_EQ(ctx.header(h, "x-kind").value(), "frame");
    EXPECT_EQ(ctx.header(h, "path").value(), "/infer?x=1");
    EXPECT_EQ(ctx.header(h, ":method").value(), "POST");
    EXPECT_EQ(ctx.header(h, ":authority").value(), "cloud");
    EXPECT_FALSE(ctx.header(h, "missing"));
    EXPECT_EQ(ctx.bytes(h, 2, 12), "event_type");
    EXPECT_EQ(ctx.bytes(h, 0, 0), "");
    EXPECT_THROW(ctx.bytes(h, 0, 1000), ProgramError);
    EXPECT_THROW(ctx.bytes(h, 5, 4), ProgramError);
    EXPECT_EQ(ctx.json_string(h, "event_type").value(), "view");
    EXPECT_EQ(ctx.json_number(h, "meta.ts").value(), 42);
    EXPECT_EQ(ctx.json_number(h, "/meta/ts").value(), 42);
    EXPECT_FALSE(ctx.json_number(h, "meta.absent"));
    EXPECT_EQ(ctx.epoch_ms(), 1250);
  }));
  admit(m);
}

TEST_F(ContextTest, JsonOfNonJsonPayloadIsNull) {
  bind(native([&](ExecutionContext& ctx, Trigger) {
    auto h = ctx.trigger();
    EXPECT_EQ(ctx.json(h), nullptr);
    EXPECT_FALSE(ctx.json_string(h, "a"));
  }));
  admit(make(up, 20));
}

TEST_F(ContextTest, ReplaceHeaderUpdatesMessage) {
  bind(native([&](ExecutionContext& ctx, Trigger) {
    auto h = ctx.trigger();
    EXPECT_TRUE(ctx.replace_header(h, "path", "/720p/seg-1"));
    EXPECT_TRUE(ctx.replace_header(h, "x-new", "1"));
    EXPECT_THROW(ctx.replace_header(h, ":method", "PUT"), ProgramError);
  }));
  auto m = make(up);
  admit(m);
  EXPECT_EQ(m->start_line().target, "/720p/seg-1");
  EXPECT_EQ(*m->headers().get("X-New"), "1");
}

TEST_F(ContextTest, TransformWithoutDeliveryRevertsImmediately) {
  bind(native([&](ExecutionContext& ctx, Trigger) {
    auto h = ctx.trigger();
    EXPECT_TRUE(ctx.transform(h, "180p"));
    EXPECT_FALSE(ctx.transform(h, "180p")) << "already in progress";
  }));
  auto m = make(up);
  auto r = admit(m);
  EXPECT_EQ(r.report->callbacks_issued, 1u);
  EXPECT_EQ(m->state(), MessageState::Queued);
}

TEST_F(ContextTest, TransformNeedsEndpoint) {
  PolicyBinding b;
  b.route_pattern = "*";
  b.program = native([](ExecutionContext& ctx, Trigger) {
    auto h = ctx.trigger();
    ctx.transform(h, "x");
  });
  engine.set_bindings({b});
  EXPECT_EQ(admit(make(up)).report->outcome, ExecutionOutcome::ProgramError);
  b.program = native([](ExecutionContext& ctx, Trigger) { ctx.notify("1"); });
  engine.set_bindings({b});
  EXPECT_EQ(admit(make(up)).report->outcome, ExecutionOutcome::ProgramError);
}

TEST_F(ContextTest, MutatedQueuesArePinnedDuringExecution) {
  auto a = seed(up);
  bool pinned_during = false;
  bind(native([&](ExecutionContext& ctx, Trigger) {
    auto items = ctx.messages(ctx.trigger_queue());
    ctx.move_to_back(items[0]);
    pinned_during = qm.find(up.key())->pinned();
  }));
  admit(make(up));
  EXPECT_TRUE(pinned_during);
  EXPECT_FALSE(qm.find(up.key())->pinned());
  (void)a;
}

TEST_F(ContextTest, ResponseTriggerRunsOnResponseBinding) {
  int requests = 0, responses = 0;
  PolicyBinding rq, rs;
  rq.route_pattern = rs.route_pattern = "*";
  rq.trigger = Trigger::OnRequest;
  rs.trigger = Trigger::OnResponse;
  rq.program = native([&](ExecutionContext&, Trigger t) { requests += t == Trigger::OnRequest; });
  rs.program = native([&](ExecutionContext&, Trigger t) { responses += t == Trigger::OnResponse; });
  engine.set_bindings({rq, rs});
  admit(make(up));
  admit(make(back));
  admit(make(back));
  EXPECT_EQ(requests, 1);
  EXPECT_EQ(responses, 2);
}

TEST(BindingSet, LaterDuplicateReplacesEarlier) {
  auto p1 = native([](ExecutionContext&, Trigger) {});
  auto p2 = native([](ExecutionContext&, Trigger) {});
  PolicyBinding a{"camera->*", Trigger::OnRequest, p1, {}, {}, {}};
  PolicyBinding b{"*", Trigger::OnRequest, p1, {}, {}, {}};
  PolicyBinding c{"camera->*", Trigger::OnRequest, p2, {}, {}, {}};
  BindingSet set({a, b, c});
  ASSERT_EQ(set.bindings().size(), 2u);
  EXPECT_EQ(set.match("camera->cloud/request", Trigger::OnRequest)->program, p2);
  EXPECT_EQ(set.match("x->y/request", Trigger::OnRequest)->program, p1);
  EXPECT_EQ(set.match("x->y/response", Trigger::OnResponse), nullptr);
}

TEST(BindingCheck, CapabilitiesNeedEndpoints) {
  PolicyBinding b;
  b.route_pattern = "*";
  b.program = native([](ExecutionContext&, Trigger) {}, {true, true});
  auto d = check_binding(b, "policies[0]");
  EXPECT_EQ(d.size(), 2u);
  b.transform_endpoint = "http://t";
  b.notify_endpoints = {"http://n"};
  EXPECT_TRUE(check_binding(b, "policies[0]").empty());
  b.route_pattern = "";
  EXPECT_FALSE(check_binding(b, "policies[0]").empty());
}

// Concurrent admissions on several queues with cross-queue redirects: every
// message ends up exactly once somewhere, and no queue stays pinned.
TEST_F(ContextTest, ConcurrentExecutionsConserveMessages) {
  const Route routes[] = {up, side, Route("camera", "third", Direction::Request)};
  for (auto& r : routes) qm.queue_for(r);
  bind(native([](ExecutionContext& ctx, Trigger) {
    auto h = ctx.trigger();
    auto items = ctx.messages(ctx.trigger_queue());
    if (items.size() > 3) ctx.drop(items[items.size() / 2]);
    if (ctx.size(h) % 3 == 0) ctx.redirect(h, ctx.dst(h) == "edge" ? "third" : "edge");
    if (ctx.size(h) % 7 == 0) ctx.move_to_front(h);
    if (ctx.size(h) % 11 == 0) throw ProgramError("fault");
  }));
  std::atomic<int> dropped{0};
  std::vector<std::thread> threads;
  const int per_thread = 400;
  std::vector<std::vector<MessagePtr>> made(4);
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < per_thread; ++i) {
        auto m = make_message(qm.next_id(), routes[(t + i) % 3], 1 + (i * 7 + t) % 40);
        made[t].push_back(m);
        engine.admit(m);
        if (i % 5 == 0) {  // a forwarder draining one queue
          auto q = qm.queue_for(routes[i % 3]);
          auto lk = q->lock();
          if (!q->pinned()) {
            auto r = q->dequeue_ready(clock.now());
            if (auto* f = std::get_if<MessagePtr>(&r)) (*f)->transition(MessageState::Forwarded);
          }
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  std::size_t resident = 0, forwarded = 0, gone = 0;
  for (auto& r : routes) {
    auto q = qm.queue_for(r);
    EXPECT_FALSE(q->pinned());
    EXPECT_EQ(q->tail_margin(), 0u);
    resident += q->length();
  }
  for (auto& v : made)
    for (auto& m : v) {
      if (m->state() == MessageState::Forwarded) ++forwarded;
      else if (m->state() == MessageState::Dropped) ++gone;
      else EXPECT_NE(m->owner(), nullptr);
    }
  EXPECT_EQ(resident + forwarded + gone, 4u * per_thread);
  EXPECT_EQ(sink->dropped.size(), gone);
  (void)dropped;
}
