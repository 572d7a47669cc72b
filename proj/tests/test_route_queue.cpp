#include <gtest/gtest.h>

#include <random>
#include <set>

#include "hivegate/queue/queue_manager.hpp"
#include "test_support.hpp"

using namespace hivegate;
using hivegate::test::ids;
using hivegate::test::make_message;

namespace {

const Route kRoute("client", "server", Direction::Request);

RouteQueue make_queue(QueueConfig c = {}) { return RouteQueue(kRoute, c, at_ms(0)); }

MessagePtr msg(MessageId id, std::size_t bytes = 10) { return make_message(id, kRoute, bytes); }

}  // namespace

TEST(RouteQueue, EnqueueIntoEmptyQueue) {
  auto q = make_queue();
  auto m = msg(1);
  EXPECT_EQ(q.enqueue(m, at_ms(5)), 1u);
  EXPECT_EQ(q.at(0), m);
  EXPECT_EQ(m->enqueue_time(), at_ms(5));
}

TEST(RouteQueue, FifoByDefault) {
  auto q = make_queue();
  for (MessageId i = 1; i <= 3; ++i) q.enqueue(msg(i), at_ms(0));
  EXPECT_EQ(ids(q.items()), (std::vector<MessageId>{1, 2, 3}));
}

TEST(RouteQueue, QueueFullAtConfiguredLimit) {
  auto q = make_queue();
  for (MessageId i = 0; i < kDefaultMaxQueueLength; ++i) q.enqueue(msg(i), at_ms(0));
  EXPECT_EQ(q.length(), 10'000u);
  EXPECT_THROW(q.enqueue(msg(99'999), at_ms(0)), QueueFullError);
}

TEST(RouteQueue, EnqueueRejectsForeignRoute) {
  auto q = make_queue();
  auto other = make_message(1, Route("x", "y", Direction::Request));
  EXPECT_THROW(q.enqueue(other, at_ms(0)), std::logic_error);
}

TEST(RouteQueue, DequeueWaitsForTokens) {
  QueueConfig c;
  c.rate_kb_per_s = 100;
  c.capacity_bytes = 51'200;
  auto q = make_queue(c);
  q.enqueue(msg(1, 51'200), at_ms(0));
  ASSERT_TRUE(std::holds_alternative<MessagePtr>(q.dequeue_ready(at_ms(0))));  // drains the bucket
  q.enqueue(msg(2, 51'200), at_ms(0));
  auto r = q.dequeue_ready(at_ms(0));
  ASSERT_TRUE(std::holds_alternative<NotReady>(r));
  auto nr = std::get<NotReady>(r);
  EXPECT_EQ(nr.reason, NotReadyReason::InsufficientTokens);
  ASSERT_TRUE(nr.wakeup_at);
  EXPECT_EQ(*nr.wakeup_at, at_ms(500));
  EXPECT_TRUE(std::holds_alternative<MessagePtr>(q.dequeue_ready(at_ms(500))));
}

TEST(RouteQueue, ZeroRateNeverForwards) {
  QueueConfig c;
  c.rate_kb_per_s = 0;
  auto q = make_queue(c);
  q.enqueue(msg(1), at_ms(0));
  auto r = q.dequeue_ready(at_ms(60'000));
  ASSERT_TRUE(std::holds_alternative<NotReady>(r));
  EXPECT_EQ(std::get<NotReady>(r).reason, NotReadyReason::InsufficientTokens);
  EXPECT_FALSE(std::get<NotReady>(r).wakeup_at);
}

TEST(RouteQueue, InProgressHeadIsSkipped) {
  auto q = make_queue();
  auto a = msg(1), b = msg(2);
  q.enqueue(a, at_ms(0));
  q.enqueue(b, at_ms(0));
  a->transition(MessageState::InProgress);
  auto r = q.dequeue_ready(at_ms(1));
  ASSERT_TRUE(std::holds_alternative<MessagePtr>(r));
  EXPECT_EQ(std::get<MessagePtr>(r), b);
  EXPECT_EQ(b->state(), MessageState::Forwarding);
  ASSERT_EQ(q.length(), 1u);
  EXPECT_EQ(q.at(0), a);
  auto again = q.dequeue_ready(at_ms(2));
  ASSERT_TRUE(std::holds_alternative<NotReady>(again));
  EXPECT_EQ(std::get<NotReady>(again).reason, NotReadyReason::AllInProgress);
}

TEST(RouteQueue, EmptyQueueReportsEmpty) {
  auto q = make_queue();
  auto r = q.dequeue_ready(at_ms(0));
  ASSERT_TRUE(std::holds_alternative<NotReady>(r));
  EXPECT_EQ(std::get<NotReady>(r).reason, NotReadyReason::Empty);
}

TEST(RouteQueueMutation, DropMiddle) {
  auto q = make_queue();
  for (MessageId i = 1; i <= 3; ++i) q.enqueue(msg(i), at_ms(0));
  auto b = q.at(1);
  auto res = q.drop(1, at_ms(0));
  EXPECT_TRUE(res.applied());
  EXPECT_EQ(res.length, 2u);
  EXPECT_EQ(ids(q.items()), (std::vector<MessageId>{1, 3}));
  EXPECT_EQ(b->state(), MessageState::Dropped);
}

TEST(RouteQueueMutation, MoveToFrontLandsAfterHeadMargin) {
  auto q = make_queue();
  for (MessageId i = 1; i <= 3; ++i) q.enqueue(msg(i), at_ms(0));
  q.at(0)->transition(MessageState::InProgress);  // head margin 1
  ASSERT_EQ(q.head_margin(), 1u);
  EXPECT_TRUE(q.move_to_front(2).applied());
  EXPECT_EQ(ids(q.items()), (std::vector<MessageId>{1, 3, 2}));
}

TEST(RouteQueueMutation, MoveToBackLandsBeforeTailMargin) {
  auto q = make_queue();
  for (MessageId i = 1; i <= 4; ++i) q.enqueue(msg(i), at_ms(0));
  q.append_immutable(msg(9), at_ms(0));  // tail margin 1
  ASSERT_EQ(q.tail_margin(), 1u);
  EXPECT_TRUE(q.move_to_back(0).applied());
  EXPECT_EQ(ids(q.items()), (std::vector<MessageId>{2, 3, 4, 1, 9}));
  EXPECT_EQ(q.at(q.length() - q.tail_margin() - 1)->id(), 1u);
}

TEST(RouteQueueMutation, MarginsAreImmutable) {
  auto q = make_queue();
  for (MessageId i = 1; i <= 3; ++i) q.enqueue(msg(i), at_ms(0));
  q.at(0)->transition(MessageState::InProgress);
  q.append_immutable(msg(4), at_ms(0));
  EXPECT_EQ(q.drop(0, at_ms(0)).status, MutationStatus::OutOfWindow);
  EXPECT_EQ(q.drop(3, at_ms(0)).status, MutationStatus::OutOfWindow);
  EXPECT_EQ(q.move_to_front(3).status, MutationStatus::OutOfWindow);
  EXPECT_EQ(q.drop(7, at_ms(0)).status, MutationStatus::InvalidIndex);
  EXPECT_EQ(q.length(), 4u);
}

TEST(RouteQueueMutation, EnqueueGoesBeforeTailMargin) {
  auto q = make_queue();
  q.enqueue(msg(1), at_ms(0));
  q.append_immutable(msg(2), at_ms(0));
  q.enqueue(msg(3), at_ms(0));
  EXPECT_EQ(ids(q.items()), (std::vector<MessageId>{1, 3, 2}));
  q.release_tail(1);
  EXPECT_EQ(q.tail_margin(), 0u);
}

TEST(RouteQueueMutation, InsertAfterCurrent) {
  auto q = make_queue();
  for (MessageId i = 1; i <= 3; ++i) q.enqueue(msg(i), at_ms(0));
  auto res = q.insert_after(1, msg(7), at_ms(0));
  EXPECT_EQ(res.length, 4u);
  EXPECT_EQ(ids(q.items()), (std::vector<MessageId>{1, 2, 7, 3}));
}

// Random interleavings of enqueue, forward, drop, move, transform marks:
// every message ends up exactly once in forwarded, dropped, or resident;
// mutations never touch the margins.
TEST(RouteQueueProperty, ConservationAndWindowEnforcement) {
  std::mt19937_64 rng(11);
  for (int run = 0; run < 200; ++run) {
    QueueConfig c;
    c.rate_kb_per_s = 50;
    RouteQueue q(kRoute, c, at_ms(0));
    std::set<MessageId> forwarded, dropped;
    MessageId next = 1;
    std::int64_t t = 0;
    for (int step = 0; step < 400; ++step) {
      t += std::uniform_int_distribution<int>(0, 20)(rng);
      int op = std::uniform_int_distribution<int>(0, 7)(rng);
      const std::size_t len = q.length();
      auto pick = [&] { return std::uniform_int_distribution<std::size_t>(0, len ? len - 1 : 0)(rng); };
      std::vector<MessageId> before = ids(q.items());
      const std::size_t hm = q.head_margin(), tm = q.tail_margin();
      switch (op) {
        case 0:
        case 1:
          q.enqueue(msg(next++, std::uniform_int_distribution<std::size_t>(1, 3000)(rng)), at_ms(t));
          break;
        case 2: {
          auto r = q.dequeue_ready(at_ms(t));
          if (auto* m = std::get_if<MessagePtr>(&r)) {
            (*m)->transition(MessageState::Forwarded);
            ASSERT_TRUE(forwarded.insert((*m)->id()).second);
          }
          break;
        }
        case 3: {
          if (!len) break;
          auto idx = pick();
          auto m = q.at(idx);
          auto res = q.drop(idx, at_ms(t));
          if (res.applied()) ASSERT_TRUE(dropped.insert(m->id()).second);
          else ASSERT_EQ(ids(q.items()), before);
          ASSERT_EQ(res.applied(), idx >= hm && idx + tm < len);
          break;
        }
        case 4:
        case 5: {
          if (!len) break;
          auto idx = pick();
          auto res = op == 4 ? q.move_to_front(idx) : q.move_to_back(idx);
          ASSERT_EQ(res.applied(), idx >= hm && idx + tm < len);
          if (!res.applied()) ASSERT_EQ(ids(q.items()), before);
          // margins keep their contents
          for (std::size_t k = 0; k < hm; ++k) ASSERT_EQ(q.at(k)->id(), before[k]);
          for (std::size_t k = 0; k < tm; ++k) ASSERT_EQ(q.at(len - 1 - k)->id(), before[len - 1 - k]);
          break;
        }
        case 6: {
          if (len <= tm) break;
          // transforms only reach items outside the tail margin
          auto m = q.at(std::uniform_int_distribution<std::size_t>(0, len - tm - 1)(rng));
          if (m->state() == MessageState::Queued) m->transition(MessageState::InProgress);
          else if (m->state() == MessageState::InProgress) m->transition(MessageState::Queued);
          break;
        }
        case 7:
          if (std::bernoulli_distribution(0.3)(rng)) q.append_immutable(msg(next++), at_ms(t));
          else q.release_tail(1);
          break;
      }
      ASSERT_GE(q.length(), q.head_margin() + q.tail_margin());
    }
    std::set<MessageId> resident;
    for (const auto& m : q.items()) resident.insert(m->id());
    std::size_t total = forwarded.size() + dropped.size() + resident.size();
    ASSERT_EQ(total, next - 1);
  }
}

TEST(QueueManager, CreatesQueuesFromFirstMatchingRule) {
  ManualClock clock;
  QueueConfig limited;
  limited.rate_kb_per_s = 10;
  QueueManager qm({{"*->cloud*", limited}}, QueueConfig{}, clock);
  auto cloud = qm.queue_for(Route("cam", "cloud-detector", Direction::Request));
  auto other = qm.queue_for(Route("cam", "edge", Direction::Request));
  EXPECT_EQ(cloud->config().rate_kb_per_s, 10);
  EXPECT_TRUE(other->bucket().is_unlimited());
  EXPECT_EQ(qm.queue_for(Route("cam", "cloud-detector", Direction::Request)), cloud);
  EXPECT_EQ(qm.queues().size(), 2u);
}

TEST(QueueManager, SetRateZeroThenResume) {
  ManualClock clock;
  QueueManager qm(clock);
  Route r("a", "b", Direction::Request);
  qm.set_rate_limit(r, 0);
  auto q = qm.queue_for(r);
  q->enqueue(make_message(1, r, 1000), clock.now());
  EXPECT_TRUE(std::holds_alternative<NotReady>(q->dequeue_ready(clock.now())));
  qm.set_rate_limit(r, 100);
  // The bucket restarts empty; the 1000-byte head needs ~9.8 ms of tokens.
  auto r1 = q->dequeue_ready(clock.now());
  ASSERT_TRUE(std::holds_alternative<NotReady>(r1));
  auto wake = std::get<NotReady>(r1).wakeup_at;
  ASSERT_TRUE(wake);
  EXPECT_LE(*wake, clock.now() + Millis{10});
  clock.set(*wake);
  EXPECT_FALSE(std::holds_alternative<NotReady>(q->dequeue_ready(clock.now())));
  EXPECT_THROW(qm.set_rate_limit(r, -1), std::invalid_argument);
}

TEST(QueueManager, RecordLatencyFeedsBothDirections) {
  ManualClock clock;
  QueueManager qm(clock);
  Route r("a", "b", Direction::Request);
  auto req = qm.queue_for(r);
  auto resp = qm.queue_for(r.reversed());
  qm.record_latency(r, 100);
  EXPECT_DOUBLE_EQ(req->metrics().avg_latency_ms(), 100);
  EXPECT_DOUBLE_EQ(resp->metrics().avg_latency_ms(), 100);
}
