#include <gtest/gtest.h>

#include <random>

#include "hivegate/metrics/queue_metrics.hpp"

using namespace hivegate;

TEST(ObservedBandwidth, UniformForwardsOverWindow) {
  QueueMetrics m(Millis{1000});
  for (int i = 1; i <= 100; ++i) m.record_forward(1024, at_ms(i * 10));
  EXPECT_DOUBLE_EQ(m.observed_bw(at_ms(1000)), 102'400);
}

TEST(ObservedBandwidth, TwoForwardsInsideWindow) {
  QueueMetrics m(Millis{1000});
  m.record_forward(50 * 1024, at_ms(0));
  m.record_forward(50 * 1024, at_ms(500));
  EXPECT_DOUBLE_EQ(m.observed_bw(at_ms(600)), 102'400);
}

TEST(ObservedBandwidth, StuckBacklogReadsZero) {
  QueueMetrics m(Millis{350});
  m.record_forward(10'000, at_ms(0));
  m.note_backlog(true, at_ms(10));
  EXPECT_GT(m.observed_bw(at_ms(300)), 0);
  EXPECT_EQ(m.observed_bw(at_ms(360)), 0);
}

TEST(ObservedBandwidth, IdleQueueHoldsEstimate) {
  QueueMetrics m(Millis{350});
  m.record_forward(35'000, at_ms(0));
  m.note_backlog(false, at_ms(0));
  EXPECT_DOUBLE_EQ(m.observed_bw(at_ms(5000)), 100'000);
}

TEST(ObservedBandwidth, NeverForwardedReadsZero) {
  QueueMetrics m;
  EXPECT_EQ(m.observed_bw(at_ms(0)), 0);
  m.note_backlog(true, at_ms(0));
  EXPECT_EQ(m.observed_bw(at_ms(10)), 0);
}

// Brute-force oracle: sum of bytes with timestamp in (now - W, now], / W.
TEST(ObservedBandwidthProperty, MatchesSumOverWindow) {
  std::mt19937_64 rng(5);
  for (int run = 0; run < 300; ++run) {
    const int window = std::uniform_int_distribution<int>(50, 2000)(rng);
    QueueMetrics m(Millis{window});
    std::vector<std::pair<std::int64_t, std::size_t>> log;
    std::int64_t t = 0;
    for (int i = 0; i < 200; ++i) {
      t += std::uniform_int_distribution<int>(0, 100)(rng);
      auto bytes = std::uniform_int_distribution<std::size_t>(1, 100'000)(rng);
      m.record_forward(bytes, at_ms(t));
      log.push_back({t, bytes});
      const std::int64_t query = t + std::uniform_int_distribution<int>(0, window - 1)(rng);
      double sum = 0;
      for (auto& [at, b] : log)
        if (at > query - window && at <= query) sum += static_cast<double>(b);
      ASSERT_NEAR(m.observed_bw(at_ms(query)), sum / (window / 1000.0), 1e-6);
    }
  }
}

TEST(Latency, FirstSampleInitializes) {
  QueueMetrics m;
  EXPECT_FALSE(m.has_latency());
  m.record_latency(100);
  EXPECT_DOUBLE_EQ(m.avg_latency_ms(), 100);
}

TEST(Latency, EwmaWithAlphaPointThree) {
  QueueMetrics m;
  m.record_latency(100);
  m.record_latency(200);
  EXPECT_DOUBLE_EQ(m.avg_latency_ms(), 0.3 * 200 + 0.7 * 100);
}

TEST(Latency, ConvergesWithinOnePercentAfterFifteenSamples) {
  QueueMetrics m;
  m.record_latency(1000);  // far-off start
  for (int i = 0; i < 15; ++i) m.record_latency(100);
  // |avg - x| = 900 * 0.7^15 ~= 4.2, i.e. within 1% of the starting gap scale
  EXPECT_NEAR(m.avg_latency_ms(), 100, 900 * std::pow(0.7, 15) + 1e-9);
  EXPECT_LT(std::abs(m.avg_latency_ms() - 100) / 100, 0.05);
}

TEST(Age, TruncatedMilliseconds) {
  EXPECT_EQ(message_age_ms(at_ms(10), at_ms(10)), 0);
  EXPECT_EQ(message_age_ms(at_ms(10), at_ms(260)), 250);
  EXPECT_EQ(message_age_ms(at_ms(0), at_us(1999)), 1);
}

TEST(Transport, AbsentValuesAreUnavailable) {
  TransportMetrics t;
  EXPECT_FALSE(t.get("rtt").has_value());
  t.cwnd_bytes = 14600;
  EXPECT_EQ(t.get("cwnd").value(), 14600);
  EXPECT_FALSE(t.get("bogus").has_value());
}
