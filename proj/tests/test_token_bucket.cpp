#include <gtest/gtest.h>

#include <random>

#include "hivegate/queue/token_bucket.hpp"

using namespace hivegate;

TEST(TokenBucket, StartsFullAtDefaultBurst) {
  TokenBucket b(100, std::nullopt, at_ms(0));
  EXPECT_DOUBLE_EQ(b.capacity(), 100 * 1024 * 0.1);
  EXPECT_DOUBLE_EQ(b.tokens(), b.capacity());
}

TEST(TokenBucket, RefillIsRateTimesElapsedAndSaturates) {
  TokenBucket b(100, 50'000.0, at_ms(0));
  ASSERT_TRUE(b.try_debit(50'000, at_ms(0)));
  b.refill(at_ms(100));
  EXPECT_NEAR(b.tokens(), 102'400 * 0.1, 1e-6);
  b.refill(at_ms(10'000));
  EXPECT_DOUBLE_EQ(b.tokens(), 50'000);
}

TEST(TokenBucket, WakeupForHalfSecondDeficit) {
  TokenBucket b(100, 51'200.0, at_ms(0));
  ASSERT_TRUE(b.try_debit(51'200, at_ms(0)));  // drain to empty
  EXPECT_FALSE(b.can_send(51'200, at_ms(0)));
  auto ready = b.ready_at(51'200, at_ms(0));
  ASSERT_TRUE(ready);
  EXPECT_EQ(*ready, at_ms(500));
}

TEST(TokenBucket, ZeroRateNeverReady) {
  TokenBucket b(0, std::nullopt, at_ms(0));
  b.fit_message(10);
  EXPECT_FALSE(b.can_send(1, at_ms(1000)));
  EXPECT_FALSE(b.ready_at(1, at_ms(1000)).has_value());
}

TEST(TokenBucket, GoingDarkDiscardsTokensAndResumes) {
  TokenBucket b(100, std::nullopt, at_ms(0));
  b.set_rate(0.0, at_ms(10));
  EXPECT_DOUBLE_EQ(b.tokens(), 0);
  b.set_rate(100.0, at_ms(20));
  EXPECT_FALSE(b.can_send(1024, at_ms(20)));
  EXPECT_TRUE(b.can_send(1024, at_ms(30)));
}

TEST(TokenBucket, CapacityCoversLargestMessage) {
  TokenBucket b(1, std::nullopt, at_ms(0));
  b.fit_message(1'000'000);
  EXPECT_GE(b.capacity(), 1'000'000);
  TokenBucket explicit_cap(1, 10.0, at_ms(0));
  explicit_cap.fit_message(500);
  EXPECT_GE(explicit_cap.capacity(), 500);
}

TEST(TokenBucket, RejectsNegativeRates) {
  EXPECT_THROW(TokenBucket(-1, std::nullopt, at_ms(0)), std::invalid_argument);
  TokenBucket b(1, std::nullopt, at_ms(0));
  EXPECT_THROW(b.set_rate(-5.0, at_ms(0)), std::invalid_argument);
}

// Bytes debited in any window [t, t+d] never exceed rate*d + capacity, for
// random message sizes, random attempt times and random rate changes.
TEST(TokenBucketProperty, NeverOverForwardsOnAdversarialSchedules) {
  std::mt19937_64 rng(2024);
  for (int schedule = 0; schedule < 1000; ++schedule) {
    double rate = std::uniform_real_distribution<double>(1, 500)(rng);
    TokenBucket b(rate, std::nullopt, at_ms(0));
    struct Sent {
      std::int64_t us;
      double bytes;
    };
    std::vector<Sent> sent;
    std::vector<std::pair<std::int64_t, double>> rates{{0, rate}};
    std::int64_t t = 0;
    std::size_t max_msg = 0;
    const int steps = std::uniform_int_distribution<int>(20, 200)(rng);
    for (int i = 0; i < steps; ++i) {
      t += std::uniform_int_distribution<std::int64_t>(0, 50'000)(rng);
      if (std::bernoulli_distribution(0.05)(rng)) {
        rate = std::uniform_real_distribution<double>(0, 500)(rng);
        b.set_rate(rate, at_us(t));
        rates.push_back({t, rate});
      }
      auto size = std::uniform_int_distribution<std::size_t>(1, 60'000)(rng);
      max_msg = std::max(max_msg, size);
      b.fit_message(size);
      if (b.try_debit(size, at_us(t))) sent.push_back({t, static_cast<double>(size)});
    }
    // Allowance over [a, b]: integral of the rate schedule plus one capacity.
    auto allowance = [&](std::int64_t a, std::int64_t e) {
      double total = 0;
      for (std::size_t k = 0; k < rates.size(); ++k) {
        std::int64_t s = std::max(a, rates[k].first);
        std::int64_t f = k + 1 < rates.size() ? std::min(e, rates[k + 1].first) : e;
        if (f > s) total += rates[k].second * 1024 * static_cast<double>(f - s) / 1e6;
      }
      double cap = 0;
      for (auto& r : rates) cap = std::max(cap, r.second * 1024 * 0.1);
      return total + std::max(cap, static_cast<double>(max_msg));
    };
    for (std::size_t i = 0; i < sent.size(); ++i) {
      double bytes = 0;
      for (std::size_t j = i; j < sent.size(); ++j) {
        bytes += sent[j].bytes;
        ASSERT_LE(bytes, allowance(sent[i].us, sent[j].us) + 1e-3)
            << "schedule " << schedule << " window " << i << ".." << j;
      }
    }
  }
}
