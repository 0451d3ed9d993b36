#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "reptest/statistics.hpp"
#include "support.hpp"

using namespace reptest;

namespace {

SampleBatch counts(std::vector<std::uint64_t> c) { return SampleBatch::from_counts(std::move(c)); }

}  // namespace

TEST(TvStatistic, Examples) {
  EXPECT_DOUBLE_EQ(tv_statistic(counts({2, 0})), 0.5);
  EXPECT_DOUBLE_EQ(tv_statistic(counts({2, 1, 0, 0})), 0.5);
  EXPECT_DOUBLE_EQ(tv_statistic(counts({1, 1, 1, 0})), 0.25);
  EXPECT_THROW(tv_statistic(counts({0, 0, 0})), std::invalid_argument);
}

TEST(EmptyBuckets, Examples) {
  EXPECT_EQ(empty_bucket_count(counts({2, 1, 0, 0})), 2u);
  EXPECT_EQ(empty_bucket_count(counts({1, 4, 2})), 0u);
  EXPECT_EQ(empty_bucket_count(counts({9, 0, 0, 0, 0})), 4u);
}

TEST(CollisionStatistic, Examples) {
  const std::vector<std::size_t> samples{0, 0, 1};
  EXPECT_EQ(collision_statistic(SampleBatch::from_samples(3, samples)), 1u);
  EXPECT_EQ(collision_statistic(counts({3, 0})), 3u);
  EXPECT_EQ(collision_statistic(counts({2, 2})), 2u);
  EXPECT_THROW(collision_statistic(counts({std::uint64_t{1} << 40, 0})), std::overflow_error);
}

TEST(Chi2Statistic, Examples) {
  EXPECT_DOUBLE_EQ(chi2_statistic(counts({2, 0}), 2.0), 0.0);
  EXPECT_DOUBLE_EQ(chi2_statistic(counts({1, 1}), 2.0), -2.0);
  // Every count equal to rate/n: each term is -X_i/(rate/n) = -1.
  EXPECT_DOUBLE_EQ(chi2_statistic(counts({5, 5, 5, 5}), 20.0), -4.0);
  EXPECT_DOUBLE_EQ(chi2_statistic(counts({3, 3, 3, 3, 3, 3}), 18.0), -6.0);
  EXPECT_THROW(chi2_statistic(counts({1, 1}), 0.0), std::invalid_argument);
}

TEST(ExactUniformMean, Examples) {
  EXPECT_NEAR(exact_uniform_mean(2, 2), 0.25, 1e-15);
  EXPECT_NEAR(exact_uniform_mean(3, 1), 2.0 / 3.0, 1e-15);
  EXPECT_THROW(exact_uniform_mean(1, 5), std::invalid_argument);
  EXPECT_THROW(exact_uniform_mean(5, 0), std::invalid_argument);
}

TEST(ExactUniformMean, MatchesEnumerationExhaustively) {
  for (std::size_t n = 2; n <= 5; ++n) {
    for (std::uint64_t m = 1; m <= 7; ++m) {
      const std::vector<double> u(n, 1.0 / static_cast<double>(n));
      EXPECT_NEAR(exact_uniform_mean(n, m), oracle::enumerate_mean_tv(u, m), 1e-12) << n << "," << m;
    }
  }
}

TEST(ExactUniformMean, MatchesMarginalFormulaAtScale) {
  // lgamma-based weights lose about 1e-11 relative accuracy at m ~ 1e4.
  for (auto [n, m] : {std::pair<std::size_t, std::uint64_t>{100, 50}, {100, 500}, {1000, 200}, {10000, 26715}}) {
    const std::vector<double> u(n, 1.0 / static_cast<double>(n));
    EXPECT_NEAR(exact_uniform_mean(n, m), oracle::marginal_mean_tv(u, m), m < 1000 ? 1e-12 : 1e-10) << n << "," << m;
  }
}

TEST(ExactUniformMean, MonteCarloSmall) {
  Rng rng(7);
  const std::size_t n = 2;
  const std::uint64_t m = 1000;
  const int reps = 200000;
  const Pmf u = Pmf::uniform(n);
  double s = 0, s2 = 0;
  for (int r = 0; r < reps; ++r) {
    const double v = tv_statistic(draw_batch(u, m, rng));
    s += v;
    s2 += v * v;
  }
  const double mean = s / reps;
  const double sigma = std::sqrt((s2 / reps - mean * mean) / reps);
  EXPECT_NEAR(mean, exact_uniform_mean(n, m), 4.0 * sigma);
}

TEST(ExpectationGap, Examples) {
  auto g = expectation_gap(10000, 1000, 0.1, 1.0);
  EXPECT_EQ(g.regime, GapRegime::sublinear);
  EXPECT_NEAR(g.R, 1e-4, 1e-18);

  g = expectation_gap(100, 1000, 0.5, 1.0);
  EXPECT_EQ(g.regime, GapRegime::superlearning);
  EXPECT_NEAR(g.R, 0.5, 1e-15);

  g = expectation_gap(10000, 100000, 0.1, 2.0);
  EXPECT_EQ(g.regime, GapRegime::superlinear);
  EXPECT_NEAR(g.R, 2.0 * 0.01 * std::sqrt(10.0), 1e-15);
  EXPECT_NEAR(g.R, 0.06325, 5e-6);
}

TEST(ExpectationGap, Errors) {
  EXPECT_THROW(expectation_gap(100, 100, 0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(expectation_gap(100, 100, 1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(expectation_gap(100, 100, 0.5, 0.0), std::invalid_argument);
  EXPECT_THROW(expectation_gap(100, 5, 0.5, 1.0), std::invalid_argument);
  EXPECT_THROW(expectation_gap(1, 100, 0.5, 1.0), std::invalid_argument);
}

TEST(ExpectationGap, ContinuousAtRegimeBoundaries) {
  // m = n: sublinear gives C xi^2, superlinear limit gives C xi^2.
  const auto at_n = expectation_gap(100, 100, 0.5, 1.0);
  EXPECT_EQ(at_n.regime, GapRegime::sublinear);
  EXPECT_NEAR(at_n.R, 0.25, 1e-15);
  EXPECT_NEAR(expectation_gap(100, 101, 0.5, 1.0).R, 0.25 * std::sqrt(1.01), 1e-15);
  // m = n / xi^2 = 400.
  const auto at_edge = expectation_gap(100, 400, 0.5, 1.0);
  EXPECT_EQ(at_edge.regime, GapRegime::superlinear);
  EXPECT_NEAR(at_edge.R, 0.5, 1e-15);
  const auto past = expectation_gap(100, 401, 0.5, 1.0);
  EXPECT_EQ(past.regime, GapRegime::superlearning);
  EXPECT_NEAR(past.R, 0.5, 1e-15);
}

TEST(ExpectationGap, MonotoneInXiAndM) {
  for (std::size_t n : {10u, 100u, 1000u}) {
    for (std::uint64_t m : {6u, 50u, 500u, 5000u, 50000u}) {
      double prev = 0.0;
      for (int k = 1; k < 100; ++k) {
        const double R = expectation_gap(n, m, k / 100.0, 1.0).R;
        EXPECT_GT(R, prev);
        prev = R;
      }
    }
    double prev = 0.0;
    for (std::uint64_t m = 6; m < 100 * n; m += n / 10 + 1) {
      const double R = expectation_gap(n, m, 0.3, 1.0).R;
      EXPECT_GE(R, prev);
      prev = R;
    }
  }
}

// Z/n identity checked in integers: when m <= n, sum |n X_i - m| = 2 m Z.
TEST(StatisticIdentities, EmptyBucketIdentity) {
  Rng rng(101);
  for (int rep = 0; rep < 2000; ++rep) {
    const std::size_t n = 1 + rng.below(200);
    const std::uint64_t m = 1 + rng.below(n);
    const auto batch = oracle::random_batch(n, m, rng);
    std::int64_t lhs = 0;
    for (std::uint64_t x : batch.counts) {
      lhs += std::llabs(static_cast<std::int64_t>(n * x) - static_cast<std::int64_t>(m));
    }
    const auto z = static_cast<std::int64_t>(empty_bucket_count(batch));
    ASSERT_EQ(lhs, 2 * static_cast<std::int64_t>(m) * z);
    EXPECT_NEAR(tv_statistic(batch), static_cast<double>(z) / static_cast<double>(n), 1e-14);
  }
}

TEST(StatisticIdentities, DistinctElements) {
  Rng rng(103);
  for (int rep = 0; rep < 2000; ++rep) {
    const std::size_t n = 1 + rng.below(100);
    const std::uint64_t m = 1 + rng.below(300);
    std::vector<std::size_t> seq(m);
    for (auto& s : seq) s = static_cast<std::size_t>(rng.below(n));
    const auto batch = SampleBatch::from_samples(n, seq);
    ASSERT_EQ(m - oracle::repeat_count(seq), n - empty_bucket_count(batch));
  }
}

TEST(StatisticIdentities, PermutationInvariance) {
  Rng rng(107);
  for (int rep = 0; rep < 2000; ++rep) {
    const std::size_t n = 2 + rng.below(100);
    const std::uint64_t m = 2 + rng.below(500);
    const auto batch = oracle::random_batch(n, m, rng);
    auto permuted = batch.counts;
    std::shuffle(permuted.begin(), permuted.end(), rng);
    const auto other = SampleBatch::from_counts(permuted);
    EXPECT_NEAR(tv_statistic(other), tv_statistic(batch), 1e-15);
    EXPECT_EQ(collision_statistic(other), collision_statistic(batch));
    EXPECT_EQ(empty_bucket_count(other), empty_bucket_count(batch));
    const double c = chi2_statistic(batch, static_cast<double>(m));
    EXPECT_NEAR(chi2_statistic(other, static_cast<double>(m)), c, 1e-9 * (1.0 + std::abs(c)));
  }
}

// E_p[S] - mu(U_n) >= 0 for any p, computed exactly.
TEST(StatisticIdentities, ExpectedGapNonnegative) {
  Rng rng(109);
  for (int rep = 0; rep < 300; ++rep) {
    const std::size_t n = 2 + rng.below(49);
    const std::uint64_t m = 1 + rng.below(8);
    const auto p = oracle::random_probs(n, rng);
    EXPECT_GE(oracle::marginal_mean_tv(p, m) - exact_uniform_mean(n, m), -1e-13) << n << "," << m;
  }
  // The marginal route agrees with sequence enumeration where both are cheap.
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t n = 2 + rng.below(4);
    const std::uint64_t m = 1 + rng.below(6);
    const auto p = oracle::random_probs(n, rng);
    EXPECT_NEAR(oracle::marginal_mean_tv(p, m), oracle::enumerate_mean_tv(p, m), 1e-12);
  }
}
