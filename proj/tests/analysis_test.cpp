#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "reptest/analysis.hpp"
#include "support.hpp"

using namespace reptest;
using namespace reptest::analysis;

TEST(BruteForce, Examples) {
  EXPECT_NEAR(brute_force_mean_statistic(Pmf::uniform(2), 2, tv_statistic), 0.25, 1e-15);
  EXPECT_NEAR(brute_force_mean_statistic(Pmf::uniform(3), 1, tv_statistic), 2.0 / 3.0, 1e-15);
  for (std::uint64_t m : {1u, 3u, 6u}) {
    EXPECT_NEAR(brute_force_mean_statistic(Pmf::point_mass(5, 2), m, tv_statistic), 0.8, 1e-15);
  }
  EXPECT_THROW(brute_force_mean_statistic(Pmf::uniform(10), 8, tv_statistic), std::invalid_argument);
}

TEST(BruteForce, SymmetricEnumerationAgrees) {
  Rng rng(4);
  for (int rep = 0; rep < 40; ++rep) {
    const std::size_t n = 1 + rng.below(5);
    const std::uint64_t m = 1 + rng.below(6);
    const Pmf p(oracle::random_probs(n, rng));
    const double ordered = brute_force_mean_statistic(p, m, tv_statistic);
    EXPECT_NEAR(brute_force_mean_symmetric(p, m, tv_statistic), ordered, 1e-13);
    EXPECT_NEAR(ordered, oracle::enumerate_mean_tv(oracle::masses(p), m), 1e-13);
    auto collisions = [](const SampleBatch& b) { return static_cast<double>(collision_statistic(b)); };
    // E[collisions] = C(m,2) sum p_i^2.
    double l2 = 0.0;
    for (double v : p.probs()) l2 += v * v;
    EXPECT_NEAR(brute_force_mean_symmetric(p, m, collisions), m * (m - 1) / 2.0 * l2, 1e-12);
  }
}

TEST(Pushforward, UniformTwoIsUniformTwelve) {
  const Pmf out = exact_pushforward(Pmf::uniform(2), Pmf::uniform(2));
  ASSERT_EQ(out.n(), 12u);
  for (double v : out.probs()) EXPECT_NEAR(v, 1.0 / 12.0, 1e-15);
}

TEST(Pushforward, FarPairStaysFar) {
  const Pmf q(std::vector<double>{0.75, 0.25});
  const Pmf p(std::vector<double>{0.25, 0.75});
  EXPECT_DOUBLE_EQ(tv_distance(p, q), 0.5);
  EXPECT_GE(tv_distance(exact_pushforward(q, p), Pmf::uniform(12)), 1.0 / 6.0 - 1e-12);
}

TEST(Pushforward, RandomReferencesMapToUniform) {
  Rng rng(6);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rng.below(60);
    const Pmf q(oracle::random_probs(n, rng));
    const Pmf out = exact_pushforward(q, q);
    for (double v : out.probs()) ASSERT_NEAR(v, 1.0 / static_cast<double>(6 * n), 1e-12);
    const Pmf p(oracle::random_probs(n, rng));
    EXPECT_GE(tv_distance(exact_pushforward(q, p), Pmf::uniform(6 * n)), tv_distance(p, q) / 3.0 - 1e-12);
  }
  EXPECT_THROW(exact_pushforward(Pmf::uniform(2), Pmf::uniform(3)), std::invalid_argument);
}

TEST(Pushforward, RationalFamilyCounts) {
  // Distinct distributions on [2] with denominators <= 4: 0, 1/4, 1/3, 1/2, 2/3, 3/4, 1 for the first mass.
  EXPECT_EQ(rational_distributions(2, 4).size(), 7u);
  EXPECT_EQ(rational_distributions(1, 8).size(), 1u);
  const auto scan = reduction_scan(3, 6);
  EXPECT_TRUE(scan.passed());
  EXPECT_LE(scan.max_uniform_deviation, 1e-12);
  EXPECT_GE(scan.min_far_slack, -1e-12);
}

TEST(PairJoint, EqualBiasesGiveEqualConditionals) {
  const auto d = pair_joint(0.7, 0.2, 0.2);
  EXPECT_EQ(d.joint[0], d.joint[1]);
  const auto mi = mutual_info_pair(d);
  EXPECT_EQ(mi.value, 0.0);
  EXPECT_EQ(mi.bound_rhs, 0.0);
}

TEST(PairJoint, UnbiasedIsProductOfPoissons) {
  const auto d = pair_joint(1.0, 0.0, 0.0);
  for (std::size_t a = 0; a <= std::min<std::size_t>(d.K, 8); ++a) {
    for (std::size_t b = 0; b <= std::min<std::size_t>(d.K, 8); ++b) {
      const double expected = std::exp(-2.0) / (std::tgamma(a + 1.0) * std::tgamma(b + 1.0));
      EXPECT_NEAR(d.at(0, a, b), expected, 1e-15);
    }
  }
}

TEST(PairJoint, MarginalsAndTail) {
  const double lambda = 0.5;
  const double eps = 0.3;
  const auto d = pair_joint(lambda, 0.1, eps, 1e-14);
  EXPECT_LE(d.tail_mass, 1e-14);
  // Marginal of M1 given X=1 is the even mixture of Poi(l(1+e)) and Poi(l(1-e)).
  for (std::size_t a = 0; a <= d.K; ++a) {
    double marginal = 0.0;
    for (std::size_t b = 0; b <= d.K; ++b) marginal += d.at(1, a, b);
    const double hi = std::exp(-lambda * (1 + eps)) * std::pow(lambda * (1 + eps), a) / std::tgamma(a + 1.0);
    const double lo = std::exp(-lambda * (1 - eps)) * std::pow(lambda * (1 - eps), a) / std::tgamma(a + 1.0);
    EXPECT_NEAR(marginal, 0.5 * (hi + lo), 1e-14);
  }
  // Symmetric in the two coordinates.
  for (std::size_t a = 0; a <= d.K; ++a) {
    for (std::size_t b = 0; b <= d.K; ++b) EXPECT_DOUBLE_EQ(d.at(0, a, b), d.at(0, b, a));
  }
}

TEST(PairJoint, Errors) {
  EXPECT_THROW(pair_joint(0.0, 0.1, 0.2), std::invalid_argument);
  EXPECT_THROW(pair_joint(1.0, 0.3, 0.2), std::invalid_argument);
  EXPECT_THROW(pair_joint(1.0, 0.1, 1.0), std::invalid_argument);
  EXPECT_THROW(pair_joint(1.0, 0.1, 0.2, 0.0), std::invalid_argument);
  EXPECT_THROW(pair_joint(20000.0, 0.1, 0.2), std::runtime_error);
}

TEST(MutualInfo, BoundsAndMonotonicity) {
  for (double lambda : {0.05, 0.3, 1.0, 3.0}) {
    for (double eps : {0.0, 0.1, 0.4}) {
      double prev = 0.0;
      for (double delta : {0.0, 0.01, 0.05, 0.2, 0.5}) {
        if (eps + delta >= 1.0) continue;
        const auto mi = mutual_info_pair(pair_joint(lambda, eps, eps + delta));
        EXPECT_GE(mi.value, prev - 1e-15);
        EXPECT_LE(mi.value, std::log(2.0));
        prev = mi.value;
      }
    }
  }
}

TEST(MutualInfo, QuadraticScaling) {
  for (double lambda : {0.1, 0.5, 1.0}) {
    for (double eps : {0.1, 0.2}) {
      for (double delta : {0.01, 0.02}) {
        const double full = mutual_info_pair(pair_joint(lambda, eps, eps + delta)).value;
        const double half_delta = mutual_info_pair(pair_joint(lambda, eps, eps + delta / 2)).value;
        const double half_lambda = mutual_info_pair(pair_joint(lambda / 2, eps, eps + delta)).value;
        EXPECT_GE(full / half_delta, 2.5);
        EXPECT_LE(full / half_delta, 6.0);
        EXPECT_GE(full / half_lambda, 2.5);
        EXPECT_LE(full / half_lambda, 6.0);
      }
    }
  }
}

TEST(MutualInfo, GridCsv) {
  const auto rows = mi_grid({0.1, 1.0}, {0.1}, {0.0, 0.01});
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].mi_nats, 0.0);
  EXPECT_DOUBLE_EQ(rows[1].eps1, 0.11);
  std::ostringstream out;
  write_mi_csv(out, rows);
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "lambda,eps0,eps1,K,tail_mass,mi_nats,error_budget");
}
