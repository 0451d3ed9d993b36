#pragma once

// Test statistics over a SampleBatch and their uniform-case expectations.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

#include "reptest/distribution.hpp"
#include "reptest/numeric.hpp"

namespace reptest {

/// Empirical TV distance to uniform: (1/2) sum |X_i/m - 1/n|.
inline double tv_statistic(const SampleBatch& batch) {
  if (batch.m == 0) throw std::invalid_argument("tv_statistic: empty batch");
  const double inv_m = 1.0 / static_cast<double>(batch.m);
  const double inv_n = 1.0 / static_cast<double>(batch.n);
  CompensatedSum acc;
  for (std::uint64_t x : batch.counts) acc.add(std::abs(static_cast<double>(x) * inv_m - inv_n));
  return std::clamp(0.5 * acc.value(), 0.0, 1.0);
}

/// Z: number of elements that never occur.
inline std::size_t empty_bucket_count(const SampleBatch& batch) noexcept {
  std::size_t zeros = 0;
  for (std::uint64_t x : batch.counts) zeros += (x == 0);
  return zeros;
}

/// Pairwise collisions, sum X_i (X_i - 1) / 2.
inline std::uint64_t collision_statistic(const SampleBatch& batch) {
  unsigned __int128 total = 0;
  for (std::uint64_t x : batch.counts) {
    if (x < 2) continue;
    const unsigned __int128 wide = x;
    total += wide * (wide - 1) / 2;
  }
  if (total > std::numeric_limits<std::uint64_t>::max()) {
    throw std::overflow_error("collision_statistic: count exceeds 64 bits");
  }
  return static_cast<std::uint64_t>(total);
}

/// sum ((X_i - rate/n)^2 - X_i) / (rate/n) for Poissonized counts at `rate`.
inline double chi2_statistic(const SampleBatch& batch, double rate) {
  if (!(rate > 0.0)) throw std::invalid_argument("chi2_statistic: rate must be positive");
  const double expected = rate / static_cast<double>(batch.n);
  CompensatedSum acc;
  for (std::uint64_t count : batch.counts) {
    const double x = static_cast<double>(count);
    const double d = x - expected;
    acc.add((d * d - x) / expected);
  }
  return acc.value();
}

/// E[tv_statistic] for m draws from U_n.
///
/// By linearity this is (n/2) E|K/m - 1/n| with K ~ Binomial(m, 1/n).
/// Weights are built by the pmf ratio recurrence outward from the mode and
/// normalized by their own sum; terms below 1e-18 of the mode are dropped.
inline double exact_uniform_mean(std::size_t n, std::uint64_t m) {
  if (n < 2) throw std::invalid_argument("exact_uniform_mean: n must be at least 2");
  if (m < 1) throw std::invalid_argument("exact_uniform_mean: m must be positive");
  constexpr double kRelativeCutoff = 1e-18;
  const double p = 1.0 / static_cast<double>(n);
  const double odds = p / (1.0 - p);
  const double mean = static_cast<double>(m) * p;
  const auto mode = static_cast<std::uint64_t>(std::floor(static_cast<double>(m + 1) * p));

  CompensatedSum weight_total;
  CompensatedSum abs_dev;
  weight_total.add(1.0);
  abs_dev.add(std::abs(static_cast<double>(mode) - mean));

  double w = 1.0;
  for (std::uint64_t k = mode; k < m; ++k) {
    w *= static_cast<double>(m - k) / static_cast<double>(k + 1) * odds;
    if (w < kRelativeCutoff) break;
    weight_total.add(w);
    abs_dev.add(w * std::abs(static_cast<double>(k + 1) - mean));
  }
  w = 1.0;
  for (std::uint64_t k = mode; k > 0; --k) {
    w *= static_cast<double>(k) / static_cast<double>(m - k + 1) / odds;
    if (w < kRelativeCutoff) break;
    weight_total.add(w);
    abs_dev.add(w * std::abs(static_cast<double>(k - 1) - mean));
  }
  const double mean_abs_dev = abs_dev.value() / weight_total.value();
  return 0.5 * static_cast<double>(n) * mean_abs_dev / static_cast<double>(m);
}

enum class GapRegime { sublinear, superlinear, superlearning };

inline std::string_view regime_name(GapRegime regime) noexcept {
  switch (regime) {
    case GapRegime::sublinear: return "sublinear";
    case GapRegime::superlinear: return "superlinear";
    case GapRegime::superlearning: return "superlearning";
  }
  return "unknown";
}

struct ExpectationGap {
  GapRegime regime;
  double R;
};

/// Lower bound on E_p[S] - E_U[S] for p at TV distance xi from uniform:
///   C xi^2 m^2/n^2      if m <= n
///   C xi^2 sqrt(m/n)    if n < m <= n/xi^2
///   C xi                otherwise
inline ExpectationGap expectation_gap(std::size_t n, std::uint64_t m, double xi, double C) {
  if (!(xi > 0.0 && xi < 1.0)) throw std::invalid_argument("expectation_gap: xi must lie in (0,1)");
  if (!(C > 0.0)) throw std::invalid_argument("expectation_gap: C must be positive");
  if (m < 6 || n < 2) throw std::invalid_argument("expectation_gap: requires m >= 6 and n >= 2");
  const double md = static_cast<double>(m);
  const double nd = static_cast<double>(n);
  const double xi2 = xi * xi;
  if (md <= nd) return {GapRegime::sublinear, C * xi2 * (md / nd) * (md / nd)};
  if (md <= nd / xi2) return {GapRegime::superlinear, C * xi2 * std::sqrt(md / nd)};
  return {GapRegime::superlearning, C * xi};
}

}  // namespace reptest
