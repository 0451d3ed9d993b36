#pragma once

// Test-only oracles. They are written against the definitions and share no
// code path with the library routines they check.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "reptest/distribution.hpp"
#include "reptest/random.hpp"

namespace reptest::oracle {

inline std::vector<double> masses(const Pmf& p) { return {p.probs().begin(), p.probs().end()}; }

/// E[S] for S = (1/2) sum |X_i/m - 1/n| by walking all n^m ordered sequences.
inline double enumerate_mean_tv(const std::vector<double>& p, std::uint64_t m) {
  const std::size_t n = p.size();
  std::vector<std::size_t> seq(m, 0);
  double total = 0.0;
  while (true) {
    double w = 1.0;
    std::vector<double> counts(n, 0.0);
    for (std::size_t s : seq) {
      w *= p[s];
      counts[s] += 1.0;
    }
    double s_val = 0.0;
    for (double c : counts) s_val += std::abs(c / static_cast<double>(m) - 1.0 / static_cast<double>(n));
    total += w * 0.5 * s_val;
    std::size_t pos = 0;
    while (pos < m && ++seq[pos] == n) seq[pos++] = 0;
    if (pos == m) break;
  }
  return total;
}

inline double binomial_pmf(std::uint64_t m, std::uint64_t k, double p) {
  if (p <= 0.0) return k == 0 ? 1.0 : 0.0;
  if (p >= 1.0) return k == m ? 1.0 : 0.0;
  const double md = static_cast<double>(m);
  const double kd = static_cast<double>(k);
  return std::exp(std::lgamma(md + 1) - std::lgamma(kd + 1) - std::lgamma(md - kd + 1) + kd * std::log(p) +
                  (md - kd) * std::log1p(-p));
}

/// E[S] via linearity: each X_i is Binomial(m, p_i).
inline double marginal_mean_tv(const std::vector<double>& p, std::uint64_t m) {
  const double inv_n = 1.0 / static_cast<double>(p.size());
  std::map<double, double> per_mass;
  double total = 0.0;
  for (double pi : p) {
    auto [it, fresh] = per_mass.try_emplace(pi, 0.0);
    if (fresh) {
      for (std::uint64_t k = 0; k <= m; ++k) {
        it->second += binomial_pmf(m, k, pi) * std::abs(static_cast<double>(k) / static_cast<double>(m) - inv_n);
      }
    }
    total += it->second;
  }
  return 0.5 * total;
}

/// Number of samples that repeat some earlier sample (sum of Y_i).
inline std::uint64_t repeat_count(const std::vector<std::size_t>& seq) {
  std::set<std::size_t> seen;
  std::uint64_t repeats = 0;
  for (std::size_t s : seq) {
    if (!seen.insert(s).second) ++repeats;
  }
  return repeats;
}

/// Random probability vector with some exact zeros.
inline std::vector<double> random_probs(std::size_t n, Rng& rng, bool allow_zeros = true) {
  std::vector<double> w(n);
  double total = 0.0;
  for (auto& x : w) {
    x = (allow_zeros && rng.uniform01() < 0.2) ? 0.0 : rng.uniform01() + 1e-3;
    total += x;
  }
  if (total == 0.0) {
    w[0] = 1.0;
    total = 1.0;
  }
  for (auto& x : w) x /= total;
  return w;
}

/// Random count vector of length n summing to m.
inline SampleBatch random_batch(std::size_t n, std::uint64_t m, Rng& rng) {
  std::vector<std::uint64_t> counts(n, 0);
  for (std::uint64_t j = 0; j < m; ++j) ++counts[rng.below(n)];
  return SampleBatch::from_counts(std::move(counts));
}

}  // namespace reptest::oracle
