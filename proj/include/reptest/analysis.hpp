#pragma once

// Exact small-instance oracles: expectations by enumeration, the exact
// output law of the identity reduction, and mutual information between a
// hidden bias bit and one pair of Poissonized counts.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "reptest/distribution.hpp"
#include "reptest/numeric.hpp"
#include "reptest/tester.hpp"

namespace reptest::analysis {

using BatchStatistic = std::function<double(const SampleBatch&)>;

inline constexpr double kEnumerationLimit = 1e7;

/// E[statistic] over all n^m ordered sample sequences, each weighted by the
/// product of its masses.
inline double brute_force_mean_statistic(const Pmf& p, std::uint64_t m, const BatchStatistic& statistic) {
  const std::size_t n = p.n();
  if (std::pow(static_cast<double>(n), static_cast<double>(m)) > kEnumerationLimit) {
    throw std::invalid_argument("brute_force_mean_statistic: n^m exceeds enumeration limit");
  }
  std::vector<std::size_t> sequence(m, 0);
  SampleBatch batch;
  batch.n = n;
  batch.m = m;
  CompensatedSum expectation;
  while (true) {
    double weight = 1.0;
    batch.counts.assign(n, 0);
    for (std::size_t s : sequence) {
      weight *= p[s];
      ++batch.counts[s];
    }
    if (weight > 0.0) expectation.add(weight * statistic(batch));
    // Odometer increment.
    std::size_t pos = 0;
    while (pos < m && ++sequence[pos] == n) sequence[pos++] = 0;
    if (pos == m) break;
  }
  return expectation.value();
}

/// Same expectation for a permutation-invariant statistic, enumerating count
/// vectors (compositions of m into n parts) weighted by multinomial
/// probabilities. C(m+n-1, n-1) terms instead of n^m.
inline double brute_force_mean_symmetric(const Pmf& p, std::uint64_t m, const BatchStatistic& statistic) {
  const std::size_t n = p.n();
  SampleBatch batch;
  batch.n = n;
  batch.m = m;
  batch.counts.assign(n, 0);
  CompensatedSum expectation;
  const double log_m_fact = std::lgamma(static_cast<double>(m) + 1.0);

  std::function<void(std::size_t, std::uint64_t, double)> recurse = [&](std::size_t i, std::uint64_t left,
                                                                        double log_weight) {
    if (i + 1 == n) {
      batch.counts[i] = left;
      double lw = log_weight - std::lgamma(static_cast<double>(left) + 1.0);
      if (left > 0) {
        if (p[i] <= 0.0) return;
        lw += static_cast<double>(left) * std::log(p[i]);
      }
      expectation.add(std::exp(log_m_fact + lw) * statistic(batch));
      return;
    }
    for (std::uint64_t x = 0; x <= left; ++x) {
      if (x > 0 && p[i] <= 0.0) break;
      batch.counts[i] = x;
      const double term = x > 0 ? static_cast<double>(x) * std::log(p[i]) : 0.0;
      recurse(i + 1, left - x, log_weight + term - std::lgamma(static_cast<double>(x) + 1.0));
    }
    batch.counts[i] = 0;
  };
  recurse(0, m, 0.0);
  return expectation.value();
}

/// Exact law on [6n] of one p-sample pushed through the reduction built from q.
inline Pmf exact_pushforward(const Pmf& q, const Pmf& p) {
  if (q.n() != p.n()) throw std::invalid_argument("exact_pushforward: domain sizes differ");
  const IdentityReduction reduction(q);
  const std::size_t n = q.n();
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> out(reduction.output_n(), 0.0);
  CompensatedSum overflow_mass;
  for (std::size_t i = 0; i < n; ++i) {
    const double mixed = 0.5 * (p[i] + inv_n);
    const double keep = reduction.keep_probability(i);
    const double per_cell = mixed * keep / static_cast<double>(reduction.cells(i));
    for (std::uint64_t c = 0; c < reduction.cells(i); ++c) out[reduction.offset(i) + c] = per_cell;
    overflow_mass.add(mixed * (1.0 - keep));
  }
  if (reduction.overflow_size() > 0) {
    const double per_cell = overflow_mass.value() / static_cast<double>(reduction.overflow_size());
    for (std::uint64_t c = 0; c < reduction.overflow_size(); ++c) out[reduction.overflow_start() + c] = per_cell;
  }
  return Pmf(std::move(out));
}

/// Every distribution on [n] whose masses are k_i / d with d <= max_denominator,
/// without duplicates (2/4 and 1/2 are the same distribution).
inline std::vector<Pmf> rational_distributions(std::size_t n, std::uint64_t max_denominator) {
  std::vector<std::vector<double>> found;
  std::vector<std::uint64_t> numerators(n, 0);
  for (std::uint64_t d = 1; d <= max_denominator; ++d) {
    std::function<void(std::size_t, std::uint64_t)> recurse = [&](std::size_t i, std::uint64_t left) {
      if (i + 1 == n) {
        numerators[i] = left;
        std::vector<double> probs(n);
        for (std::size_t j = 0; j < n; ++j) probs[j] = static_cast<double>(numerators[j]) / static_cast<double>(d);
        found.push_back(std::move(probs));
        return;
      }
      for (std::uint64_t k = 0; k <= left; ++k) {
        numerators[i] = k;
        recurse(i + 1, left - k);
      }
    };
    recurse(0, d);
  }
  std::sort(found.begin(), found.end());
  found.erase(std::unique(found.begin(), found.end()), found.end());
  std::vector<Pmf> result;
  result.reserve(found.size());
  for (auto& probs : found) result.emplace_back(std::move(probs));
  return result;
}

struct ReductionScan {
  std::uint64_t references = 0;      // q values checked for exact uniformity
  std::uint64_t pairs = 0;           // (p, q) pairs with p != q
  double max_uniform_deviation = 0;  // max over q, cells of |push(q,q)_c - 1/(6n)|
  double min_far_slack = 0;          // min over pairs of tv(push(q,p), U) - tv(p,q)/3
  std::uint64_t uniform_failures = 0;
  std::uint64_t far_failures = 0;

  [[nodiscard]] bool passed() const noexcept { return uniform_failures == 0 && far_failures == 0; }
};

/// Exhaustive check of the reduction on all rational distributions with
/// n <= max_n and denominators <= max_denominator, at tolerance `tol`.
inline ReductionScan reduction_scan(std::size_t max_n, std::uint64_t max_denominator, double tol = 1e-12) {
  ReductionScan scan;
  scan.min_far_slack = std::numeric_limits<double>::infinity();
  for (std::size_t n = 1; n <= max_n; ++n) {
    const auto family = rational_distributions(n, max_denominator);
    const Pmf uniform_out = Pmf::uniform(6 * n);
    const double cell = 1.0 / static_cast<double>(6 * n);
    for (const Pmf& q : family) {
      ++scan.references;
      const Pmf same = exact_pushforward(q, q);
      double worst = 0.0;
      for (double v : same.probs()) worst = std::max(worst, std::abs(v - cell));
      scan.max_uniform_deviation = std::max(scan.max_uniform_deviation, worst);
      if (worst > tol) ++scan.uniform_failures;
      for (const Pmf& p : family) {
        if (p == q) continue;
        ++scan.pairs;
        const double slack = tv_distance(exact_pushforward(q, p), uniform_out) - tv_distance(p, q) / 3.0;
        scan.min_far_slack = std::min(scan.min_far_slack, slack);
        if (slack < -tol) ++scan.far_failures;
      }
    }
  }
  return scan;
}

// ---------------------------------------------------------------------------
// Mutual information for one adjacent pair under Poissonization.
//
// Given X = x, (M1, M2) is the even mixture
//   (1/2)[Poi(l(1+e_x)) (x) Poi(l(1-e_x)) + Poi(l(1-e_x)) (x) Poi(l(1+e_x))]
// with l = m/n, truncated to {0..K}^2.

inline constexpr std::size_t kMaxTruncation = 10000;

struct PairJointDist {
  double lambda = 0.0;
  double eps0 = 0.0;
  double eps1 = 0.0;
  std::size_t K = 0;
  // joint[x][a * (K+1) + b] = Pr(M1 = a, M2 = b | X = x)
  std::vector<double> joint[2];
  double tail_mass = 0.0;

  [[nodiscard]] double at(int x, std::size_t a, std::size_t b) const { return joint[x][a * (K + 1) + b]; }
};

namespace detail {

inline double poisson_pmf(std::size_t k, double mu) {
  if (mu == 0.0) return k == 0 ? 1.0 : 0.0;
  const double kd = static_cast<double>(k);
  return std::exp(kd * std::log(mu) - mu - std::lgamma(kd + 1.0));
}

/// Smallest K with Pr(Poi(mu) > K) <= tol.
inline std::size_t poisson_truncation(double mu, double tol) {
  std::vector<double> pmf;
  std::size_t k = 0;
  // Extend past the mode until terms are negligible against tol.
  while (true) {
    pmf.push_back(poisson_pmf(k, mu));
    if (static_cast<double>(k) > mu && pmf.back() < tol * 1e-6) break;
    if (++k > kMaxTruncation) throw std::runtime_error("pair_joint: truncation exceeds hard cap");
  }
  double tail = 0.0;
  std::size_t K = pmf.size() - 1;
  for (std::size_t j = pmf.size() - 1; j > 0; --j) {
    tail += pmf[j];
    if (tail > tol) break;
    K = j - 1;
  }
  return K;
}

}  // namespace detail

inline PairJointDist pair_joint(double lambda, double eps0, double eps1, double tail_tol = 1e-14) {
  if (!(lambda > 0.0)) throw std::invalid_argument("pair_joint: lambda must be positive");
  if (!(eps0 >= 0.0 && eps0 <= eps1 && eps1 < 1.0)) {
    throw std::invalid_argument("pair_joint: requires 0 <= eps0 <= eps1 < 1");
  }
  if (!(tail_tol > 0.0)) throw std::invalid_argument("pair_joint: tail_tol must be positive");

  PairJointDist d;
  d.lambda = lambda;
  d.eps0 = eps0;
  d.eps1 = eps1;
  // Each coordinate is stochastically below Poi(l(1+eps1)); a union bound
  // over the two coordinates splits the tolerance.
  d.K = detail::poisson_truncation(lambda * (1.0 + eps1), tail_tol / 2.0);
  if (d.K > kMaxTruncation) throw std::runtime_error("pair_joint: truncation exceeds hard cap");
  const std::size_t width = d.K + 1;

  const double biases[2] = {eps0, eps1};
  for (int x = 0; x < 2; ++x) {
    std::vector<double> hi(width);
    std::vector<double> lo(width);
    for (std::size_t k = 0; k < width; ++k) {
      hi[k] = detail::poisson_pmf(k, lambda * (1.0 + biases[x]));
      lo[k] = detail::poisson_pmf(k, lambda * (1.0 - biases[x]));
    }
    auto& matrix = d.joint[x];
    matrix.resize(width * width);
    CompensatedSum total;
    for (std::size_t a = 0; a < width; ++a) {
      for (std::size_t b = 0; b < width; ++b) {
        const double v = 0.5 * (hi[a] * lo[b] + lo[a] * hi[b]);
        matrix[a * width + b] = v;
        total.add(v);
      }
    }
    d.tail_mass = std::max(d.tail_mass, std::max(0.0, 1.0 - total.value()));
  }
  return d;
}

struct MutualInfoValue {
  double value = 0.0;         // nats
  double error_budget = 0.0;  // truncation allowance
  double bound_rhs = 0.0;     // constant * eps1^2 * delta^2 * lambda^2
};

/// I(X : M1, M2) for an unbiased bit X.
inline MutualInfoValue mutual_info_pair(const PairJointDist& d, double bound_constant = 1.0) {
  const std::size_t cells = (d.K + 1) * (d.K + 1);
  if (d.joint[0].size() != cells || d.joint[1].size() != cells) {
    throw std::invalid_argument("mutual_info_pair: malformed joint distribution");
  }
  CompensatedSum info;
  for (std::size_t c = 0; c < cells; ++c) {
    const double p0 = d.joint[0][c];
    const double p1 = d.joint[1][c];
    const double mean = 0.5 * (p0 + p1);
    if (mean <= 0.0) continue;
    // P_x ln(P_x / Pbar). log1p of the relative difference when the two
    // conditionals are close, plain logs when one dwarfs the other.
    const double r = 0.5 * (p0 - p1) / mean;
    auto log_ratio = [&](double px, double rel) {
      return std::abs(rel) < 0.5 ? std::log1p(rel) : std::log(px) - std::log(mean);
    };
    if (p0 > 0.0) info.add(0.5 * p0 * log_ratio(p0, r));
    if (p1 > 0.0) info.add(0.5 * p1 * log_ratio(p1, -r));
  }
  MutualInfoValue result;
  result.value = std::max(0.0, info.value());
  result.error_budget = d.tail_mass > 0.0 ? 2.0 * d.tail_mass * std::abs(std::log(d.tail_mass)) : 0.0;
  const double delta = d.eps1 - d.eps0;
  result.bound_rhs = bound_constant * d.eps1 * d.eps1 * delta * delta * d.lambda * d.lambda;
  return result;
}

struct MiGridRow {
  double lambda;
  double eps0;
  double eps1;
  std::size_t K;
  double tail_mass;
  double mi_nats;
  double error_budget;
};

/// One row per (lambda, eps, delta) with eps0 = eps and eps1 = eps + delta.
inline std::vector<MiGridRow> mi_grid(const std::vector<double>& lambdas, const std::vector<double>& epsilons,
                                      const std::vector<double>& deltas, double tail_tol = 1e-14) {
  std::vector<MiGridRow> rows;
  for (double lambda : lambdas) {
    for (double eps : epsilons) {
      for (double delta : deltas) {
        const PairJointDist d = pair_joint(lambda, eps, eps + delta, tail_tol);
        const MutualInfoValue mi = mutual_info_pair(d);
        rows.push_back({lambda, eps, eps + delta, d.K, d.tail_mass, mi.value, mi.error_budget});
      }
    }
  }
  return rows;
}

inline void write_mi_csv(std::ostream& out, const std::vector<MiGridRow>& rows) {
  out << "lambda,eps0,eps1,K,tail_mass,mi_nats,error_budget\n";
  for (const auto& r : rows) {
    out << format_double(r.lambda) << ',' << format_double(r.eps0) << ',' << format_double(r.eps1) << ',' << r.K
        << ',' << format_double(r.tail_mass) << ',' << format_double(r.mi_nats) << ','
        << format_double(r.error_budget) << '\n';
  }
}

}  // namespace reptest::analysis
