#pragma once

// Explicit finite distributions on [n], the instance families used by the
// testers and lower-bound experiments, and multinomial / Poissonized
// sample batches.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "reptest/numeric.hpp"
#include "reptest/random.hpp"

namespace reptest {

inline constexpr double kNormalizationTolerance = 1e-12;

/// Probability mass function over {0, ..., n-1}. Immutable once built.
class Pmf {
 public:
  /// Validates and, if the total is off by more than rounding, renormalizes
  /// once. Re-normalizing an already normalized vector is a no-op, so a
  /// Pmf survives serialization bit-exactly.
  explicit Pmf(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.empty()) throw std::invalid_argument("Pmf: empty domain");
    for (double p : probs_) {
      if (!std::isfinite(p) || p < 0.0 || p > 1.0 + kNormalizationTolerance) {
        throw std::invalid_argument("Pmf: mass outside [0,1]: " + format_double(p));
      }
    }
    const double total = compensated_sum(probs_);
    if (std::abs(total - 1.0) > kNormalizationTolerance) {
      throw std::invalid_argument("Pmf: masses sum to " + format_double(total) + ", not 1");
    }
    const double rounding = 4.0 * static_cast<double>(probs_.size()) *
                            std::numeric_limits<double>::epsilon();
    if (std::abs(total - 1.0) > rounding) {
      for (double& p : probs_) p /= total;
    }
  }

  static Pmf uniform(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Pmf::uniform: n must be positive");
    return Pmf(std::vector<double>(n, 1.0 / static_cast<double>(n)));
  }

  static Pmf point_mass(std::size_t n, std::size_t at = 0) {
    if (at >= n) throw std::invalid_argument("Pmf::point_mass: index out of range");
    std::vector<double> probs(n, 0.0);
    probs[at] = 1.0;
    return Pmf(std::move(probs));
  }

  [[nodiscard]] std::size_t n() const noexcept { return probs_.size(); }
  [[nodiscard]] std::span<const double> probs() const noexcept { return probs_; }
  [[nodiscard]] double operator[](std::size_t i) const { return probs_[i]; }

  friend bool operator==(const Pmf&, const Pmf&) = default;

 private:
  std::vector<double> probs_;
};

inline double tv_distance(const Pmf& p, const Pmf& q) {
  if (p.n() != q.n()) throw std::invalid_argument("tv_distance: domain sizes differ");
  CompensatedSum acc;
  for (std::size_t i = 0; i < p.n(); ++i) acc.add(std::abs(p[i] - q[i]));
  return std::clamp(0.5 * acc.value(), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Instance families

struct UniformInstance {};

/// Half the elements carry (1+xi)/n, the other half (1-xi)/n.
/// The heavy ones sit at even 0-based indices.
struct PairedBias {
  double xi = 0.0;
};

/// PairedBias with adjacent pair k = (2k, 2k+1) exchanged when swap_bits[k] is set.
struct LocalSwap {
  double xi = 0.0;
  std::vector<std::uint8_t> swap_bits;
};

/// Element 0 has mass `mass`, the remainder is spread evenly.
struct HeavyElement {
  double mass = 1.0;
};

struct CustomInstance {
  std::vector<double> probs;
};

using InstanceKind = std::variant<UniformInstance, PairedBias, LocalSwap, HeavyElement, CustomInstance>;

struct InstanceSpec {
  std::size_t n = 0;
  InstanceKind kind;

  static InstanceSpec uniform(std::size_t n) { return {n, UniformInstance{}}; }
  static InstanceSpec paired_bias(std::size_t n, double xi) { return {n, PairedBias{xi}}; }
  static InstanceSpec local_swap(std::size_t n, double xi, std::vector<std::uint8_t> bits) {
    return {n, LocalSwap{xi, std::move(bits)}};
  }
  static InstanceSpec heavy_element(std::size_t n, double mass) { return {n, HeavyElement{mass}}; }
  static InstanceSpec custom(std::vector<double> probs) {
    const std::size_t n = probs.size();
    return {n, CustomInstance{std::move(probs)}};
  }
};

inline std::string instance_name(const InstanceSpec& spec) {
  struct Visitor {
    std::string operator()(const UniformInstance&) const { return "uniform"; }
    std::string operator()(const PairedBias&) const { return "paired-bias"; }
    std::string operator()(const LocalSwap&) const { return "local-swap"; }
    std::string operator()(const HeavyElement&) const { return "heavy-element"; }
    std::string operator()(const CustomInstance&) const { return "custom"; }
  };
  return std::visit(Visitor{}, spec.kind);
}

/// The bias parameter of the paired families, 0 for everything else.
inline double instance_xi(const InstanceSpec& spec) {
  if (const auto* pb = std::get_if<PairedBias>(&spec.kind)) return pb->xi;
  if (const auto* ls = std::get_if<LocalSwap>(&spec.kind)) return ls->xi;
  return 0.0;
}

namespace detail {

inline std::vector<double> paired_bias_masses(std::size_t n, double xi) {
  if (n == 0 || n % 2 != 0) throw std::invalid_argument("paired instance requires even n > 0");
  if (!(xi >= 0.0 && xi <= 1.0)) throw std::invalid_argument("paired instance requires 0 <= xi <= 1");
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> probs(n);
  for (std::size_t i = 0; i < n; ++i) probs[i] = (i % 2 == 0 ? 1.0 + xi : 1.0 - xi) * inv_n;
  return probs;
}

}  // namespace detail

inline Pmf make_instance(const InstanceSpec& spec) {
  const std::size_t n = spec.n;
  if (n == 0) throw std::invalid_argument("make_instance: n must be positive");
  struct Visitor {
    std::size_t n;
    Pmf operator()(const UniformInstance&) const { return Pmf::uniform(n); }
    Pmf operator()(const PairedBias& pb) const { return Pmf(detail::paired_bias_masses(n, pb.xi)); }
    Pmf operator()(const LocalSwap& ls) const {
      auto probs = detail::paired_bias_masses(n, ls.xi);
      if (ls.swap_bits.size() != n / 2) {
        throw std::invalid_argument("local swap: expected n/2 swap bits");
      }
      for (std::size_t k = 0; k < n / 2; ++k) {
        if (ls.swap_bits[k] > 1) throw std::invalid_argument("local swap: bits must be 0 or 1");
        if (ls.swap_bits[k] == 1) std::swap(probs[2 * k], probs[2 * k + 1]);
      }
      return Pmf(std::move(probs));
    }
    Pmf operator()(const HeavyElement& he) const {
      const double inv_n = 1.0 / static_cast<double>(n);
      if (!(he.mass >= inv_n * (1.0 - 1e-12) && he.mass <= 1.0)) {
        throw std::invalid_argument("heavy element: mass must lie in [1/n, 1]");
      }
      std::vector<double> probs(n, n > 1 ? (1.0 - he.mass) / static_cast<double>(n - 1) : 0.0);
      probs[0] = n > 1 ? he.mass : 1.0;
      return Pmf(std::move(probs));
    }
    Pmf operator()(const CustomInstance& c) const {
      if (c.probs.size() != n) throw std::invalid_argument("custom instance: size mismatch");
      return Pmf(c.probs);
    }
  };
  return std::visit(Visitor{n}, spec.kind);
}

// ---------------------------------------------------------------------------
// Sample batches

/// Occurrence counts X_0..X_{n-1} of m draws.
struct SampleBatch {
  std::size_t n = 0;
  std::uint64_t m = 0;
  std::vector<std::uint64_t> counts;

  static SampleBatch from_counts(std::vector<std::uint64_t> counts) {
    SampleBatch batch;
    batch.n = counts.size();
    batch.m = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
    batch.counts = std::move(counts);
    return batch;
  }

  static SampleBatch from_samples(std::size_t n, std::span<const std::size_t> samples) {
    std::vector<std::uint64_t> counts(n, 0);
    for (std::size_t s : samples) {
      if (s >= n) throw std::out_of_range("SampleBatch: sample outside domain");
      ++counts[s];
    }
    return from_counts(std::move(counts));
  }

  friend bool operator==(const SampleBatch&, const SampleBatch&) = default;
};

/// Walker/Vose alias table plus the sequential conditional-binomial
/// multinomial. Holds a copy of the Pmf; safe to share read-only.
class PmfSampler {
 public:
  explicit PmfSampler(Pmf pmf) : pmf_(std::move(pmf)) { build_alias(); }

  [[nodiscard]] const Pmf& pmf() const noexcept { return pmf_; }
  [[nodiscard]] std::size_t n() const noexcept { return pmf_.n(); }

  /// One categorical draw in O(1).
  std::size_t sample(Rng& rng) const {
    const std::size_t column = static_cast<std::size_t>(rng.below(pmf_.n()));
    return rng.uniform01() < accept_[column] ? column : alias_[column];
  }

  /// One multinomial(m, p) draw. O(n) via conditional binomials when m >= n,
  /// otherwise m alias draws.
  SampleBatch draw(std::uint64_t m, Rng& rng) const {
    SampleBatch batch;
    batch.n = pmf_.n();
    batch.m = m;
    batch.counts.assign(pmf_.n(), 0);
    if (m == 0) return batch;
    if (m >= pmf_.n()) {
      fill_conditional_binomial(batch.counts, m, rng);
    } else {
      for (std::uint64_t j = 0; j < m; ++j) ++batch.counts[sample(rng)];
    }
    return batch;
  }

  /// Counts are independent Poisson(rate * p_i). Drawn as a Poisson(rate)
  /// total split multinomially, which has exactly that joint law.
  SampleBatch draw_poissonized(double rate, Rng& rng) const {
    if (!(rate > 0.0)) throw std::invalid_argument("draw_poissonized: rate must be positive");
    std::poisson_distribution<std::int64_t> total_dist(rate);
    const auto total = static_cast<std::uint64_t>(total_dist(rng));
    return draw(total, rng);
  }

 private:
  void build_alias() {
    const std::size_t n = pmf_.n();
    accept_.assign(n, 1.0);
    alias_.resize(n);
    std::iota(alias_.begin(), alias_.end(), std::size_t{0});
    std::vector<double> scaled(n);
    std::vector<std::size_t> small;
    std::vector<std::size_t> large;
    for (std::size_t i = 0; i < n; ++i) {
      scaled[i] = pmf_[i] * static_cast<double>(n);
      (scaled[i] < 1.0 ? small : large).push_back(i);
    }
    while (!small.empty() && !large.empty()) {
      const std::size_t s = small.back();
      small.pop_back();
      const std::size_t l = large.back();
      accept_[s] = scaled[s];
      alias_[s] = l;
      scaled[l] = (scaled[l] + scaled[s]) - 1.0;
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    // Leftovers are 1 up to rounding.
    for (std::size_t i : small) accept_[i] = 1.0;
    for (std::size_t i : large) accept_[i] = 1.0;
  }

  void fill_conditional_binomial(std::vector<std::uint64_t>& counts, std::uint64_t m, Rng& rng) const {
    const std::size_t n = pmf_.n();
    std::uint64_t remaining = m;
    double remaining_mass = 1.0;
    for (std::size_t i = 0; i + 1 < n && remaining > 0; ++i) {
      const double p = pmf_[i];
      if (p <= 0.0) continue;
      const double ratio = remaining_mass > 0.0 ? std::clamp(p / remaining_mass, 0.0, 1.0) : 1.0;
      std::uint64_t x = remaining;
      if (ratio < 1.0) {
        std::binomial_distribution<std::int64_t> dist(static_cast<std::int64_t>(remaining), ratio);
        x = static_cast<std::uint64_t>(dist(rng));
      }
      counts[i] = x;
      remaining -= x;
      remaining_mass -= p;
    }
    if (remaining > 0) {
      // Whatever is left lands on the last element with positive mass.
      std::size_t last = n - 1;
      while (last > 0 && pmf_[last] <= 0.0) --last;
      counts[last] += remaining;
    }
  }

  Pmf pmf_;
  std::vector<double> accept_;
  std::vector<std::size_t> alias_;
};

inline SampleBatch draw_batch(const Pmf& p, std::uint64_t m, Rng& stream) {
  return PmfSampler(p).draw(m, stream);
}

inline SampleBatch draw_poissonized_batch(const Pmf& p, double rate, Rng& stream) {
  return PmfSampler(p).draw_poissonized(rate, stream);
}

// ---------------------------------------------------------------------------
// Serialization: {"n": int, "probs": [...]} and one probability per line.

inline void to_json(nlohmann::json& j, const Pmf& p) {
  j = nlohmann::json{{"n", p.n()}, {"probs", std::vector<double>(p.probs().begin(), p.probs().end())}};
}

inline Pmf pmf_from_json(const nlohmann::json& j) {
  auto probs = j.at("probs").get<std::vector<double>>();
  if (j.contains("n") && j.at("n").get<std::size_t>() != probs.size()) {
    throw std::invalid_argument("pmf json: n does not match probs length");
  }
  return Pmf(std::move(probs));
}

inline void write_pmf_text(std::ostream& out, const Pmf& p) {
  for (double x : p.probs()) out << format_double(x) << '\n';
}

inline Pmf read_pmf_text(std::istream& in) {
  std::vector<double> probs;
  std::string token;
  while (in >> token) probs.push_back(parse_double(token));
  return Pmf(std::move(probs));
}

/// Accepts either format; JSON is recognised by a leading '{'.
inline Pmf parse_pmf(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    return pmf_from_json(nlohmann::json::parse(text));
  }
  std::istringstream in(text);
  return read_pmf_text(in);
}

}  // namespace reptest
