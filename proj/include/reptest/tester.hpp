#pragma once

// The replicable uniformity tester, the random-threshold baselines built on
// collision and chi-square statistics, and identity testing through the
// grained reduction to uniformity on [6n].

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "reptest/distribution.hpp"
#include "reptest/numeric.hpp"
#include "reptest/random.hpp"
#include "reptest/statistics.hpp"

namespace reptest {

// ---------------------------------------------------------------------------
// Constants and parameters

/// Constants hidden inside the asymptotic sample-size formulas and the
/// expectation-gap lemma. Defaults are the output of `reptest calibrate
/// --default-grid --rho 0.2` (see config/constants.cfg).
struct TesterConstants {
  double C_gap = 0.644172426161958;
  double c_m1 = 1.0;
  double c_m2 = 1.0;
  double c_m0 = 3.0;

  friend bool operator==(const TesterConstants&, const TesterConstants&) = default;
};

inline constexpr const char* kConstantsEnvVar = "REPTEST_CONSTANTS";

inline void to_json(nlohmann::json& j, const TesterConstants& c) {
  j = nlohmann::json{{"C_gap", c.C_gap}, {"c_m1", c.c_m1}, {"c_m2", c.c_m2}, {"c_m0", c.c_m0}};
}

/// Flat key=value text; '#' starts a comment. Unknown keys are an error.
inline TesterConstants parse_constants(std::istream& in) {
  TesterConstants c;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("constants line " + std::to_string(line_no) + ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const double value = parse_double(trim(line.substr(eq + 1)));
    if (key == "C_gap") c.C_gap = value;
    else if (key == "c_m1") c.c_m1 = value;
    else if (key == "c_m2") c.c_m2 = value;
    else if (key == "c_m0") c.c_m0 = value;
    else throw std::invalid_argument("constants line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  return c;
}

inline TesterConstants load_constants(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open constants file: " + path);
  return parse_constants(in);
}

inline std::string format_constants(const TesterConstants& c, const std::string& provenance = {}) {
  std::ostringstream out;
  if (!provenance.empty()) {
    std::istringstream lines(provenance);
    std::string line;
    while (std::getline(lines, line)) out << "# " << line << '\n';
  }
  out << "C_gap=" << format_double(c.C_gap) << '\n'
      << "c_m1=" << format_double(c.c_m1) << '\n'
      << "c_m2=" << format_double(c.c_m2) << '\n'
      << "c_m0=" << format_double(c.c_m0) << '\n';
  return out.str();
}

/// Built-in defaults unless $REPTEST_CONSTANTS names a constants file.
inline TesterConstants default_constants() {
  if (const char* path = std::getenv(kConstantsEnvVar); path != nullptr && *path != '\0') {
    return load_constants(path);
  }
  return TesterConstants{};
}

struct TesterParams {
  std::size_t n = 0;
  double eps = 0.0;
  double rho = 0.0;
  TesterConstants constants{};

  void validate() const {
    if (n < 2) throw std::invalid_argument("TesterParams: n must be at least 2");
    if (!(eps > 0.0 && eps < 0.5)) throw std::invalid_argument("TesterParams: eps must lie in (0, 1/2)");
    if (!(rho > 0.0 && rho < 0.5)) throw std::invalid_argument("TesterParams: rho must lie in (0, 1/2)");
    const auto& c = constants;
    if (!(c.C_gap > 0.0 && c.c_m1 > 0.0 && c.c_m2 > 0.0 && c.c_m0 > 0.0)) {
      throw std::invalid_argument("TesterParams: constants must be positive");
    }
  }
};

inline void to_json(nlohmann::json& j, const TesterParams& p) {
  j = nlohmann::json{{"n", p.n}, {"eps", p.eps}, {"rho", p.rho}, {"constants", p.constants}};
}

struct SampleSizes {
  std::uint64_t m = 0;   // samples per batch
  std::uint64_t m0 = 0;  // batches; always odd
};

/// m = ceil(c_m1 sqrt(n)/(rho eps^2) sqrt(ln(n/rho)) + c_m2/(rho^2 eps^2)), at least 6;
/// m0 = smallest odd integer >= c_m0 ln(4/rho), at least 1.
inline SampleSizes derive_sizes(const TesterParams& params) {
  params.validate();
  const double n = static_cast<double>(params.n);
  const double eps2 = params.eps * params.eps;
  const double rho = params.rho;
  const auto& c = params.constants;
  const double raw_m = c.c_m1 * (std::sqrt(n) / (rho * eps2)) * std::sqrt(std::log(n / rho)) +
                       c.c_m2 / (rho * rho * eps2);
  const auto m = std::max<std::uint64_t>(6, static_cast<std::uint64_t>(std::ceil(raw_m)));
  auto m0 = static_cast<std::uint64_t>(std::ceil(c.c_m0 * std::log(4.0 / rho)));
  if (m0 < 1) m0 = 1;
  if (m0 % 2 == 0) ++m0;
  return {m, m0};
}

// ---------------------------------------------------------------------------
// Sampling oracles

/// Anything that hands out i.i.d. batches over a fixed domain.
template <class O>
concept BatchOracle = requires(const O& oracle, std::uint64_t m, Rng& rng) {
  { oracle.n() } -> std::convertible_to<std::size_t>;
  { oracle.draw(m, rng) } -> std::same_as<SampleBatch>;
};

/// Anything that hands out one sample at a time.
template <class S>
concept SampleSource = requires(const S& source, Rng& rng) {
  { source.n() } -> std::convertible_to<std::size_t>;
  { source.sample(rng) } -> std::convertible_to<std::size_t>;
};

template <class O>
concept PoissonOracle = BatchOracle<O> && requires(const O& oracle, double rate, Rng& rng) {
  { oracle.draw_poissonized(rate, rng) } -> std::same_as<SampleBatch>;
};

// ---------------------------------------------------------------------------
// Verdicts

enum class Decision { accept, reject };

inline std::string_view decision_name(Decision d) noexcept { return d == Decision::accept ? "accept" : "reject"; }

struct Verdict {
  Decision decision = Decision::reject;
  double s_median = 0.0;   // statistic compared against the threshold
  double threshold = 0.0;
  double r0 = 0.0;         // position of the threshold inside its window
  std::optional<GapRegime> regime;
  double mu_uniform = 0.0;
  double gap = 0.0;        // R, or the window width for the baselines
  std::uint64_t m = 0;
  std::uint64_t m0 = 0;
  std::vector<double> batch_statistics;

  friend bool operator==(const Verdict&, const Verdict&) = default;
};

inline void to_json(nlohmann::json& j, const Verdict& v) {
  j = nlohmann::json{{"decision", decision_name(v.decision)},
                     {"s_median", v.s_median},
                     {"threshold", v.threshold},
                     {"r0", v.r0},
                     {"regime", v.regime ? nlohmann::json(regime_name(*v.regime)) : nlohmann::json(nullptr)},
                     {"mu_uniform", v.mu_uniform},
                     {"gap", v.gap},
                     {"m", v.m},
                     {"m0", v.m0},
                     {"batch_statistics", v.batch_statistics}};
}

namespace detail {

inline double median_of_odd(std::vector<double> values) {
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

}  // namespace detail

/// Threshold for a tester run: mu(U_n) + r0 R with r0 ~ Unif(1/4, 3/4)
/// taken as the first draw of the internal stream. Depends only on the
/// internal stream and the parameters.
struct Threshold {
  double r0;
  double mu_uniform;
  ExpectationGap gap;
  double value;
};

inline Threshold draw_threshold(const TesterParams& params, const SampleSizes& sizes, Rng& internal) {
  const double r0 = internal.uniform(0.25, 0.75);
  const double mu = exact_uniform_mean(params.n, sizes.m);
  const ExpectationGap gap = expectation_gap(params.n, sizes.m, params.eps, params.constants.C_gap);
  return {r0, mu, gap, mu + r0 * gap.R};
}

/// Median of the TV statistic over m0 fresh batches of m samples.
template <BatchOracle Oracle>
std::pair<double, std::vector<double>> median_statistic(const Oracle& oracle, const SampleSizes& sizes, Rng& sample) {
  std::vector<double> stats;
  stats.reserve(sizes.m0);
  for (std::uint64_t j = 0; j < sizes.m0; ++j) stats.push_back(tv_statistic(oracle.draw(sizes.m, sample)));
  return {detail::median_of_odd(stats), std::move(stats)};
}

/// Replicable uniformity tester. Advances both streams of `seeds`.
template <BatchOracle Oracle>
Verdict run_tester(const Oracle& oracle, const TesterParams& params, SeedSplit& seeds) {
  params.validate();
  if (static_cast<std::size_t>(oracle.n()) != params.n) {
    throw std::invalid_argument("run_tester: oracle domain does not match params.n");
  }
  const SampleSizes sizes = derive_sizes(params);
  const Threshold threshold = draw_threshold(params, sizes, seeds.internal);
  auto [s_median, stats] = median_statistic(oracle, sizes, seeds.sample);

  Verdict v;
  v.decision = s_median < threshold.value ? Decision::accept : Decision::reject;
  v.s_median = s_median;
  v.threshold = threshold.value;
  v.r0 = threshold.r0;
  v.regime = threshold.gap.regime;
  v.mu_uniform = threshold.mu_uniform;
  v.gap = threshold.gap.R;
  v.m = sizes.m;
  v.m0 = sizes.m0;
  v.batch_statistics = std::move(stats);
  return v;
}

// ---------------------------------------------------------------------------
// Baselines

enum class BaselineKind { collision, chi2 };

/// Single-batch random-threshold testers. Threshold windows:
///   collision: [C(m,2)/n, C(m,2)(1+eps^2)/n] on one m-batch
///   chi2:      [m eps^2/500, m eps^2/5] on a Poissonized batch at rate m
/// Reject iff statistic >= threshold. `r0` is the threshold's position in
/// its window, uniform on [0,1].
template <PoissonOracle Oracle>
Verdict run_baseline_tester(BaselineKind kind, const Oracle& oracle, std::size_t n, std::uint64_t m, double eps,
                            SeedSplit& seeds) {
  if (m < 2) throw std::invalid_argument("run_baseline_tester: m must be at least 2");
  if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("run_baseline_tester: eps must lie in (0,1)");
  if (static_cast<std::size_t>(oracle.n()) != n) {
    throw std::invalid_argument("run_baseline_tester: oracle domain does not match n");
  }
  const double u = seeds.internal.uniform01();
  const double md = static_cast<double>(m);
  double lo = 0.0;
  double hi = 0.0;
  double statistic = 0.0;
  switch (kind) {
    case BaselineKind::collision: {
      lo = md * (md - 1.0) / 2.0 / static_cast<double>(n);
      hi = lo * (1.0 + eps * eps);
      statistic = static_cast<double>(collision_statistic(oracle.draw(m, seeds.sample)));
      break;
    }
    case BaselineKind::chi2: {
      lo = md * eps * eps / 500.0;
      hi = md * eps * eps / 5.0;
      statistic = chi2_statistic(oracle.draw_poissonized(md, seeds.sample), md);
      break;
    }
    default:
      throw std::invalid_argument("run_baseline_tester: unknown statistic kind");
  }
  Verdict v;
  v.threshold = lo + u * (hi - lo);
  v.decision = statistic >= v.threshold ? Decision::reject : Decision::accept;
  v.s_median = statistic;
  v.r0 = u;
  v.gap = hi - lo;
  v.m = m;
  v.m0 = 1;
  v.batch_statistics = {statistic};
  return v;
}

// ---------------------------------------------------------------------------
// Identity testing

/// Grained reduction from identity testing against q on [n] to uniformity
/// testing on [6n].
///
/// A sample is first mixed with U_n (kept with probability 1/2), so the
/// reference becomes qbar = (q + U_n)/2 with qbar_i >= 1/(2n). Element i owns
/// cells_i = floor(6n qbar_i) >= 3 consecutive cells; the 6n - sum cells_i
/// cells left over form an overflow region. A mixed sample i lands uniformly
/// in its own cells with probability cells_i / (6n qbar_i), otherwise
/// uniformly in the overflow region. When p = q every output cell has mass
/// exactly 1/(6n).
class IdentityReduction {
 public:
  explicit IdentityReduction(const Pmf& q) : n_(q.n()) {
    const double nd = static_cast<double>(n_);
    const std::uint64_t domain = 6 * n_;
    cells_.resize(n_);
    offsets_.resize(n_);
    keep_.resize(n_);
    std::uint64_t used = 0;
    for (std::size_t i = 0; i < n_; ++i) {
      // 6n (q_i + 1/n) / 2 = 3 + 3 n q_i
      const double scaled = 3.0 + 3.0 * nd * q[i];
      auto cells = static_cast<std::uint64_t>(std::floor(scaled * (1.0 + 1e-14)));
      cells = std::max<std::uint64_t>(cells, 3);
      cells_[i] = cells;
      offsets_[i] = used;
      keep_[i] = std::min(1.0, static_cast<double>(cells) / scaled);
      used += cells;
    }
    if (used > domain) throw std::logic_error("IdentityReduction: cell ranges exceed 6n");
    overflow_start_ = used;
    overflow_size_ = domain - used;
    if (overflow_size_ == 0) std::fill(keep_.begin(), keep_.end(), 1.0);
  }

  [[nodiscard]] std::size_t input_n() const noexcept { return n_; }
  [[nodiscard]] std::size_t output_n() const noexcept { return 6 * n_; }
  [[nodiscard]] std::uint64_t cells(std::size_t i) const { return cells_[i]; }
  [[nodiscard]] std::uint64_t offset(std::size_t i) const { return offsets_[i]; }
  [[nodiscard]] double keep_probability(std::size_t i) const { return keep_[i]; }
  [[nodiscard]] std::uint64_t overflow_start() const noexcept { return overflow_start_; }
  [[nodiscard]] std::uint64_t overflow_size() const noexcept { return overflow_size_; }

  /// Maps one sample from [n] to one sample from [6n]. O(1).
  std::size_t apply(std::size_t sample, Rng& aux) const {
    if (sample >= n_) throw std::out_of_range("IdentityReduction: sample outside [n]");
    std::size_t mixed = sample;
    if (aux.uniform01() < 0.5) mixed = static_cast<std::size_t>(aux.below(n_));
    if (overflow_size_ == 0 || aux.uniform01() < keep_[mixed]) {
      return static_cast<std::size_t>(offsets_[mixed] + aux.below(cells_[mixed]));
    }
    return static_cast<std::size_t>(overflow_start_ + aux.below(overflow_size_));
  }

 private:
  std::size_t n_;
  std::vector<std::uint64_t> cells_;
  std::vector<std::uint64_t> offsets_;
  std::vector<double> keep_;
  std::uint64_t overflow_start_ = 0;
  std::uint64_t overflow_size_ = 0;
};

inline std::size_t identity_reduce(const IdentityReduction& reduction, std::size_t sample, Rng& aux) {
  return reduction.apply(sample, aux);
}

/// Batches over [6n] produced by pushing raw samples through the reduction.
/// Reduction coins come from the same stream as the raw samples.
template <SampleSource Source>
class ReducedOracle {
 public:
  ReducedOracle(const Source& source, const IdentityReduction& reduction) : source_(source), reduction_(reduction) {
    if (static_cast<std::size_t>(source.n()) != reduction.input_n()) {
      throw std::invalid_argument("ReducedOracle: source and reference domains differ");
    }
  }

  [[nodiscard]] std::size_t n() const noexcept { return reduction_.output_n(); }

  SampleBatch draw(std::uint64_t m, Rng& rng) const {
    SampleBatch batch;
    batch.n = n();
    batch.m = m;
    batch.counts.assign(batch.n, 0);
    for (std::uint64_t j = 0; j < m; ++j) ++batch.counts[reduction_.apply(source_.sample(rng), rng)];
    return batch;
  }

 private:
  const Source& source_;
  const IdentityReduction& reduction_;
};

/// Parameters of the uniformity tester that runs behind the reduction.
inline TesterParams identity_params(std::size_t n, double eps, double rho, const TesterConstants& constants) {
  return TesterParams{6 * n, eps / 3.0, rho, constants};
}

template <SampleSource Source>
Verdict run_identity_tester(const Source& source, const Pmf& q, const TesterParams& params, SeedSplit& seeds) {
  if (params.n != 6 * q.n()) throw std::invalid_argument("run_identity_tester: params.n must equal 6 q.n");
  const IdentityReduction reduction(q);
  const ReducedOracle<Source> oracle(source, reduction);
  return run_tester(oracle, params, seeds);
}

}  // namespace reptest
