#pragma once

// Monte Carlo experiments over the testers: correctness and two-run
// replicability rates, acceptance-probability sweeps, heavy-element barrier
// scaling, and calibration of the tester constants.
//
// Every trial draws its streams from derive_key(master_seed, role, indices),
// and results are stored by trial index, so a report does not depend on the
// number of workers or on scheduling.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "reptest/distribution.hpp"
#include "reptest/numeric.hpp"
#include "reptest/random.hpp"
#include "reptest/statistics.hpp"
#include "reptest/tester.hpp"

namespace reptest {

/// Runs body(i) for i in [0, count) on `workers` threads.
template <class Body>
void parallel_for(std::size_t count, std::size_t workers, Body&& body) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = count;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

struct WilsonInterval {
  double lo;
  double hi;
};

/// 95% Wilson score interval for a binomial proportion.
inline WilsonInterval wilson_interval(std::uint64_t successes, std::uint64_t trials, double z = 1.959963984540054) {
  if (trials == 0) throw std::invalid_argument("wilson_interval: no trials");
  if (successes > trials) throw std::invalid_argument("wilson_interval: successes exceed trials");
  const double nt = static_cast<double>(trials);
  const double phat = static_cast<double>(successes) / nt;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nt;
  const double center = (phat + z2 / (2.0 * nt)) / denom;
  const double half = z * std::sqrt(phat * (1.0 - phat) / nt + z2 / (4.0 * nt * nt)) / denom;
  return {std::clamp(std::min(center - half, phat), 0.0, 1.0), std::clamp(std::max(center + half, phat), 0.0, 1.0)};
}

// ---------------------------------------------------------------------------
// Reports

struct TrialRow {
  std::string experiment_id;
  std::uint64_t trial = 0;
  std::uint64_t run = 0;
  std::string instance_kind;
  double xi = 0.0;
  std::size_t n = 0;
  std::uint64_t m = 0;
  std::uint64_t m0 = 0;
  double statistic = 0.0;
  double threshold = 0.0;
  double r0 = 0.0;
  Decision decision = Decision::reject;
  std::optional<bool> agree;
};

struct ExperimentReport {
  std::string experiment_id;
  std::uint64_t trials = 0;
  std::uint64_t successes = 0;
  double rate = 0.0;
  double wilson_lo = 0.0;
  double wilson_hi = 0.0;
  nlohmann::json config_echo;
  std::vector<TrialRow> per_trial;
};

inline void finalize_rate(ExperimentReport& report) {
  report.rate = static_cast<double>(report.successes) / static_cast<double>(report.trials);
  const auto ci = wilson_interval(report.successes, report.trials);
  report.wilson_lo = ci.lo;
  report.wilson_hi = ci.hi;
}

inline nlohmann::json summary_json(const ExperimentReport& r) {
  return nlohmann::json{{"experiment_id", r.experiment_id}, {"trials", r.trials},     {"successes", r.successes},
                        {"rate", r.rate},                   {"wilson_lo", r.wilson_lo}, {"wilson_hi", r.wilson_hi},
                        {"config", r.config_echo}};
}

inline void write_config_header(std::ostream& out, const nlohmann::json& config) {
  out << "# config: " << config.dump() << '\n';
}

inline void write_trials_csv(std::ostream& out, const ExperimentReport& report) {
  write_config_header(out, report.config_echo);
  out << "experiment_id,trial,run,instance_kind,xi,n,m,m0,statistic,threshold,r0,decision,agree\n";
  for (const auto& row : report.per_trial) {
    out << row.experiment_id << ',' << row.trial << ',' << row.run << ',' << row.instance_kind << ','
        << format_double(row.xi) << ',' << row.n << ',' << row.m << ',' << row.m0 << ','
        << format_double(row.statistic) << ',' << format_double(row.threshold) << ',' << format_double(row.r0)
        << ',' << decision_name(row.decision) << ',';
    if (row.agree) out << (*row.agree ? 1 : 0);
    out << '\n';
  }
}

namespace detail {

inline TrialRow make_row(const std::string& id, std::uint64_t trial, std::uint64_t run, const InstanceSpec& spec,
                         const Verdict& v) {
  TrialRow row;
  row.experiment_id = id;
  row.trial = trial;
  row.run = run;
  row.instance_kind = instance_name(spec);
  row.xi = instance_xi(spec);
  row.n = spec.n;
  row.m = v.m;
  row.m0 = v.m0;
  row.statistic = v.s_median;
  row.threshold = v.threshold;
  row.r0 = v.r0;
  row.decision = v.decision;
  return row;
}

inline nlohmann::json instance_json(const InstanceSpec& spec) {
  return nlohmann::json{{"kind", instance_name(spec)}, {"n", spec.n}, {"xi", instance_xi(spec)}};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Correctness

enum class Expectation { accept, reject };

inline ExperimentReport correctness_experiment(const InstanceSpec& instance, const TesterParams& params,
                                               std::uint64_t trials, std::uint64_t master_seed,
                                               Expectation expect, std::size_t workers = 1) {
  if (trials < 1) throw std::invalid_argument("correctness_experiment: trials must be positive");
  params.validate();
  const PmfSampler sampler(make_instance(instance));
  ExperimentReport report;
  report.experiment_id = "correctness";
  report.trials = trials;
  report.config_echo = {{"experiment", "correctness"},
                        {"instance", detail::instance_json(instance)},
                        {"params", params},
                        {"trials", trials},
                        {"master_seed", master_seed},
                        {"expect", expect == Expectation::accept ? "accept" : "reject"}};
  report.per_trial.resize(trials);
  parallel_for(trials, workers, [&](std::size_t t) {
    auto seeds = SeedSplit::from_seeds(derive_key(master_seed, StreamRole::internal, {t}),
                                       derive_key(master_seed, StreamRole::sample, {t, 0}));
    const Verdict v = run_tester(sampler, params, seeds);
    report.per_trial[t] = detail::make_row(report.experiment_id, t, 0, instance, v);
  });
  const Decision wanted = expect == Expectation::accept ? Decision::accept : Decision::reject;
  for (const auto& row : report.per_trial) report.successes += (row.decision == wanted);
  finalize_rate(report);
  return report;
}

// ---------------------------------------------------------------------------
// Replicability

/// Distribution over instances; draws with the given stream.
struct InstancePrior {
  std::string description;
  std::function<InstanceSpec(Rng&)> draw;
};

/// PairedBias(xi) with xi ~ Unif[0, 2 eps], i.e. TV distance uniform on [0, eps].
inline InstancePrior paired_bias_prior(std::size_t n, double eps) {
  return {"paired-bias xi~Unif[0," + format_double(2.0 * eps) + "]",
          [n, eps](Rng& rng) { return InstanceSpec::paired_bias(n, rng.uniform(0.0, 2.0 * eps)); }};
}

inline InstancePrior fixed_prior(InstanceSpec spec) {
  const std::string name = instance_name(spec);
  return {"fixed " + name, [spec = std::move(spec)](Rng&) { return spec; }};
}

/// Each pair shares one internal stream across two runs. With
/// `shared_sample_seeds` both runs also see the same samples (control).
inline ExperimentReport replicability_experiment(const InstancePrior& prior, const TesterParams& params,
                                                 std::uint64_t pairs, std::uint64_t master_seed,
                                                 std::size_t workers = 1, bool shared_sample_seeds = false) {
  if (pairs < 1) throw std::invalid_argument("replicability_experiment: pairs must be positive");
  params.validate();
  ExperimentReport report;
  report.experiment_id = "replicability";
  report.trials = pairs;
  report.config_echo = {{"experiment", "replicability"},
                        {"prior", prior.description},
                        {"params", params},
                        {"pairs", pairs},
                        {"master_seed", master_seed},
                        {"shared_sample_seeds", shared_sample_seeds}};
  report.per_trial.resize(2 * pairs);
  parallel_for(pairs, workers, [&](std::size_t t) {
    Rng prior_rng(derive_key(master_seed, StreamRole::prior, {t}));
    const InstanceSpec instance = prior.draw(prior_rng);
    const PmfSampler sampler(make_instance(instance));
    const Rng internal(derive_key(master_seed, StreamRole::internal, {t}));
    Verdict verdicts[2];
    for (std::uint64_t run = 0; run < 2; ++run) {
      SeedSplit seeds{internal, Rng(derive_key(master_seed, StreamRole::sample, {t, shared_sample_seeds ? 0 : run}))};
      verdicts[run] = run_tester(sampler, params, seeds);
    }
    const bool agree = verdicts[0].decision == verdicts[1].decision;
    for (std::uint64_t run = 0; run < 2; ++run) {
      auto row = detail::make_row(report.experiment_id, t, run, instance, verdicts[run]);
      row.agree = agree;
      report.per_trial[2 * t + run] = std::move(row);
    }
  });
  for (std::uint64_t t = 0; t < pairs; ++t) report.successes += *report.per_trial[2 * t].agree ? 1 : 0;
  finalize_rate(report);
  return report;
}

// ---------------------------------------------------------------------------
// Acceptance sweep

struct SweepCurve {
  std::vector<double> xi_grid;
  std::vector<double> acc_estimates;
  std::uint64_t trials_per_point = 0;
  bool fixed_internal = false;
  nlohmann::json config_echo;
};

/// Estimates Pr[accept] of the tester on PairedBias(xi) for each xi. With
/// `fixed_internal` every trial reuses one internal stream state, so the
/// curve is that of a single deterministic tester.
inline SweepCurve acceptance_sweep(const TesterParams& params, std::vector<double> xi_grid,
                                   std::uint64_t trials_per_point, std::uint64_t master_seed, bool fixed_internal,
                                   std::size_t workers = 1) {
  params.validate();
  if (trials_per_point < 1) throw std::invalid_argument("acceptance_sweep: trials must be positive");
  for (std::size_t i = 0; i < xi_grid.size(); ++i) {
    if (!(xi_grid[i] >= 0.0 && xi_grid[i] <= 1.0)) throw std::invalid_argument("acceptance_sweep: xi outside [0,1]");
    if (i > 0 && !(xi_grid[i] > xi_grid[i - 1])) {
      throw std::invalid_argument("acceptance_sweep: grid must be strictly increasing");
    }
  }
  SweepCurve curve;
  curve.xi_grid = std::move(xi_grid);
  curve.trials_per_point = trials_per_point;
  curve.fixed_internal = fixed_internal;
  curve.config_echo = {{"experiment", "sweep"},          {"params", params},
                       {"xi_grid", curve.xi_grid},       {"trials_per_point", trials_per_point},
                       {"master_seed", master_seed},     {"fixed_internal", fixed_internal}};
  const std::size_t points = curve.xi_grid.size();
  std::vector<std::uint8_t> accepted(points * trials_per_point, 0);
  std::vector<PmfSampler> samplers;
  samplers.reserve(points);
  for (double xi : curve.xi_grid) samplers.emplace_back(make_instance(InstanceSpec::paired_bias(params.n, xi)));
  parallel_for(points * trials_per_point, workers, [&](std::size_t job) {
    const std::size_t point = job / trials_per_point;
    const std::size_t t = job % trials_per_point;
    const std::uint64_t internal_key = fixed_internal ? derive_key(master_seed, StreamRole::internal, {})
                                                      : derive_key(master_seed, StreamRole::internal, {point, t});
    auto seeds = SeedSplit::from_seeds(internal_key, derive_key(master_seed, StreamRole::sample, {point, t}));
    accepted[job] = run_tester(samplers[point], params, seeds).decision == Decision::accept;
  });
  curve.acc_estimates.resize(points);
  for (std::size_t point = 0; point < points; ++point) {
    std::uint64_t hits = 0;
    for (std::size_t t = 0; t < trials_per_point; ++t) hits += accepted[point * trials_per_point + t];
    curve.acc_estimates[point] = static_cast<double>(hits) / static_cast<double>(trials_per_point);
  }
  return curve;
}

inline void write_sweep_csv(std::ostream& out, const SweepCurve& curve) {
  write_config_header(out, curve.config_echo);
  out << "experiment_id,xi,trials,acc_estimate\n";
  for (std::size_t i = 0; i < curve.xi_grid.size(); ++i) {
    out << "sweep," << format_double(curve.xi_grid[i]) << ',' << curve.trials_per_point << ','
        << format_double(curve.acc_estimates[i]) << '\n';
  }
}

/// Evenly spaced grid "lo:hi:count".
inline std::vector<double> parse_grid(const std::string& text) {
  const auto a = text.find(':');
  const auto b = text.find(':', a == std::string::npos ? a : a + 1);
  if (a == std::string::npos || b == std::string::npos) throw std::invalid_argument("grid must look like lo:hi:count");
  const double lo = parse_double(text.substr(0, a));
  const double hi = parse_double(text.substr(a + 1, b - a - 1));
  const double count_d = parse_double(text.substr(b + 1));
  if (!(count_d >= 1.0) || count_d != std::floor(count_d)) throw std::invalid_argument("grid count must be a positive integer");
  const auto count = static_cast<std::size_t>(count_d);
  if (count > 1 && !(hi > lo)) throw std::invalid_argument("grid requires hi > lo");
  std::vector<double> grid(count);
  for (std::size_t i = 0; i < count; ++i) {
    grid[i] = count == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Heavy-element barrier

enum class BarrierStatistic { collision, chi2, tv };

inline std::string_view barrier_statistic_name(BarrierStatistic kind) noexcept {
  switch (kind) {
    case BarrierStatistic::collision: return "collision";
    case BarrierStatistic::chi2: return "chi2";
    case BarrierStatistic::tv: return "tv";
  }
  return "unknown";
}

struct BarrierRow {
  std::uint64_t m = 0;
  double mean = 0.0;
  double sd = 0.0;
  double gap = 0.0;
  double sd_over_gap = 0.0;
};

struct BarrierTable {
  BarrierStatistic kind = BarrierStatistic::collision;
  std::size_t n = 0;
  double eps = 0.5;
  std::uint64_t runs_per_m = 0;
  std::vector<BarrierRow> rows;
  double log_log_slope = 0.0;  // least-squares slope of log sd against log m
  nlohmann::json config_echo;
};

/// Least-squares slope of y against x.
inline double least_squares_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("least_squares_slope: need >= 2 points");
  const double k = static_cast<double>(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= k;
  my /= k;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

/// Spread of a statistic across independent runs on HeavyElement(n^{-1/2}).
/// Gap scales: m^2 eps^2 / n (collision), m eps^2 (chi2), eps^2 m^2 / n^2 (tv).
inline BarrierTable barrier_experiment(BarrierStatistic kind, std::size_t n, const std::vector<std::uint64_t>& m_grid,
                                       std::uint64_t runs_per_m, std::uint64_t master_seed, double eps = 0.5,
                                       std::size_t workers = 1) {
  if (m_grid.size() < 2) throw std::invalid_argument("barrier_experiment: need at least two grid points");
  for (std::size_t i = 1; i < m_grid.size(); ++i) {
    if (!(m_grid[i] > m_grid[i - 1])) throw std::invalid_argument("barrier_experiment: m grid must increase");
  }
  if (runs_per_m < 2) throw std::invalid_argument("barrier_experiment: need at least two runs per point");
  const InstanceSpec instance = InstanceSpec::heavy_element(n, 1.0 / std::sqrt(static_cast<double>(n)));
  const PmfSampler sampler(make_instance(instance));
  BarrierTable table;
  table.kind = kind;
  table.n = n;
  table.eps = eps;
  table.runs_per_m = runs_per_m;
  table.config_echo = {{"experiment", "barrier"}, {"statistic", barrier_statistic_name(kind)},
                       {"n", n},                  {"m_grid", m_grid},
                       {"runs_per_m", runs_per_m}, {"master_seed", master_seed},
                       {"eps", eps},              {"heavy_mass", make_instance(instance)[0]}};

  std::vector<double> values(m_grid.size() * runs_per_m);
  parallel_for(values.size(), workers, [&](std::size_t job) {
    const std::size_t point = job / runs_per_m;
    const std::size_t run = job % runs_per_m;
    Rng rng(derive_key(master_seed, StreamRole::sample, {point, run}));
    const std::uint64_t m = m_grid[point];
    switch (kind) {
      case BarrierStatistic::collision:
        values[job] = static_cast<double>(collision_statistic(sampler.draw(m, rng)));
        break;
      case BarrierStatistic::chi2:
        values[job] = chi2_statistic(sampler.draw_poissonized(static_cast<double>(m), rng), static_cast<double>(m));
        break;
      case BarrierStatistic::tv:
        values[job] = tv_statistic(sampler.draw(m, rng));
        break;
    }
  });

  std::vector<double> log_m;
  std::vector<double> log_sd;
  const double nd = static_cast<double>(n);
  for (std::size_t point = 0; point < m_grid.size(); ++point) {
    CompensatedSum sum;
    for (std::size_t r = 0; r < runs_per_m; ++r) sum.add(values[point * runs_per_m + r]);
    const double mean = sum.value() / static_cast<double>(runs_per_m);
    CompensatedSum sq;
    for (std::size_t r = 0; r < runs_per_m; ++r) {
      const double d = values[point * runs_per_m + r] - mean;
      sq.add(d * d);
    }
    BarrierRow row;
    row.m = m_grid[point];
    row.mean = mean;
    row.sd = std::sqrt(sq.value() / static_cast<double>(runs_per_m - 1));
    const double md = static_cast<double>(row.m);
    switch (kind) {
      case BarrierStatistic::collision: row.gap = md * md * eps * eps / nd; break;
      case BarrierStatistic::chi2: row.gap = md * eps * eps; break;
      case BarrierStatistic::tv: row.gap = eps * eps * md * md / (nd * nd); break;
    }
    row.sd_over_gap = row.sd / row.gap;
    table.rows.push_back(row);
    log_m.push_back(std::log(md));
    log_sd.push_back(std::log(row.sd));
  }
  table.log_log_slope = least_squares_slope(log_m, log_sd);
  return table;
}

/// Geometric grid lo, 2 lo, 4 lo, ... up to hi.
inline std::vector<std::uint64_t> doubling_grid(std::uint64_t lo, std::uint64_t hi) {
  std::vector<std::uint64_t> grid;
  for (std::uint64_t m = lo; m <= hi; m *= 2) grid.push_back(m);
  return grid;
}

inline void write_barrier_csv(std::ostream& out, const BarrierTable& table) {
  write_config_header(out, table.config_echo);
  out << "experiment_id,statistic,n,m,runs,mean,sd,gap,sd_over_gap\n";
  for (const auto& row : table.rows) {
    out << "barrier," << barrier_statistic_name(table.kind) << ',' << table.n << ',' << row.m << ','
        << table.runs_per_m << ',' << format_double(row.mean) << ',' << format_double(row.sd) << ','
        << format_double(row.gap) << ',' << format_double(row.sd_over_gap) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Calibration

struct PilotInstance {
  std::size_t n;
  double eps;
};

inline std::vector<PilotInstance> default_pilot_grid() { return {{500, 0.3}, {1000, 0.25}, {2000, 0.2}}; }

struct PilotOutcome {
  PilotInstance pilot{};
  double size_scale = 1.0;
  SampleSizes sizes{};
  double mu_uniform = 0.0;
  double unit_gap = 0.0;        // expectation_gap(...).R at C = 1
  double far_quantile = 0.0;    // rho/4 quantile of S_median on PairedBias(2 eps)
  double uniform_quantile = 0.0;  // 1 - rho/4 quantile of S_median on U_n
  double c_gap_limit = 0.0;     // largest C with far_quantile >= mu + C * unit_gap
};

struct CalibrationResult {
  TesterConstants constants;
  std::vector<PilotOutcome> pilots;
  std::string provenance;
};

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

/// Linear-interpolated empirical quantile.
inline double empirical_quantile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace detail

/// Picks C_gap so that on every pilot the far instance PairedBias(2 eps)
/// has its rho/4-quantile of S_median above mu(U_n) + R, and checks that the
/// uniform instance keeps its (1 - rho/4)-quantile below mu(U_n) + R/4.
/// The largest C satisfying the far condition is read off the order
/// statistic directly; the most conservative (smallest) C across pilots is
/// returned. If the uniform condition fails, the sample-size constants are
/// doubled (up to 8x) and the procedure repeats.
inline CalibrationResult calibrate(const std::vector<PilotInstance>& grid, double rho, std::uint64_t trials,
                                   std::uint64_t master_seed, std::size_t workers = 1, double c_m0 = 3.0) {
  if (grid.empty()) throw std::invalid_argument("calibrate: empty pilot grid");
  if (trials < 2) throw std::invalid_argument("calibrate: need at least two trials per pilot");
  if (!(rho > 0.0 && rho < 0.5)) throw std::invalid_argument("calibrate: rho must lie in (0, 1/2)");

  std::ostringstream diagnostics;
  for (double scale : {1.0, 2.0, 4.0, 8.0}) {
    std::vector<PilotOutcome> outcomes;
    for (std::size_t pi = 0; pi < grid.size(); ++pi) {
      const PilotInstance pilot = grid[pi];
      TesterParams params{pilot.n, pilot.eps, rho, TesterConstants{1.0, scale, scale, c_m0}};
      params.validate();
      if (pilot.n % 2 != 0) throw std::invalid_argument("calibrate: pilot n must be even");
      const SampleSizes sizes = derive_sizes(params);
      const PmfSampler uniform(make_instance(InstanceSpec::uniform(pilot.n)));
      const PmfSampler far(make_instance(InstanceSpec::paired_bias(pilot.n, 2.0 * pilot.eps)));
      std::vector<double> uniform_medians(trials);
      std::vector<double> far_medians(trials);
      parallel_for(2 * trials, workers, [&](std::size_t job) {
        const std::size_t which = job / trials;
        const std::size_t t = job % trials;
        Rng rng(derive_key(master_seed, StreamRole::calibration, {pi, which, t}));
        const double s = which == 0 ? median_statistic(uniform, sizes, rng).first
                                    : median_statistic(far, sizes, rng).first;
        (which == 0 ? uniform_medians : far_medians)[t] = s;
      });
      PilotOutcome out;
      out.pilot = pilot;
      out.size_scale = scale;
      out.sizes = sizes;
      out.mu_uniform = exact_uniform_mean(pilot.n, sizes.m);
      out.unit_gap = expectation_gap(pilot.n, sizes.m, pilot.eps, 1.0).R;
      out.far_quantile = detail::empirical_quantile(far_medians, rho / 4.0);
      out.uniform_quantile = detail::empirical_quantile(uniform_medians, 1.0 - rho / 4.0);
      out.c_gap_limit = (out.far_quantile - out.mu_uniform) / out.unit_gap;
      outcomes.push_back(out);
    }
    double c_gap = outcomes.front().c_gap_limit;
    for (const auto& o : outcomes) c_gap = std::min(c_gap, o.c_gap_limit);

    bool feasible = c_gap > 0.0;
    for (const auto& o : outcomes) {
      if (o.uniform_quantile > o.mu_uniform + c_gap * o.unit_gap / 4.0) feasible = false;
    }

    std::ostringstream record;
    record << "calibration rho=" << format_double(rho) << " trials=" << trials << " master_seed=" << master_seed
           << " size_scale=" << format_double(scale) << '\n';
    for (const auto& o : outcomes) {
      record << "pilot n=" << o.pilot.n << " eps=" << format_double(o.pilot.eps) << " m=" << o.sizes.m
             << " m0=" << o.sizes.m0 << " mu=" << format_double(o.mu_uniform)
             << " unit_gap=" << format_double(o.unit_gap) << " far_q=" << format_double(o.far_quantile)
             << " uniform_q=" << format_double(o.uniform_quantile) << " C_limit=" << format_double(o.c_gap_limit)
             << '\n';
    }
    if (feasible) {
      CalibrationResult result;
      result.constants = TesterConstants{c_gap, scale, scale, c_m0};
      result.pilots = std::move(outcomes);
      result.provenance = record.str();
      return result;
    }
    diagnostics << record.str() << "infeasible: C_gap=" << format_double(c_gap)
                << (c_gap > 0.0 ? " leaves a uniform pilot above mu + R/4\n" : " is not positive\n");
  }
  throw CalibrationError("calibration infeasible for every sample-size scale tried:\n" + diagnostics.str());
}

}  // namespace reptest
