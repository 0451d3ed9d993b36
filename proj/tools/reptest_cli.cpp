// reptest: command-line front end for the replicable uniformity tester,
// its experiments, constant calibration and the exact oracles.
//
// Exit codes: 0 accept / success, 1 reject / failed assertion / infeasible
// calibration, 2 usage or configuration error.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "reptest/reptest.hpp"

namespace {

using namespace reptest;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitReject = 1;
constexpr int kExitUsage = 2;

struct InstanceOptions {
  std::string instance = "uniform";
  double xi = 0.0;
  double mass = -1.0;
  std::string swap_bits;
  std::string pmf_file;

  void attach(CLI::App* cmd) {
    cmd->add_option("--instance", instance, "Preset: uniform, point-mass, paired-bias, local-swap, heavy-element")
        ->check(CLI::IsMember({"uniform", "point-mass", "paired-bias", "local-swap", "heavy-element"}));
    cmd->add_option("--xi", xi, "Bias of paired-bias / local-swap");
    cmd->add_option("--mass", mass, "Heavy element mass (default n^-1/2)");
    cmd->add_option("--swap-bits", swap_bits, "Local swap bits, one 0/1 character per pair");
    cmd->add_option("--pmf-file", pmf_file, "Distribution file (JSON or one probability per line)");
  }

  [[nodiscard]] InstanceSpec resolve(std::size_t n) const {
    if (!pmf_file.empty()) {
      Pmf p = read_pmf_file(pmf_file);
      if (n != 0 && p.n() != n) throw std::invalid_argument("--n does not match the size of --pmf-file");
      return InstanceSpec::custom(std::vector<double>(p.probs().begin(), p.probs().end()));
    }
    if (n == 0) throw std::invalid_argument("--n is required unless --pmf-file is given");
    if (instance == "uniform") return InstanceSpec::uniform(n);
    if (instance == "point-mass") return InstanceSpec::heavy_element(n, 1.0);
    if (instance == "paired-bias") return InstanceSpec::paired_bias(n, xi);
    if (instance == "heavy-element") {
      return InstanceSpec::heavy_element(n, mass > 0.0 ? mass : 1.0 / std::sqrt(static_cast<double>(n)));
    }
    std::vector<std::uint8_t> bits;
    for (char c : swap_bits) {
      if (c != '0' && c != '1') throw std::invalid_argument("--swap-bits must contain only 0 and 1");
      bits.push_back(static_cast<std::uint8_t>(c - '0'));
    }
    return InstanceSpec::local_swap(n, xi, std::move(bits));
  }

  static Pmf read_pmf_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open pmf file: " + path);
    std::ostringstream text;
    text << in.rdbuf();
    return parse_pmf(text.str());
  }
};

struct CommonOptions {
  std::size_t n = 0;
  double eps = 0.0;
  double rho = 0.0;
  std::uint64_t seed = kDefaultSeed;
  std::size_t workers = 1;
  std::string constants_file;
  std::string out;
  std::optional<double> assert_rate;

  [[nodiscard]] TesterConstants constants() const {
    return constants_file.empty() ? default_constants() : load_constants(constants_file);
  }

  [[nodiscard]] TesterParams params(std::size_t domain) const {
    TesterParams p{domain, eps, rho, constants()};
    p.validate();
    return p;
  }
};

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << body;
}

std::string instance_label(const InstanceSpec& spec) {
  return instance_name(spec) + " n=" + std::to_string(spec.n) + " xi=" + format_double(instance_xi(spec));
}

// ---------------------------------------------------------------------------

int cmd_test(const CommonOptions& common, const InstanceOptions& inst, const std::string& reference_file,
             std::optional<std::uint64_t> internal_seed, std::optional<std::uint64_t> sample_seed) {
  const InstanceSpec spec = inst.resolve(common.n);
  const PmfSampler sampler(make_instance(spec));
  SeedSplit seeds = SeedSplit::from_master(common.seed);
  if (internal_seed) seeds.internal = Rng(*internal_seed);
  if (sample_seed) seeds.sample = Rng(*sample_seed);

  Verdict verdict;
  json config;
  if (reference_file.empty()) {
    const TesterParams params = common.params(spec.n);
    verdict = run_tester(sampler, params, seeds);
    config = {{"mode", "uniformity"}, {"params", params}};
  } else {
    const Pmf q = InstanceOptions::read_pmf_file(reference_file);
    if (q.n() != spec.n) throw std::invalid_argument("reference and instance domains differ");
    const TesterParams params = identity_params(q.n(), common.eps, common.rho, common.constants());
    params.validate();
    verdict = run_identity_tester(sampler, q, params, seeds);
    config = {{"mode", "identity"}, {"params", params}, {"reference", q}};
  }
  config["instance"] = instance_label(spec);
  config["seed"] = common.seed;
  if (internal_seed) config["internal_seed"] = *internal_seed;
  if (sample_seed) config["sample_seed"] = *sample_seed;
  std::cout << json{{"verdict", verdict}, {"config", config}}.dump(2) << '\n';
  return verdict.decision == Decision::accept ? kExitOk : kExitReject;
}

int finish_rate_experiment(const CommonOptions& common, const ExperimentReport& report) {
  const std::string prefix = common.out.empty() ? report.experiment_id : common.out;
  std::ostringstream csv;
  write_trials_csv(csv, report);
  write_file(prefix + ".csv", csv.str());
  write_file(prefix + ".json", summary_json(report).dump(2) + "\n");
  std::cout << report.experiment_id << ": " << report.successes << "/" << report.trials
            << " rate=" << format_double(report.rate) << " wilson95=[" << format_double(report.wilson_lo) << ", "
            << format_double(report.wilson_hi) << "]\n";
  if (common.assert_rate && report.rate < *common.assert_rate) {
    std::cerr << "assertion failed: rate " << report.rate << " < " << *common.assert_rate << '\n';
    return kExitReject;
  }
  return kExitOk;
}

int cmd_correctness(const CommonOptions& common, const InstanceOptions& inst, std::uint64_t trials,
                    const std::string& expect) {
  const InstanceSpec spec = inst.resolve(common.n);
  Expectation expectation = Expectation::reject;
  if (expect == "accept" || (expect.empty() && std::holds_alternative<UniformInstance>(spec.kind))) {
    expectation = Expectation::accept;
  }
  const auto report = correctness_experiment(spec, common.params(spec.n), trials, common.seed, expectation,
                                             common.workers);
  return finish_rate_experiment(common, report);
}

int cmd_replicability(const CommonOptions& common, const InstanceOptions& inst, std::uint64_t pairs,
                      const std::string& prior_kind, bool shared_samples) {
  const TesterParams params = common.params(common.n);
  const InstancePrior prior =
      prior_kind == "paired-bias" ? paired_bias_prior(common.n, common.eps) : fixed_prior(inst.resolve(common.n));
  const auto report = replicability_experiment(prior, params, pairs, common.seed, common.workers, shared_samples);
  return finish_rate_experiment(common, report);
}

int cmd_sweep(const CommonOptions& common, std::string grid_text, std::uint64_t trials, bool fixed_internal) {
  const TesterParams params = common.params(common.n);
  if (grid_text.empty()) grid_text = "0:" + format_double(2.0 * common.eps) + ":21";
  const SweepCurve curve = acceptance_sweep(params, parse_grid(grid_text), trials, common.seed, fixed_internal,
                                            common.workers);
  const std::string prefix = common.out.empty() ? "sweep" : common.out;
  std::ostringstream csv;
  write_sweep_csv(csv, curve);
  write_file(prefix + ".csv", csv.str());
  json summary{{"experiment_id", "sweep"},
               {"xi_grid", curve.xi_grid},
               {"acc_estimates", curve.acc_estimates},
               {"trials_per_point", curve.trials_per_point},
               {"config", curve.config_echo}};
  write_file(prefix + ".json", summary.dump(2) + "\n");
  std::cout << "sweep: " << curve.xi_grid.size() << " points, acc(" << format_double(curve.xi_grid.front())
            << ")=" << format_double(curve.acc_estimates.front()) << " acc(" << format_double(curve.xi_grid.back())
            << ")=" << format_double(curve.acc_estimates.back()) << '\n';
  return kExitOk;
}

int cmd_barrier(const CommonOptions& common, const std::string& stat, std::vector<std::uint64_t> m_grid,
                std::uint64_t runs, double eps) {
  const std::size_t n = common.n == 0 ? 10000 : common.n;
  if (m_grid.empty()) {
    const auto root = static_cast<std::uint64_t>(std::llround(std::sqrt(static_cast<double>(n))));
    m_grid = doubling_grid(4 * root, 64 * root);
  }
  const BarrierStatistic kind = stat == "collision" ? BarrierStatistic::collision
                                : stat == "chi2"    ? BarrierStatistic::chi2
                                                    : BarrierStatistic::tv;
  const BarrierTable table = barrier_experiment(kind, n, m_grid, runs, common.seed, eps, common.workers);
  const std::string prefix = common.out.empty() ? "barrier_" + stat : common.out;
  std::ostringstream csv;
  write_barrier_csv(csv, table);
  write_file(prefix + ".csv", csv.str());
  json rows = json::array();
  for (const auto& r : table.rows) {
    rows.push_back({{"m", r.m}, {"mean", r.mean}, {"sd", r.sd}, {"gap", r.gap}, {"sd_over_gap", r.sd_over_gap}});
  }
  write_file(prefix + ".json",
             json{{"experiment_id", "barrier"}, {"rows", rows}, {"log_log_slope", table.log_log_slope},
                  {"config", table.config_echo}}
                     .dump(2) +
                 "\n");
  std::cout << "m,sd,sd_over_gap\n";
  for (const auto& r : table.rows) {
    std::cout << r.m << ',' << format_double(r.sd) << ',' << format_double(r.sd_over_gap) << '\n';
  }
  std::cout << "slope(log sd, log m)=" << format_double(table.log_log_slope) << '\n';
  return kExitOk;
}

int cmd_calibrate(const CommonOptions& common, bool default_grid, const std::vector<std::string>& pilots,
                  std::uint64_t trials) {
  std::vector<PilotInstance> grid;
  if (default_grid) grid = default_pilot_grid();
  for (const auto& text : pilots) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("--pilot must look like n:eps");
    grid.push_back({static_cast<std::size_t>(std::stoull(text.substr(0, colon))), parse_double(text.substr(colon + 1))});
  }
  if (grid.empty()) throw std::invalid_argument("calibrate needs --default-grid or at least one --pilot");
  const CalibrationResult result = calibrate(grid, common.rho, trials, common.seed, common.workers);
  const std::string path = common.out.empty() ? "constants.cfg" : common.out;
  const std::string body = format_constants(result.constants, result.provenance);
  write_file(path, body);
  std::cout << body;
  return kExitOk;
}

int cmd_reduction_check(std::size_t max_n, std::uint64_t max_denominator) {
  const auto scan = analysis::reduction_scan(max_n, max_denominator);
  std::cout << "references,pairs,max_uniform_deviation,min_far_slack,uniform_failures,far_failures\n"
            << scan.references << ',' << scan.pairs << ',' << format_double(scan.max_uniform_deviation) << ','
            << format_double(scan.min_far_slack) << ',' << scan.uniform_failures << ',' << scan.far_failures << '\n';
  return scan.passed() ? kExitOk : kExitReject;
}

int cmd_mi_grid(const std::vector<double>& lambdas, const std::vector<double>& eps, const std::vector<double>& deltas,
                double tail_tol, const std::string& out) {
  const auto rows = analysis::mi_grid(lambdas, eps, deltas, tail_tol);
  if (out.empty()) {
    analysis::write_mi_csv(std::cout, rows);
  } else {
    std::ostringstream csv;
    analysis::write_mi_csv(csv, rows);
    write_file(out, csv.str());
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Replicable uniformity testing toolkit"};
  app.require_subcommand(1);

  CommonOptions common;
  InstanceOptions inst;

  auto add_core = [&](CLI::App* cmd, bool needs_eps_rho) {
    cmd->add_option("--n", common.n, "Domain size");
    auto* eps_opt = cmd->add_option("--eps", common.eps, "TV distance tolerance, in (0, 1/2)");
    auto* rho_opt = cmd->add_option("--rho", common.rho, "Replicability parameter, in (0, 1/2)");
    if (needs_eps_rho) {
      eps_opt->required();
      rho_opt->required();
    }
    cmd->add_option("--seed", common.seed, "Master seed")->capture_default_str();
    cmd->add_option("--constants", common.constants_file,
                    std::string("Constants file (default: $") + kConstantsEnvVar + " or built-in)");
  };

  // test
  auto* test = app.add_subcommand("test", "Run the replicable uniformity (or identity) tester once");
  add_core(test, true);
  inst.attach(test);
  std::string reference_file;
  std::optional<std::uint64_t> internal_seed;
  std::optional<std::uint64_t> sample_seed;
  test->add_option("--reference", reference_file, "Reference distribution file; switches to identity testing");
  test->add_option("--internal-seed", internal_seed, "Seed for the tester's internal coins");
  test->add_option("--sample-seed", sample_seed, "Seed for the sample stream");

  // experiment
  auto* experiment = app.add_subcommand("experiment", "Monte Carlo experiments");
  experiment->require_subcommand(1);
  auto add_experiment_io = [&](CLI::App* cmd) {
    cmd->add_option("--workers", common.workers, "Worker threads (output does not depend on it)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--out", common.out, "Output prefix for .csv/.json");
  };

  std::uint64_t trials = 400;
  std::string expect;
  auto* correctness = experiment->add_subcommand("correctness", "Acceptance/rejection rate on one instance");
  add_core(correctness, true);
  add_experiment_io(correctness);
  inst.attach(correctness);
  correctness->add_option("--trials", trials, "Trials")->capture_default_str();
  correctness->add_option("--expect", expect, "Expected decision (default: accept iff uniform)")
      ->check(CLI::IsMember({"accept", "reject"}));
  correctness->add_option("--assert-rate", common.assert_rate, "Exit 1 if the success rate is below this");

  std::uint64_t pairs = 1000;
  std::string prior_kind = "paired-bias";
  bool shared_samples = false;
  auto* replicability = experiment->add_subcommand("replicability", "Two-run agreement with shared internal coins");
  add_core(replicability, true);
  add_experiment_io(replicability);
  inst.attach(replicability);
  replicability->add_option("--pairs", pairs, "Paired runs")->capture_default_str();
  replicability->add_option("--prior", prior_kind, "paired-bias (xi ~ Unif[0, 2 eps]) or instance")
      ->check(CLI::IsMember({"paired-bias", "instance"}))
      ->capture_default_str();
  replicability->add_flag("--shared-samples", shared_samples, "Reuse the sample stream too (control)");
  replicability->add_option("--assert-rate", common.assert_rate, "Exit 1 if the agreement rate is below this");

  std::string grid_text;
  std::uint64_t sweep_trials = 200;
  bool fixed_internal = false;
  auto* sweep = experiment->add_subcommand("sweep", "Acceptance probability over PairedBias(xi)");
  add_core(sweep, true);
  add_experiment_io(sweep);
  sweep->add_option("--grid", grid_text, "lo:hi:count (default 0:2eps:21)");
  sweep->add_option("--trials", sweep_trials, "Trials per grid point")->capture_default_str();
  sweep->add_flag("--fixed-internal", fixed_internal, "Freeze one internal stream across the sweep");

  std::string stat = "collision";
  std::vector<std::uint64_t> m_grid;
  std::uint64_t runs = 2000;
  double barrier_eps = 0.5;
  auto* barrier = experiment->add_subcommand("barrier", "Run-to-run spread on a single heavy element");
  add_core(barrier, false);
  add_experiment_io(barrier);
  barrier->add_option("--stat", stat, "collision, chi2 or tv")
      ->check(CLI::IsMember({"collision", "chi2", "tv"}))
      ->capture_default_str();
  barrier->add_option("--m-grid", m_grid, "Sample sizes (default 4 sqrt(n) .. 64 sqrt(n), doubling)");
  barrier->add_option("--runs", runs, "Runs per grid point")->capture_default_str();
  barrier->add_option("--gap-eps", barrier_eps, "eps used in the gap scale")->capture_default_str();

  // calibrate
  bool default_grid = false;
  std::vector<std::string> pilots;
  std::uint64_t calibration_trials = 400;
  auto* calibrate_cmd = app.add_subcommand("calibrate", "Fit C_gap and the sample-size constants");
  calibrate_cmd->add_option("--rho", common.rho, "Replicability parameter")->required();
  calibrate_cmd->add_option("--seed", common.seed, "Master seed")->capture_default_str();
  calibrate_cmd->add_flag("--default-grid", default_grid, "Pilots (500,0.3), (1000,0.25), (2000,0.2)");
  calibrate_cmd->add_option("--pilot", pilots, "Extra pilot n:eps (repeatable)");
  calibrate_cmd->add_option("--trials", calibration_trials, "Trials per pilot instance")->capture_default_str();
  calibrate_cmd->add_option("--workers", common.workers, "Worker threads")->check(CLI::PositiveNumber);
  calibrate_cmd->add_option("--out", common.out, "Constants file to write (default constants.cfg)");

  // oracle
  auto* oracle = app.add_subcommand("oracle", "Exact small-instance oracles");
  oracle->require_subcommand(1);
  std::size_t max_n = 4;
  std::uint64_t max_denominator = 8;
  auto* reduction_check = oracle->add_subcommand("reduction-check", "Exhaustive check of the identity reduction");
  reduction_check->add_option("--max-n", max_n, "Largest domain")->capture_default_str();
  reduction_check->add_option("--max-denominator", max_denominator, "Largest denominator")->capture_default_str();

  std::vector<double> lambdas{0.05, 0.1, 0.25, 0.5, 1.0};
  std::vector<double> mi_eps{0.1, 0.2};
  std::vector<double> deltas{0.0, 0.005, 0.01, 0.02};
  double tail_tol = 1e-14;
  std::string mi_out;
  auto* mi = oracle->add_subcommand("mi-grid", "Mutual information of one Poissonized pair on a grid");
  mi->add_option("--lambdas", lambdas, "Rates m/n")->capture_default_str();
  mi->add_option("--eps", mi_eps, "Base biases eps0")->capture_default_str();
  mi->add_option("--deltas", deltas, "eps1 - eps0")->capture_default_str();
  mi->add_option("--tail-tol", tail_tol, "Truncation tolerance per conditional")->capture_default_str();
  mi->add_option("--out", mi_out, "CSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (test->parsed()) return cmd_test(common, inst, reference_file, internal_seed, sample_seed);
    if (correctness->parsed()) return cmd_correctness(common, inst, trials, expect);
    if (replicability->parsed()) return cmd_replicability(common, inst, pairs, prior_kind, shared_samples);
    if (sweep->parsed()) return cmd_sweep(common, grid_text, sweep_trials, fixed_internal);
    if (barrier->parsed()) return cmd_barrier(common, stat, m_grid, runs, barrier_eps);
    if (calibrate_cmd->parsed()) return cmd_calibrate(common, default_grid, pilots, calibration_trials);
    if (reduction_check->parsed()) return cmd_reduction_check(max_n, max_denominator);
    if (mi->parsed()) return cmd_mi_grid(lambdas, mi_eps, deltas, tail_tol, mi_out);
  } catch (const CalibrationError& e) {
    std::cerr << "calibration failed: " << e.what() << '\n';
    return kExitReject;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
