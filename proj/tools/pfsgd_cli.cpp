// Command-line front end for PF-SGD runs and studies.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pfsgd/pfsgd.hpp"

using namespace pfsgd;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::optional<std::string> out;
};

void add_common(CLI::App& cmd, CommonOptions& o) {
  cmd.add_option("--config", o.config, "JSON study configuration")->check(CLI::ExistingFile);
  cmd.add_option("--seed", o.seed, "Base seed");
  cmd.add_option("--trials", o.trials, "Trials per particle count")->check(CLI::PositiveNumber);
  cmd.add_option("--out", o.out, "Output directory");
}

StudyConfig resolve(const CommonOptions& o, Benchmark fallback) {
  StudyConfig cfg;
  cfg.benchmark = fallback;
  if (!o.config.empty()) {
    cfg = load_study_config(o.config);
  }
  if (o.seed) {
    cfg.seed = *o.seed;
  }
  if (o.trials) {
    cfg.trials = *o.trials;
  }
  if (o.out) {
    cfg.output_dir = *o.out;
  }
  cfg.validate();
  return cfg;
}

void print_aggregates(const std::vector<AggregateRow>& agg) {
  std::printf("%8s %8s %14s %14s %7s\n", "S", "L", "mean_error", "std_error", "trials");
  for (const auto& a : agg) {
    std::printf("%8d %8d %14.6g %14.6g %7d\n", a.S, a.L, a.mean_error, a.std_error, a.trials);
  }
}

void run_single(const CommonOptions& o, Benchmark b, int particles, std::optional<int> iterations) {
  StudyConfig cfg = resolve(o, b);
  cfg.benchmark = b;
  const int L = iterations.value_or(cfg.iterations_for(particles));
  const auto outcome = [&] {
    StudyConfig one = cfg;
    one.iteration_rule = IterationRule::fixed;
    one.iterations = L;
    return run_trial(one, particles, 0);
  }();
  std::printf("benchmark=%s S=%d L=%d seed=%llu\n", to_string(b), particles, L,
              static_cast<unsigned long long>(outcome.row.seed));
  std::printf("error=%.6g cost=%.6g zero_control_cost=%.6g\n", outcome.row.error,
              outcome.row.cost, outcome.zero_control_cost);
  if (b == Benchmark::dubins) {
    std::printf("terminal_distance=%.6g\n", outcome.terminal_distance);
  }
  StudyResult result;
  result.rows.push_back(outcome.row);
  result.aggregates = aggregate(result.rows);
  export_csv(result, cfg.output_dir);
  std::printf("wrote %s\n", (std::filesystem::path(cfg.output_dir) / "raw.csv").string().c_str());
}

void run_study_command(const CommonOptions& o, IterationRule rule) {
  StudyConfig cfg = resolve(o, Benchmark::lq);
  cfg.iteration_rule = rule;
  const StudyResult result =
      rule == IterationRule::fixed ? convergence_vs_particles(cfg) : convergence_vs_iterations(cfg);
  export_csv(result, cfg.output_dir);
  print_aggregates(result.aggregates);
  std::printf("wrote raw.csv, agg.csv, agg.dat to %s\n", cfg.output_dir.c_str());
}

void run_audit(const CommonOptions& o, int particles) {
  StudyConfig cfg = resolve(o, Benchmark::lq);
  const std::uint64_t seed = trial_seed(cfg.seed, 0);
  const int L = cfg.iterations;
  std::filesystem::create_directories(cfg.output_dir);
  std::ofstream csv(std::filesystem::path(cfg.output_dir) / "moments.csv", std::ios::binary);
  csv << "benchmark,n,empirical,bound\n";
  auto report = [&](const char* name, const MomentAudit& a) {
    std::printf("%s: max ratio %.4g, max tail %.4g, kappa %.4g, C %.4g -> %s\n", name, a.max_ratio,
                a.max_tail_frequency, a.kappa, a.growth_constant,
                a.within_bound() && a.tail_ok() ? "within bound" : "VIOLATED");
    for (std::size_t n = 0; n < a.empirical.size(); ++n) {
      csv << name << "," << n << "," << format_double(a.empirical[n]) << ","
          << format_double(a.bound[n]) << "\n";
    }
  };
  const auto lq_run = run_lq(cfg, particles, L, seed, true);
  report("lq", moment_bound_audit(lq_model(cfg.lq), cfg.lq.grid(), lq_run,
                                  lq_run.diagnostics.kappa_hat()));
  const auto db_run = run_dubins(cfg, particles, L, seed, true);
  report("dubins", moment_bound_audit(dubins_model(cfg.dubins), cfg.dubins.grid(), db_run,
                                      db_run.diagnostics.kappa_hat()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Particle-filter SGD feedback control"};
  app.require_subcommand(1);

  CommonOptions common;
  int particles = 512;
  std::optional<int> iterations;

  auto* lq = app.add_subcommand("run-lq", "Single LQ twin experiment");
  add_common(*lq, common);
  lq->add_option("-S,--particles", particles, "Filter size")->check(CLI::PositiveNumber);
  lq->add_option("-L,--iterations", iterations, "SGD iterations per step")->check(CLI::PositiveNumber);

  auto* dubins = app.add_subcommand("run-dubins", "Single Dubins twin experiment");
  add_common(*dubins, common);
  dubins->add_option("-S,--particles", particles, "Filter size")->check(CLI::PositiveNumber);
  dubins->add_option("-L,--iterations", iterations, "SGD iterations per step")
      ->check(CLI::PositiveNumber);

  auto* by_particles = app.add_subcommand("study-particles", "Error vs particle count, fixed L");
  add_common(*by_particles, common);
  auto* by_iterations = app.add_subcommand("study-iterations", "Error vs particle count, L = S^2");
  add_common(*by_iterations, common);

  auto* audit = app.add_subcommand("audit-moments", "Second-moment bound audit on both benchmarks");
  add_common(*audit, common);
  audit->add_option("-S,--particles", particles, "Filter size")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (lq->parsed()) {
      run_single(common, Benchmark::lq, particles, iterations);
    } else if (dubins->parsed()) {
      run_single(common, Benchmark::dubins, particles, iterations);
    } else if (by_particles->parsed()) {
      run_study_command(common, IterationRule::fixed);
    } else if (by_iterations->parsed()) {
      run_study_command(common, IterationRule::squared);
    } else if (audit->parsed()) {
      run_audit(common, particles);
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
