#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pfsgd/driver.hpp"
#include "pfsgd/dubins.hpp"
#include "pfsgd/errors.hpp"
#include "pfsgd/lq.hpp"
#include "pfsgd/rng.hpp"
#include "pfsgd/sgd.hpp"

namespace pfsgd {

enum class Benchmark { lq, dubins };
enum class IterationRule { fixed, squared };

inline const char* to_string(Benchmark b) { return b == Benchmark::lq ? "lq" : "dubins"; }

struct StudyConfig {
  Benchmark benchmark = Benchmark::lq;
  std::vector<int> particle_counts{2, 32, 512, 2048};
  IterationRule iteration_rule = IterationRule::fixed;
  /// L for IterationRule::fixed.
  int iterations = 1000;
  int trials = 20;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  bool retain_diagnostics = false;
  /// Write measured wall times into raw.csv; off keeps raw.csv reproducible.
  bool record_wall_time = false;
  /// Worker threads; 0 means one per hardware thread.
  int threads = 0;
  ResampleScheme resample = ResampleScheme::multinomial;
  bool cold_start = false;
  /// Step schedule; unset selects the benchmark default.
  std::optional<StepSchedule> step;
  LqParams lq;
  DubinsParams dubins;

  int iterations_for(int particles) const {
    return iteration_rule == IterationRule::fixed ? iterations : particles * particles;
  }

  StepSchedule effective_step() const {
    if (step) {
      return *step;
    }
    return benchmark == Benchmark::lq ? StepSchedule{StepSchedule::Kind::decaying, 0.1, 10.0}
                                      : StepSchedule{StepSchedule::Kind::decaying, 0.05, 100.0};
  }

  void validate() const {
    if (particle_counts.empty()) {
      throw ConfigError("StudyConfig: particle_counts is empty");
    }
    for (std::size_t i = 0; i < particle_counts.size(); ++i) {
      if (particle_counts[i] < 1 || (i > 0 && particle_counts[i] <= particle_counts[i - 1])) {
        throw ConfigError("StudyConfig: particle_counts must be positive and strictly ascending");
      }
    }
    if (trials < 1) {
      throw ConfigError("StudyConfig: trials must be >= 1");
    }
    if (iteration_rule == IterationRule::fixed && iterations < 1) {
      throw ConfigError("StudyConfig: iterations must be >= 1");
    }
    if (threads < 0) {
      throw ConfigError("StudyConfig: threads must be >= 0");
    }
    effective_step().validate();
    lq.validate();
    dubins.validate();
  }
};

namespace detail {

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
    }
  }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known,
                           const char* where) {
  if (!j.is_object()) {
    throw ConfigError(std::string("config: '") + where + "' must be an object");
  }
  for (const auto& item : j.items()) {
    const bool ok = std::any_of(known.begin(), known.end(),
                                [&](const char* k) { return item.key() == k; });
    if (!ok) {
      throw ConfigError(std::string("config: unknown key '") + item.key() + "' in " + where);
    }
  }
}

}  // namespace detail

inline StudyConfig study_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j,
                         {"benchmark", "particle_counts", "iteration_rule", "iterations", "trials",
                          "seed", "output_dir", "retain_diagnostics", "record_wall_time",
                          "threads", "resample", "cold_start", "step", "lq", "dubins"},
                         "top level");
  StudyConfig c;
  if (j.contains("benchmark")) {
    const auto b = j.at("benchmark").get<std::string>();
    if (b == "lq") {
      c.benchmark = Benchmark::lq;
    } else if (b == "dubins") {
      c.benchmark = Benchmark::dubins;
    } else {
      throw ConfigError("config: benchmark must be 'lq' or 'dubins'");
    }
  }
  detail::read_field(j, "particle_counts", c.particle_counts);
  if (j.contains("iteration_rule")) {
    const auto r = j.at("iteration_rule").get<std::string>();
    if (r == "fixed") {
      c.iteration_rule = IterationRule::fixed;
    } else if (r == "squared") {
      c.iteration_rule = IterationRule::squared;
    } else {
      throw ConfigError("config: iteration_rule must be 'fixed' or 'squared'");
    }
  }
  detail::read_field(j, "iterations", c.iterations);
  detail::read_field(j, "trials", c.trials);
  detail::read_field(j, "seed", c.seed);
  detail::read_field(j, "output_dir", c.output_dir);
  detail::read_field(j, "retain_diagnostics", c.retain_diagnostics);
  detail::read_field(j, "record_wall_time", c.record_wall_time);
  detail::read_field(j, "threads", c.threads);
  detail::read_field(j, "cold_start", c.cold_start);
  if (j.contains("resample")) {
    const auto r = j.at("resample").get<std::string>();
    if (r == "multinomial") {
      c.resample = ResampleScheme::multinomial;
    } else if (r == "systematic") {
      c.resample = ResampleScheme::systematic;
    } else {
      throw ConfigError("config: resample must be 'multinomial' or 'systematic'");
    }
  }
  if (j.contains("step")) {
    const auto& s = j.at("step");
    detail::reject_unknown(s, {"kind", "r0", "l0"}, "step");
    StepSchedule step;
    if (s.contains("kind")) {
      const auto k = s.at("kind").get<std::string>();
      if (k == "decaying") {
        step.kind = StepSchedule::Kind::decaying;
      } else if (k == "constant") {
        step.kind = StepSchedule::Kind::constant;
      } else {
        throw ConfigError("config: step.kind must be 'decaying' or 'constant'");
      }
    }
    detail::read_field(s, "r0", step.r0);
    detail::read_field(s, "l0", step.l0);
    c.step = step;
  }
  if (j.contains("lq")) {
    const auto& s = j.at("lq");
    detail::reject_unknown(s, {"sigma", "T", "steps", "obs_variance"}, "lq");
    detail::read_field(s, "sigma", c.lq.sigma);
    detail::read_field(s, "T", c.lq.T);
    detail::read_field(s, "steps", c.lq.steps);
    detail::read_field(s, "obs_variance", c.lq.obs_variance);
  }
  if (j.contains("dubins")) {
    const auto& s = j.at("dubins");
    detail::reject_unknown(s, {"sigma", "obs_noise_var", "R", "Q", "K", "T", "steps", "heading0"},
                           "dubins");
    detail::read_field(s, "sigma", c.dubins.sigma);
    detail::read_field(s, "obs_noise_var", c.dubins.obs_noise_var);
    detail::read_field(s, "R", c.dubins.R);
    detail::read_field(s, "Q", c.dubins.Q);
    detail::read_field(s, "K", c.dubins.K);
    detail::read_field(s, "T", c.dubins.T);
    detail::read_field(s, "steps", c.dubins.steps);
    detail::read_field(s, "heading0", c.dubins.heading0);
  }
  c.validate();
  return c;
}

inline StudyConfig load_study_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file " + path.string());
  }
  try {
    return study_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
}

struct StudyRow {
  std::string benchmark;
  int S = 0;
  int L = 0;
  int trial = 0;
  std::uint64_t seed = 0;
  double error = 0.0;
  double cost = 0.0;
  double wall_ms = 0.0;
};

struct AggregateRow {
  int S = 0;
  int L = 0;
  double mean_error = 0.0;
  double std_error = 0.0;
  int trials = 0;
};

struct StudyResult {
  std::vector<StudyRow> rows;
  std::vector<AggregateRow> aggregates;
};

/// Mean and standard error of the trial errors per (S, L), ordered by S then L.
inline std::vector<AggregateRow> aggregate(const std::vector<StudyRow>& rows) {
  std::map<std::pair<int, int>, std::vector<const StudyRow*>> groups;
  for (const auto& r : rows) {
    groups[{r.S, r.L}].push_back(&r);
  }
  std::vector<AggregateRow> out;
  for (auto& [key, members] : groups) {
    std::sort(members.begin(), members.end(),
              [](const StudyRow* a, const StudyRow* b) { return a->trial < b->trial; });
    AggregateRow a;
    a.S = key.first;
    a.L = key.second;
    a.trials = static_cast<int>(members.size());
    double sum = 0.0;
    for (const auto* m : members) {
      sum += m->error;
    }
    a.mean_error = sum / a.trials;
    if (a.trials > 1) {
      double ss = 0.0;
      for (const auto* m : members) {
        ss += (m->error - a.mean_error) * (m->error - a.mean_error);
      }
      a.std_error = std::sqrt(ss / (a.trials - 1) / a.trials);
    }
    out.push_back(a);
  }
  return out;
}

/// Outcome of one PF-SGD trial plus the comparison quantities the acceptance
/// checks need.
struct TrialOutcome {
  StudyRow row;
  /// Distance of the final truth position to the Dubins target (0 for LQ).
  double terminal_distance = 0.0;
  /// Realized cost of the zero control on the same truth noise.
  double zero_control_cost = 0.0;
};

/// Per-trial seed; truth noise depends on the trial only, so all particle
/// counts face the same hidden paths.
inline std::uint64_t trial_seed(std::uint64_t base, int trial) {
  return derive_seed(base, {stream_tag::trial, static_cast<std::uint64_t>(trial)});
}

inline RandomStream trial_truth_stream(std::uint64_t seed) {
  return RandomStream(seed).substream({stream_tag::truth});
}

inline RandomStream trial_algo_stream(std::uint64_t seed, int particles) {
  return RandomStream(seed).substream({stream_tag::sgd, static_cast<std::uint64_t>(particles)});
}

/// sqrt(dt sum_{n<N} |u_n - u*_n|^2).
inline double lq_control_error(const std::vector<Vec4>& applied, const ControlSchedule<4>& ustar,
                               const TimeGrid& grid) {
  if (static_cast<int>(applied.size()) != grid.steps()) {
    throw DimensionError("lq_control_error: need one applied control per step");
  }
  double acc = 0.0;
  for (int n = 0; n < grid.steps(); ++n) {
    acc += (applied[static_cast<std::size_t>(n)] - ustar.at(n)).squaredNorm();
  }
  return std::sqrt(acc * grid.dt());
}

/// (1/T) sum_{i=1}^{N} |S_i - S*_i|^2 dt over the truth positions.
inline double dubins_tracking_error(const StatePath<3, 3>& truth, const DubinsParams& p,
                                    const TimeGrid& grid) {
  if (static_cast<int>(truth.states.size()) != grid.steps() + 1) {
    throw DimensionError("dubins_tracking_error: truth must span the grid");
  }
  double acc = 0.0;
  for (int i = 1; i <= grid.steps(); ++i) {
    const Eigen::Vector2d e =
        truth.states[static_cast<std::size_t>(i)].head<2>() - p.reference_at(grid.node(i));
    acc += e.squaredNorm() * grid.dt();
  }
  return acc / grid.horizon();
}

inline SgdConfig<4> lq_sgd_config(const StudyConfig& cfg, int iterations) {
  SgdConfig<4> s;
  s.iterations = iterations;
  s.step = cfg.effective_step();
  s.seed = cfg.seed;
  s.cold_start = cfg.cold_start;
  return s;
}

inline SgdConfig<1> dubins_sgd_config(const StudyConfig& cfg, int iterations) {
  SgdConfig<1> s;
  s.iterations = iterations;
  s.step = cfg.effective_step();
  s.seed = cfg.seed;
  s.cold_start = cfg.cold_start;
  return s;
}

inline RunResult<LqModel> run_lq(const StudyConfig& cfg, int particles, int iterations,
                                 std::uint64_t seed, bool retain_clouds = false) {
  const LqModel model = lq_model(cfg.lq);
  const Vec4 x0 = cfg.lq.x0;
  const InitialSampler<LqModel> sampler = [x0](RandomStream&) { return x0; };
  RunOptions opts;
  opts.resample = cfg.resample;
  opts.retain_clouds = retain_clouds;
  return run_pf_sgd(model, cfg.lq.grid(), particles, lq_sgd_config(cfg, iterations), sampler,
                    trial_truth_stream(seed), trial_algo_stream(seed, particles), opts);
}

inline RunResult<DubinsModel> run_dubins(const StudyConfig& cfg, int particles, int iterations,
                                         std::uint64_t seed, bool retain_clouds = false) {
  const DubinsModel model = dubins_model(cfg.dubins);
  const Eigen::Vector3d x0 = cfg.dubins.initial_state();
  const InitialSampler<DubinsModel> sampler = [x0](RandomStream&) { return x0; };
  RunOptions opts;
  opts.resample = cfg.resample;
  opts.retain_clouds = retain_clouds;
  return run_pf_sgd(model, cfg.dubins.grid(), particles, dubins_sgd_config(cfg, iterations),
                    sampler, trial_truth_stream(seed), trial_algo_stream(seed, particles), opts);
}

inline TrialOutcome run_trial(const StudyConfig& cfg, int particles, int trial) {
  TrialOutcome out;
  StudyRow& row = out.row;
  row.benchmark = to_string(cfg.benchmark);
  row.S = particles;
  row.L = cfg.iterations_for(particles);
  row.trial = trial;
  row.seed = trial_seed(cfg.seed, trial);
  const auto start = std::chrono::steady_clock::now();
  if (cfg.benchmark == Benchmark::lq) {
    const TimeGrid grid = cfg.lq.grid();
    const auto run = run_lq(cfg, particles, row.L, row.seed);
    row.error = lq_control_error(run.applied_controls, analytic_control(cfg.lq, grid), grid);
    row.cost = run.realized_cost;
    const Vec4 x0 = cfg.lq.x0;
    out.zero_control_cost =
        run_open_loop<LqModel>(lq_model(cfg.lq), grid, std::vector<Vec4>(grid.steps(), Vec4::Zero()),
                               [x0](RandomStream&) { return x0; }, trial_truth_stream(row.seed))
            .realized_cost;
  } else {
    const TimeGrid grid = cfg.dubins.grid();
    const auto run = run_dubins(cfg, particles, row.L, row.seed);
    row.error = dubins_tracking_error(run.truth_path, cfg.dubins, grid);
    row.cost = run.realized_cost;
    out.terminal_distance =
        (run.truth_path.states.back().head<2>() - cfg.dubins.target_terminal).norm();
    const Eigen::Vector3d x0 = cfg.dubins.initial_state();
    out.zero_control_cost =
        run_open_loop<DubinsModel>(dubins_model(cfg.dubins), grid,
                                   std::vector<DubinsModel::Control>(
                                       grid.steps(), DubinsModel::Control::Zero()),
                                   [x0](RandomStream&) { return x0; }, trial_truth_stream(row.seed))
            .realized_cost;
  }
  const auto stop = std::chrono::steady_clock::now();
  row.wall_ms =
      cfg.record_wall_time ? std::chrono::duration<double, std::milli>(stop - start).count() : 0.0;
  return out;
}

/// Runs fn(k) for k = 0..count-1 on `threads` workers. Results must be written
/// to per-index slots; the first exception is rethrown after the pool drains.
template <class Fn>
void parallel_for(int count, int threads, Fn&& fn) {
  if (threads <= 0) {
    threads = static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));
  }
  threads = std::min(threads, std::max(count, 1));
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (int k = next++; k < count; k = next++) {
      try {
        fn(k);
      } catch (...) {
        const std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) {
          failure = std::current_exception();
        }
        next = count;
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back(worker);
    }
  }
  if (failure) {
    std::rethrow_exception(failure);
  }
}

/// All (S, trial) pairs of a study, ordered by S then trial.
inline std::vector<TrialOutcome> run_trials(const StudyConfig& cfg) {
  cfg.validate();
  const int per_s = cfg.trials;
  const int total = static_cast<int>(cfg.particle_counts.size()) * per_s;
  std::vector<TrialOutcome> outcomes(static_cast<std::size_t>(total));
  parallel_for(total, cfg.threads, [&](int k) {
    const int s = cfg.particle_counts[static_cast<std::size_t>(k / per_s)];
    const int trial = k % per_s;
    try {
      outcomes[static_cast<std::size_t>(k)] = run_trial(cfg, s, trial);
    } catch (const std::exception& e) {
      throw Error("study trial S=" + std::to_string(s) + " trial=" + std::to_string(trial) +
                  ": " + e.what());
    }
  });
  return outcomes;
}

inline StudyResult run_study(const StudyConfig& cfg) {
  StudyResult result;
  for (auto& o : run_trials(cfg)) {
    result.rows.push_back(std::move(o.row));
  }
  result.aggregates = aggregate(result.rows);
  return result;
}

/// Error against particle count at a fixed iteration budget.
inline StudyResult convergence_vs_particles(const StudyConfig& cfg) {
  if (cfg.iteration_rule != IterationRule::fixed) {
    throw ConfigError("convergence_vs_particles: iteration_rule must be 'fixed'");
  }
  return run_study(cfg);
}

/// Error against particle count with L = S^2.
inline StudyResult convergence_vs_iterations(const StudyConfig& cfg) {
  if (cfg.iteration_rule != IterationRule::squared) {
    throw ConfigError("convergence_vs_iterations: iteration_rule must be 'squared'");
  }
  return run_study(cfg);
}

// ---------------------------------------------------------------------------
// CSV export

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline const char* raw_csv_header() { return "benchmark,S,L,trial,seed,error,cost,wall_ms"; }
inline const char* agg_csv_header() { return "S,L,mean_error,std_error,trials"; }

inline std::string raw_csv(const std::vector<StudyRow>& rows) {
  std::string out = std::string(raw_csv_header()) + "\n";
  for (const auto& r : rows) {
    out += r.benchmark + "," + std::to_string(r.S) + "," + std::to_string(r.L) + "," +
           std::to_string(r.trial) + "," + std::to_string(r.seed) + "," + format_double(r.error) +
           "," + format_double(r.cost) + "," + format_double(r.wall_ms) + "\n";
  }
  return out;
}

inline std::string agg_csv(const std::vector<AggregateRow>& rows) {
  std::string out = std::string(agg_csv_header()) + "\n";
  for (const auto& a : rows) {
    out += std::to_string(a.S) + "," + std::to_string(a.L) + "," + format_double(a.mean_error) +
           "," + format_double(a.std_error) + "," + std::to_string(a.trials) + "\n";
  }
  return out;
}

/// Two-column "S mean_error" data for gnuplot.
inline std::string agg_dat(const std::vector<AggregateRow>& rows) {
  std::string out = "# S mean_error\n";
  for (const auto& a : rows) {
    out += std::to_string(a.S) + " " + format_double(a.mean_error) + "\n";
  }
  return out;
}

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot open " + path.string() + " for writing");
  }
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) {
    throw Error("write to " + path.string() + " failed");
  }
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) {
    out.push_back(field);
  }
  if (!line.empty() && line.back() == sep) {
    out.emplace_back();
  }
  return out;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path,
                                           const char* header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cannot open " + path.string());
  }
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    lines.push_back(line);
  }
  if (lines.empty() || lines.front() != header) {
    throw Error(path.string() + ": unexpected header");
  }
  lines.erase(lines.begin());
  return lines;
}

}  // namespace detail

/// Writes raw.csv, agg.csv and agg.dat into `dir` (created if missing).
inline void export_csv(const StudyResult& result, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
  }
  detail::write_file(dir / "raw.csv", raw_csv(result.rows));
  detail::write_file(dir / "agg.csv", agg_csv(result.aggregates));
  detail::write_file(dir / "agg.dat", agg_dat(result.aggregates));
}

inline std::vector<StudyRow> parse_raw_csv(const std::filesystem::path& path) {
  std::vector<StudyRow> rows;
  for (const auto& line : detail::read_lines(path, raw_csv_header())) {
    const auto f = detail::split(line, ',');
    if (f.size() != 8) {
      throw Error(path.string() + ": malformed row '" + line + "'");
    }
    StudyRow r;
    r.benchmark = f[0];
    r.S = std::stoi(f[1]);
    r.L = std::stoi(f[2]);
    r.trial = std::stoi(f[3]);
    r.seed = std::stoull(f[4]);
    r.error = std::stod(f[5]);
    r.cost = std::stod(f[6]);
    r.wall_ms = std::stod(f[7]);
    rows.push_back(r);
  }
  return rows;
}

inline std::vector<AggregateRow> parse_agg_csv(const std::filesystem::path& path) {
  std::vector<AggregateRow> rows;
  for (const auto& line : detail::read_lines(path, agg_csv_header())) {
    const auto f = detail::split(line, ',');
    if (f.size() != 5) {
      throw Error(path.string() + ": malformed row '" + line + "'");
    }
    rows.push_back({std::stoi(f[0]), std::stoi(f[1]), std::stod(f[2]), std::stod(f[3]),
                    std::stoi(f[4])});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Moment audit

struct MomentAudit {
  /// Empirical E|X_n|^2 over the posterior cloud at t_n.
  std::vector<double> empirical;
  /// Recursion C_{n+1} = kappa^-2 (1 + dt) C_n + C dt started from C_0 = E|X_0|^2.
  std::vector<double> bound;
  double kappa = 1.0;
  double growth_constant = 0.0;
  double max_ratio = 0.0;
  /// Largest fraction of particles with |X_n| >= M_n, M_n chosen so C_n / M_n^2 = chebyshev_level.
  double max_tail_frequency = 0.0;
  double chebyshev_level = 0.01;

  bool within_bound() const { return max_ratio <= 1.0; }
  bool tail_ok(double slack = 3.0) const {
    return max_tail_frequency <= slack * chebyshev_level;
  }
};

/// Audits the retained clouds of `run` against the second-moment recursion.
/// The growth constant is measured on the clouds: C = C_b^2 (1 + dt) + C_sigma^2
/// with C_b = max |b| and C_sigma = max |sigma|_F over particles and steps.
template <class Model>
MomentAudit moment_bound_audit(const Model& model, const TimeGrid& grid,
                               const RunResult<Model>& run, double kappa_hat,
                               double chebyshev_level = 0.01) {
  if (static_cast<int>(run.clouds.size()) != grid.steps() + 1) {
    throw DimensionError("moment_bound_audit: run did not retain cloud snapshots");
  }
  if (!(kappa_hat > 0.0) || kappa_hat > 1.0) {
    throw ConfigError("moment_bound_audit: kappa must lie in (0, 1]");
  }
  const double dt = grid.dt();
  double cb = 0.0;
  double cs = 0.0;
  for (int n = 0; n < grid.steps(); ++n) {
    const auto& cloud = run.clouds[static_cast<std::size_t>(n)];
    const auto& u = run.applied_controls[static_cast<std::size_t>(n)];
    for (const auto& x : cloud.particles) {
      cb = std::max(cb, model.drift(grid.node(n), x, u).norm());
      cs = std::max(cs, model.diffusion(grid.node(n), x, u).norm());
    }
  }
  MomentAudit audit;
  audit.kappa = kappa_hat;
  audit.chebyshev_level = chebyshev_level;
  audit.growth_constant = cb * cb * (1.0 + dt) + cs * cs;
  const double factor = (1.0 + dt) / (kappa_hat * kappa_hat);
  for (int n = 0; n <= grid.steps(); ++n) {
    const auto& cloud = run.clouds[static_cast<std::size_t>(n)];
    const double m = cloud.second_moment();
    const double c = n == 0 ? m : factor * audit.bound.back() + audit.growth_constant * dt;
    audit.empirical.push_back(m);
    audit.bound.push_back(c);
    const double ratio = c > 0.0 ? m / c : (m > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    audit.max_ratio = std::max(audit.max_ratio, ratio);
    if (c > 0.0) {
      const double radius = std::sqrt(c / chebyshev_level);
      double escaped = 0.0;
      for (std::size_t s = 0; s < cloud.particles.size(); ++s) {
        if (cloud.particles[s].norm() >= radius) {
          escaped += cloud.weights[s];
        }
      }
      audit.max_tail_frequency = std::max(audit.max_tail_frequency, escaped);
    }
  }
  return audit;
}

}  // namespace pfsgd
