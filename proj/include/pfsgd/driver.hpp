#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pfsgd/errors.hpp"
#include "pfsgd/model.hpp"
#include "pfsgd/particle_filter.hpp"
#include "pfsgd/rng.hpp"
#include "pfsgd/sgd.hpp"
#include "pfsgd/time_grid.hpp"

namespace pfsgd {

struct RunOptions {
  ResampleScheme resample = ResampleScheme::multinomial;
  /// Keep the posterior cloud of every step in RunResult::clouds.
  bool retain_clouds = false;
};

/// Per-step filter statistics, recorded after each Bayes update.
struct RunDiagnostics {
  std::vector<double> ess;
  /// min_s S w_s and max_s S w_s, the spread of normalized likelihoods.
  std::vector<double> min_weight_ratio;
  std::vector<double> max_weight_ratio;
  std::vector<double> decide_ms;

  /// Largest kappa with kappa <= S w_s <= 1/kappa over all recorded steps.
  double kappa_hat() const {
    double k = 1.0;
    for (std::size_t n = 0; n < min_weight_ratio.size(); ++n) {
      k = std::min({k, min_weight_ratio[n], 1.0 / max_weight_ratio[n]});
    }
    return k;
  }
};

template <class Model>
struct RunResult {
  std::vector<typename Model::Control> applied_controls;
  /// Posterior clouds at t_0..t_N, filled only with RunOptions::retain_clouds.
  std::vector<ParticleCloud<Model::dim_x>> clouds;
  StatePath<Model::dim_x, Model::dim_w> truth_path;
  ObservationRecord<Model::dim_obs> observations;
  double realized_cost = 0.0;
  RunDiagnostics diagnostics;
};

template <class Model>
using InitialSampler = std::function<typename Model::State(RandomStream&)>;

/// One PF-SGD agent: decides the control at the current filter time and
/// assimilates the observation that follows it. Every random draw comes from
/// algo.substream({n, tag}), so decisions depend only on the observations
/// seen so far.
template <class Model>
class PfSgdController {
 public:
  using Control = typename Model::Control;
  using Observation = typename Model::Observation;
  using Cloud = ParticleCloud<Model::dim_x>;

  PfSgdController(Model model, TimeGrid grid, Cloud initial, SgdConfig<Model::dim_u> cfg,
                  RandomStream algo, RunOptions options = {})
      : model_(std::move(model)),
        grid_(grid),
        cloud_(std::move(initial)),
        cfg_(std::move(cfg)),
        algo_(algo),
        options_(options) {
    model_.validate();
    cfg_.validate();
    cloud_.validate();
  }

  int step() const { return cloud_.time_index; }
  const Cloud& cloud() const { return cloud_; }
  const RunDiagnostics& diagnostics() const { return diag_; }
  const std::optional<ControlSchedule<Model::dim_u>>& schedule() const { return schedule_; }

  /// Runs the SGD optimization at t_n and returns u_{t_n}.
  Control decide() {
    const int n = step();
    if (n >= grid_.steps()) {
      throw DimensionError("PfSgdController::decide: no decision left at t_N");
    }
    ControlSchedule<Model::dim_u> init =
        (schedule_ && !cfg_.cold_start && schedule_->start_index <= n)
            ? schedule_->tail(n)
            : ControlSchedule<Model::dim_u>::zeros(n, grid_.steps());
    RandomStream rng = algo_.substream({static_cast<std::uint64_t>(n), stream_tag::sgd});
    const auto start = std::chrono::steady_clock::now();
    schedule_ = optimize_at_time(model_, grid_, cloud_, init, cfg_, rng);
    const auto stop = std::chrono::steady_clock::now();
    diag_.decide_ms.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
    return schedule_->at(n);
  }

  /// Predict under u, weight against dm (the increment over [t_n, t_{n+1}]) and resample.
  void assimilate(const Control& u, const Observation& dm) {
    const int n = step();
    const auto key = static_cast<std::uint64_t>(n);
    const Cloud prior = predict(cloud_, model_, grid_, u, algo_.substream({key, stream_tag::predict}));
    const Cloud posterior = update_weights(prior, dm, model_, grid_.dt());
    const double size = static_cast<double>(posterior.size());
    const auto [lo, hi] = std::minmax_element(posterior.weights.begin(), posterior.weights.end());
    diag_.ess.push_back(effective_sample_size(posterior));
    diag_.min_weight_ratio.push_back(*lo * size);
    diag_.max_weight_ratio.push_back(*hi * size);
    RandomStream rs = algo_.substream({key, stream_tag::resample});
    cloud_ = resample(posterior, rs, options_.resample);
  }

 private:
  Model model_;
  TimeGrid grid_;
  Cloud cloud_;
  SgdConfig<Model::dim_u> cfg_;
  RandomStream algo_;
  RunOptions options_;
  std::optional<ControlSchedule<Model::dim_u>> schedule_;
  RunDiagnostics diag_;
};

namespace detail {

/// Hidden system of a twin experiment; its randomness comes from truth_rng only.
template <class Model>
class TruthSimulator {
 public:
  TruthSimulator(const Model& model, const TimeGrid& grid, const InitialSampler<Model>& x0,
                 const RandomStream& truth_rng)
      : model_(model),
        grid_(grid),
        noise_(truth_rng.substream({stream_tag::truth})),
        obs_(truth_rng.substream({stream_tag::observation})) {
    RandomStream init = truth_rng.substream({stream_tag::init});
    path_.start_index = 0;
    path_.states.push_back(x0(init));
  }

  /// Advances one step under u, returns the observation increment.
  typename Model::Observation advance(const typename Model::Control& u) {
    const int n = static_cast<int>(path_.noises.size());
    const double dt = grid_.dt();
    const typename Model::Noise dw = std::sqrt(dt) * noise_.template normal_vector<Model::dim_w>();
    const typename Model::State next =
        euler_step(model_, grid_.node(n), path_.states.back(), u, dt, dw);
    const double f = model_.running_cost(grid_.node(n + 1), next, u);
    detail::require_finite(std::isfinite(f), "running cost", grid_.node(n + 1));
    cost_ += f * dt;
    path_.noises.push_back(dw);
    path_.states.push_back(next);
    const typename Model::Observation dm = observe(model_, next, dt, obs_);
    record_.increments.push_back(dm);
    return dm;
  }

  double finish() {
    const double h = model_.terminal_cost(path_.states.back());
    detail::require_finite(std::isfinite(h), "terminal cost", grid_.horizon());
    return cost_ + h;
  }

  StatePath<Model::dim_x, Model::dim_w>& path() { return path_; }
  ObservationRecord<Model::dim_obs>& record() { return record_; }

 private:
  const Model& model_;
  TimeGrid grid_;
  RandomStream noise_;
  RandomStream obs_;
  StatePath<Model::dim_x, Model::dim_w> path_;
  ObservationRecord<Model::dim_obs> record_;
  double cost_ = 0.0;
};

template <class Model>
ParticleCloud<Model::dim_x> initial_cloud(const InitialSampler<Model>& x0, int size,
                                          const RandomStream& algo_rng) {
  RandomStream init = algo_rng.substream({stream_tag::init});
  return ParticleCloud<Model::dim_x>::sampled(x0, size, init, 0);
}

}  // namespace detail

/// Twin experiment of the full PF-SGD loop over n = 0..N-1.
template <class Model>
RunResult<Model> run_pf_sgd(const Model& model, const TimeGrid& grid, int filter_size,
                            const SgdConfig<Model::dim_u>& cfg, const InitialSampler<Model>& x0,
                            const RandomStream& truth_rng, const RandomStream& algo_rng,
                            const RunOptions& options = {}) {
  if (filter_size < 1) {
    throw ConfigError("run_pf_sgd: filter size S must be >= 1");
  }
  PfSgdController<Model> ctl(model, grid, detail::initial_cloud<Model>(x0, filter_size, algo_rng),
                             cfg, algo_rng, options);
  detail::TruthSimulator<Model> truth(model, grid, x0, truth_rng);
  RunResult<Model> result;
  result.applied_controls.reserve(static_cast<std::size_t>(grid.steps()));
  if (options.retain_clouds) {
    result.clouds.push_back(ctl.cloud());
  }
  for (int n = 0; n < grid.steps(); ++n) {
    try {
      const auto u = ctl.decide();
      result.applied_controls.push_back(u);
      const auto dm = truth.advance(u);
      ctl.assimilate(u, dm);
    } catch (const DegenerateUpdateError& e) {
      throw DegenerateUpdateError("run_pf_sgd: step " + std::to_string(n) + ": " + e.what());
    } catch (const NumericError& e) {
      throw NumericError("run_pf_sgd: step " + std::to_string(n) + ": " + e.what());
    }
    if (options.retain_clouds) {
      result.clouds.push_back(ctl.cloud());
    }
  }
  result.realized_cost = truth.finish();
  result.truth_path = std::move(truth.path());
  result.observations = std::move(truth.record());
  result.diagnostics = ctl.diagnostics();
  return result;
}

/// Decisions of a PF-SGD agent fed with recorded observation increments.
/// With k increments it returns the decisions at t_0..t_k (at most N).
template <class Model>
std::vector<typename Model::Control> replay_pf_sgd(
    const Model& model, const TimeGrid& grid, int filter_size, const SgdConfig<Model::dim_u>& cfg,
    const InitialSampler<Model>& x0, const ObservationRecord<Model::dim_obs>& observations,
    const RandomStream& algo_rng, const RunOptions& options = {}) {
  if (filter_size < 1) {
    throw ConfigError("replay_pf_sgd: filter size S must be >= 1");
  }
  if (static_cast<int>(observations.increments.size()) > grid.steps()) {
    throw DimensionError("replay_pf_sgd: more observations than grid steps");
  }
  PfSgdController<Model> ctl(model, grid, detail::initial_cloud<Model>(x0, filter_size, algo_rng),
                             cfg, algo_rng, options);
  std::vector<typename Model::Control> out;
  const int k = static_cast<int>(observations.increments.size());
  for (int n = 0; n < grid.steps(); ++n) {
    out.push_back(ctl.decide());
    if (n >= k) {
      break;
    }
    ctl.assimilate(out.back(), observations.increments[static_cast<std::size_t>(n)]);
  }
  return out;
}

/// The same hidden system driven by a fixed control sequence (u_0..u_{N-1});
/// with the same truth_rng it shares every noise draw with run_pf_sgd.
template <class Model>
RunResult<Model> run_open_loop(const Model& model, const TimeGrid& grid,
                               const std::vector<typename Model::Control>& controls,
                               const InitialSampler<Model>& x0, const RandomStream& truth_rng) {
  if (static_cast<int>(controls.size()) != grid.steps()) {
    throw DimensionError("run_open_loop: need one control per step");
  }
  detail::TruthSimulator<Model> truth(model, grid, x0, truth_rng);
  RunResult<Model> result;
  result.applied_controls = controls;
  for (const auto& u : controls) {
    truth.advance(u);
  }
  result.realized_cost = truth.finish();
  result.truth_path = std::move(truth.path());
  result.observations = std::move(truth.record());
  return result;
}

}  // namespace pfsgd
