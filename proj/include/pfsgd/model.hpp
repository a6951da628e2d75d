#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pfsgd/errors.hpp"
#include "pfsgd/rng.hpp"
#include "pfsgd/time_grid.hpp"

namespace pfsgd {

/// How an observation increment relates to the observation map g.
///
/// `increment`: dM = g(X) dt + dB, so one step contributes g(X) dt plus
/// Gaussian noise of variance `variance * dt` per component.
/// `direct`: M = g(X) + eta with eta ~ N(0, variance I), no dt scaling.
struct ObservationNoise {
  enum class Kind { increment, direct };

  Kind kind = Kind::increment;
  double variance = 1.0;

  double mean_scale(double dt) const { return kind == Kind::increment ? dt : 1.0; }
  double noise_variance(double dt) const {
    return kind == Kind::increment ? variance * dt : variance;
  }
};

/// Controlled SDE  dX = b(t,X,u) dt + sigma(t,X,u) dW  with running cost f,
/// terminal cost h and observation map g, together with the derivatives the
/// adjoint equation needs.
///
/// Derivatives of the diffusion are stored column by column: entry j of
/// `diffusion_dx` is the Jacobian of the j-th column of sigma with respect to x.
/// `drift_dx`, `diffusion_dx` and `diffusion_du` may be left empty, which
/// means identically zero.
template <int Nx, int Nu, int Nw, int Ny>
struct ModelSpec {
  static constexpr int dim_x = Nx;
  static constexpr int dim_u = Nu;
  static constexpr int dim_w = Nw;
  static constexpr int dim_obs = Ny;

  using State = Eigen::Matrix<double, Nx, 1>;
  using Control = Eigen::Matrix<double, Nu, 1>;
  using Noise = Eigen::Matrix<double, Nw, 1>;
  using Observation = Eigen::Matrix<double, Ny, 1>;
  using Diffusion = Eigen::Matrix<double, Nx, Nw>;
  using StateJacobian = Eigen::Matrix<double, Nx, Nx>;
  using ControlJacobian = Eigen::Matrix<double, Nx, Nu>;
  using DiffusionStateJacobian = std::array<StateJacobian, Nw>;
  using DiffusionControlJacobian = std::array<ControlJacobian, Nw>;

  template <class R>
  using Coefficient = std::function<R(double, const State&, const Control&)>;

  Coefficient<State> drift;
  Coefficient<Diffusion> diffusion;
  Coefficient<StateJacobian> drift_dx;
  Coefficient<ControlJacobian> drift_du;
  Coefficient<DiffusionStateJacobian> diffusion_dx;
  Coefficient<DiffusionControlJacobian> diffusion_du;

  Coefficient<double> running_cost;
  Coefficient<State> running_cost_dx;
  Coefficient<Control> running_cost_du;
  std::function<double(const State&)> terminal_cost;
  std::function<State(const State&)> terminal_cost_dx;

  std::function<Observation(const State&)> observation;
  ObservationNoise observation_noise;

  /// Throws ConfigError if a mandatory callback is missing.
  void validate() const {
    auto need = [](bool present, const char* name) {
      if (!present) {
        throw ConfigError(std::string("ModelSpec: missing callback '") + name + "'");
      }
    };
    need(static_cast<bool>(drift), "drift");
    need(static_cast<bool>(diffusion), "diffusion");
    need(static_cast<bool>(drift_du), "drift_du");
    need(static_cast<bool>(running_cost), "running_cost");
    need(static_cast<bool>(running_cost_dx), "running_cost_dx");
    need(static_cast<bool>(running_cost_du), "running_cost_du");
    need(static_cast<bool>(terminal_cost), "terminal_cost");
    need(static_cast<bool>(terminal_cost_dx), "terminal_cost_dx");
    need(static_cast<bool>(observation), "observation");
  }
};

template <int Nu>
using ControlVector = Eigen::Matrix<double, Nu, 1>;

/// Control values u_{t_i} for i = start_index..N, indexed by absolute grid index.
template <int Nu>
struct ControlSchedule {
  using Control = ControlVector<Nu>;

  int start_index = 0;
  std::vector<Control> values;

  static ControlSchedule zeros(int start, int steps) {
    if (start < 0 || start > steps) {
      throw DimensionError("ControlSchedule::zeros: start index outside [0, N]");
    }
    ControlSchedule s;
    s.start_index = start;
    s.values.assign(static_cast<std::size_t>(steps - start + 1), Control::Zero());
    return s;
  }

  int size() const { return static_cast<int>(values.size()); }
  int end_index() const { return start_index + size() - 1; }

  const Control& at(int i) const { return values.at(static_cast<std::size_t>(i - start_index)); }
  Control& at(int i) { return values.at(static_cast<std::size_t>(i - start_index)); }

  /// The same schedule restricted to [new_start, end].
  ControlSchedule tail(int new_start) const {
    if (new_start < start_index || new_start > end_index()) {
      throw DimensionError("ControlSchedule::tail: start index outside schedule");
    }
    ControlSchedule s;
    s.start_index = new_start;
    s.values.assign(values.begin() + (new_start - start_index), values.end());
    return s;
  }

  bool all_finite() const {
    for (const auto& v : values) {
      if (!v.allFinite()) {
        return false;
      }
    }
    return true;
  }
};

/// Forward path X_{start}, ..., X_N and the Brownian increments that produced it.
template <int Nx, int Nw>
struct StatePath {
  int start_index = 0;
  std::vector<Eigen::Matrix<double, Nx, 1>> states;
  std::vector<Eigen::Matrix<double, Nw, 1>> noises;
};

/// Observation increments, entry k covering [t_k, t_{k+1}].
template <int Ny>
struct ObservationRecord {
  std::vector<Eigen::Matrix<double, Ny, 1>> increments;
};

struct CostEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

namespace detail {

inline void require_finite(bool ok, const char* what, double t) {
  if (!ok) {
    throw NumericError(std::string("non-finite ") + what + " at t=" + std::to_string(t));
  }
}

template <class Schedule>
void require_schedule_to_end(const Schedule& ctrl, const TimeGrid& grid, const char* who) {
  if (ctrl.size() < 1 || ctrl.end_index() != grid.steps() || ctrl.start_index < 0) {
    throw DimensionError(std::string(who) + ": control schedule must span [n, N]");
  }
}

}  // namespace detail

/// One Euler-Maruyama step  x + b dt + sigma dW.
template <class Model>
typename Model::State euler_step(const Model& model, double t, const typename Model::State& x,
                                 const typename Model::Control& u, double dt,
                                 const typename Model::Noise& dw) {
  const typename Model::State b = model.drift(t, x, u);
  detail::require_finite(b.allFinite(), "drift", t);
  const typename Model::Diffusion sigma = model.diffusion(t, x, u);
  detail::require_finite(sigma.allFinite(), "diffusion", t);
  typename Model::State next = x + b * dt + sigma * dw;
  detail::require_finite(next.allFinite(), "state (overflow in euler_step)", t);
  return next;
}

/// Replays stored increments through euler_step; reproduces the original path bitwise.
template <class Model>
StatePath<Model::dim_x, Model::dim_w> replay_path(
    const Model& model, const TimeGrid& grid, const ControlSchedule<Model::dim_u>& ctrl,
    const typename Model::State& x0,
    const std::vector<typename Model::Noise>& noises) {
  detail::require_schedule_to_end(ctrl, grid, "replay_path");
  const int n = ctrl.start_index;
  if (static_cast<int>(noises.size()) != grid.steps() - n) {
    throw DimensionError("replay_path: need one increment per remaining step");
  }
  StatePath<Model::dim_x, Model::dim_w> path;
  path.start_index = n;
  path.noises = noises;
  path.states.reserve(noises.size() + 1);
  path.states.push_back(x0);
  for (int i = n; i < grid.steps(); ++i) {
    path.states.push_back(euler_step(model, grid.node(i), path.states.back(), ctrl.at(i),
                                     grid.dt(), noises[static_cast<std::size_t>(i - n)]));
  }
  return path;
}

/// Fills `path` with a fresh realization from x0; reuses its storage.
template <class Model>
void simulate_forward_into(const Model& model, const TimeGrid& grid,
                           const ControlSchedule<Model::dim_u>& ctrl,
                           const typename Model::State& x0, RandomStream& rng,
                           StatePath<Model::dim_x, Model::dim_w>& path) {
  const int n = ctrl.start_index;
  const auto steps = static_cast<std::size_t>(grid.steps() - n);
  const double sqrt_dt = std::sqrt(grid.dt());
  path.start_index = n;
  path.states.resize(steps + 1);
  path.noises.resize(steps);
  path.states[0] = x0;
  for (std::size_t k = 0; k < steps; ++k) {
    const int i = n + static_cast<int>(k);
    path.noises[k] = sqrt_dt * rng.normal_vector<Model::dim_w>();
    path.states[k + 1] =
        euler_step(model, grid.node(i), path.states[k], ctrl.at(i), grid.dt(), path.noises[k]);
  }
}

/// Simulates X from x0 at t_n (n = ctrl.start_index) to T with dW ~ N(0, dt I).
template <class Model>
StatePath<Model::dim_x, Model::dim_w> simulate_forward(const Model& model, const TimeGrid& grid,
                                                       const ControlSchedule<Model::dim_u>& ctrl,
                                                       const typename Model::State& x0,
                                                       RandomStream& rng) {
  detail::require_schedule_to_end(ctrl, grid, "simulate_forward");
  StatePath<Model::dim_x, Model::dim_w> path;
  simulate_forward_into(model, grid, ctrl, x0, rng, path);
  return path;
}

/// A single observation of state x over one step of length dt.
template <class Model>
typename Model::Observation observe(const Model& model, const typename Model::State& x, double dt,
                                    RandomStream& rng) {
  const auto& noise = model.observation_noise;
  const typename Model::Observation g = model.observation(x);
  detail::require_finite(g.allFinite(), "observation", 0.0);
  const double sd = std::sqrt(noise.noise_variance(dt));
  return g * noise.mean_scale(dt) + sd * rng.normal_vector<Model::dim_obs>();
}

/// Observation record of a full truth path. The increment over [t_k, t_{k+1}]
/// is driven by g(X_{t_{k+1}}), the state the filter conditions on after its
/// prediction step.
template <class Model>
ObservationRecord<Model::dim_obs> generate_observations(
    const Model& model, const TimeGrid& grid,
    const StatePath<Model::dim_x, Model::dim_w>& truth, RandomStream& rng) {
  if (truth.start_index != 0 || static_cast<int>(truth.states.size()) != grid.steps() + 1) {
    throw DimensionError("generate_observations: truth must span the full grid");
  }
  ObservationRecord<Model::dim_obs> rec;
  rec.increments.reserve(static_cast<std::size_t>(grid.steps()));
  for (int k = 0; k < grid.steps(); ++k) {
    rec.increments.push_back(observe(model, truth.states[static_cast<std::size_t>(k) + 1],
                                     grid.dt(), rng));
  }
  return rec;
}

/// Discrete cost of one path:
///   sum_{i=n}^{N-1} f(t_{i+1}, X_{i+1}, u_i) dt + h(X_N).
/// The control of each interval is charged together with the state it steers to.
template <class Model>
double path_cost(const Model& model, const TimeGrid& grid,
                 const StatePath<Model::dim_x, Model::dim_w>& path,
                 const ControlSchedule<Model::dim_u>& ctrl) {
  const int n = path.start_index;
  if (static_cast<int>(path.states.size()) != grid.steps() - n + 1) {
    throw DimensionError("path_cost: path does not reach T");
  }
  double cost = 0.0;
  for (int i = n; i < grid.steps(); ++i) {
    const double f = model.running_cost(grid.node(i + 1),
                                        path.states[static_cast<std::size_t>(i - n + 1)],
                                        ctrl.at(i));
    detail::require_finite(std::isfinite(f), "running cost", grid.node(i + 1));
    cost += f * grid.dt();
  }
  const double h = model.terminal_cost(path.states.back());
  detail::require_finite(std::isfinite(h), "terminal cost", grid.horizon());
  return cost + h;
}

/// Monte Carlo estimate of the expected cost over `n_mc` paths from x0.
/// Path k uses rng.substream({k}).
template <class Model>
CostEstimate evaluate_cost(const Model& model, const TimeGrid& grid,
                           const ControlSchedule<Model::dim_u>& ctrl,
                           const typename Model::State& x0, int n_mc, const RandomStream& rng) {
  if (n_mc < 1) {
    throw ConfigError("evaluate_cost: n_mc must be >= 1");
  }
  detail::require_schedule_to_end(ctrl, grid, "evaluate_cost");
  StatePath<Model::dim_x, Model::dim_w> path;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int k = 0; k < n_mc; ++k) {
    RandomStream stream = rng.substream({static_cast<std::uint64_t>(k)});
    simulate_forward_into(model, grid, ctrl, x0, stream, path);
    const double c = path_cost(model, grid, path, ctrl);
    sum += c;
    sum_sq += c * c;
  }
  CostEstimate est;
  est.mean = sum / n_mc;
  if (n_mc > 1) {
    const double var = std::max(0.0, (sum_sq - n_mc * est.mean * est.mean) / (n_mc - 1));
    est.std_error = std::sqrt(var / n_mc);
  }
  return est;
}

}  // namespace pfsgd
