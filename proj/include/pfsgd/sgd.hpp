#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "pfsgd/errors.hpp"
#include "pfsgd/fbsde.hpp"
#include "pfsgd/model.hpp"
#include "pfsgd/particle_filter.hpp"
#include "pfsgd/rng.hpp"
#include "pfsgd/time_grid.hpp"

namespace pfsgd {

/// Step size rule: eta_l = r0 / (1 + l / l0) for `decaying`, r0 for `constant`.
struct StepSchedule {
  enum class Kind { decaying, constant };

  Kind kind = Kind::decaying;
  double r0 = 0.1;
  double l0 = 10.0;

  double operator()(int l) const {
    if (kind == Kind::constant) {
      return r0;
    }
    return r0 / (1.0 + static_cast<double>(l) / l0);
  }

  void validate() const {
    if (!(r0 > 0.0) || !std::isfinite(r0)) {
      throw ConfigError("StepSchedule: r0 must be positive");
    }
    if (kind == Kind::decaying && !(l0 > 0.0)) {
      throw ConfigError("StepSchedule: l0 must be positive");
    }
  }
};

/// Per-coordinate control box.
template <int Nu>
struct ControlBox {
  ControlVector<Nu> lower;
  ControlVector<Nu> upper;
};

template <int Nu>
struct SgdConfig {
  int iterations = 1000;
  StepSchedule step;
  std::uint64_t seed = 0;
  std::optional<ControlBox<Nu>> bounds;
  /// Re-initialize the schedule to zero at every decision time instead of
  /// carrying over the previous optimum.
  bool cold_start = false;

  void validate() const {
    if (iterations < 1) {
      throw ConfigError("SgdConfig: iterations must be >= 1");
    }
    step.validate();
    if (bounds && (bounds->lower.array() > bounds->upper.array()).any()) {
      throw ConfigError("SgdConfig: empty projection box");
    }
  }
};

/// Gradient table indexed like a ControlSchedule.
template <int Nu>
using GradientTable = ControlSchedule<Nu>;

/// Reusable storage for one gradient sample.
template <class Model>
struct SgdWorkspace {
  StatePath<Model::dim_x, Model::dim_w> path;
  AdjointPath<Model::dim_x, Model::dim_w> adjoint;
  GradientTable<Model::dim_u> grad;
};

/// One gradient sample: a single forward path from x_init under ctrl, its
/// pathwise adjoint, and Psi_i = gradient_integrand(t_i, X_i, u_i, Y_i, Z_i)
/// for i = n..N. Results are left in `ws.grad` and `ws.path`.
template <class Model>
void sgd_gradient_sample_into(const Model& model, const TimeGrid& grid,
                              const ControlSchedule<Model::dim_u>& ctrl,
                              const typename Model::State& x_init, RandomStream& rng,
                              SgdWorkspace<Model>& ws) {
  simulate_forward_into(model, grid, ctrl, x_init, rng, ws.path);
  solve_adjoint_pathwise_into(model, grid, ws.path, ctrl, ws.adjoint);
  ws.grad.start_index = ctrl.start_index;
  ws.grad.values.resize(ctrl.values.size());
  for (std::size_t k = 0; k < ctrl.values.size(); ++k) {
    const int i = ctrl.start_index + static_cast<int>(k);
    ws.grad.values[k] = gradient_integrand(model, grid.node(i), ws.path.states[k], ctrl.values[k],
                                           ws.adjoint.Y[k], ws.adjoint.Z[k]);
  }
}

template <class Model>
struct GradientSample {
  GradientTable<Model::dim_u> grad;
  StatePath<Model::dim_x, Model::dim_w> path;
};

template <class Model>
GradientSample<Model> sgd_gradient_sample(const Model& model, const TimeGrid& grid,
                                          const ControlSchedule<Model::dim_u>& ctrl,
                                          const typename Model::State& x_init,
                                          RandomStream& rng) {
  detail::require_schedule_to_end(ctrl, grid, "sgd_gradient_sample");
  SgdWorkspace<Model> ws;
  sgd_gradient_sample_into(model, grid, ctrl, x_init, rng, ws);
  return {std::move(ws.grad), std::move(ws.path)};
}

/// u_i <- u_i - eta grad_i, then clipped to the box if one is given.
template <int Nu>
void sgd_update(ControlSchedule<Nu>& ctrl, const GradientTable<Nu>& grad, double eta,
                const std::optional<ControlBox<Nu>>& bounds = std::nullopt) {
  if (grad.start_index != ctrl.start_index || grad.size() != ctrl.size()) {
    throw DimensionError("sgd_update: gradient and schedule shapes differ");
  }
  for (std::size_t k = 0; k < ctrl.values.size(); ++k) {
    ctrl.values[k] -= eta * grad.values[k];
    if (bounds) {
      ctrl.values[k] = ctrl.values[k].cwiseMax(bounds->lower).cwiseMin(bounds->upper);
    }
  }
}

/// L iterations of single-sample SGD at decision time t_n, n = cloud.time_index.
/// Each iteration draws the initial state uniformly from the cloud particles.
template <class Model>
ControlSchedule<Model::dim_u> optimize_at_time(const Model& model, const TimeGrid& grid,
                                               const ParticleCloud<Model::dim_x>& cloud,
                                               const ControlSchedule<Model::dim_u>& init_ctrl,
                                               const SgdConfig<Model::dim_u>& cfg,
                                               RandomStream& rng) {
  cfg.validate();
  detail::require_schedule_to_end(init_ctrl, grid, "optimize_at_time");
  if (cloud.time_index != init_ctrl.start_index) {
    throw DimensionError("optimize_at_time: cloud and schedule refer to different times");
  }
  if (cloud.particles.empty()) {
    throw DimensionError("optimize_at_time: empty cloud");
  }
  ControlSchedule<Model::dim_u> ctrl = init_ctrl;
  SgdWorkspace<Model> ws;
  for (int l = 0; l < cfg.iterations; ++l) {
    const auto& x_hat = cloud.particles[rng.index(cloud.particles.size())];
    sgd_gradient_sample_into(model, grid, ctrl, x_hat, rng, ws);
    sgd_update(ctrl, ws.grad, cfg.step(l), cfg.bounds);
  }
  if (!ctrl.all_finite()) {
    throw NumericError("optimize_at_time: control diverged");
  }
  return ctrl;
}

/// Mean gradient and its per-coordinate standard error.
template <int Nu>
struct GradientEstimate {
  GradientTable<Nu> mean;
  GradientTable<Nu> std_error;
  int samples = 0;
};

namespace detail {

template <int Nu>
class GradientAccumulator {
 public:
  explicit GradientAccumulator(const ControlSchedule<Nu>& shape) {
    sum_.start_index = shape.start_index;
    sum_.values.assign(shape.values.size(), ControlVector<Nu>::Zero());
    sum_sq_ = sum_;
  }

  void add(const GradientTable<Nu>& g) {
    for (std::size_t k = 0; k < g.values.size(); ++k) {
      sum_.values[k] += g.values[k];
      sum_sq_.values[k] += g.values[k].cwiseAbs2();
    }
    ++count_;
  }

  GradientEstimate<Nu> finish() const {
    GradientEstimate<Nu> est;
    est.samples = count_;
    est.mean = sum_;
    est.std_error = sum_;
    const double n = count_;
    for (std::size_t k = 0; k < sum_.values.size(); ++k) {
      est.mean.values[k] = sum_.values[k] / n;
      if (count_ > 1) {
        const ControlVector<Nu> var =
            ((sum_sq_.values[k] - n * est.mean.values[k].cwiseAbs2()) / (n - 1.0)).cwiseMax(0.0);
        est.std_error.values[k] = (var / n).cwiseSqrt();
      } else {
        est.std_error.values[k].setZero();
      }
    }
    return est;
  }

 private:
  GradientTable<Nu> sum_;
  GradientTable<Nu> sum_sq_;
  int count_ = 0;
};

}  // namespace detail

/// Brute-force Monte Carlo gradient: every particle s contributes `lambda`
/// independent paths (stream rng.substream({s, j})).
template <class Model>
GradientEstimate<Model::dim_u> full_gradient_oracle(const Model& model, const TimeGrid& grid,
                                                    const ParticleCloud<Model::dim_x>& cloud,
                                                    const ControlSchedule<Model::dim_u>& ctrl,
                                                    int lambda, const RandomStream& rng) {
  if (lambda < 1) {
    throw ConfigError("full_gradient_oracle: Lambda must be >= 1");
  }
  detail::require_schedule_to_end(ctrl, grid, "full_gradient_oracle");
  detail::GradientAccumulator<Model::dim_u> acc(ctrl);
  SgdWorkspace<Model> ws;
  for (std::size_t s = 0; s < cloud.particles.size(); ++s) {
    for (int j = 0; j < lambda; ++j) {
      RandomStream stream =
          rng.substream({static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(j)});
      sgd_gradient_sample_into(model, grid, ctrl, cloud.particles[s], stream, ws);
      acc.add(ws.grad);
    }
  }
  return acc.finish();
}

/// Mean of `count` single-sample gradients with uniformly drawn initial states,
/// all taken from one sequential stream; the estimator SGD uses at each step.
template <class Model>
GradientEstimate<Model::dim_u> average_gradient_samples(const Model& model, const TimeGrid& grid,
                                                        const ParticleCloud<Model::dim_x>& cloud,
                                                        const ControlSchedule<Model::dim_u>& ctrl,
                                                        int count, RandomStream& rng) {
  if (count < 1) {
    throw ConfigError("average_gradient_samples: count must be >= 1");
  }
  detail::require_schedule_to_end(ctrl, grid, "average_gradient_samples");
  detail::GradientAccumulator<Model::dim_u> acc(ctrl);
  SgdWorkspace<Model> ws;
  for (int c = 0; c < count; ++c) {
    const auto& x_hat = cloud.particles[rng.index(cloud.particles.size())];
    sgd_gradient_sample_into(model, grid, ctrl, x_hat, rng, ws);
    acc.add(ws.grad);
  }
  return acc.finish();
}

}  // namespace pfsgd
