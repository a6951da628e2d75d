#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "pfsgd/errors.hpp"
#include "pfsgd/model.hpp"
#include "pfsgd/rng.hpp"
#include "pfsgd/time_grid.hpp"

namespace pfsgd {

/// Discrete adjoint pair (Y_i, Z_i) for i = start_index..N.
/// Y_N is the terminal-cost gradient at X_N; Z_N is zero.
template <int Nx, int Nw>
struct AdjointPath {
  int start_index = 0;
  std::vector<Eigen::Matrix<double, Nx, 1>> Y;
  std::vector<Eigen::Matrix<double, Nx, Nw>> Z;

  const Eigen::Matrix<double, Nx, 1>& y_at(int i) const {
    return Y.at(static_cast<std::size_t>(i - start_index));
  }
  const Eigen::Matrix<double, Nx, Nw>& z_at(int i) const {
    return Z.at(static_cast<std::size_t>(i - start_index));
  }
};

/// b_x^T Y + sum_j (d sigma_{.j}/dx)^T Z_{.j} + f_x, the bracket of the backward step.
template <class Model>
typename Model::State adjoint_drift(const Model& model, double t, const typename Model::State& x,
                                    const typename Model::Control& u,
                                    const typename Model::State& y,
                                    const typename Model::Diffusion& z) {
  typename Model::State out = model.running_cost_dx(t, x, u);
  if (model.drift_dx) {
    out.noalias() += model.drift_dx(t, x, u).transpose() * y;
  }
  if (model.diffusion_dx) {
    const auto dsigma = model.diffusion_dx(t, x, u);
    for (int j = 0; j < Model::dim_w; ++j) {
      out.noalias() += dsigma[static_cast<std::size_t>(j)].transpose() * z.col(j);
    }
  }
  return out;
}

/// Gradient integrand  b_u^T Y + sum_j (d sigma_{.j}/du)^T Z_{.j} + f_u.
template <class Model>
typename Model::Control gradient_integrand(const Model& model, double t,
                                           const typename Model::State& x,
                                           const typename Model::Control& u,
                                           const typename Model::State& y,
                                           const typename Model::Diffusion& z) {
  typename Model::Control out = model.running_cost_du(t, x, u);
  out.noalias() += model.drift_du(t, x, u).transpose() * y;
  if (model.diffusion_du) {
    const auto dsigma = model.diffusion_du(t, x, u);
    for (int j = 0; j < Model::dim_w; ++j) {
      out.noalias() += dsigma[static_cast<std::size_t>(j)].transpose() * z.col(j);
    }
  }
  return out;
}

/// Pathwise backward scheme driven by the increments stored in `path`:
///
///   Y_N = h_x(X_N),  Z_N = 0
///   Z_i = Y_{i+1} dW_i^T / dt
///   Y_i = Y_{i+1} + dt [b_x^T Y_{i+1} + sigma_x^T Z_{i+1} + f_x](t_{i+1}, X_{i+1}, u_i)
///
/// Coefficients take the state at t_{i+1} together with the control u_i.
template <class Model>
void solve_adjoint_pathwise_into(const Model& model, const TimeGrid& grid,
                                 const StatePath<Model::dim_x, Model::dim_w>& path,
                                 const ControlSchedule<Model::dim_u>& ctrl,
                                 AdjointPath<Model::dim_x, Model::dim_w>& out) {
  const int n = path.start_index;
  const int steps = grid.steps() - n;
  if (static_cast<int>(path.states.size()) != steps + 1) {
    throw DimensionError("solve_adjoint_pathwise: path does not span [t_n, T]");
  }
  if (static_cast<int>(path.noises.size()) != steps) {
    throw DimensionError("solve_adjoint_pathwise: path carries no Brownian increments");
  }
  if (ctrl.start_index > n || ctrl.end_index() != grid.steps()) {
    throw DimensionError("solve_adjoint_pathwise: control schedule does not cover the path");
  }
  const double dt = grid.dt();
  out.start_index = n;
  out.Y.resize(static_cast<std::size_t>(steps) + 1);
  out.Z.resize(static_cast<std::size_t>(steps) + 1);
  out.Y.back() = model.terminal_cost_dx(path.states.back());
  detail::require_finite(out.Y.back().allFinite(), "terminal gradient", grid.horizon());
  out.Z.back().setZero();
  for (int k = steps - 1; k >= 0; --k) {
    const auto ks = static_cast<std::size_t>(k);
    const int i = n + k;
    out.Z[ks].noalias() = out.Y[ks + 1] * path.noises[ks].transpose() / dt;
    out.Y[ks] = out.Y[ks + 1] + dt * adjoint_drift(model, grid.node(i + 1), path.states[ks + 1],
                                                   ctrl.at(i), out.Y[ks + 1], out.Z[ks + 1]);
    detail::require_finite(out.Y[ks].allFinite(), "adjoint Y", grid.node(i));
  }
}

template <class Model>
AdjointPath<Model::dim_x, Model::dim_w> solve_adjoint_pathwise(
    const Model& model, const TimeGrid& grid, const StatePath<Model::dim_x, Model::dim_w>& path,
    const ControlSchedule<Model::dim_u>& ctrl) {
  AdjointPath<Model::dim_x, Model::dim_w> out;
  solve_adjoint_pathwise_into(model, grid, path, ctrl, out);
  return out;
}

/// K-sample backward scheme from x_start at t_n.
///
/// Each sample k is a full forward path (stream rng.substream({k})) carrying its
/// own (Y^k, Z^k) through the pathwise recursion; the returned (Y_i, Z_i) are
/// the sample averages
///   Y_i = 1/K sum_k Y^k_{i+1} + dt/K sum_k [b_x^T Y^k_{i+1} + sigma_x^T Z^k_{i+1} + f_x]
///   Z_i = 1/K sum_k Y^k_{i+1} dW^k_i / dt.
template <class Model>
AdjointPath<Model::dim_x, Model::dim_w> solve_adjoint_batch(
    const Model& model, const TimeGrid& grid, const ControlSchedule<Model::dim_u>& ctrl,
    const typename Model::State& x_start, int start_index, int samples, const RandomStream& rng) {
  if (samples < 1) {
    throw ConfigError("solve_adjoint_batch: sample count K must be >= 1");
  }
  if (start_index < 0 || start_index > grid.steps() || ctrl.start_index > start_index ||
      ctrl.end_index() != grid.steps()) {
    throw DimensionError("solve_adjoint_batch: control schedule does not cover [t_n, T]");
  }
  const ControlSchedule<Model::dim_u> local = ctrl.tail(start_index);
  const auto len = static_cast<std::size_t>(grid.steps() - start_index + 1);

  AdjointPath<Model::dim_x, Model::dim_w> mean;
  mean.start_index = start_index;
  mean.Y.assign(len, Model::State::Zero());
  mean.Z.assign(len, Model::Diffusion::Zero());

  StatePath<Model::dim_x, Model::dim_w> path;
  AdjointPath<Model::dim_x, Model::dim_w> sample;
  for (int k = 0; k < samples; ++k) {
    RandomStream stream = rng.substream({static_cast<std::uint64_t>(k)});
    simulate_forward_into(model, grid, local, x_start, stream, path);
    solve_adjoint_pathwise_into(model, grid, path, local, sample);
    for (std::size_t j = 0; j < len; ++j) {
      mean.Y[j] += sample.Y[j];
      mean.Z[j] += sample.Z[j];
    }
  }
  for (std::size_t j = 0; j < len; ++j) {
    mean.Y[j] /= samples;
    mean.Z[j] /= samples;
  }
  return mean;
}

}  // namespace pfsgd
