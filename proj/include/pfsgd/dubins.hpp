#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include <Eigen/Core>

#include "pfsgd/errors.hpp"
#include "pfsgd/model.hpp"
#include "pfsgd/time_grid.hpp"

namespace pfsgd {

/// State (X, Y, theta), scalar turn-rate control, three independent noise
/// channels and two bearing observations.
using DubinsModel = ModelSpec<3, 1, 3, 2>;

struct DubinsParams {
  double sigma = 0.1;
  double obs_noise_var = 0.1;
  double R = 20.0;
  double Q = 20.0;
  double K = 1.0;
  Eigen::Vector2d platform_a{-1.0, 1.0};
  Eigen::Vector2d platform_b{2.0, 1.0};
  Eigen::Vector2d start{0.0, 0.0};
  double heading0 = std::numbers::pi / 2.0;
  Eigen::Vector2d target_terminal{1.0, 1.0};
  double T = 1.0;
  int steps = 50;
  /// Reference path S*_t; empty selects the quarter circle centred at (0, 1).
  std::function<Eigen::Vector2d(double)> reference;

  TimeGrid grid() const { return TimeGrid(T, steps); }

  Eigen::Vector3d initial_state() const { return {start.x(), start.y(), heading0}; }

  void validate() const {
    if (!(sigma >= 0.0) || !(obs_noise_var > 0.0) || !(R >= 0.0) || !(Q >= 0.0) || !(K > 0.0)) {
      throw ConfigError("DubinsParams: need sigma >= 0, obs variance > 0, R, Q >= 0, K > 0");
    }
    if (!(T > 0.0) || steps < 1) {
      throw ConfigError("DubinsParams: need T > 0 and at least one step");
    }
    if (platform_a.y() != platform_b.y()) {
      throw ConfigError("DubinsParams: bearing formula assumes both platforms at the same height");
    }
  }

  Eigen::Vector2d reference_at(double t) const {
    if (reference) {
      return reference(t);
    }
    const double phi = std::numbers::pi * t / (2.0 * T);
    return {std::sin(phi), 1.0 - std::cos(phi)};
  }
};

struct Bearings {
  Eigen::Vector2d angles;
  /// True when |Y - platform height| fell below the clamp threshold.
  bool clamped = false;
};

/// Principal-branch bearings (atan((X - a_x)/(Y - h)), atan((X - b_x)/(Y - h)))
/// with the denominator magnitude clamped to at least 1e-8.
inline Bearings bearing_angles(const DubinsParams& p, const Eigen::Vector3d& x) {
  constexpr double min_gap = 1e-8;
  double dy = x[1] - p.platform_a.y();
  Bearings out;
  if (std::abs(dy) < min_gap) {
    dy = dy < 0.0 ? -min_gap : min_gap;
    out.clamped = true;
  }
  out.angles = {std::atan((x[0] - p.platform_a.x()) / dy),
                std::atan((x[0] - p.platform_b.x()) / dy)};
  return out;
}

inline DubinsModel dubins_model(const DubinsParams& params) {
  params.validate();
  using State = DubinsModel::State;
  using Control = DubinsModel::Control;
  DubinsModel m;
  const double sigma = params.sigma;
  const double R = params.R;
  const double Q = params.Q;
  const double K = params.K;
  const DubinsParams p = params;

  m.drift = [](double, const State& x, const Control& u) -> State {
    return {std::sin(x[2]), std::cos(x[2]), u[0]};
  };
  m.diffusion = [sigma](double, const State&, const Control&) -> DubinsModel::Diffusion {
    return Eigen::Vector3d(sigma, sigma, sigma * sigma).asDiagonal();
  };
  m.drift_dx = [](double, const State& x, const Control&) -> DubinsModel::StateJacobian {
    DubinsModel::StateJacobian j = DubinsModel::StateJacobian::Zero();
    j(0, 2) = std::cos(x[2]);
    j(1, 2) = -std::sin(x[2]);
    return j;
  };
  m.drift_du = [](double, const State&, const Control&) -> DubinsModel::ControlJacobian {
    return {0.0, 0.0, 1.0};
  };
  m.running_cost = [R, K, p](double t, const State& x, const Control& u) {
    const Eigen::Vector2d e = x.head<2>() - p.reference_at(t);
    return 0.5 * R * e.squaredNorm() + 0.5 * K * u.squaredNorm();
  };
  m.running_cost_dx = [R, p](double t, const State& x, const Control&) -> State {
    State g = State::Zero();
    g.head<2>() = R * (x.head<2>() - p.reference_at(t));
    return g;
  };
  m.running_cost_du = [K](double, const State&, const Control& u) -> Control { return K * u; };
  m.terminal_cost = [Q, p](const State& x) {
    return Q * (x.head<2>() - p.reference_at(p.T)).squaredNorm();
  };
  m.terminal_cost_dx = [Q, p](const State& x) -> State {
    State g = State::Zero();
    g.head<2>() = 2.0 * Q * (x.head<2>() - p.reference_at(p.T));
    return g;
  };
  m.observation = [p](const State& x) -> DubinsModel::Observation {
    return bearing_angles(p, x).angles;
  };
  m.observation_noise = {ObservationNoise::Kind::direct, params.obs_noise_var};
  return m;
}

/// S*_{t_i} at every grid node.
inline std::vector<Eigen::Vector2d> reference_circle_path(const DubinsParams& params,
                                                          const TimeGrid& grid) {
  std::vector<Eigen::Vector2d> out;
  out.reserve(static_cast<std::size_t>(grid.steps()) + 1);
  for (double t : grid.nodes()) {
    out.push_back(params.reference_at(t));
  }
  return out;
}

}  // namespace pfsgd
