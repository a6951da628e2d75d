#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "pfsgd/errors.hpp"
#include "pfsgd/model.hpp"
#include "pfsgd/rng.hpp"
#include "pfsgd/time_grid.hpp"

namespace pfsgd {

enum class ResampleScheme { multinomial, systematic };

/// Weighted particle approximation of the filtering density at t_{time_index}.
template <int Nx>
struct ParticleCloud {
  using State = Eigen::Matrix<double, Nx, 1>;

  std::vector<State> particles;
  std::vector<double> weights;
  int time_index = 0;

  /// S copies of x with uniform weights.
  static ParticleCloud point_mass(const State& x, int size, int index = 0) {
    if (size < 1) {
      throw ConfigError("ParticleCloud: size must be >= 1");
    }
    ParticleCloud c;
    c.particles.assign(static_cast<std::size_t>(size), x);
    c.weights.assign(static_cast<std::size_t>(size), 1.0 / size);
    c.time_index = index;
    return c;
  }

  /// S draws from `sampler` with uniform weights.
  template <class Sampler>
  static ParticleCloud sampled(Sampler&& sampler, int size, RandomStream& rng, int index = 0) {
    if (size < 1) {
      throw ConfigError("ParticleCloud: size must be >= 1");
    }
    ParticleCloud c;
    c.particles.reserve(static_cast<std::size_t>(size));
    for (int s = 0; s < size; ++s) {
      c.particles.push_back(sampler(rng));
    }
    c.weights.assign(static_cast<std::size_t>(size), 1.0 / size);
    c.time_index = index;
    return c;
  }

  int size() const { return static_cast<int>(particles.size()); }

  State mean() const {
    State m = State::Zero();
    for (std::size_t s = 0; s < particles.size(); ++s) {
      m += weights[s] * particles[s];
    }
    return m;
  }

  /// Weighted second moment E|X|^2.
  double second_moment() const {
    double m = 0.0;
    for (std::size_t s = 0; s < particles.size(); ++s) {
      m += weights[s] * particles[s].squaredNorm();
    }
    return m;
  }

  void validate() const {
    if (particles.empty() || particles.size() != weights.size()) {
      throw DimensionError("ParticleCloud: need S >= 1 particles with one weight each");
    }
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw NumericError("ParticleCloud: negative or non-finite weight");
      }
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) {
      throw NumericError("ParticleCloud: weights do not sum to one");
    }
  }
};

/// Advances every particle one Euler step under control u. Particle s draws its
/// increment from rng.substream({s}); weights are carried over unchanged.
template <class Model>
ParticleCloud<Model::dim_x> predict(const ParticleCloud<Model::dim_x>& cloud, const Model& model,
                                    const TimeGrid& grid, const typename Model::Control& u,
                                    const RandomStream& rng) {
  if (cloud.time_index < 0 || cloud.time_index >= grid.steps()) {
    throw DimensionError("predict: cloud is already at the final time");
  }
  ParticleCloud<Model::dim_x> next;
  next.weights = cloud.weights;
  next.time_index = cloud.time_index + 1;
  next.particles.resize(cloud.particles.size());
  const double t = grid.node(cloud.time_index);
  const double sqrt_dt = std::sqrt(grid.dt());
  for (std::size_t s = 0; s < cloud.particles.size(); ++s) {
    RandomStream stream = rng.substream({static_cast<std::uint64_t>(s)});
    const typename Model::Noise dw = sqrt_dt * stream.normal_vector<Model::dim_w>();
    next.particles[s] = euler_step(model, t, cloud.particles[s], u, grid.dt(), dw);
  }
  return next;
}

/// Gaussian log-likelihood of an observation given state x, up to a constant.
template <class Model>
double observation_log_likelihood(const Model& model, const typename Model::State& x,
                                  const typename Model::Observation& dm, double dt) {
  const auto& noise = model.observation_noise;
  const typename Model::Observation resid = dm - model.observation(x) * noise.mean_scale(dt);
  return -0.5 * resid.squaredNorm() / noise.noise_variance(dt);
}

/// Bayes update w_s <- w_s p(dM | x_s) / normalizer, computed in log space.
/// Throws DegenerateUpdateError when no particle has positive likelihood.
template <class Model>
ParticleCloud<Model::dim_x> update_weights(const ParticleCloud<Model::dim_x>& cloud,
                                           const typename Model::Observation& dm,
                                           const Model& model, double dt) {
  if (!(dt > 0.0)) {
    throw ConfigError("update_weights: dt must be positive");
  }
  if (!dm.allFinite()) {
    throw NumericError("update_weights: non-finite observation");
  }
  const std::size_t size = cloud.particles.size();
  std::vector<double> logw(size);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < size; ++s) {
    const double lw = cloud.weights[s] > 0.0
                          ? std::log(cloud.weights[s]) +
                                observation_log_likelihood(model, cloud.particles[s], dm, dt)
                          : -std::numeric_limits<double>::infinity();
    if (std::isnan(lw)) {
      throw DegenerateUpdateError("update_weights: NaN likelihood at step " +
                                  std::to_string(cloud.time_index));
    }
    logw[s] = lw;
    top = std::max(top, lw);
  }
  if (!std::isfinite(top)) {
    throw DegenerateUpdateError("update_weights: all likelihoods vanish at step " +
                                std::to_string(cloud.time_index));
  }
  ParticleCloud<Model::dim_x> out;
  out.particles = cloud.particles;
  out.time_index = cloud.time_index;
  out.weights.resize(size);
  double total = 0.0;
  for (std::size_t s = 0; s < size; ++s) {
    out.weights[s] = std::exp(logw[s] - top);
    total += out.weights[s];
  }
  for (double& w : out.weights) {
    w /= total;
  }
  return out;
}

/// Draws S particles with replacement in proportion to the weights and resets
/// the weights to 1/S.
template <int Nx>
ParticleCloud<Nx> resample(const ParticleCloud<Nx>& cloud, RandomStream& rng,
                           ResampleScheme scheme = ResampleScheme::multinomial) {
  const std::size_t size = cloud.particles.size();
  if (size == 0 || cloud.weights.size() != size) {
    throw DimensionError("resample: empty cloud");
  }
  ParticleCloud<Nx> out;
  out.time_index = cloud.time_index;
  out.particles.reserve(size);
  if (scheme == ResampleScheme::multinomial) {
    std::discrete_distribution<std::size_t> pick(cloud.weights.begin(), cloud.weights.end());
    for (std::size_t s = 0; s < size; ++s) {
      out.particles.push_back(cloud.particles[pick(rng.engine())]);
    }
  } else {
    const double step = 1.0 / static_cast<double>(size);
    double position = rng.uniform() * step;
    double cumulative = cloud.weights[0];
    std::size_t j = 0;
    for (std::size_t s = 0; s < size; ++s) {
      while (position > cumulative && j + 1 < size) {
        ++j;
        cumulative += cloud.weights[j];
      }
      out.particles.push_back(cloud.particles[j]);
      position += step;
    }
  }
  out.weights.assign(size, 1.0 / static_cast<double>(size));
  return out;
}

/// 1 / sum w_s^2.
template <int Nx>
double effective_sample_size(const ParticleCloud<Nx>& cloud) {
  double sq = 0.0;
  for (double w : cloud.weights) {
    sq += w * w;
  }
  return 1.0 / sq;
}

template <int Nx>
using TestFunction = std::function<double(const Eigen::Matrix<double, Nx, 1>&)>;

/// Bounded test functions used to compare two measures:
/// tanh(a (x_i - c)) for a in {0.5, 1, 2} and five centres c spread over
/// [lo_i, hi_i] per coordinate, plus smoothed indicators of balls around the
/// box centre with radii 1/4, 1/2 and 1 of the half-diagonal.
template <int Nx>
std::vector<TestFunction<Nx>> make_test_dictionary(const Eigen::Matrix<double, Nx, 1>& lo,
                                                   const Eigen::Matrix<double, Nx, 1>& hi) {
  using State = Eigen::Matrix<double, Nx, 1>;
  std::vector<TestFunction<Nx>> dict;
  for (int i = 0; i < Nx; ++i) {
    for (int k = 0; k < 5; ++k) {
      const double c = lo[i] + (hi[i] - lo[i]) * k / 4.0;
      for (double a : {0.5, 1.0, 2.0}) {
        dict.emplace_back([i, c, a](const State& x) { return std::tanh(a * (x[i] - c)); });
      }
    }
  }
  const State centre = 0.5 * (lo + hi);
  const double half_diag = std::max(0.5 * (hi - lo).norm(), 1e-12);
  for (double frac : {0.25, 0.5, 1.0}) {
    const double radius = frac * half_diag;
    const double width = 0.1 * radius;
    dict.emplace_back([centre, radius, width](const State& x) {
      return 1.0 / (1.0 + std::exp(((x - centre).norm() - radius) / width));
    });
  }
  return dict;
}

namespace detail {

template <int Nx>
double cloud_average(const ParticleCloud<Nx>& cloud, const TestFunction<Nx>& f) {
  double acc = 0.0;
  for (std::size_t s = 0; s < cloud.particles.size(); ++s) {
    acc += cloud.weights[s] * f(cloud.particles[s]);
  }
  return acc;
}

}  // namespace detail

/// max_k |<cloud, f_k> - <reference, f_k>| with an equally weighted sample set
/// as reference.
template <int Nx>
double empirical_measure_error(const ParticleCloud<Nx>& cloud,
                               const std::vector<Eigen::Matrix<double, Nx, 1>>& reference,
                               const std::vector<TestFunction<Nx>>& dictionary) {
  if (dictionary.empty()) {
    throw ConfigError("empirical_measure_error: empty test dictionary");
  }
  if (reference.empty()) {
    throw DimensionError("empirical_measure_error: empty reference sample");
  }
  double worst = 0.0;
  for (const auto& f : dictionary) {
    double ref = 0.0;
    for (const auto& x : reference) {
      ref += f(x);
    }
    ref /= static_cast<double>(reference.size());
    worst = std::max(worst, std::abs(detail::cloud_average(cloud, f) - ref));
  }
  return worst;
}

/// Same distance against a reference given by its expectation functional
/// (e.g. a density integrated by quadrature).
template <int Nx>
double empirical_measure_error(const ParticleCloud<Nx>& cloud,
                               const std::function<double(const TestFunction<Nx>&)>& expectation,
                               const std::vector<TestFunction<Nx>>& dictionary) {
  if (dictionary.empty()) {
    throw ConfigError("empirical_measure_error: empty test dictionary");
  }
  double worst = 0.0;
  for (const auto& f : dictionary) {
    worst = std::max(worst, std::abs(detail::cloud_average(cloud, f) - expectation(f)));
  }
  return worst;
}

/// Expectation functional of the 1-D Gaussian N(mean, variance), evaluated by
/// adaptive Gauss-Kronrod quadrature over mean +- 12 standard deviations.
inline std::function<double(const TestFunction<1>&)> gaussian_expectation(double mean,
                                                                          double variance) {
  if (!(variance > 0.0)) {
    throw ConfigError("gaussian_expectation: variance must be positive");
  }
  const double sd = std::sqrt(variance);
  return [mean, sd](const TestFunction<1>& f) {
    const double norm = 1.0 / std::sqrt(2.0 * 3.14159265358979323846);
    auto integrand = [&](double z) {
      Eigen::Matrix<double, 1, 1> x;
      x[0] = mean + sd * z;
      return f(x) * norm * std::exp(-0.5 * z * z);
    };
    return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(integrand, -12.0, 12.0,
                                                                         15, 1e-12);
  };
}

}  // namespace pfsgd
