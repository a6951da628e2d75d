#include <cmath>

#include <gtest/gtest.h>

#include "pfsgd/lq.hpp"
#include "pfsgd/sgd.hpp"
#include "support/models.hpp"

using namespace pfsgd;
using support::Scalar;

namespace {

/// dX = u dt + s dW, f = u^2/2, h = (x - 1)^2/2.
Scalar steering(double s) {
  Scalar m = support::zero_model<Scalar>();
  m.drift = [](double, const Scalar::State&, const Scalar::Control& u) { return Scalar::State(u); };
  m.drift_du = [](double, const Scalar::State&, const Scalar::Control&) {
    return Scalar::ControlJacobian::Identity().eval();
  };
  m.diffusion = [s](double, const Scalar::State&, const Scalar::Control&) {
    return Scalar::Diffusion::Constant(s).eval();
  };
  m.running_cost = [](double, const Scalar::State&, const Scalar::Control& u) {
    return 0.5 * u.squaredNorm();
  };
  m.running_cost_du = [](double, const Scalar::State&, const Scalar::Control& u) {
    return Scalar::Control(u);
  };
  m.terminal_cost = [](const Scalar::State& x) { return 0.5 * (x[0] - 1.0) * (x[0] - 1.0); };
  m.terminal_cost_dx = [](const Scalar::State& x) { return support::s1(x[0] - 1.0); };
  return m;
}

/// Nonlinear scalar model with state-dependent drift and quadratic costs.
Scalar pendulum_like() {
  Scalar m = support::zero_model<Scalar>();
  m.drift = [](double, const Scalar::State& x, const Scalar::Control& u) {
    return support::s1(std::sin(x[0]) + u[0]);
  };
  m.drift_dx = [](double, const Scalar::State& x, const Scalar::Control&) {
    return Scalar::StateJacobian::Constant(std::cos(x[0])).eval();
  };
  m.drift_du = [](double, const Scalar::State&, const Scalar::Control&) {
    return Scalar::ControlJacobian::Identity().eval();
  };
  m.diffusion = [](double, const Scalar::State&, const Scalar::Control&) {
    return Scalar::Diffusion::Constant(0.3).eval();
  };
  m.running_cost = [](double, const Scalar::State& x, const Scalar::Control& u) {
    return 0.5 * (x.squaredNorm() + u.squaredNorm());
  };
  m.running_cost_dx = [](double, const Scalar::State& x, const Scalar::Control&) {
    return Scalar::State(x);
  };
  m.running_cost_du = [](double, const Scalar::State&, const Scalar::Control& u) {
    return Scalar::Control(u);
  };
  m.terminal_cost = [](const Scalar::State& x) { return 0.5 * x.squaredNorm(); };
  m.terminal_cost_dx = [](const Scalar::State& x) { return Scalar::State(x); };
  return m;
}

ParticleCloud<1> gaussian_cloud(int S, std::uint64_t seed) {
  RandomStream rng(seed);
  return ParticleCloud<1>::sampled([](RandomStream& r) { return support::s1(r.normal()); }, S, rng);
}

double schedule_distance(const ControlSchedule<1>& a, double value) {
  double sq = 0.0;
  for (const auto& u : a.values) {
    sq += (u[0] - value) * (u[0] - value);
  }
  return std::sqrt(sq);
}

}  // namespace

TEST(GradientSample, ZeroModelGivesZero) {
  const Scalar m = support::zero_model<Scalar>();
  const TimeGrid g(1.0, 10);
  RandomStream rng(1);
  const auto s = sgd_gradient_sample(m, g, ControlSchedule<1>::zeros(3, 10), support::s1(2.0), rng);
  EXPECT_EQ(s.grad.start_index, 3);
  for (const auto& v : s.grad.values) {
    EXPECT_EQ(v[0], 0.0);
  }
}

TEST(GradientSample, DeterministicScalarStationaryPoint) {
  Scalar m = steering(0.0);
  m.terminal_cost = [](const Scalar::State&) { return 0.0; };
  m.terminal_cost_dx = [](const Scalar::State&) { return support::s1(0.0); };
  const TimeGrid g(1.0, 20);
  RandomStream rng(2);
  auto ctrl = ControlSchedule<1>::zeros(0, 20);
  for (const auto& v : sgd_gradient_sample(m, g, ctrl, support::s1(0.0), rng).grad.values) {
    EXPECT_EQ(v[0], 0.0);
  }
  for (auto& u : ctrl.values) {
    u[0] = 0.3;
  }
  for (const auto& v : sgd_gradient_sample(m, g, ctrl, support::s1(0.0), rng).grad.values) {
    EXPECT_DOUBLE_EQ(v[0], 0.3);
  }
}

TEST(GradientSample, DeterministicScalarWithTerminalCost) {
  const Scalar m = steering(0.0);
  const TimeGrid g(1.0, 20);
  auto ctrl = ControlSchedule<1>::zeros(0, 20);
  for (auto& u : ctrl.values) {
    u[0] = 0.5;
  }
  RandomStream rng(3);
  // X_N = 0.5, so Y_i = X_N - 1 = -0.5 and the gradient u + Y vanishes.
  for (const auto& v : sgd_gradient_sample(m, g, ctrl, support::s1(0.0), rng).grad.values) {
    EXPECT_NEAR(v[0], 0.0, 1e-14);
  }
}

TEST(SgdUpdate, Arithmetic) {
  ControlSchedule<1> ctrl{0, {support::c1(1.0)}};
  const ControlSchedule<1> grad{0, {support::c1(2.0)}};
  sgd_update(ctrl, grad, 0.25);
  EXPECT_DOUBLE_EQ(ctrl.values[0][0], 0.5);
  sgd_update(ctrl, ControlSchedule<1>{0, {support::c1(0.0)}}, 0.25);
  EXPECT_DOUBLE_EQ(ctrl.values[0][0], 0.5);
  sgd_update(ctrl, grad, 0.0);
  EXPECT_DOUBLE_EQ(ctrl.values[0][0], 0.5);
}

TEST(SgdUpdate, ProjectsIntoBox) {
  ControlSchedule<1> ctrl{0, {support::c1(0.0), support::c1(0.0)}};
  const ControlSchedule<1> grad{0, {support::c1(-10.0), support::c1(10.0)}};
  const ControlBox<1> box{support::c1(-1.0), support::c1(2.0)};
  sgd_update(ctrl, grad, 1.0, std::optional<ControlBox<1>>(box));
  EXPECT_EQ(ctrl.values[0][0], 2.0);
  EXPECT_EQ(ctrl.values[1][0], -1.0);
  EXPECT_THROW(sgd_update(ctrl, ControlSchedule<1>{1, {support::c1(0.0)}}, 1.0), DimensionError);
}

TEST(StepSchedule, DecayingAndConstant) {
  const StepSchedule decay{StepSchedule::Kind::decaying, 0.2, 10.0};
  EXPECT_DOUBLE_EQ(decay(0), 0.2);
  EXPECT_DOUBLE_EQ(decay(10), 0.1);
  const StepSchedule flat{StepSchedule::Kind::constant, 0.3, 10.0};
  EXPECT_DOUBLE_EQ(flat(1000), 0.3);
  EXPECT_THROW((StepSchedule{StepSchedule::Kind::decaying, 0.0, 1.0}.validate()), ConfigError);
  SgdConfig<1> cfg;
  cfg.iterations = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(OptimizeAtTime, ZeroModelSingleIterationLeavesControl) {
  const Scalar m = support::zero_model<Scalar>();
  const TimeGrid g(1.0, 5);
  auto init = ControlSchedule<1>::zeros(2, 5);
  init.values[1][0] = 0.7;
  SgdConfig<1> cfg;
  cfg.iterations = 1;
  RandomStream rng(4);
  auto cloud = ParticleCloud<1>::point_mass(support::s1(0.0), 3, 2);
  const auto out = optimize_at_time(m, g, cloud, init, cfg, rng);
  EXPECT_EQ(out.values, init.values);
  cloud.time_index = 1;
  EXPECT_THROW(optimize_at_time(m, g, cloud, init, cfg, rng), DimensionError);
}

TEST(OptimizeAtTime, DeterministicRateIsInverseL) {
  // u* = (1 - x0) / (1 + T); the error from u = 0 lies along the constant
  // schedule, an eigenvector of the gradient map with eigenvalue lambda = 1 + T.
  const Scalar m = steering(0.0);
  const TimeGrid g(1.0, 10);
  const auto cloud = ParticleCloud<1>::point_mass(support::s1(0.0), 1);
  auto error_after = [&](int L) {
    SgdConfig<1> cfg;
    cfg.iterations = L;
    cfg.step = {StepSchedule::Kind::decaying, 0.125, 4.0};  // eta_l = 1 / (lambda (l + 4))
    RandomStream rng(5);
    return schedule_distance(optimize_at_time(m, g, cloud, ControlSchedule<1>::zeros(0, 10), cfg, rng),
                             0.5);
  };
  const double e10 = error_after(10);
  const double e100 = error_after(100);
  const double e1000 = error_after(1000);
  EXPECT_GT(e10 / e100, 10.0 / 1.5);
  EXPECT_LT(e10 / e100, 10.0 * 1.5);
  EXPECT_GT(e100 / e1000, 10.0 / 1.5);
  EXPECT_LT(e100 / e1000, 10.0 * 1.5);
}

TEST(OptimizeAtTime, StochasticConvergesToDeterministicOptimum) {
  const Scalar m = steering(0.5);
  const TimeGrid g(1.0, 10);
  const auto cloud = ParticleCloud<1>::point_mass(support::s1(0.0), 1);
  SgdConfig<1> cfg;
  cfg.iterations = 20000;
  cfg.step = {StepSchedule::Kind::decaying, 0.5, 2.0};
  RandomStream rng(6);
  const auto out = optimize_at_time(m, g, cloud, ControlSchedule<1>::zeros(0, 10), cfg, rng);
  EXPECT_LT(schedule_distance(out, 0.5), 0.05);
}

TEST(Oracle, ZeroModelGivesZero) {
  const Scalar m = support::zero_model<Scalar>();
  const TimeGrid g(1.0, 5);
  const auto est = full_gradient_oracle(m, g, gaussian_cloud(4, 1), ControlSchedule<1>::zeros(0, 5),
                                        3, RandomStream(2));
  EXPECT_EQ(est.samples, 12);
  for (const auto& v : est.mean.values) {
    EXPECT_EQ(v[0], 0.0);
  }
  EXPECT_THROW(full_gradient_oracle(m, g, gaussian_cloud(4, 1), ControlSchedule<1>::zeros(0, 5), 0,
                                    RandomStream(2)),
               ConfigError);
}

TEST(Oracle, SingleParticleSingleDrawEqualsOneSample) {
  const Scalar m = pendulum_like();
  const TimeGrid g(1.0, 10);
  const auto cloud = gaussian_cloud(1, 7);
  const auto ctrl = ControlSchedule<1>::zeros(0, 10);
  const RandomStream root(8);
  const auto est = full_gradient_oracle(m, g, cloud, ctrl, 1, root);
  RandomStream rng = root.substream({0, 0});
  const auto sample = sgd_gradient_sample(m, g, ctrl, cloud.particles[0], rng);
  EXPECT_EQ(est.mean.values, sample.grad.values);
}

TEST(Oracle, SgdSamplesAreUnbiased) {
  const Scalar m = pendulum_like();
  const TimeGrid g(1.0, 10);
  const auto cloud = gaussian_cloud(50, 9);
  auto ctrl = ControlSchedule<1>::zeros(0, 10);
  for (int i = 0; i <= 10; ++i) {
    ctrl.at(i)[0] = 0.1 * i - 0.4;
  }
  RandomStream rng(10);
  const auto sgd = average_gradient_samples(m, g, cloud, ctrl, 10000, rng);
  const auto oracle = full_gradient_oracle(m, g, cloud, ctrl, 200, RandomStream(11));
  for (std::size_t k = 0; k < ctrl.values.size(); ++k) {
    const double pooled = std::hypot(sgd.std_error.values[k][0], oracle.std_error.values[k][0]);
    EXPECT_LE(std::abs(sgd.mean.values[k][0] - oracle.mean.values[k][0]), 4.0 * pooled) << k;
  }
}

TEST(GrowthBound, SquaredGradientIsAtMostQuadraticInState) {
  LqParams p;
  const auto m = lq_model(p);
  const TimeGrid g = p.grid();
  const auto ctrl = analytic_control(p, g);
  std::vector<double> logs;
  std::vector<double> means;
  for (double r : {1.0, 2.0, 4.0, 8.0}) {
    const Vec4 x = Vec4::Constant(0.5 * r);
    const auto cloud = ParticleCloud<4>::point_mass(x, 1);
    RandomStream rng(12);
    double acc = 0.0;
    const int draws = 1000;
    for (int d = 0; d < draws; ++d) {
      const auto s = sgd_gradient_sample(m, g, ctrl, x, rng);
      for (const auto& v : s.grad.values) {
        acc += v.squaredNorm();
      }
    }
    logs.push_back(std::log(r));
    means.push_back(std::log(acc / draws));
  }
  const double mx = (logs[0] + logs[1] + logs[2] + logs[3]) / 4.0;
  const double my = (means[0] + means[1] + means[2] + means[3]) / 4.0;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    sxy += (logs[k] - mx) * (means[k] - my);
    sxx += (logs[k] - mx) * (logs[k] - mx);
  }
  EXPECT_LE(sxy / sxx, 2.3);
}

TEST(StrongConvexity, MonotoneGradientOnLqBenchmark) {
  LqParams p;
  const auto m = lq_model(p);
  const TimeGrid g = p.grid();
  const auto base = analytic_control(p, g);
  RandomStream pick(13);
  double lambda_min = std::numeric_limits<double>::infinity();
  for (int pair = 0; pair < 100; ++pair) {
    auto U = base;
    auto V = base;
    double dist2 = 0.0;
    for (std::size_t k = 0; k < base.values.size(); ++k) {
      U.values[k] += 0.5 * pick.normal_vector<4>();
      V.values[k] += 0.5 * pick.normal_vector<4>();
      dist2 += (U.values[k] - V.values[k]).squaredNorm();
    }
    // Common random numbers: both schedules see the same path noise.
    const RandomStream noise(derive_seed(14, {static_cast<std::uint64_t>(pair)}));
    const int draws = 100;
    double sum = 0.0;
    double sq = 0.0;
    for (int d = 0; d < draws; ++d) {
      RandomStream ru = noise.substream({static_cast<std::uint64_t>(d)});
      RandomStream rv = ru;
      const auto gu = sgd_gradient_sample(m, g, U, p.x0, ru).grad;
      const auto gv = sgd_gradient_sample(m, g, V, p.x0, rv).grad;
      double inner = 0.0;
      for (std::size_t k = 0; k < base.values.size(); ++k) {
        inner += (gu.values[k] - gv.values[k]).dot(U.values[k] - V.values[k]);
      }
      sum += inner;
      sq += inner * inner;
    }
    const double mean = sum / draws;
    const double se = std::sqrt(std::max(0.0, sq / draws - mean * mean) / (draws - 1));
    lambda_min = std::min(lambda_min, (mean - 3.0 * se) / dist2);
  }
  EXPECT_GT(lambda_min, 0.0);
}

TEST(OptimizeAtTime, CostNonIncreasingInIterations) {
  LqParams p;
  const auto m = lq_model(p);
  const TimeGrid g = p.grid();
  const auto cloud = ParticleCloud<4>::point_mass(p.x0, 1);
  std::vector<double> means;
  std::vector<double> ses;
  for (int L : {100, 1000, 10000}) {
    double sum = 0.0;
    double sq = 0.0;
    const int trials = 20;
    for (int trial = 0; trial < trials; ++trial) {
      SgdConfig<4> cfg;
      cfg.iterations = L;
      RandomStream rng(derive_seed(15, {static_cast<std::uint64_t>(trial)}));
      const auto ctrl = optimize_at_time(m, g, cloud, ControlSchedule<4>::zeros(0, g.steps()), cfg, rng);
      const double c = evaluate_cost(m, g, ctrl, p.x0, 500, RandomStream(16)).mean;
      sum += c;
      sq += c * c;
    }
    const double mean = sum / trials;
    means.push_back(mean);
    ses.push_back(std::sqrt(std::max(0.0, sq / trials - mean * mean) / (trials - 1)));
  }
  for (std::size_t k = 0; k + 1 < means.size(); ++k) {
    EXPECT_LE(means[k + 1], means[k] + std::hypot(ses[k], ses[k + 1])) << k;
  }
}
