#include <cmath>
#include <limits>
#include <string>

#include <gtest/gtest.h>

#include "pfsgd/driver.hpp"
#include "pfsgd/experiments.hpp"
#include "support/models.hpp"

using namespace pfsgd;
using support::Scalar;

namespace {

InitialSampler<Scalar> at(double x) {
  return [x](RandomStream&) { return support::s1(x); };
}

/// Mean-reverting state the control cannot move; the cost asks u to follow x.
Scalar uncontrolled() {
  Scalar m = support::linear_gaussian(-1.0, 0.5, 1.0, 0.1);
  m.running_cost = [](double, const Scalar::State& x, const Scalar::Control& u) {
    return 0.5 * (x.squaredNorm() + (u - x).squaredNorm());
  };
  m.running_cost_dx = [](double, const Scalar::State& x, const Scalar::Control& u) {
    return Scalar::State(2.0 * x - u);
  };
  m.running_cost_du = [](double, const Scalar::State& x, const Scalar::Control& u) {
    return Scalar::Control(u - x);
  };
  return m;
}

SgdConfig<4> small_lq_config(int iterations) {
  SgdConfig<4> cfg;
  cfg.iterations = iterations;
  return cfg;
}

StudyConfig small_study(Benchmark b) {
  StudyConfig cfg;
  cfg.benchmark = b;
  cfg.particle_counts = {32};
  cfg.iterations = 200;
  cfg.trials = 5;
  cfg.threads = 1;
  return cfg;
}

}  // namespace

TEST(RunPfSgd, ZeroModelStaysAtZero) {
  const Scalar m = support::zero_model<Scalar>();
  const TimeGrid g(1.0, 10);
  SgdConfig<1> cfg;
  cfg.iterations = 5;
  const auto run = run_pf_sgd(m, g, 4, cfg, at(0.0), RandomStream(1), RandomStream(2));
  ASSERT_EQ(run.applied_controls.size(), 10U);
  for (const auto& u : run.applied_controls) {
    EXPECT_EQ(u[0], 0.0);
  }
  EXPECT_EQ(run.realized_cost, 0.0);
  EXPECT_EQ(run.truth_path.states.size(), 11U);
  EXPECT_EQ(run.observations.increments.size(), 10U);
}

TEST(RunPfSgd, RetainsCloudsAndDiagnostics) {
  LqParams p;
  p.steps = 10;
  const auto m = lq_model(p);
  RunOptions opts;
  opts.retain_clouds = true;
  const auto run = run_pf_sgd(m, p.grid(), 16, small_lq_config(20),
                              InitialSampler<LqModel>([](RandomStream&) { return Vec4::Zero().eval(); }),
                              RandomStream(3), RandomStream(4), opts);
  ASSERT_EQ(run.clouds.size(), 11U);
  for (std::size_t n = 0; n < run.clouds.size(); ++n) {
    EXPECT_EQ(run.clouds[n].time_index, static_cast<int>(n));
    EXPECT_EQ(run.clouds[n].size(), 16);
  }
  EXPECT_EQ(run.diagnostics.ess.size(), 10U);
  const double kappa = run.diagnostics.kappa_hat();
  EXPECT_GT(kappa, 0.0);
  EXPECT_LE(kappa, 1.0);
  for (double e : run.diagnostics.ess) {
    EXPECT_GE(e, 1.0 - 1e-12);
    EXPECT_LE(e, 16.0 + 1e-9);
  }
}

TEST(RunPfSgd, DecisionsUseOnlyPastObservations) {
  LqParams p;
  p.steps = 10;
  const auto m = lq_model(p);
  const TimeGrid g = p.grid();
  const InitialSampler<LqModel> x0 = [](RandomStream&) { return Vec4::Zero().eval(); };
  const RandomStream algo(6);
  const auto run = run_pf_sgd(m, g, 16, small_lq_config(30), x0, RandomStream(5), algo);
  for (int k : {0, 3, 7}) {
    ObservationRecord<4> prefix;
    prefix.increments.assign(run.observations.increments.begin(),
                             run.observations.increments.begin() + k);
    const auto decisions = replay_pf_sgd(m, g, 16, small_lq_config(30), x0, prefix, algo);
    ASSERT_EQ(decisions.size(), static_cast<std::size_t>(k) + 1);
    for (int n = 0; n <= k; ++n) {
      EXPECT_EQ(decisions[static_cast<std::size_t>(n)], run.applied_controls[static_cast<std::size_t>(n)])
          << "k=" << k << " n=" << n;
    }
  }
}

TEST(RunPfSgd, TruthNoiseIndependentOfAlgorithmSeed) {
  const Scalar m = uncontrolled();
  const TimeGrid g(1.0, 20);
  SgdConfig<1> cfg;
  cfg.iterations = 10;
  const RandomStream truth(7);
  const auto a = run_pf_sgd(m, g, 8, cfg, at(0.5), truth, RandomStream(8));
  const auto b = run_pf_sgd(m, g, 8, cfg, at(0.5), truth, RandomStream(9));
  EXPECT_NE(a.applied_controls, b.applied_controls);
  EXPECT_EQ(a.truth_path.states, b.truth_path.states);
  EXPECT_EQ(a.observations.increments, b.observations.increments);

  LqParams p;
  p.steps = 10;
  const auto lq = lq_model(p);
  const InitialSampler<LqModel> x0 = [](RandomStream&) { return Vec4::Zero().eval(); };
  const auto c = run_pf_sgd(lq, p.grid(), 8, small_lq_config(10), x0, truth, RandomStream(10));
  const auto d = run_pf_sgd(lq, p.grid(), 8, small_lq_config(10), x0, truth, RandomStream(11));
  EXPECT_EQ(c.truth_path.noises, d.truth_path.noises);
}

TEST(RunPfSgd, OpenLoopSharesTruthNoise) {
  const Scalar m = uncontrolled();
  const TimeGrid g(1.0, 20);
  SgdConfig<1> cfg;
  cfg.iterations = 10;
  const RandomStream truth(12);
  const auto closed = run_pf_sgd(m, g, 8, cfg, at(0.5), truth, RandomStream(13));
  const auto open = run_open_loop(m, g, closed.applied_controls, at(0.5), truth);
  EXPECT_EQ(open.truth_path.states, closed.truth_path.states);
  EXPECT_DOUBLE_EQ(open.realized_cost, closed.realized_cost);
  EXPECT_THROW(run_open_loop(m, g, {support::c1(0.0)}, at(0.5), truth), DimensionError);
}

TEST(RunPfSgd, ColdStartIsDeterministicAndFinite) {
  LqParams p;
  p.steps = 10;
  const auto m = lq_model(p);
  auto cfg = small_lq_config(20);
  cfg.cold_start = true;
  const InitialSampler<LqModel> x0 = [](RandomStream&) { return Vec4::Zero().eval(); };
  const auto a = run_pf_sgd(m, p.grid(), 8, cfg, x0, RandomStream(14), RandomStream(15));
  const auto b = run_pf_sgd(m, p.grid(), 8, cfg, x0, RandomStream(14), RandomStream(15));
  EXPECT_EQ(a.applied_controls, b.applied_controls);
  EXPECT_TRUE(std::isfinite(a.realized_cost));
  const auto warm = run_pf_sgd(m, p.grid(), 8, small_lq_config(20), x0, RandomStream(14), RandomStream(15));
  EXPECT_EQ(warm.applied_controls.front(), a.applied_controls.front());
  EXPECT_NE(warm.applied_controls.back(), a.applied_controls.back());
}

TEST(RunPfSgd, ErrorsNameTheStep) {
  Scalar m = support::zero_model<Scalar>();
  m.drift = [](double t, const Scalar::State&, const Scalar::Control&) {
    return support::s1(t > 0.25 ? std::numeric_limits<double>::infinity() : 0.0);
  };
  const TimeGrid g(1.0, 10);
  SgdConfig<1> cfg;
  cfg.iterations = 1;
  try {
    run_pf_sgd(m, g, 2, cfg, at(0.0), RandomStream(1), RandomStream(2));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
  EXPECT_THROW(run_pf_sgd(m, g, 0, cfg, at(0.0), RandomStream(1), RandomStream(2)), ConfigError);
}

TEST(RunPfSgd, BeatsZeroControlOnLq) {
  double cost = 0.0;
  double zero = 0.0;
  const auto cfg = small_study(Benchmark::lq);
  for (int trial = 0; trial < cfg.trials; ++trial) {
    const auto o = run_trial(cfg, 32, trial);
    cost += o.row.cost;
    zero += o.zero_control_cost;
  }
  EXPECT_LT(cost, zero);
}

TEST(RunPfSgd, BeatsZeroControlOnDubins) {
  double cost = 0.0;
  double zero = 0.0;
  const auto cfg = small_study(Benchmark::dubins);
  for (int trial = 0; trial < cfg.trials; ++trial) {
    const auto o = run_trial(cfg, 32, trial);
    cost += o.row.cost;
    zero += o.zero_control_cost;
  }
  EXPECT_LT(cost, zero);
}
