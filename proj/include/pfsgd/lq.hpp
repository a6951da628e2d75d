#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/LU>

#include "pfsgd/errors.hpp"
#include "pfsgd/model.hpp"
#include "pfsgd/time_grid.hpp"

namespace pfsgd {

using LqModel = ModelSpec<4, 4, 1, 4>;
using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;

/// Four-dimensional linear-quadratic tracking problem
///   dX = A (u - r(t)) dt + sigma B u dW,   dM = sin(X) dt + dB
/// with cost  int 1/2 |R^(1/2)(X - X*)|^2 + 1/2 u'Ku dt + 1/2 X_T'Q X_T.
struct LqParams {
  Mat4 A = default_drift_matrix();
  Mat4 B = Mat4::Identity();
  Mat4 R = Mat4::Identity();
  Mat4 K = Mat4::Identity();
  Mat4 Q = Mat4::Identity();
  double sigma = 0.1;
  double T = 1.0;
  int steps = 50;
  Vec4 x0 = Vec4::Zero();
  double obs_variance = 1.0;

  static Mat4 default_drift_matrix() {
    Mat4 a = Mat4::Constant(0.2);
    a.diagonal().setOnes();
    return a;
  }

  TimeGrid grid() const { return TimeGrid(T, steps); }

  void validate() const {
    auto spd = [](const Mat4& m) {
      return m.isApprox(m.transpose(), 1e-12) && Eigen::LLT<Mat4>(m).info() == Eigen::Success;
    };
    if (!spd(B) || !spd(K)) {
      throw ConfigError("LqParams: B and K must be symmetric positive definite");
    }
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
      throw ConfigError("LqParams: sigma must be positive (alpha_t / sigma^2 is singular at 0)");
    }
    if (!(T > 0.0) || steps < 1) {
      throw ConfigError("LqParams: need T > 0 and at least one step");
    }
    if (!(obs_variance > 0.0)) {
      throw ConfigError("LqParams: observation variance must be positive");
    }
    if (!A.allFinite() || !x0.allFinite()) {
      throw ConfigError("LqParams: non-finite A or x0");
    }
  }

  /// The closed-form reference needs B = R = K = Q = I.
  void require_identity_weights() const {
    const Mat4 id = Mat4::Identity();
    if (B != id || R != id || K != id || Q != id) {
      throw ConfigError("LqParams: closed-form reference requires B = R = K = Q = I");
    }
  }
};

/// Closed-form ingredients of the optimal solution for B = R = K = Q = I, X_0 = 0.
class LqSolution {
 public:
  explicit LqSolution(const LqParams& p) : p_(p) {
    p_.validate();
    p_.require_identity_weights();
    const double c = alpha(p_.T) / (p_.sigma * p_.sigma);
    const Mat4 a2 = p_.A * p_.A;
    const Vec4 vT = w(p_.T);
    terminal_ = (Mat4::Identity() + c * a2).partialPivLu().solve(c * a2 * vT);
    direction_ = a2 * (vT - terminal_);
  }

  const LqParams& params() const { return p_; }

  /// w(t) = (t^2/2, sin t, t^3/3, cos 2 pi t), an antiderivative of delta.
  static Vec4 w(double t) {
    return {0.5 * t * t, std::sin(t), t * t * t / 3.0, std::cos(2.0 * std::numbers::pi * t)};
  }

  /// delta(t) = X*_t - X_t = (t, cos t, t^2, -2 pi sin 2 pi t).
  static Vec4 delta(double t) {
    return {t, std::cos(t), t * t,
            -2.0 * std::numbers::pi * std::sin(2.0 * std::numbers::pi * t)};
  }

  double beta(double t) const {
    const double s2 = p_.sigma * p_.sigma;
    return (1.0 + s2) + s2 * (p_.T - t);
  }

  double alpha(double t) const {
    const double s2 = p_.sigma * p_.sigma;
    return std::log((1.0 + s2 + s2 * p_.T) / ((1.0 + s2) + s2 * (p_.T - t)));
  }

  /// Tracking offset r(t) = A r_hat(t), r_hat = -w(t) / beta_t.
  Vec4 offset(double t) const { return p_.A * (-w(t) / beta(t)); }

  /// X_T of the optimal mean path.
  const Vec4& terminal_state() const { return terminal_; }

  /// Optimal mean path X_t = (alpha_t / sigma^2) A^2 (v_T - X_T).
  Vec4 mean_path(double t) const { return alpha(t) / (p_.sigma * p_.sigma) * direction_; }

  /// Target X*_t = delta(t) + X_t.
  Vec4 target(double t) const { return delta(t) + mean_path(t); }

  /// Costate p(t) = X_T + int_t^T (X_s - X*_s) ds = X_T - v_T + w(t).
  Vec4 costate(double t) const { return terminal_ - w(p_.T) + w(t); }

  /// u*(t) = -A p(t) / beta_t.
  Vec4 control(double t) const { return -p_.A * costate(t) / beta(t); }

 private:
  LqParams p_;
  Vec4 terminal_;
  Vec4 direction_;
};

enum class LqNoise { on, off };

/// Model of the LQ benchmark. With LqNoise::off the diffusion is dropped while
/// the target and offset keep their sigma-dependent form.
inline LqModel lq_model(const LqParams& params, LqNoise noise = LqNoise::on) {
  params.validate();
  LqModel m;
  const Mat4 A = params.A;
  const Mat4 B = params.B;
  const Mat4 R = params.R;
  const Mat4 K = params.K;
  const Mat4 Q = params.Q;
  const double sigma = noise == LqNoise::on ? params.sigma : 0.0;

  // The target path uses the identity-weight closed form; only the offsets and
  // target matter here, so build them from a copy with identity weights.
  LqParams shape = params;
  shape.B = shape.R = shape.K = shape.Q = Mat4::Identity();
  const auto sol = std::make_shared<const LqSolution>(shape);

  m.drift = [A, sol](double t, const Vec4&, const Vec4& u) -> Vec4 {
    return A * (u - sol->offset(t));
  };
  m.diffusion = [B, sigma](double, const Vec4&, const Vec4& u) -> LqModel::Diffusion {
    return sigma * B * u;
  };
  m.drift_du = [A](double, const Vec4&, const Vec4&) -> Mat4 { return A; };
  if (sigma != 0.0) {
    m.diffusion_du = [B, sigma](double, const Vec4&, const Vec4&) {
      LqModel::DiffusionControlJacobian j;
      j[0] = sigma * B;
      return j;
    };
  }
  m.running_cost = [R, K, sol](double t, const Vec4& x, const Vec4& u) {
    const Vec4 e = x - sol->target(t);
    return 0.5 * e.dot(R * e) + 0.5 * u.dot(K * u);
  };
  m.running_cost_dx = [R, sol](double t, const Vec4& x, const Vec4&) -> Vec4 {
    return R * (x - sol->target(t));
  };
  m.running_cost_du = [K](double, const Vec4&, const Vec4& u) -> Vec4 { return K * u; };
  m.terminal_cost = [Q](const Vec4& x) { return 0.5 * x.dot(Q * x); };
  m.terminal_cost_dx = [Q](const Vec4& x) -> Vec4 { return Q * x; };
  m.observation = [](const Vec4& x) -> Vec4 { return x.array().sin().matrix(); };
  m.observation_noise = {ObservationNoise::Kind::increment, params.obs_variance};
  return m;
}

/// Target X*_{t_i} at every grid node.
inline std::vector<Vec4> target_path(const LqParams& params, const TimeGrid& grid) {
  const LqSolution sol(params);
  std::vector<Vec4> out;
  out.reserve(static_cast<std::size_t>(grid.steps()) + 1);
  for (double t : grid.nodes()) {
    out.push_back(sol.target(t));
  }
  return out;
}

/// Closed-form optimal control u*(t_i), i = 0..N.
inline ControlSchedule<4> analytic_control(const LqParams& params, const TimeGrid& grid) {
  const LqSolution sol(params);
  ControlSchedule<4> c;
  c.start_index = 0;
  c.values.reserve(static_cast<std::size_t>(grid.steps()) + 1);
  for (double t : grid.nodes()) {
    c.values.push_back(sol.control(t));
  }
  return c;
}

struct FbodeSolution {
  ControlSchedule<4> controls;
  std::vector<Vec4> states;
  /// Reciprocal condition estimate of the assembled system.
  double rcond = 0.0;
};

/// Discrete forward-backward reference from state y_start at t_n.
///
/// Unknowns X_{n+1..N}; for i = n..N-1
///   X_{i+1} - X_i + dt a_i A^2 P_i + dt A r_i = 0,
///   P_i = X_N + dt sum_{k=i+1}^{N} (X_k - X*_k),   a_i = 1 / (sigma^2 (T - t_i) + 1 + sigma^2),
/// and u_i = -a_i A P_i. This is the exact minimizer of the expected discrete
/// cost over deterministic schedules.
inline FbodeSolution solve_reference_fbode(const LqParams& params, const TimeGrid& grid,
                                           const Vec4& y_start, int n) {
  const LqSolution sol(params);
  const int N = grid.steps();
  if (n < 0 || n >= N) {
    throw DimensionError("solve_reference_fbode: start index must lie in [0, N)");
  }
  const int blocks = N - n;
  const double dt = grid.dt();
  const double s2 = params.sigma * params.sigma;
  const Mat4 A = params.A;
  const Mat4 A2 = A * A;
  auto a_of = [&](int i) { return 1.0 / (s2 * (params.T - grid.node(i)) + 1.0 + s2); };
  auto col = [&](int k) { return 4 * (k - n - 1); };

  std::vector<Vec4> target(static_cast<std::size_t>(N) + 1);
  for (int k = 0; k <= N; ++k) {
    target[static_cast<std::size_t>(k)] = sol.target(grid.node(k));
  }

  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(4 * blocks, 4 * blocks);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(4 * blocks);
  for (int i = n; i < N; ++i) {
    const int row = 4 * (i - n);
    const double a = a_of(i);
    M.block<4, 4>(row, col(i + 1)) += Mat4::Identity();
    if (i > n) {
      M.block<4, 4>(row, col(i)) -= Mat4::Identity();
    } else {
      rhs.segment<4>(row) += y_start;
    }
    M.block<4, 4>(row, col(N)) += dt * a * A2;
    Vec4 target_sum = Vec4::Zero();
    for (int k = i + 1; k <= N; ++k) {
      M.block<4, 4>(row, col(k)) += dt * dt * a * A2;
      target_sum += target[static_cast<std::size_t>(k)];
    }
    rhs.segment<4>(row) += -dt * A * sol.offset(grid.node(i)) + dt * dt * a * A2 * target_sum;
  }

  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(M);
  FbodeSolution out;
  out.rcond = lu.rcond();
  if (!(out.rcond > 1e-14)) {
    throw NumericError("solve_reference_fbode: singular system, rcond = " +
                       std::to_string(out.rcond));
  }
  const Eigen::VectorXd x = lu.solve(rhs);

  out.states.reserve(static_cast<std::size_t>(blocks) + 1);
  out.states.push_back(y_start);
  for (int k = n + 1; k <= N; ++k) {
    out.states.push_back(x.segment<4>(col(k)));
  }
  out.controls.start_index = n;
  out.controls.values.resize(static_cast<std::size_t>(blocks) + 1);
  const Vec4& xN = out.states.back();
  Vec4 running = Vec4::Zero();
  out.controls.values.back() = -a_of(N) * A * xN;
  for (int i = N - 1; i >= n; --i) {
    running += dt * (out.states[static_cast<std::size_t>(i + 1 - n)] -
                     target[static_cast<std::size_t>(i + 1)]);
    out.controls.values[static_cast<std::size_t>(i - n)] = -a_of(i) * A * (xN + running);
  }
  return out;
}

}  // namespace pfsgd
