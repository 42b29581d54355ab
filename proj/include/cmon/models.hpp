/*
 Copyright 2026 The cmon-rti Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#ifndef CMON_MODELS_HPP
#define CMON_MODELS_HPP

#include <cmath>
#include <concepts>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "cmon/types.hpp"

namespace cmon {

/**
 * @brief Continuous-time dynamics x' = f(x, u) with analytic Jacobians.
 *
 * `jacobian` must fill A = df/dx (nx x nx) and B = df/du (nx x nu); the
 * integrator propagates sensitivities through these.
 */
template <class D>
concept OdeDynamics = requires(const D& d, const Vector& x, const Vector& u, Matrix& A, Matrix& B) {
  { d.nx() } -> std::convertible_to<int>;
  { d.nu() } -> std::convertible_to<int>;
  { d.rhs(x, u) } -> std::convertible_to<Vector>;
  d.jacobian(x, u, A, B);
};

// ---------------------------------------------------------------------------
// Inverted pendulum on a cart
// ---------------------------------------------------------------------------

/// Cart-pole parameters. Angle 0 is the upright position.
struct PendulumParams {
  double m1 = 0.1;   // pendulum mass [kg]
  double m2 = 1.0;   // cart mass [kg]
  double l = 0.8;    // rod length [m]
  double g = 9.81;   // gravity [m/s^2]

  void validate() const {
    if (!(m1 > 0 && m2 > 0 && l > 0 && g > 0)) {
      throw ConfigError("pendulum parameters must be strictly positive");
    }
  }
};

/// Right-hand side of the cart-pole for state (p, theta, p', theta') and cart force F.
inline Vector pendulum_rhs(const Vector& state, double force, const PendulumParams& prm) {
  if (state.size() != 4) throw InvalidStateError("pendulum state must have 4 entries");
  if (!state.allFinite() || !std::isfinite(force)) {
    throw InvalidStateError("non-finite pendulum state or force");
  }
  const double s = std::sin(state(1));
  const double c = std::cos(state(1));
  const double w = state(3);
  // m2 + m1 - m1 cos^2 = m2 + m1 sin^2 >= m2 > 0
  const double den = prm.m2 + prm.m1 - prm.m1 * c * c;

  Vector out(4);
  out(0) = state(2);
  out(1) = w;
  out(2) = (-prm.m1 * prm.l * s * w * w + prm.m1 * prm.g * c * s + force) / den;
  out(3) = (force * c - prm.m1 * prm.l * c * s * w * w + (prm.m2 + prm.m1) * prm.g * s) / (prm.l * den);
  return out;
}

class PendulumDynamics {
 public:
  PendulumDynamics() = default;
  explicit PendulumDynamics(PendulumParams params) : params_(params) { params_.validate(); }

  int nx() const { return 4; }
  int nu() const { return 1; }
  const PendulumParams& params() const { return params_; }

  Vector rhs(const Vector& x, const Vector& u) const { return pendulum_rhs(x, u(0), params_); }

  void jacobian(const Vector& x, const Vector& u, Matrix& A, Matrix& B) const {
    const auto& p = params_;
    const double s = std::sin(x(1));
    const double c = std::cos(x(1));
    const double w = x(3);
    const double F = u(0);
    const double den = p.m2 + p.m1 - p.m1 * c * c;
    const double dden = 2.0 * p.m1 * s * c;

    const double n1 = -p.m1 * p.l * s * w * w + p.m1 * p.g * c * s + F;
    const double n1_th = -p.m1 * p.l * c * w * w + p.m1 * p.g * (c * c - s * s);
    const double n1_w = -2.0 * p.m1 * p.l * s * w;

    const double n2 = F * c - p.m1 * p.l * c * s * w * w + (p.m2 + p.m1) * p.g * s;
    const double n2_th = -F * s - p.m1 * p.l * (c * c - s * s) * w * w + (p.m2 + p.m1) * p.g * c;
    const double n2_w = -2.0 * p.m1 * p.l * c * s * w;

    A.setZero(4, 4);
    B.setZero(4, 1);
    A(0, 2) = 1.0;
    A(1, 3) = 1.0;
    A(2, 1) = (n1_th * den - n1 * dden) / (den * den);
    A(2, 3) = n1_w / den;
    A(3, 1) = (n2_th * den - n2 * dden) / (p.l * den * den);
    A(3, 3) = n2_w / (p.l * den);
    B(2, 0) = 1.0 / den;
    B(3, 0) = c / (p.l * den);
  }

 private:
  PendulumParams params_{};
};

// ---------------------------------------------------------------------------
// Chain of masses with nonlinear springs
// ---------------------------------------------------------------------------

/**
 * @brief Chain parameters.
 *
 * The chain has points 0..n: point 0 is fixed at `wall_anchor`, points
 * 1..n-1 are free masses with position and velocity, point n is the
 * velocity-controlled free end. State layout:
 * (p_1, ..., p_{n-1}, v_1, ..., v_{n-1}, p_n), each a 3-vector.
 */
struct ChainParams {
  int n = 5;
  double m = 0.45;
  double D = 1.0;
  double D1 = 0.1;
  double L = 0.33;
  Eigen::Vector3d gravity{0.0, 0.0, -9.81};  // acceleration vector
  Eigen::Vector3d wall_anchor{0.0, 0.0, 0.0};

  int nx() const { return 6 * (n - 1) + 3; }

  void validate() const {
    if (n < 3) throw ConfigError("chain needs at least 3 masses");
    if (!(m > 0 && D > 0 && D1 > 0 && L > 0)) {
      throw ConfigError("chain m, D, D1, L must be strictly positive");
    }
  }
};

namespace detail {

inline Eigen::Vector3d chain_point(const Vector& state, const ChainParams& prm, int i) {
  if (i == 0) return prm.wall_anchor;
  if (i == prm.n) return state.segment<3>(6 * (prm.n - 1));
  return state.segment<3>(3 * (i - 1));
}

inline double chain_distance(const Eigen::Vector3d& d) {
  const double r = d.norm();
  if (!(r > 1e-12)) throw SingularGeometryError("adjacent chain masses coincide");
  return r;
}

// Force of spring i (between points i-1 and i) as a function of d = x_i - x_{i-1}.
inline Eigen::Vector3d spring_force(const Eigen::Vector3d& d, const ChainParams& prm) {
  const double r = chain_distance(d);
  const double e = r - prm.L;
  return prm.D * d * (1.0 - prm.L / r) + prm.D1 * d * (e * e * e) / r;
}

// dF/dd = s(r) I + s'(r)/r d d^T, with F = s(r) d.
inline Eigen::Matrix3d spring_jacobian(const Eigen::Vector3d& d, const ChainParams& prm) {
  const double r = chain_distance(d);
  const double e = r - prm.L;
  const double s = prm.D * (1.0 - prm.L / r) + prm.D1 * e * e * e / r;
  const double ds = prm.D * prm.L / (r * r) + prm.D1 * (3.0 * e * e * r - e * e * e) / (r * r);
  return s * Eigen::Matrix3d::Identity() + (ds / r) * d * d.transpose();
}

}  // namespace detail

/// Chain right-hand side for the end-velocity control `u`.
inline Vector chain_rhs(const Vector& state, const Eigen::Vector3d& u, const ChainParams& prm) {
  const int n = prm.n;
  if (state.size() != prm.nx()) throw InvalidStateError("chain state has wrong length");
  if (!state.allFinite() || !u.allFinite()) throw InvalidStateError("non-finite chain state or control");

  std::vector<Eigen::Vector3d> force(static_cast<std::size_t>(n + 1));
  for (int i = 1; i <= n; ++i) {
    force[i] = detail::spring_force(detail::chain_point(state, prm, i) - detail::chain_point(state, prm, i - 1), prm);
  }

  Vector out(prm.nx());
  const int vel0 = 3 * (n - 1);
  for (int i = 1; i < n; ++i) {
    out.segment<3>(3 * (i - 1)) = state.segment<3>(vel0 + 3 * (i - 1));
    out.segment<3>(vel0 + 3 * (i - 1)) = (force[i + 1] - force[i]) / prm.m + prm.gravity;
  }
  out.segment<3>(6 * (n - 1)) = u;
  return out;
}

class ChainDynamics {
 public:
  ChainDynamics() = default;
  explicit ChainDynamics(ChainParams params) : params_(std::move(params)) { params_.validate(); }

  int nx() const { return params_.nx(); }
  int nu() const { return 3; }
  const ChainParams& params() const { return params_; }

  Vector rhs(const Vector& x, const Vector& u) const {
    return chain_rhs(x, Eigen::Vector3d(u(0), u(1), u(2)), params_);
  }

  void jacobian(const Vector& x, const Vector& /*u*/, Matrix& A, Matrix& B) const {
    const int n = params_.n;
    const int nx = params_.nx();
    const int vel0 = 3 * (n - 1);
    A.setZero(nx, nx);
    B.setZero(nx, 3);

    // Column offset of point i in the state, or -1 for the fixed anchor.
    auto col = [&](int i) { return i == 0 ? -1 : (i == n ? 6 * (n - 1) : 3 * (i - 1)); };

    std::vector<Eigen::Matrix3d> J(static_cast<std::size_t>(n + 1));
    for (int i = 1; i <= n; ++i) {
      J[i] = detail::spring_jacobian(
          detail::chain_point(x, params_, i) - detail::chain_point(x, params_, i - 1), params_);
    }
    const double inv_m = 1.0 / params_.m;
    for (int i = 1; i < n; ++i) {
      const int row = vel0 + 3 * (i - 1);
      A.block<3, 3>(3 * (i - 1), row).setIdentity();
      // v_i' = (F_{i+1} - F_i) / m + g
      A.block<3, 3>(row, col(i)) += -(J[i + 1] + J[i]) * inv_m;
      A.block<3, 3>(row, col(i + 1)) += J[i + 1] * inv_m;
      if (col(i - 1) >= 0) A.block<3, 3>(row, col(i - 1)) += J[i] * inv_m;
    }
    B.block<3, 3>(6 * (n - 1), 0).setIdentity();
  }

 private:
  ChainParams params_{};
};

/**
 * Resting configuration of the chain with the free end held at
 * `end_position`: velocities zero, force balance on every free mass.
 * Damped Newton on the force balance.
 */
inline Vector chain_steady_state(const ChainParams& prm, const Eigen::Vector3d& end_position,
                                 double tol = 1e-12, int max_iter = 200) {
  prm.validate();
  const int n = prm.n;
  const int np = 3 * (n - 1);
  Vector state = Vector::Zero(prm.nx());
  state.segment<3>(6 * (n - 1)) = end_position;
  // Hanging initial guess below the anchor-to-end segment.
  for (int i = 1; i < n; ++i) {
    const double t = static_cast<double>(i) / n;
    Eigen::Vector3d p = (1.0 - t) * prm.wall_anchor + t * end_position;
    p.z() -= 2.0 * prm.L * n * t * (1.0 - t);
    state.segment<3>(3 * (i - 1)) = p;
  }

  ChainDynamics dyn(prm);
  const Vector u0 = Vector::Zero(3);
  auto residual = [&](const Vector& s) { return Vector(dyn.rhs(s, u0).segment(np, np)); };

  Matrix A, B;
  Vector r = residual(state);
  for (int it = 0; it < max_iter && r.norm() > tol; ++it) {
    dyn.jacobian(state, u0, A, B);
    const Matrix Jp = A.block(np, 0, np, np);
    const Vector step = Jp.fullPivLu().solve(-r);
    double alpha = 1.0;
    Vector trial = state;
    Vector r_trial;
    for (int ls = 0; ls < 40; ++ls) {
      trial.head(np) = state.head(np) + alpha * step;
      try {
        r_trial = residual(trial);
        if (r_trial.norm() < (1.0 - 1e-4 * alpha) * r.norm()) break;
      } catch (const SingularGeometryError&) {
      }
      alpha *= 0.5;
    }
    state = trial;
    r = residual(state);
  }
  if (!(r.norm() <= 1e-8)) throw Error("chain steady state did not converge");
  return state;
}

/// Linear time-invariant dynamics x' = A x + B u.
class LinearDynamics {
 public:
  LinearDynamics(Matrix A, Matrix B) : A_(std::move(A)), B_(std::move(B)) {
    if (A_.rows() != A_.cols() || B_.rows() != A_.rows()) {
      throw ConfigError("linear dynamics: A must be square and B must have matching rows");
    }
  }

  int nx() const { return static_cast<int>(A_.rows()); }
  int nu() const { return static_cast<int>(B_.cols()); }

  Vector rhs(const Vector& x, const Vector& u) const {
    if (!x.allFinite() || !u.allFinite()) throw InvalidStateError("non-finite linear model input");
    return A_ * x + B_ * u;
  }

  void jacobian(const Vector&, const Vector&, Matrix& A, Matrix& B) const {
    A = A_;
    B = B_;
  }

 private:
  Matrix A_;
  Matrix B_;
};

// ---------------------------------------------------------------------------
// Optimal-control model specification
// ---------------------------------------------------------------------------

/**
 * @brief Inequality constraint g(z) <= 0 with its Jacobian.
 *
 * `eval(z, value, jac)` resizes `value` to `rows` and `jac` to rows x z.size().
 */
struct ConstraintFunction {
  int rows = 0;
  std::function<void(const Vector&, Vector&, Matrix&)> eval;

  void operator()(const Vector& z, Vector& value, Matrix& jac) const {
    if (rows == 0) {
      value.resize(0);
      jac.resize(0, z.size());
      return;
    }
    eval(z, value, jac);
  }
};

struct Bound {
  int index = 0;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
};

/// Rows z_i - upper <= 0 and lower - z_i <= 0 for every finite bound.
inline ConstraintFunction box_constraint(int dim, const std::vector<Bound>& bounds) {
  struct Row {
    int index;
    double sign;
    double offset;
  };
  std::vector<Row> rows;
  for (const Bound& b : bounds) {
    if (b.index < 0 || b.index >= dim) throw ConfigError("bound index out of range");
    if (b.lower > b.upper) throw ConfigError("bound lower exceeds upper");
    if (std::isfinite(b.upper)) rows.push_back({b.index, 1.0, -b.upper});
    if (std::isfinite(b.lower)) rows.push_back({b.index, -1.0, b.lower});
  }
  ConstraintFunction f;
  f.rows = static_cast<int>(rows.size());
  f.eval = [rows, dim](const Vector& z, Vector& value, Matrix& jac) {
    value.resize(static_cast<Eigen::Index>(rows.size()));
    jac.setZero(static_cast<Eigen::Index>(rows.size()), dim);
    for (std::size_t j = 0; j < rows.size(); ++j) {
      value(j) = rows[j].sign * z(rows[j].index) + rows[j].offset;
      jac(j, rows[j].index) = rows[j].sign;
    }
  };
  return f;
}

/**
 * @brief Dynamics plus path/terminal constraints and diagonal tracking weights.
 *
 * Stage cost 0.5 |z - z_ref|^2_W with z = (x, u) and W = diag(stage_weights);
 * terminal cost 0.5 |x_N - x_ref|^2 with diag(terminal_weights).
 */
template <OdeDynamics Dyn>
struct ModelSpec {
  Dyn dynamics;
  ConstraintFunction path;      // r(x, u) <= 0 on z = (x, u)
  ConstraintFunction terminal;  // l(x_N) <= 0
  Vector stage_weights;
  Vector terminal_weights;

  int nx() const { return dynamics.nx(); }
  int nu() const { return dynamics.nu(); }
  int nz() const { return nx() + nu(); }

  void validate() const {
    if (stage_weights.size() != nz()) throw ConfigError("stage weights must have nx + nu entries");
    if (terminal_weights.size() != nx()) throw ConfigError("terminal weights must have nx entries");
    if ((stage_weights.array() < 0).any() || (terminal_weights.array() < 0).any()) {
      throw ConfigError("weights must be nonnegative");
    }
    if (stage_weights.maxCoeff() <= 0 && terminal_weights.maxCoeff() <= 0) {
      throw ConfigError("at least one weight must be positive");
    }
  }
};

}  // namespace cmon

#endif  // CMON_MODELS_HPP
