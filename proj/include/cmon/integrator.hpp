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

// Fixed-step explicit RK4 over one shooting interval.
//
// Sensitivities are exact derivatives of the discrete scheme: the forward
// routine propagates the variational equations through every stage, the
// adjoint routine runs the transposed recursion backwards. Both therefore
// agree to round-off for any seed.

#ifndef CMON_INTEGRATOR_HPP
#define CMON_INTEGRATOR_HPP

#include <utility>
#include <vector>

#include "cmon/models.hpp"
#include "cmon/types.hpp"

namespace cmon {

struct IntegratorConfig {
  int steps_per_interval = 4;
  double interval_length = 0.05;

  void validate() const {
    if (steps_per_interval < 1) throw ConfigError("steps_per_interval must be >= 1");
    if (!(interval_length > 0)) throw ConfigError("interval_length must be > 0");
  }
};

/// Jacobian block d(phi)/d(x0, u) of one shooting interval.
struct SensitivityBlock {
  Matrix value;
  bool stale = true;
};

namespace detail {

inline void check_finite(const Vector& v) {
  if (!v.allFinite()) throw IntegrationBlowupError("non-finite state during integration");
}

inline void check_inputs(const Vector& x0, const Vector& u, int nx, int nu) {
  if (x0.size() != nx || u.size() != nu) throw InvalidStateError("integrator input has wrong dimension");
  if (!x0.allFinite() || !u.allFinite()) throw InvalidStateError("non-finite integrator input");
}

}  // namespace detail

template <OdeDynamics Dyn>
Vector integrate(const Dyn& model, const Vector& x0, const Vector& u, const IntegratorConfig& cfg) {
  detail::check_inputs(x0, u, model.nx(), model.nu());
  const double h = cfg.interval_length / cfg.steps_per_interval;
  Vector x = x0;
  for (int s = 0; s < cfg.steps_per_interval; ++s) {
    const Vector k1 = model.rhs(x, u);
    const Vector k2 = model.rhs(x + 0.5 * h * k1, u);
    const Vector k3 = model.rhs(x + 0.5 * h * k2, u);
    const Vector k4 = model.rhs(x + h * k3, u);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    detail::check_finite(x);
  }
  return x;
}

template <OdeDynamics Dyn>
std::pair<Vector, SensitivityBlock> integrate_with_forward_sensitivity(const Dyn& model, const Vector& x0,
                                                                      const Vector& u,
                                                                      const IntegratorConfig& cfg) {
  const int nx = model.nx();
  const int nu = model.nu();
  detail::check_inputs(x0, u, nx, nu);
  const double h = cfg.interval_length / cfg.steps_per_interval;

  Vector x = x0;
  Matrix S = Matrix::Zero(nx, nx + nu);
  S.leftCols(nx).setIdentity();
  Matrix A, B;
  Matrix dk1, dk2, dk3, dk4;

  // dk = A dy + [0 | B], where dy is the stage-point sensitivity.
  auto stage = [&](const Vector& y, const Matrix& dy, Matrix& dk) {
    model.jacobian(y, u, A, B);
    dk.noalias() = A * dy;
    dk.rightCols(nu) += B;
  };

  for (int s = 0; s < cfg.steps_per_interval; ++s) {
    const Vector k1 = model.rhs(x, u);
    stage(x, S, dk1);
    const Vector y2 = x + 0.5 * h * k1;
    const Vector k2 = model.rhs(y2, u);
    stage(y2, S + 0.5 * h * dk1, dk2);
    const Vector y3 = x + 0.5 * h * k2;
    const Vector k3 = model.rhs(y3, u);
    stage(y3, S + 0.5 * h * dk2, dk3);
    const Vector y4 = x + h * k3;
    const Vector k4 = model.rhs(y4, u);
    stage(y4, S + h * dk3, dk4);

    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    S += (h / 6.0) * (dk1 + 2.0 * dk2 + 2.0 * dk3 + dk4);
    detail::check_finite(x);
  }
  if (!S.allFinite()) throw IntegrationBlowupError("non-finite sensitivity");
  return {std::move(x), SensitivityBlock{std::move(S), false}};
}

/// seed^T d(phi)/d(x0, u), by the reverse sweep of the RK4 recursion.
template <OdeDynamics Dyn>
RowVector adjoint_directional_sensitivity(const Dyn& model, const Vector& x0, const Vector& u,
                                          const IntegratorConfig& cfg, const Vector& seed) {
  const int nx = model.nx();
  const int nu = model.nu();
  detail::check_inputs(x0, u, nx, nu);
  if (seed.size() != nx) throw InvalidStateError("adjoint seed has wrong dimension");
  const double h = cfg.interval_length / cfg.steps_per_interval;
  const int steps = cfg.steps_per_interval;

  // Forward sweep: keep the four stage points of every step.
  std::vector<Vector> points(static_cast<std::size_t>(4 * steps));
  Vector x = x0;
  for (int s = 0; s < steps; ++s) {
    const Vector k1 = model.rhs(x, u);
    const Vector y2 = x + 0.5 * h * k1;
    const Vector k2 = model.rhs(y2, u);
    const Vector y3 = x + 0.5 * h * k2;
    const Vector k3 = model.rhs(y3, u);
    const Vector y4 = x + h * k3;
    const Vector k4 = model.rhs(y4, u);
    points[4 * s + 0] = x;
    points[4 * s + 1] = y2;
    points[4 * s + 2] = y3;
    points[4 * s + 3] = y4;
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    detail::check_finite(x);
  }

  Vector lam = seed;
  Vector ubar = Vector::Zero(nu);
  Matrix A, B;
  for (int s = steps - 1; s >= 0; --s) {
    Vector xbar = lam;
    Vector kbar1 = (h / 6.0) * lam;
    Vector kbar2 = (h / 3.0) * lam;
    Vector kbar3 = (h / 3.0) * lam;
    const Vector kbar4 = (h / 6.0) * lam;

    model.jacobian(points[4 * s + 3], u, A, B);
    Vector ybar = A.transpose() * kbar4;
    ubar.noalias() += B.transpose() * kbar4;
    xbar += ybar;
    kbar3 += h * ybar;

    model.jacobian(points[4 * s + 2], u, A, B);
    ybar.noalias() = A.transpose() * kbar3;
    ubar.noalias() += B.transpose() * kbar3;
    xbar += ybar;
    kbar2 += 0.5 * h * ybar;

    model.jacobian(points[4 * s + 1], u, A, B);
    ybar.noalias() = A.transpose() * kbar2;
    ubar.noalias() += B.transpose() * kbar2;
    xbar += ybar;
    kbar1 += 0.5 * h * ybar;

    model.jacobian(points[4 * s + 0], u, A, B);
    ybar.noalias() = A.transpose() * kbar1;
    ubar.noalias() += B.transpose() * kbar1;
    xbar += ybar;

    lam = xbar;
  }

  RowVector out(nx + nu);
  out.head(nx) = lam.transpose();
  out.tail(nu) = ubar.transpose();
  return out;
}

}  // namespace cmon

#endif  // CMON_INTEGRATOR_HPP
