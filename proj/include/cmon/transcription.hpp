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

// Multiple-shooting transcription.
//
// Decision vector w = (x_0, u_0, ..., x_{N-1}, u_{N-1}, x_N). Equality rows
// are B(w) = (x_0 - x_hat, phi_0(z_0) - x_1, ..., phi_{N-1}(z_{N-1}) - x_N),
// inequality rows stack the path constraint of every stage followed by the
// terminal constraint. The QP is posed in increments: its gradient is the
// full Lagrangian gradient at (w, lambda, mu) while the equality rows carry
// the (possibly stale) Jacobian blocks.

#ifndef CMON_TRANSCRIPTION_HPP
#define CMON_TRANSCRIPTION_HPP

#include <cmath>
#include <utility>
#include <vector>

#include "cmon/integrator.hpp"
#include "cmon/models.hpp"
#include "cmon/sensitivity_store.hpp"
#include "cmon/types.hpp"

namespace cmon {

template <OdeDynamics Dyn>
struct ShootingProblem {
  ModelSpec<Dyn> model;
  IntegratorConfig integrator;
  int horizon = 0;

  int nx() const { return model.nx(); }
  int nu() const { return model.nu(); }
  int nz() const { return model.nz(); }
  int n_w() const { return horizon * nz() + nx(); }
  int n_eq() const { return (horizon + 1) * nx(); }
  int n_in() const { return horizon * model.path.rows + model.terminal.rows; }

  void validate() const {
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    model.validate();
    integrator.validate();
  }
};

struct Trajectory {
  int N = 0;
  int nx = 0;
  int nu = 0;
  Vector w;

  static Trajectory zeros(int N, int nx, int nu) {
    Trajectory t{N, nx, nu, Vector::Zero(N * (nx + nu) + nx)};
    return t;
  }

  int nz() const { return nx + nu; }
  int size() const { return static_cast<int>(w.size()); }

  auto node(int k) { return w.segment(k * nz(), nz()); }
  auto node(int k) const { return w.segment(k * nz(), nz()); }
  auto x(int k) { return w.segment(k * nz(), nx); }
  auto x(int k) const { return w.segment(k * nz(), nx); }
  auto u(int k) { return w.segment(k * nz() + nx, nu); }
  auto u(int k) const { return w.segment(k * nz() + nx, nu); }

  void validate() const {
    if (N < 1 || w.size() != N * (nx + nu) + nx) throw InvalidStateError("trajectory length does not match horizon");
    if (!w.allFinite()) throw InvalidStateError("trajectory has non-finite entries");
  }
};

struct Multipliers {
  Vector lambda;  // (N + 1) * nx, embedding row block first
  Vector mu;      // stage path rows then terminal rows, nonnegative

  static Multipliers zeros(int n_eq, int n_in) { return {Vector::Zero(n_eq), Vector::Zero(n_in)}; }
};

/// Per-node tracking targets: z_ref for every stage, x_ref for the terminal node.
struct Reference {
  std::vector<Vector> stage;
  Vector terminal;

  static Reference constant(int N, const Vector& z_ref, const Vector& x_ref) {
    return {std::vector<Vector>(static_cast<std::size_t>(N), z_ref), x_ref};
  }
};

/// Values of the shooting nodes at the current linearization point.
struct NodeEvaluation {
  std::vector<Vector> phi;          // phi_k(z_k)
  std::vector<RowVector> adjoint;   // lambda_{k+1}^T d(phi_k)/d(z_k), exact
};

struct QPData {
  int N = 0;
  int nx = 0;
  int nu = 0;
  std::vector<Matrix> hessian;         // N stage blocks, then the terminal block
  Vector gradient;                     // Lagrangian gradient at (w, lambda, mu)
  Vector lambda;                       // multipliers the gradient was built with
  Vector mu;
  Vector residuals;                    // B(w)
  std::vector<Matrix> jacobian;        // blocks used in the equality rows
  std::vector<Vector> ineq_values;     // C_k(w), N stages then terminal
  std::vector<Matrix> ineq_jacobian;   // dC_k / dz_k (terminal: dC_N / dx_N)
  Vector measurement;

  int nz() const { return nx + nu; }
  int n_w() const { return N * nz() + nx; }
  int n_eq() const { return (N + 1) * nx; }
  int n_in() const {
    int n = 0;
    for (const auto& v : ineq_values) n += static_cast<int>(v.size());
    return n;
  }
  int ineq_offset(int k) const {
    int n = 0;
    for (int j = 0; j < k; ++j) n += static_cast<int>(ineq_values[j].size());
    return n;
  }

  Vector ineq_stacked() const {
    Vector c(n_in());
    int off = 0;
    for (const auto& v : ineq_values) {
      c.segment(off, v.size()) = v;
      off += static_cast<int>(v.size());
    }
    return c;
  }

  /// Dense equality Jacobian with the banded layout.
  Matrix dense_eq_jacobian() const {
    Matrix E = Matrix::Zero(n_eq(), n_w());
    E.block(0, 0, nx, nx).setIdentity();
    for (int k = 0; k < N; ++k) {
      E.block((k + 1) * nx, k * nz(), nx, nz()) = jacobian[k];
      E.block((k + 1) * nx, (k + 1) * nz(), nx, nx) = -Matrix::Identity(nx, nx);
    }
    return E;
  }

  Matrix dense_ineq_jacobian() const {
    Matrix D = Matrix::Zero(n_in(), n_w());
    int off = 0;
    for (int k = 0; k <= N; ++k) {
      const Matrix& J = ineq_jacobian[k];
      D.block(off, k * nz(), J.rows(), J.cols()) = J;
      off += static_cast<int>(J.rows());
    }
    return D;
  }

  Matrix dense_hessian() const {
    Matrix H = Matrix::Zero(n_w(), n_w());
    for (int k = 0; k < N; ++k) H.block(k * nz(), k * nz(), nz(), nz()) = hessian[k];
    H.block(N * nz(), N * nz(), nx, nx) = hessian[N];
    return H;
  }
};

/// Increments returned by the QP solver, in the layout of QPData.
struct QPSolution {
  Vector dw;
  Vector dlambda;
  Vector dmu;
  std::vector<int> active_set;
  Vector slack;            // -(C + dC dw) at the solution
  double kkt_residual = 0.0;
  int iterations = 0;
};

template <OdeDynamics Dyn>
std::vector<Matrix> gauss_newton_hessian(const ShootingProblem<Dyn>& prob) {
  std::vector<Matrix> blocks;
  blocks.reserve(static_cast<std::size_t>(prob.horizon + 1));
  const Matrix stage = prob.model.stage_weights.asDiagonal();
  for (int k = 0; k < prob.horizon; ++k) blocks.push_back(stage);
  blocks.push_back(prob.model.terminal_weights.asDiagonal());
  return blocks;
}

namespace detail {

template <OdeDynamics Dyn>
void check_shapes(const ShootingProblem<Dyn>& prob, const Trajectory& traj, const Multipliers& mult,
                  const Vector& x_hat, const Reference& ref) {
  const int N = prob.horizon;
  if (traj.N != N || traj.nx != prob.nx() || traj.nu != prob.nu() || traj.w.size() != prob.n_w()) {
    throw AssemblyError("trajectory does not match the problem dimensions");
  }
  if (mult.lambda.size() != prob.n_eq() || mult.mu.size() != prob.n_in()) {
    throw AssemblyError("multipliers do not match the problem dimensions");
  }
  if (x_hat.size() != prob.nx()) throw AssemblyError("measurement has wrong dimension");
  if (static_cast<int>(ref.stage.size()) != N || ref.terminal.size() != prob.nx()) {
    throw AssemblyError("reference does not match the horizon");
  }
  for (const auto& r : ref.stage) {
    if (r.size() != prob.nz()) throw AssemblyError("stage reference has wrong dimension");
  }
}

}  // namespace detail

/// phi_k for every node plus exact lambda_{k+1}^T dphi_k rows via adjoint sweeps.
template <OdeDynamics Dyn>
NodeEvaluation evaluate_nodes(const ShootingProblem<Dyn>& prob, const Trajectory& traj, const Multipliers& mult) {
  const int N = prob.horizon;
  const int nx = prob.nx();
  NodeEvaluation ev;
  ev.phi.resize(static_cast<std::size_t>(N));
  ev.adjoint.resize(static_cast<std::size_t>(N));
  for (int k = 0; k < N; ++k) {
    const Vector xk = traj.x(k);
    const Vector uk = traj.u(k);
    ev.phi[k] = integrate(prob.model.dynamics, xk, uk, prob.integrator);
    ev.adjoint[k] = adjoint_directional_sensitivity(prob.model.dynamics, xk, uk, prob.integrator,
                                                    mult.lambda.segment((k + 1) * nx, nx));
  }
  return ev;
}

/// Store whose blocks are all evaluated at the nodes of `traj`.
template <OdeDynamics Dyn>
SensitivityStore exact_store(const ShootingProblem<Dyn>& prob, const Trajectory& traj) {
  SensitivityStore store = SensitivityStore::empty(prob.horizon, prob.nx(), prob.nu());
  for (int k = 0; k < prob.horizon; ++k) {
    auto res = integrate_with_forward_sensitivity(prob.model.dynamics, Vector(traj.x(k)), Vector(traj.u(k)),
                                                  prob.integrator);
    store.blocks[k] = std::move(res.second);
    store.prev_phi[k] = std::move(res.first);
  }
  store.filled = true;
  return store;
}

/// Gradient of L = A + lambda^T B + mu^T C, with the dynamics contribution
/// supplied as the exact rows lambda_{k+1}^T dphi_k.
template <OdeDynamics Dyn>
Vector lagrangian_gradient(const ShootingProblem<Dyn>& prob, const Trajectory& traj, const Multipliers& mult,
                           const Reference& ref, const std::vector<RowVector>& adjoint) {
  const int N = prob.horizon;
  const int nx = prob.nx();
  const int nz = prob.nz();
  const auto& model = prob.model;
  Vector grad(prob.n_w());
  Vector cval;
  Matrix cjac;
  int moff = 0;
  for (int k = 0; k < N; ++k) {
    const Vector zk = traj.node(k);
    auto gk = grad.segment(k * nz, nz);
    gk = model.stage_weights.cwiseProduct(zk - ref.stage[k]);
    gk += adjoint[k].transpose();
    gk.head(nx) -= mult.lambda.segment(k * nx, nx) * (k == 0 ? -1.0 : 1.0);
    model.path(zk, cval, cjac);
    if (cval.size() > 0) gk += cjac.transpose() * mult.mu.segment(moff, cval.size());
    moff += static_cast<int>(cval.size());
  }
  auto gN = grad.segment(N * nz, nx);
  const Vector xN = traj.x(N);
  gN = model.terminal_weights.cwiseProduct(xN - ref.terminal) - mult.lambda.segment(N * nx, nx);
  model.terminal(xN, cval, cjac);
  if (cval.size() > 0) gN += cjac.transpose() * mult.mu.segment(moff, cval.size());
  return grad;
}

/**
 * Assemble the increment-form QP at (traj, mult).
 *
 * `eval` must hold phi_k at the current nodes and the exact adjoint rows;
 * only the Jacobian blocks taken from `store` may be stale.
 */
template <OdeDynamics Dyn>
QPData build_qp(const ShootingProblem<Dyn>& prob, const Trajectory& traj, const Multipliers& mult,
                const Vector& x_hat, const Reference& ref, const SensitivityStore& store,
                const NodeEvaluation& eval) {
  detail::check_shapes(prob, traj, mult, x_hat, ref);
  const int N = prob.horizon;
  const int nx = prob.nx();
  if (store.size() != N || static_cast<int>(eval.phi.size()) != N || static_cast<int>(eval.adjoint.size()) != N) {
    throw AssemblyError("store or node evaluation does not match the horizon");
  }

  QPData qp;
  qp.N = N;
  qp.nx = nx;
  qp.nu = prob.nu();
  qp.hessian = gauss_newton_hessian(prob);
  qp.gradient = lagrangian_gradient(prob, traj, mult, ref, eval.adjoint);
  qp.lambda = mult.lambda;
  qp.mu = mult.mu;
  qp.measurement = x_hat;

  qp.residuals.resize(prob.n_eq());
  qp.residuals.head(nx) = traj.x(0) - x_hat;
  qp.jacobian.resize(static_cast<std::size_t>(N));
  for (int k = 0; k < N; ++k) {
    const Matrix& J = store.blocks[k].value;
    if (J.rows() != nx || J.cols() != prob.nz()) throw AssemblyError("Jacobian block has wrong shape");
    if (eval.phi[k].size() != nx) throw AssemblyError("node value has wrong dimension");
    qp.jacobian[k] = J;
    qp.residuals.segment((k + 1) * nx, nx) = eval.phi[k] - traj.x(k + 1);
  }

  qp.ineq_values.resize(static_cast<std::size_t>(N + 1));
  qp.ineq_jacobian.resize(static_cast<std::size_t>(N + 1));
  for (int k = 0; k < N; ++k) prob.model.path(Vector(traj.node(k)), qp.ineq_values[k], qp.ineq_jacobian[k]);
  prob.model.terminal(Vector(traj.x(N)), qp.ineq_values[N], qp.ineq_jacobian[N]);
  if (qp.n_in() != prob.n_in()) throw AssemblyError("constraint function returned the wrong row count");
  return qp;
}

/// Full-step update of primal and dual iterates.
inline std::pair<Trajectory, Multipliers> apply_step(const Trajectory& traj, const Multipliers& mult,
                                                     const QPSolution& sol, double mu_tol = 1e-8) {
  if (sol.dw.size() != traj.w.size() || sol.dlambda.size() != mult.lambda.size() ||
      sol.dmu.size() != mult.mu.size()) {
    throw AssemblyError("QP solution does not match the iterate dimensions");
  }
  Trajectory t = traj;
  t.w += sol.dw;
  Multipliers m{mult.lambda + sol.dlambda, mult.mu + sol.dmu};
  if (m.mu.size() > 0 && m.mu.minCoeff() < -mu_tol) {
    throw ContractViolationError("inequality multiplier update went negative");
  }
  m.mu = m.mu.cwiseMax(0.0);
  return {std::move(t), std::move(m)};
}

/// Constraint values B(w) and C(w) stacked.
template <OdeDynamics Dyn>
std::pair<Vector, Vector> constraint_values(const ShootingProblem<Dyn>& prob, const Trajectory& traj,
                                            const Vector& x_hat, const std::vector<Vector>& phi) {
  const int N = prob.horizon;
  const int nx = prob.nx();
  Vector B(prob.n_eq());
  B.head(nx) = traj.x(0) - x_hat;
  for (int k = 0; k < N; ++k) B.segment((k + 1) * nx, nx) = phi[k] - traj.x(k + 1);
  Vector C(prob.n_in());
  Vector v;
  Matrix J;
  int off = 0;
  for (int k = 0; k < N; ++k) {
    prob.model.path(Vector(traj.node(k)), v, J);
    C.segment(off, v.size()) = v;
    off += static_cast<int>(v.size());
  }
  prob.model.terminal(Vector(traj.x(N)), v, J);
  C.segment(off, v.size()) = v;
  return {B, C};
}

/// Tracking objective 1/2 sum_k |z_k - z_ref|_W^2 + 1/2 |x_N - x_ref|_WN^2 and its gradient.
template <OdeDynamics Dyn>
double tracking_cost(const ShootingProblem<Dyn>& prob, const Trajectory& traj, const Reference& ref,
                     Vector* grad = nullptr) {
  const int N = prob.horizon;
  const int nz = prob.nz();
  const auto& model = prob.model;
  if (grad) grad->resize(prob.n_w());
  double f = 0.0;
  for (int k = 0; k < N; ++k) {
    const Vector e = traj.node(k) - ref.stage[k];
    const Vector we = model.stage_weights.cwiseProduct(e);
    f += 0.5 * e.dot(we);
    if (grad) grad->segment(k * nz, nz) = we;
  }
  const Vector e = traj.x(N) - ref.terminal;
  const Vector we = model.terminal_weights.cwiseProduct(e);
  f += 0.5 * e.dot(we);
  if (grad) grad->tail(prob.nx()) = we;
  return f;
}

/**
 * NLP optimality indicator: || (grad_w L, B(w), max(C(w), 0)) || with the
 * Lagrangian gradient evaluated from freshly computed sensitivities.
 */
template <OdeDynamics Dyn>
double kkt_residual(const ShootingProblem<Dyn>& prob, const Trajectory& traj, const Multipliers& mult,
                    const Vector& x_hat, const Reference& ref) {
  detail::check_shapes(prob, traj, mult, x_hat, ref);
  const NodeEvaluation ev = evaluate_nodes(prob, traj, mult);
  const Vector g = lagrangian_gradient(prob, traj, mult, ref, ev.adjoint);
  const auto [B, C] = constraint_values(prob, traj, x_hat, ev.phi);
  return std::sqrt(g.squaredNorm() + B.squaredNorm() + C.cwiseMax(0.0).squaredNorm());
}

}  // namespace cmon

#endif  // CMON_TRANSCRIPTION_HPP
