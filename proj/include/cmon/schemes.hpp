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

// Real-time iteration controllers and the partially-updated SQP solver.
//
// Every instant runs the same pipeline: integrate all nodes, pick the blocks
// to refresh, compute forward sensitivities for them, fill the Lagrangian
// gradient with exact adjoint products, solve the QP and take a full step.
// The four schemes differ only in how the refresh set is chosen:
//   RTI      every block, every instant
//   ML_RTI   every block when i % m == 0, none otherwise
//   ADJ_RTI  never; blocks stay at the offline trajectory
//   CMON_RTI blocks whose nonlinearity measure exceeds the current threshold

#ifndef CMON_SCHEMES_HPP
#define CMON_SCHEMES_HPP

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cmon/cmon.hpp"
#include "cmon/integrator.hpp"
#include "cmon/perturbation.hpp"
#include "cmon/qp_solver.hpp"
#include "cmon/sensitivity_store.hpp"
#include "cmon/transcription.hpp"
#include "cmon/types.hpp"

namespace cmon {

enum class SchemeKind { RTI, ML_RTI, ADJ_RTI, CMON_RTI };

inline std::string to_string(SchemeKind k) {
  switch (k) {
    case SchemeKind::RTI: return "rti";
    case SchemeKind::ML_RTI: return "ml-rti";
    case SchemeKind::ADJ_RTI: return "adj-rti";
    case SchemeKind::CMON_RTI: return "cmon-rti";
  }
  return "?";
}

inline SchemeKind scheme_from_string(const std::string& s) {
  if (s == "rti") return SchemeKind::RTI;
  if (s == "ml-rti") return SchemeKind::ML_RTI;
  if (s == "adj-rti") return SchemeKind::ADJ_RTI;
  if (s == "cmon-rti") return SchemeKind::CMON_RTI;
  throw ConfigError("unknown scheme '" + s + "'");
}

struct SchemeConfig {
  SchemeKind kind = SchemeKind::RTI;
  int ml_interval = 2;
  CMoNState cmon;  // parameters; the per-instant fields are owned by the controller
  // When set, the thresholds stay at these values instead of following the tolerance.
  std::optional<std::pair<double, double>> fixed_thresholds;
  bool dto_oracle = false;
  // With the oracle on, also evaluate rho(M) |(P' dl, P dw)| per instant (one dense SVD each).
  bool dto_bound = false;
  QpSettings qp;

  void validate() const {
    if (kind == SchemeKind::ML_RTI && ml_interval < 1) throw ConfigError("ml_interval must be >= 1");
    if (kind == SchemeKind::CMON_RTI) cmon.validate();
  }
};

struct Counters {
  long integrations = 0;
  long forward_sensitivities = 0;
  long adjoint_sweeps = 0;
  long qp_iterations = 0;

  Counters& operator+=(const Counters& o) {
    integrations += o.integrations;
    forward_sensitivities += o.forward_sensitivities;
    adjoint_sweeps += o.adjoint_sweeps;
    qp_iterations += o.qp_iterations;
    return *this;
  }
};

struct StepDiagnostics {
  int instant = 0;
  std::vector<int> refreshed;
  double refresh_fraction = 0.0;
  double e_bar = 0.0;
  double eta_pri = 0.0;
  double eta_dual = 0.0;
  std::vector<double> kappa;
  std::vector<double> kappa_dual;
  double v_pri = 0.0;
  double v_dual = 0.0;
  double dy_norm = 0.0;
  double qp_residual = 0.0;
  std::optional<DtORecord> dto;
  double dto_bound = std::numeric_limits<double>::quiet_NaN();  // rho(M) * |(P' dl, P dw)| when the oracle runs
  Counters counters;
};

template <OdeDynamics Dyn>
class Controller {
 public:
  Controller(ShootingProblem<Dyn> prob, SchemeConfig cfg) : prob_(std::move(prob)), cfg_(std::move(cfg)) {
    prob_.validate();
    cfg_.validate();
    state_ = cfg_.cmon;
    const auto N = static_cast<std::size_t>(prob_.horizon);
    state_.kappa.assign(N, 0.0);
    state_.kappa_dual.assign(N, 0.0);
    traj_ = Trajectory::zeros(prob_.horizon, prob_.nx(), prob_.nu());
    mult_ = Multipliers::zeros(prob_.n_eq(), prob_.n_in());
    store_ = SensitivityStore::empty(prob_.horizon, prob_.nx(), prob_.nu());
    dlambda_prev_ = Vector::Zero(prob_.n_eq());
    reset_thresholds();
  }

  /**
   * Warm start. `blocks`, when given, seeds the store; ADJ-RTI keeps them for
   * good, the other schemes use them until their first refresh. The
   * nonlinearity caches then start from `traj` with zero directions, so the
   * first CMoN instant sees kappa = 0. Without blocks every scheme refreshes
   * all nodes at its first instant.
   */
  void initialize(const Trajectory& traj, const Multipliers& mult, const SensitivityStore* blocks = nullptr) {
    traj.validate();
    if (traj.N != prob_.horizon || traj.nx != prob_.nx() || traj.nu != prob_.nu()) {
      throw InvalidStateError("initial trajectory does not match the problem");
    }
    if (mult.lambda.size() != prob_.n_eq() || mult.mu.size() != prob_.n_in()) {
      throw InvalidStateError("initial multipliers do not match the problem");
    }
    traj_ = traj;
    mult_ = mult;
    store_ = SensitivityStore::empty(prob_.horizon, prob_.nx(), prob_.nu());
    if (blocks) {
      if (blocks->size() != prob_.horizon || !blocks->filled) throw InvalidStateError("offline blocks incomplete");
      store_.blocks = blocks->blocks;
      store_.filled = true;
      for (int k = 0; k < prob_.horizon; ++k) {
        store_.prev_phi[k] = integrate(prob_.model.dynamics, Vector(traj_.x(k)), Vector(traj_.u(k)), prob_.integrator);
        store_.prev_nodes[k] = traj_.node(k);
      }
      store_.primed = true;
    }
    dlambda_prev_ = Vector::Zero(prob_.n_eq());
    dy_prev_norm_ = 0.0;
    instant_ = 0;
    reset_thresholds();
  }

  /// One sampling instant; returns the first control of the updated trajectory.
  Vector step(const Vector& x_hat, const Reference& ref, StepDiagnostics* diag = nullptr) {
    const int N = prob_.horizon;
    const int nx = prob_.nx();
    const auto& dyn = prob_.model.dynamics;
    const auto& icfg = prob_.integrator;
    if (x_hat.size() != nx || !x_hat.allFinite()) throw InvalidStateError("measurement has wrong size or is non-finite");

    StepDiagnostics d;
    d.instant = instant_;
    SensitivityStore store = store_;

    // Integrate every node.
    NodeEvaluation ev;
    ev.phi.resize(static_cast<std::size_t>(N));
    ev.adjoint.resize(static_cast<std::size_t>(N));
    std::vector<Vector> xs(static_cast<std::size_t>(N)), us(static_cast<std::size_t>(N));
    for (int k = 0; k < N; ++k) {
      xs[k] = traj_.x(k);
      us[k] = traj_.u(k);
      ev.phi[k] = integrate(dyn, xs[k], us[k], icfg);
      ++d.counters.integrations;
    }

    // Refresh set.
    std::vector<int> refresh;
    const bool cmon = cfg_.kind == SchemeKind::CMON_RTI;
    if (!store.filled) {
      refresh = all_nodes();
    } else {
      switch (cfg_.kind) {
        case SchemeKind::RTI: refresh = all_nodes(); break;
        case SchemeKind::ML_RTI:
          if (instant_ % cfg_.ml_interval == 0) refresh = all_nodes();
          break;
        case SchemeKind::ADJ_RTI: break;
        case SchemeKind::CMON_RTI: {
          for (int k = 0; k < N; ++k) {
            state_.kappa[k] = primal_cmon(ev.phi[k], store.prev_phi[k], store.prev_dir_pri[k]);
            const Vector seed = dlambda_prev_.segment((k + 1) * nx, nx);
            if (seed.isZero(0.0)) {
              state_.kappa_dual[k] = 0.0;
            } else {
              const RowVector adj = adjoint_directional_sensitivity(dyn, xs[k], us[k], icfg, seed);
              ++d.counters.adjoint_sweeps;
              state_.kappa_dual[k] = dual_cmon(adj, store.prev_dir_dual[k]);
            }
          }
          refresh = update_decision(state_);
          break;
        }
      }
    }

    std::vector<char> fresh(static_cast<std::size_t>(N), 0);
    for (int k : refresh) {
      auto res = integrate_with_forward_sensitivity(dyn, xs[k], us[k], icfg);
      ++d.counters.forward_sensitivities;
      store.blocks[k] = std::move(res.second);
      fresh[k] = 1;
    }
    for (int k = 0; k < N; ++k) {
      if (!fresh[k]) store.blocks[k].stale = true;
    }
    store.filled = true;

    // Exact adjoint products for the Lagrangian gradient.
    for (int k = 0; k < N; ++k) {
      const Vector lam = mult_.lambda.segment((k + 1) * nx, nx);
      if (fresh[k]) {
        ev.adjoint[k] = lam.transpose() * store.blocks[k].value;
      } else {
        ev.adjoint[k] = adjoint_directional_sensitivity(dyn, xs[k], us[k], icfg, lam);
        ++d.counters.adjoint_sweeps;
      }
    }

    const QPData qp = build_qp(prob_, traj_, mult_, x_hat, ref, store, ev);
    const QPSolution sol = solve(qp, cfg_.qp);
    d.counters.qp_iterations += sol.iterations;
    d.qp_residual = sol.kkt_residual;

    if (cfg_.dto_oracle) {
      QPData exact = qp;
      std::vector<Matrix> stale_blocks = qp.jacobian;
      for (int k = 0; k < N; ++k) {
        if (!fresh[k]) {
          exact.jacobian[k] = integrate_with_forward_sensitivity(dyn, xs[k], us[k], icfg).second.value;
        }
      }
      const QPSolution ref_sol = solve(exact, cfg_.qp);
      d.dto = measure_dto(sol, ref_sol, state_.e_bar, instant_);
      if (static_cast<int>(refresh.size()) == N) {
        d.dto_bound = 0.0;
      } else if (cfg_.dto_bound) {
        try {
          d.dto_bound = rho_offline(build_M(qp, sol)) * perturbation_term(stale_blocks, exact.jacobian, sol);
        } catch (const NearSingularError&) {
        }
      }
    }

    auto [traj, mult] = apply_step(traj_, mult_, sol);

    d.refreshed = refresh;
    d.refresh_fraction = static_cast<double>(refresh.size()) / N;
    d.e_bar = state_.e_bar;
    d.eta_pri = state_.eta_pri;
    d.eta_dual = state_.eta_dual;
    if (cmon) {
      d.kappa = state_.kappa;
      d.kappa_dual = state_.kappa_dual;
    }
    d.dy_norm = stack_dy(sol).norm();

    // Caches and thresholds for the next instant.
    if (cmon) {
      std::vector<Vector> q(static_cast<std::size_t>(N));
      for (int k = 0; k < N; ++k) {
        q[k] = traj.node(k) - traj_.node(k);
        store.prev_phi[k] = ev.phi[k];
        store.prev_nodes[k] = traj_.node(k);
      }
      directional_products(store, q, sol.dlambda, store.prev_dir_pri, store.prev_dir_dual);
      double sp = 0.0, sd = 0.0;
      for (const auto& v : store.prev_dir_pri) sp += v.squaredNorm();
      for (const auto& v : store.prev_dir_dual) sd += v.squaredNorm();
      d.v_pri = std::sqrt(sp);
      d.v_dual = std::sqrt(sd);
      store.primed = true;
    }

    // Commit.
    traj_ = std::move(traj);
    mult_ = std::move(mult);
    store_ = std::move(store);
    dlambda_prev_ = sol.dlambda;
    dy_prev_norm_ = d.dy_norm;
    ++instant_;
    if (cmon) update_thresholds(d.v_pri, d.v_dual);
    if (diag) *diag = std::move(d);
    return traj_.u(0);
  }

  const ShootingProblem<Dyn>& problem() const { return prob_; }
  const SchemeConfig& config() const { return cfg_; }
  const Trajectory& trajectory() const { return traj_; }
  const Multipliers& multipliers() const { return mult_; }
  const SensitivityStore& store() const { return store_; }
  const CMoNState& cmon_state() const { return state_; }
  int instant() const { return instant_; }

  /// Offline constants used by the thresholds.
  void set_offline_constants(double rho0, double gamma0) {
    state_.rho0 = rho0;
    state_.gamma0 = gamma0;
    reset_thresholds();
  }

 private:
  std::vector<int> all_nodes() const {
    std::vector<int> v(static_cast<std::size_t>(prob_.horizon));
    for (int k = 0; k < prob_.horizon; ++k) v[k] = k;
    return v;
  }


  // Thresholds before any QP has been solved: no direction is known yet.
  void reset_thresholds() {
    state_.e_bar = dto_tolerance(state_, prob_.n_w(), 0.0);
    if (cfg_.fixed_thresholds) {
      std::tie(state_.eta_pri, state_.eta_dual) = *cfg_.fixed_thresholds;
    } else {
      std::tie(state_.eta_pri, state_.eta_dual) = compute_thresholds(state_, 0.0, 0.0);
    }
  }

  void update_thresholds(double v_pri, double v_dual) {
    state_.e_bar = dto_tolerance(state_, prob_.n_w(), dy_prev_norm_);
    if (cfg_.fixed_thresholds) {
      std::tie(state_.eta_pri, state_.eta_dual) = *cfg_.fixed_thresholds;
    } else {
      std::tie(state_.eta_pri, state_.eta_dual) = compute_thresholds(state_, v_pri, v_dual);
    }
  }

  ShootingProblem<Dyn> prob_;
  SchemeConfig cfg_;
  CMoNState state_;
  Trajectory traj_;
  Multipliers mult_;
  SensitivityStore store_;
  Vector dlambda_prev_;
  double dy_prev_norm_ = 0.0;
  int instant_ = 0;
};

// ---------------------------------------------------------------------------
// Full SQP with partial sensitivity updates
// ---------------------------------------------------------------------------

struct SQPConfig {
  int max_iters = 100;
  double kkt_tol = 1e-6;
  double eps_abs = 0.1;
  double eps_rel = 0.1;
  double c1 = 0.1;
  double min_update_fraction = 0.0;
  // Offline constants; computed from the first QP when not given.
  std::optional<double> rho0;
  std::optional<double> gamma0;
  QpSettings qp;

  void validate() const {
    if (!(kkt_tol > 0)) throw ConfigError("kkt_tol must be positive");
    if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
  }
};

struct SQPIterate {
  int iteration = 0;
  double kkt = 0.0;
  double refresh_fraction = 0.0;
  int forward_sensitivities = 0;
  double e_bar = 0.0;
};

struct SQPResult {
  Trajectory traj;
  Multipliers mult;
  std::vector<SQPIterate> log;
  std::vector<Vector> iterates;  // w after each step, for comparison runs
  bool converged = false;
  int iterations = 0;
  long total_forward_sensitivities = 0;
  double rho0 = 0.0;
  double gamma0 = 0.0;
};

class SQPDivergenceError : public DivergenceError {
 public:
  SQPDivergenceError(const std::string& what, std::vector<SQPIterate> log)
      : DivergenceError(what), log_(std::move(log)) {}
  const std::vector<SQPIterate>& log() const { return log_; }

 private:
  std::vector<SQPIterate> log_;
};

namespace detail {

/// (rho, gamma) of the exact-Jacobian QP at (traj, mult).
template <OdeDynamics Dyn>
std::pair<double, double> offline_constants(const ShootingProblem<Dyn>& prob, const Trajectory& traj,
                                            const Multipliers& mult, const Vector& x_hat, const Reference& ref,
                                            const QpSettings& qcfg) {
  const SensitivityStore store = exact_store(prob, traj);
  const QPData qp = build_qp(prob, traj, mult, x_hat, ref, store, evaluate_nodes(prob, traj, mult));
  const QPSolution sol = solve(qp, qcfg);
  return rho_gamma(build_M(qp, sol));
}

}  // namespace detail

/**
 * Repeats the partially-updated step with a fixed measurement and reference
 * until the exact KKT residual reaches `cfg.kkt_tol`. Full Newton steps, no
 * globalization; five consecutive KKT increases raise SQPDivergenceError.
 */
template <OdeDynamics Dyn>
SQPResult cmon_sqp_solve(const ShootingProblem<Dyn>& prob, const Trajectory& guess, const Multipliers& mult0,
                         const Vector& x_hat, const Reference& ref, const SQPConfig& cfg) {
  cfg.validate();
  SQPResult out;
  if (cfg.rho0 && cfg.gamma0) {
    out.rho0 = *cfg.rho0;
    out.gamma0 = *cfg.gamma0;
  } else {
    std::tie(out.rho0, out.gamma0) = detail::offline_constants(prob, guess, mult0, x_hat, ref, cfg.qp);
  }

  SchemeConfig sc;
  sc.kind = SchemeKind::CMON_RTI;
  sc.cmon.c1 = cfg.c1;
  sc.cmon.eps_abs = cfg.eps_abs;
  sc.cmon.eps_rel = cfg.eps_rel;
  sc.cmon.min_update_fraction = cfg.min_update_fraction;
  sc.cmon.rho0 = out.rho0;
  sc.cmon.gamma0 = out.gamma0;
  sc.qp = cfg.qp;
  Controller<Dyn> ctl(prob, sc);
  ctl.initialize(guess, mult0);

  double last = kkt_residual(prob, guess, mult0, x_hat, ref);
  int increases = 0;
  for (int it = 0; it < cfg.max_iters; ++it) {
    if (last <= cfg.kkt_tol) {
      out.converged = true;
      break;
    }
    StepDiagnostics d;
    ctl.step(x_hat, ref, &d);
    const double kkt = kkt_residual(prob, ctl.trajectory(), ctl.multipliers(), x_hat, ref);
    out.log.push_back({it, kkt, d.refresh_fraction, static_cast<int>(d.counters.forward_sensitivities), d.e_bar});
    out.iterates.push_back(ctl.trajectory().w);
    out.total_forward_sensitivities += d.counters.forward_sensitivities;
    out.iterations = it + 1;
    increases = kkt > last ? increases + 1 : 0;
    last = kkt;
    if (!std::isfinite(kkt) || increases >= 5) {
      throw SQPDivergenceError("SQP iteration diverged", out.log);
    }
  }
  if (!out.converged && last <= cfg.kkt_tol) out.converged = true;
  out.traj = ctl.trajectory();
  out.mult = ctl.multipliers();
  return out;
}

/// Exact-Jacobian Gauss-Newton SQP with full steps, for reference runs.
template <OdeDynamics Dyn>
SQPResult gauss_newton_sqp(const ShootingProblem<Dyn>& prob, const Trajectory& guess, const Multipliers& mult0,
                           const Vector& x_hat, const Reference& ref, int max_iters, double kkt_tol,
                           const QpSettings& qcfg = {}) {
  SQPResult out;
  Trajectory traj = guess;
  Multipliers mult = mult0;
  double kkt = kkt_residual(prob, traj, mult, x_hat, ref);
  for (int it = 0; it < max_iters && kkt > kkt_tol; ++it) {
    const QPData qp =
        build_qp(prob, traj, mult, x_hat, ref, exact_store(prob, traj), evaluate_nodes(prob, traj, mult));
    std::tie(traj, mult) = apply_step(traj, mult, solve(qp, qcfg));
    kkt = kkt_residual(prob, traj, mult, x_hat, ref);
    out.log.push_back({it, kkt, 1.0, prob.horizon, 0.0});
    out.iterates.push_back(traj.w);
    out.total_forward_sensitivities += prob.horizon;
    out.iterations = it + 1;
    if (!std::isfinite(kkt)) throw SQPDivergenceError("SQP iteration diverged", out.log);
  }
  out.converged = kkt <= kkt_tol;
  out.traj = std::move(traj);
  out.mult = std::move(mult);
  return out;
}

/**
 * Exact-Jacobian Gauss-Newton SQP with a backtracking line search on the l1
 * merit function f(w) + nu (|B(w)|_1 + |max(C(w), 0)|_1). Used to compute
 * warm starts far from the solution, where full steps may diverge.
 */
template <OdeDynamics Dyn>
SQPResult damped_gauss_newton_sqp(const ShootingProblem<Dyn>& prob, const Trajectory& guess,
                                  const Multipliers& mult0, const Vector& x_hat, const Reference& ref,
                                  int max_iters, double kkt_tol, const QpSettings& qcfg = {}) {
  SQPResult out;
  Trajectory traj = guess;
  Multipliers mult = mult0;
  double nu = 1.0;
  auto infeasibility = [&](const Trajectory& t) {
    const NodeEvaluation ev = evaluate_nodes(prob, t, mult);
    const auto [B, C] = constraint_values(prob, t, x_hat, ev.phi);
    return B.template lpNorm<1>() + C.cwiseMax(0.0).template lpNorm<1>();
  };
  double kkt = kkt_residual(prob, traj, mult, x_hat, ref);
  for (int it = 0; it < max_iters && kkt > kkt_tol; ++it) {
    const QPData qp =
        build_qp(prob, traj, mult, x_hat, ref, exact_store(prob, traj), evaluate_nodes(prob, traj, mult));
    const QPSolution sol = solve(qp, qcfg);
    nu = std::max(nu, 1.5 * std::max((mult.lambda + sol.dlambda).lpNorm<Eigen::Infinity>(),
                                     (mult.mu + sol.dmu).lpNorm<Eigen::Infinity>()));
    Vector grad;
    const double f0 = tracking_cost(prob, traj, ref, &grad);
    const double h0 = infeasibility(traj);
    const double merit0 = f0 + nu * h0;
    const double slope = grad.dot(sol.dw) - nu * h0;
    double alpha = 1.0;
    QPSolution scaled = sol;
    for (int ls = 0; ls < 30; ++ls) {
      scaled.dw = alpha * sol.dw;
      scaled.dlambda = alpha * sol.dlambda;
      scaled.dmu = alpha * sol.dmu;
      Trajectory trial = traj;
      trial.w += scaled.dw;
      try {
        const double merit = tracking_cost(prob, trial, ref) + nu * infeasibility(trial);
        if (merit <= merit0 + 1e-4 * alpha * std::min(slope, 0.0)) break;
      } catch (const Error&) {
      }
      alpha *= 0.5;
    }
    std::tie(traj, mult) = apply_step(traj, mult, scaled);
    kkt = kkt_residual(prob, traj, mult, x_hat, ref);
    out.log.push_back({it, kkt, 1.0, prob.horizon, 0.0});
    out.iterates.push_back(traj.w);
    out.total_forward_sensitivities += prob.horizon;
    out.iterations = it + 1;
    if (!std::isfinite(kkt)) throw SQPDivergenceError("SQP iteration diverged", out.log);
  }
  out.converged = kkt <= kkt_tol;
  out.traj = std::move(traj);
  out.mult = std::move(mult);
  return out;
}

}  // namespace cmon

#endif  // CMON_SCHEMES_HPP
