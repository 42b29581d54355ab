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

// Closed-loop simulation of plant + controller, and randomized chain trials.

#ifndef CMON_HARNESS_SIMULATION_HPP
#define CMON_HARNESS_SIMULATION_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "cmon/harness/scenario.hpp"
#include "cmon/integrator.hpp"
#include "cmon/schemes.hpp"
#include "cmon/transcription.hpp"

namespace cmon {

struct LogRow {
  double time = 0.0;
  Vector state;    // measured plant state at `time`
  Vector control;  // control applied on [time, time + Ts)
  double kkt = std::numeric_limits<double>::quiet_NaN();
  double dto = std::numeric_limits<double>::quiet_NaN();
  double e_bar = std::numeric_limits<double>::quiet_NaN();
  int n_refreshed = 0;
  double refresh_fraction = 0.0;
  double eta_pri = 0.0;
  double eta_dual = 0.0;
  double kappa_max = 0.0;  // largest primal / adjoint nonlinearity measure (CMoN-RTI only)
  double kappa_dual_max = 0.0;
  bool active_set_changed = false;
  Counters counters;
};

struct SimulationLog {
  std::string model;
  std::string scheme;
  int horizon = 0;
  int nx = 0;
  int nu = 0;
  double sampling_time = 0.0;
  std::vector<LogRow> rows;
  bool failed = false;
  std::string failure;               // empty unless `failed`
  std::vector<Reference> references;  // per-instant windows, when recorded
};

/// Offline data shared by every run of a scenario: warm start and threshold constants.
struct OfflineData {
  Trajectory traj;
  Multipliers mult;
  SensitivityStore store;
  double rho0 = 1.0;
  double gamma0 = 1.0;
};

struct SimulationOptions {
  std::optional<Vector> initial_state;  // overrides the scenario's plant state at t = 0
  const OfflineData* offline = nullptr;  // computed on the fly when null
  bool record_references = false;
};

/**
 * Time after which every logged control satisfies |u|_inf < threshold.
 * Returns `cap` for failed runs and when the last logged control exceeds it.
 */
inline double stabilizing_time(const SimulationLog& log, double threshold, double cap) {
  if (log.failed) return cap;
  int last = -1;
  for (int i = 0; i < static_cast<int>(log.rows.size()); ++i) {
    if (log.rows[i].control.lpNorm<Eigen::Infinity>() >= threshold) last = i;
  }
  if (last < 0) return 0.0;
  if (last == static_cast<int>(log.rows.size()) - 1) return cap;
  return std::min(cap, (last + 1) * log.sampling_time);
}

inline Reference chain_reference(const ScenarioConfig& c, const Vector& x_ss) {
  Vector z = Vector::Zero(c.nx() + 3);
  z.head(c.nx()) = x_ss;
  return Reference::constant(c.horizon, z, x_ss);
}

inline Vector chain_rest_state(const ScenarioConfig& c) { return chain_steady_state(c.chain, c.chain_end); }

namespace detail {

template <OdeDynamics Dyn>
void fill_constants(OfflineData& d, const ShootingProblem<Dyn>& prob, const ScenarioConfig& c, const Vector& x0,
                    const Reference& ref) {
  if (c.rho0 && c.gamma0) {
    d.rho0 = *c.rho0;
    d.gamma0 = *c.gamma0;
  } else if (c.scheme.kind == SchemeKind::CMON_RTI && !c.scheme.fixed_thresholds) {
    std::tie(d.rho0, d.gamma0) = offline_constants(prob, d.traj, d.mult, x0, ref, c.scheme.qp);
  }
}

}  // namespace detail

/**
 * Warm start for a scenario. Pendulum: the optimal solution of the t = 0
 * problem (exact Gauss-Newton SQP with line search). Chain: the resting configuration on every
 * node with zero controls and multipliers. Sensitivity blocks are exact at
 * that trajectory; rho0/gamma0 come from its QP unless the scenario fixes them.
 */
inline OfflineData prepare_offline(const ScenarioConfig& c) {
  OfflineData d;
  if (c.model == "pendulum") {
    const auto prob = make_pendulum_problem(c);
    const Reference ref = pendulum_reference_window(c, 0);
    Trajectory guess = Trajectory::zeros(c.horizon, 4, 1);
    for (int k = 0; k <= c.horizon; ++k) guess.x(k) = c.initial_state;
    const auto sol = damped_gauss_newton_sqp(prob, guess, Multipliers::zeros(prob.n_eq(), prob.n_in()),
                                             c.initial_state, ref, 200, 1e-8, c.scheme.qp);
    if (!sol.converged) throw DivergenceError("initial optimal control problem did not converge");
    d.traj = sol.traj;
    d.mult = sol.mult;
    d.store = exact_store(prob, d.traj);
    detail::fill_constants(d, prob, c, c.initial_state, ref);
  } else {
    const auto prob = make_chain_problem(c);
    const Vector xs = chain_rest_state(c);
    d.traj = Trajectory::zeros(c.horizon, c.nx(), 3);
    for (int k = 0; k <= c.horizon; ++k) d.traj.x(k) = xs;
    d.mult = Multipliers::zeros(prob.n_eq(), prob.n_in());
    d.store = exact_store(prob, d.traj);
    detail::fill_constants(d, prob, c, xs, chain_reference(c, xs));
  }
  return d;
}

namespace detail {

template <OdeDynamics Dyn, class RefFn>
SimulationLog run_closed_loop(const ShootingProblem<Dyn>& prob, const ScenarioConfig& c, Vector x,
                              RefFn&& ref_at, const OfflineData& off, bool record_refs) {
  SimulationLog log;
  log.model = c.model;
  log.scheme = to_string(c.scheme.kind);
  log.horizon = c.horizon;
  log.nx = prob.nx();
  log.nu = prob.nu();
  log.sampling_time = c.sampling_time;

  SchemeConfig sc = c.scheme;
  sc.cmon.rho0 = off.rho0;
  sc.cmon.gamma0 = off.gamma0;
  Controller<Dyn> ctl(prob, sc);
  // ADJ-RTI always runs on the offline blocks; the others get them only
  // when the warm start is the exact solution for the initial state.
  const bool seed_blocks = c.initialization == "perfect" || c.scheme.kind == SchemeKind::ADJ_RTI;
  ctl.initialize(off.traj, off.mult, seed_blocks ? &off.store : nullptr);

  const IntegratorConfig plant{c.integrator_steps * c.plant_substep_factor, c.sampling_time};
  const int steps = c.instants();
  log.rows.reserve(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    LogRow row;
    row.time = i * c.sampling_time;
    row.state = x;
    const Reference ref = ref_at(i);
    if (record_refs) log.references.push_back(ref);
    StepDiagnostics d;
    try {
      row.control = ctl.step(x, ref, &d);
      if (c.log_kkt) row.kkt = kkt_residual(prob, ctl.trajectory(), ctl.multipliers(), x, ref);
      x = integrate(prob.model.dynamics, x, row.control, plant);
    } catch (const Error& e) {
      log.failed = true;
      log.failure = std::string("instant ") + std::to_string(i) + ": " + e.what();
      break;
    }
    row.n_refreshed = static_cast<int>(d.refreshed.size());
    row.refresh_fraction = d.refresh_fraction;
    row.e_bar = d.e_bar;
    row.eta_pri = d.eta_pri;
    row.eta_dual = d.eta_dual;
    for (double k : d.kappa) row.kappa_max = std::max(row.kappa_max, k);
    for (double k : d.kappa_dual) row.kappa_dual_max = std::max(row.kappa_dual_max, k);
    if (d.dto) {
      row.dto = d.dto->e;
      row.active_set_changed = d.dto->active_set_changed;
    }
    row.counters = d.counters;
    log.rows.push_back(std::move(row));
  }
  return log;
}

}  // namespace detail

inline SimulationLog closed_loop_simulate(const ScenarioConfig& c, const SimulationOptions& opt = {}) {
  c.validate();
  std::optional<OfflineData> own;
  if (!opt.offline) own = prepare_offline(c);
  const OfflineData& off = opt.offline ? *opt.offline : *own;
  if (c.model == "pendulum") {
    const auto prob = make_pendulum_problem(c);
    const Vector x0 = opt.initial_state ? *opt.initial_state : c.initial_state;
    return detail::run_closed_loop(prob, c, x0, [&](int i) { return pendulum_reference_window(c, i); }, off,
                                   opt.record_references);
  }
  const auto prob = make_chain_problem(c);
  const Vector xs = chain_rest_state(c);
  const Reference ref = chain_reference(c, xs);
  const Vector x0 = opt.initial_state ? *opt.initial_state : xs;
  return detail::run_closed_loop(prob, c, x0, [&](int) { return ref; }, off, opt.record_references);
}

// ---------------------------------------------------------------------------
// Randomized chain trials
// ---------------------------------------------------------------------------

inline unsigned long trial_seed(unsigned long seed, int trial) {
  return seed * 1000003UL + static_cast<unsigned long>(trial);
}

/// Resting state plus uniform noise on the free-mass positions and all velocities.
inline Vector chain_initial_state(const ScenarioConfig& c, int trial) {
  Vector x = chain_rest_state(c);
  std::mt19937_64 rng(trial_seed(c.seed, trial));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const int np = 3 * (c.chain.n - 1);
  for (int j = 0; j < np; ++j) x(j) += c.position_noise * unit(rng);
  for (int j = 0; j < np; ++j) x(np + j) += c.velocity_noise * unit(rng);
  return x;
}

struct TrialResult {
  int trial = 0;
  unsigned long seed = 0;
  double t_st = 0.0;
  bool failed = false;  // not stabilized within the cap
  SimulationLog log;
};

struct TrialSummary {
  std::vector<TrialResult> trials;
  int failures = 0;
  double mean_t_st = 0.0;  // over all trials, failures counted at the cap
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double iqr() const { return q3 - q1; }
};

/// Linear-interpolation quantile of sorted data.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/**
 * Runs `trials` chain simulations from randomized initial states. Trials are
 * independent and may run on `threads` workers; results do not depend on the
 * thread count.
 */
inline TrialSummary randomized_chain_trials(const ScenarioConfig& c, int trials, const OfflineData* offline = nullptr,
                                            int threads = 1) {
  if (c.model != "chain") throw ConfigError("randomized trials need the chain model");
  if (trials < 1) throw ConfigError("trials must be >= 1");
  std::optional<OfflineData> own;
  if (!offline) own = prepare_offline(c);
  const OfflineData& off = offline ? *offline : *own;

  TrialSummary s;
  s.trials.resize(static_cast<std::size_t>(trials));
  auto run = [&](int t) {
    TrialResult r;
    r.trial = t;
    r.seed = trial_seed(c.seed, t);
    SimulationOptions opt;
    opt.initial_state = chain_initial_state(c, t);
    opt.offline = &off;
    r.log = closed_loop_simulate(c, opt);
    r.t_st = stabilizing_time(r.log, c.stabilizing_threshold, c.cap);
    r.failed = r.log.failed || r.t_st >= c.cap;
    s.trials[t] = std::move(r);
  };
  if (threads <= 1) {
    for (int t = 0; t < trials; ++t) run(t);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < std::min(threads, trials); ++w) {
      pool.emplace_back([&] {
        for (int t = next++; t < trials; t = next++) run(t);
      });
    }
    for (auto& th : pool) th.join();
  }

  std::vector<double> ts;
  for (const auto& r : s.trials) {
    ts.push_back(r.t_st);
    s.failures += r.failed ? 1 : 0;
  }
  double sum = 0.0;
  for (double t : ts) sum += t;
  s.mean_t_st = sum / static_cast<double>(ts.size());
  s.q1 = quantile(ts, 0.25);
  s.median = quantile(ts, 0.5);
  s.q3 = quantile(ts, 0.75);
  return s;
}

}  // namespace cmon

#endif  // CMON_HARNESS_SIMULATION_HPP
