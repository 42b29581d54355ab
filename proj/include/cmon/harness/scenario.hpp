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

// Scenario files (JSON). The schema is documented in README.md.

#ifndef CMON_HARNESS_SCENARIO_HPP
#define CMON_HARNESS_SCENARIO_HPP

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cmon/models.hpp"
#include "cmon/schemes.hpp"
#include "cmon/transcription.hpp"
#include "cmon/types.hpp"
#include "json.hpp"

namespace cmon {

/// Piecewise-constant reference: `value` holds from `start` until the next segment.
struct ReferenceSegment {
  double start = 0.0;
  Vector value;
};

struct ChainWeights {
  double position = 1.0;
  double velocity = 1.0;
  double end = 1.0;
  double control = 0.01;
  double terminal_scale = 1.0;
};

struct ScenarioConfig {
  std::string model = "pendulum";  // "pendulum" | "chain"
  PendulumParams pendulum;
  ChainParams chain;
  Eigen::Vector3d chain_end{1.0, 0.0, 0.0};

  int horizon = 40;
  double sampling_time = 0.05;
  int integrator_steps = 4;
  int plant_substep_factor = 4;  // 1 = plant uses the controller's integrator exactly
  double duration = 20.0;

  std::vector<ReferenceSegment> reference;  // pendulum: (p, theta) setpoints
  std::vector<Bound> state_bounds;
  std::vector<Bound> control_bounds;
  Vector Q, R, QN;  // pendulum weights
  ChainWeights chain_weights;

  SchemeConfig scheme;
  std::string initialization = "perfect";  // "perfect" | "steady_state"
  Vector initial_state;                    // pendulum plant state at t = 0
  double position_noise = 0.0;             // chain: uniform noise amplitudes on the initial state
  double velocity_noise = 0.0;

  unsigned long seed = 1;
  int trials = 1;
  double stabilizing_threshold = 0.1;
  double cap = 50.0;
  bool log_kkt = true;
  std::optional<double> rho0;
  std::optional<double> gamma0;

  std::string raw;  // exact text the configuration was parsed from

  int nx() const { return model == "chain" ? chain.nx() : 4; }
  int nu() const { return model == "chain" ? 3 : 1; }
  int instants() const { return static_cast<int>(std::floor(duration / sampling_time + 1e-9)); }

  void validate() const {
    if (model != "pendulum" && model != "chain") throw ConfigError("model must be 'pendulum' or 'chain'");
    if (horizon < 2) throw ConfigError("horizon must be >= 2");
    if (!(sampling_time > 0)) throw ConfigError("sampling_time must be > 0");
    if (!(duration >= 0)) throw ConfigError("duration must be >= 0");
    if (integrator_steps < 1 || plant_substep_factor < 1) throw ConfigError("integrator steps must be >= 1");
    if (trials < 1) throw ConfigError("trials must be >= 1");
    for (const auto& b : state_bounds) {
      if (b.lower > b.upper || b.index < 0 || b.index >= nx()) throw ConfigError("invalid state bound");
    }
    for (const auto& b : control_bounds) {
      if (b.lower > b.upper || b.index < 0 || b.index >= nu()) throw ConfigError("invalid control bound");
    }
    if (model == "pendulum") {
      pendulum.validate();
      if (reference.empty()) throw ConfigError("pendulum scenario needs a reference schedule");
      for (const auto& s : reference) {
        if (s.value.size() != 2) throw ConfigError("pendulum reference values are (p, theta)");
      }
      if (Q.size() != 4 || R.size() != 1 || QN.size() != 4) throw ConfigError("pendulum weights have wrong sizes");
      if (initial_state.size() != 4) throw ConfigError("pendulum initial_state must have 4 entries");
    } else {
      chain.validate();
    }
    if (initialization != "perfect" && initialization != "steady_state") {
      throw ConfigError("initialization must be 'perfect' or 'steady_state'");
    }
    scheme.validate();
  }
};

namespace detail {

using json = nlohmann::json;

inline Vector json_vector(const json& j, const char* what) {
  if (j.is_number()) return Vector::Constant(1, j.get<double>());
  if (!j.is_array()) throw ConfigError(std::string(what) + " must be an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(std::string(what) + " must contain numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline double bound_value(const json& j, const char* key, double dflt) {
  if (!j.contains(key) || j[key].is_null()) return dflt;
  return j[key].get<double>();
}

inline std::vector<Bound> json_bounds(const json& j) {
  std::vector<Bound> out;
  if (!j.is_array()) throw ConfigError("bounds must be an array");
  for (const auto& b : j) {
    Bound bd;
    bd.index = b.at("index").get<int>();
    bd.lower = bound_value(b, "lower", -INFINITY);
    bd.upper = bound_value(b, "upper", INFINITY);
    out.push_back(bd);
  }
  return out;
}

template <class T>
void maybe(const json& j, const char* key, T& target) {
  if (j.contains(key)) target = j[key].get<T>();
}

}  // namespace detail

inline ScenarioConfig parse_scenario(const std::string& text) {
  using detail::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario is not valid JSON: ") + e.what());
  }
  ScenarioConfig c;
  c.raw = text;
  try {
    detail::maybe(j, "model", c.model);
    if (j.contains("pendulum")) {
      const auto& p = j["pendulum"];
      detail::maybe(p, "m1", c.pendulum.m1);
      detail::maybe(p, "m2", c.pendulum.m2);
      detail::maybe(p, "l", c.pendulum.l);
      detail::maybe(p, "g", c.pendulum.g);
    }
    if (j.contains("chain")) {
      const auto& p = j["chain"];
      detail::maybe(p, "n", c.chain.n);
      detail::maybe(p, "m", c.chain.m);
      detail::maybe(p, "D", c.chain.D);
      detail::maybe(p, "D1", c.chain.D1);
      detail::maybe(p, "L", c.chain.L);
      if (p.contains("end_position")) {
        const Vector e = detail::json_vector(p["end_position"], "end_position");
        if (e.size() != 3) throw ConfigError("end_position needs 3 entries");
        c.chain_end = e;
      }
      if (p.contains("gravity")) {
        const Vector g = detail::json_vector(p["gravity"], "gravity");
        if (g.size() != 3) throw ConfigError("gravity needs 3 entries");
        c.chain.gravity = g;
      }
      if (p.contains("position_noise")) c.position_noise = p["position_noise"].get<double>();
      if (p.contains("velocity_noise")) c.velocity_noise = p["velocity_noise"].get<double>();
    }
    detail::maybe(j, "horizon", c.horizon);
    detail::maybe(j, "sampling_time", c.sampling_time);
    detail::maybe(j, "integrator_steps", c.integrator_steps);
    detail::maybe(j, "plant_substep_factor", c.plant_substep_factor);
    detail::maybe(j, "duration", c.duration);
    if (j.contains("reference")) {
      for (const auto& s : j["reference"]) {
        c.reference.push_back({s.at("start").get<double>(), detail::json_vector(s.at("value"), "reference value")});
      }
    }
    if (j.contains("bounds")) {
      const auto& b = j["bounds"];
      if (b.contains("state")) c.state_bounds = detail::json_bounds(b["state"]);
      if (b.contains("control")) c.control_bounds = detail::json_bounds(b["control"]);
    }
    if (j.contains("weights")) {
      const auto& w = j["weights"];
      if (c.model == "chain") {
        detail::maybe(w, "position", c.chain_weights.position);
        detail::maybe(w, "velocity", c.chain_weights.velocity);
        detail::maybe(w, "end", c.chain_weights.end);
        detail::maybe(w, "control", c.chain_weights.control);
        detail::maybe(w, "terminal_scale", c.chain_weights.terminal_scale);
      } else {
        if (w.contains("Q")) c.Q = detail::json_vector(w["Q"], "Q");
        if (w.contains("R")) c.R = detail::json_vector(w["R"], "R");
        c.QN = w.contains("QN") ? detail::json_vector(w["QN"], "QN") : c.Q;
      }
    }
    if (j.contains("scheme")) {
      const auto& s = j["scheme"];
      if (s.contains("kind")) c.scheme.kind = scheme_from_string(s["kind"].get<std::string>());
      detail::maybe(s, "ml_interval", c.scheme.ml_interval);
      detail::maybe(s, "c1", c.scheme.cmon.c1);
      detail::maybe(s, "alpha", c.scheme.cmon.alpha);
      detail::maybe(s, "beta", c.scheme.cmon.beta);
      detail::maybe(s, "eps_abs", c.scheme.cmon.eps_abs);
      detail::maybe(s, "eps_rel", c.scheme.cmon.eps_rel);
      detail::maybe(s, "min_update_fraction", c.scheme.cmon.min_update_fraction);
      detail::maybe(s, "dto_oracle", c.scheme.dto_oracle);
      detail::maybe(s, "dto_bound", c.scheme.dto_bound);
      detail::maybe(s, "qp_tol", c.scheme.qp.tol);
      if (s.contains("fixed_thresholds")) {
        const Vector t = detail::json_vector(s["fixed_thresholds"], "fixed_thresholds");
        if (t.size() != 2) throw ConfigError("fixed_thresholds needs two entries");
        c.scheme.fixed_thresholds = std::make_pair(t(0), t(1));
      }
    }
    detail::maybe(j, "initialization", c.initialization);
    if (j.contains("initial_state")) c.initial_state = detail::json_vector(j["initial_state"], "initial_state");
    detail::maybe(j, "seed", c.seed);
    detail::maybe(j, "trials", c.trials);
    detail::maybe(j, "stabilizing_threshold", c.stabilizing_threshold);
    detail::maybe(j, "cap", c.cap);
    detail::maybe(j, "log_kkt", c.log_kkt);
    if (j.contains("rho0")) c.rho0 = j["rho0"].get<double>();
    if (j.contains("gamma0")) c.gamma0 = j["gamma0"].get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario field has the wrong type: ") + e.what());
  }
  if (c.model == "pendulum" && c.initial_state.size() == 0) c.initial_state = Vector::Zero(4);
  c.validate();
  return c;
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open scenario file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

// ---------------------------------------------------------------------------
// Problem construction
// ---------------------------------------------------------------------------

inline ConstraintFunction stage_box(const ScenarioConfig& c) {
  std::vector<Bound> b = c.state_bounds;
  for (Bound cb : c.control_bounds) {
    cb.index += c.nx();
    b.push_back(cb);
  }
  return box_constraint(c.nx() + c.nu(), b);
}

inline ShootingProblem<PendulumDynamics> make_pendulum_problem(const ScenarioConfig& c) {
  ShootingProblem<PendulumDynamics> p;
  p.model.dynamics = PendulumDynamics(c.pendulum);
  p.model.path = stage_box(c);
  p.model.terminal = box_constraint(4, c.state_bounds);
  p.model.stage_weights.resize(5);
  p.model.stage_weights << c.Q, c.R;
  p.model.terminal_weights = c.QN;
  p.integrator = IntegratorConfig{c.integrator_steps, c.sampling_time};
  p.horizon = c.horizon;
  p.validate();
  return p;
}

inline ShootingProblem<ChainDynamics> make_chain_problem(const ScenarioConfig& c) {
  ShootingProblem<ChainDynamics> p;
  p.model.dynamics = ChainDynamics(c.chain);
  p.model.path = stage_box(c);
  p.model.terminal = box_constraint(c.nx(), c.state_bounds);
  const int nv = 3 * (c.chain.n - 1);
  Vector q(c.nx());
  q.head(nv).setConstant(c.chain_weights.position);
  q.segment(nv, nv).setConstant(c.chain_weights.velocity);
  q.tail(3).setConstant(c.chain_weights.end);
  p.model.stage_weights.resize(c.nx() + 3);
  p.model.stage_weights << q, Vector::Constant(3, c.chain_weights.control);
  p.model.terminal_weights = c.chain_weights.terminal_scale * q;
  p.integrator = IntegratorConfig{c.integrator_steps, c.sampling_time};
  p.horizon = c.horizon;
  p.validate();
  return p;
}

/// Pendulum setpoint (p, theta) active at time t.
inline Vector pendulum_setpoint(const ScenarioConfig& c, double t) {
  const ReferenceSegment* cur = &c.reference.front();
  for (const auto& s : c.reference) {
    if (s.start <= t + 1e-9) cur = &s;
  }
  return cur->value;
}

/**
 * Reference window at instant i: node k tracks the setpoint at t_i + k Ts,
 * so new setpoints enter from the end of the horizon.
 */
inline Reference pendulum_reference_window(const ScenarioConfig& c, int instant) {
  Reference r;
  r.stage.resize(static_cast<std::size_t>(c.horizon));
  auto node = [&](int k) {
    const Vector sp = pendulum_setpoint(c, (instant + k) * c.sampling_time);
    Vector x = Vector::Zero(4);
    x(0) = sp(0);
    x(1) = sp(1);
    return x;
  };
  for (int k = 0; k < c.horizon; ++k) {
    r.stage[k] = Vector::Zero(5);
    r.stage[k].head(4) = node(k);
  }
  r.terminal = node(c.horizon);
  return r;
}

}  // namespace cmon

#endif  // CMON_HARNESS_SCENARIO_HPP
