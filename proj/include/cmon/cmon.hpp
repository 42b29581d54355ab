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

// Curvature-like measures of nonlinearity and the block refresh rule.
//
// For node k between instants i-1 and i, with q = w_k^i - w_k^{i-1}:
//   primal  kappa  = |phi^i - phi^{i-1} - J^{i-1} q| / |J^{i-1} q|
//   adjoint kappa~ = |dl' J^i - dl' J^{i-1}| / |dl' J^{i-1}|
// A block is kept while both stay at or below their thresholds, which are
// derived from the tolerance on the distance to the exact-Jacobian QP.

#ifndef CMON_CMON_HPP
#define CMON_CMON_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "cmon/sensitivity_store.hpp"
#include "cmon/types.hpp"

namespace cmon {

struct CMoNState {
  std::vector<double> kappa;
  std::vector<double> kappa_dual;
  double eta_pri = 0.0;
  double eta_dual = 0.0;
  double e_bar = 0.0;
  double rho0 = 1.0;
  double gamma0 = 1.0;
  double c1 = 0.1;
  double alpha = 1.0;
  double beta = 1.0;
  double eps_abs = 0.1;
  double eps_rel = 0.1;
  double min_update_fraction = 0.0;

  void validate() const {
    if (!(c1 > 0 && c1 < 1)) throw ConfigError("c1 must lie in (0, 1)");
    if (!(alpha > 0 && beta > 0)) throw ConfigError("alpha and beta must be positive");
    if (!(eps_abs >= 0 && eps_rel >= 0)) throw ConfigError("tolerance constants must be nonnegative");
    if (!(min_update_fraction >= 0 && min_update_fraction <= 1)) {
      throw ConfigError("min_update_fraction must lie in [0, 1]");
    }
    if (!(rho0 > 0) || !(gamma0 >= 1)) throw ConfigError("rho0 must be positive and gamma0 >= 1");
  }
};

inline double primal_cmon(const Vector& phi_curr, const Vector& phi_prev, const Vector& dir_prev) {
  const double den = dir_prev.norm();
  if (den == 0.0) return 0.0;
  return (phi_curr - phi_prev - dir_prev).norm() / den;
}

inline double dual_cmon(const RowVector& adj_curr, const RowVector& adj_prev) {
  const double den = adj_prev.norm();
  if (den == 0.0) return 0.0;
  return (adj_curr - adj_prev).norm() / den;
}

/// Indices of the blocks to refresh, ascending.
inline std::vector<int> update_decision(const CMoNState& st) {
  const int N = static_cast<int>(st.kappa.size());
  if (static_cast<int>(st.kappa_dual.size()) != N) throw InvalidStateError("kappa arrays differ in length");
  std::vector<char> refresh(static_cast<std::size_t>(N), 0);
  int count = 0;
  for (int k = 0; k < N; ++k) {
    if (st.kappa[k] > st.eta_pri || st.kappa_dual[k] > st.eta_dual) {
      refresh[k] = 1;
      ++count;
    }
  }
  const int floor_count = static_cast<int>(std::ceil(st.min_update_fraction * N - 1e-12));
  if (count < floor_count) {
    std::vector<int> order(static_cast<std::size_t>(N));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return st.kappa[a] > st.kappa[b]; });
    for (int k : order) {
      if (count >= floor_count) break;
      if (!refresh[k]) {
        refresh[k] = 1;
        ++count;
      }
    }
  }
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < N; ++k)
    if (refresh[k]) out.push_back(k);
  return out;
}

/// Tolerance on the distance to the exact-Jacobian QP solution.
inline double dto_tolerance(const CMoNState& st, int n, double dy_prev_norm) {
  if (n <= 0) throw InvalidStateError("problem size must be positive");
  return st.eps_abs * std::sqrt(static_cast<double>(n)) + st.eps_rel * dy_prev_norm;
}

/// Primal and adjoint thresholds from the current tolerance `st.e_bar`.
inline std::pair<double, double> compute_thresholds(const CMoNState& st, double v_pri_norm, double v_dual_norm) {
  if (st.e_bar == 0.0) return {0.0, 0.0};
  constexpr double inf = std::numeric_limits<double>::infinity();
  const double scale = st.gamma0 * st.e_bar / st.rho0;
  const double eta_pri = v_pri_norm == 0.0 ? inf : scale * std::sqrt(st.c1) / (2.0 * st.alpha * v_pri_norm);
  const double eta_dual = v_dual_norm == 0.0 ? inf : scale * std::sqrt(1.0 - st.c1) / (st.beta * v_dual_norm);
  return {eta_pri, eta_dual};
}

/**
 * Directional products of the stored blocks: J_k q_k and dl_{k+1}' J_k.
 * `q` holds one node increment per block; `dlambda` is the stacked
 * equality-multiplier increment with the embedding block first.
 */
inline void directional_products(const SensitivityStore& store, const std::vector<Vector>& q, const Vector& dlambda,
                                 std::vector<Vector>& pri, std::vector<RowVector>& dual) {
  const int N = store.size();
  if (static_cast<int>(q.size()) != N) throw InvalidStateError("one node increment per block expected");
  pri.resize(static_cast<std::size_t>(N));
  dual.resize(static_cast<std::size_t>(N));
  for (int k = 0; k < N; ++k) {
    const Matrix& J = store.blocks[k].value;
    const auto nx = J.rows();
    pri[k].noalias() = J * q[k];
    dual[k].noalias() = dlambda.segment((k + 1) * nx, nx).transpose() * J;
  }
}

/// (|V_pri|, |V_dual|): Euclidean norms of the stacked directional products.
inline std::pair<double, double> v_norms(const SensitivityStore& store, const std::vector<Vector>& q,
                                         const Vector& dlambda) {
  std::vector<Vector> pri;
  std::vector<RowVector> dual;
  directional_products(store, q, dlambda, pri, dual);
  double sp = 0.0, sd = 0.0;
  for (const auto& v : pri) sp += v.squaredNorm();
  for (const auto& v : dual) sd += v.squaredNorm();
  return {std::sqrt(sp), std::sqrt(sd)};
}

}  // namespace cmon

#endif  // CMON_CMON_HPP
