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

// Parametric view of the increment QP.
//
// The QP is parametrized by the Jacobian error p = vec(P_0, ..., P_{N-1}),
// P_k = (stale block) - (exact block). Writing its KKT conditions as
// F(dy, p) = 0 with dy = (dw, dmu, dlambda), the implicit function theorem
// gives d(dy)/dp = M^{-1} N with M = dF/d(dy) and N = -dF/dp:
//
//   M = [ H            D'         E' ]      N p = ( -P' dlambda )
//       [ -diag(mu) D  -diag(c)   0  ]            (      0      )
//       [ E            0          0  ]            ( -P dw       )
//
// where mu are the total multipliers and c = C + D dw at the solution.
// p is ordered block-ascending, row-major inside each nx x (nx+nu) block.

#ifndef CMON_PERTURBATION_HPP
#define CMON_PERTURBATION_HPP

#include <algorithm>
#include <cmath>
#include <vector>

#include "cmon/qp_solver.hpp"
#include "cmon/transcription.hpp"
#include "cmon/types.hpp"

namespace cmon {

struct KKTMatrixBundle {
  Matrix M;
  Matrix N;
  int n_w = 0;
  int n_I = 0;
  int n_E = 0;
  int n_p = 0;
};

/// dy = (dw, dmu, dlambda), the ordering used by M and N.
inline Vector stack_dy(const QPSolution& sol) {
  Vector dy(sol.dw.size() + sol.dmu.size() + sol.dlambda.size());
  dy << sol.dw, sol.dmu, sol.dlambda;
  return dy;
}

inline Matrix build_M(const QPData& qp, const QPSolution& sol, double delta = 1e-9) {
  const int nw = qp.n_w();
  const int nI = qp.n_in();
  const int nE = qp.n_eq();
  const DenseQp d = to_dense(qp, delta);
  const Vector mu = qp.mu + sol.dmu;
  const Vector c = d.c + d.D * sol.dw;
  Matrix M = Matrix::Zero(nw + nI + nE, nw + nI + nE);
  M.topLeftCorner(nw, nw) = d.H;
  M.block(0, nw, nw, nI) = d.D.transpose();
  M.block(0, nw + nI, nw, nE) = d.E.transpose();
  M.block(nw, 0, nI, nw) = -(mu.asDiagonal() * d.D);
  M.block(nw, nw, nI, nI) = Matrix((-c).asDiagonal());
  M.block(nw + nI, 0, nE, nw) = d.E;
  return M;
}

inline int p_index(int k, int r, int c, int nx, int nz) { return k * nx * nz + r * nz + c; }

inline Matrix build_N(const QPData& qp, const QPSolution& sol) {
  const int nw = qp.n_w();
  const int nI = qp.n_in();
  const int nx = qp.nx;
  const int nz = qp.nz();
  const int np = qp.N * nx * nz;
  Matrix N = Matrix::Zero(nw + nI + qp.n_eq(), np);
  for (int k = 0; k < qp.N; ++k) {
    for (int r = 0; r < nx; ++r) {
      const double dl = sol.dlambda((k + 1) * nx + r);
      for (int c = 0; c < nz; ++c) {
        const int j = p_index(k, r, c, nx, nz);
        N(k * nz + c, j) = -dl;
        N(nw + nI + (k + 1) * nx + r, j) = -sol.dw(k * nz + c);
      }
    }
  }
  return N;
}

inline KKTMatrixBundle build_bundle(const QPData& qp, const QPSolution& sol) {
  KKTMatrixBundle b;
  b.M = build_M(qp, sol);
  b.N = build_N(qp, sol);
  b.n_w = qp.n_w();
  b.n_I = qp.n_in();
  b.n_E = qp.n_eq();
  b.n_p = static_cast<int>(b.N.cols());
  return b;
}

/// vec of the Jacobian error blocks P_k = stale_k - exact_k.
inline Vector vectorize_perturbation(const std::vector<Matrix>& stale, const std::vector<Matrix>& exact) {
  if (stale.size() != exact.size() || stale.empty()) throw AssemblyError("block lists differ in length");
  const auto nx = stale[0].rows();
  const auto nz = stale[0].cols();
  Vector p(static_cast<Eigen::Index>(stale.size()) * nx * nz);
  for (std::size_t k = 0; k < stale.size(); ++k) {
    const Matrix P = stale[k] - exact[k];
    for (Eigen::Index r = 0; r < nx; ++r)
      for (Eigen::Index c = 0; c < nz; ++c) p(static_cast<Eigen::Index>(k) * nx * nz + r * nz + c) = P(r, c);
  }
  return p;
}

/// Singular values, descending (divide-and-conquer SVD, values only).
inline Vector singular_values(const Matrix& A) {
  if (A.size() == 0) return Vector();
  Eigen::BDCSVD<Matrix> svd(A);
  if (svd.info() != Eigen::Success) throw Error("singular value decomposition did not converge");
  return svd.singularValues();
}

namespace detail {

inline double checked_sigma_min(const Vector& s) {
  const double smin = s.size() ? s.minCoeff() : 0.0;
  if (!(smin >= 1e-12)) throw NearSingularError("KKT matrix is numerically singular", smin);
  return smin;
}

}  // namespace detail

/// 1 / sigma_min(M) = |M^{-1}|_2.
inline double rho_offline(const Matrix& M) { return 1.0 / detail::checked_sigma_min(singular_values(M)); }

/// Population standard deviation of the singular values of M^{-1}, plus one.
inline double gamma_offline(const Matrix& M) {
  const Vector s = singular_values(M);
  detail::checked_sigma_min(s);
  const Eigen::ArrayXd inv = s.array().inverse();
  const double mean = inv.mean();
  return std::sqrt((inv - mean).square().mean()) + 1.0;
}

/// Both constants from one decomposition.
inline std::pair<double, double> rho_gamma(const Matrix& M) {
  const Vector s = singular_values(M);
  const double smin = detail::checked_sigma_min(s);
  const Eigen::ArrayXd inv = s.array().inverse();
  const double mean = inv.mean();
  return {1.0 / smin, std::sqrt((inv - mean).square().mean()) + 1.0};
}

struct DtORecord {
  int instant = 0;
  double e = 0.0;
  double e_bar = 0.0;
  bool satisfied = true;
  bool active_set_changed = false;
};

/// Distance between the stale-Jacobian and exact-Jacobian QP solutions.
inline DtORecord measure_dto(const QPSolution& stale, const QPSolution& fresh, double e_bar, int instant = 0) {
  DtORecord r;
  r.instant = instant;
  r.e = (stack_dy(stale) - stack_dy(fresh)).norm();
  r.e_bar = e_bar;
  r.satisfied = r.e <= e_bar + 1e-9;
  r.active_set_changed = stale.active_set != fresh.active_set;
  return r;
}

inline DtORecord measure_dto(const QPData& qp_stale, const QPData& qp_fresh, double e_bar, int instant = 0,
                             const QpSettings& cfg = {}) {
  return measure_dto(solve(qp_stale, cfg), solve(qp_fresh, cfg), e_bar, instant);
}

/// sqrt(|P' dlambda|^2 + |P dw|^2) for the blocks P_k = stale_k - exact_k.
inline double perturbation_term(const std::vector<Matrix>& stale, const std::vector<Matrix>& exact,
                                 const QPSolution& sol) {
  const auto nx = stale[0].rows();
  const auto nz = stale[0].cols();
  double acc = 0.0;
  for (std::size_t k = 0; k < stale.size(); ++k) {
    const Matrix P = stale[k] - exact[k];
    const auto kk = static_cast<Eigen::Index>(k);
    acc += (P.transpose() * sol.dlambda.segment((kk + 1) * nx, nx)).squaredNorm();
    acc += (P * sol.dw.segment(kk * nz, nz)).squaredNorm();
  }
  return std::sqrt(acc);
}

}  // namespace cmon

#endif  // CMON_PERTURBATION_HPP
