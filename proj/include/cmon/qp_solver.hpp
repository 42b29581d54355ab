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

// Primal-dual interior-point solver (Mehrotra predictor-corrector) for
//
//   min 0.5 z'Hz + g'z   s.t.  E z + e = 0,  D z + c <= 0.
//
// The Newton systems are reduced to equality-constrained QPs with Hessian
// H + D' diag(mu/s) D. Two backends solve them: a dense LU of the KKT matrix
// and a Riccati recursion over the shooting stages.

#ifndef CMON_QP_SOLVER_HPP
#define CMON_QP_SOLVER_HPP

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cmon/transcription.hpp"
#include "cmon/types.hpp"

namespace cmon {

struct QpSettings {
  double tol = 1e-8;
  // Stopping level for max_j s_j mu_j. Tighter than `tol` so that multipliers
  // of inactive rows end up near 1e-10 / slack rather than 1e-8 / slack.
  double complementarity_tol = 1e-10;
  int max_iter = 200;
  double regularization = 1e-9;
  double active_threshold = 1e-6;
  double mu_truncation = 1e-10;
};

/// Generic dense QP in standard form (E z + e = 0, D z + c <= 0).
struct DenseQp {
  Matrix H;
  Vector g;
  Matrix E;
  Vector e;
  Matrix D;
  Vector c;
};

struct IpmResult {
  Vector z;
  Vector lambda;
  Vector mu;
  Vector slack;
  int iterations = 0;
  double residual = 0.0;
};

/// Shifts a symmetric block by delta*I when its smallest eigenvalue is below delta.
inline void regularize_block(Matrix& H, double delta) {
  if (H.rows() == 0) return;
  double min_eig;
  if (H.isDiagonal(0.0)) {
    min_eig = H.diagonal().minCoeff();
  } else {
    Eigen::SelfAdjointEigenSolver<Matrix> es(H, Eigen::EigenvaluesOnly);
    min_eig = es.eigenvalues().minCoeff();
  }
  if (min_eig < delta) H.diagonal().array() += delta;
}

namespace detail {

// Backend over a DenseQp.
class DenseKkt {
 public:
  explicit DenseKkt(const DenseQp& qp) : qp_(qp) {}

  int n() const { return static_cast<int>(qp_.H.rows()); }
  int n_eq() const { return static_cast<int>(qp_.E.rows()); }
  int n_in() const { return static_cast<int>(qp_.D.rows()); }
  const Vector& g() const { return qp_.g; }
  const Vector& e() const { return qp_.e; }
  const Vector& c() const { return qp_.c; }

  Vector H_mul(const Vector& z) const { return qp_.H * z; }
  Vector E_mul(const Vector& z) const { return qp_.E * z; }
  Vector Et_mul(const Vector& l) const { return qp_.E.transpose() * l; }
  Vector D_mul(const Vector& z) const { return qp_.D * z; }
  Vector Dt_mul(const Vector& m) const { return qp_.D.transpose() * m; }

  void factor(const Vector& W) {
    const int nz = n();
    const int ne = n_eq();
    Matrix K = Matrix::Zero(nz + ne, nz + ne);
    K.topLeftCorner(nz, nz) = qp_.H;
    if (n_in() > 0) K.topLeftCorner(nz, nz).noalias() += qp_.D.transpose() * W.asDiagonal() * qp_.D;
    K.topRightCorner(nz, ne) = qp_.E.transpose();
    K.bottomLeftCorner(ne, nz) = qp_.E;
    lu_.compute(K);
  }

  // Solves [Ht E'; E 0] [dz; dl] = -[gh; re].
  void solve(const Vector& gh, const Vector& re, Vector& dz, Vector& dl) const {
    Vector rhs(n() + n_eq());
    rhs << -gh, -re;
    const Vector sol = lu_.solve(rhs);
    dz = sol.head(n());
    dl = sol.tail(n_eq());
  }

 private:
  const DenseQp& qp_;
  Eigen::PartialPivLU<Matrix> lu_;
};

// Backend over the stagewise QPData: Riccati recursion on the shooting stages.
class StagewiseKkt {
 public:
  StagewiseKkt(const QPData& qp, double delta) : qp_(qp), N_(qp.N), nx_(qp.nx), nu_(qp.nu) {
    if (static_cast<int>(qp.hessian.size()) != N_ + 1 || static_cast<int>(qp.jacobian.size()) != N_ ||
        static_cast<int>(qp.ineq_values.size()) != N_ + 1 || static_cast<int>(qp.ineq_jacobian.size()) != N_ + 1 ||
        qp.gradient.size() != qp.n_w() || qp.residuals.size() != qp.n_eq() || qp.lambda.size() != qp.n_eq() ||
        qp.mu.size() != qp.n_in()) {
      throw AssemblyError("QP data has inconsistent dimensions");
    }
    H_ = qp.hessian;
    for (auto& h : H_) regularize_block(h, delta);
    ioff_.resize(static_cast<std::size_t>(N_ + 2));
    ioff_[0] = 0;
    for (int k = 0; k <= N_; ++k) ioff_[k + 1] = ioff_[k] + static_cast<int>(qp.ineq_values[k].size());
    c_ = qp.ineq_stacked();
    e_ = qp.residuals;
    // Standard-form gradient: remove the multiplier terms already in grad L.
    g_ = qp.gradient - Et_mul(qp.lambda) - Dt_mul(qp.mu);
    Ht_.resize(static_cast<std::size_t>(N_ + 1));
    P_.resize(static_cast<std::size_t>(N_ + 1));
    K_.resize(static_cast<std::size_t>(N_));
    Quu_.resize(static_cast<std::size_t>(N_));
    Qux_.resize(static_cast<std::size_t>(N_));
    llt_.resize(static_cast<std::size_t>(N_));
  }

  int n() const { return qp_.n_w(); }
  int n_eq() const { return qp_.n_eq(); }
  int n_in() const { return ioff_.back(); }
  const Vector& g() const { return g_; }
  const Vector& e() const { return e_; }
  const Vector& c() const { return c_; }

  int dim(int k) const { return k < N_ ? nx_ + nu_ : nx_; }
  int zoff(int k) const { return k * (nx_ + nu_); }

  Vector H_mul(const Vector& z) const {
    Vector out(n());
    for (int k = 0; k <= N_; ++k) out.segment(zoff(k), dim(k)).noalias() = H_[k] * z.segment(zoff(k), dim(k));
    return out;
  }

  Vector E_mul(const Vector& z) const {
    Vector out(n_eq());
    out.head(nx_) = z.head(nx_);
    for (int k = 0; k < N_; ++k) {
      out.segment((k + 1) * nx_, nx_).noalias() =
          qp_.jacobian[k] * z.segment(zoff(k), nx_ + nu_) - z.segment(zoff(k + 1), nx_);
    }
    return out;
  }

  Vector Et_mul(const Vector& l) const {
    Vector out = Vector::Zero(n());
    out.head(nx_) = l.head(nx_);
    for (int k = 0; k < N_; ++k) {
      const auto lk = l.segment((k + 1) * nx_, nx_);
      out.segment(zoff(k), nx_ + nu_).noalias() += qp_.jacobian[k].transpose() * lk;
      out.segment(zoff(k + 1), nx_) -= lk;
    }
    return out;
  }

  Vector D_mul(const Vector& z) const {
    Vector out(n_in());
    for (int k = 0; k <= N_; ++k) {
      const int r = ioff_[k + 1] - ioff_[k];
      if (r > 0) out.segment(ioff_[k], r).noalias() = qp_.ineq_jacobian[k] * z.segment(zoff(k), dim(k));
    }
    return out;
  }

  Vector Dt_mul(const Vector& m) const {
    Vector out = Vector::Zero(n());
    for (int k = 0; k <= N_; ++k) {
      const int r = ioff_[k + 1] - ioff_[k];
      if (r > 0) out.segment(zoff(k), dim(k)).noalias() += qp_.ineq_jacobian[k].transpose() * m.segment(ioff_[k], r);
    }
    return out;
  }

  void factor(const Vector& W) {
    for (int k = 0; k <= N_; ++k) {
      Ht_[k] = H_[k];
      const int r = ioff_[k + 1] - ioff_[k];
      if (r > 0) {
        const Matrix& Dk = qp_.ineq_jacobian[k];
        Ht_[k].noalias() += Dk.transpose() * W.segment(ioff_[k], r).asDiagonal() * Dk;
      }
    }
    P_[N_] = Ht_[N_];
    Matrix PJ;
    Matrix Q;
    for (int k = N_ - 1; k >= 0; --k) {
      const Matrix& J = qp_.jacobian[k];
      PJ.noalias() = P_[k + 1] * J;
      Q = Ht_[k];
      Q.noalias() += J.transpose() * PJ;
      Quu_[k] = Q.bottomRightCorner(nu_, nu_);
      Qux_[k] = Q.bottomLeftCorner(nu_, nx_);
      Eigen::LLT<Matrix> llt(Quu_[k]);
      if (llt.info() != Eigen::Success) {
        Quu_[k].diagonal().array() += 1e-9 * std::max(1.0, Quu_[k].diagonal().cwiseAbs().maxCoeff());
        llt.compute(Quu_[k]);
      }
      llt_[k] = llt;
      K_[k] = -llt.solve(Qux_[k]);
      P_[k] = Q.topLeftCorner(nx_, nx_);
      P_[k].noalias() += Qux_[k].transpose() * K_[k];
      P_[k] = 0.5 * (P_[k] + P_[k].transpose()).eval();
    }
  }

  void solve(const Vector& gh, const Vector& re, Vector& dz, Vector& dl) const {
    std::vector<Vector> p(static_cast<std::size_t>(N_ + 1));
    std::vector<Vector> kff(static_cast<std::size_t>(N_));
    p[N_] = gh.segment(zoff(N_), nx_);
    Vector q;
    for (int k = N_ - 1; k >= 0; --k) {
      const Matrix& J = qp_.jacobian[k];
      q = gh.segment(zoff(k), nx_ + nu_);
      q.noalias() += J.transpose() * (P_[k + 1] * re.segment((k + 1) * nx_, nx_) + p[k + 1]);
      kff[k] = -llt_[k].solve(q.tail(nu_));
      p[k] = q.head(nx_);
      p[k].noalias() += Qux_[k].transpose() * kff[k];
    }
    dz.resize(n());
    dl.resize(n_eq());
    dz.head(nx_) = -re.head(nx_);
    for (int k = 0; k < N_; ++k) {
      const auto xk = dz.segment(zoff(k), nx_);
      dz.segment(zoff(k) + nx_, nu_) = K_[k] * xk + kff[k];
      dz.segment(zoff(k + 1), nx_) = qp_.jacobian[k] * dz.segment(zoff(k), nx_ + nu_) + re.segment((k + 1) * nx_, nx_);
    }
    for (int k = 1; k <= N_; ++k) dl.segment(k * nx_, nx_) = P_[k] * dz.segment(zoff(k), nx_) + p[k];
    const Vector h0 = Ht_[0] * dz.segment(0, nx_ + nu_);
    dl.head(nx_) = -(h0.head(nx_) + gh.head(nx_) + qp_.jacobian[0].leftCols(nx_).transpose() * dl.segment(nx_, nx_));
  }

 private:
  const QPData& qp_;
  int N_, nx_, nu_;
  std::vector<Matrix> H_;
  std::vector<int> ioff_;
  Vector g_, e_, c_;
  std::vector<Matrix> Ht_, P_, K_, Quu_, Qux_;
  std::vector<Eigen::LLT<Matrix>> llt_;
};

inline double max_step(const Vector& v, const Vector& dv) {
  double a = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (dv(i) < 0) a = std::min(a, -v(i) / dv(i));
  }
  return a;
}

inline double inf_norm(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

template <class Kkt>
IpmResult ipm(Kkt& kkt, const QpSettings& cfg) {
  const int n = kkt.n();
  const int ne = kkt.n_eq();
  const int ni = kkt.n_in();
  const Vector& g = kkt.g();
  const Vector& e = kkt.e();
  const Vector& c = kkt.c();

  Vector z = Vector::Zero(n);
  Vector lam = Vector::Zero(ne);
  Vector s = (-c).cwiseMax(1.0);
  Vector mu = Vector::Ones(ni);

  Vector best_z = z;
  double best_res = std::numeric_limits<double>::infinity();

  Vector dz, dl, ds, dm, dz_a, dl_a;
  auto newton = [&](const Vector& rd, const Vector& re, const Vector& ri, const Vector& rc) {
    Vector gh = rd;
    if (ni > 0) gh += kkt.Dt_mul((mu.cwiseProduct(ri) - rc).cwiseQuotient(s));
    kkt.solve(gh, re, dz, dl);
    if (ni > 0) {
      ds = -ri - kkt.D_mul(dz);
      dm = (-rc - mu.cwiseProduct(ds)).cwiseQuotient(s);
    } else {
      ds.resize(0);
      dm.resize(0);
    }
  };

  for (int it = 0; it <= cfg.max_iter; ++it) {
    const Vector rd = kkt.H_mul(z) + g + kkt.Et_mul(lam) + (ni > 0 ? kkt.Dt_mul(mu) : Vector::Zero(n));
    const Vector re = kkt.E_mul(z) + e;
    const Vector ri = ni > 0 ? Vector(kkt.D_mul(z) + c + s) : Vector();
    const double comp = ni > 0 ? s.cwiseProduct(mu).maxCoeff() : 0.0;
    const double res = std::max({inf_norm(rd), inf_norm(re), inf_norm(ri), comp});
    if (!std::isfinite(res)) break;
    if (res < best_res) {
      best_res = res;
      best_z = z;
    }
    if (res <= cfg.tol && comp <= std::min(cfg.tol, cfg.complementarity_tol)) {
      return {z, lam, mu, s, it, res};
    }
    if (ni > 0 && inf_norm(mu) > 1e12 && std::max(inf_norm(re), inf_norm(ri)) > 1e-6) {
      throw QpInfeasibleError("QP appears infeasible", std::max(inf_norm(re), inf_norm(ri)));
    }
    if (it == cfg.max_iter) break;

    const Vector W = ni > 0 ? Vector(mu.cwiseQuotient(s)) : Vector();
    kkt.factor(W);
    if (ni == 0) {
      newton(rd, re, ri, Vector());
      z += dz;
      lam += dl;
      continue;
    }

    const double gap = s.dot(mu) / ni;
    // Predictor.
    newton(rd, re, ri, s.cwiseProduct(mu));
    const double ap = max_step(s, ds);
    const double ad = max_step(mu, dm);
    const double a_aff = std::min(ap, ad);
    const double gap_aff = (s + a_aff * ds).dot(mu + a_aff * dm) / ni;
    const double sigma = std::pow(gap_aff / gap, 3);
    // Corrector.
    const Vector rc = s.cwiseProduct(mu) + ds.cwiseProduct(dm) - Vector::Constant(ni, sigma * gap);
    newton(rd, re, ri, rc);
    const double alpha = std::min(1.0, 0.995 * std::min(max_step(s, ds), max_step(mu, dm)));
    z += alpha * dz;
    lam += alpha * dl;
    s += alpha * ds;
    mu += alpha * dm;
  }
  throw QpNonConvergenceError("interior-point iteration limit reached", best_z, best_res);
}

}  // namespace detail

/// Dense QP solve; H is regularized as a whole when nearly singular.
inline IpmResult solve_dense_qp(DenseQp qp, const QpSettings& cfg = {}) {
  const auto n = qp.H.rows();
  if (qp.g.size() != n || qp.E.cols() != n || qp.e.size() != qp.E.rows() || qp.D.cols() != n ||
      qp.c.size() != qp.D.rows()) {
    throw AssemblyError("dense QP has inconsistent dimensions");
  }
  regularize_block(qp.H, cfg.regularization);
  detail::DenseKkt kkt(qp);
  IpmResult r = detail::ipm(kkt, cfg);
  for (Eigen::Index j = 0; j < r.mu.size(); ++j) {
    if (r.mu(j) < cfg.mu_truncation) r.mu(j) = 0.0;
  }
  return r;
}

/// Standard-form dense view of the increment QP (multipliers are totals).
inline DenseQp to_dense(const QPData& qp, double delta = 1e-9) {
  DenseQp d;
  std::vector<Matrix> blocks = qp.hessian;
  for (auto& h : blocks) regularize_block(h, delta);
  d.H = Matrix::Zero(qp.n_w(), qp.n_w());
  for (int k = 0; k <= qp.N; ++k) {
    const int off = k * qp.nz();
    d.H.block(off, off, blocks[k].rows(), blocks[k].cols()) = blocks[k];
  }
  d.E = qp.dense_eq_jacobian();
  d.D = qp.dense_ineq_jacobian();
  d.e = qp.residuals;
  d.c = qp.ineq_stacked();
  d.g = qp.gradient - d.E.transpose() * qp.lambda - d.D.transpose() * qp.mu;
  return d;
}

namespace detail {

inline QPSolution finish(const QPData& qp, IpmResult r, const QpSettings& cfg) {
  QPSolution sol;
  for (Eigen::Index j = 0; j < r.mu.size(); ++j) {
    if (r.mu(j) < cfg.mu_truncation) r.mu(j) = 0.0;
  }
  sol.dw = std::move(r.z);
  sol.dlambda = r.lambda - qp.lambda;
  sol.dmu = r.mu - qp.mu;
  sol.slack = std::move(r.slack);
  for (Eigen::Index j = 0; j < r.mu.size(); ++j) {
    if (r.mu(j) > cfg.active_threshold || sol.slack(j) < cfg.active_threshold) {
      sol.active_set.push_back(static_cast<int>(j));
    }
  }
  sol.kkt_residual = r.residual;
  sol.iterations = r.iterations;
  return sol;
}

}  // namespace detail

/// Structure-exploiting solve of the increment QP.
inline QPSolution solve(const QPData& qp, const QpSettings& cfg = {}) {
  detail::StagewiseKkt kkt(qp, cfg.regularization);
  return detail::finish(qp, detail::ipm(kkt, cfg), cfg);
}

/// Same QP through the dense KKT backend.
inline QPSolution solve_dense(const QPData& qp, const QpSettings& cfg = {}) {
  const DenseQp d = to_dense(qp, cfg.regularization);
  detail::DenseKkt kkt(d);
  return detail::finish(qp, detail::ipm(kkt, cfg), cfg);
}

}  // namespace cmon

#endif  // CMON_QP_SOLVER_HPP
