#include <gtest/gtest.h>

#include <random>

#include "cmon/qp_solver.hpp"
#include "test_util.hpp"

using namespace cmon;

namespace {

DenseQp make_qp(const Matrix& H, const Vector& g, const Matrix& E, const Vector& e, const Matrix& D, const Vector& c) {
  return DenseQp{H, g, E, e, D, c};
}

// Brute-force oracle: try every active set, keep the primal- and dual-feasible KKT point.
bool enumerate_active_sets(const DenseQp& qp, Vector& z_out, Vector& mu_out) {
  const int n = static_cast<int>(qp.H.rows());
  const int ne = static_cast<int>(qp.E.rows());
  const int ni = static_cast<int>(qp.D.rows());
  bool found = false;
  for (int mask = 0; mask < (1 << ni); ++mask) {
    std::vector<int> act;
    for (int j = 0; j < ni; ++j)
      if (mask & (1 << j)) act.push_back(j);
    const int na = static_cast<int>(act.size());
    if (ne + na > n) continue;
    Matrix K = Matrix::Zero(n + ne + na, n + ne + na);
    Vector rhs(n + ne + na);
    K.topLeftCorner(n, n) = qp.H;
    K.block(0, n, n, ne) = qp.E.transpose();
    K.block(n, 0, ne, n) = qp.E;
    rhs.head(n) = -qp.g;
    rhs.segment(n, ne) = -qp.e;
    for (int a = 0; a < na; ++a) {
      K.block(0, n + ne + a, n, 1) = qp.D.row(act[a]).transpose();
      K.block(n + ne + a, 0, 1, n) = qp.D.row(act[a]);
      rhs(n + ne + a) = -qp.c(act[a]);
    }
    Eigen::FullPivLU<Matrix> lu(K);
    if (lu.rank() < K.rows()) continue;
    const Vector sol = lu.solve(rhs);
    const Vector z = sol.head(n);
    Vector mu = Vector::Zero(ni);
    for (int a = 0; a < na; ++a) mu(act[a]) = sol(n + ne + a);
    if ((qp.D * z + qp.c).maxCoeff() > 1e-9 || (na > 0 && mu.minCoeff() < -1e-9)) continue;
    EXPECT_FALSE(found) << "strictly convex QP must have a unique KKT point";
    found = true;
    z_out = z;
    mu_out = mu;
  }
  return found;
}

}  // namespace

TEST(QpSolver, SingleBoundByHand) {
  const auto r = solve_dense_qp(make_qp(Matrix::Identity(1, 1), Vector::Zero(1), Matrix(0, 1), Vector(0),
                                        Matrix::Ones(1, 1), Vector::Ones(1)));
  EXPECT_NEAR(r.z(0), -1.0, 1e-8);
  EXPECT_NEAR(r.mu(0), 1.0, 1e-8);
}

TEST(QpSolver, UnconstrainedByHand) {
  const auto r = solve_dense_qp(make_qp(Matrix::Identity(2, 2), Eigen::Vector2d(1, 2), Matrix(0, 2), Vector(0),
                                        Matrix(0, 2), Vector(0)));
  EXPECT_NEAR(r.z(0), -1.0, 1e-12);
  EXPECT_NEAR(r.z(1), -2.0, 1e-12);
}

TEST(QpSolver, MatchesActiveSetEnumeration) {
  std::mt19937 rng(2024);
  std::uniform_int_distribution<int> dn(2, 8), dm(1, 6);
  for (int t = 0; t < 20; ++t) {
    const int n = dn(rng);
    const int ni = dm(rng);
    const int ne = std::min(n - 1, t % 3);
    const Matrix M = test::random_matrix(rng, n, n);
    const Matrix H = M.transpose() * M + 0.1 * Matrix::Identity(n, n);
    const Vector g = 3.0 * test::random_vector(rng, n);
    const Vector zf = test::random_vector(rng, n);
    const Matrix E = test::random_matrix(rng, ne, n);
    const Matrix D = test::random_matrix(rng, ni, n);
    const Vector e = -E * zf;
    const Vector c = -D * zf - test::random_vector(rng, ni, 0.0, 0.5);
    const DenseQp qp = make_qp(H, g, E, e, D, c);
    Vector z_ref, mu_ref;
    ASSERT_TRUE(enumerate_active_sets(qp, z_ref, mu_ref));
    const auto r = solve_dense_qp(qp);
    EXPECT_LT((r.z - z_ref).cwiseAbs().maxCoeff(), 1e-7) << "trial " << t;
    EXPECT_LT((r.mu - mu_ref).cwiseAbs().maxCoeff(), 1e-7) << "trial " << t;
  }
}

TEST(QpSolver, Infeasible) {
  Matrix D(2, 1);
  D << 1, -1;
  EXPECT_THROW(solve_dense_qp(make_qp(Matrix::Identity(1, 1), Vector::Zero(1), Matrix(0, 1), Vector(0), D,
                                      Eigen::Vector2d(1, 1))),
               QpInfeasibleError);
}

TEST(QpSolver, IterationLimit) {
  QpSettings cfg;
  cfg.max_iter = 1;
  try {
    solve_dense_qp(make_qp(Matrix::Identity(1, 1), Vector::Zero(1), Matrix(0, 1), Vector(0), Matrix::Ones(1, 1),
                           Vector::Ones(1)),
                   cfg);
    FAIL();
  } catch (const QpNonConvergenceError& e) {
    EXPECT_EQ(e.best_iterate().size(), 1);
    EXPECT_GT(e.best_residual(), 0.0);
  }
}

namespace {

QPData random_pendulum_qp(std::mt19937& rng, int N) {
  const auto prob = test::pendulum_problem(N);
  Trajectory traj{N, 4, 1, test::random_vector(rng, prob.n_w(), -0.6, 0.6)};
  for (int k = 0; k < N; ++k) traj.u(k)(0) *= 20;
  Multipliers mult{test::random_vector(rng, prob.n_eq()), test::random_vector(rng, prob.n_in(), 0, 0.5)};
  const Vector x_hat = test::random_vector(rng, 4, -0.5, 0.5);
  const auto ref = Reference::constant(N, Vector::Zero(5), Vector::Zero(4));
  // Stale blocks taken at a nearby trajectory.
  Trajectory other = traj;
  other.w += test::random_vector(rng, prob.n_w(), -0.1, 0.1);
  return build_qp(prob, traj, mult, x_hat, ref, exact_store(prob, other), evaluate_nodes(prob, traj, mult));
}

}  // namespace

TEST(QpSolver, StagewiseMatchesDenseAndSatisfiesKkt) {
  std::mt19937 rng(7);
  for (int t = 0; t < 10; ++t) {
    const QPData qp = random_pendulum_qp(rng, 3 + 2 * t);
    const QPSolution a = solve(qp);
    const QPSolution b = solve_dense(qp);
    EXPECT_LT((a.dw - b.dw).cwiseAbs().maxCoeff(), 1e-7);
    EXPECT_LT((a.dlambda - b.dlambda).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((a.dmu - b.dmu).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_EQ(a.active_set, b.active_set);

    // Increment-form optimality conditions, assembled densely.
    const Matrix E = qp.dense_eq_jacobian();
    const Matrix D = qp.dense_ineq_jacobian();
    const Vector c = qp.ineq_stacked();
    const Vector mu = qp.mu + a.dmu;
    const Vector stat = qp.dense_hessian() * a.dw + qp.gradient + E.transpose() * a.dlambda + D.transpose() * a.dmu;
    EXPECT_LT(stat.cwiseAbs().maxCoeff(), 1e-7);
    EXPECT_LT((qp.residuals + E * a.dw).cwiseAbs().maxCoeff(), 1e-8);
    const Vector cl = c + D * a.dw;
    EXPECT_LT(cl.maxCoeff(), 1e-8);
    EXPECT_GE(mu.minCoeff(), 0.0);
    EXPECT_LT(cl.cwiseProduct(mu).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE(a.kkt_residual, 1e-8);
  }
}

TEST(QpSolver, Deterministic) {
  std::mt19937 rng(9);
  const QPData qp = random_pendulum_qp(rng, 10);
  const QPSolution a = solve(qp);
  const QPSolution b = solve(qp);
  EXPECT_EQ(a.dw, b.dw);
  EXPECT_EQ(a.active_set, b.active_set);
}

TEST(QpSolver, SemidefiniteBlocksAreRegularized) {
  auto prob = test::pendulum_problem(6);
  prob.model.stage_weights(4) = 0.0;  // no control weight
  const auto traj = Trajectory::zeros(6, 4, 1);
  const auto mult = Multipliers::zeros(prob.n_eq(), prob.n_in());
  const Vector x_hat = (Vector(4) << 0.2, 0.1, 0, 0).finished();
  const auto ref = Reference::constant(6, Vector::Zero(5), Vector::Zero(4));
  const auto qp = build_qp(prob, traj, mult, x_hat, ref, exact_store(prob, traj), evaluate_nodes(prob, traj, mult));
  const QPSolution a = solve(qp);
  EXPECT_TRUE(a.dw.allFinite());
  EXPECT_LT((a.dw - solve_dense(qp).dw).norm(), 1e-6);
}
