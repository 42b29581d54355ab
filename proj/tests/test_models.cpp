#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cmon/models.hpp"
#include "test_util.hpp"

using namespace cmon;

TEST(Pendulum, UprightAndHangingAreEquilibria) {
  const PendulumParams prm;
  EXPECT_LT(pendulum_rhs(Vector::Zero(4), 0.0, prm).norm(), 1e-15);
  Vector hang = Vector::Zero(4);
  hang(1) = M_PI;
  EXPECT_LT(pendulum_rhs(hang, 0.0, prm).norm(), 1e-14);
}

TEST(Pendulum, ForceAcceleratesCartAtRest) {
  const PendulumParams prm;
  const Vector f = pendulum_rhs(Vector::Zero(4), 1.0, prm);
  // Upright, at rest: p'' = F / m2, theta'' = F / (l m2).
  EXPECT_NEAR(f(2), 1.0 / prm.m2, 1e-14);
  EXPECT_NEAR(f(3), 1.0 / (prm.l * prm.m2), 1e-14);
}

TEST(Pendulum, JacobianMatchesFiniteDifferences) {
  std::mt19937 rng(3);
  PendulumDynamics dyn;
  for (int t = 0; t < 20; ++t) {
    const Vector x = test::random_vector(rng, 4, -2, 2);
    const Vector u = test::random_vector(rng, 1, -10, 10);
    Matrix A, B;
    dyn.jacobian(x, u, A, B);
    const Matrix Afd = test::fd_jacobian([&](const Vector& y) { return dyn.rhs(y, u); }, x);
    const Matrix Bfd = test::fd_jacobian([&](const Vector& v) { return dyn.rhs(x, v); }, u);
    EXPECT_LT((A - Afd).norm(), 1e-6 * (1 + A.norm()));
    EXPECT_LT((B - Bfd).norm(), 1e-6 * (1 + B.norm()));
  }
}

TEST(Pendulum, RejectsNonFinite) {
  Vector x = Vector::Zero(4);
  x(2) = std::nan("");
  EXPECT_THROW(pendulum_rhs(x, 0.0, PendulumParams{}), InvalidStateError);
  EXPECT_THROW(pendulum_rhs(Vector::Zero(4), INFINITY, PendulumParams{}), InvalidStateError);
  EXPECT_THROW(PendulumDynamics(PendulumParams{0.1, -1.0, 0.8, 9.81}), ConfigError);
}

TEST(Chain, RestLengthWithoutGravityIsStationary) {
  ChainParams prm;
  prm.gravity.setZero();
  Vector s = Vector::Zero(prm.nx());
  for (int i = 1; i < prm.n; ++i) s.segment<3>(3 * (i - 1)) = Eigen::Vector3d(i * prm.L, 0, 0);
  s.segment<3>(6 * (prm.n - 1)) = Eigen::Vector3d(prm.n * prm.L, 0, 0);
  EXPECT_LT(chain_rhs(s, Eigen::Vector3d::Zero(), prm).norm(), 1e-14);
}

TEST(Chain, EndPointFollowsControl) {
  ChainParams prm;
  const Vector s = chain_steady_state(prm, Eigen::Vector3d(1, 0, 0));
  const Eigen::Vector3d u(0.1, -0.2, 0.3);
  EXPECT_LT((chain_rhs(s, u, prm).tail(3) - u).norm(), 1e-15);
}

TEST(Chain, JacobianMatchesFiniteDifferences) {
  std::mt19937 rng(5);
  ChainDynamics dyn;
  const Vector base = chain_steady_state(dyn.params(), Eigen::Vector3d(1, 0, 0));
  for (int t = 0; t < 10; ++t) {
    const Vector x = base + test::random_vector(rng, dyn.nx(), -0.05, 0.05);
    const Vector u = test::random_vector(rng, 3);
    Matrix A, B;
    dyn.jacobian(x, u, A, B);
    const Matrix Afd = test::fd_jacobian([&](const Vector& y) { return dyn.rhs(y, u); }, x);
    const Matrix Bfd = test::fd_jacobian([&](const Vector& v) { return dyn.rhs(x, v); }, u);
    EXPECT_LT((A - Afd).norm(), 1e-6 * (1 + A.norm()));
    EXPECT_LT((B - Bfd).norm(), 1e-8);
  }
}

// Independent oracle: a resting chain minimises the potential energy
// sum_i [D/2 e_i^2 + D1/4 e_i^4] - m g . p_i, so its finite-difference
// gradient must vanish at the computed steady state.
TEST(Chain, SteadyStateIsEnergyStationary) {
  ChainParams prm;
  const Eigen::Vector3d end(1, 0, 0);
  const Vector s = chain_steady_state(prm, end);
  const int np = 3 * (prm.n - 1);
  EXPECT_LT(s.segment(np, np).norm(), 1e-15);  // velocities zero
  EXPECT_LT((s.tail(3) - end).norm(), 1e-15);

  auto energy = [&](const Vector& pos) {
    double V = 0;
    Eigen::Vector3d prev = prm.wall_anchor;
    for (int i = 1; i <= prm.n; ++i) {
      const Eigen::Vector3d p = i < prm.n ? Eigen::Vector3d(pos.segment<3>(3 * (i - 1))) : end;
      const double e = (p - prev).norm() - prm.L;
      V += 0.5 * prm.D * e * e + 0.25 * prm.D1 * e * e * e * e;
      if (i < prm.n) V -= prm.m * prm.gravity.dot(p);
      prev = p;
    }
    return V;
  };
  const Vector pos = s.head(np);
  Vector grad(np);
  const double h = 1e-6;
  for (int j = 0; j < np; ++j) {
    Vector a = pos, b = pos;
    a(j) += h;
    b(j) -= h;
    grad(j) = (energy(a) - energy(b)) / (2 * h);
  }
  EXPECT_LT(grad.norm(), 1e-6);
  // Masses hang below the anchor-to-end line.
  for (int i = 0; i < prm.n - 1; ++i) EXPECT_LT(s(3 * i + 2), 0.0);
}

TEST(Chain, CoincidentMassesRaise) {
  ChainParams prm;
  Vector s = Vector::Zero(prm.nx());
  EXPECT_THROW(chain_rhs(s, Eigen::Vector3d::Zero(), prm), SingularGeometryError);
  ChainDynamics dyn(prm);
  Matrix A, B;
  EXPECT_THROW(dyn.jacobian(s, Vector::Zero(3), A, B), SingularGeometryError);
}

TEST(Constraints, BoxRowsAndJacobian) {
  const auto c = box_constraint(3, {{0, -1.0, 2.0}, {2, -INFINITY, 0.5}});
  EXPECT_EQ(c.rows, 3);
  Vector v;
  Matrix J;
  c(Vector::Constant(3, 0.25), v, J);
  EXPECT_DOUBLE_EQ(v(0), 0.25 - 2.0);
  EXPECT_DOUBLE_EQ(v(1), -1.0 - 0.25);
  EXPECT_DOUBLE_EQ(v(2), 0.25 - 0.5);
  EXPECT_DOUBLE_EQ(J(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(J(1, 0), -1.0);
  EXPECT_DOUBLE_EQ(J(2, 2), 1.0);
  EXPECT_THROW(box_constraint(3, {{4, 0, 1}}), ConfigError);
  EXPECT_THROW(box_constraint(3, {{0, 1, 0}}), ConfigError);
}

TEST(ModelSpec, ValidatesWeights) {
  auto p = test::pendulum_problem(5);
  EXPECT_NO_THROW(p.validate());
  p.model.stage_weights = Vector::Ones(3);
  EXPECT_THROW(p.validate(), ConfigError);
}
