#include <doctest.h>

#include "factorflow/analysis.hpp"
#include "factorflow/flow.hpp"
#include "factorflow/instance.hpp"

#include <cmath>

using namespace factorflow;

namespace {

ProblemInstance diag_instance() {
  // A_1 = diag(1,0), y_1 = 1 on R^2
  ProblemInstance inst;
  inst.n = 2;
  inst.q = 1;
  inst.ranks = {1};
  Matrix A = Matrix::Zero(2, 2);
  A(0, 0) = 1;
  inst.A = {A};
  inst.y.resize(1);
  inst.y << 1;
  return inst;
}

int numerical_rank_sym(const Matrix& X, double rel_tol) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(X, Eigen::EigenvaluesOnly);
  double top = es.eigenvalues().cwiseAbs().maxCoeff();
  if (top == 0) return 0;
  int r = 0;
  for (int i = 0; i < es.eigenvalues().size(); ++i)
    if (es.eigenvalues()(i) > rel_tol * top) ++r;
  return r;
}

}  // namespace

TEST_CASE("cost_J evaluation") {
  SUBCASE("zero matrix picks up the targets") {
    ProblemInstance inst;
    inst.n = 2;
    inst.q = 2;
    inst.ranks = {1, 1};
    inst.A = {Matrix::Identity(2, 2), 2 * Matrix::Identity(2, 2)};
    inst.y.resize(2);
    inst.y << 1, 2;
    CHECK(cost_J(inst, Matrix::Zero(2, 2)) == doctest::Approx(2.5));
  }
  SUBCASE("feasible point has zero cost") {
    ProblemInstance inst = diag_instance();
    Matrix X = Matrix::Zero(2, 2);
    X(0, 0) = 1;
    CHECK(cost_J(inst, X) == doctest::Approx(0.0));
  }
  SUBCASE("direct evaluation") {
    ProblemInstance inst = diag_instance();
    Matrix X = Matrix::Zero(2, 2);
    X(0, 0) = 3;
    X(1, 1) = 7;
    CHECK(cost_J(inst, X) == doctest::Approx(2.0));  // 0.5 (3-1)^2
  }
  SUBCASE("dimension mismatch") {
    ProblemInstance inst = diag_instance();
    CHECK_THROWS_AS(cost_J(inst, Matrix::Zero(3, 3)), std::invalid_argument);
  }
}

TEST_CASE("rhs_X") {
  ProblemInstance inst = diag_instance();
  SUBCASE("feasible X is an equilibrium") {
    Matrix X = Matrix::Zero(2, 2);
    X(0, 0) = 1;  // tr(A X) = 1 = y
    CHECK(rhs_X(inst, X).norm() == doctest::Approx(0.0));
  }
  SUBCASE("origin is an equilibrium") {
    CHECK(rhs_X(inst, Matrix::Zero(2, 2)).norm() == doctest::Approx(0.0));
  }
  SUBCASE("direct evaluation with A = I") {
    ProblemInstance id;
    id.n = 2;
    id.q = 1;
    id.ranks = {2};
    id.A = {Matrix::Identity(2, 2)};
    id.y.resize(1);
    id.y << 1;
    Matrix R = rhs_X(id, Matrix::Identity(2, 2));  // rho = 1, rhs = -2 I
    CHECK((R + 2 * Matrix::Identity(2, 2)).norm() < 1e-14);
  }
  SUBCASE("output symmetric") {
    Rng rng(5);
    ProblemInstance g = gen_generic(4, {2, 1}, 5.0, rng);
    Matrix X = make_psd(4, 3, rng);
    Matrix R = rhs_X(g, X);
    CHECK((R - R.transpose()).norm() < 1e-12 * R.norm());
  }
}

TEST_CASE("rhs_U equals minus the gradient of the quarter cost") {
  Rng rng(9);
  ProblemInstance inst = gen_generic(4, {2, 1}, 5.0, rng);
  SUBCASE("zero state gives zero rhs") {
    CHECK(rhs_U(inst, Matrix::Zero(4, 2)).norm() == doctest::Approx(0.0));
  }
  SUBCASE("finite differences") {
    Matrix U = rng.gaussian_matrix(4, 3);
    Matrix R = rhs_U(inst, U);
    double h = 1e-6 * (1 + U.norm());
    double worst = 0;
    for (int i = 0; i < U.rows(); ++i)
      for (int j = 0; j < U.cols(); ++j) {
        Matrix Up = U, Um = U;
        Up(i, j) += h;
        Um(i, j) -= h;
        double g = (cost_U(inst, Up) - cost_U(inst, Um)) / (2 * h);
        worst = std::max(worst, std::abs(-g - R(i, j)));
      }
    CHECK(worst < 1e-6 * (1 + R.norm()));
  }
}

TEST_CASE("integrate") {
  SUBCASE("scalar linear decay") {
    FlowOptions opts;
    opts.t_max = 1.0;
    opts.snapshot_every = 0.1;
    opts.grad_tol = 1e-300;  // run to the horizon
    Vector x0(1);
    x0 << 1;
    Trajectory tr = integrate([](const Vector& x) { return Vector(-x); }, x0, opts);
    CHECK_FALSE(tr.converged);
    CHECK(tr.terminal_time == doctest::Approx(1.0));
    CHECK(std::abs(tr.terminal_state(0) - std::exp(-1.0)) < 1e-8);
  }
  SUBCASE("equilibrium converges immediately") {
    FlowOptions opts;
    Vector x0 = Vector::Zero(3);
    Trajectory tr = integrate([](const Vector& x) { return Vector(-x); }, x0, opts);
    CHECK(tr.converged);
    CHECK(tr.terminal_time == 0.0);
  }
  SUBCASE("times strictly increasing from zero and on the snapshot grid") {
    FlowOptions opts;
    opts.t_max = 2.0;
    opts.snapshot_every = 0.25;
    opts.grad_tol = 1e-300;
    Vector x0(2);
    x0 << 1, 2;
    Trajectory tr = integrate([](const Vector& x) { return Vector(-x); }, x0, opts);
    CHECK(tr.times.front() == 0.0);
    for (std::size_t i = 1; i < tr.times.size(); ++i) CHECK(tr.times[i] > tr.times[i - 1]);
    CHECK(tr.times[1] == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("matches a tight-tolerance reference on a q=1 flow") {
    Rng rng(31);
    ProblemInstance inst = gen_generic(3, {3}, 1.0, rng);
    Matrix U0 = rng.gaussian_matrix(3, 1);
    U0 *= 0.1 / U0.norm();
    FlowOptions loose;
    loose.t_max = 5.0;
    loose.snapshot_every = 1.0;
    loose.grad_tol = 1e-300;
    FlowOptions tight = loose;
    tight.rel_tol = 1e-12;
    tight.abs_tol = 1e-14;
    ConvergeResult a = converge(inst, U0, Coordinates::U, loose);
    ConvergeResult b = converge(inst, U0, Coordinates::U, tight);
    REQUIRE(a.trajectory.times.size() == b.trajectory.times.size());
    for (std::size_t i = 0; i < a.trajectory.times.size(); ++i) {
      CHECK(a.trajectory.times[i] == doctest::Approx(b.trajectory.times[i]).epsilon(1e-12));
      CHECK((a.trajectory.states[i] - b.trajectory.states[i]).norm() <
            1e-6 * (1 + b.trajectory.states[i].norm()));
    }
  }
}

TEST_CASE("linear_comparison") {
  SUBCASE("identity at t=0") {
    Rng rng(37);
    ProblemInstance inst = gen_generic(4, {2, 2}, 5.0, rng);
    Matrix V0 = rng.gaussian_matrix(4, 4);
    CHECK((linear_comparison(inst, V0, 0.0) - V0).norm() < 1e-12);
  }
  SUBCASE("diagonal exponential") {
    ProblemInstance inst;
    inst.n = 2;
    inst.q = 1;
    inst.ranks = {2};
    Matrix A = Matrix::Zero(2, 2);
    A(0, 0) = 2;
    A(1, 1) = 1;
    inst.A = {A};
    inst.y.resize(1);
    inst.y << 1;
    Matrix V = linear_comparison(inst, Matrix::Identity(2, 2), 1.0);
    CHECK(V(0, 0) == doctest::Approx(std::exp(2.0)).epsilon(1e-12));
    CHECK(V(1, 1) == doctest::Approx(std::exp(1.0)).epsilon(1e-12));
    CHECK(std::abs(V(0, 1)) < 1e-14);
  }
  SUBCASE("halving delta shrinks the nonlinear gap about eightfold") {
    Rng rng(41);
    ProblemInstance inst = gen_generic(4, {2, 1}, 5.0, rng);
    for (int i = 0; i < inst.q; ++i) inst.y(i) = std::max(inst.y(i), 0.5);
    double lam = comparison_rate(inst);
    double delta = 1e-4;
    double tstar = bound_validity_horizon(lam, inst.q, delta, 400.0 / lam);
    Matrix U0 = rng.gaussian_matrix(4, 4);
    U0 /= U0.norm();
    FlowOptions opts;
    opts.rel_tol = 1e-12;
    opts.abs_tol = 1e-18;
    opts.grad_tol = 1e-300;
    opts.t_max = tstar;
    opts.snapshot_every = tstar / 20;
    auto gap = [&](double dl) {
      ConvergeResult cr = converge(inst, Matrix(dl * U0), Coordinates::U, opts);
      double worst = 0;
      for (std::size_t i = 0; i < cr.trajectory.times.size(); ++i) {
        Matrix V = linear_comparison(inst, dl * U0, cr.trajectory.times[i]);
        worst = std::max(worst, (cr.trajectory.state_at(i) - V).norm());
      }
      return worst;
    };
    double e1 = gap(delta);
    double e2 = gap(delta / 2);
    REQUIRE(e1 > 1e-13);  // measurable above integrator noise
    double ratio = e1 / e2;
    CHECK(ratio > 6.0);
    CHECK(ratio < 10.0);
  }
}

TEST_CASE("converge returns a feasible start unchanged") {
  Rng rng(43);
  Vector y(2);
  y << 1, 2;
  auto [inst, cert] = gen_tame(4, {2, 2}, 2.0, 1.0, y, rng);
  NormalForm nf = build_normal_form(inst);
  Vector z(2);
  z << std::sqrt(y(0)), std::sqrt(y(1));
  Matrix xfeas = from_reduced(cert, z);
  Matrix U = from_normal(nf, xfeas, Matrix());
  FlowOptions opts;
  ConvergeResult cr = converge(inst, Matrix(U * U.transpose()), Coordinates::X, opts);
  CHECK(cr.trajectory.converged);
  CHECK(cr.trajectory.terminal_time == 0.0);
}

TEST_CASE("linear regression flow reaches the least-norm interpolant") {
  // Euclidean gradient flow of 1/2 sum (mu_i^T x - y_i)^2 from x = 0; the
  // limit is the pseudo-inverse solution (oracle: normal equations on the
  // span of the mu_i).
  Rng rng(61);
  int n = 6, q = 3;
  Matrix M = rng.gaussian_matrix(q, n);
  Vector yl(q);
  for (int i = 0; i < q; ++i) yl(i) = rng.uniform(-2.0, 2.0);
  RhsFn rhs = [&](const Vector& x) {
    Vector out = Vector::Zero(n);
    for (int i = 0; i < q; ++i) out -= (M.row(i).dot(x) - yl(i)) * M.row(i).transpose();
    return out;
  };
  CostFn cost = [&](const Vector& x) {
    double J = 0;
    for (int i = 0; i < q; ++i) J += 0.5 * std::pow(M.row(i).dot(x) - yl(i), 2);
    return J;
  };
  FlowOptions opts;
  opts.t_max = 2000;
  opts.snapshot_every = 100;
  opts.grad_tol = 1e-12;
  Trajectory tr = integrate(rhs, Vector::Zero(n), opts, cost);
  Vector x_star = M.transpose() * (M * M.transpose()).ldlt().solve(yl);
  CHECK(tr.converged);
  CHECK((tr.terminal_state - x_star).norm() < 1e-6 * (1 + x_star.norm()));
}

TEST_CASE("X trajectory structure") {
  Rng rng(47);
  for (int trial = 0; trial < 3; ++trial) {
    ProblemInstance inst = gen_generic(5, {2, 2}, 5.0, rng);
    int k = 2 + trial;
    Matrix U0 = rng.gaussian_matrix(5, k);
    U0 /= U0.norm();
    Matrix X0 = 0.3 * (U0 * U0.transpose());
    FlowOptions opts;
    opts.t_max = 40;
    opts.snapshot_every = 0.5;
    ConvergeResult cr = converge(inst, X0, Coordinates::X, opts);
    const Trajectory& tr = cr.trajectory;
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
      Matrix X = tr.state_at(i);
      CHECK((X - X.transpose()).norm() <= 1e-10 * std::max(1e-30, X.norm()));
      Eigen::SelfAdjointEigenSolver<Matrix> es(X, Eigen::EigenvaluesOnly);
      CHECK(es.eigenvalues().minCoeff() >= -1e-8 * std::max(1e-30, X.norm()));
      CHECK(numerical_rank_sym(X, 1e-8) <= k);
      if (i > 0) CHECK(tr.J_values[i] <= tr.J_values[i - 1] + 1e-9 * (1 + tr.J_values[i - 1]));
    }
  }
}

TEST_CASE("U and X flows stay consistent") {
  Rng rng(53);
  ProblemInstance inst = gen_generic(4, {2, 1}, 5.0, rng);
  Matrix U0 = rng.gaussian_matrix(4, 3);
  U0 /= U0.norm();
  FlowOptions opts;
  opts.t_max = 15;
  opts.snapshot_every = 0.5;
  opts.grad_tol = 1e-300;
  ConvergeResult cu = converge(inst, U0, Coordinates::U, opts);
  ConvergeResult cx = converge(inst, Matrix(U0 * U0.transpose()), Coordinates::X, opts);
  std::size_t npts = std::min(cu.trajectory.times.size(), cx.trajectory.times.size());
  REQUIRE(npts >= 10);
  for (std::size_t i = 0; i < npts; ++i) {
    if (std::abs(cu.trajectory.times[i] - cx.trajectory.times[i]) > 1e-12) break;
    Matrix U = cu.trajectory.state_at(i);
    Matrix X = cx.trajectory.state_at(i);
    CHECK((X - U * U.transpose()).norm() <= 1e-6 * (1 + X.norm()));
  }
}
