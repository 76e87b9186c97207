#include <doctest.h>

#include "factorflow/analysis.hpp"
#include "factorflow/flow.hpp"
#include "factorflow/instance.hpp"
#include "factorflow/normal_form.hpp"

#include <cmath>

using namespace factorflow;

namespace {

ProblemInstance split_diag_instance() {
  // A_1 = diag(1,0), A_2 = diag(0,1): already in normal form
  ProblemInstance inst;
  inst.n = 2;
  inst.q = 2;
  inst.ranks = {1, 1};
  Matrix A1 = Matrix::Zero(2, 2), A2 = Matrix::Zero(2, 2);
  A1(0, 0) = 1;
  A2(1, 1) = 1;
  inst.A = {A1, A2};
  inst.y.resize(2);
  inst.y << 1, 1;
  return inst;
}

}  // namespace

TEST_CASE("build_normal_form") {
  SUBCASE("diagonal instance is its own normal form") {
    NormalForm nf = build_normal_form(split_diag_instance());
    CHECK((nf.P - Matrix::Identity(2, 2)).norm() < 1e-12);
    CHECK((nf.Q - Matrix::Identity(2, 2)).norm() < 1e-12);
  }
  SUBCASE("tame instance reproduces the prescribed Q spectrum") {
    Rng rng(3);
    Vector y(2);
    y << 1, 4;
    auto [inst, cert] = gen_tame(4, {2, 2}, 2.0, 1.0, y, rng);
    NormalForm nf = build_normal_form(inst);
    Eigen::SelfAdjointEigenSolver<Matrix> es(nf.Q, Eigen::EigenvaluesOnly);
    CHECK(es.eigenvalues()(3) == doctest::Approx(2.0).epsilon(1e-9));
    for (int i = 0; i < 3; ++i)
      CHECK(es.eigenvalues()(i) == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("P conjugates every A_i to its 0/1 block") {
    Rng rng(5);
    ProblemInstance inst = gen_generic(6, {2, 2, 1}, 5.0, rng);
    NormalForm nf = build_normal_form(inst);
    const auto off = nf.offsets();
    for (int i = 0; i < inst.q; ++i) {
      Matrix Ei = Matrix::Zero(6, 6);
      for (int j = off[i]; j < off[i + 1]; ++j) Ei(j, j) = 1;
      CHECK((nf.P.transpose() * inst.A[i] * nf.P - Ei).norm() <= 1e-8 * inst.A[i].norm());
    }
    CHECK((nf.P * nf.P_inv - Matrix::Identity(6, 6)).norm() <= 1e-10);
  }
  SUBCASE("rank spread violation raises a structured error") {
    Rng rng(7);
    ProblemInstance inst = gen_generic(3, {2, 2}, 5.0, rng);
    try {
      build_normal_form(inst);
      FAIL("expected RankSpreadError");
    } catch (const RankSpreadError& e) {
      CHECK(e.m == 4);
      CHECK(e.span_dim == 3);
    }
  }
}

TEST_CASE("to_normal and from_normal") {
  Rng rng(11);
  ProblemInstance inst = gen_generic(5, {2, 1}, 5.0, rng);
  NormalForm nf = build_normal_form(inst);
  SUBCASE("round trip") {
    Matrix U = rng.gaussian_matrix(5, 3);
    auto [x, tail] = to_normal(nf, U);
    CHECK(x.rows() == 3);
    CHECK(tail.rows() == 2);
    CHECK((from_normal(nf, x, tail) - U).norm() <= 1e-12 * (1 + U.norm()));
  }
  SUBCASE("P = I means x is the head") {
    NormalForm nfd = build_normal_form(split_diag_instance());
    Matrix U = rng.gaussian_matrix(2, 2);
    auto [x, tail] = to_normal(nfd, U);
    CHECK((x - U).norm() < 1e-12);
    CHECK(tail.size() == 0);
  }
  SUBCASE("tail rows are constant along the U flow") {
    Matrix U0 = rng.gaussian_matrix(5, 2);
    U0 /= U0.norm();
    FlowOptions opts;
    opts.t_max = 10;
    opts.snapshot_every = 0.5;
    opts.grad_tol = 1e-300;
    ConvergeResult cr = converge(inst, U0, Coordinates::U, opts);
    auto [x0, tail0] = to_normal(nf, U0);
    for (std::size_t i = 0; i < cr.trajectory.times.size(); ++i) {
      auto [x, tail] = to_normal(nf, cr.trajectory.state_at(i));
      CHECK((tail - tail0).norm() <= 1e-8 * (1 + tail0.norm()));
    }
  }
}

TEST_CASE("rhs_normal") {
  Rng rng(13);
  ProblemInstance inst = gen_generic(5, {2, 2}, 5.0, rng);
  NormalForm nf = build_normal_form(inst);
  SUBCASE("feasible and zero states are equilibria") {
    Matrix x = rng.gaussian_matrix(4, 2);
    const auto off = nf.offsets();
    for (int i = 0; i < nf.q(); ++i) {
      auto blk = x.middleRows(off[i], nf.ranks[i]);
      blk *= std::sqrt(inst.y(i)) / blk.norm();
    }
    CHECK(rhs_normal(nf, inst.y, x).norm() < 1e-12);
    CHECK(rhs_normal(nf, inst.y, Matrix::Zero(4, 2)).norm() == doctest::Approx(0.0));
  }
  SUBCASE("conjugation consistency with rhs_U") {
    Matrix U = rng.gaussian_matrix(5, 2);
    auto [x, tail] = to_normal(nf, U);
    Matrix lhs = (nf.P_inv * rhs_U(inst, U)).topRows(nf.m);
    Matrix rhs = rhs_normal(nf, inst.y, x);
    CHECK((lhs - rhs).norm() <= 1e-8 * (1 + rhs.norm()));
  }
}

TEST_CASE("leading_decomposition") {
  SUBCASE("diag(2,1,1)") {
    Matrix Q = Vector::Ones(3).asDiagonal();
    Q(0, 0) = 2;
    LeadingDecomposition ld = leading_decomposition(Q, 1e-8);
    CHECK(ld.alpha == doctest::Approx(1.0));
    CHECK(ld.beta == doctest::Approx(1.0));
    CHECK(std::abs(ld.v(0)) == doctest::Approx(1.0));
    CHECK(ld.v(0) > 0);  // sign convention
  }
  SUBCASE("identity has no simple leading eigenvalue") {
    try {
      leading_decomposition(Matrix::Identity(3, 3), 1e-8);
      FAIL("expected SpectrumShapeError");
    } catch (const SpectrumShapeError& e) {
      CHECK(std::string(e.what()).find("leading eigenvalue not simple") != std::string::npos);
      CHECK(e.eigenvalues.size() == 3);
    }
  }
  SUBCASE("reconstructs a planted leading pair") {
    Rng rng(17);
    Vector v = rng.gaussian_vector(5).normalized();
    Matrix Q = 2.0 * (v * v.transpose()) + 0.5 * Matrix::Identity(5, 5);
    LeadingDecomposition ld = leading_decomposition(Q, 1e-8);
    CHECK(ld.alpha == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(ld.beta == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(std::min((ld.v - v).norm(), (ld.v + v).norm()) < 1e-10);
  }
}

TEST_CASE("lambda_v projection and reduced coordinates") {
  Rng rng(19);
  Vector y(2);
  y << 1, 4;
  auto [inst, cert] = gen_tame(4, {2, 2}, 2.5, 1.0, y, rng);
  const auto off = block_offsets(cert.ranks);

  SUBCASE("members project with zero residual") {
    Vector lam(2);
    lam << 0.7, -1.3;
    Vector x = Vector::Zero(4);
    for (int i = 0; i < 2; ++i)
      x.segment(off[i], cert.ranks[i]) = lam(i) * cert.v.segment(off[i], cert.ranks[i]);
    LambdaProjection lp = lambda_v_project(cert, x);
    CHECK((lp.lambda - lam).norm() < 1e-12);
    CHECK(lp.residual < 1e-12);
  }
  SUBCASE("blockwise orthogonal vectors project to zero") {
    Vector x = Vector::Zero(4);
    for (int i = 0; i < 2; ++i) {
      Vector vb = cert.v.segment(off[i], cert.ranks[i]);
      Vector g = rng.gaussian_vector(cert.ranks[i]);
      g -= (g.dot(vb) / vb.squaredNorm()) * vb;
      x.segment(off[i], cert.ranks[i]) = g;
    }
    LambdaProjection lp = lambda_v_project(cert, x);
    CHECK(lp.lambda.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(lp.residual == doctest::Approx(x.norm()).epsilon(1e-12));
  }
  SUBCASE("reduced round trip and residual identity") {
    Vector lam(2);
    lam << 0.3, 0.9;
    ReducedState rs = to_reduced(cert, lam);
    CHECK(rs.z(0) == doctest::Approx(lam(0) * cert.block_norms(0)));
    CHECK((rs.G - cert.block_norms * cert.block_norms.transpose()).norm() == 0.0);
    Vector x = from_reduced(cert, rs.z);
    LambdaProjection lp = lambda_v_project(cert, x);
    CHECK((lp.lambda - lam).norm() < 1e-12);
    // rho_i(x) = z_i^2 - y_i
    Vector rho = residuals_normal(cert.ranks, y, x);
    for (int i = 0; i < 2; ++i)
      CHECK(rho(i) == doctest::Approx(rs.z(i) * rs.z(i) - y(i)).epsilon(1e-12));
    // z_i = sqrt(y_i) is feasible
    Vector zf = y.cwiseSqrt();
    CHECK(residuals_normal(cert.ranks, y, Matrix(from_reduced(cert, zf))).norm() < 1e-12);
  }
  SUBCASE("lambda = 0 maps to the origin") {
    CHECK(from_reduced(cert, Vector::Zero(2)).norm() == 0.0);
  }
}

TEST_CASE("rhs_reduced") {
  Rng rng(23);
  Vector y(2);
  y << 1, 4;
  auto [inst, cert] = gen_tame(4, {2, 2}, 2.0, 1.0, y, rng);
  SUBCASE("sign points and the origin are fixed") {
    Vector z(2);
    z << 1, -2;
    CHECK(rhs_reduced(cert, y, z).norm() < 1e-12);
    CHECK(rhs_reduced(cert, y, Vector::Zero(2)).norm() == doctest::Approx(0.0));
  }
  SUBCASE("metric gradient matches finite differences of J_r") {
    Vector z(2);
    z << 0.4, -1.1;
    Vector g_fd(2);
    double h = 1e-6 * (1 + z.norm());
    for (int i = 0; i < 2; ++i) {
      Vector zp = z, zm = z;
      zp(i) += h;
      zm(i) -= h;
      g_fd(i) = (cost_reduced(y, zp) - cost_reduced(y, zm)) / (2 * h);
    }
    Vector expect = -(reduced_metric(cert) * g_fd);
    Vector got = rhs_reduced(cert, y, z);
    CHECK((expect - got).norm() < 1e-6 * (1 + got.norm()));
  }
  SUBCASE("commutes with to_reduced of rhs_normal on Lambda_v") {
    NormalForm nf = build_normal_form(inst);
    Vector z(2);
    z << 0.8, 0.5;
    Vector x = from_reduced(cert, z);
    Matrix xdot = rhs_normal(nf, y, x);
    LambdaProjection lp = lambda_v_project(cert, Vector(xdot));
    Vector zdot_from_normal = to_reduced(cert, lp.lambda).z;
    CHECK(lp.residual < 1e-10);  // tangent to Lambda_v
    CHECK((zdot_from_normal - rhs_reduced(cert, y, z)).norm() < 1e-8);
  }
}

TEST_CASE("Lambda_v is invariant along normal trajectories") {
  Rng rng(29);
  int failures = 0;
  for (int trial = 0; trial < 10; ++trial) {
    Vector y(2);
    y << rng.uniform(0.3, 5.0), rng.uniform(0.3, 5.0);
    auto [inst, cert] = gen_tame(4, {2, 2}, rng.uniform(1.5, 4.0), 1.0, y, rng);
    NormalForm nf = build_normal_form(inst);
    Vector lam(2);
    lam << rng.uniform(-1, 1), rng.uniform(-1, 1);
    Vector x0 = from_reduced(cert, to_reduced(cert, lam).z);
    FlowOptions opts;
    opts.t_max = 100;
    opts.snapshot_every = 0.25;
    ConvergeResult cr = converge(inst, x0, Coordinates::Normal, opts, &nf, &cert);
    double worst = 0, scale = 0;
    for (const auto& s : cr.trajectory.states) {
      scale = std::max(scale, s.norm());
      worst = std::max(worst, lambda_v_project(cert, s).residual);
    }
    if (worst > 1e-8 * scale) ++failures;
  }
  CHECK(failures == 0);
}

TEST_CASE("transversal intersection points number 2^q") {
  Rng rng(31);
  Vector y(3);
  y << 1, 2, 3;
  auto [inst, cert] = gen_tame(7, {3, 2, 2}, 2.0, 1.0, y, rng);
  // solutions of lambda_i^2 ||vbar_i||^2 = y_i: exactly the sign enumeration
  int count = 0;
  for (int mask = 0; mask < 8; ++mask) {
    Vector z(3);
    for (int i = 0; i < 3; ++i) z(i) = ((mask >> i) & 1 ? -1 : 1) * std::sqrt(y(i));
    Vector x = from_reduced(cert, z);
    if (residuals_normal(cert.ranks, y, x).cwiseAbs().maxCoeff() < 1e-10) ++count;
  }
  CHECK(count == 8);
}

TEST_CASE("top eigenvector of the weighted system lies in Lambda_v with consistent signs") {
  Rng rng(37);
  for (int trial = 0; trial < 10; ++trial) {
    Vector y(2);
    y << rng.uniform(0.3, 5.0), rng.uniform(0.3, 5.0);
    auto [inst, cert] = gen_tame(5, {2, 2}, rng.uniform(1.5, 3.0), 1.0, y, rng);
    NormalForm nf = build_normal_form(inst);
    Matrix A = inst.y(0) * inst.A[0] + inst.y(1) * inst.A[1];
    Eigen::SelfAdjointEigenSolver<Matrix> es(A);
    Vector W = es.eigenvectors().col(4);
    Vector w = (nf.P_inv * W).head(nf.m);
    LambdaProjection lp = lambda_v_project(cert, w);
    CHECK(lp.residual <= 1e-8 * w.norm());
    CHECK(sign_consistency(lp.lambda, 1e-8));
  }
}

TEST_CASE("normal form json export") {
  Rng rng(41);
  ProblemInstance inst = gen_generic(4, {2, 1}, 5.0, rng);
  NormalForm nf = build_normal_form(inst);
  std::string j = normal_form_to_json(nf);
  CHECK(j.find("\"P\"") != std::string::npos);
  CHECK(j.find("\"Q\"") != std::string::npos);
  CHECK(j.find("\"N\"") != std::string::npos);
  CHECK(j.find("\"m\": 3") != std::string::npos);
}
