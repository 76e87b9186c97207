#include <doctest.h>

#include "factorflow/instance.hpp"
#include "factorflow/normal_form.hpp"

#include <filesystem>

using namespace factorflow;

TEST_CASE("make_psd produces factor-rank matrices") {
  Rng rng(42);
  SUBCASE("1x1 square is nonnegative") {
    Matrix M = make_psd(1, 1, rng);
    CHECK(M(0, 0) >= 0);
  }
  SUBCASE("full rank has all positive eigenvalues") {
    Matrix M = make_psd(3, 3, rng);
    Eigen::SelfAdjointEigenSolver<Matrix> es(M, Eigen::EigenvaluesOnly);
    CHECK(es.eigenvalues().minCoeff() > 0);
  }
  SUBCASE("rank-2 in dimension 4 has two near-zero eigenvalues") {
    Matrix M = make_psd(4, 2, rng);
    Eigen::SelfAdjointEigenSolver<Matrix> es(M, Eigen::EigenvaluesOnly);
    Vector lam = es.eigenvalues();  // ascending
    CHECK(lam(0) < 1e-10 * lam(3));
    CHECK(lam(1) < 1e-10 * lam(3));
    CHECK(lam(2) > 1e-6 * lam(3));
  }
  SUBCASE("rank out of range") {
    CHECK_THROWS_AS(make_psd(3, 0, rng), std::invalid_argument);
    CHECK_THROWS_AS(make_psd(3, 4, rng), std::invalid_argument);
  }
}

TEST_CASE("gen_generic shapes and invariants") {
  Rng rng(7);
  SUBCASE("paper-scale shape") {
    ProblemInstance inst = gen_generic(7, {3, 2, 2}, 5.0, rng);
    CHECK(inst.n == 7);
    CHECK(inst.q == 3);
    CHECK(inst.total_rank() == 7);
    for (int i = 0; i < inst.q; ++i) {
      CHECK(is_symmetric(inst.A[i]));
      CHECK(is_psd(inst.A[i]));
      CHECK(numerical_rank(inst.A[i]) == inst.ranks[i]);
      CHECK(inst.y(i) > 0);
      CHECK(inst.y(i) <= 5.0);
    }
  }
  SUBCASE("single full-rank matrix") {
    ProblemInstance inst = gen_generic(2, {2}, 1.0, rng);
    CHECK(check_rank_spread(inst).ok);
  }
  SUBCASE("m equal to n") {
    ProblemInstance inst = gen_generic(4, {2, 2}, 5.0, rng);
    CHECK(inst.total_rank() == 4);
  }
  SUBCASE("empty ranks rejected") {
    CHECK_THROWS_AS(gen_generic(4, {}, 5.0, rng), std::invalid_argument);
  }
}

TEST_CASE("gen_tame builds the prescribed spectrum") {
  Rng rng(11);
  Vector y(2);
  y << 1, 4;
  auto [inst, cert] = gen_tame(4, {2, 2}, 2.0, 1.0, y, rng);

  Matrix S = inst.A[0] + inst.A[1];
  Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
  Vector lam = es.eigenvalues();
  CHECK(lam(3) == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(lam(2) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(lam(1) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(lam(0) == doctest::Approx(1.0).epsilon(1e-10));

  CHECK(cert.alpha == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(cert.beta == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(cert.block_norms.minCoeff() > 1e-6);
  CHECK(certificate_valid(inst, cert));

  SUBCASE("degenerate spectrum rejected") {
    CHECK_THROWS_AS(gen_tame(4, {2, 2}, 1.0, 1.0, y, rng), std::invalid_argument);
  }
}

TEST_CASE("gen_commuting_projections") {
  Rng rng(13);
  SUBCASE("orthogonal ranges commute") {
    ProblemInstance inst = gen_commuting_projections(3, {2, 1}, {1.0, 1.0}, rng);
    CHECK((inst.A[0] * inst.A[1]).norm() < 1e-12);
    CHECK((inst.A[1] * inst.A[0]).norm() < 1e-12);
    CHECK((inst.A[0] * inst.A[0] - inst.A[0]).norm() < 1e-10);
  }
  SUBCASE("generalized projection identity") {
    ProblemInstance inst = gen_commuting_projections(4, {2, 2}, {2.0, 3.0}, rng);
    CHECK((inst.A[0] * inst.A[0] - 2.0 * inst.A[0]).norm() < 1e-10);
    CHECK((inst.A[1] * inst.A[1] - 3.0 * inst.A[1]).norm() < 1e-10);
  }
  SUBCASE("rank-1 psd matrices are generalized projections") {
    ProblemInstance inst = gen_commuting_projections(2, {1, 1}, {1.0, 1.0}, rng);
    for (const auto& Ai : inst.A) CHECK((Ai * Ai - Ai).norm() < 1e-10);
  }
  SUBCASE("over-budget ranks rejected") {
    CHECK_THROWS_AS(gen_commuting_projections(2, {2, 1}, {1.0, 1.0}, rng),
                    std::invalid_argument);
  }
}

TEST_CASE("check_rank_spread") {
  Rng rng(17);
  SUBCASE("tame output satisfies it") {
    Vector y(2);
    y << 1, 2;
    auto [inst, cert] = gen_tame(5, {2, 2}, 3.0, 1.0, y, rng);
    CHECK(check_rank_spread(inst).ok);
  }
  SUBCASE("repeated rank-1 matrix fails with span 1") {
    Vector v = rng.gaussian_vector(3);
    ProblemInstance inst;
    inst.n = 3;
    inst.q = 2;
    inst.ranks = {1, 1};
    inst.A = {v * v.transpose(), v * v.transpose()};
    inst.y.resize(2);
    inst.y << 1, 1;
    RankSpreadReport rep = check_rank_spread(inst);
    CHECK_FALSE(rep.ok);
    CHECK(rep.m == 2);
    CHECK(rep.span_dim == 1);
  }
  SUBCASE("m exceeding n fails") {
    ProblemInstance inst = gen_generic(3, {2, 2}, 5.0, rng);
    RankSpreadReport rep = check_rank_spread(inst);
    CHECK_FALSE(rep.ok);
    CHECK(rep.m == 4);
  }
}

TEST_CASE("check_tame") {
  Rng rng(19);
  SUBCASE("certifies gen_tame output") {
    Vector y(2);
    y << 1, 4;
    auto [inst, cert] = gen_tame(4, {2, 2}, 2.0, 1.0, y, rng);
    TameCheck tc = check_tame(inst, 1e-6);
    REQUIRE(tc.certificate.has_value());
    CHECK(tc.certificate->alpha == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(tc.certificate->beta == doctest::Approx(1.0).epsilon(1e-8));
  }
  SUBCASE("degenerate leading eigenvalue is refused") {
    Vector y(2);
    y << 1, 1;
    ProblemInstance inst = gen_with_spectrum(4, {2, 2}, {2, 2, 1, 1}, y, rng);
    TameCheck tc = check_tame(inst, 1e-6);
    CHECK_FALSE(tc.certificate.has_value());
    CHECK(tc.reason.find("leading eigenvalue not simple") != std::string::npos);
  }
  SUBCASE("spread trailing eigenvalues are refused at tight tol") {
    Vector y(2);
    y << 1, 1;
    double gamma = 0.1;
    ProblemInstance inst =
        gen_with_spectrum(4, {2, 2}, {2, 1, 1 + gamma, 1 + gamma / 2}, y, rng);
    TameCheck tc = check_tame(inst, gamma / 4);
    CHECK_FALSE(tc.certificate.has_value());
    CHECK(tc.reason.find("trailing eigenvalues not equal") != std::string::npos);
  }
}

TEST_CASE("factor set reconstructs every A_i") {
  Rng rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    ProblemInstance inst = gen_generic(6, {3, 2}, 5.0, rng);
    FactorSet fs = factor_set(inst);
    CHECK(fs.B.cols() == inst.total_rank());
    for (int i = 0; i < inst.q; ++i) {
      CHECK((inst.A[i] - fs.blocks[i] * fs.blocks[i].transpose()).norm() <=
            1e-10 * inst.A[i].norm());
    }
  }
}

TEST_CASE("instance json round trip") {
  Rng rng(29);
  ProblemInstance inst = gen_generic(5, {2, 2}, 5.0, rng);
  inst.seed = 29;
  auto path = std::filesystem::temp_directory_path() / "factorflow_inst_test.json";
  save_instance(inst, path.string());
  ProblemInstance back = load_instance(path.string());
  CHECK(back.n == inst.n);
  CHECK(back.q == inst.q);
  CHECK(back.ranks == inst.ranks);
  CHECK(back.seed == inst.seed);
  for (int i = 0; i < inst.q; ++i)
    CHECK((back.A[i] - inst.A[i]).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK((back.y - inst.y).cwiseAbs().maxCoeff() <= 1e-15);
  std::filesystem::remove(path);
}

TEST_CASE("parallel generation streams are deterministic") {
  Rng a = Rng::stream(123, 5);
  Rng b = Rng::stream(123, 5);
  ProblemInstance ia = gen_generic(4, {2, 1}, 5.0, a);
  ProblemInstance ib = gen_generic(4, {2, 1}, 5.0, b);
  CHECK(instance_to_json(ia) == instance_to_json(ib));
}
