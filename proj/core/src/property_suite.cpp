#include "factorflow/analysis.hpp"
#include "factorflow/csv.hpp"
#include "factorflow/experiment.hpp"
#include "factorflow/instance.hpp"
#include "factorflow/normal_form.hpp"
#include "factorflow/regularizer.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

namespace factorflow {

namespace {

struct Suite {
  std::uint64_t seed;
  std::vector<PropertyCheck> checks;

  void run(const std::string& name, const std::function<std::string()>& body) {
    PropertyCheck c;
    c.name = name;
    try {
      c.detail = body();  // empty detail means pass
      c.passed = c.detail.empty();
    } catch (const std::exception& e) {
      c.passed = false;
      c.detail = std::string("exception: ") + e.what();
    }
    checks.push_back(std::move(c));
  }
};

std::string fmt(double v) { return format_double(v); }

ProblemInstance random_instance(Rng& rng, int n, std::vector<int> ranks, double y_max = 5.0) {
  return gen_generic(n, ranks, y_max, rng);
}

Vector random_y(Rng& rng, int q, double lo, double hi) {
  Vector y(q);
  for (int i = 0; i < q; ++i) y(i) = rng.uniform(lo, hi);
  return y;
}

int rank_at(const Matrix& X, double rel_tol) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(X, Eigen::EigenvaluesOnly);
  double top = es.eigenvalues().cwiseAbs().maxCoeff();
  if (top == 0) return 0;
  int r = 0;
  for (int i = 0; i < es.eigenvalues().size(); ++i)
    if (es.eigenvalues()(i) > rel_tol * top) ++r;
  return r;
}

std::string check_instances(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 10);
  for (int trial = 0; trial < 20; ++trial) {
    int n = 3 + static_cast<int>(rng.uniform() * 5);
    std::vector<int> ranks;
    int budget = n;
    int q = 1 + static_cast<int>(rng.uniform() * 3);
    for (int i = 0; i < q && budget > 0; ++i) {
      int r = 1 + static_cast<int>(rng.uniform() * std::min(3, budget));
      ranks.push_back(r);
      budget -= r;
    }
    ProblemInstance inst = random_instance(rng, n, ranks);
    for (int i = 0; i < inst.q; ++i) {
      if (!is_symmetric(inst.A[i])) return "A not symmetric";
      if (!is_psd(inst.A[i])) return "A not psd";
      if (inst.y(i) <= 0) return "y not positive";
    }
    FactorSet fs = factor_set(inst);
    for (int i = 0; i < inst.q; ++i) {
      double err = (inst.A[i] - fs.blocks[i] * fs.blocks[i].transpose()).norm();
      if (err > 1e-10 * inst.A[i].norm()) return "factor reconstruction error " + fmt(err);
    }
  }
  return "";
}

std::string check_commuting(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 11);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> ranks{2, 1};
    std::vector<double> gammas{rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0)};
    ProblemInstance inst = gen_commuting_projections(5, ranks, gammas, rng);
    for (int i = 0; i < inst.q; ++i) {
      double proj = (inst.A[i] * inst.A[i] - gammas[i] * inst.A[i]).norm();
      if (proj > 1e-10 * inst.A[i].norm()) return "not a generalized projection";
      for (int j = i + 1; j < inst.q; ++j) {
        double comm = (inst.A[i] * inst.A[j] - inst.A[j] * inst.A[i]).norm();
        if (comm > 1e-10 * inst.A[i].norm() * inst.A[j].norm()) return "pair does not commute";
      }
    }
  }
  return "";
}

std::string check_tame_generation(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 12);
  for (int trial = 0; trial < 20; ++trial) {
    Vector y = random_y(rng, 2, 0.2, 5.0);
    auto [inst, cert] = gen_tame(4, {2, 2}, rng.uniform(1.5, 4.0), 1.0, y, rng);
    if (!check_rank_spread(inst).ok) return "rank spread fails on gen_tame output";
    TameCheck tc = check_tame(inst, 1e-6);
    if (!tc.certificate) return "check_tame absent: " + tc.reason;
    if (!certificate_valid(inst, cert)) return "generated certificate invalid";
  }
  return "";
}

std::string check_roundtrip(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 13);
  ProblemInstance inst = random_instance(rng, 5, {2, 2});
  std::string text = instance_to_json(inst);
  ProblemInstance back = instance_from_json(text);
  if (back.n != inst.n || back.q != inst.q || back.ranks != inst.ranks)
    return "dimension mismatch after reload";
  for (int i = 0; i < inst.q; ++i)
    if ((back.A[i] - inst.A[i]).cwiseAbs().maxCoeff() > 1e-15) return "entries differ";
  if ((back.y - inst.y).cwiseAbs().maxCoeff() > 1e-15) return "y differs";
  return "";
}

std::string check_rng_determinism(std::uint64_t seed) {
  Rng a = Rng::stream(seed, 99), b = Rng::stream(seed, 99);
  ProblemInstance ia = random_instance(a, 4, {2, 1});
  ProblemInstance ib = random_instance(b, 4, {2, 1});
  if (instance_to_json(ia) != instance_to_json(ib)) return "streams disagree";
  Rng c = Rng::stream(seed, 100);
  if (instance_to_json(random_instance(c, 4, {2, 1})) == instance_to_json(ia))
    return "distinct streams coincide";
  return "";
}

std::string check_flow_structure(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 14);
  for (int trial = 0; trial < 8; ++trial) {
    ProblemInstance inst = random_instance(rng, 5, {2, 2});
    int k = 1 + static_cast<int>(rng.uniform() * 5);
    Matrix U0 = rng.gaussian_matrix(5, k);
    U0 /= U0.norm();
    Matrix X0 = 0.5 * (U0 * U0.transpose());
    FlowOptions opts;
    opts.t_max = 60;
    opts.snapshot_every = 0.5;
    ConvergeResult cr = converge(inst, X0, Coordinates::X, opts);
    const Trajectory& tr = cr.trajectory;
    double scale0 = 10.0 * (1.0 + std::sqrt(cost_J(inst, X0)) + X0.norm() +
                            std::sqrt(inst.y.sum()));
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
      Matrix X = tr.state_at(i);
      if ((X - X.transpose()).norm() > 1e-10 * std::max(X.norm(), 1e-30))
        return "symmetry violated";
      Eigen::SelfAdjointEigenSolver<Matrix> es(X, Eigen::EigenvaluesOnly);
      if (es.eigenvalues().minCoeff() < -1e-8 * std::max(X.norm(), 1e-30))
        return "psd violated";
      if (rank_at(X, 1e-8) > k) return "rank increased";
      if (i > 0 && tr.J_values[i] > tr.J_values[i - 1] + 1e-9 * (1 + tr.J_values[i - 1]))
        return "J increased by " + fmt(tr.J_values[i] - tr.J_values[i - 1]);
      if (X.norm() > scale0) return "trajectory unbounded";
    }
  }
  return "";
}

std::string check_ux_consistency(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 15);
  for (int trial = 0; trial < 5; ++trial) {
    ProblemInstance inst = random_instance(rng, 4, {2, 1});
    Matrix U0 = rng.gaussian_matrix(4, 3);
    U0 /= U0.norm();
    FlowOptions opts;
    opts.t_max = 20;
    opts.snapshot_every = 0.5;
    opts.grad_tol = 1e-13;  // keep both flows running over the full window
    ConvergeResult cu = converge(inst, U0, Coordinates::U, opts);
    ConvergeResult cx = converge(inst, U0 * U0.transpose(), Coordinates::X, opts);
    std::size_t npts = std::min(cu.trajectory.times.size(), cx.trajectory.times.size());
    for (std::size_t i = 0; i < npts; ++i) {
      if (std::abs(cu.trajectory.times[i] - cx.trajectory.times[i]) > 1e-12) break;
      Matrix U = cu.trajectory.state_at(i);
      Matrix X = cx.trajectory.state_at(i);
      if ((X - U * U.transpose()).norm() > 1e-6 * (1 + X.norm()))
        return "X and U U^T diverged at t=" + fmt(cu.trajectory.times[i]);
    }
  }
  return "";
}

std::string check_normal_form(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 16);
  for (int trial = 0; trial < 10; ++trial) {
    ProblemInstance inst = random_instance(rng, 6, {2, 2, 1});
    NormalForm nf = build_normal_form(inst);
    const auto off = nf.offsets();
    for (int i = 0; i < inst.q; ++i) {
      Matrix Ei = Matrix::Zero(nf.n, nf.n);
      for (int j = off[i]; j < off[i + 1]; ++j) Ei(j, j) = 1.0;
      if ((nf.P.transpose() * inst.A[i] * nf.P - Ei).norm() > 1e-8 * inst.A[i].norm())
        return "P^T A_i P != E_i";
    }
    Matrix PtP = nf.P.transpose() * nf.P;
    if ((PtP.topLeftCorner(nf.m, nf.m) * nf.Q - Matrix::Identity(nf.m, nf.m)).norm() > 1e-8)
      return "leading block of P^T P is not Q^{-1}";
    if (nf.n > nf.m) {
      if ((PtP.bottomRightCorner(nf.n - nf.m, nf.n - nf.m) -
           Matrix::Identity(nf.n - nf.m, nf.n - nf.m)).norm() > 1e-8)
        return "trailing block of P^T P is not the identity";
      if (PtP.topRightCorner(nf.m, nf.n - nf.m).norm() > 1e-8) return "P^T P not block diagonal";
    }
    if ((nf.P * nf.P_inv - Matrix::Identity(nf.n, nf.n)).norm() > 1e-10)
      return "P P^{-1} != I";
    Matrix U = rng.gaussian_matrix(nf.n, 2);
    auto [x, tail] = to_normal(nf, U);
    if ((from_normal(nf, x, tail) - U).norm() > 1e-12 * (1 + U.norm()))
      return "to_normal/from_normal round trip failed";
    // conjugation: P^{-1} rhs_U(U) agrees with rhs_normal on the leading rows
    Matrix lhs = nf.P_inv * rhs_U(inst, U);
    Matrix rhs = rhs_normal(nf, inst.y, x);
    if ((lhs.topRows(nf.m) - rhs).norm() > 1e-8 * (1 + rhs.norm()))
      return "conjugation mismatch";
    if (nf.n > nf.m && lhs.bottomRows(nf.n - nf.m).norm() > 1e-8)
      return "tail dynamics not zero";
  }
  return "";
}

std::string check_lambda_v(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 17);
  int failures = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Vector y = random_y(rng, 2, 0.3, 5.0);
    auto [inst, cert] = gen_tame(4, {2, 2}, rng.uniform(1.6, 4.0), 1.0, y, rng);
    Vector lam = random_y(rng, 2, -1.0, 1.0);
    Vector x0 = from_reduced(cert, to_reduced(cert, lam).z);
    NormalForm nf = build_normal_form(inst);
    FlowOptions opts;
    opts.t_max = 100;
    opts.snapshot_every = 0.25;
    ConvergeResult cr = converge(inst, x0, Coordinates::Normal, opts, &nf, &cert);
    double worst = 0, scale = 0;
    for (std::size_t i = 0; i < cr.trajectory.times.size(); ++i) {
      Vector x = cr.trajectory.states[i];
      scale = std::max(scale, x.norm());
      worst = std::max(worst, lambda_v_project(cert, x).residual);
    }
    if (worst > 1e-7 * std::max(scale, 1e-30)) ++failures;
    // terminal point must be one of the 2^q transversal intersections
    LambdaProjection lp = lambda_v_project(cert, cr.trajectory.terminal_state);
    for (int i = 0; i < 2; ++i) {
      double target = std::sqrt(y(i)) / cert.block_norms(i);
      if (std::abs(std::abs(lp.lambda(i)) - target) > 1e-5 * (1 + target)) ++failures;
    }
  }
  return failures == 0 ? "" : std::to_string(failures) + " residual/terminal failures";
}

std::string check_w_in_lambda_v(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 18);
  for (int trial = 0; trial < 10; ++trial) {
    Vector y = random_y(rng, 3, 0.3, 5.0);
    auto [inst, cert] = gen_tame(7, {3, 2, 2}, rng.uniform(1.5, 3.0), 1.0, y, rng);
    NormalForm nf = build_normal_form(inst);
    Matrix A = Matrix::Zero(inst.n, inst.n);
    for (int i = 0; i < inst.q; ++i) A += inst.y(i) * inst.A[i];
    Eigen::SelfAdjointEigenSolver<Matrix> es(A);
    Vector W = es.eigenvectors().col(inst.n - 1);
    Vector w = (nf.P_inv * W).head(nf.m);
    LambdaProjection lp = lambda_v_project(cert, w);
    if (lp.residual > 1e-8 * w.norm()) return "w not in Lambda_v, residual " + fmt(lp.residual);
    if (!sign_consistency(lp.lambda, 1e-8)) return "lambda signs inconsistent";
  }
  return "";
}

std::string check_reduced_dynamics(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 19);
  for (int trial = 0; trial < 10; ++trial) {
    Vector y = random_y(rng, 2, 0.3, 4.0);
    auto [inst, cert] = gen_tame(5, {2, 2}, rng.uniform(1.5, 3.0), 1.0, y, rng);
    // fixed points at z_i = +-sqrt(y_i)
    Vector z(2);
    z << std::sqrt(y(0)), -std::sqrt(y(1));
    if (rhs_reduced(cert, y, z).norm() > 1e-12) return "sign point is not a fixed point";
    // metric-gradient identity against central differences of J_r
    Vector z0 = random_y(rng, 2, -2.0, 2.0);
    Vector g_fd(2);
    double h = 1e-6 * (1 + z0.norm());
    for (int i = 0; i < 2; ++i) {
      Vector zp = z0, zm = z0;
      zp(i) += h;
      zm(i) -= h;
      g_fd(i) = (cost_reduced(y, zp) - cost_reduced(y, zm)) / (2 * h);
    }
    Vector expect = -(reduced_metric(cert) * g_fd);
    Vector got = rhs_reduced(cert, y, z0);
    if ((expect - got).norm() > 1e-6 * (1 + got.norm()))
      return "metric gradient mismatch " + fmt((expect - got).norm());
    // rho identity through from_reduced
    Vector x = from_reduced(cert, z0);
    Vector rho = residuals_normal(cert.ranks, y, x);
    for (int i = 0; i < 2; ++i)
      if (std::abs(rho(i) - (z0(i) * z0(i) - y(i))) > 1e-10) return "rho identity failed";
  }
  return "";
}

std::string check_census(std::uint64_t) {
  auto binom = [](int n, int k) {
    double b = 1;
    for (int i = 0; i < k; ++i) b = b * (n - i) / (i + 1);
    return static_cast<long>(std::lround(b));
  };
  for (int q = 1; q <= 4; ++q) {
    Vector y(q);
    for (int i = 0; i < q; ++i) y(i) = 1.0 + i;
    auto crit = enumerate_crit_Jr(y);
    long expected_total = 1;
    for (int i = 0; i < q; ++i) expected_total *= 3;
    if (static_cast<long>(crit.size()) != expected_total) return "census size wrong";
    std::vector<long> by_index(q + 1, 0);
    for (const auto& cp : crit) ++by_index[cp.index];
    for (int i = 0; i <= q; ++i) {
      long expected = (1L << (q - i)) * binom(q, i);
      if (by_index[i] != expected)
        return "index " + std::to_string(i) + " count " + std::to_string(by_index[i]) +
               " != " + std::to_string(expected);
    }
  }
  return "";
}

std::string check_reduced_argmin(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 20);
  for (int trial = 0; trial < 1000; ++trial) {
    int q = 1 + static_cast<int>(rng.uniform() * 6);
    Vector y = random_y(rng, q, 0.05, 5.0);
    double a = rng.uniform(0.05, 2.0), b = rng.uniform(0.05, 2.0);
    ReducedExact red = solve_reduced_exact(y, a, b);
    for (const auto& p : red.table)
      if (p.cost < red.min_cost - 1e-12) return "table bests the argmin";
    auto all_same = [](const std::vector<int>& s) {
      return std::all_of(s.begin(), s.end(), [&](int v) { return v == s.front(); });
    };
    if (!all_same(red.argmin[0].signs) || !all_same(red.argmin[1].signs))
      return "argmin is not the all-same-sign pair";
    if (std::abs(red.argmin[0].cost - red.min_cost) > 1e-12 * (1 + std::abs(red.min_cost)))
      return "argmin cost mismatch";
  }
  return "";
}

std::string check_numeric_analytic(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 21);
  for (int trial = 0; trial < 5; ++trial) {
    Vector y = random_y(rng, 2, 0.3, 5.0);
    auto [inst, cert] = gen_tame(4, {2, 2}, rng.uniform(1.5, 3.5), 1.0, y, rng);
    NormalForm nf = build_normal_form(inst);
    RegSolution exact = solve_min_tame(inst, cert, nf);
    RegSolution k1 = solve_min_numeric(nf, inst.y, 1, 20, rng);
    RegSolution kn = solve_min_numeric(nf, inst.y, nf.n, 20, rng);
    double scale = std::abs(exact.K_star);
    if (std::abs(k1.K_star - exact.K_star) > 1e-6 * scale)
      return "k=1 numeric off by " + fmt(std::abs(k1.K_star - exact.K_star) / scale);
    if (std::abs(kn.K_star - exact.K_star) > 1e-6 * scale)
      return "k=n numeric off by " + fmt(std::abs(kn.K_star - exact.K_star) / scale);
    if (spectral_ratio(kn.X_star) < 0.999) return "k=n minimizer is not rank one";
    if (spectral_ratio(exact.X_star) < 1.0 - 1e-10) return "analytic minimizer not rank one";
    if (std::abs(exact.X_star.trace() - exact.K_star) > 1e-8 * (1 + std::abs(exact.K_star)))
      return "tr(X*) != K*";
    // the constrained maximum never exceeds the v-orthogonal plateau
    RegSolution mx = solve_max_numeric(nf, inst.y, 1, 20, rng);
    ReducedExact red =
        solve_reduced_exact(inst.y, cert.alpha_inv, cert.beta_inv, cert.block_norms);
    double plateau = vperp_plateau_cost(cert, inst.y);
    if (mx.K_star > plateau + 1e-6 * (1 + std::abs(plateau))) return "max exceeds plateau";
    if (mx.K_star < red.max_cost - 1e-6 * (1 + std::abs(red.max_cost)))
      return "max below the sign-table maximum";
  }
  return "";
}

std::string check_solver_monotone(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 22);
  Vector y = random_y(rng, 2, 0.5, 4.0);
  ProblemInstance inst = gen_with_spectrum(4, {2, 2}, {2.0, 2.0, 1.0, 1.0}, y, rng);
  NormalForm nf = build_normal_form(inst);
  RiemannianOptions opts;
  bool monotone = true;
  double prev = std::numeric_limits<double>::infinity();
  opts.on_accept = [&](double f) {
    if (f > prev + 1e-12 * (1 + std::abs(prev))) monotone = false;
    prev = f;
  };
  solve_min_numeric(nf, inst.y, 2, 3, rng, opts);
  return monotone ? "" : "objective increased on an accepted step";
}

std::string check_metric_invariances(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 23);
  Matrix X = make_psd(5, 3, rng);
  if (eps_rank(X + 1e-3 * Matrix::Identity(5, 5), 5) > 1e-12) return "eps_rank(X, n) != 0";
  double r1 = spectral_ratio(X), r2 = spectral_ratio(3.7 * X);
  if (std::abs(r1 - r2) > 1e-12) return "spectral ratio not scale invariant";
  double e1 = relative_error(1.2, 1.0, 2.0);
  if (std::abs(relative_error(1.2 + 5, 1.0 + 5, 2.0 + 5) - e1) > 1e-12)
    return "relative error not shift invariant";
  if (std::abs(relative_error(1.2 * 3, 1.0 * 3, 2.0 * 3) - e1) > 1e-12)
    return "relative error not scale invariant";
  bool threw = false;
  try {
    relative_error(1.0, 2.0, 2.0);
  } catch (const std::invalid_argument&) {
    threw = true;
  }
  return threw ? "" : "degenerate normalization not rejected";
}

std::string check_bottleneck_generic(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 24);
  int passed = 0;
  const int total = 20;
  for (int trial = 0; trial < total; ++trial) {
    ProblemInstance inst = gen_generic(7, {3, 2, 2}, 5.0, rng);
    double delta = 1e-8;
    Matrix U0 = rng.gaussian_matrix(7, 7);
    U0 /= U0.norm();
    Matrix X0 = delta * (U0 * U0.transpose());
    double lam = comparison_rate(inst);
    FlowOptions opts;
    opts.t_max = std::max(2.0, 80.0 / lam);
    opts.snapshot_every = opts.t_max / 400;
    opts.abs_tol = delta * 1e-9;
    opts.grad_tol = 1e-12;
    ConvergeResult cr = converge(inst, X0, Coordinates::X, opts);
    BottleneckReport rep = detect_bottleneck(cr.trajectory, inst, 0.05);
    if (rep.passed) ++passed;
  }
  return passed >= 19 ? "" : "passed only " + std::to_string(passed) + "/20";
}

std::string check_delta_cubed(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 25);
  int ok = 0;
  const int total = 5;
  for (int trial = 0; trial < total; ++trial) {
    ProblemInstance inst = gen_generic(4, {2, 1}, 5.0, rng);
    // keep the smallest y moderate so the bound's rate stays desk-scale
    for (int i = 0; i < inst.q; ++i) inst.y(i) = std::max(inst.y(i), 0.5);
    double lam = comparison_rate(inst);
    double delta = 1e-4;
    double tstar = bound_validity_horizon(lam, inst.q, delta, 400.0 / lam);
    Matrix U0 = rng.gaussian_matrix(4, 4);
    U0 /= U0.norm();
    FlowOptions opts;
    opts.rel_tol = 1e-12;
    opts.abs_tol = 1e-18;
    opts.grad_tol = 1e-16;
    opts.t_max = tstar;
    opts.snapshot_every = tstar / 40;
    auto measure = [&](double dl) {
      ConvergeResult cr = converge(inst, Matrix(dl * U0), Coordinates::U, opts);
      std::vector<std::pair<double, double>> errs;
      for (std::size_t i = 0; i < cr.trajectory.times.size(); ++i) {
        double t = cr.trajectory.times[i];
        Matrix V = linear_comparison(inst, dl * U0, t);
        errs.emplace_back(t, (cr.trajectory.state_at(i) - V).norm());
      }
      return errs;
    };
    auto e1 = measure(delta);
    auto e2 = measure(delta / 2);
    bool dominated = true;
    for (auto& [t, e] : e1)
      if (e > bottleneck_error_bound(lam, inst.q, delta, t) + 1e-18) dominated = false;
    std::size_t best = 0;
    for (std::size_t i = 0; i < e1.size(); ++i)
      if (e1[i].second > e1[best].second) best = i;
    bool ratio_ok = false;
    if (e1[best].second > 1e-13 && best < e2.size()) {
      double ratio = e1[best].second / std::max(e2[best].second, 1e-300);
      ratio_ok = ratio >= 6.0 && ratio <= 10.0;
    }
    if (dominated && ratio_ok) ++ok;
  }
  return ok == total ? "" : "only " + std::to_string(ok) + "/5 instances dominated with cubic scaling";
}

std::string check_lojasiewicz(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 26);
  for (int trial = 0; trial < 10; ++trial) {
    Vector y = random_y(rng, 2, 0.5, 4.0);
    auto [inst, cert] = gen_tame(4, {2, 2}, rng.uniform(1.8, 3.0), 1.0, y, rng);
    NormalForm nf = build_normal_form(inst);
    Vector lam = random_y(rng, 2, 0.2, 1.2);
    Vector x0 = from_reduced(cert, to_reduced(cert, lam).z);
    FlowOptions opts;
    opts.t_max = 200;
    opts.snapshot_every = 10;
    ConvergeResult base = converge(inst, x0, Coordinates::Normal, opts, &nf, &cert);
    Vector x1 = x0 + 1e-6 * rng.gaussian_vector(nf.m).normalized();
    ConvergeResult moved = converge(inst, x1, Coordinates::Normal, opts, &nf, &cert);
    if ((base.trajectory.terminal_state - moved.trajectory.terminal_state).norm() > 1e-3)
      return "limit moved more than 1e-3";
  }
  return "";
}

std::string check_region_D_suite(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 27);
  Vector y = random_y(rng, 2, 0.5, 4.0);
  auto [inst, cert] = gen_tame(4, {2, 2}, 3.0, 1.0, y, rng);
  std::vector<Vector> starts;
  Vector sink(2);
  sink << std::sqrt(y(0)), std::sqrt(y(1));
  starts.push_back(sink);
  starts.push_back(0.1 * sink);
  for (int i = 0; i < 10; ++i) starts.push_back(sample_region_D(cert, y, rng));
  FlowOptions opts;
  opts.t_max = 300;
  opts.snapshot_every = 0.05;
  RegionDReport rep = check_region_D(cert, y, starts, opts);
  if (!rep.all_stayed) return "left the region, margin " + fmt(rep.worst_margin);
  if (!rep.all_converged) return "a start failed to reach the sink";
  return "";
}

std::string check_csv_svg(std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / ("factorflow_suite_" + std::to_string(seed));
  fs::create_directories(dir);
  std::vector<ExperimentRecord> recs;
  Rng rng = Rng::stream(seed, 28);
  for (int i = 0; i < 40; ++i) {
    ExperimentRecord r;
    r.group = i % 2 ? "a" : "b";
    r.sweep_value = (i % 4) * 0.5;
    r.instance_seed = static_cast<std::uint64_t>(i);
    r.relative_error = rng.uniform();
    r.spectral_ratio = rng.uniform();
    r.K_phi = rng.uniform();
    r.K_min = 0;
    r.K_max = 1;
    r.converged = true;
    r.wall_time = 0.0;
    recs.push_back(r);
  }
  std::string csv = (dir / "r.csv").string();
  emit_records_csv(recs, csv);
  auto back = load_records_csv(csv);
  auto a0 = aggregate_relative_error(recs);
  auto a1 = aggregate_relative_error(back);
  if (a0.size() != a1.size()) return "aggregate count changed on reload";
  for (std::size_t i = 0; i < a0.size(); ++i)
    if (std::abs(a0[i].mean - a1[i].mean) > 1e-12) return "aggregate mean changed on reload";
  std::string svg = render_line_chart(aggregates_to_series(a0), {});
  if (svg.find("<svg") == std::string::npos || svg.find("</svg>") == std::string::npos)
    return "svg not well formed";
  std::string svg2 = render_line_chart(aggregates_to_series(a0), {});
  if (svg != svg2) return "svg emission not deterministic";
  fs::remove_all(dir);
  return "";
}

std::string check_vperp_plateau(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 29);
  Vector y = random_y(rng, 2, 0.5, 4.0);
  auto [inst, cert] = gen_tame(4, {2, 2}, 2.5, 1.0, y, rng);
  NormalForm nf = build_normal_form(inst);
  Matrix Qinv = nf.Q.llt().solve(Matrix::Identity(nf.m, nf.m));
  const auto off = block_offsets(cert.ranks);
  double plateau = vperp_plateau_cost(cert, y);
  for (int trial = 0; trial < 20; ++trial) {
    // random feasible x with each block orthogonal to vbar_i (blocks rank 2)
    Vector x = Vector::Zero(nf.m);
    for (int i = 0; i < cert.q(); ++i) {
      Vector vb = cert.v.segment(off[i], cert.ranks[i]);
      Vector g = rng.gaussian_vector(cert.ranks[i]);
      g -= (g.dot(vb) / vb.squaredNorm()) * vb;
      x.segment(off[i], cert.ranks[i]) = std::sqrt(y(i)) * g.normalized();
    }
    double K = x.dot(Qinv * x);
    if (std::abs(K - plateau) > 1e-8 * (1 + std::abs(plateau)))
      return "plateau cost off by " + fmt(std::abs(K - plateau));
  }
  return "";
}

}  // namespace

std::vector<PropertyCheck> run_property_suite(const ExperimentConfig& cfg) {
  Suite s{cfg.master_seed, {}};
  s.run("instance-invariants", [&] { return check_instances(s.seed); });
  s.run("commuting-projections", [&] { return check_commuting(s.seed); });
  s.run("tame-generation", [&] { return check_tame_generation(s.seed); });
  s.run("instance-roundtrip", [&] { return check_roundtrip(s.seed); });
  s.run("rng-determinism", [&] { return check_rng_determinism(s.seed); });
  s.run("flow-structure", [&] { return check_flow_structure(s.seed); });
  s.run("ux-consistency", [&] { return check_ux_consistency(s.seed); });
  s.run("normal-form", [&] { return check_normal_form(s.seed); });
  s.run("lambda-v-invariance", [&] { return check_lambda_v(s.seed); });
  s.run("w-in-lambda-v", [&] { return check_w_in_lambda_v(s.seed); });
  s.run("reduced-dynamics", [&] { return check_reduced_dynamics(s.seed); });
  s.run("morse-census", [&] { return check_census(s.seed); });
  s.run("reduced-argmin-signs", [&] { return check_reduced_argmin(s.seed); });
  s.run("numeric-analytic-agreement", [&] { return check_numeric_analytic(s.seed); });
  s.run("solver-monotone-descent", [&] { return check_solver_monotone(s.seed); });
  s.run("metric-invariances", [&] { return check_metric_invariances(s.seed); });
  s.run("bottleneck-generic", [&] { return check_bottleneck_generic(s.seed); });
  s.run("comparison-bound-cubic", [&] { return check_delta_cubed(s.seed); });
  s.run("lojasiewicz-stability", [&] { return check_lojasiewicz(s.seed); });
  s.run("region-D", [&] { return check_region_D_suite(s.seed); });
  s.run("vperp-plateau", [&] { return check_vperp_plateau(s.seed); });
  s.run("csv-svg-roundtrip", [&] { return check_csv_svg(s.seed); });
  return s.checks;
}

}  // namespace factorflow
