#include "factorflow/regularizer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace factorflow {

std::vector<CriticalPoint> enumerate_crit_Jr(const Vector& y) {
  const int q = static_cast<int>(y.size());
  for (int i = 0; i < q; ++i)
    if (y(i) <= 0) throw std::invalid_argument("enumerate_crit_Jr: y must be positive");
  if (q > 15) throw std::invalid_argument("enumerate_crit_Jr: q too large to enumerate");

  std::vector<CriticalPoint> out;
  long total = 1;
  for (int i = 0; i < q; ++i) total *= 3;
  out.reserve(static_cast<std::size_t>(total));
  for (long code = 0; code < total; ++code) {
    CriticalPoint cp;
    cp.z.resize(q);
    long c = code;
    for (int i = 0; i < q; ++i) {
      int trit = static_cast<int>(c % 3);  // 0 -> -sqrt(y), 1 -> 0, 2 -> +sqrt(y)
      c /= 3;
      if (trit == 1) {
        cp.z(i) = 0;
        ++cp.index;
        cp.Jr_value += 0.25 * y(i) * y(i);
      } else {
        cp.z(i) = (trit == 2 ? 1.0 : -1.0) * std::sqrt(y(i));
      }
    }
    out.push_back(std::move(cp));
  }
  return out;
}

ReducedExact solve_reduced_exact(const Vector& y, double a, double b, const Vector& weights) {
  const int q = static_cast<int>(y.size());
  if (a <= 0 || b <= 0) throw std::invalid_argument("solve_reduced_exact: coefficients must be positive");
  Vector w = weights.size() ? weights : Vector::Ones(q);
  if (w.size() != q) throw std::invalid_argument("solve_reduced_exact: weights size mismatch");

  ReducedExact out;
  const double ysum = y.sum();
  double best = std::numeric_limits<double>::infinity();
  double worst = -best;
  for (unsigned long mask = 0; mask < (1ul << q); ++mask) {
    SignPoint p;
    p.signs.resize(q);
    double dot = 0;
    for (int i = 0; i < q; ++i) {
      p.signs[i] = (mask >> i) & 1 ? -1 : 1;
      dot += p.signs[i] * w(i) * std::sqrt(y(i));
    }
    p.cost = -a * dot * dot + b * ysum;
    best = std::min(best, p.cost);
    worst = std::max(worst, p.cost);
    out.table.push_back(std::move(p));
  }
  out.min_cost = best;
  out.max_cost = worst;
  // two global minima: the all-same-sign patterns (positive first)
  out.argmin[0] = out.table.front();                 // mask 0: all +
  out.argmin[1] = out.table[(1ul << q) - 1];         // all -
  double tol = 1e-12 * (std::abs(worst) + std::abs(best) + 1);
  for (const auto& p : out.table)
    if (p.cost >= worst - tol) out.argmax.push_back(p);
  return out;
}

std::pair<Matrix, Matrix> lift(const NormalForm& nf, const Matrix& x_star) {
  if (x_star.rows() != nf.m) throw std::invalid_argument("lift: shape mismatch");
  Matrix U = from_normal(nf, x_star, Matrix());
  return {U, U * U.transpose()};
}

namespace {

Matrix q_inverse(const NormalForm& nf) {
  return nf.Q.llt().solve(Matrix::Identity(nf.m, nf.m));
}

Vector feasibility(const NormalForm& nf, const Vector& y, const Matrix& x) {
  return residuals_normal(nf.ranks, y, x);
}

void fill_lift(const NormalForm& nf, const Vector& y, RegSolution& sol) {
  auto [U, X] = lift(nf, sol.x_star);
  sol.U_star = std::move(U);
  sol.X_star = std::move(X);
  sol.feasibility_residuals = feasibility(nf, y, sol.x_star);
}

// feasible manifold: blockwise spheres of radius sqrt(y_i)
void retract(const std::vector<int>& ranks, const std::vector<int>& off, const Vector& y,
             Matrix& x) {
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    auto blk = x.middleRows(off[i], ranks[i]);
    double nrm = blk.norm();
    if (nrm == 0) throw std::runtime_error("retraction hit a zero block");
    blk *= std::sqrt(y(static_cast<Eigen::Index>(i))) / nrm;
  }
}

void tangent_project(const std::vector<int>& ranks, const std::vector<int>& off, const Vector& y,
                     const Matrix& x, Matrix& g) {
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    auto xb = x.middleRows(off[i], ranks[i]);
    auto gb = g.middleRows(off[i], ranks[i]);
    double inner = (gb.cwiseProduct(xb)).sum();
    gb -= (inner / y(static_cast<Eigen::Index>(i))) * xb;
  }
}

RegSolution solve_numeric(const NormalForm& nf, const Vector& y, int k, int restarts,
                          Rng& rng, const RiemannianOptions& opts, bool maximize) {
  if (k < 1) throw std::invalid_argument("solve_numeric: k must be >= 1");
  if (restarts < 1) throw std::invalid_argument("solve_numeric: restarts must be >= 1");
  const Matrix Qinv = q_inverse(nf);
  const auto off = nf.offsets();
  const double sign = maximize ? -1.0 : 1.0;
  const double lipschitz = 2.0 * Qinv.operatorNorm();

  RegSolution best;
  best.kind = maximize ? SolutionKind::NumericMax : SolutionKind::NumericMin;
  double best_f = std::numeric_limits<double>::infinity();
  bool best_converged = false;

  for (int attempt = 0; attempt < restarts; ++attempt) {
    Matrix x = rng.gaussian_matrix(nf.m, k);
    retract(nf.ranks, off, y, x);
    double f = sign * (x.cwiseProduct(Qinv * x)).sum();
    double step = 1.0 / lipschitz;
    Matrix grad, x_prev, grad_prev;
    double gn = 0;
    bool converged = false;

    for (int it = 0; it < opts.max_iters; ++it) {
      grad = sign * 2.0 * (Qinv * x);
      tangent_project(nf.ranks, off, y, x, grad);
      gn = grad.norm();
      if (gn <= opts.grad_tol) {
        converged = true;
        break;
      }
      if (it > 0) {
        // Barzilai-Borwein guess, safeguarded by the Armijo backtracking below
        Matrix s = x - x_prev;
        Matrix d = grad - grad_prev;
        double denom = (s.cwiseProduct(d)).sum();
        if (denom > 0) step = std::clamp((s.cwiseProduct(s)).sum() / denom, 1e-12, 1e3);
      }
      x_prev = x;
      grad_prev = grad;
      double t = step;
      bool accepted = false;
      for (int bt = 0; bt < 60; ++bt) {
        Matrix xn = x - t * grad;
        retract(nf.ranks, off, y, xn);
        double fn = sign * (xn.cwiseProduct(Qinv * xn)).sum();
        if (fn <= f - opts.armijo_c * t * gn * gn) {
          x = std::move(xn);
          f = fn;
          accepted = true;
          if (opts.on_accept) opts.on_accept(sign * f);
          break;
        }
        t *= opts.shrink;
      }
      if (!accepted) break;  // no descent direction at line-search resolution
    }

    if (f < best_f - 1e-15 || (converged && !best_converged && f < best_f + 1e-12)) {
      best_f = f;
      best.x_star = x;
      best.grad_norm = gn;
      best_converged = converged;
    }
  }

  best.K_star = (best.x_star.cwiseProduct(Qinv * best.x_star)).sum();
  best.converged = best_converged;
  best.restarts_used = restarts;
  fill_lift(nf, y, best);
  return best;
}

}  // namespace

RegSolution solve_min_numeric(const NormalForm& nf, const Vector& y, int k, int restarts,
                              Rng& rng, const RiemannianOptions& opts) {
  return solve_numeric(nf, y, k, restarts, rng, opts, false);
}

RegSolution solve_max_numeric(const NormalForm& nf, const Vector& y, int k, int restarts,
                              Rng& rng, const RiemannianOptions& opts) {
  return solve_numeric(nf, y, k, restarts, rng, opts, true);
}

RegSolution solve_min_tame(const ProblemInstance& inst, const TameCertificate& cert,
                           const NormalForm& nf) {
  if (cert.m() != nf.m) throw std::invalid_argument("solve_min_tame: certificate/normal-form mismatch");
  Matrix recon = cert.alpha * (cert.v * cert.v.transpose()) +
                 cert.beta * Matrix::Identity(nf.m, nf.m);
  if ((recon - nf.Q).norm() > 1e-6 * nf.Q.norm())
    throw std::invalid_argument("solve_min_tame: certificate does not match Q");

  // reduced exact problem with the Q^{-1} coefficients and block-norm weights
  ReducedExact red = solve_reduced_exact(inst.y, cert.alpha_inv, cert.beta_inv, cert.block_norms);
  Vector z(cert.q());
  for (int i = 0; i < cert.q(); ++i)
    z(i) = red.argmin[0].signs[i] * std::sqrt(inst.y(i));

  RegSolution sol;
  sol.kind = SolutionKind::AnalyticMin;
  sol.x_star = from_reduced(cert, z);
  Matrix Qinv = nf.Q.llt().solve(Matrix::Identity(nf.m, nf.m));
  sol.K_star = (sol.x_star.cwiseProduct(Qinv * sol.x_star)).sum();
  sol.grad_norm = 0;
  sol.restarts_used = 0;
  sol.converged = true;
  fill_lift(nf, inst.y, sol);
  return sol;
}

double vperp_plateau_cost(const TameCertificate& cert, const Vector& y) {
  return cert.beta_inv * y.sum();
}

std::string solution_to_json(const RegSolution& sol) {
  nlohmann::json j;
  switch (sol.kind) {
    case SolutionKind::AnalyticMin: j["kind"] = "analytic-min"; break;
    case SolutionKind::NumericMin: j["kind"] = "numeric-min"; break;
    case SolutionKind::NumericMax: j["kind"] = "numeric-max"; break;
  }
  j["K_star"] = sol.K_star;
  auto mat = [](const Matrix& M) {
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < M.rows(); ++i)
      rows.emplace_back(M.row(i).begin(), M.row(i).end());
    return rows;
  };
  j["x_star"] = mat(sol.x_star);
  j["U_star"] = mat(sol.U_star);
  j["feasibility_residuals"] =
      std::vector<double>(sol.feasibility_residuals.begin(), sol.feasibility_residuals.end());
  j["grad_norm"] = sol.grad_norm;
  j["restarts_used"] = sol.restarts_used;
  j["converged"] = sol.converged;
  return j.dump(2) + "\n";
}

void save_solution(const RegSolution& sol, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << solution_to_json(sol);
}

}  // namespace factorflow
