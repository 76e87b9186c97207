#include "factorflow/analysis.hpp"

#include "factorflow/instance.hpp"
#include "factorflow/normal_form.hpp"

#include <algorithm>
#include <cmath>

namespace factorflow {

double eps_rank(const Matrix& X, int r) {
  if (X.rows() != X.cols()) throw std::invalid_argument("eps_rank: X must be square");
  const int n = static_cast<int>(X.rows());
  if (r < 1 || r > n) throw std::invalid_argument("eps_rank: r out of range");
  if (X.cwiseAbs().maxCoeff() == 0) throw std::invalid_argument("eps_rank: X is zero");
  Eigen::SelfAdjointEigenSolver<Matrix> es(X);
  // eigenvalues ascending; the best rank-r approximant keeps the top r
  Matrix Xr = Matrix::Zero(n, n);
  for (int j = 0; j < r; ++j) {
    int idx = n - 1 - j;
    Xr.noalias() += es.eigenvalues()(idx) * es.eigenvectors().col(idx) *
                    es.eigenvectors().col(idx).transpose();
  }
  double denom = Xr.norm();
  if (denom == 0) throw std::invalid_argument("eps_rank: rank-r approximant is zero");
  return (X - Xr).norm() / denom;
}

double spectral_ratio(const Matrix& X) {
  if (X.rows() != X.cols()) throw std::invalid_argument("spectral_ratio: X must be square");
  if (X.cwiseAbs().maxCoeff() == 0) throw std::invalid_argument("spectral_ratio: X is zero");
  Eigen::SelfAdjointEigenSolver<Matrix> es(X, Eigen::EigenvaluesOnly);
  Vector lam = es.eigenvalues().cwiseMax(0.0);
  double total = lam.sum();
  if (total == 0) throw std::invalid_argument("spectral_ratio: no positive eigenvalue");
  return lam.maxCoeff() / total;
}

double relative_error(double K_phi, double K_min, double K_max) {
  if (!(K_max > K_min)) throw std::invalid_argument("relative_error: degenerate normalization");
  return (K_phi - K_min) / (K_max - K_min);
}

BottleneckReport detect_bottleneck(const Trajectory& traj, const ProblemInstance& inst,
                                   double eps_threshold, double alignment_threshold) {
  if (traj.times.size() < 2)
    throw std::invalid_argument("detect_bottleneck: trajectory needs at least 2 snapshots");
  Matrix A = Matrix::Zero(inst.n, inst.n);
  for (int i = 0; i < inst.q; ++i) A += inst.y(i) * inst.A[i];
  Eigen::SelfAdjointEigenSolver<Matrix> esA(A);
  Vector top = esA.eigenvectors().col(inst.n - 1);

  // The pass event is the first snapshot that is essentially rank one AND
  // aligned with the leading eigenvector; at the bare eps crossing the top
  // direction is still settling (misalignment scales like sqrt(eps)), so the
  // two conditions are certified jointly.
  BottleneckReport rep;
  for (std::size_t i = 0; i < traj.times.size(); ++i) {
    Matrix X = traj.state_at(i);
    if (X.cwiseAbs().maxCoeff() == 0) continue;
    double eps = eps_rank(X, 1);
    if (eps > eps_threshold) continue;
    Eigen::SelfAdjointEigenSolver<Matrix> esX(X);
    double align = std::abs(top.dot(esX.eigenvectors().col(inst.n - 1)));
    if (!rep.found) {
      rep.found = true;
      rep.t_star = traj.times[i];
      rep.eps_achieved = eps;
      rep.alignment = align;
    }
    if (align >= alignment_threshold) {
      rep.passed = true;
      rep.t_star = traj.times[i];
      rep.eps_achieved = eps;
      rep.alignment = align;
      return rep;
    }
  }
  return rep;
}

namespace {

// integrand of the comparison bound, exp(g(s))
double bound_log_integrand(double lambda, int q, double delta, double s) {
  return -(lambda / 2.0) * (3.0 * q * std::exp(2 * lambda * s) * delta * delta +
                            6.0 * q * std::exp(lambda * s) * delta - 4.0 * s +
                            2.0 * lambda * q * s);
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double fa,
                        double fm, double fb, double whole, double tol, int depth) {
  double m = 0.5 * (a + b);
  double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  double flm = f(lm), frm = f(rm);
  double left = (m - a) / 6.0 * (fa + 4 * flm + fm);
  double right = (b - m) / 6.0 * (fm + 4 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15 * tol)
    return left + right + (left + right - whole) / 15.0;
  return adaptive_simpson(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

double integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                          double rel_tol) {
  if (b <= a) return 0.0;
  double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  double whole = (b - a) / 6.0 * (fa + 4 * fm + fb);
  double tol = rel_tol * std::max(std::abs(whole), 1e-300);
  return adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 48);
}

}  // namespace

double bottleneck_error_bound(double lambda, int q, double delta, double t) {
  if (lambda < 0 || delta < 0 || t < 0 || q < 1)
    throw std::invalid_argument("bottleneck_error_bound: arguments must be nonnegative");
  if (t == 0 || delta == 0) return 0.0;
  double outer = t * lambda * (lambda * q + 1) + 3 * delta * lambda * q * std::exp(lambda * t) +
                 1.5 * q * delta * delta * lambda * std::exp(2 * lambda * t);
  double integral = integrate_adaptive(
      [&](double s) { return std::exp(bound_log_integrand(lambda, q, delta, s)); }, 0.0, t,
      1e-10);
  double log_value = 3 * std::log(delta) + std::log(lambda * lambda * q) + outer +
                     std::log(std::max(integral, 1e-300));
  if (log_value > 700.0) throw std::overflow_error("bottleneck_error_bound: overflow");
  return std::exp(log_value);
}

double bound_validity_horizon(double lambda, int q, double delta, double t_cap) {
  auto value = [&](double t) {
    try {
      return bottleneck_error_bound(lambda, q, delta, t);
    } catch (const std::overflow_error&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  if (value(t_cap) <= 1.0) return t_cap;
  double lo = 0.0, hi = t_cap;
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    (value(mid) <= 1.0 ? lo : hi) = mid;
  }
  return lo;
}

double comparison_rate(const ProblemInstance& inst) {
  Matrix A = Matrix::Zero(inst.n, inst.n);
  for (int i = 0; i < inst.q; ++i) A += inst.y(i) * inst.A[i];
  double c = std::max(1.0, 1.0 / inst.y.minCoeff());
  Eigen::SelfAdjointEigenSolver<Matrix> es(A, Eigen::EigenvaluesOnly);
  return c * es.eigenvalues().maxCoeff();
}

namespace {

struct RegionGeometry {
  double gamma1;           // slope of both lines after relabeling
  double s1, s2;           // sqrt(y) in relabeled order
  bool swapped;
};

RegionGeometry region_geometry(const TameCertificate& cert, const Vector& y) {
  if (cert.q() != 2 || y.size() != 2)
    throw std::invalid_argument("check_region_D: q must be 2");
  RegionGeometry g;
  double w1 = cert.block_norms(0), w2 = cert.block_norms(1);
  g.swapped = w1 > w2;
  if (g.swapped) std::swap(w1, w2);
  g.gamma1 = w2 / w1;
  g.s1 = std::sqrt(g.swapped ? y(1) : y(0));
  g.s2 = std::sqrt(g.swapped ? y(0) : y(1));
  return g;
}

double region_margin(const RegionGeometry& g, const Vector& z_relabeled) {
  double z1 = z_relabeled(0), z2 = z_relabeled(1);
  return std::min({z1, z2, g.gamma1 * z1 + g.s2 - z2, z2 - g.gamma1 * (z1 - g.s1)});
}

}  // namespace

RegionDReport check_region_D(const TameCertificate& cert, const Vector& y,
                             const std::vector<Vector>& starts, const FlowOptions& opts) {
  RegionGeometry geo = region_geometry(cert, y);
  RegionDReport rep;
  rep.gamma1 = geo.gamma1;
  rep.worst_margin = std::numeric_limits<double>::infinity();
  Vector sink(2);
  sink << std::sqrt(y(0)), std::sqrt(y(1));

  for (const auto& z0 : starts) {
    RhsFn rhs = [&](const Vector& z) { return rhs_reduced(cert, y, z); };
    CostFn cost = [&](const Vector& z) { return cost_reduced(y, z); };
    Trajectory traj = integrate(rhs, z0, opts, cost);
    double margin = std::numeric_limits<double>::infinity();
    for (const auto& state : traj.states) {
      Vector zr = state;
      if (geo.swapped) std::swap(zr(0), zr(1));
      margin = std::min(margin, region_margin(geo, zr));
    }
    {
      Vector zr = traj.terminal_state;
      if (geo.swapped) std::swap(zr(0), zr(1));
      margin = std::min(margin, region_margin(geo, zr));
    }
    bool conv = (traj.terminal_state - sink).norm() <= 1e-6 * (1.0 + sink.norm());
    rep.margins.push_back(margin);
    rep.converged.push_back(conv);
    rep.worst_margin = std::min(rep.worst_margin, margin);
  }
  rep.all_stayed = rep.worst_margin >= -1e-8;
  rep.all_converged =
      std::all_of(rep.converged.begin(), rep.converged.end(), [](bool b) { return b; });
  return rep;
}

Vector sample_region_D(const TameCertificate& cert, const Vector& y, Rng& rng) {
  RegionGeometry geo = region_geometry(cert, y);
  for (int i = 0; i < 10000; ++i) {
    double z1 = rng.uniform(0.0, geo.s1 + 2.0 * geo.s2);
    double z2 = rng.uniform(0.0, geo.gamma1 * geo.s1 + 2.0 * geo.s2);
    Vector z(2);
    z << z1, z2;
    if (region_margin(geo, z) > 1e-6) {
      if (geo.swapped) std::swap(z(0), z(1));
      return z;
    }
  }
  throw std::runtime_error("sample_region_D: rejection sampling failed");
}

bool sign_consistency(const Vector& z, double tol) {
  if (z.size() == 0) return true;
  double scale = z.cwiseAbs().maxCoeff();
  if (scale == 0) return true;
  return z.minCoeff() >= -tol * scale || z.maxCoeff() <= tol * scale;
}

}  // namespace factorflow
