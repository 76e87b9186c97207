#pragma once

#include "factorflow/flow.hpp"
#include "factorflow/types.hpp"

#include <string>
#include <vector>

namespace factorflow {

/// ||X - X_r|| / ||X_r|| in Frobenius norm, X_r the best rank-r approximant
/// (top-r eigenpairs).  X must be psd and nonzero.
double eps_rank(const Matrix& X, int r);

/// lambda_1 / sum_i lambda_i with tiny negative eigenvalues clamped to zero;
/// equals 1 for rank-one matrices and 1/n for multiples of the identity.
double spectral_ratio(const Matrix& X);

/// (K_phi - K_min) / (K_max - K_min); not clamped, throws when the
/// normalization is degenerate (K_max <= K_min).
double relative_error(double K_phi, double K_min, double K_max);

struct BottleneckReport {
  bool passed = false;
  bool found = false;
  double t_star = 0;        ///< first snapshot time with eps_rank(X,1) <= threshold
  double eps_achieved = 0;
  double alignment = 0;     ///< |cos| against the top eigenvector of sum y_i A_i
};

/// Scan an X-trajectory for the first essentially-rank-one snapshot and
/// check its alignment with the leading eigenvector of sum y_i A_i.
BottleneckReport detect_bottleneck(const Trajectory& traj, const ProblemInstance& inst,
                                   double eps_threshold, double alignment_threshold = 0.99);

/// Closed-form comparison bound z1(t) for the gap between the nonlinear
/// factor flow started at delta * (unit U0) and the linear flow e^{At};
/// lambda is the largest eigenvalue of c A, c >= 1 with A_i <= c A.
/// The inner integral is evaluated by adaptive quadrature (rel tol 1e-10).
/// Throws on exponent overflow.
double bottleneck_error_bound(double lambda, int q, double delta, double t);

/// Largest t with bound <= 1 (the comparison argument is valid below it).
double bound_validity_horizon(double lambda, int q, double delta, double t_cap);

/// c * lambda_max(sum y_i A_i) with c = max(1, 1/min y_i), so A_i <= c A.
double comparison_rate(const ProblemInstance& inst);

struct RegionDReport {
  bool all_stayed = false;
  bool all_converged = false;
  double worst_margin = 0;       ///< min over trajectories of the boundary margin
  double gamma1 = 0;             ///< slope of both boundary lines
  std::vector<double> margins;   ///< per start
  std::vector<bool> converged;   ///< per start
};

/// q = 2 invariant-region check for the reduced flow.  The region is the
/// positive-quadrant band between the lines z2 = gamma1 z1 + sqrt(y2) and
/// z2 = gamma1 (z1 - sqrt(y1)) with gamma1 = ||vbar_2|| / ||vbar_1|| after
/// relabeling the blocks so gamma1 >= 1.  Every start must keep a margin
/// >= -1e-8 and converge to (sqrt(y1), sqrt(y2)).
RegionDReport check_region_D(const TameCertificate& cert, const Vector& y,
                             const std::vector<Vector>& starts, const FlowOptions& opts);

/// Sample a point of the region D above, uniformly by rejection.
Vector sample_region_D(const TameCertificate& cert, const Vector& y, Rng& rng);

/// true iff the entries of z are all nonnegative or all nonpositive up to
/// tol * max|z|.
bool sign_consistency(const Vector& z, double tol);

}  // namespace factorflow
