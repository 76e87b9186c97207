#pragma once

#include "factorflow/normal_form.hpp"
#include "factorflow/rng.hpp"
#include "factorflow/types.hpp"

#include <array>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace factorflow {

/// Critical point of the reduced Morse cost J_r(z) = 1/4 sum (z_i^2 - y_i)^2.
struct CriticalPoint {
  Vector z;        ///< entries in {-sqrt(y_i), 0, +sqrt(y_i)}
  int index = 0;   ///< Morse index = number of zero entries
  double Jr_value = 0;
};

/// All 3^q critical points; per-index counts are 2^{q-i} C(q,i).
std::vector<CriticalPoint> enumerate_crit_Jr(const Vector& y);

/// One sign pattern z_i = s_i sqrt(y_i) with its reduced cost.
struct SignPoint {
  std::vector<int> signs;
  double cost = 0;
};

struct ReducedExact {
  std::vector<SignPoint> table;       ///< all 2^q feasible points
  std::array<SignPoint, 2> argmin;    ///< the two all-same-sign patterns
  std::vector<SignPoint> argmax;      ///< every pattern attaining the max
  double min_cost = 0;
  double max_cost = 0;
};

/// Enumerate z_i = +-sqrt(y_i) for the reduced quadratic cost
///   cost(z) = -a (sum_i s_i w_i sqrt(y_i))^2 + b sum_i y_i,
/// with optional positive weights w (all ones when omitted; the tame path
/// passes the block norms of v).
ReducedExact solve_reduced_exact(const Vector& y, double a, double b,
                                 const Vector& weights = Vector());

enum class SolutionKind { AnalyticMin, NumericMin, NumericMax };

/// Minimizer (or maximizer) of tr(x^T Q^{-1} x) on the feasible manifold,
/// lifted back to the original coordinates.
struct RegSolution {
  Matrix x_star;           ///< m x k, normal coordinates
  double K_star = 0;       ///< tr(x*^T Q^{-1} x*)
  Matrix U_star;           ///< n x k
  Matrix X_star;           ///< U* U*^T
  SolutionKind kind = SolutionKind::NumericMin;
  Vector feasibility_residuals;
  double grad_norm = 0;    ///< Riemannian gradient at x* (0 for analytic)
  int restarts_used = 0;
  bool converged = true;
};

/// Exact tame-case minimizer: solve the reduced sign problem with the
/// certificate's inverse coefficients and block norms, lift z* through
/// Lambda_v.  The result has rank one.
RegSolution solve_min_tame(const ProblemInstance& inst, const TameCertificate& cert,
                           const NormalForm& nf);

struct RiemannianOptions {
  int max_iters = 10000;
  double grad_tol = 1e-9;   ///< stop on Riemannian gradient norm
  double armijo_c = 1e-4;
  double shrink = 0.5;
  std::function<void(double)> on_accept;  ///< objective value after each accepted step
};

/// Projected gradient descent (ascent for max) on the product of spheres
/// {x : tr(x^T E_i x) = y_i}: blockwise tangent projection, blockwise
/// rescaling retraction, Armijo backtracking, best over `restarts` random
/// feasible starts.
RegSolution solve_min_numeric(const NormalForm& nf, const Vector& y, int k, int restarts,
                              Rng& rng, const RiemannianOptions& opts = {});
RegSolution solve_max_numeric(const NormalForm& nf, const Vector& y, int k, int restarts,
                              Rng& rng, const RiemannianOptions& opts = {});

/// U* = P [x*; 0], X* = U* U*^T
std::pair<Matrix, Matrix> lift(const NormalForm& nf, const Matrix& x_star);

/// Cost of any feasible point orthogonal to v: beta_inv * sum y_i.  Upper
/// bound for the constrained maximum under the tame spectrum.
double vperp_plateau_cost(const TameCertificate& cert, const Vector& y);

std::string solution_to_json(const RegSolution& sol);
void save_solution(const RegSolution& sol, const std::string& path);

}  // namespace factorflow
