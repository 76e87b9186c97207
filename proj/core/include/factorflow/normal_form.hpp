#pragma once

#include "factorflow/instance.hpp"
#include "factorflow/types.hpp"

#include <utility>

namespace factorflow {

/// Change of variables P = [B (B^T B)^{-1}  B_perp] that turns every A_i
/// into the 0/1 diagonal block E_i.  Q = B^T B is the Gram matrix of the
/// normal system xdot = -Q D(x) x.
struct NormalForm {
  Matrix P;                ///< invertible, n x n
  Matrix P_inv;            ///< equals [B^T ; B_perp^T]
  Matrix Q;                ///< m x m symmetric positive definite
  std::vector<int> ranks;  ///< block sizes; N_i = {m_{i-1}+1, ..., m_i}
  int n = 0;
  int m = 0;

  int q() const { return static_cast<int>(ranks.size()); }
  std::vector<int> offsets() const { return block_offsets(ranks); }
};

/// Throws RankSpreadError when the rank spread condition fails.
NormalForm build_normal_form(const ProblemInstance& inst);

/// Ubar = P^{-1} U split into the leading m rows (x) and the trailing rows.
std::pair<Matrix, Matrix> to_normal(const NormalForm& nf, const Matrix& U);
Matrix from_normal(const NormalForm& nf, const Matrix& x, const Matrix& tail);

/// residuals rho_i(x) = tr(x^T E_i x) - y_i
Vector residuals_normal(const std::vector<int>& ranks, const Vector& y, const Matrix& x);

/// -Q (sum_i rho_i(x) E_i) x
Matrix rhs_normal(const NormalForm& nf, const Vector& y, const Matrix& x);

/// J_k(x) = 1/4 sum_i rho_i(x)^2, the cost of the normal system.
double cost_normal(const std::vector<int>& ranks, const Vector& y, const Matrix& x);

struct LeadingDecomposition {
  double alpha = 0;
  double beta = 0;
  Vector v;  ///< unit, sign fixed so the first nonzero entry is positive
};

/// Split Q = alpha v v^T + beta I; requires eigenvalues {beta+alpha, beta,
/// ..., beta} within tol, otherwise throws SpectrumShapeError.
LeadingDecomposition leading_decomposition(const Matrix& Q, double tol);

/// Assemble a TameCertificate for nf.Q; throws SpectrumShapeError if the
/// spectrum is not of tame shape or a block norm is below min_block_norm.
TameCertificate make_certificate(const NormalForm& nf, double tol,
                                 double min_block_norm = 1e-8);

struct LambdaProjection {
  Vector lambda;       ///< q blockwise coefficients
  double residual = 0; ///< distance of x to Lambda_v
};
/// Blockwise least-squares projection of x onto Lambda_v = {Lambda v}.
LambdaProjection lambda_v_project(const TameCertificate& cert, const Vector& x);

/// z_i = lambda_i ||vbar_i|| and its rank-one Gram matrix G = vbar vbar^T.
struct ReducedState {
  Vector z;
  Matrix G;
};
ReducedState to_reduced(const TameCertificate& cert, const Vector& lambda);
/// x = sum_i (z_i / ||vbar_i||) E_i v, a point of Lambda_v.
Vector from_reduced(const TameCertificate& cert, const Vector& z);

/// metric factor alpha G + beta I of the reduced gradient flow
Matrix reduced_metric(const TameCertificate& cert);

/// zdot = -(alpha G + beta I) F(z) z with f_i(z) = z_i^2 - y_i
Vector rhs_reduced(const TameCertificate& cert, const Vector& y, const Vector& z);

/// J_r(z) = 1/4 sum_i (z_i^2 - y_i)^2
double cost_reduced(const Vector& y, const Vector& z);

// JSON export {P, Q, N, m}; same float convention as the instance format.
std::string normal_form_to_json(const NormalForm& nf);
void save_normal_form(const NormalForm& nf, const std::string& path);

}  // namespace factorflow
