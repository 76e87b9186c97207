#pragma once

#include "factorflow/rng.hpp"
#include "factorflow/types.hpp"

#include <optional>
#include <string>
#include <utility>

namespace factorflow {

/// Relative threshold below which a singular/eigen value counts as zero.
inline constexpr double kRankTol = 1e-10;

bool is_symmetric(const Matrix& M, double rel_tol = 1e-12);
/// smallest eigenvalue >= -rel_tol * largest
bool is_psd(const Matrix& M, double rel_tol = 1e-10);
int numerical_rank(const Matrix& M, double rel_tol = kRankTol);

/// G G^T for G an n x rank matrix with iid standard normal entries.
Matrix make_psd(int n, int rank, Rng& rng);

/// Random instance: A_i = make_psd(n, r_i), y_i uniform on (0, y_max].
ProblemInstance gen_generic(int n, const std::vector<int>& ranks, double y_max, Rng& rng);

/// Instance whose sum-of-A_i spectrum is exactly `spectrum` (m values,
/// m = sum ranks <= n) padded with zeros.  Builds Q0 with the prescribed
/// spectrum, factors it, and embeds the factor through a random rotation.
/// When min_block_norm > 0 the rotation is resampled until every block of
/// the leading eigenvector of Q0 has norm above the floor.
ProblemInstance gen_with_spectrum(int n, const std::vector<int>& ranks,
                                  const std::vector<double>& spectrum, const Vector& y,
                                  Rng& rng, double min_block_norm = 0.0);

/// Tame family: sum A_i has spectrum {spectrum_top, spectrum_rest, ...,
/// spectrum_rest, 0, ...} and every block of the leading eigenvector is
/// nonvanishing.  Returns the instance with its certificate.
std::pair<ProblemInstance, TameCertificate> gen_tame(int n, const std::vector<int>& ranks,
                                                     double spectrum_top, double spectrum_rest,
                                                     const Vector& y, Rng& rng);

/// A_i = gamma_i V_i V_i^T for disjoint orthonormal column groups V_i; all
/// pairs commute and A_i^2 = gamma_i A_i.
ProblemInstance gen_commuting_projections(int n, const std::vector<int>& ranks,
                                          const std::vector<double>& gammas, Rng& rng);

/// B_i from the eigendecomposition of A_i (eigenvectors times sqrt
/// eigenvalues, truncated at rank r_i).
FactorSet factor_set(const ProblemInstance& inst);

struct RankSpreadReport {
  bool ok = false;
  int m = 0;
  int span_dim = 0;
};
/// true iff m = sum r_i <= n and the concatenated factor has numerical rank m.
RankSpreadReport check_rank_spread(const ProblemInstance& inst);

struct TameCheck {
  std::optional<TameCertificate> certificate;
  std::string reason;  ///< set when absent
};
/// Certify the tame spectrum shape of sum A_i at relative tolerance tol:
/// one simple leading eigenvalue, m-1 equal trailing positive ones, zeros
/// below, and nonvanishing blocks of the leading eigenvector in normal
/// coordinates.
TameCheck check_tame(const ProblemInstance& inst, double tol);

/// Verify a certificate against the instance's normal-form Gram matrix.
bool certificate_valid(const ProblemInstance& inst, const TameCertificate& cert,
                       double rel_tol = 1e-8);

// JSON file format: {"n","q","ranks","y","A","seed"}, floats with 17
// significant digits, A entries row-major.
void save_instance(const ProblemInstance& inst, const std::string& path);
ProblemInstance load_instance(const std::string& path);
std::string instance_to_json(const ProblemInstance& inst);
ProblemInstance instance_from_json(const std::string& text);

}  // namespace factorflow
