#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace factorflow {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// A measurement problem: q symmetric psd matrices A_i with targets y_i > 0.
struct ProblemInstance {
  int n = 0;                ///< ambient dimension
  int q = 0;                ///< number of measurements
  std::vector<Matrix> A;    ///< q psd matrices, n x n
  std::vector<int> ranks;   ///< rank of each A_i
  Vector y;                 ///< q positive targets
  std::uint64_t seed = 0;   ///< generator seed, 0 if loaded from disk

  int total_rank() const { return std::accumulate(ranks.begin(), ranks.end(), 0); }
};

/// Tall factors B_i with A_i = B_i B_i^T, plus their horizontal concatenation.
struct FactorSet {
  std::vector<Matrix> blocks;  ///< B_i, n x r_i
  Matrix B;                    ///< n x m, m = sum r_i
};

/// Certificate that Q = alpha v v^T + beta I for the instance's normal-form
/// Gram matrix, with every block of v bounded away from zero.  The inverse
/// coefficients satisfy Q^{-1} = -alpha_inv v v^T + beta_inv I.
struct TameCertificate {
  double alpha = 0;        ///< spectral-gap coefficient, > 0
  double beta = 0;         ///< bulk eigenvalue, > 0
  Vector v;                ///< unit leading eigenvector in R^m
  Vector block_norms;      ///< q entries, ||v restricted to block i||
  double alpha_inv = 0;    ///< alpha / (beta (beta + alpha))
  double beta_inv = 0;     ///< 1 / beta
  std::vector<int> ranks;  ///< block sizes partitioning {1..m}

  int m() const { return static_cast<int>(v.size()); }
  int q() const { return static_cast<int>(block_norms.size()); }
  /// leading eigenvalue of Q (top of the spectrum {alpha+beta, beta, ...}).
  double spectrum_top() const { return alpha + beta; }
  double spectrum_rest() const { return beta; }
};

/// Offsets of the row blocks N_i = [offset_i, offset_i + r_i).
inline std::vector<int> block_offsets(const std::vector<int>& ranks) {
  std::vector<int> off(ranks.size() + 1, 0);
  for (std::size_t i = 0; i < ranks.size(); ++i) off[i + 1] = off[i] + ranks[i];
  return off;
}

struct RankSpreadError : std::runtime_error {
  int m;
  int span_dim;
  RankSpreadError(int m_, int span_)
      : std::runtime_error("rank spread condition violated: m=" + std::to_string(m_) +
                           ", achieved span dimension " + std::to_string(span_)),
        m(m_), span_dim(span_) {}
};

struct SpectrumShapeError : std::runtime_error {
  std::vector<double> eigenvalues;
  SpectrumShapeError(std::string what, std::vector<double> eigs)
      : std::runtime_error(std::move(what)), eigenvalues(std::move(eigs)) {}
};

}  // namespace factorflow
