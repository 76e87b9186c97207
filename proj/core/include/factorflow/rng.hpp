#pragma once

#include "factorflow/types.hpp"

#include <cstdint>
#include <random>

namespace factorflow {

/// Deterministic random stream.  Gaussians use Box-Muller on 53-bit uniforms
/// so that a (seed, stream) pair reproduces the same doubles on every build.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Stream derived by hashing (master seed, stream index); independent
  /// streams make parallel generation order-free.
  static Rng stream(std::uint64_t master_seed, std::uint64_t index);

  std::uint64_t raw() { return engine_(); }

  /// uniform on [0, 1)
  double uniform();
  /// uniform on (0, hi]
  double uniform_positive(double hi);
  /// uniform on [lo, hi)
  double uniform(double lo, double hi);
  double normal();

  Matrix gaussian_matrix(int rows, int cols);
  Vector gaussian_vector(int n);
  /// Haar-distributed orthogonal matrix (QR of a Gaussian, signs fixed).
  Matrix orthogonal(int n);

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0;
};

/// splitmix64; used to decorrelate seeds fed to the engines.
std::uint64_t hash_seed(std::uint64_t master, std::uint64_t index);

}  // namespace factorflow
