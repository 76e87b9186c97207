#pragma once

#include "factorflow/normal_form.hpp"
#include "factorflow/types.hpp"

#include <functional>
#include <string>
#include <vector>

namespace factorflow {

struct FlowOptions {
  double rel_tol = 1e-9;
  double abs_tol = 1e-12;
  double grad_tol = 1e-10;      ///< stop when ||rhs|| <= grad_tol * (1 + J)
  double t_max = 500.0;
  double snapshot_every = 0.25; ///< sampling interval; snapshots hit exactly
};

/// Time-stamped snapshots of a flow with cost/gradient diagnostics.
struct Trajectory {
  std::vector<double> times;
  std::vector<Vector> states;  ///< flattened row-major snapshots
  std::vector<double> J_values;
  std::vector<double> grad_norms;
  bool converged = false;
  bool failed = false;
  std::string failure_reason;
  Vector terminal_state;
  double terminal_time = 0;
  int state_rows = 0;
  int state_cols = 0;

  Matrix state_at(std::size_t i) const;
  Matrix terminal() const;
};

using RhsFn = std::function<Vector(const Vector&)>;
using CostFn = std::function<double(const Vector&)>;

/// Adaptive embedded Runge-Kutta 4(5), Dormand-Prince coefficients.
/// Integrates until t_max or until the gradient stop fires; the stop is
/// armed only once J has dropped below its initial value, so flows started
/// near the unstable origin are not declared converged prematurely.
/// Snapshot times are hit exactly.  Step-size underflow marks the
/// trajectory failed and keeps the last valid state.
Trajectory integrate(const RhsFn& rhs, const Vector& x0, const FlowOptions& opts,
                     const CostFn& cost = {});

/// J(X) = 1/2 sum_i (tr(A_i X) - y_i)^2
double cost_J(const ProblemInstance& inst, const Matrix& X);
/// residuals rho_i = tr(A_i X) - y_i
Vector residuals_X(const ProblemInstance& inst, const Matrix& X);
/// -sum_i rho_i (A_i X + X A_i)
Matrix rhs_X(const ProblemInstance& inst, const Matrix& X);

/// J(U) = 1/4 sum_i (tr(A_i U U^T) - y_i)^2
double cost_U(const ProblemInstance& inst, const Matrix& U);
Vector residuals_U(const ProblemInstance& inst, const Matrix& U);
/// -sum_i rho_i A_i U, the Euclidean gradient flow of cost_U
Matrix rhs_U(const ProblemInstance& inst, const Matrix& U);

/// e^{At} V0 for A = sum_i y_i A_i, via symmetric eigendecomposition.
Matrix linear_comparison(const ProblemInstance& inst, const Matrix& V0, double t);

enum class Coordinates { X, U, Normal, Reduced };

struct ConvergeResult {
  Matrix state;
  Trajectory trajectory;
};

/// Run the matching flow until the gradient stop (or t_max).  Normal and
/// reduced coordinates require the normal form / certificate.
ConvergeResult converge(const ProblemInstance& inst, const Matrix& x0, Coordinates coords,
                        const FlowOptions& opts, const NormalForm* nf = nullptr,
                        const TameCertificate* cert = nullptr);

/// CSV export with columns t, J, grad_norm, spectral_ratio; optional binary
/// sidecar holds the full states (row-major float64 with a shape header).
void export_trajectory_csv(const Trajectory& traj, const std::string& path,
                           bool states_are_X = true,
                           const std::string& state_sidecar = "");

}  // namespace factorflow
