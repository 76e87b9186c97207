#include "factorflow/flow.hpp"

#include "factorflow/analysis.hpp"
#include "factorflow/csv.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace factorflow {

Matrix Trajectory::state_at(std::size_t i) const {
  return Eigen::Map<const Matrix>(states.at(i).data(), state_rows, state_cols);
}

Matrix Trajectory::terminal() const {
  return Eigen::Map<const Matrix>(terminal_state.data(), state_rows, state_cols);
}

namespace {

// Dormand-Prince 5(4) tableau
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                 b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// b(5th) - b(4th), for the embedded error estimate
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

double error_ratio(const Vector& err, const Vector& y0, const Vector& y1,
                   double abs_tol, double rel_tol) {
  double acc = 0;
  for (Eigen::Index i = 0; i < err.size(); ++i) {
    double sc = abs_tol + rel_tol * std::max(std::abs(y0(i)), std::abs(y1(i)));
    double r = err(i) / sc;
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(err.size()));
}

}  // namespace

Trajectory integrate(const RhsFn& rhs, const Vector& x0, const FlowOptions& opts,
                     const CostFn& cost) {
  if (!(opts.rel_tol > 0) || !(opts.abs_tol > 0) || !(opts.grad_tol > 0) ||
      !(opts.t_max > 0) || !(opts.snapshot_every > 0))
    throw std::invalid_argument("FlowOptions must be positive");

  Trajectory traj;
  traj.state_rows = static_cast<int>(x0.size());
  traj.state_cols = 1;

  auto Jof = [&](const Vector& y) { return cost ? cost(y) : 0.0; };

  Vector y = x0;
  Vector k1 = rhs(y);
  double t = 0;
  const double J0 = Jof(y);

  auto record = [&](double tt, const Vector& yy, double J, double g) {
    traj.times.push_back(tt);
    traj.states.push_back(yy);
    traj.J_values.push_back(J);
    traj.grad_norms.push_back(g);
  };
  record(0, y, J0, k1.norm());

  // exact equilibrium: converged on the spot
  if (k1.norm() <= 1e-14 * (1.0 + y.norm())) {
    traj.converged = true;
    traj.terminal_state = y;
    traj.terminal_time = 0;
    return traj;
  }

  // The gradient stop arms only after J has moved below its initial value;
  // flows started next to the unstable origin have a tiny gradient there
  // and must not stop before escaping.
  const double arm_level = (J0 > 0) ? 0.999 * J0 : 0.0;
  bool armed = !cost || J0 == 0.0;

  double h = std::min({0.01 * (1.0 + y.norm()) / (1.0 + k1.norm()), opts.snapshot_every,
                       opts.t_max});
  double next_snap = opts.snapshot_every;
  // Near an equilibrium the local error vanishes and the controller would
  // grow h far past the stability region, leaving the state jittering at the
  // tolerance floor instead of settling.  A Lipschitz-based cap keeps h
  // inside the stability region so deviations contract and the gradient
  // stop can actually fire.
  double h_stab = std::numeric_limits<double>::infinity();
  Vector k2, k3, k4, k5, k6, k7, ynew, err;

  while (t < opts.t_max) {
    bool hit_snap = false;
    if (t + h >= next_snap - 1e-14 * std::max(1.0, next_snap)) {
      h = next_snap - t;
      hit_snap = true;
    }
    if (t + h > opts.t_max) {
      h = opts.t_max - t;
      hit_snap = false;
    }
    if (h <= 1e-14 * std::max(1.0, std::abs(t))) {
      traj.failed = true;
      traj.failure_reason = "step size underflow at t=" + std::to_string(t);
      break;
    }

    k2 = rhs(y + h * (a21 * k1));
    k3 = rhs(y + h * (a31 * k1 + a32 * k2));
    k4 = rhs(y + h * (a41 * k1 + a42 * k2 + a43 * k3));
    k5 = rhs(y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    k6 = rhs(y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    ynew = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    k7 = rhs(ynew);  // FSAL
    err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

    double ratio = error_ratio(err, y, ynew, opts.abs_tol, opts.rel_tol);
    if (ratio <= 1.0) {
      double dy = (ynew - y).norm();
      if (dy > 0) {
        double lipschitz = (k7 - k1).norm() / dy;
        if (lipschitz > 0) h_stab = 2.5 / lipschitz;
      }
      t += h;
      y = ynew;
      k1 = k7;
      double J = Jof(y);
      double g = k1.norm();
      if (hit_snap || t >= opts.t_max) {
        record(t, y, J, g);
        if (hit_snap) next_snap += opts.snapshot_every;
      }
      if (!armed && J <= arm_level) armed = true;
      if (armed && g <= opts.grad_tol * (1.0 + J)) {
        traj.converged = true;
        break;
      }
    }
    double grow = (ratio > 0) ? 0.9 * std::pow(ratio, -0.2) : 5.0;
    h *= std::clamp(grow, 0.2, 5.0);
    h = std::min(h, h_stab);
  }

  if (traj.times.back() < t) record(t, y, Jof(y), k1.norm());
  traj.terminal_state = y;
  traj.terminal_time = t;
  return traj;
}

double cost_J(const ProblemInstance& inst, const Matrix& X) {
  if (X.rows() != inst.n || X.cols() != inst.n)
    throw std::invalid_argument("cost_J: dimension mismatch");
  return 0.5 * residuals_X(inst, X).squaredNorm();
}

Vector residuals_X(const ProblemInstance& inst, const Matrix& X) {
  Vector rho(inst.q);
  for (int i = 0; i < inst.q; ++i)
    rho(i) = (inst.A[i].cwiseProduct(X)).sum() - inst.y(i);  // tr(A_i X), A_i symmetric
  return rho;
}

Matrix rhs_X(const ProblemInstance& inst, const Matrix& X) {
  if (X.rows() != inst.n || X.cols() != inst.n)
    throw std::invalid_argument("rhs_X: dimension mismatch");
  Vector rho = residuals_X(inst, X);
  Matrix out = Matrix::Zero(inst.n, inst.n);
  for (int i = 0; i < inst.q; ++i) {
    Matrix AX = inst.A[i] * X;
    out.noalias() -= rho(i) * (AX + AX.transpose());
  }
  return out;
}

double cost_U(const ProblemInstance& inst, const Matrix& U) {
  return 0.25 * residuals_U(inst, U).squaredNorm();
}

Vector residuals_U(const ProblemInstance& inst, const Matrix& U) {
  if (U.rows() != inst.n) throw std::invalid_argument("residuals_U: dimension mismatch");
  Vector rho(inst.q);
  for (int i = 0; i < inst.q; ++i)
    rho(i) = (U.transpose() * inst.A[i] * U).trace() - inst.y(i);
  return rho;
}

Matrix rhs_U(const ProblemInstance& inst, const Matrix& U) {
  Vector rho = residuals_U(inst, U);
  Matrix out = Matrix::Zero(U.rows(), U.cols());
  for (int i = 0; i < inst.q; ++i) out.noalias() -= rho(i) * (inst.A[i] * U);
  return out;
}

Matrix linear_comparison(const ProblemInstance& inst, const Matrix& V0, double t) {
  Matrix A = Matrix::Zero(inst.n, inst.n);
  for (int i = 0; i < inst.q; ++i) A += inst.y(i) * inst.A[i];
  Eigen::SelfAdjointEigenSolver<Matrix> es(A);
  Vector growth = (es.eigenvalues().array() * t).exp();
  return es.eigenvectors() * growth.asDiagonal() * es.eigenvectors().transpose() * V0;
}

ConvergeResult converge(const ProblemInstance& inst, const Matrix& x0, Coordinates coords,
                        const FlowOptions& opts, const NormalForm* nf,
                        const TameCertificate* cert) {
  const int rows = static_cast<int>(x0.rows());
  const int cols = static_cast<int>(x0.cols());
  auto unvec = [&](const Vector& v) {
    return Matrix(Eigen::Map<const Matrix>(v.data(), rows, cols));
  };
  RhsFn rhs;
  CostFn cost;
  switch (coords) {
    case Coordinates::X:
      rhs = [&](const Vector& v) {
        Matrix R = rhs_X(inst, unvec(v));
        return Vector(Eigen::Map<Vector>(R.data(), R.size()));
      };
      cost = [&](const Vector& v) { return cost_J(inst, unvec(v)); };
      break;
    case Coordinates::U:
      rhs = [&](const Vector& v) {
        Matrix R = rhs_U(inst, unvec(v));
        return Vector(Eigen::Map<Vector>(R.data(), R.size()));
      };
      cost = [&](const Vector& v) { return cost_U(inst, unvec(v)); };
      break;
    case Coordinates::Normal:
      if (!nf) throw std::invalid_argument("converge: normal coordinates need a NormalForm");
      rhs = [&, nf](const Vector& v) {
        Matrix R = rhs_normal(*nf, inst.y, unvec(v));
        return Vector(Eigen::Map<Vector>(R.data(), R.size()));
      };
      cost = [&, nf](const Vector& v) { return cost_normal(nf->ranks, inst.y, unvec(v)); };
      break;
    case Coordinates::Reduced:
      if (!cert) throw std::invalid_argument("converge: reduced coordinates need a certificate");
      rhs = [&, cert](const Vector& v) { return rhs_reduced(*cert, inst.y, v); };
      cost = [&, cert](const Vector& v) { return cost_reduced(inst.y, v); };
      break;
  }
  Vector v0 = Eigen::Map<const Vector>(x0.data(), x0.size());
  Trajectory traj = integrate(rhs, v0, opts, cost);
  traj.state_rows = rows;
  traj.state_cols = cols;
  if (traj.failed) throw std::runtime_error("converge: " + traj.failure_reason);
  return {traj.terminal(), std::move(traj)};
}

void export_trajectory_csv(const Trajectory& traj, const std::string& path, bool states_are_X,
                           const std::string& state_sidecar) {
  CsvTable table;
  table.header = {"t", "J", "grad_norm", "spectral_ratio"};
  for (std::size_t i = 0; i < traj.times.size(); ++i) {
    double ratio = std::numeric_limits<double>::quiet_NaN();
    if (states_are_X && traj.state_rows == traj.state_cols) {
      Matrix X = traj.state_at(i);
      if (X.cwiseAbs().maxCoeff() > 0) ratio = spectral_ratio(X);
    }
    table.rows.push_back({format_double(traj.times[i]), format_double(traj.J_values[i]),
                          format_double(traj.grad_norms[i]), format_double(ratio)});
  }
  write_csv(table, path);

  if (!state_sidecar.empty()) {
    std::ofstream f(state_sidecar, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + state_sidecar + " for writing");
    std::int64_t count = static_cast<std::int64_t>(traj.states.size());
    std::int64_t rows = traj.state_rows, cols = traj.state_cols;
    f.write(reinterpret_cast<const char*>(&count), sizeof count);
    f.write(reinterpret_cast<const char*>(&rows), sizeof rows);
    f.write(reinterpret_cast<const char*>(&cols), sizeof cols);
    for (const auto& s : traj.states) {
      Matrix M = Eigen::Map<const Matrix>(s.data(), rows, cols);
      Matrix rowmajor = M.transpose();  // column-major storage of transpose = row-major of M
      f.write(reinterpret_cast<const char*>(rowmajor.data()),
              static_cast<std::streamsize>(sizeof(double) * M.size()));
    }
  }
}

}  // namespace factorflow
