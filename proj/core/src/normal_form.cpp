#include "factorflow/normal_form.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace factorflow {

NormalForm build_normal_form(const ProblemInstance& inst) {
  RankSpreadReport rs = check_rank_spread(inst);
  if (!rs.ok) throw RankSpreadError(rs.m, rs.span_dim);

  FactorSet fs = factor_set(inst);
  const int n = inst.n;
  const int m = rs.m;

  NormalForm nf;
  nf.n = n;
  nf.m = m;
  nf.ranks = inst.ranks;
  nf.Q = fs.B.transpose() * fs.B;

  // orthonormal completion of span(B) via full QR
  Eigen::HouseholderQR<Matrix> qr(fs.B);
  Matrix Qfull = qr.householderQ();
  Matrix Bperp = Qfull.rightCols(n - m);

  nf.P.resize(n, n);
  nf.P.leftCols(m) = fs.B * nf.Q.llt().solve(Matrix::Identity(m, m));
  nf.P.rightCols(n - m) = Bperp;
  nf.P_inv.resize(n, n);
  nf.P_inv.topRows(m) = fs.B.transpose();
  nf.P_inv.bottomRows(n - m) = Bperp.transpose();
  return nf;
}

std::pair<Matrix, Matrix> to_normal(const NormalForm& nf, const Matrix& U) {
  if (U.rows() != nf.n) throw std::invalid_argument("to_normal: U has wrong row count");
  Matrix Ubar = nf.P_inv * U;
  return {Ubar.topRows(nf.m), Ubar.bottomRows(nf.n - nf.m)};
}

Matrix from_normal(const NormalForm& nf, const Matrix& x, const Matrix& tail) {
  if (x.rows() != nf.m || (tail.size() > 0 && tail.rows() != nf.n - nf.m))
    throw std::invalid_argument("from_normal: shape mismatch");
  Matrix Ubar(nf.n, x.cols());
  Ubar.topRows(nf.m) = x;
  if (tail.size() > 0)
    Ubar.bottomRows(nf.n - nf.m) = tail;
  else
    Ubar.bottomRows(nf.n - nf.m).setZero();
  return nf.P * Ubar;
}

Vector residuals_normal(const std::vector<int>& ranks, const Vector& y, const Matrix& x) {
  const auto off = block_offsets(ranks);
  Vector rho(static_cast<Eigen::Index>(ranks.size()));
  for (std::size_t i = 0; i < ranks.size(); ++i)
    rho(static_cast<Eigen::Index>(i)) = x.middleRows(off[i], ranks[i]).squaredNorm() - y(i);
  return rho;
}

Matrix rhs_normal(const NormalForm& nf, const Vector& y, const Matrix& x) {
  if (x.rows() != nf.m) throw std::invalid_argument("rhs_normal: shape mismatch");
  Vector rho = residuals_normal(nf.ranks, y, x);
  Matrix Dx(x.rows(), x.cols());
  const auto off = nf.offsets();
  for (int i = 0; i < nf.q(); ++i)
    Dx.middleRows(off[i], nf.ranks[i]) = rho(i) * x.middleRows(off[i], nf.ranks[i]);
  return -(nf.Q * Dx);
}

double cost_normal(const std::vector<int>& ranks, const Vector& y, const Matrix& x) {
  return 0.25 * residuals_normal(ranks, y, x).squaredNorm();
}

LeadingDecomposition leading_decomposition(const Matrix& Q, double tol) {
  if (Q.rows() != Q.cols()) throw std::invalid_argument("leading_decomposition: not square");
  Eigen::SelfAdjointEigenSolver<Matrix> es(Q);
  Vector eig = es.eigenvalues();  // ascending
  const int m = static_cast<int>(eig.size());
  std::vector<double> listed(eig.data(), eig.data() + m);
  double top = eig(m - 1);
  if (top <= 0 || eig(0) <= 0)
    throw SpectrumShapeError("matrix not positive definite", listed);
  if (m < 2) throw SpectrumShapeError("dimension too small for a leading split", listed);
  if (top - eig(m - 2) <= tol * top)
    throw SpectrumShapeError("leading eigenvalue not simple", listed);
  if (eig(m - 2) - eig(0) > tol * top)
    throw SpectrumShapeError("trailing eigenvalues not equal", listed);

  LeadingDecomposition out;
  out.beta = eig.head(m - 1).mean();
  out.alpha = top - out.beta;
  out.v = es.eigenvectors().col(m - 1);
  for (int i = 0; i < m; ++i) {
    if (std::abs(out.v(i)) > 1e-12) {
      if (out.v(i) < 0) out.v = -out.v;
      break;
    }
  }
  return out;
}

TameCertificate make_certificate(const NormalForm& nf, double tol, double min_block_norm) {
  LeadingDecomposition ld = leading_decomposition(nf.Q, tol);
  TameCertificate cert;
  cert.alpha = ld.alpha;
  cert.beta = ld.beta;
  cert.v = ld.v;
  cert.ranks = nf.ranks;
  cert.block_norms.resize(nf.q());
  const auto off = nf.offsets();
  for (int i = 0; i < nf.q(); ++i) {
    cert.block_norms(i) = ld.v.segment(off[i], nf.ranks[i]).norm();
    if (cert.block_norms(i) <= min_block_norm) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(nf.Q, Eigen::EigenvaluesOnly);
      throw SpectrumShapeError("vanishing block norm of the leading eigenvector",
                               {es.eigenvalues().data(),
                                es.eigenvalues().data() + es.eigenvalues().size()});
    }
  }
  // Sherman-Morrison for unit v
  cert.beta_inv = 1.0 / cert.beta;
  cert.alpha_inv = cert.alpha / (cert.beta * (cert.beta + cert.alpha));
  return cert;
}

LambdaProjection lambda_v_project(const TameCertificate& cert, const Vector& x) {
  if (x.size() != cert.v.size()) throw std::invalid_argument("lambda_v_project: size mismatch");
  const auto off = block_offsets(cert.ranks);
  LambdaProjection out;
  out.lambda.resize(cert.q());
  Vector proj = Vector::Zero(x.size());
  for (int i = 0; i < cert.q(); ++i) {
    auto vb = cert.v.segment(off[i], cert.ranks[i]);
    auto xb = x.segment(off[i], cert.ranks[i]);
    double nb2 = cert.block_norms(i) * cert.block_norms(i);
    out.lambda(i) = xb.dot(vb) / nb2;
    proj.segment(off[i], cert.ranks[i]) = out.lambda(i) * vb;
  }
  out.residual = (x - proj).norm();
  return out;
}

ReducedState to_reduced(const TameCertificate& cert, const Vector& lambda) {
  ReducedState rs;
  rs.z = lambda.cwiseProduct(cert.block_norms);
  rs.G = cert.block_norms * cert.block_norms.transpose();
  return rs;
}

Vector from_reduced(const TameCertificate& cert, const Vector& z) {
  const auto off = block_offsets(cert.ranks);
  Vector x = Vector::Zero(cert.m());
  for (int i = 0; i < cert.q(); ++i)
    x.segment(off[i], cert.ranks[i]) =
        (z(i) / cert.block_norms(i)) * cert.v.segment(off[i], cert.ranks[i]);
  return x;
}

Matrix reduced_metric(const TameCertificate& cert) {
  return cert.alpha * (cert.block_norms * cert.block_norms.transpose()) +
         cert.beta * Matrix::Identity(cert.q(), cert.q());
}

Vector rhs_reduced(const TameCertificate& cert, const Vector& y, const Vector& z) {
  Vector fz = (z.array().square() - y.array()).matrix().cwiseProduct(z);
  return -(reduced_metric(cert) * fz);
}

double cost_reduced(const Vector& y, const Vector& z) {
  return 0.25 * (z.array().square() - y.array()).square().sum();
}

static void append_double(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

static void append_matrix(std::string& out, const Matrix& M) {
  out += "[";
  for (int i = 0; i < M.rows(); ++i)
    for (int j = 0; j < M.cols(); ++j) {
      if (i || j) out += ", ";
      append_double(out, M(i, j));
    }
  out += "]";
}

std::string normal_form_to_json(const NormalForm& nf) {
  std::string out = "{\n  \"n\": " + std::to_string(nf.n) + ",\n  \"m\": " + std::to_string(nf.m) +
                    ",\n  \"N\": [";
  const auto off = nf.offsets();
  for (int i = 0; i < nf.q(); ++i) {
    if (i) out += ", ";
    out += "[";
    for (int j = off[i]; j < off[i + 1]; ++j) {
      if (j > off[i]) out += ", ";
      out += std::to_string(j + 1);  // 1-based index sets
    }
    out += "]";
  }
  out += "],\n  \"P\": ";
  append_matrix(out, nf.P);
  out += ",\n  \"Q\": ";
  append_matrix(out, nf.Q);
  out += "\n}\n";
  return out;
}

void save_normal_form(const NormalForm& nf, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << normal_form_to_json(nf);
}

}  // namespace factorflow
