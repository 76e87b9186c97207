#include "factorflow/instance.hpp"

#include "factorflow/normal_form.hpp"

#include <nlohmann/json.hpp>

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace factorflow {

bool is_symmetric(const Matrix& M, double rel_tol) {
  double scale = M.cwiseAbs().maxCoeff();
  if (scale == 0) return true;
  return (M - M.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

bool is_psd(const Matrix& M, double rel_tol) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(M, Eigen::EigenvaluesOnly);
  double top = es.eigenvalues().maxCoeff();
  if (top <= 0) return es.eigenvalues().minCoeff() >= -1e-14;
  return es.eigenvalues().minCoeff() >= -rel_tol * top;
}

int numerical_rank(const Matrix& M, double rel_tol) {
  Eigen::JacobiSVD<Matrix> svd(M);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0) return 0;
  int r = 0;
  for (int i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * s(0)) ++r;
  return r;
}

Matrix make_psd(int n, int rank, Rng& rng) {
  if (rank < 1 || rank > n) throw std::invalid_argument("make_psd: rank out of range");
  Matrix G = rng.gaussian_matrix(n, rank);
  return G * G.transpose();
}

static void validate_ranks(int n, const std::vector<int>& ranks) {
  if (ranks.empty()) throw std::invalid_argument("ranks list is empty");
  for (int r : ranks)
    if (r < 1 || r > n) throw std::invalid_argument("rank out of range");
}

ProblemInstance gen_generic(int n, const std::vector<int>& ranks, double y_max, Rng& rng) {
  validate_ranks(n, ranks);
  if (y_max <= 0) throw std::invalid_argument("y_max must be positive");
  int m = 0;
  for (int r : ranks) m += r;
  if (m > n) std::cerr << "gen_generic: sum of ranks " << m << " exceeds n=" << n << "\n";
  ProblemInstance inst;
  inst.n = n;
  inst.q = static_cast<int>(ranks.size());
  inst.ranks = ranks;
  inst.y.resize(inst.q);
  for (int i = 0; i < inst.q; ++i) inst.A.push_back(make_psd(n, ranks[i], rng));
  for (int i = 0; i < inst.q; ++i) inst.y(i) = rng.uniform_positive(y_max);
  return inst;
}

ProblemInstance gen_with_spectrum(int n, const std::vector<int>& ranks,
                                  const std::vector<double>& spectrum, const Vector& y,
                                  Rng& rng, double min_block_norm) {
  validate_ranks(n, ranks);
  int m = 0;
  for (int r : ranks) m += r;
  if (m > n) throw std::invalid_argument("gen_with_spectrum: sum of ranks exceeds n");
  if (static_cast<int>(spectrum.size()) != m)
    throw std::invalid_argument("gen_with_spectrum: spectrum size must equal sum of ranks");
  for (double s : spectrum)
    if (s <= 0) throw std::invalid_argument("gen_with_spectrum: spectrum must be positive");
  if (y.size() != static_cast<Eigen::Index>(ranks.size()))
    throw std::invalid_argument("gen_with_spectrum: y size mismatch");
  for (int i = 0; i < y.size(); ++i)
    if (y(i) <= 0) throw std::invalid_argument("y must be positive");

  Vector eigs = Eigen::Map<const Vector>(spectrum.data(), m);
  int top_index = 0;
  eigs.maxCoeff(&top_index);
  const auto offsets = block_offsets(ranks);

  for (int attempt = 0; attempt < 100; ++attempt) {
    Matrix R = rng.orthogonal(m);
    if (min_block_norm > 0) {
      // leading eigenvector of Q0 is the rotated top axis
      Vector v = R.col(top_index);
      bool ok = true;
      for (std::size_t i = 0; i < ranks.size(); ++i)
        if (v.segment(offsets[i], ranks[i]).norm() <= min_block_norm) ok = false;
      if (!ok) continue;
    }
    // Q0 = R diag(eigs) R^T; C its symmetric square root, so C^T C = Q0.
    Matrix C = R * eigs.cwiseSqrt().asDiagonal() * R.transpose();
    Matrix Theta = rng.orthogonal(n);
    Matrix tall = Matrix::Zero(n, m);
    tall.topRows(m) = C;
    Matrix B = Theta * tall;

    ProblemInstance inst;
    inst.n = n;
    inst.q = static_cast<int>(ranks.size());
    inst.ranks = ranks;
    inst.y = y;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
      Matrix Bi = B.middleCols(offsets[i], ranks[i]);
      inst.A.push_back(Bi * Bi.transpose());
    }
    return inst;
  }
  throw std::runtime_error("gen_with_spectrum: failed to achieve nonzero block norms after 100 resamples");
}

std::pair<ProblemInstance, TameCertificate> gen_tame(int n, const std::vector<int>& ranks,
                                                     double spectrum_top, double spectrum_rest,
                                                     const Vector& y, Rng& rng) {
  if (!(spectrum_top > spectrum_rest) || spectrum_rest <= 0)
    throw std::invalid_argument("gen_tame: need spectrum_top > spectrum_rest > 0");
  int m = 0;
  for (int r : ranks) m += r;
  std::vector<double> spectrum(m, spectrum_rest);
  spectrum[0] = spectrum_top;
  ProblemInstance inst = gen_with_spectrum(n, ranks, spectrum, y, rng, 1e-6);
  NormalForm nf = build_normal_form(inst);
  TameCertificate cert = make_certificate(nf, 1e-6, 1e-6);
  return {std::move(inst), std::move(cert)};
}

ProblemInstance gen_commuting_projections(int n, const std::vector<int>& ranks,
                                          const std::vector<double>& gammas, Rng& rng) {
  validate_ranks(n, ranks);
  if (gammas.size() != ranks.size())
    throw std::invalid_argument("gen_commuting_projections: gammas size mismatch");
  int m = 0;
  for (int r : ranks) m += r;
  if (m > n) throw std::invalid_argument("gen_commuting_projections: sum of ranks exceeds n");
  for (double g : gammas)
    if (g <= 0) throw std::invalid_argument("gammas must be positive");

  Matrix V = rng.orthogonal(n);
  const auto offsets = block_offsets(ranks);
  ProblemInstance inst;
  inst.n = n;
  inst.q = static_cast<int>(ranks.size());
  inst.ranks = ranks;
  inst.y.resize(inst.q);
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    Matrix Vi = V.middleCols(offsets[i], ranks[i]);
    inst.A.push_back(gammas[i] * (Vi * Vi.transpose()));
    inst.y(static_cast<int>(i)) = rng.uniform_positive(5.0);
  }
  return inst;
}

FactorSet factor_set(const ProblemInstance& inst) {
  FactorSet fs;
  int m = inst.total_rank();
  fs.B.resize(inst.n, m);
  int col = 0;
  for (int i = 0; i < inst.q; ++i) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(inst.A[i]);
    // eigenvalues ascending; keep the top r_i
    int r = inst.ranks[i];
    Matrix Bi(inst.n, r);
    for (int j = 0; j < r; ++j) {
      int idx = inst.n - 1 - j;
      double lam = std::max(es.eigenvalues()(idx), 0.0);
      Bi.col(j) = es.eigenvectors().col(idx) * std::sqrt(lam);
    }
    fs.B.middleCols(col, r) = Bi;
    col += r;
    fs.blocks.push_back(std::move(Bi));
  }
  return fs;
}

RankSpreadReport check_rank_spread(const ProblemInstance& inst) {
  RankSpreadReport rep;
  rep.m = inst.total_rank();
  FactorSet fs = factor_set(inst);
  rep.span_dim = numerical_rank(fs.B);
  rep.ok = rep.m <= inst.n && rep.span_dim == rep.m;
  return rep;
}

TameCheck check_tame(const ProblemInstance& inst, double tol) {
  TameCheck out;
  RankSpreadReport rs = check_rank_spread(inst);
  if (!rs.ok) {
    out.reason = "rank spread violated (m=" + std::to_string(rs.m) +
                 ", span=" + std::to_string(rs.span_dim) + ")";
    return out;
  }
  int m = rs.m;
  Matrix S = Matrix::Zero(inst.n, inst.n);
  for (const auto& Ai : inst.A) S += Ai;
  Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
  Vector eig = es.eigenvalues().reverse();  // descending
  double top = eig(0);
  if (top <= 0) {
    out.reason = "sum of A_i has no positive eigenvalue";
    return out;
  }
  if (m < inst.n && eig(m) > tol * top) {
    out.reason = "trailing eigenvalues not zero";
    return out;
  }
  if (m < 2) {
    out.reason = "m < 2: no bulk eigenvalues to compare";
    return out;
  }
  if (eig(0) - eig(1) <= tol * top) {
    out.reason = "leading eigenvalue not simple";
    return out;
  }
  if (eig(1) - eig(m - 1) > tol * top) {
    out.reason = "trailing eigenvalues not equal";
    return out;
  }
  if (eig(m - 1) <= tol * top) {
    out.reason = "bulk eigenvalues not positive";
    return out;
  }
  NormalForm nf = build_normal_form(inst);
  try {
    out.certificate = make_certificate(nf, tol, 1e-8);
  } catch (const SpectrumShapeError& e) {
    out.reason = e.what();
  }
  return out;
}

bool certificate_valid(const ProblemInstance& inst, const TameCertificate& cert,
                       double rel_tol) {
  NormalForm nf = build_normal_form(inst);
  Matrix recon = cert.alpha * (cert.v * cert.v.transpose()) +
                 cert.beta * Matrix::Identity(nf.m, nf.m);
  if ((recon - nf.Q).norm() > rel_tol * nf.Q.norm()) return false;
  for (int i = 0; i < cert.block_norms.size(); ++i)
    if (cert.block_norms(i) <= 1e-10) return false;
  Matrix Qinv = -cert.alpha_inv * (cert.v * cert.v.transpose()) +
                cert.beta_inv * Matrix::Identity(nf.m, nf.m);
  return (nf.Q * Qinv - Matrix::Identity(nf.m, nf.m)).norm() <= 1e-8 * std::sqrt(double(nf.m));
}

// ---- serialization ----

static void append_double(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

std::string instance_to_json(const ProblemInstance& inst) {
  std::string out = "{\n  \"n\": " + std::to_string(inst.n) +
                    ",\n  \"q\": " + std::to_string(inst.q) + ",\n  \"ranks\": [";
  for (int i = 0; i < inst.q; ++i) {
    if (i) out += ", ";
    out += std::to_string(inst.ranks[i]);
  }
  out += "],\n  \"y\": [";
  for (int i = 0; i < inst.q; ++i) {
    if (i) out += ", ";
    append_double(out, inst.y(i));
  }
  out += "],\n  \"A\": [\n";
  for (int k = 0; k < inst.q; ++k) {
    out += "    [";
    const Matrix& M = inst.A[k];
    for (int i = 0; i < inst.n; ++i)
      for (int j = 0; j < inst.n; ++j) {
        if (i || j) out += ", ";
        append_double(out, M(i, j));
      }
    out += (k + 1 < inst.q) ? "],\n" : "]\n";
  }
  out += "  ],\n  \"seed\": " + std::to_string(inst.seed) + "\n}\n";
  return out;
}

void save_instance(const ProblemInstance& inst, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << instance_to_json(inst);
}

ProblemInstance instance_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ProblemInstance inst;
  inst.n = j.at("n").get<int>();
  inst.q = j.at("q").get<int>();
  inst.ranks = j.at("ranks").get<std::vector<int>>();
  auto yv = j.at("y").get<std::vector<double>>();
  inst.y = Eigen::Map<const Vector>(yv.data(), static_cast<Eigen::Index>(yv.size()));
  inst.seed = j.value("seed", std::uint64_t{0});
  for (const auto& arr : j.at("A")) {
    auto flat = arr.get<std::vector<double>>();
    if (static_cast<int>(flat.size()) != inst.n * inst.n)
      throw std::runtime_error("instance file: bad A dimensions");
    Matrix M(inst.n, inst.n);
    for (int r = 0; r < inst.n; ++r)
      for (int c = 0; c < inst.n; ++c) M(r, c) = flat[r * inst.n + c];
    inst.A.push_back(std::move(M));
  }
  if (static_cast<int>(inst.A.size()) != inst.q || static_cast<int>(inst.ranks.size()) != inst.q)
    throw std::runtime_error("instance file: inconsistent q");
  return inst;
}

ProblemInstance load_instance(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return instance_from_json(ss.str());
}

}  // namespace factorflow
