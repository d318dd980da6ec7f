#pragma once

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <vector>

#include "rwf/rwf_core.hpp"

namespace rwf {

/// P0 coefficients per hex cell, column ordering of RwfSystem.
struct ReconstructedField {
  Vector coeffs;
  int params = 0;
  int cells = 0;
  bool normalized = false;  // homogeneous solve: defined up to a global scale
  double scale = 1.0;
  int sign = 1;

  Vector map(int k) const { return coeffs.segment(static_cast<Eigen::Index>(k) * cells, cells); }
};

struct SpectralDiagnostics {
  std::vector<double> eigenvalues;  // ascending
  std::vector<double> residuals;    // relative pencil residual per pair
  int iterations = 0;
  double shift = 0.0;

  double gap() const;
};

inline double spectral_gap(const SpectralDiagnostics& d) {
  if (d.eigenvalues.size() < 2) throw Error("solve", "spectral gap needs two eigenvalues");
  return std::max(0.0, d.eigenvalues[1] - d.eigenvalues[0]);
}
inline double SpectralDiagnostics::gap() const { return spectral_gap(*this); }

/// Applies H = A^T S_V^{-1} A exactly (Cholesky of one S_V block) and
/// solves (H + delta S_M) x = b through the quasi-definite augmented matrix
///   [ S_V    A          ]
///   [ A^T   -delta S_M  ].
class NormalOperator {
 public:
  explicit NormalOperator(const RwfSystem& sys, double relative_shift = 1e-10) : sys_(&sys) {
    block_.compute(sys.S_scalar);
    if (block_.info() != Eigen::Success) throw Error("solve", "test-space Gram matrix is not positive definite");
    sm_ = sys.s_m_diagonal();
    lambda_max_ = estimate_lambda_max();
    delta_ = relative_shift * lambda_max_;
    factor();
  }

  int size() const { return sys_->cols(); }
  double delta() const { return delta_; }
  double lambda_max() const { return lambda_max_; }
  const Vector& s_m() const { return sm_; }

  Vector solve_s_v(const Vector& r) const {
    const int ni = sys_->n_interior();
    Vector z(r.size());
    for (int b = 0; b < 2 * sys_->fields; ++b) z.segment(b * ni, ni) = block_.solve(r.segment(b * ni, ni));
    return z;
  }

  Vector apply_h(const Vector& x) const { return sys_->A.transpose() * solve_s_v(sys_->A * x); }

  /// (H + delta S_M)^{-1} b with a few steps of refinement against the exact operator.
  Vector solve_shifted(const Vector& b, int refinements = 2) const {
    Vector x = augmented_solve(b);
    for (int it = 0; it < refinements; ++it) {
      const Vector r = b - apply_h(x) - delta_ * sm_.cwiseProduct(x);
      if (r.norm() <= 1e-15 * b.norm()) break;
      x += augmented_solve(r);
    }
    return x;
  }

 private:
  Vector augmented_solve(const Vector& b) const {
    const int p = sys_->rows(), q = sys_->cols();
    Vector rhs = Vector::Zero(p + q);
    rhs.tail(q) = -b;
    const Vector sol = ldlt_.solve(rhs);
    return sol.tail(q);
  }

  double estimate_lambda_max() const {
    Vector x = Vector::Ones(size());
    double lam = 0.0;
    for (int it = 0; it < 30; ++it) {
      x /= std::sqrt(x.dot(sm_.cwiseProduct(x)));
      const Vector hx = apply_h(x);
      lam = x.dot(hx);
      x = hx.cwiseQuotient(sm_);
    }
    if (!(lam > 0.0)) throw Error("solve", "normal operator vanishes: no information in the data");
    return lam;
  }

  void factor() {
    const RwfSystem& s = *sys_;
    const int p = s.rows(), q = s.cols();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(s.S_V.nonZeros() + 2 * s.A.nonZeros() + q));
    for (int r = 0; r < p; ++r)
      for (RowSparseMatrix::InnerIterator it(s.S_V, r); it; ++it) trip.emplace_back(r, static_cast<int>(it.col()), it.value());
    for (int c = 0; c < q; ++c) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(s.A, c); it; ++it) {
        trip.emplace_back(static_cast<int>(it.row()), p + c, it.value());
        trip.emplace_back(p + c, static_cast<int>(it.row()), it.value());
      }
      trip.emplace_back(p + c, p + c, -delta_ * sm_[c]);
    }
    SparseMatrix k(p + q, p + q);
    k.setFromTriplets(trip.begin(), trip.end());
    ldlt_.compute(k);
    if (ldlt_.info() != Eigen::Success || !ldlt_.vectorD().allFinite())
      throw Error("solve", "augmented factorization failed");
  }

  const RwfSystem* sys_;
  Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> block_;
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
  Vector sm_;
  double lambda_max_ = 0.0;
  double delta_ = 0.0;
};

struct EigenOptions {
  int count = 10;
  double tol = 1e-8;
  int max_iterations = 5000;
};

struct EigenPairs {
  SpectralDiagnostics diag;
  std::vector<Vector> vectors;  // S_M-orthonormal
  bool converged = false;
};

/// Relative residual of (A S_M^{-1} A^T) z = alpha S_V z with S_V z = A m.
/// Eigenvalues at or below this fraction of lambda_max are numerically zero.
inline constexpr double null_threshold = 1e-14;

/// ||A S_M^{-1} A^T z - alpha S_V z|| / ||S_V z|| with z = S_V^{-1} A m. For a
/// numerically null pair A m is pure roundoff and that ratio is meaningless, so
/// the backward error ||H m - alpha S_M m|| / (lambda_max ||S_M m||) is used.
inline double pencil_residual(const NormalOperator& op, const RwfSystem& sys, const Vector& m, double alpha) {
  if (alpha <= null_threshold * op.lambda_max()) {
    const Vector mm = op.s_m().cwiseProduct(m);
    return (op.apply_h(m) - alpha * mm).norm() / (op.lambda_max() * mm.norm());
  }
  const Vector am = sys.A * m;
  const Vector z = op.solve_s_v(am);
  const Vector lhs = sys.A * (sys.A.transpose() * z).cwiseQuotient(op.s_m());
  const double den = am.norm();
  return den > 0.0 ? (lhs - alpha * am).norm() / den : (lhs - alpha * am).norm();
}

/// Smallest eigenpairs of H m = alpha S_M m by shift-invert Lanczos in the
/// S_M inner product with full reorthogonalization. Deterministic start.
inline EigenPairs smallest_eigenpairs(const NormalOperator& op, const RwfSystem& sys, const EigenOptions& opt = {}) {
  const int q = op.size();
  const int nev = std::min(opt.count, q);
  const Vector& w = op.s_m();
  auto dot = [&](const Vector& a, const Vector& b) { return a.dot(w.cwiseProduct(b)); };

  std::vector<Vector> basis;
  std::vector<double> alpha, beta;
  Vector v = Vector::Ones(q);
  v /= std::sqrt(dot(v, v));
  basis.push_back(v);

  EigenPairs out;
  const int max_dim = std::min(q, std::max(opt.max_iterations, nev + 1));
  auto ritz = [&](bool final_pass) -> bool {
    const int k = static_cast<int>(alpha.size());
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(k, k);
    for (int i = 0; i < k; ++i) {
      t(i, i) = alpha[i];
      if (i + 1 < k) t(i, i + 1) = t(i + 1, i) = beta[i];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
    const int take = std::min(nev, k);
    // Largest theta = smallest alpha.
    bool estimates_ok = true;
    const double bk = beta.size() >= static_cast<std::size_t>(k) ? beta[k - 1] : 0.0;
    for (int i = 0; i < take; ++i) {
      const int col = k - 1 - i;
      const double theta = es.eigenvalues()[col];
      if (std::abs(bk * es.eigenvectors()(k - 1, col)) > 1e-3 * opt.tol * std::abs(theta)) estimates_ok = false;
    }
    // The estimate can stall at roundoff level; check true residuals now and then.
    if (!estimates_ok && !final_pass && k % 25 != 0) return false;

    std::vector<Vector> vecs;
    std::vector<double> vals, res;
    for (int i = 0; i < take; ++i) {
      const int col = k - 1 - i;
      Vector x = Vector::Zero(q);
      for (int j = 0; j < k; ++j) x += es.eigenvectors()(j, col) * basis[j];
      x /= std::sqrt(dot(x, x));
      const double a = x.dot(op.apply_h(x));
      vecs.push_back(x);
      vals.push_back(a);
      res.push_back(pencil_residual(op, sys, x, a));
    }
    std::vector<int> order(take);
    for (int i = 0; i < take; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return vals[a] < vals[b]; });
    out.vectors.clear();
    out.diag.eigenvalues.clear();
    out.diag.residuals.clear();
    for (int i : order) {
      out.vectors.push_back(vecs[i]);
      out.diag.eigenvalues.push_back(vals[i]);
      out.diag.residuals.push_back(res[i]);
    }
    out.diag.iterations = k;
    out.converged = take == nev && std::all_of(res.begin(), res.end(), [&](double r) { return r <= opt.tol; });
    return out.converged;
  };

  for (int j = 0; j < max_dim; ++j) {
    Vector u = op.solve_shifted(w.cwiseProduct(basis[j]));
    const double a = dot(u, basis[j]);
    alpha.push_back(a);
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& b : basis) u -= dot(b, u) * b;
    const double bnorm = std::sqrt(std::max(0.0, dot(u, u)));
    beta.push_back(bnorm);
    const int k = j + 1;
    const bool exhausted = k == max_dim || bnorm <= 1e-14 * std::abs(a);
    if ((k >= nev && (k % 5 == 0 || exhausted)) && ritz(exhausted)) break;
    if (exhausted) break;
    basis.push_back(u / bnorm);
  }
  out.diag.shift = -op.delta();
  return out;
}

inline double dot_mass(const Vector& a, const Vector& b, const std::vector<double>& areas, int params) {
  const int nc = static_cast<int>(areas.size());
  double s = 0.0;
  for (int k = 0; k < params; ++k)
    for (int j = 0; j < nc; ++j) s += areas[j] * a[k * nc + j] * b[k * nc + j];
  return s;
}

/// Smallest-to-largest eigenvalue ratio below which H counts as singular.
inline constexpr double singular_threshold = 1e-12;

/// Weighted least squares H m = A^T S_V^{-1} g, by conjugate gradients on
/// the exact normal operator preconditioned with the shifted augmented solve.
inline ReconstructedField solve_inhomogeneous(const RwfSystem& sys, const NormalOperator& op, double tol = 1e-10,
                                              int max_iterations = 500) {
  if (sys.homogeneous()) throw Error("solve", "zero load: use the homogeneous solver");
  const Vector b = sys.A.transpose() * op.solve_s_v(sys.g);
  const double bnorm = b.norm();
  Vector x = op.solve_shifted(b);
  Vector r = b - op.apply_h(x);
  Vector z = op.solve_shifted(r);
  Vector p = z;
  double rz = r.dot(z);
  int it = 0;
  for (; it < max_iterations && r.norm() > tol * bnorm; ++it) {
    const Vector hp = op.apply_h(p);
    const double php = p.dot(hp);
    if (!(php > 0.0)) break;
    const double step = rz / php;
    x += step * p;
    r -= step * hp;
    if (it % 20 == 19) r = b - op.apply_h(x);
    z = op.solve_shifted(r);
    const double rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }
  const double kkt = (b - op.apply_h(x)).norm() / bnorm;
  EigenOptions eo;
  eo.count = 1;
  eo.max_iterations = 300;
  const auto low = smallest_eigenpairs(op, sys, eo);
  const double ritz = low.diag.eigenvalues.empty() ? 0.0 : low.diag.eigenvalues.front();
  if (!(kkt <= 1e-8) || !x.allFinite() || !(ritz > singular_threshold * op.lambda_max())) {
    std::ostringstream msg;
    msg << "rank deficient normal system: KKT residual " << kkt << ", smallest Ritz value " << ritz
        << " (largest " << op.lambda_max() << ")";
    throw Error("solve", msg.str());
  }
  ReconstructedField f;
  f.coeffs = x;
  f.params = sys.params;
  f.cells = sys.cells;
  return f;
}

inline ReconstructedField solve_inhomogeneous(const RwfSystem& sys) {
  const NormalOperator op(sys);
  return solve_inhomogeneous(sys, op);
}

/// First eigenvector of H in the S_M geometry, ||m||_{S_M} = 1, sign fixed
/// by a positive S_M-weighted mean.
inline std::pair<ReconstructedField, SpectralDiagnostics> solve_homogeneous(const RwfSystem& sys,
                                                                            const NormalOperator& op,
                                                                            const EigenOptions& opt = {}) {
  const auto pairs = smallest_eigenpairs(op, sys, opt);
  if (pairs.vectors.empty()) throw Error("solve", "eigen iteration produced no Ritz pairs");
  if (!pairs.converged) {
    std::ostringstream msg;
    msg << "eigen iteration did not converge after " << pairs.diag.iterations << " steps; residuals";
    for (double r : pairs.diag.residuals) msg << ' ' << r;
    throw Error("solve", msg.str());
  }
  ReconstructedField f;
  f.coeffs = pairs.vectors.front();
  f.params = sys.params;
  f.cells = sys.cells;
  f.normalized = true;
  if (f.coeffs.dot(op.s_m()) < 0.0) {
    f.coeffs = -f.coeffs;
    f.sign = -1;
  }
  return {f, pairs.diag};
}

inline std::pair<ReconstructedField, SpectralDiagnostics> solve_homogeneous(const RwfSystem& sys) {
  const NormalOperator op(sys);
  return solve_homogeneous(sys, op);
}

/// Dense reference: eigen-decomposition of S_M^{-1/2} H S_M^{-1/2} with H formed
/// explicitly. Intended for small systems only.
struct DenseEigen {
  Vector eigenvalues;
  Eigen::MatrixXd vectors;  // columns are S_M-orthonormal m vectors
};

inline DenseEigen dense_reference_eigen(const RwfSystem& sys, int max_q = 500) {
  const int q = sys.cols();
  if (q > max_q) throw Error("solve", "dense reference limited to small systems");
  Eigen::SimplicialLLT<SparseMatrix> llt{SparseMatrix(sys.S_V)};
  if (llt.info() != Eigen::Success) throw Error("solve", "S_V not positive definite");
  const Eigen::MatrixXd a = Eigen::MatrixXd(sys.A);
  const Eigen::MatrixXd x = llt.solve(a);
  Eigen::MatrixXd h = a.transpose() * x;
  h = 0.5 * (h + h.transpose()).eval();
  const Vector binv = sys.s_m_diagonal().cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd scaled = binv.asDiagonal() * h * binv.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(scaled);
  return {es.eigenvalues(), binv.asDiagonal() * es.eigenvectors()};
}

struct ErrorReport {
  std::vector<double> per_parameter;  // percent
  double joint = 0.0;                 // percent
  double scale = 1.0;                 // applied to the reconstruction
};

/// 100 ||recon - exact|| / ||exact|| in the cell-area weighted L2 norm over
/// the inversion region. Normalized reconstructions are first rescaled by the
/// sign-corrected global L2 ratio.
inline ErrorReport relative_error(const ReconstructedField& recon, const Vector& exact_coeffs,
                                  const std::vector<double>& areas) {
  const int n = recon.params, nc = recon.cells;
  if (exact_coeffs.size() != recon.coeffs.size() || static_cast<int>(areas.size()) != nc)
    throw Error("error", "reconstruction and exact map sizes differ");
  const double ee = dot_mass(exact_coeffs, exact_coeffs, areas, n);
  if (!(ee > 0.0)) throw Error("error", "exact map has zero norm");
  ErrorReport rep;
  Vector m = recon.coeffs;
  if (recon.normalized) {
    const double mm = dot_mass(m, m, areas, n);
    if (!(mm > 0.0)) throw Error("error", "reconstruction has zero norm");
    const double sgn = dot_mass(m, exact_coeffs, areas, n) >= 0.0 ? 1.0 : -1.0;
    rep.scale = sgn * std::sqrt(ee / mm);
    m *= rep.scale;
  }
  const Vector d = m - exact_coeffs;
  for (int k = 0; k < n; ++k) {
    double num = 0.0, den = 0.0;
    for (int j = 0; j < nc; ++j) {
      num += areas[j] * d[k * nc + j] * d[k * nc + j];
      den += areas[j] * exact_coeffs[k * nc + j] * exact_coeffs[k * nc + j];
    }
    rep.per_parameter.push_back(den > 0.0 ? 100.0 * std::sqrt(num / den) : std::numeric_limits<double>::infinity());
  }
  rep.joint = 100.0 * std::sqrt(dot_mass(d, d, areas, n) / ee);
  return rep;
}

inline ErrorReport relative_error(const ReconstructedField& recon, const ExactParamField& exact,
                                  const HoneycombPair& pair) {
  return relative_error(recon, project_to_cells(exact, pair), pair.cell_areas());
}

}  // namespace rwf
