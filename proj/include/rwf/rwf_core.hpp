#pragma once

#include <Eigen/SVD>
#include <Eigen/Sparse>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <unsupported/Eigen/SparseExtra>
#include <vector>

#include "rwf/forward_solver.hpp"
#include "rwf/honeycomb.hpp"

namespace rwf {

using RowSparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// View of a honeycomb's sub-triangulation that keeps the pair alive.
inline std::shared_ptr<const TriMesh> sub_mesh(const std::shared_ptr<const HoneycombPair>& pair) {
  return {pair, &pair->sub_tri};
}

/// Point evaluation of a P1 field at the vertices of another mesh.
inline VectorField interpolate_to_mesh(const VectorField& u, std::shared_ptr<const TriMesh> target) {
  const PointLocator locator(*u.mesh);
  VectorField out{target, Vector(2 * target->num_vertices())};
  for (int v = 0; v < target->num_vertices(); ++v) {
    const auto hit = locator.locate(target->vertices[v]);
    if (!hit) throw Error("interpolate", "inversion vertex outside the forward mesh");
    const auto& tr = u.mesh->triangles[hit->triangle];
    Eigen::Vector2d val = Eigen::Vector2d::Zero();
    for (int a = 0; a < 3; ++a) val += hit->bary[a] * u.at(tr[a]);
    out.values.segment<2>(2 * v) = val;
  }
  return out;
}

inline VectorField interpolate_to_inversion(const VectorField& u, const std::shared_ptr<const HoneycombPair>& pair) {
  return interpolate_to_mesh(u, sub_mesh(pair));
}

/// Adds i.i.d. Gaussian noise with standard deviation level * RMS(u).
inline VectorField add_noise(const VectorField& u, double level, std::uint64_t seed) {
  if (level < 0.0) throw Error("noise", "noise level must be non-negative");
  VectorField out = u;
  if (level == 0.0 || u.values.size() == 0) return out;
  const double rms = std::sqrt(u.values.squaredNorm() / static_cast<double>(u.values.size()));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, level * rms);
  for (Eigen::Index i = 0; i < out.values.size(); ++i) out.values[i] += normal(rng);
  return out;
}

/// Measured fields on the inversion mesh, with optional P1 load densities
/// (empty `loads` means f = 0 for every field).
struct DataSet {
  std::vector<VectorField> fields;
  std::vector<Vector> loads;

  int count() const { return static_cast<int>(fields.size()); }
  bool homogeneous() const {
    for (const auto& f : loads)
      if (f.size() > 0 && f.cwiseAbs().maxCoeff() > 0.0) return false;
    return true;
  }
};

/// Per-triangle third-order tensor T(i, j, k) = [C_k : eps(u_l)]_{ij},
/// stacked over data fields l (row i = 2 l + a).
class TuTensor {
 public:
  TuTensor() = default;
  TuTensor(int triangles, int fields, int params)
      : ntri_(triangles), m_(fields), n_(params), data_(static_cast<std::size_t>(triangles) * 2 * fields * 2 * params) {}

  int num_triangles() const { return ntri_; }
  int fields() const { return m_; }
  int params() const { return n_; }
  int rows() const { return 2 * m_; }

  double& operator()(int t, int i, int j, int k) { return data_[index(t, i, j, k)]; }
  double operator()(int t, int i, int j, int k) const { return data_[index(t, i, j, k)]; }

  /// Stress block C_k : eps(u_l) on triangle t.
  Matrix2 block(int t, int field, int k) const {
    Matrix2 b;
    for (int a = 0; a < 2; ++a)
      for (int c = 0; c < 2; ++c) b(a, c) = (*this)(t, 2 * field + a, c, k);
    return b;
  }

  /// Unfolding M(i, j + 2 k) = T(i, j, k): the linear map grad(mu) -> T : grad(mu).
  Eigen::MatrixXd unfolded(int t) const {
    Eigen::MatrixXd m(rows(), 2 * n_);
    for (int i = 0; i < rows(); ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < n_; ++k) m(i, j + 2 * k) = (*this)(t, i, j, k);
    return m;
  }

 private:
  std::size_t index(int t, int i, int j, int k) const {
    return ((static_cast<std::size_t>(t) * (2 * m_) + i) * 2 + j) * n_ + k;
  }

  int ntri_ = 0, m_ = 0, n_ = 0;
  std::vector<double> data_;
};

inline TuTensor assemble_T(const DataSet& data, const ElasticBasis& basis) {
  if (data.count() < 1) throw Error("assemble", "data set is empty");
  const auto mesh = data.fields.front().mesh;
  for (const auto& f : data.fields)
    if (f.mesh != mesh) throw Error("assemble", "data fields must share the inversion mesh");
  const int n = basis.size();
  TuTensor T(mesh->num_triangles(), data.count(), n);
  for (int l = 0; l < data.count(); ++l) {
    const auto eps = compute_strain(data.fields[l]);
    for (int t = 0; t < mesh->num_triangles(); ++t) {
      for (int k = 0; k < n; ++k) {
        const Matrix2 s = contract(basis.tensors[k], eps[t]);
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) T(t, 2 * l + a, b, k) = s(a, b);
      }
    }
  }
  return T;
}

/// sigma_max / sigma_min of the unfolded block per triangle; +inf when the
/// block cannot be left-inverted (fewer rows than 2n, or sigma_min = 0).
inline std::vector<double> condition_map(const TuTensor& T) {
  std::vector<double> out(T.num_triangles());
  for (int t = 0; t < T.num_triangles(); ++t) {
    const Eigen::MatrixXd m = T.unfolded(t);
    if (m.rows() < m.cols()) {
      out[t] = std::numeric_limits<double>::infinity();
      continue;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto& s = svd.singularValues();
    const double smin = s[s.size() - 1];
    out[t] = (smin > 0.0 && smin > 1e-15 * s[0]) ? s[0] / smin : std::numeric_limits<double>::infinity();
  }
  return out;
}

/// Discrete reverse weak formulation A m = g with its Gram matrices.
///
/// Rows index test functions (field l, component c, interior vertex i) as
/// (2 l + c) * n_interior + i. Columns index (parameter k, cell j) as
/// k * n_cells + j.
struct RwfSystem {
  Eigen::SparseMatrix<double, Eigen::ColMajor> A;
  Vector g;
  RowSparseMatrix S_V;
  RowSparseMatrix S_M;
  RowSparseMatrix S_scalar;  // one diagonal block of S_V
  std::vector<int> interior_vertices;
  std::vector<double> cell_areas;
  int fields = 0;
  int params = 0;
  int cells = 0;

  int rows() const { return static_cast<int>(A.rows()); }
  int cols() const { return static_cast<int>(A.cols()); }
  int n_interior() const { return static_cast<int>(interior_vertices.size()); }
  bool homogeneous() const { return g.size() == 0 || g.cwiseAbs().maxCoeff() == 0.0; }
  Vector s_m_diagonal() const { return S_M.diagonal(); }
};

/// Scalar P1 Gram matrices over the given vertex subset (stiffness + mass).
inline RowSparseMatrix scalar_h1_gram(const TriMesh& mesh, const std::vector<int>& vertex_index, int count) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(mesh.num_triangles()) * 9);
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const double area = mesh.signed_area(t);
    const auto g = mesh.hat_gradients(t);
    for (int a = 0; a < 3; ++a) {
      const int ia = vertex_index[mesh.triangles[t][a]];
      if (ia < 0) continue;
      for (int b = 0; b < 3; ++b) {
        const int ib = vertex_index[mesh.triangles[t][b]];
        if (ib < 0) continue;
        trip.emplace_back(ia, ib, area * g[a].dot(g[b]) + area / 12.0 * (a == b ? 2.0 : 1.0));
      }
    }
  }
  RowSparseMatrix s(count, count);
  s.setFromTriplets(trip.begin(), trip.end());
  return s;
}

inline RwfSystem assemble_system(const TuTensor& T, const DataSet& data, const HoneycombPair& pair) {
  const TriMesh& mesh = pair.sub_tri;
  if (T.num_triangles() != mesh.num_triangles()) throw Error("assemble", "tensor and honeycomb pair differ");
  if (T.fields() != data.count()) throw Error("assemble", "tensor and data set differ");
  const int m = T.fields(), n = T.params(), nc = pair.num_cells();

  RwfSystem sys;
  sys.fields = m;
  sys.params = n;
  sys.cells = nc;
  sys.cell_areas = pair.cell_areas();

  const auto boundary = mesh.boundary_vertex_mask();
  std::vector<int> vindex(mesh.vertices.size(), -1);
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    if (boundary[v]) continue;
    vindex[v] = static_cast<int>(sys.interior_vertices.size());
    sys.interior_vertices.push_back(v);
  }
  const int ni = sys.n_interior();
  if (ni == 0) throw Error("assemble", "empty test space: no interior vertices");
  const int p = 2 * m * ni, q = n * nc;

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(mesh.num_triangles()) * 6 * m * n);
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const double area = mesh.signed_area(t);
    const auto grad = mesh.hat_gradients(t);
    const int cell = pair.cell_of_triangle[t];
    for (int a = 0; a < 3; ++a) {
      const int iv = vindex[mesh.triangles[t][a]];
      if (iv < 0) continue;
      for (int l = 0; l < m; ++l) {
        for (int k = 0; k < n; ++k) {
          const Eigen::Vector2d s = T.block(t, l, k) * grad[a];
          for (int c = 0; c < 2; ++c) trip.emplace_back((2 * l + c) * ni + iv, k * nc + cell, area * s[c]);
        }
      }
    }
  }
  sys.A.resize(p, q);
  sys.A.setFromTriplets(trip.begin(), trip.end());
  sys.A.makeCompressed();

  sys.S_scalar = scalar_h1_gram(mesh, vindex, ni);
  {
    std::vector<Eigen::Triplet<double>> st;
    st.reserve(static_cast<std::size_t>(sys.S_scalar.nonZeros()) * 2 * m);
    for (int b = 0; b < 2 * m; ++b)
      for (int r = 0; r < ni; ++r)
        for (RowSparseMatrix::InnerIterator it(sys.S_scalar, r); it; ++it)
          st.emplace_back(b * ni + r, b * ni + static_cast<int>(it.col()), it.value());
    sys.S_V.resize(p, p);
    sys.S_V.setFromTriplets(st.begin(), st.end());
  }
  {
    std::vector<Eigen::Triplet<double>> mt;
    for (int k = 0; k < n; ++k)
      for (int j = 0; j < nc; ++j) mt.emplace_back(k * nc + j, k * nc + j, sys.cell_areas[j]);
    sys.S_M.resize(q, q);
    sys.S_M.setFromTriplets(mt.begin(), mt.end());
  }

  sys.g = Vector::Zero(p);
  if (!data.loads.empty()) {
    if (static_cast<int>(data.loads.size()) != m) throw Error("assemble", "one load per data field required");
    for (int l = 0; l < m; ++l) {
      const Vector& f = data.loads[l];
      if (f.size() == 0) continue;
      if (f.size() != 2 * mesh.num_vertices()) throw Error("assemble", "load must be a nodal field on the inversion mesh");
      for (int t = 0; t < mesh.num_triangles(); ++t) {
        const double area = mesh.signed_area(t);
        for (int a = 0; a < 3; ++a) {
          const int iv = vindex[mesh.triangles[t][a]];
          if (iv < 0) continue;
          for (int b = 0; b < 3; ++b) {
            const double w = area / 12.0 * (a == b ? 2.0 : 1.0);
            const int vb = mesh.triangles[t][b];
            for (int c = 0; c < 2; ++c) sys.g[(2 * l + c) * ni + iv] += w * f[2 * vb + c];
          }
        }
      }
    }
  }
  return sys;
}

/// Time-harmonic loads f = omega^2 u for each field.
inline std::vector<Vector> harmonic_loads(const std::vector<VectorField>& fields, const std::vector<double>& omegas) {
  if (fields.size() != omegas.size()) throw Error("assemble", "one frequency per field required");
  std::vector<Vector> loads;
  for (std::size_t l = 0; l < fields.size(); ++l) loads.push_back(omegas[l] * omegas[l] * fields[l].values);
  return loads;
}

/// Exact coefficient vector of a phantom sampled at cell centroids, in the
/// column ordering of RwfSystem.
inline Vector project_to_cells(const ExactParamField& exact, const HoneycombPair& pair) {
  const int n = exact.size(), nc = pair.num_cells();
  Vector out(n * nc);
  for (int j = 0; j < nc; ++j) {
    const Vector v = exact.at(pair.cells[j].centroid);
    for (int k = 0; k < n; ++k) out[k * nc + j] = v[k];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export

inline void export_matrix_market(const RwfSystem& sys, const std::string& dir) {
  if (!Eigen::saveMarket(sys.A, dir + "/A.mtx") || !Eigen::saveMarket(sys.S_V, dir + "/S_V.mtx") ||
      !Eigen::saveMarket(sys.S_M, dir + "/S_M.mtx") || !Eigen::saveMarketVector(sys.g, dir + "/g.mtx"))
    throw Error("io", "cannot write matrix market files to " + dir);
}

inline void write_condition_csv(const std::vector<double>& cond, const TriMesh& mesh, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("io", "cannot open " + path);
  os << std::setprecision(17) << "triangle,cx,cy,condition\n";
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const Point c = mesh.barycenter(t);
    os << t << ',' << c.x() << ',' << c.y() << ',' << cond[t] << '\n';
  }
}

}  // namespace rwf
