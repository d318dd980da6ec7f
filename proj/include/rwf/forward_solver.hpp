#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "rwf/elastic_tensors.hpp"
#include "rwf/mesh.hpp"

namespace rwf {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Vector = Eigen::VectorXd;

/// P1 vector field, interleaved nodal values (ux0, uy0, ux1, uy1, ...).
struct VectorField {
  std::shared_ptr<const TriMesh> mesh;
  Vector values;

  Eigen::Vector2d at(int vertex) const { return values.segment<2>(2 * vertex); }
};

/// Clamp on one side (u = 0), constant displacement `g` on another, the rest
/// of the boundary traction free.
struct BoundaryCondition {
  Side clamp = Side::bottom;
  Side drive = Side::top;
  Eigen::Vector2d g{1.0, -0.5};
};

/// Labeled piecewise-constant region of a phantom.
struct Region {
  enum class Shape { disk, rect };
  Shape shape = Shape::disk;
  Point center = Point::Zero();
  double radius = 0.0;
  Rect box;
  Vector values;

  bool contains(const Point& p) const {
    if (shape == Shape::disk) return (p - center).squaredNorm() <= radius * radius;
    return box.contains(p);
  }
};

/// Piecewise-constant ground-truth coefficients: a background vector and
/// inclusions painted in order (later regions win). A NaN inclusion value
/// leaves that parameter untouched.
struct ExactParamField {
  Vector background;
  std::vector<Region> regions;

  int size() const { return static_cast<int>(background.size()); }

  Vector at(const Point& p) const {
    Vector v = background;
    for (const auto& r : regions) {
      if (!r.contains(p)) continue;
      for (int k = 0; k < size(); ++k)
        if (!std::isnan(r.values[k])) v[k] = r.values[k];
    }
    return v;
  }
};

/// Smallest eigenvalue of a Voigt stiffness; positive means elliptic.
inline double ellipticity(const Voigt3& c) {
  return Eigen::SelfAdjointEigenSolver<Voigt3>(c, Eigen::EigenvaluesOnly).eigenvalues()[0];
}

/// Voigt stiffness per triangle, sampling the phantom at barycenters.
inline std::vector<Voigt3> sample_stiffness(const TriMesh& mesh, const ElasticBasis& basis,
                                            const ExactParamField& params) {
  if (params.size() != basis.size()) throw Error("forward", "phantom and basis sizes differ");
  std::vector<Voigt3> c(mesh.num_triangles());
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    c[t] = basis.combine(params.at(mesh.barycenter(t))).voigt();
    if (!(ellipticity(c[t]) > 0.0)) throw Error("forward", "phantom is not elliptic");
  }
  return c;
}

namespace detail {

/// 3x6 strain-displacement matrix of a P1 triangle (engineering shear).
inline Eigen::Matrix<double, 3, 6> strain_matrix(const std::array<Point, 3>& grad) {
  Eigen::Matrix<double, 3, 6> b = Eigen::Matrix<double, 3, 6>::Zero();
  for (int a = 0; a < 3; ++a) {
    b(0, 2 * a) = grad[a].x();
    b(1, 2 * a + 1) = grad[a].y();
    b(2, 2 * a) = grad[a].y();
    b(2, 2 * a + 1) = grad[a].x();
  }
  return b;
}

/// Element matrix K - omega^2 M (consistent P1 mass, unit density).
inline Eigen::Matrix<double, 6, 6> element_matrix(const TriMesh& mesh, int t, const Voigt3& c, double omega) {
  const double area = mesh.signed_area(t);
  const auto b = strain_matrix(mesh.hat_gradients(t));
  Eigen::Matrix<double, 6, 6> k = area * b.transpose() * c * b;
  if (omega != 0.0) {
    const double w2 = omega * omega * area / 12.0;
    for (int a = 0; a < 3; ++a)
      for (int bb = 0; bb < 3; ++bb) {
        const double m = (a == bb ? 2.0 : 1.0) * w2;
        k(2 * a, 2 * bb) -= m;
        k(2 * a + 1, 2 * bb + 1) -= m;
      }
  }
  return k;
}

}  // namespace detail

using ForceFn = std::function<Eigen::Vector2d(const Point&)>;

/// Prescribed nodal displacements: (vertex, value).
using DirichletData = std::vector<std::pair<int, Eigen::Vector2d>>;

inline DirichletData dirichlet_from_bc(const TriMesh& mesh, const BoundaryCondition& bc) {
  if (bc.clamp == bc.drive) throw Error("forward", "clamp and drive segments must differ");
  const auto clamp = mesh.vertices_on(bc.clamp);
  const auto drive = mesh.vertices_on(bc.drive);
  if (clamp.empty() || drive.empty()) throw Error("forward", "boundary segment has no vertices");
  std::vector<char> is_clamp(mesh.vertices.size(), 0);
  DirichletData d;
  for (int v : clamp) {
    is_clamp[v] = 1;
    d.emplace_back(v, Eigen::Vector2d::Zero());
  }
  for (int v : drive) {
    if (is_clamp[v]) throw Error("forward", "clamp and drive segments intersect");
    d.emplace_back(v, bc.g);
  }
  return d;
}

/// Galerkin P1 solution of -div(C : eps(u)) - omega^2 u = f with the given
/// Dirichlet values and natural (traction-free) conditions elsewhere.
/// Dirichlet values are imposed by elimination.
inline VectorField solve_elasticity(std::shared_ptr<const TriMesh> mesh, const std::vector<Voigt3>& stiffness,
                                    const DirichletData& dirichlet, const ForceFn& force = {}, double omega = 0.0) {
  const TriMesh& m = *mesh;
  const int ndof = 2 * m.num_vertices();
  if (dirichlet.empty()) throw Error("forward", "singular stiffness: no Dirichlet constraint");
  Vector fixed_value = Vector::Zero(ndof);
  std::vector<int> free_index(ndof, 0);
  for (const auto& [v, val] : dirichlet) {
    free_index[2 * v] = free_index[2 * v + 1] = -1;
    fixed_value.segment<2>(2 * v) = val;
  }
  int nfree = 0;
  for (int i = 0; i < ndof; ++i)
    if (free_index[i] == 0) free_index[i] = nfree++;
    else free_index[i] = -1;

  Vector rhs = Vector::Zero(nfree);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(m.num_triangles()) * 36);
  for (int t = 0; t < m.num_triangles(); ++t) {
    const auto ke = detail::element_matrix(m, t, stiffness[t], omega);
    std::array<int, 6> dofs;
    for (int a = 0; a < 3; ++a) {
      dofs[2 * a] = 2 * m.triangles[t][a];
      dofs[2 * a + 1] = 2 * m.triangles[t][a] + 1;
    }
    for (int r = 0; r < 6; ++r) {
      const int fr = free_index[dofs[r]];
      if (fr < 0) continue;
      for (int c = 0; c < 6; ++c) {
        const int fc = free_index[dofs[c]];
        if (fc >= 0) trip.emplace_back(fr, fc, ke(r, c));
        else rhs[fr] -= ke(r, c) * fixed_value[dofs[c]];
      }
    }
    if (force) {
      // Edge-midpoint rule, exact for quadratics.
      const double area = m.signed_area(t);
      for (int e = 0; e < 3; ++e) {
        const int i = m.triangles[t][e], j = m.triangles[t][(e + 1) % 3];
        const Eigen::Vector2d fv = force(0.5 * (m.vertices[i] + m.vertices[j]));
        for (int a : {i, j}) {
          for (int comp = 0; comp < 2; ++comp) {
            const int fr = free_index[2 * a + comp];
            if (fr >= 0) rhs[fr] += area / 6.0 * fv[comp];
          }
        }
      }
    }
  }
  SparseMatrix k(nfree, nfree);
  k.setFromTriplets(trip.begin(), trip.end());
  trip.clear();
  trip.shrink_to_fit();

  Vector x;
  auto refine = [&](auto& solver) {
    x = solver.solve(rhs);
    for (int it = 0; it < 3; ++it) {
      const Vector r = rhs - k * x;
      if (r.norm() <= 1e-13 * rhs.norm()) break;
      x += solver.solve(r);
    }
  };
  if (omega == 0.0) {
    Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> llt(k);
    if (llt.info() != Eigen::Success) throw Error("forward", "singular stiffness: insufficient Dirichlet constraints");
    const Vector d = llt.matrixL().nestedExpression().diagonal();
    if (d.cwiseAbs().minCoeff() < 1e-7 * d.cwiseAbs().maxCoeff())
      throw Error("forward", "singular stiffness: insufficient Dirichlet constraints");
    refine(llt);
  } else {
    Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt(k);
    if (ldlt.info() != Eigen::Success) throw Error("forward", "resonant frequency: factorization failed");
    const Vector d = ldlt.vectorD();
    if (!d.allFinite() || d.cwiseAbs().minCoeff() < 1e-12 * d.cwiseAbs().maxCoeff())
      throw Error("forward", "resonant frequency: pivot collapse");
    refine(ldlt);
    if (!x.allFinite() || (rhs - k * x).norm() > 1e-8 * rhs.norm())
      throw Error("forward", "resonant frequency: unstable solve");
  }

  VectorField u{mesh, fixed_value};
  for (int i = 0; i < ndof; ++i)
    if (free_index[i] >= 0) u.values[i] = x[free_index[i]];
  return u;
}

inline VectorField solve_static(std::shared_ptr<const TriMesh> mesh, const ElasticBasis& basis,
                                const ExactParamField& params, const BoundaryCondition& bc) {
  const auto c = sample_stiffness(*mesh, basis, params);
  return solve_elasticity(mesh, c, dirichlet_from_bc(*mesh, bc));
}

/// Time-harmonic response at angular frequency omega (unit density).
inline VectorField solve_harmonic(std::shared_ptr<const TriMesh> mesh, const ElasticBasis& basis,
                                  const ExactParamField& params, const BoundaryCondition& bc, double omega) {
  if (omega < 0.0) throw Error("forward", "frequency must be non-negative");
  const auto c = sample_stiffness(*mesh, basis, params);
  return solve_elasticity(mesh, c, dirichlet_from_bc(*mesh, bc), {}, omega);
}

/// Relative residual of the discrete equations on the free DOFs, computed
/// from a fresh assembly: max |(K u - F)_i| / max |F|-like scale.
inline double galerkin_residual(const VectorField& u, const std::vector<Voigt3>& stiffness,
                                const DirichletData& dirichlet, const ForceFn& force = {}, double omega = 0.0) {
  const TriMesh& m = *u.mesh;
  const int ndof = 2 * m.num_vertices();
  Vector ku = Vector::Zero(ndof), f = Vector::Zero(ndof), scale = Vector::Zero(ndof);
  for (int t = 0; t < m.num_triangles(); ++t) {
    const auto ke = detail::element_matrix(m, t, stiffness[t], omega);
    Eigen::Matrix<double, 6, 1> ue;
    for (int a = 0; a < 3; ++a) ue.segment<2>(2 * a) = u.values.segment<2>(2 * m.triangles[t][a]);
    const Eigen::Matrix<double, 6, 1> r = ke * ue;
    const Eigen::Matrix<double, 6, 1> s = ke.cwiseAbs() * ue.cwiseAbs();
    for (int a = 0; a < 3; ++a) {
      ku.segment<2>(2 * m.triangles[t][a]) += r.segment<2>(2 * a);
      scale.segment<2>(2 * m.triangles[t][a]) += s.segment<2>(2 * a);
    }
    if (force) {
      const double area = m.signed_area(t);
      for (int e = 0; e < 3; ++e) {
        const int i = m.triangles[t][e], j = m.triangles[t][(e + 1) % 3];
        const Eigen::Vector2d fv = force(0.5 * (m.vertices[i] + m.vertices[j]));
        f.segment<2>(2 * i) += area / 6.0 * fv;
        f.segment<2>(2 * j) += area / 6.0 * fv;
      }
    }
  }
  std::vector<char> fixed(ndof, 0);
  for (const auto& [v, val] : dirichlet) fixed[2 * v] = fixed[2 * v + 1] = 1;
  double num = 0.0, den = 0.0;
  for (int i = 0; i < ndof; ++i) {
    if (fixed[i]) continue;
    num = std::max(num, std::abs(ku[i] - f[i]));
    den = std::max(den, scale[i] + std::abs(f[i]));
  }
  return den > 0.0 ? num / den : num;
}

/// Piecewise-constant strain eps(u) = (grad u + grad u^T) / 2 per triangle.
inline std::vector<Matrix2> compute_strain(const VectorField& u) {
  const TriMesh& m = *u.mesh;
  std::vector<Matrix2> eps(m.num_triangles());
  for (int t = 0; t < m.num_triangles(); ++t) {
    const auto g = m.hat_gradients(t);
    Matrix2 grad = Matrix2::Zero();  // grad(a, b) = d u_a / d x_b
    for (int a = 0; a < 3; ++a) grad += u.at(m.triangles[t][a]) * g[a].transpose();
    eps[t] = 0.5 * (grad + grad.transpose());
  }
  return eps;
}

/// Interpolates an analytic displacement at the mesh vertices.
inline VectorField interpolate(std::shared_ptr<const TriMesh> mesh,
                               const std::function<Eigen::Vector2d(const Point&)>& fn) {
  VectorField u{mesh, Vector(2 * mesh->num_vertices())};
  for (int v = 0; v < mesh->num_vertices(); ++v) u.values.segment<2>(2 * v) = fn(mesh->vertices[v]);
  return u;
}

}  // namespace rwf
