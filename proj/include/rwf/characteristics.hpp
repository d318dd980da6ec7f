#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <functional>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rwf/rwf_core.hpp"

namespace rwf {

/// Dense third-order tensor X(i, j, k), row-major.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(int d0, int d1, int d2) : d_{d0, d1, d2}, v_(static_cast<std::size_t>(d0) * d1 * d2, 0.0) {}

  int dim(int a) const { return d_[a]; }
  double& operator()(int i, int j, int k) { return v_[(static_cast<std::size_t>(i) * d_[1] + j) * d_[2] + k]; }
  double operator()(int i, int j, int k) const { return v_[(static_cast<std::size_t>(i) * d_[1] + j) * d_[2] + k]; }

  /// Slice X(:, j, :) as a d0 x d2 matrix.
  Eigen::MatrixXd slice(int j) const {
    Eigen::MatrixXd m(d_[0], d_[2]);
    for (int i = 0; i < d_[0]; ++i)
      for (int k = 0; k < d_[2]; ++k) m(i, k) = (*this)(i, j, k);
    return m;
  }

  Tensor3& operator+=(const Tensor3& o) {
    for (std::size_t i = 0; i < v_.size(); ++i) v_[i] += o.v_[i];
    return *this;
  }
  Tensor3 operator*(double a) const {
    Tensor3 t = *this;
    for (double& x : t.v_) x *= a;
    return t;
  }
  double max_abs() const {
    double m = 0.0;
    for (double x : v_) m = std::max(m, std::abs(x));
    return m;
  }

 private:
  std::array<int, 3> d_{0, 0, 0};
  std::vector<double> v_;
};

/// T at one triangle of a TuTensor, as an (2m) x 2 x n tensor.
inline Tensor3 point_tensor(const TuTensor& T, int t) {
  Tensor3 x(T.rows(), 2, T.params());
  for (int i = 0; i < T.rows(); ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < T.params(); ++k) x(i, j, k) = T(t, i, j, k);
  return x;
}

/// x -> B(x) in R^{n x 2 x n} over a rectangle.
struct ThirdOrderField {
  int n = 1;
  Rect domain = default_domain();
  std::function<Tensor3(const Point&)> eval;

  Tensor3 operator()(const Point& p) const { return eval(p); }

  static ThirdOrderField zero(int n, Rect domain = default_domain()) {
    return {n, domain, [n](const Point&) { return Tensor3(n, 2, n); }};
  }

  /// Per-triangle constant table on a mesh.
  static ThirdOrderField piecewise(std::shared_ptr<const TriMesh> mesh, std::vector<Tensor3> table) {
    if (table.empty() || static_cast<int>(table.size()) != mesh->num_triangles())
      throw Error("characteristics", "one tensor per triangle required");
    auto locator = std::make_shared<PointLocator>(*mesh);
    auto data = std::make_shared<std::vector<Tensor3>>(std::move(table));
    const int n = data->front().dim(0);
    return {n, mesh->bounds, [mesh, locator, data](const Point& p) {
              const auto hit = locator->locate(p, 1e-9);
              if (!hit) throw Error("characteristics", "point outside the tabulated field");
              return (*data)[hit->triangle];
            }};
  }
};

/// Field B_ijk = (M^{-1} d_j M)_ik from a smooth invertible matrix field M and
/// its partial derivatives. Its kernel is spanned by the columns of M^{-1}.
inline ThirdOrderField field_from_matrix(int n, std::function<Eigen::MatrixXd(const Point&)> m,
                                         std::function<Eigen::MatrixXd(const Point&, int)> dm,
                                         Rect domain = default_domain()) {
  return {n, domain, [n, m, dm](const Point& p) {
            const Eigen::MatrixXd minv = m(p).inverse();
            Tensor3 b(n, 2, n);
            for (int j = 0; j < 2; ++j) {
              const Eigen::MatrixXd s = minv * dm(p, j);
              for (int i = 0; i < n; ++i)
                for (int k = 0; k < n; ++k) b(i, j, k) = s(i, k);
            }
            return b;
          }};
}

/// Diagonal stack B_iji = b_i(x)_j of planar vector fields.
inline ThirdOrderField diagonal_field(std::vector<std::function<Eigen::Vector2d(const Point&)>> b,
                                      Rect domain = default_domain()) {
  const int n = static_cast<int>(b.size());
  return {n, domain, [n, b](const Point& p) {
            Tensor3 t(n, 2, n);
            for (int i = 0; i < n; ++i) {
              const Eigen::Vector2d v = b[i](p);
              t(i, 0, i) = v.x();
              t(i, 1, i) = v.y();
            }
            return t;
          }};
}

/// M(x) = 3 I + P0 + x P1 + y P2 + sin(2x + y) P3 / 2 with seeded entries of
/// P in [-0.2, 0.2]; invertible on the unit square for n <= 3.
struct SmoothMatrixField {
  int n = 1;
  std::array<Eigen::MatrixXd, 4> p;

  Eigen::MatrixXd operator()(const Point& x) const {
    return 3.0 * Eigen::MatrixXd::Identity(n, n) + p[0] + x.x() * p[1] + x.y() * p[2] +
           0.5 * std::sin(2.0 * x.x() + x.y()) * p[3];
  }
  Eigen::MatrixXd derivative(const Point& x, int j) const {
    const double c = std::cos(2.0 * x.x() + x.y());
    return j == 0 ? Eigen::MatrixXd(p[1] + c * p[3]) : Eigen::MatrixXd(p[2] + 0.5 * c * p[3]);
  }
};

inline SmoothMatrixField smooth_matrix_field(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  SmoothMatrixField f{n, {}};
  for (auto& m : f.p) {
    m.resize(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m(i, j) = u(rng);
  }
  return f;
}

inline ThirdOrderField field_from_matrix(const SmoothMatrixField& m, Rect domain = default_domain()) {
  return field_from_matrix(
      m.n, [m](const Point& x) { return m(x); }, [m](const Point& x, int j) { return m.derivative(x, j); }, domain);
}

/// Potential of the i-th conservative component: nu_i = (i + 1) sin(x + i y) / 2.
inline double mixed_potential(int i, const Point& x) { return 0.5 * (i + 1) * std::sin(x.x() + i * x.y()); }

/// Diagonal stack with k gradient fields b_i = grad nu_i followed by n - k
/// rotational fields b_i = c_i (-y, x), c_i = 1 + i / 2, whose circulation
/// around any loop is 2 c_i times the enclosed area.
inline ThirdOrderField mixed_diagonal_field(int n, int k, Rect domain = default_domain()) {
  std::vector<std::function<Eigen::Vector2d(const Point&)>> b;
  for (int i = 0; i < n; ++i) {
    if (i < k) {
      b.push_back([i](const Point& x) {
        const double c = 0.5 * (i + 1) * std::cos(x.x() + i * x.y());
        return Eigen::Vector2d(c, i * c);
      });
    } else {
      const double c = 1.0 + 0.5 * i;
      b.push_back([c](const Point& x) { return Eigen::Vector2d(-c * x.y(), c * x.x()); });
    }
  }
  return diagonal_field(std::move(b), domain);
}

// ---------------------------------------------------------------------------
// Divergence rows D_ik = sum_j d_j T_ijk

/// Fourth-order central differences of an analytic T field (N x 2 x n).
inline Eigen::MatrixXd divergence_rows(const std::function<Tensor3(const Point&)>& T, const Point& x,
                                       double step = 1e-3) {
  const Tensor3 t0 = T(x);
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(t0.dim(0), t0.dim(2));
  for (int j = 0; j < 2; ++j) {
    Point e = Point::Zero();
    e[j] = step;
    const Tensor3 p1 = T(x + e), m1 = T(x - e), p2 = T(x + 2 * e), m2 = T(x - 2 * e);
    for (int i = 0; i < t0.dim(0); ++i)
      for (int k = 0; k < t0.dim(2); ++k)
        d(i, k) += (-p2(i, j, k) + 8.0 * p1(i, j, k) - 8.0 * m1(i, j, k) + m2(i, j, k)) / (12.0 * step);
  }
  return d;
}

/// Triangles sharing at least one vertex with each triangle (excluding itself).
inline std::vector<std::vector<int>> vertex_patches(const TriMesh& mesh) {
  std::vector<std::vector<int>> by_vertex(mesh.vertices.size());
  for (int t = 0; t < mesh.num_triangles(); ++t)
    for (int v : mesh.triangles[t]) by_vertex[v].push_back(t);
  std::vector<std::vector<int>> patch(mesh.num_triangles());
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    for (int v : mesh.triangles[t])
      for (int s : by_vertex[v])
        if (s != t) patch[t].push_back(s);
    std::sort(patch[t].begin(), patch[t].end());
    patch[t].erase(std::unique(patch[t].begin(), patch[t].end()), patch[t].end());
  }
  return patch;
}

/// Discrete D per triangle from per-triangle T values: affine least-squares
/// fit over the vertex-sharing patch, evaluated at the barycenter.
inline std::vector<Eigen::MatrixXd> divergence_rows(const TuTensor& T, const TriMesh& mesh) {
  if (T.num_triangles() != mesh.num_triangles()) throw Error("characteristics", "tensor and mesh differ");
  const auto patch = vertex_patches(mesh);
  std::vector<Eigen::MatrixXd> out(mesh.num_triangles());
  const int rows = T.rows(), n = T.params();
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    if (patch[t].size() < 2) throw Error("characteristics", "isolated triangle: no neighbours for a gradient");
    const Point c = mesh.barycenter(t);
    const int np = static_cast<int>(patch[t].size()) + 1;
    Eigen::MatrixXd a(np, 3);
    a.row(0) << 1.0, 0.0, 0.0;
    for (int s = 1; s < np; ++s) {
      const Point dc = mesh.barycenter(patch[t][s - 1]) - c;
      a.row(s) << 1.0, dc.x(), dc.y();
    }
    const auto qr = a.colPivHouseholderQr();
    if (qr.rank() < 3) throw Error("characteristics", "degenerate gradient patch");
    Eigen::MatrixXd vals(np, rows * 2 * n);
    auto fill = [&](int r, int tri) {
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < 2; ++j)
          for (int k = 0; k < n; ++k) vals(r, (i * 2 + j) * n + k) = T(tri, i, j, k);
    };
    fill(0, t);
    for (int s = 1; s < np; ++s) fill(s, patch[t][s - 1]);
    const Eigen::MatrixXd coef = qr.solve(vals);  // rows: value, d/dx, d/dy
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(rows, n);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < n; ++k) d(i, k) += coef(1 + j, (i * 2 + j) * n + k);
    out[t] = d;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Left inverse and expanded form

struct LeftInverse {
  Tensor3 inverse;  // n x 2 x N
  Eigen::VectorXd singular_values;
  double condition = 0.0;
  double identity_defect = 0.0;  // max |(T^{-1} . T)_{ijkl} - delta_il delta_jk|
};

/// Unfolding M(i, j + 2 k) = T(i, j, k) of an N x 2 x n tensor.
inline Eigen::MatrixXd unfold(const Tensor3& t) {
  Eigen::MatrixXd m(t.dim(0), 2 * t.dim(2));
  for (int i = 0; i < t.dim(0); ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < t.dim(2); ++k) m(i, j + 2 * k) = t(i, j, k);
  return m;
}

/// Minimal-norm left inverse of the unfolded map.
inline LeftInverse left_inverse(const Tensor3& t, double rank_tol = 1e-12) {
  if (t.dim(1) != 2) throw Error("characteristics", "middle dimension must be 2");
  const int big_n = t.dim(0), n = t.dim(2);
  const Eigen::MatrixXd m = unfold(t);
  LeftInverse li;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  li.singular_values = svd.singularValues();
  const auto& s = li.singular_values;
  if (big_n < 2 * n || s.size() < 2 * n || !(s[s.size() - 1] > rank_tol * s[0])) {
    std::ostringstream msg;
    msg << "no left inverse: unfolded block is rank deficient, singular values " << s.transpose();
    throw Error("characteristics", msg.str());
  }
  li.condition = s[0] / s[s.size() - 1];
  const Eigen::MatrixXd pinv = svd.matrixV() * s.cwiseInverse().asDiagonal() * svd.matrixU().transpose();
  li.inverse = Tensor3(n, 2, big_n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 2; ++j)
      for (int r = 0; r < big_n; ++r) li.inverse(i, j, r) = pinv(j + 2 * i, r);
  const Eigen::MatrixXd prod = pinv * m;
  li.identity_defect = (prod - Eigen::MatrixXd::Identity(2 * n, 2 * n)).cwiseAbs().maxCoeff();
  if (!(li.identity_defect <= 1e-8)) throw Error("characteristics", "left inverse fails the identity check");
  return li;
}

/// (T^{-1} . X)_{ijk} = sum_r T^{-1}_{ijr} X_{rk} for X in R^{N x k}.
inline Tensor3 apply_left_inverse(const Tensor3& inv, const Eigen::MatrixXd& x) {
  Tensor3 out(inv.dim(0), inv.dim(1), static_cast<int>(x.cols()));
  for (int i = 0; i < inv.dim(0); ++i)
    for (int j = 0; j < inv.dim(1); ++j)
      for (int k = 0; k < x.cols(); ++k) {
        double s = 0.0;
        for (int r = 0; r < inv.dim(2); ++r) s += inv(i, j, r) * x(r, k);
        out(i, j, k) = s;
      }
  return out;
}

/// B = T^{-1} . D and F = -T^{-1} . f at one point; F is n x 2.
struct ExpandedPoint {
  Tensor3 B;
  Eigen::MatrixXd F;
};

inline ExpandedPoint expanded_point(const Tensor3& t, const Eigen::MatrixXd& d, const Eigen::VectorXd& f) {
  const LeftInverse li = left_inverse(t);
  ExpandedPoint e{apply_left_inverse(li.inverse, d), Eigen::MatrixXd::Zero(t.dim(2), 2)};
  if (f.size() > 0) {
    const Tensor3 tf = apply_left_inverse(li.inverse, f);
    for (int i = 0; i < t.dim(2); ++i)
      for (int j = 0; j < 2; ++j) e.F(i, j) = -tf(i, j, 0);
  }
  return e;
}

struct ExpandedForm {
  ThirdOrderField B;
  std::function<Eigen::MatrixXd(const Point&)> F;
};

/// Expanded form of analytic T and f fields (f may be empty for f = 0).
inline ExpandedForm expanded_form(std::function<Tensor3(const Point&)> T,
                                  std::function<Eigen::VectorXd(const Point&)> f, int n,
                                  Rect domain = default_domain()) {
  ExpandedForm ef;
  ef.B = {n, domain, [T](const Point& x) { return expanded_point(T(x), divergence_rows(T, x), {}).B; }};
  ef.F = [T, f, n](const Point& x) -> Eigen::MatrixXd {
    if (!f) return Eigen::MatrixXd::Zero(n, 2);
    const LeftInverse li = left_inverse(T(x));
    const Tensor3 tf = apply_left_inverse(li.inverse, f(x));
    Eigen::MatrixXd out(n, 2);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 2; ++j) out(i, j) = -tf(i, j, 0);
    return out;
  };
  return ef;
}

/// Per-triangle expanded form from discrete data; loads are per-triangle
/// vectors of length N (empty for f = 0).
inline std::pair<std::vector<Tensor3>, std::vector<Eigen::MatrixXd>> expanded_form(
    const TuTensor& T, const TriMesh& mesh, const std::vector<Eigen::VectorXd>& loads = {}) {
  const auto d = divergence_rows(T, mesh);
  std::vector<Tensor3> b(mesh.num_triangles());
  std::vector<Eigen::MatrixXd> f(mesh.num_triangles());
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    auto e = expanded_point(point_tensor(T, t), d[t], loads.empty() ? Eigen::VectorXd() : loads[t]);
    b[t] = std::move(e.B);
    f[t] = std::move(e.F);
  }
  return {std::move(b), std::move(f)};
}

// ---------------------------------------------------------------------------
// Paths and resolvents

/// Piecewise-linear path, parameterized on [0, 1] by chord length.
struct PathCurve {
  std::vector<Point> waypoints;

  double length() const {
    double l = 0.0;
    for (std::size_t i = 1; i < waypoints.size(); ++i) l += (waypoints[i] - waypoints[i - 1]).norm();
    return l;
  }
  const Point& start() const { return waypoints.front(); }
  const Point& end() const { return waypoints.back(); }
  bool closed(double tol = 1e-12) const { return (start() - end()).norm() <= tol; }

  PathCurve reversed() const { return {std::vector<Point>(waypoints.rbegin(), waypoints.rend())}; }

  /// [this other]: this path followed by `other`.
  PathCurve then(const PathCurve& other) const {
    if ((end() - other.start()).norm() > 1e-12) throw Error("characteristics", "paths do not join");
    PathCurve p = *this;
    p.waypoints.insert(p.waypoints.end(), other.waypoints.begin() + 1, other.waypoints.end());
    return p;
  }

  void validate(const Rect& domain) const {
    if (waypoints.size() < 2) throw Error("characteristics", "a path needs at least two waypoints");
    for (const Point& p : waypoints)
      if (!(p.x() > domain.xmin && p.x() < domain.xmax && p.y() > domain.ymin && p.y() < domain.ymax))
        throw Error("characteristics", "path leaves the open domain");
  }
};

/// Reads "x,y" rows; lines starting with '#' and a non-numeric header are skipped.
inline PathCurve read_waypoints_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("io", "cannot open waypoint file " + path);
  PathCurve p;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double x, y;
    if (ls >> x >> y) p.waypoints.emplace_back(x, y);
  }
  if (p.waypoints.size() < 2) throw Error("io", "waypoint file needs at least two points: " + path);
  return p;
}

struct ResolventResult {
  Eigen::MatrixXd R;
  int steps = 0;
  double step_size = 0.0;  // largest parameter step
};

/// Integrates phi' = -sum_j gamma'_j B_j(gamma) phi from phi(0) = I with
/// classical RK4, `steps_per_segment` steps on every linear piece.
inline ResolventResult resolvent(const ThirdOrderField& b, const PathCurve& path, int steps_per_segment = 64) {
  path.validate(b.domain);
  if (steps_per_segment < 1) throw Error("characteristics", "step count must be positive");
  const int n = b.n;
  const double total = path.length();
  if (!(total > 0.0)) return {Eigen::MatrixXd::Identity(n, n), 0, 0.0};

  auto rhs = [&](const Point& x, const Point& dx, const Eigen::MatrixXd& phi) {
    const Tensor3 bx = b(x);
    Eigen::MatrixXd a = dx.x() * bx.slice(0) + dx.y() * bx.slice(1);
    return Eigen::MatrixXd(-a * phi);
  };

  ResolventResult res;
  Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(n, n);
  double t = 0.0;
  for (std::size_t s = 1; s < path.waypoints.size(); ++s) {
    const Point p0 = path.waypoints[s - 1];
    const Point seg = path.waypoints[s] - p0;
    const double dt = seg.norm() / total;
    if (dt == 0.0) continue;
    const Point vel = seg / dt;  // d gamma / dt on this segment
    const double h = dt / steps_per_segment;
    res.step_size = std::max(res.step_size, h);
    for (int k = 0; k < steps_per_segment; ++k) {
      const Point x0 = p0 + (k * h) * vel;
      const Eigen::MatrixXd k1 = rhs(x0, vel, phi);
      const Eigen::MatrixXd k2 = rhs(x0 + 0.5 * h * vel, vel, phi + 0.5 * h * k1);
      const Eigen::MatrixXd k3 = rhs(x0 + 0.5 * h * vel, vel, phi + 0.5 * h * k2);
      const Eigen::MatrixXd k4 = rhs(x0 + h * vel, vel, phi + h * k3);
      Eigen::MatrixXd next = phi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!next.allFinite()) {
        std::ostringstream msg;
        msg << "resolvent blow-up after t = " << t;
        throw Error("characteristics", msg.str());
      }
      phi = std::move(next);
      t += h;
      ++res.steps;
    }
  }
  const double det = phi.determinant();
  if (!std::isfinite(det) || det == 0.0) throw Error("characteristics", "resolvent is singular");
  res.R = std::move(phi);
  return res;
}

inline Eigen::VectorXd resolvent(const ThirdOrderField& b, const PathCurve& path, const Eigen::VectorXd& v,
                                 int steps_per_segment = 64) {
  return resolvent(b, path, steps_per_segment).R * v;
}

struct ResolventLaws {
  double inverse_defect = 0.0;        // ||R^{reverse} R - I||
  double concatenation_defect = 0.0;  // ||R^{[g1 g2]} - R^{g2} R^{g1}||
};

inline ResolventLaws resolvent_laws_check(const ThirdOrderField& b, const PathCurve& g1, const PathCurve& g2,
                                          int steps_per_segment = 64) {
  const auto r1 = resolvent(b, g1, steps_per_segment).R;
  const auto r1bar = resolvent(b, g1.reversed(), steps_per_segment).R;
  const auto r2 = resolvent(b, g2, steps_per_segment).R;
  const auto r12 = resolvent(b, g1.then(g2), steps_per_segment).R;
  const int n = b.n;
  return {(r1bar * r1 - Eigen::MatrixXd::Identity(n, n)).norm(), (r12 - r2 * r1).norm()};
}

// ---------------------------------------------------------------------------
// Conservativity

/// Closed regular polygon through x: x is a vertex, the polygon lies on the
/// side given by `angle`.
inline PathCurve polygon_loop(const Point& x, double radius, int sides, double angle) {
  const Point c = x + radius * Point(std::cos(angle), std::sin(angle));
  const double a0 = angle + std::numbers::pi;
  PathCurve p;
  for (int k = 0; k <= sides; ++k) {
    const double a = a0 + 2.0 * std::numbers::pi * (k % sides) / sides;
    p.waypoints.push_back(k % sides == 0 ? x : Point(c + radius * Point(std::cos(a), std::sin(a))));
  }
  return p;
}

/// A handful of differently shaped loops based at x, kept inside `domain`.
inline std::vector<PathCurve> standard_loops(const Point& x, const Rect& domain, double radius = 0.2) {
  const double room = std::min({x.x() - domain.xmin, domain.xmax - x.x(), x.y() - domain.ymin, domain.ymax - x.y()});
  const double r = std::min(radius, 0.45 * room);
  if (!(r > 0.0)) throw Error("characteristics", "base point too close to the boundary");
  std::vector<PathCurve> loops;
  loops.push_back(polygon_loop(x, r, 3, 0.3));
  loops.push_back(polygon_loop(x, r, 4, 2.1));
  loops.push_back(polygon_loop(x, 0.6 * r, 5, 4.0));
  loops.push_back(polygon_loop(x, 0.8 * r, 6, 5.2));
  return loops;
}

struct ConservativityReport {
  int k = 0;
  Eigen::MatrixXd basis;                // n x k, orthonormal
  Eigen::VectorXd singular_values;      // of the stacked R - I, descending
  std::vector<double> loop_defects;     // ||R_loop - I|| per loop
  double threshold = 0.0;
};

/// Common fixed subspace of the loop monodromies at x. Singular values of the
/// stacked (R_loop - I) below tol * max(1, max ||R_loop||) count as fixed.
inline ConservativityReport conservativity_probe(const ThirdOrderField& b, const Point& x,
                                                 const std::vector<PathCurve>& loops, double tol = 1e-6,
                                                 int steps_per_segment = 64) {
  if (loops.size() < 2) throw Error("characteristics", "conservativity probe needs at least two loops");
  const int n = b.n;
  Eigen::MatrixXd stack(n * static_cast<int>(loops.size()), n);
  ConservativityReport rep;
  double rmax = 1.0;
  for (std::size_t l = 0; l < loops.size(); ++l) {
    const PathCurve& loop = loops[l];
    if ((loop.start() - x).norm() > 1e-12 || !loop.closed()) throw Error("characteristics", "loops must be closed at x");
    const Eigen::MatrixXd r = resolvent(b, loop, steps_per_segment).R;
    const Eigen::MatrixXd d = r - Eigen::MatrixXd::Identity(n, n);
    stack.middleRows(n * static_cast<int>(l), n) = d;
    rep.loop_defects.push_back(d.norm());
    rmax = std::max(rmax, r.norm());
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(stack, Eigen::ComputeFullV);
  rep.singular_values = svd.singularValues();
  rep.threshold = tol * rmax;
  for (int i = 0; i < n; ++i)
    if (rep.singular_values[i] <= rep.threshold) ++rep.k;
  rep.basis = svd.matrixV().rightCols(rep.k);
  return rep;
}

// ---------------------------------------------------------------------------
// Independence of kernel elements

struct GramCheck {
  bool independent = false;
  double alpha = 0.0;  // min over points of lambda_min(G(x))
};

/// fields[i] is (points x n): the i-th vector field sampled at common points.
inline GramCheck gram_independence(const std::vector<Eigen::MatrixXd>& fields, double tol = 1e-12) {
  if (fields.empty()) return {false, 0.0};
  const Eigen::Index pts = fields.front().rows();
  const int k = static_cast<int>(fields.size());
  for (const auto& f : fields)
    if (f.rows() != pts || f.cols() != fields.front().cols()) throw Error("characteristics", "fields must share sample points");
  double alpha = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd g(k, k);
  for (Eigen::Index p = 0; p < pts; ++p) {
    for (int i = 0; i < k; ++i)
      for (int j = 0; j <= i; ++j) g(i, j) = g(j, i) = fields[i].row(p).dot(fields[j].row(p));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g, Eigen::EigenvaluesOnly);
    alpha = std::min(alpha, es.eigenvalues()[0]);
  }
  return {alpha > tol, alpha};
}

}  // namespace rwf
