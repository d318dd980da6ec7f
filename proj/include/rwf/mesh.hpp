#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "rwf/error.hpp"
#include "rwf/geometry.hpp"

namespace rwf {

/// Boundary segment labels. The four sides of the bounding rectangle, plus
/// `free` for boundary edges that do not lie on it (e.g. after restriction).
enum class Side : int { bottom = 0, right = 1, top = 2, left = 3, free = 4 };

inline const char* side_name(Side s) {
  switch (s) {
    case Side::bottom: return "bottom";
    case Side::right: return "right";
    case Side::top: return "top";
    case Side::left: return "left";
    case Side::free: return "free";
  }
  return "free";
}

inline std::optional<Side> parse_side(const std::string& s) {
  if (s == "bottom") return Side::bottom;
  if (s == "right") return Side::right;
  if (s == "top") return Side::top;
  if (s == "left") return Side::left;
  if (s == "free") return Side::free;
  return std::nullopt;
}

struct BoundaryEdge {
  std::array<int, 2> v;
  Side tag;
};

using Triangle = std::array<int, 3>;

/// Conforming triangulation with counterclockwise triangles.
struct TriMesh {
  std::vector<Point> vertices;
  std::vector<Triangle> triangles;
  std::vector<int> triangle_tags;  // region label per triangle, 0 by default
  std::vector<BoundaryEdge> boundary_edges;
  Rect bounds;
  double h = 0.0;

  int num_vertices() const { return static_cast<int>(vertices.size()); }
  int num_triangles() const { return static_cast<int>(triangles.size()); }

  double signed_area(int t) const {
    const auto& tr = triangles[t];
    return 0.5 * orient2d(vertices[tr[0]], vertices[tr[1]], vertices[tr[2]]);
  }
  Point barycenter(int t) const {
    const auto& tr = triangles[t];
    return (vertices[tr[0]] + vertices[tr[1]] + vertices[tr[2]]) / 3.0;
  }
  double total_area() const {
    double a = 0.0;
    for (int t = 0; t < num_triangles(); ++t) a += signed_area(t);
    return a;
  }

  /// Gradients of the three P1 hat functions on triangle t (constant).
  std::array<Point, 3> hat_gradients(int t) const {
    const auto& tr = triangles[t];
    const Point& p0 = vertices[tr[0]];
    const Point& p1 = vertices[tr[1]];
    const Point& p2 = vertices[tr[2]];
    const double a2 = orient2d(p0, p1, p2);
    return {Point((p1.y() - p2.y()) / a2, (p2.x() - p1.x()) / a2),
            Point((p2.y() - p0.y()) / a2, (p0.x() - p2.x()) / a2),
            Point((p0.y() - p1.y()) / a2, (p1.x() - p0.x()) / a2)};
  }

  /// Longest edge of triangle t (its circumdiameter bound for non-obtuse shapes).
  double circumdiameter(int t) const {
    const auto& tr = triangles[t];
    const Point& a = vertices[tr[0]];
    const Point& b = vertices[tr[1]];
    const Point& c = vertices[tr[2]];
    const double la = (b - c).norm(), lb = (c - a).norm(), lc = (a - b).norm();
    const double area2 = std::abs(orient2d(a, b, c));
    return la * lb * lc / area2;
  }

  /// Vertices lying on a boundary edge.
  std::vector<char> boundary_vertex_mask() const {
    std::vector<char> mask(vertices.size(), 0);
    for (const auto& e : boundary_edges) mask[e.v[0]] = mask[e.v[1]] = 1;
    return mask;
  }

  /// Vertices on the closed boundary segment carrying `tag`.
  std::vector<int> vertices_on(Side tag) const {
    std::vector<char> mask(vertices.size(), 0);
    for (const auto& e : boundary_edges)
      if (e.tag == tag) mask[e.v[0]] = mask[e.v[1]] = 1;
    std::vector<int> out;
    for (int i = 0; i < num_vertices(); ++i)
      if (mask[i]) out.push_back(i);
    return out;
  }
};

namespace detail {

inline std::uint64_t edge_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

inline Side classify_edge(const Point& a, const Point& b, const Rect& r, double tol) {
  auto on = [tol](double u, double v, double w) { return std::abs(u - w) <= tol && std::abs(v - w) <= tol; };
  if (on(a.y(), b.y(), r.ymin)) return Side::bottom;
  if (on(a.x(), b.x(), r.xmax)) return Side::right;
  if (on(a.y(), b.y(), r.ymax)) return Side::top;
  if (on(a.x(), b.x(), r.xmin)) return Side::left;
  return Side::free;
}

/// Neighbour across the edge opposite local vertex i, or -1.
inline std::vector<std::array<int, 3>> triangle_neighbours(const std::vector<Triangle>& tris) {
  std::vector<std::array<int, 3>> nbr(tris.size(), {-1, -1, -1});
  std::unordered_map<std::uint64_t, std::pair<int, int>> open;
  open.reserve(tris.size() * 2);
  for (int t = 0; t < static_cast<int>(tris.size()); ++t) {
    for (int i = 0; i < 3; ++i) {
      const std::uint64_t k = edge_key(tris[t][(i + 1) % 3], tris[t][(i + 2) % 3]);
      auto it = open.find(k);
      if (it == open.end()) {
        open.emplace(k, std::make_pair(t, i));
      } else {
        nbr[t][i] = it->second.first;
        nbr[it->second.first][it->second.second] = t;
        open.erase(it);
      }
    }
  }
  return nbr;
}

/// Positive when d lies strictly inside the circumcircle of ccw (a, b, c).
inline double incircle(const Point& a, const Point& b, const Point& c, const Point& d) {
  const double adx = a.x() - d.x(), ady = a.y() - d.y();
  const double bdx = b.x() - d.x(), bdy = b.y() - d.y();
  const double cdx = c.x() - d.x(), cdy = c.y() - d.y();
  const double ad = adx * adx + ady * ady;
  const double bd = bdx * bdx + bdy * bdy;
  const double cd = cdx * cdx + cdy * cdy;
  return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

/// Lawson edge flipping until every interior edge is locally Delaunay.
inline void make_delaunay(const std::vector<Point>& pts, std::vector<Triangle>& tris, double scale) {
  auto nbr = triangle_neighbours(tris);
  std::vector<std::pair<int, int>> stack;
  stack.reserve(tris.size() * 3);
  for (int t = 0; t < static_cast<int>(tris.size()); ++t)
    for (int i = 0; i < 3; ++i)
      if (nbr[t][i] > t) stack.emplace_back(t, i);

  const double eps = 1e-12 * scale * scale * scale * scale;
  auto local_index = [&](int t, int v) {
    for (int i = 0; i < 3; ++i)
      if (tris[t][i] == v) return i;
    return -1;
  };
  auto relink = [&](int tri, int old_nb, int new_nb) {
    if (tri < 0) return;
    for (int i = 0; i < 3; ++i)
      if (nbr[tri][i] == old_nb) nbr[tri][i] = new_nb;
  };

  while (!stack.empty()) {
    auto [t, i] = stack.back();
    stack.pop_back();
    const int u = nbr[t][i];
    if (u < 0) continue;
    const int a = tris[t][i], b = tris[t][(i + 1) % 3], c = tris[t][(i + 2) % 3];
    int jj = -1;
    for (int q = 0; q < 3; ++q)
      if (tris[u][q] != b && tris[u][q] != c) jj = q;
    if (jj < 0) continue;
    const int d = tris[u][jj];
    if (incircle(pts[a], pts[b], pts[c], pts[d]) <= eps) continue;
    // Convexity of the quad a-b-d-c.
    if (orient2d(pts[a], pts[b], pts[d]) <= 0.0 || orient2d(pts[a], pts[d], pts[c]) <= 0.0) continue;

    const int n_ab = nbr[t][(i + 2) % 3];
    const int n_ca = nbr[t][(i + 1) % 3];
    // u = (d, c, b) in its own rotation.
    const int ic = local_index(u, c), ib = local_index(u, b);
    const int n_bd = nbr[u][ic];  // opposite c
    const int n_dc = nbr[u][ib];  // opposite b

    tris[t] = {a, b, d};
    nbr[t] = {n_bd, u, n_ab};
    tris[u] = {a, d, c};
    nbr[u] = {n_dc, n_ca, t};
    relink(n_bd, u, t);
    relink(n_ca, t, u);

    stack.emplace_back(t, 0);
    stack.emplace_back(t, 2);
    stack.emplace_back(u, 0);
    stack.emplace_back(u, 1);
  }
}

}  // namespace detail

/// Rebuilds boundary edges from triangle adjacency, tagging each by the side
/// of `bounds` it lies on.
inline void tag_boundary(TriMesh& mesh) {
  mesh.boundary_edges.clear();
  const auto nbr = detail::triangle_neighbours(mesh.triangles);
  const double tol = 1e-9 * std::max(mesh.bounds.width(), mesh.bounds.height());
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    for (int i = 0; i < 3; ++i) {
      if (nbr[t][i] >= 0) continue;
      const int a = mesh.triangles[t][(i + 1) % 3], b = mesh.triangles[t][(i + 2) % 3];
      mesh.boundary_edges.push_back(
          {{a, b}, detail::classify_edge(mesh.vertices[a], mesh.vertices[b], mesh.bounds, tol)});
    }
  }
}

struct MeshCheck {
  bool positive_areas = true;
  bool conforming = true;  // every edge shared by at most two triangles
  bool boundary_consistent = true;
  double min_area = std::numeric_limits<double>::infinity();
};

/// Verifies orientation and edge incidence (no hanging nodes, manifold edges).
inline MeshCheck check_mesh(const TriMesh& mesh) {
  MeshCheck c;
  std::unordered_map<std::uint64_t, int> count;
  count.reserve(mesh.triangles.size() * 2);
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const double a = mesh.signed_area(t);
    c.min_area = std::min(c.min_area, a);
    if (!(a > 0.0)) c.positive_areas = false;
    for (int i = 0; i < 3; ++i) ++count[detail::edge_key(mesh.triangles[t][i], mesh.triangles[t][(i + 1) % 3])];
  }
  std::size_t singles = 0;
  for (const auto& [k, n] : count) {
    if (n > 2) c.conforming = false;
    if (n == 1) ++singles;
  }
  if (singles != mesh.boundary_edges.size()) c.boundary_consistent = false;
  for (const auto& e : mesh.boundary_edges) {
    auto it = count.find(detail::edge_key(e.v[0], e.v[1]));
    if (it == count.end() || it->second != 1) c.boundary_consistent = false;
  }
  return c;
}

inline constexpr std::uint64_t kDefaultMeshSeed = 20230917;

/// Quasi-uniform Delaunay triangulation of a rectangle: a structured grid of
/// spacing ~h whose interior nodes are jittered by up to 10% of the spacing,
/// split along the Delaunay diagonal and then flipped to a global Delaunay
/// triangulation. Deterministic for a given seed.
inline TriMesh generate_triangular(const Rect& domain, double h, std::uint64_t seed = kDefaultMeshSeed) {
  if (!(h > 0.0) || !domain.valid()) throw Error("mesh", "resolution must be positive and domain non-empty");
  const int nx = static_cast<int>(std::lround(domain.width() / h));
  const int ny = static_cast<int>(std::lround(domain.height() / h));
  if (nx < 2 || ny < 2) throw Error("mesh", "resolution too coarse: no interior vertex");

  const double dx = domain.width() / nx, dy = domain.height() / ny;
  TriMesh mesh;
  mesh.bounds = domain;
  mesh.h = h;
  mesh.vertices.reserve(static_cast<std::size_t>(nx + 1) * (ny + 1));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  for (int j = 0; j <= ny; ++j) {
    for (int i = 0; i <= nx; ++i) {
      Point p(domain.xmin + i * dx, domain.ymin + j * dy);
      if (i == nx) p.x() = domain.xmax;
      if (j == ny) p.y() = domain.ymax;
      if (i > 0 && i < nx && j > 0 && j < ny) {
        p.x() += jitter(rng) * dx;
        p.y() += jitter(rng) * dy;
      }
      mesh.vertices.push_back(p);
    }
  }
  auto id = [nx](int i, int j) { return j * (nx + 1) + i; };
  mesh.triangles.reserve(static_cast<std::size_t>(2) * nx * ny);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const int a = id(i, j), b = id(i + 1, j), c = id(i + 1, j + 1), d = id(i, j + 1);
      // Diagonal a-c is Delaunay iff d is not inside the circumcircle of (a, b, c).
      if (detail::incircle(mesh.vertices[a], mesh.vertices[b], mesh.vertices[c], mesh.vertices[d]) <= 0.0) {
        mesh.triangles.push_back({a, b, c});
        mesh.triangles.push_back({a, c, d});
      } else {
        mesh.triangles.push_back({a, b, d});
        mesh.triangles.push_back({b, c, d});
      }
    }
  }
  detail::make_delaunay(mesh.vertices, mesh.triangles, std::max(dx, dy));
  mesh.triangle_tags.assign(mesh.triangles.size(), 0);
  tag_boundary(mesh);
  return mesh;
}

/// Sub-mesh of the triangles whose barycenter lies in `sub`, with vertices
/// renumbered in first-use order.
inline TriMesh restrict_mesh(const TriMesh& mesh, const Rect& sub) {
  const double tol = 1e-12 * std::max(mesh.bounds.width(), mesh.bounds.height());
  std::vector<int> remap(mesh.vertices.size(), -1);
  TriMesh out;
  out.bounds = sub;
  out.h = mesh.h;
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    if (!sub.contains(mesh.barycenter(t), tol)) continue;
    Triangle tri;
    for (int i = 0; i < 3; ++i) {
      int& r = remap[mesh.triangles[t][i]];
      if (r < 0) {
        r = out.num_vertices();
        out.vertices.push_back(mesh.vertices[mesh.triangles[t][i]]);
      }
      tri[i] = r;
    }
    out.triangles.push_back(tri);
    out.triangle_tags.push_back(mesh.triangle_tags.empty() ? 0 : mesh.triangle_tags[t]);
  }
  if (out.triangles.empty()) throw Error("mesh", "restriction is empty");
  tag_boundary(out);
  return out;
}

// ---------------------------------------------------------------------------
// Plain-text node/element files: `x y` per vertex line, `i j k tag` per
// triangle line (0-based indices).

inline void write_nodes(const TriMesh& mesh, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("io", "cannot open " + path);
  os << std::setprecision(17);
  for (const auto& p : mesh.vertices) os << p.x() << ' ' << p.y() << '\n';
}

inline void write_elements(const TriMesh& mesh, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("io", "cannot open " + path);
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tr = mesh.triangles[t];
    os << tr[0] << ' ' << tr[1] << ' ' << tr[2] << ' ' << (mesh.triangle_tags.empty() ? 0 : mesh.triangle_tags[t])
       << '\n';
  }
}

inline TriMesh read_mesh(const std::string& nodes_path, const std::string& elements_path) {
  TriMesh mesh;
  std::ifstream ns(nodes_path);
  if (!ns) throw Error("io", "cannot open " + nodes_path);
  double x, y;
  mesh.bounds = {std::numeric_limits<double>::max(), std::numeric_limits<double>::lowest(),
                 std::numeric_limits<double>::max(), std::numeric_limits<double>::lowest()};
  while (ns >> x >> y) {
    mesh.vertices.emplace_back(x, y);
    mesh.bounds.xmin = std::min(mesh.bounds.xmin, x);
    mesh.bounds.xmax = std::max(mesh.bounds.xmax, x);
    mesh.bounds.ymin = std::min(mesh.bounds.ymin, y);
    mesh.bounds.ymax = std::max(mesh.bounds.ymax, y);
  }
  std::ifstream es(elements_path);
  if (!es) throw Error("io", "cannot open " + elements_path);
  std::string line;
  while (std::getline(es, line)) {
    std::istringstream ls(line);
    int a, b, c, tag = 0;
    if (!(ls >> a >> b >> c)) continue;
    ls >> tag;
    if (std::min({a, b, c}) < 0 || std::max({a, b, c}) >= mesh.num_vertices())
      throw Error("io", "element references unknown vertex in " + elements_path);
    mesh.triangles.push_back({a, b, c});
    mesh.triangle_tags.push_back(tag);
  }
  double hmax = 0.0;
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tr = mesh.triangles[t];
    for (int i = 0; i < 3; ++i) hmax = std::max(hmax, (mesh.vertices[tr[i]] - mesh.vertices[tr[(i + 1) % 3]]).norm());
  }
  mesh.h = hmax;
  tag_boundary(mesh);
  return mesh;
}

/// Bucket grid over triangle bounding boxes for point location.
class PointLocator {
 public:
  explicit PointLocator(const TriMesh& mesh) : mesh_(&mesh) {
    const Rect& b = mesh.bounds;
    const int nt = std::max(1, mesh.num_triangles());
    const int cells = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(nt) / 2.0)));
    nx_ = ny_ = cells;
    x0_ = b.xmin;
    y0_ = b.ymin;
    sx_ = std::max(b.width(), 1e-300) / nx_;
    sy_ = std::max(b.height(), 1e-300) / ny_;
    start_.assign(static_cast<std::size_t>(nx_) * ny_ + 1, 0);
    auto range = [&](int t, auto&& f) {
      const auto& tr = mesh.triangles[t];
      double xl = std::numeric_limits<double>::max(), xh = std::numeric_limits<double>::lowest();
      double yl = xl, yh = xh;
      for (int v : tr) {
        xl = std::min(xl, mesh.vertices[v].x());
        xh = std::max(xh, mesh.vertices[v].x());
        yl = std::min(yl, mesh.vertices[v].y());
        yh = std::max(yh, mesh.vertices[v].y());
      }
      const int i0 = clampx(xl), i1 = clampx(xh), j0 = clampy(yl), j1 = clampy(yh);
      for (int j = j0; j <= j1; ++j)
        for (int i = i0; i <= i1; ++i) f(j * nx_ + i);
    };
    for (int t = 0; t < mesh.num_triangles(); ++t) range(t, [&](int c) { ++start_[c + 1]; });
    for (std::size_t c = 1; c < start_.size(); ++c) start_[c] += start_[c - 1];
    items_.resize(start_.back());
    std::vector<int> fill(start_.begin(), start_.end() - 1);
    for (int t = 0; t < mesh.num_triangles(); ++t) range(t, [&](int c) { items_[fill[c]++] = t; });
  }

  struct Hit {
    int triangle;
    Eigen::Vector3d bary;
  };

  /// Triangle containing p (with a small relative tolerance) and its
  /// barycentric coordinates.
  std::optional<Hit> locate(const Point& p, double tol = 1e-10) const {
    const int i = static_cast<int>(std::floor((p.x() - x0_) / sx_));
    const int j = static_cast<int>(std::floor((p.y() - y0_) / sy_));
    std::optional<Hit> best;
    double best_min = -std::numeric_limits<double>::infinity();
    for (int jj = j - 1; jj <= j + 1; ++jj) {
      for (int ii = i - 1; ii <= i + 1; ++ii) {
        if (ii < 0 || jj < 0 || ii >= nx_ || jj >= ny_) continue;
        const int c = jj * nx_ + ii;
        for (int k = start_[c]; k < start_[c + 1]; ++k) {
          const int t = items_[k];
          const auto b = barycentric(t, p);
          const double mn = b.minCoeff();
          if (mn >= 0.0) return Hit{t, b};
          if (mn > best_min) {
            best_min = mn;
            best = Hit{t, b};
          }
        }
      }
    }
    if (best && best_min >= -tol) return best;
    return std::nullopt;
  }

  Eigen::Vector3d barycentric(int t, const Point& p) const {
    const auto& tr = mesh_->triangles[t];
    const Point& a = mesh_->vertices[tr[0]];
    const Point& b = mesh_->vertices[tr[1]];
    const Point& c = mesh_->vertices[tr[2]];
    const double area2 = orient2d(a, b, c);
    return {orient2d(p, b, c) / area2, orient2d(a, p, c) / area2, orient2d(a, b, p) / area2};
  }

 private:
  int clampx(double x) const { return std::clamp(static_cast<int>(std::floor((x - x0_) / sx_)), 0, nx_ - 1); }
  int clampy(double y) const { return std::clamp(static_cast<int>(std::floor((y - y0_) / sy_)), 0, ny_ - 1); }

  const TriMesh* mesh_;
  int nx_, ny_;
  double x0_, y0_, sx_, sy_;
  std::vector<int> start_;
  std::vector<int> items_;
};

}  // namespace rwf
