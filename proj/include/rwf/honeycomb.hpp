#pragma once

#include <cmath>
#include <numbers>
#include <unordered_map>
#include <vector>

#include "rwf/mesh.hpp"

namespace rwf {

struct HexCell {
  Point center;             // lattice center (may lie outside a clipped cell)
  std::vector<Point> ring;  // counterclockwise polygon after clipping
  double area = 0.0;
  bool clipped = false;
  Point centroid;           // centroid of the clipped polygon
};

/// Hexagonal tiling of a rectangle paired with its fan sub-triangulation.
/// Parameters live on `cells` (piecewise constant), test functions on
/// `sub_tri` (piecewise linear).
struct HoneycombPair {
  Rect domain;
  double h = 0.0;                // cell diameter (vertex to opposite vertex)
  double full_cell_area = 0.0;
  std::vector<HexCell> cells;
  TriMesh sub_tri;
  std::vector<int> cell_of_triangle;

  int num_cells() const { return static_cast<int>(cells.size()); }

  std::vector<double> cell_areas() const {
    std::vector<double> a(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) a[i] = cells[i].area;
    return a;
  }

  /// Cell-average of a per-triangle field on sub_tri.
  Eigen::VectorXd average_to_cells(const Eigen::VectorXd& per_triangle) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(num_cells());
    Eigen::VectorXd area = Eigen::VectorXd::Zero(num_cells());
    for (int t = 0; t < sub_tri.num_triangles(); ++t) {
      const double a = sub_tri.signed_area(t);
      out[cell_of_triangle[t]] += a * per_triangle[t];
      area[cell_of_triangle[t]] += a;
    }
    return out.cwiseQuotient(area);
  }

  /// Piecewise-constant cell values seen as per-triangle values.
  Eigen::VectorXd prolong_to_triangles(const Eigen::VectorXd& per_cell) const {
    Eigen::VectorXd out(sub_tri.num_triangles());
    for (int t = 0; t < sub_tri.num_triangles(); ++t) out[t] = per_cell[cell_of_triangle[t]];
    return out;
  }
};

inline double regular_hexagon_area(double diameter) {
  const double r = 0.5 * diameter;
  return 1.5 * std::numbers::sqrt3 * r * r;
}

namespace detail {

/// Merges coincident points (within tol) into shared vertex indices.
class VertexWelder {
 public:
  VertexWelder(std::vector<Point>& pts, double tol) : pts_(pts), tol_(tol), inv_(1.0 / (4.0 * tol)) {}

  int add(const Point& p) {
    const long long ix = static_cast<long long>(std::floor(p.x() * inv_));
    const long long iy = static_cast<long long>(std::floor(p.y() * inv_));
    for (long long dy = -1; dy <= 1; ++dy) {
      for (long long dx = -1; dx <= 1; ++dx) {
        auto it = bins_.find(key(ix + dx, iy + dy));
        if (it == bins_.end()) continue;
        for (int v : it->second)
          if ((pts_[v] - p).norm() <= tol_) return v;
      }
    }
    const int v = static_cast<int>(pts_.size());
    pts_.push_back(p);
    bins_[key(ix, iy)].push_back(v);
    return v;
  }

 private:
  static long long key(long long x, long long y) { return x * 73856093LL ^ y * 19349663LL; }

  std::vector<Point>& pts_;
  double tol_;
  double inv_;
  std::unordered_map<long long, std::vector<int>> bins_;
};

}  // namespace detail

/// Flat-top hexagonal tiling of `domain` with cell diameter `h`, anchored so
/// that one cell is centered on the lower-left corner. Cells are clipped to
/// the domain and kept when at least `keep_fraction` of a full cell remains. Each
/// kept cell is fanned from its centroid; full cells give exactly six
/// triangles.
inline HoneycombPair generate_honeycomb(const Rect& domain, double h, double keep_fraction = 0.25) {
  if (!(h > 0.0) || !domain.valid()) throw Error("mesh", "honeycomb resolution must be positive");
  if (h > std::min(domain.width(), domain.height())) throw Error("mesh", "honeycomb resolution exceeds domain size");
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw Error("mesh", "keep fraction must lie in (0, 1]");

  const double r = 0.5 * h;
  const double dx = 1.5 * r;
  const double dy = std::numbers::sqrt3 * r;
  HoneycombPair pair;
  pair.domain = domain;
  pair.h = h;
  pair.full_cell_area = regular_hexagon_area(h);

  const int ni = static_cast<int>(std::ceil(domain.width() / dx)) + 1;
  const int nj = static_cast<int>(std::ceil(domain.height() / dy)) + 1;
  const double keep = keep_fraction * pair.full_cell_area * (1.0 - 1e-9);
  const double tol = 1e-9 * r;

  for (int i = -1; i <= ni; ++i) {
    for (int j = -1; j <= nj; ++j) {
      const Point c(domain.xmin + i * dx, domain.ymin + j * dy + ((i & 1) ? 0.5 * dy : 0.0));
      std::vector<Point> hex(6);
      for (int k = 0; k < 6; ++k) {
        const double a = k * std::numbers::pi / 3.0;
        hex[k] = c + r * Point(std::cos(a), std::sin(a));
      }
      std::vector<Point> poly = clip_to_rect(hex, domain);
      // Drop consecutive duplicates produced by vertices lying on the boundary.
      std::vector<Point> ring;
      for (const Point& p : poly)
        if (ring.empty() || (p - ring.back()).norm() > tol) ring.push_back(p);
      while (ring.size() > 1 && (ring.front() - ring.back()).norm() <= tol) ring.pop_back();
      if (ring.size() < 3) continue;
      const double area = polygon_area(ring);
      if (area < keep) continue;
      HexCell cell;
      cell.center = c;
      cell.ring = std::move(ring);
      cell.area = area;
      cell.clipped = std::abs(area - pair.full_cell_area) > 1e-9 * pair.full_cell_area;
      cell.centroid = cell.clipped ? polygon_centroid(cell.ring) : c;
      pair.cells.push_back(std::move(cell));
    }
  }

  TriMesh& sub = pair.sub_tri;
  sub.bounds = domain;
  sub.h = h;
  detail::VertexWelder weld(sub.vertices, tol);
  for (int ci = 0; ci < pair.num_cells(); ++ci) {
    const HexCell& cell = pair.cells[ci];
    const int center = weld.add(cell.centroid);
    std::vector<int> ids;
    ids.reserve(cell.ring.size());
    for (const Point& p : cell.ring) ids.push_back(weld.add(p));
    for (std::size_t k = 0; k < ids.size(); ++k) {
      sub.triangles.push_back({center, ids[k], ids[(k + 1) % ids.size()]});
      sub.triangle_tags.push_back(ci);
      pair.cell_of_triangle.push_back(ci);
    }
  }
  tag_boundary(sub);
  return pair;
}

}  // namespace rwf
