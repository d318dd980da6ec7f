#pragma once

#include <fstream>
#include <iomanip>
#include <string>
#include <utility>
#include <vector>

#include "rwf/honeycomb.hpp"

namespace rwf {

using CellArrays = std::vector<std::pair<std::string, std::vector<double>>>;

namespace detail {

inline void write_cell_data(std::ostream& os, std::size_t cells, const CellArrays& arrays) {
  if (arrays.empty()) return;
  os << "CELL_DATA " << cells << '\n';
  for (const auto& [name, values] : arrays) {
    if (values.size() != cells) throw Error("io", "cell array '" + name + "' has the wrong length");
    os << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
    for (double v : values) os << v << '\n';
  }
}

}  // namespace detail

/// Legacy ASCII unstructured grid of triangles, with an optional nodal
/// displacement field (interleaved x, y) and per-triangle scalars.
inline void write_vtk(const std::string& path, const TriMesh& mesh, const Eigen::VectorXd& displacement = {},
                      const CellArrays& cell_data = {}) {
  std::ofstream os(path);
  if (!os) throw Error("io", "cannot open " + path);
  os << std::setprecision(17);
  os << "# vtk DataFile Version 3.0\nrwf\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  os << "POINTS " << mesh.num_vertices() << " double\n";
  for (const auto& p : mesh.vertices) os << p.x() << ' ' << p.y() << " 0\n";
  os << "CELLS " << mesh.num_triangles() << ' ' << 4 * mesh.num_triangles() << '\n';
  for (const auto& t : mesh.triangles) os << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  os << "CELL_TYPES " << mesh.num_triangles() << '\n';
  for (int t = 0; t < mesh.num_triangles(); ++t) os << "5\n";
  detail::write_cell_data(os, mesh.triangles.size(), cell_data);
  if (displacement.size() == 2 * mesh.num_vertices()) {
    os << "POINT_DATA " << mesh.num_vertices() << "\nVECTORS displacement double\n";
    for (int v = 0; v < mesh.num_vertices(); ++v) os << displacement[2 * v] << ' ' << displacement[2 * v + 1] << " 0\n";
  }
}

/// Hexagonal cells of a honeycomb as VTK polygons with per-cell scalars.
inline void write_vtk(const std::string& path, const HoneycombPair& pair, const CellArrays& cell_data) {
  std::ofstream os(path);
  if (!os) throw Error("io", "cannot open " + path);
  os << std::setprecision(17);
  std::size_t npts = 0;
  for (const auto& c : pair.cells) npts += c.ring.size();
  os << "# vtk DataFile Version 3.0\nrwf\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  os << "POINTS " << npts << " double\n";
  for (const auto& c : pair.cells)
    for (const auto& p : c.ring) os << p.x() << ' ' << p.y() << " 0\n";
  os << "CELLS " << pair.cells.size() << ' ' << npts + pair.cells.size() << '\n';
  std::size_t next = 0;
  for (const auto& c : pair.cells) {
    os << c.ring.size();
    for (std::size_t k = 0; k < c.ring.size(); ++k) os << ' ' << next++;
    os << '\n';
  }
  os << "CELL_TYPES " << pair.cells.size() << '\n';
  for (std::size_t c = 0; c < pair.cells.size(); ++c) os << "7\n";
  detail::write_cell_data(os, pair.cells.size(), cell_data);
}

}  // namespace rwf
