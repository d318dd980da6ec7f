#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "rwf/characteristics.hpp"
#include "rwf/inverse_solver.hpp"
#include "rwf/vtk.hpp"

namespace rwf {

namespace pt = boost::property_tree;

// ---------------------------------------------------------------------------
// Scenario

struct Scenario {
  std::string name = "scenario";

  std::string basis_name = "single";
  std::string basis_file;
  ExactParamField phantom;

  Rect forward_domain = default_domain();
  double forward_h = 5e-3;
  std::uint64_t mesh_seed = kDefaultMeshSeed;
  std::vector<BoundaryCondition> drives{BoundaryCondition{}};
  std::vector<double> omegas;  // empty: static fields

  Rect inversion_domain = default_subdomain();
  double inversion_h = 0.02;
  double keep_fraction = 0.25;  // boundary cells smaller than this share of a full cell are dropped
  double noise = 0.0;
  std::uint64_t noise_seed = 1;
  int m = 0;  // 0: every field

  int eigen_count = 10;
  double eigen_tol = 1e-8;
  int max_iterations = 5000;

  std::string output_dir;
  bool write_vtk = true;

  bool harmonic() const { return !omegas.empty(); }
  int field_count() const {
    return static_cast<int>(drives.size() * (omegas.empty() ? 1 : omegas.size()));
  }
  int used_fields() const { return m > 0 ? m : field_count(); }
  ElasticBasis basis() const { return make_basis(basis_name, basis_file); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double parse_number(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error("config", "invalid number '" + s + "' in " + what);
  }
}

/// Comma list; '_' stands for "inherit" (NaN) when allowed.
inline std::vector<double> parse_list(const std::string& s, const std::string& what, bool allow_inherit = false) {
  std::vector<double> out;
  for (const auto& item : split(s, ',')) {
    if (allow_inherit && item == "_") out.push_back(std::numeric_limits<double>::quiet_NaN());
    else out.push_back(parse_number(item, what));
  }
  return out;
}

inline Vector to_vector(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), v.size()); }

inline Rect parse_rect(const std::string& s, const std::string& what) {
  const auto v = parse_list(s, what);
  if (v.size() != 4) throw Error("config", what + " needs xmin,xmax,ymin,ymax");
  const Rect r{v[0], v[1], v[2], v[3]};
  if (!r.valid()) throw Error("config", what + " is empty");
  return r;
}

/// "disk center=x,y radius=r values=a,b" or "rect box=x0,x1,y0,y1 values=a,b".
inline Region parse_region(const std::string& spec, const std::string& key) {
  std::istringstream is(spec);
  std::string shape, token;
  is >> shape;
  Region r;
  if (shape == "disk") r.shape = Region::Shape::disk;
  else if (shape == "rect") r.shape = Region::Shape::rect;
  else throw Error("config", key + ": unknown shape '" + shape + "'");
  bool have_values = false, have_geometry = false;
  while (is >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw Error("config", key + ": expected key=value, got '" + token + "'");
    const std::string k = token.substr(0, eq), v = token.substr(eq + 1);
    if (k == "center") {
      const auto c = parse_list(v, key);
      if (c.size() != 2) throw Error("config", key + ": center needs two numbers");
      r.center = Point(c[0], c[1]);
      have_geometry = true;
    } else if (k == "radius") {
      r.radius = parse_number(v, key);
      if (!(r.radius > 0.0)) throw Error("config", key + ": radius must be positive");
    } else if (k == "box") {
      r.box = parse_rect(v, key);
      have_geometry = true;
    } else if (k == "values") {
      r.values = to_vector(parse_list(v, key, true));
      have_values = true;
    } else {
      throw Error("config", key + ": unknown attribute '" + k + "'");
    }
  }
  if (!have_values || !have_geometry) throw Error("config", key + ": geometry and values are required");
  if (r.shape == Region::Shape::disk && !(r.radius > 0.0)) throw Error("config", key + ": disk needs a radius");
  return r;
}

/// "clamp>drive:gx,gy", e.g. "bottom>top:1,-0.5".
inline BoundaryCondition parse_drive(const std::string& s) {
  const auto colon = s.find(':');
  const auto gt = s.find('>');
  if (colon == std::string::npos || gt == std::string::npos || gt > colon)
    throw Error("config", "drive '" + s + "' must read clamp>drive:gx,gy");
  const auto clamp = parse_side(trim(s.substr(0, gt)));
  const auto drive = parse_side(trim(s.substr(gt + 1, colon - gt - 1)));
  if (!clamp || !drive || *clamp == Side::free || *drive == Side::free)
    throw Error("config", "drive '" + s + "' names an unknown side");
  if (*clamp == *drive) throw Error("config", "drive '" + s + "' clamps and drives the same side");
  const auto g = parse_list(s.substr(colon + 1), "drive");
  if (g.size() != 2) throw Error("config", "drive '" + s + "' needs two displacement components");
  return {*clamp, *drive, Eigen::Vector2d(g[0], g[1])};
}

inline std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string format_list(const Vector& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::isnan(v[i]) ? std::string("_") : format_number(v[i]);
  }
  return s;
}

inline std::string format_rect(const Rect& r) {
  return format_number(r.xmin) + ',' + format_number(r.xmax) + ',' + format_number(r.ymin) + ',' + format_number(r.ymax);
}

inline std::string format_drive(const BoundaryCondition& bc) {
  return std::string(side_name(bc.clamp)) + '>' + side_name(bc.drive) + ':' + format_number(bc.g.x()) + ',' +
         format_number(bc.g.y());
}

}  // namespace detail

inline void validate(const Scenario& s) {
  const ElasticBasis basis = s.basis();
  if (s.phantom.size() != basis.size())
    throw Error("config", "background needs " + std::to_string(basis.size()) + " values for basis " + s.basis_name);
  if (!s.phantom.background.allFinite()) throw Error("config", "background values must be finite");
  for (const auto& r : s.phantom.regions)
    if (r.values.size() != basis.size()) throw Error("config", "inclusion values do not match the basis size");
  if (!(s.forward_h > 0.0) || !(s.inversion_h > 0.0)) throw Error("config", "mesh sizes must be positive");
  if (!(s.keep_fraction > 0.0 && s.keep_fraction <= 1.0)) throw Error("config", "keep_fraction must lie in (0, 1]");
  if (!s.forward_domain.strictly_contains(s.inversion_domain))
    throw Error("config", "inversion region must lie strictly inside the forward domain");
  if (s.drives.empty()) throw Error("config", "at least one drive is required");
  for (double w : s.omegas)
    if (!(w > 0.0)) throw Error("config", "frequencies must be positive");
  if (s.m < 0 || s.m > s.field_count())
    throw Error("config", "m = " + std::to_string(s.m) + " exceeds the " + std::to_string(s.field_count()) +
                              " forward solves defined");
  if (!(s.noise >= 0.0)) throw Error("config", "noise level must be non-negative");
  if (s.eigen_count < 2) throw Error("config", "eigen_count must be at least 2");
}

/// Relative basis files resolve against `base`.
inline Scenario parse_scenario(std::istream& is, const std::string& default_name = "scenario",
                               const std::filesystem::path& base = {}) {
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error("config", e.what());
  }
  Scenario s;
  s.name = default_name;
  auto get = [&](const std::string& path) { return tree.get_optional<std::string>(path); };
  auto number = [&](const std::string& path, double fallback) {
    const auto v = get(path);
    return v ? detail::parse_number(detail::trim(*v), path) : fallback;
  };
  auto integer = [&](const std::string& path, long long fallback) {
    const double v = number(path, static_cast<double>(fallback));
    if (v != std::floor(v)) throw Error("config", path + " must be an integer");
    return static_cast<long long>(v);
  };

  for (const auto& [section, _] : tree)
    if (section != "phantom" && section != "forward" && section != "inversion" && section != "output" &&
        section != "probe")
      throw Error("config", "unknown section [" + section + "]");

  if (const auto v = get("output.name")) s.name = detail::trim(*v);
  if (const auto v = get("phantom.basis")) s.basis_name = detail::trim(*v);
  if (const auto v = get("phantom.basis_file")) {
    const std::filesystem::path f(detail::trim(*v));
    s.basis_file = (f.is_relative() && !base.empty() ? base / f : f).string();
  }
  const auto background = get("phantom.background");
  if (!background) throw Error("config", "phantom.background is required");
  s.phantom.background = detail::to_vector(detail::parse_list(*background, "phantom.background"));
  if (const auto ph = tree.get_child_optional("phantom")) {
    std::map<int, Region> ordered;
    for (const auto& [key, node] : *ph) {
      if (key.rfind("inclusion", 0) != 0) {
        if (key != "basis" && key != "basis_file" && key != "background")
          throw Error("config", "unknown key phantom." + key);
        continue;
      }
      const std::string index = key.substr(9);
      int idx = 0;
      try {
        idx = std::stoi(index);
      } catch (const std::exception&) {
        throw Error("config", "inclusion keys must be numbered: " + key);
      }
      ordered[idx] = detail::parse_region(node.data(), key);
    }
    for (auto& [_, r] : ordered) s.phantom.regions.push_back(std::move(r));
  }

  s.forward_h = number("forward.h", s.forward_h);
  s.mesh_seed = static_cast<std::uint64_t>(integer("forward.seed", static_cast<long long>(s.mesh_seed)));
  if (const auto v = get("forward.domain")) s.forward_domain = detail::parse_rect(*v, "forward.domain");
  if (const auto v = get("forward.drives")) {
    s.drives.clear();
    for (const auto& d : detail::split(*v, ';')) s.drives.push_back(detail::parse_drive(d));
  }
  if (const auto v = get("forward.omegas")) s.omegas = detail::parse_list(*v, "forward.omegas");

  s.inversion_h = number("inversion.h", s.inversion_h);
  if (const auto v = get("inversion.domain")) s.inversion_domain = detail::parse_rect(*v, "inversion.domain");
  s.keep_fraction = number("inversion.keep_fraction", s.keep_fraction);
  s.noise = number("inversion.noise", s.noise);
  s.noise_seed = static_cast<std::uint64_t>(integer("inversion.noise_seed", static_cast<long long>(s.noise_seed)));
  s.m = static_cast<int>(integer("inversion.m", s.m));
  s.eigen_count = static_cast<int>(integer("inversion.eigen_count", s.eigen_count));
  s.eigen_tol = number("inversion.eigen_tol", s.eigen_tol);
  s.max_iterations = static_cast<int>(integer("inversion.max_iterations", s.max_iterations));

  if (const auto v = get("output.dir")) s.output_dir = detail::trim(*v);
  if (const auto v = get("output.write_vtk")) {
    const std::string w = detail::trim(*v);
    if (w != "true" && w != "false") throw Error("config", "output.write_vtk must be true or false");
    s.write_vtk = w == "true";
  }
  if (s.output_dir.empty()) s.output_dir = s.name;
  validate(s);
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("config", "cannot open " + path);
  const std::filesystem::path p(path);
  return parse_scenario(is, p.stem().string(), p.parent_path());
}

/// Re-runnable configuration text of a scenario.
inline std::string to_ini(const Scenario& s) {
  using detail::format_number;
  std::ostringstream os;
  os << "[phantom]\nbasis = " << s.basis_name << '\n';
  if (!s.basis_file.empty()) os << "basis_file = " << s.basis_file << '\n';
  os << "background = " << detail::format_list(s.phantom.background) << '\n';
  for (std::size_t i = 0; i < s.phantom.regions.size(); ++i) {
    const Region& r = s.phantom.regions[i];
    os << "inclusion" << i + 1 << " = ";
    if (r.shape == Region::Shape::disk)
      os << "disk center=" << format_number(r.center.x()) << ',' << format_number(r.center.y())
         << " radius=" << format_number(r.radius);
    else
      os << "rect box=" << detail::format_rect(r.box);
    os << " values=" << detail::format_list(r.values) << '\n';
  }
  os << "\n[forward]\nh = " << format_number(s.forward_h) << "\nseed = " << s.mesh_seed
     << "\ndomain = " << detail::format_rect(s.forward_domain) << "\ndrives = ";
  for (std::size_t i = 0; i < s.drives.size(); ++i) os << (i ? "; " : "") << detail::format_drive(s.drives[i]);
  os << '\n';
  if (!s.omegas.empty()) os << "omegas = " << detail::format_list(detail::to_vector(s.omegas)) << '\n';
  os << "\n[inversion]\nh = " << format_number(s.inversion_h) << "\ndomain = " << detail::format_rect(s.inversion_domain)
     << "\nkeep_fraction = " << format_number(s.keep_fraction) << "\nnoise = " << format_number(s.noise) << "\nnoise_seed = " << s.noise_seed << "\nm = " << s.used_fields()
     << "\neigen_count = " << s.eigen_count << "\neigen_tol = " << format_number(s.eigen_tol)
     << "\nmax_iterations = " << s.max_iterations << '\n';
  os << "\n[output]\nname = " << s.name << "\ndir = " << s.output_dir << "\nwrite_vtk = " << (s.write_vtk ? "true" : "false")
     << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Forward cache

/// Forward meshes and solutions shared across runs; thread safe.
class ForwardCache {
 public:
  std::shared_ptr<const TriMesh> mesh(const Rect& domain, double h, std::uint64_t seed) {
    const std::string key = detail::format_rect(domain) + '|' + detail::format_number(h) + '|' + std::to_string(seed);
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = meshes_.find(key);
    if (it != meshes_.end()) return it->second;
    auto m = std::make_shared<const TriMesh>(generate_triangular(domain, h, seed));
    meshes_[key] = m;
    return m;
  }

  /// Field `index` of the scenario: drive index % drives, frequency index / drives.
  VectorField field(const Scenario& s, int index) {
    const int nd = static_cast<int>(s.drives.size());
    const BoundaryCondition& bc = s.drives[index % nd];
    const double omega = s.omegas.empty() ? 0.0 : s.omegas[index / nd];
    std::ostringstream key;
    key << detail::format_rect(s.forward_domain) << '|' << detail::format_number(s.forward_h) << '|' << s.mesh_seed
        << '|' << s.basis_name << '|' << s.basis_file << '|' << detail::format_list(s.phantom.background);
    for (const auto& r : s.phantom.regions)
      key << '|' << static_cast<int>(r.shape) << ',' << detail::format_number(r.center.x()) << ','
          << detail::format_number(r.center.y()) << ',' << detail::format_number(r.radius) << ','
          << detail::format_rect(r.box) << ',' << detail::format_list(r.values);
    key << '|' << detail::format_drive(bc) << '|' << detail::format_number(omega);
    {
      std::lock_guard<std::mutex> lock(mutex_);
      auto it = fields_.find(key.str());
      if (it != fields_.end()) return it->second;
    }
    const auto m = mesh(s.forward_domain, s.forward_h, s.mesh_seed);
    const ElasticBasis basis = s.basis();
    VectorField u = omega == 0.0 ? solve_static(m, basis, s.phantom, bc) : solve_harmonic(m, basis, s.phantom, bc, omega);
    std::lock_guard<std::mutex> lock(mutex_);
    fields_.emplace(key.str(), u);
    return u;
  }

 private:
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const TriMesh>> meshes_;
  std::map<std::string, VectorField> fields_;
};

// ---------------------------------------------------------------------------
// Run

struct RunReport {
  std::string name;
  bool homogeneous = true;
  int m = 0;
  int params = 0;
  int cells = 0;
  std::vector<double> errors;  // percent per parameter
  double joint_error = 0.0;
  double scale = 1.0;
  std::vector<double> eigenvalues;
  std::vector<double> residuals;
  double gap = 0.0;
  int iterations = 0;
  bool eigen_converged = false;
  double max_condition = 0.0;
  double noise = 0.0;
  double inversion_h = 0.0;
  int omega_count = 0;
  std::vector<std::pair<std::string, double>> timings;
  std::string config;

  // Kept in memory only.
  Vector coefficients;
  Vector exact;
  std::shared_ptr<const HoneycombPair> pair;
  std::vector<double> condition;
};

inline nlohmann::json to_json(const RunReport& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["homogeneous"] = r.homogeneous;
  j["m"] = r.m;
  j["params"] = r.params;
  j["cells"] = r.cells;
  j["errors_percent"] = r.errors;
  j["joint_error_percent"] = r.joint_error;
  j["scale"] = r.scale;
  j["eigenvalues"] = r.eigenvalues;
  j["eigen_residuals"] = r.residuals;
  j["spectral_gap"] = r.gap;
  j["eigen_iterations"] = r.iterations;
  j["eigen_converged"] = r.eigen_converged;
  j["max_condition"] = std::isfinite(r.max_condition) ? nlohmann::json(r.max_condition) : nlohmann::json("inf");
  j["noise"] = r.noise;
  j["inversion_h"] = r.inversion_h;
  j["omega_count"] = r.omega_count;
  nlohmann::json t = nlohmann::json::object();
  for (const auto& [k, v] : r.timings) t[k] = v;
  j["timings_seconds"] = t;
  j["config"] = r.config;
  return j;
}

/// Runs one stage, rethrowing foreign exceptions under the stage name.
template <class F>
auto stage(const char* name, std::vector<std::pair<std::string, double>>& timings, F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  auto finish = [&] {
    timings.emplace_back(name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  };
  try {
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      finish();
    } else {
      auto r = f();
      finish();
      return r;
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(name, e.what());
  }
}

inline RunReport run_scenario(const Scenario& s, ForwardCache& cache) {
  validate(s);
  RunReport rep;
  rep.name = s.name;
  rep.config = to_ini(s);
  rep.noise = s.noise;
  rep.inversion_h = s.inversion_h;
  rep.omega_count = static_cast<int>(s.omegas.size());
  const ElasticBasis basis = s.basis();
  const int m = s.used_fields();
  rep.m = m;
  rep.params = basis.size();

  std::vector<VectorField> forward = stage("forward", rep.timings, [&] {
    std::vector<VectorField> f;
    for (int l = 0; l < m; ++l) f.push_back(cache.field(s, l));
    return f;
  });

  auto pair = stage("mesh", rep.timings, [&] {
    return std::make_shared<const HoneycombPair>(generate_honeycomb(s.inversion_domain, s.inversion_h, s.keep_fraction));
  });
  rep.pair = pair;
  rep.cells = pair->num_cells();

  DataSet data = stage("interpolate", rep.timings, [&] {
    DataSet d;
    for (int l = 0; l < m; ++l)
      d.fields.push_back(add_noise(interpolate_to_inversion(forward[l], pair), s.noise, s.noise_seed + l));
    if (s.harmonic()) {
      std::vector<double> w;
      for (int l = 0; l < m; ++l) w.push_back(s.omegas[l / s.drives.size()]);
      d.loads = harmonic_loads(d.fields, w);
    }
    return d;
  });

  RwfSystem sys = stage("assemble", rep.timings, [&] {
    const TuTensor T = assemble_T(data, basis);
    rep.condition = condition_map(T);
    rep.max_condition = 0.0;
    for (double c : rep.condition) rep.max_condition = std::max(rep.max_condition, c);
    return assemble_system(T, data, *pair);
  });
  rep.homogeneous = sys.homogeneous();

  const EigenOptions eo{s.eigen_count, s.eigen_tol, s.max_iterations};
  ReconstructedField recon = stage("solve", rep.timings, [&] {
    const NormalOperator op(sys);
    if (rep.homogeneous) {
      auto [f, diag] = solve_homogeneous(sys, op, eo);
      rep.eigenvalues = diag.eigenvalues;
      rep.residuals = diag.residuals;
      rep.iterations = diag.iterations;
      rep.eigen_converged = true;
      return f;
    }
    ReconstructedField f = solve_inhomogeneous(sys, op);
    const auto pairs = smallest_eigenpairs(op, sys, eo);
    rep.eigenvalues = pairs.diag.eigenvalues;
    rep.residuals = pairs.diag.residuals;
    rep.iterations = pairs.diag.iterations;
    rep.eigen_converged = pairs.converged;
    return f;
  });
  rep.gap = rep.eigenvalues.size() >= 2 ? std::max(0.0, rep.eigenvalues[1] - rep.eigenvalues[0]) : 0.0;

  stage("error", rep.timings, [&] {
    rep.exact = project_to_cells(s.phantom, *pair);
    const ErrorReport err = relative_error(recon, rep.exact, pair->cell_areas());
    rep.errors = err.per_parameter;
    rep.joint_error = err.joint;
    rep.scale = err.scale;
    rep.coefficients = recon.coeffs * err.scale;
  });
  return rep;
}

inline RunReport run_scenario(const Scenario& s) {
  ForwardCache cache;
  return run_scenario(s, cache);
}

// ---------------------------------------------------------------------------
// Output

inline std::string output_root() {
  const char* env = std::getenv("RWF_OUTPUT_ROOT");
  return env && *env ? std::string(env) : std::string("results");
}

namespace detail {

inline std::ofstream open_csv(const std::filesystem::path& p) {
  std::error_code ec;
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path(), ec);
  std::ofstream os(p);
  if (!os) throw Error("io", "cannot open " + p.string());
  os << std::setprecision(17);
  return os;
}

}  // namespace detail

inline void write_outputs(const RunReport& r, const Scenario& s, const std::filesystem::path& dir) {
  try {
    std::filesystem::create_directories(dir);
  } catch (const std::exception& e) {
    throw Error("io", e.what());
  }
  const HoneycombPair& pair = *r.pair;
  const int nc = pair.num_cells();
  {
    auto os = detail::open_csv(dir / "eigenvalues.csv");
    os << "index,value\n";
    for (std::size_t i = 0; i < r.eigenvalues.size(); ++i) os << i + 1 << ',' << r.eigenvalues[i] << '\n';
  }
  {
    auto os = detail::open_csv(dir / "errors.csv");
    os << "parameter,percent\n";
    for (std::size_t k = 0; k < r.errors.size(); ++k) os << "mu_" << k + 1 << ',' << r.errors[k] << '\n';
    os << "joint," << r.joint_error << '\n';
  }
  auto map_table = [&](const std::string& file, const Vector& v) {
    auto os = detail::open_csv(dir / file);
    os << "cx,cy";
    for (int k = 0; k < r.params; ++k) os << ",mu_" << k + 1;
    os << '\n';
    for (int j = 0; j < nc; ++j) {
      os << pair.cells[j].centroid.x() << ',' << pair.cells[j].centroid.y();
      for (int k = 0; k < r.params; ++k) os << ',' << v[k * nc + j];
      os << '\n';
    }
  };
  map_table("reconstruction.csv", r.coefficients);
  map_table("exact.csv", r.exact);
  write_condition_csv(r.condition, pair.sub_tri, (dir / "condition.csv").string());
  if (s.write_vtk) {
    CellArrays arrays;
    for (int k = 0; k < r.params; ++k) {
      const Vector rec = r.coefficients.segment(k * nc, nc), ex = r.exact.segment(k * nc, nc);
      arrays.emplace_back("mu_" + std::to_string(k + 1), std::vector<double>(rec.data(), rec.data() + nc));
      arrays.emplace_back("exact_" + std::to_string(k + 1), std::vector<double>(ex.data(), ex.data() + nc));
    }
    write_vtk((dir / "reconstruction.vtk").string(), pair, arrays);
  }
  {
    std::ofstream os(dir / "report.json");
    if (!os) throw Error("io", "cannot write report.json");
    os << std::setw(2) << to_json(r) << '\n';
  }
  {
    std::ofstream os(dir / "config.ini");
    os << r.config;
  }
}

/// Writes the assembled system of the scenario as Matrix Market files.
inline RwfSystem export_matrices(const Scenario& s, ForwardCache& cache, const std::filesystem::path& dir) {
  const ElasticBasis basis = s.basis();
  const auto pair = std::make_shared<const HoneycombPair>(generate_honeycomb(s.inversion_domain, s.inversion_h, s.keep_fraction));
  DataSet d;
  std::vector<double> w;
  for (int l = 0; l < s.used_fields(); ++l) {
    d.fields.push_back(add_noise(interpolate_to_inversion(cache.field(s, l), pair), s.noise, s.noise_seed + l));
    if (s.harmonic()) w.push_back(s.omegas[l / s.drives.size()]);
  }
  if (s.harmonic()) d.loads = harmonic_loads(d.fields, w);
  const TuTensor T = assemble_T(d, basis);
  RwfSystem sys = assemble_system(T, d, *pair);
  try {
    std::filesystem::create_directories(dir);
  } catch (const std::exception& e) {
    throw Error("io", e.what());
  }
  export_matrix_market(sys, dir.string());
  write_condition_csv(condition_map(T), pair->sub_tri, (dir / "condition.csv").string());
  return sys;
}

// ---------------------------------------------------------------------------
// Sweep

enum class SweepAxis { m, omega_count, noise, h };

inline SweepAxis parse_axis(const std::string& s) {
  if (s == "m") return SweepAxis::m;
  if (s == "omega_count") return SweepAxis::omega_count;
  if (s == "noise") return SweepAxis::noise;
  if (s == "h") return SweepAxis::h;
  throw Error("config", "unknown sweep axis '" + s + "' (m, omega_count, noise, h)");
}

inline Scenario with_axis(Scenario s, SweepAxis axis, double value) {
  auto as_count = [&](const char* what) {
    if (value != std::floor(value) || value < 1) throw Error("config", std::string(what) + " values must be positive integers");
    return static_cast<int>(value);
  };
  switch (axis) {
    case SweepAxis::m: s.m = as_count("m"); break;
    case SweepAxis::omega_count: {
      const int k = as_count("omega_count");
      if (k > static_cast<int>(s.omegas.size())) throw Error("config", "omega_count exceeds the listed frequencies");
      s.omegas.resize(k);
      s.m = 0;
      break;
    }
    case SweepAxis::noise: s.noise = value; break;
    case SweepAxis::h: s.inversion_h = value; break;
  }
  validate(s);
  return s;
}

/// One run per axis value; entries share forward solves and run on a pool of
/// `threads` workers (0: hardware concurrency).
inline std::vector<RunReport> sweep(const Scenario& base, SweepAxis axis, const std::vector<double>& values,
                                    ForwardCache& cache, unsigned threads = 0) {
  if (values.empty()) throw Error("config", "sweep needs at least one value");
  std::vector<Scenario> runs;
  for (double v : values) runs.push_back(with_axis(base, axis, v));
  // Forward solves first, so workers only read the cache.
  std::vector<std::pair<std::string, double>> timings;
  for (const auto& s : runs)
    for (int l = 0; l < s.used_fields(); ++l) stage("forward", timings, [&] { cache.field(s, l); });

  std::vector<RunReport> out(runs.size());
  std::vector<std::exception_ptr> errors(runs.size());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(runs.size()));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      try {
        out[i] = run_scenario(runs[i], cache);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline void write_sweep_table(const std::vector<RunReport>& reports, const std::string& axis,
                              const std::vector<double>& values, const std::filesystem::path& path) {
  auto os = detail::open_csv(path);
  const int n = reports.empty() ? 0 : reports.front().params;
  os << axis << ",fields";
  for (int k = 0; k < n; ++k) os << ",error_mu_" << k + 1;
  os << ",error_joint,alpha_1,alpha_2,gap,max_condition\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const RunReport& r = reports[i];
    os << values[i] << ',' << r.m;
    for (double e : r.errors) os << ',' << e;
    os << ',' << r.joint_error << ',' << (r.eigenvalues.size() > 0 ? r.eigenvalues[0] : 0.0) << ','
       << (r.eigenvalues.size() > 1 ? r.eigenvalues[1] : 0.0) << ',' << r.gap << ',' << r.max_condition << '\n';
  }
}

// ---------------------------------------------------------------------------
// Conservativity probe

struct ProbeConfig {
  std::string name = "probe";
  std::string field = "zero";  // zero | matrix | mixed | data
  int n = 2;
  int k = 0;                    // conservative components of the mixed stack
  std::uint64_t seed = 1;       // matrix field coefficients
  std::vector<Point> points{Point(0.0, 0.0)};
  double radius = 0.2;
  double tol = 1e-6;
  int steps = 64;
  std::vector<std::string> loop_files;  // waypoint CSVs; override generated loops
  std::optional<Scenario> scenario;     // field = data
  std::string output_dir;
};

inline ProbeConfig parse_probe(std::istream& is, const std::string& default_name = "probe") {
  std::stringstream buffer;
  buffer << is.rdbuf();
  pt::ptree tree;
  try {
    std::istringstream copy(buffer.str());
    pt::read_ini(copy, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error("config", e.what());
  }
  if (!tree.get_child_optional("probe")) throw Error("config", "missing [probe] section");
  ProbeConfig c;
  c.name = tree.get<std::string>("output.name", default_name);
  const pt::ptree& p = tree.get_child("probe");
  for (const auto& [key, _] : p)
    if (key != "field" && key != "n" && key != "k" && key != "seed" && key != "points" && key != "radius" &&
        key != "tol" && key != "steps" && key != "loops")
      throw Error("config", "unknown key probe." + key);
  auto number = [&](const char* key, double fallback) {
    const auto v = p.get_optional<std::string>(key);
    return v ? detail::parse_number(detail::trim(*v), std::string("probe.") + key) : fallback;
  };
  c.field = detail::trim(p.get<std::string>("field", c.field));
  c.n = static_cast<int>(number("n", c.n));
  c.k = static_cast<int>(number("k", c.k));
  c.seed = static_cast<std::uint64_t>(number("seed", static_cast<double>(c.seed)));
  c.radius = number("radius", c.radius);
  c.tol = number("tol", c.tol);
  c.steps = static_cast<int>(number("steps", c.steps));
  if (const auto v = p.get_optional<std::string>("points")) {
    c.points.clear();
    for (const auto& item : detail::split(*v, ';')) {
      const auto xy = detail::parse_list(item, "probe.points");
      if (xy.size() != 2) throw Error("config", "probe point '" + item + "' needs two coordinates");
      c.points.emplace_back(xy[0], xy[1]);
    }
  }
  if (const auto v = p.get_optional<std::string>("loops")) c.loop_files = detail::split(*v, ';');

  if (c.field == "data") {
    std::istringstream copy(buffer.str());
    c.scenario = parse_scenario(copy, c.name);
    c.n = c.scenario->basis().size();
  } else if (c.field != "zero" && c.field != "matrix" && c.field != "mixed") {
    throw Error("config", "unknown probe field '" + c.field + "' (zero, matrix, mixed, data)");
  }
  if (c.n < 1) throw Error("config", "probe.n must be positive");
  if (c.field == "mixed" && (c.k < 0 || c.k > c.n)) throw Error("config", "probe.k must lie in [0, n]");
  if (!(c.radius > 0.0) || !(c.tol > 0.0) || c.steps < 1) throw Error("config", "probe radius, tol and steps must be positive");
  if (c.points.empty()) throw Error("config", "probe needs at least one point");
  c.output_dir = tree.get<std::string>("output.dir", c.name);
  return c;
}

inline ProbeConfig load_probe(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("config", "cannot open " + path);
  ProbeConfig c = parse_probe(is, std::filesystem::path(path).stem().string());
  const auto base = std::filesystem::path(path).parent_path();
  for (auto& f : c.loop_files)
    if (std::filesystem::path(f).is_relative()) f = (base / f).string();
  return c;
}

/// B for the probe: analytic constructors, or the per-triangle expanded form
/// of the scenario's data on the inversion sub-triangulation.
inline ThirdOrderField probe_field(const ProbeConfig& c, ForwardCache& cache) {
  if (c.field == "zero") return ThirdOrderField::zero(c.n);
  if (c.field == "matrix") return field_from_matrix(smooth_matrix_field(c.n, c.seed));
  if (c.field == "mixed") return mixed_diagonal_field(c.n, c.k);
  const Scenario& s = *c.scenario;
  const auto pair = std::make_shared<const HoneycombPair>(generate_honeycomb(s.inversion_domain, s.inversion_h, s.keep_fraction));
  DataSet d;
  std::vector<double> w;
  for (int l = 0; l < s.used_fields(); ++l) {
    d.fields.push_back(add_noise(interpolate_to_inversion(cache.field(s, l), pair), s.noise, s.noise_seed + l));
    if (s.harmonic()) w.push_back(s.omegas[l / s.drives.size()]);
  }
  const TuTensor T = assemble_T(d, s.basis());
  auto [b, f] = expanded_form(T, pair->sub_tri);
  ThirdOrderField field = ThirdOrderField::piecewise(sub_mesh(pair), std::move(b));
  field.domain = s.inversion_domain;
  return field;
}

struct ProbeResult {
  Point x;
  ConservativityReport report;
};

inline std::vector<ProbeResult> run_probe(const ProbeConfig& c, ForwardCache& cache) {
  const ThirdOrderField b = probe_field(c, cache);
  std::vector<ProbeResult> out;
  if (!c.loop_files.empty()) {
    std::vector<PathCurve> loops;
    for (const auto& f : c.loop_files) loops.push_back(read_waypoints_csv(f));
    for (const auto& l : loops) l.validate(b.domain);
    out.push_back({loops.front().start(), conservativity_probe(b, loops.front().start(), loops, c.tol, c.steps)});
    return out;
  }
  for (const Point& x : c.points) {
    const auto loops = standard_loops(x, b.domain, c.radius);
    out.push_back({x, conservativity_probe(b, x, loops, c.tol, c.steps)});
  }
  return out;
}

inline void write_probe(const std::vector<ProbeResult>& results, const ProbeConfig& c, const std::filesystem::path& dir) {
  try {
    std::filesystem::create_directories(dir);
  } catch (const std::exception& e) {
    throw Error("io", e.what());
  }
  auto os = detail::open_csv(dir / "probe.csv");
  os << "point,x,y,k,n,threshold";
  for (int i = 0; i < c.n; ++i) os << ",sigma_" << i + 1;
  os << '\n';
  std::ofstream txt(dir / "probe.txt");
  txt << std::setprecision(17);
  for (std::size_t p = 0; p < results.size(); ++p) {
    const auto& [x, r] = results[p];
    os << p + 1 << ',' << x.x() << ',' << x.y() << ',' << r.k << ',' << c.n << ',' << r.threshold;
    for (Eigen::Index i = 0; i < r.singular_values.size(); ++i) os << ',' << r.singular_values[i];
    os << '\n';
    txt << "point " << p + 1 << " (" << x.x() << ", " << x.y() << ")\nk = " << r.k << " of n = " << c.n
        << "\nthreshold = " << r.threshold << "\nsingular values:";
    for (Eigen::Index i = 0; i < r.singular_values.size(); ++i) txt << ' ' << r.singular_values[i];
    txt << "\nloop defects:";
    for (double d : r.loop_defects) txt << ' ' << d;
    txt << "\nbasis of fixed subspace (columns):\n";
    for (Eigen::Index i = 0; i < r.basis.rows(); ++i) {
      for (Eigen::Index j = 0; j < r.basis.cols(); ++j) txt << (j ? " " : "  ") << r.basis(i, j);
      txt << '\n';
    }
    txt << '\n';
  }
}

}  // namespace rwf
