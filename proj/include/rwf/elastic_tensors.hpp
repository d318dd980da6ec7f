#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "rwf/error.hpp"

namespace rwf {

using Matrix2 = Eigen::Matrix2d;
using Voigt3 = Eigen::Matrix3d;

// Voigt convention used throughout: strains are (E11, E22, 2 E12) and
// stresses (S11, S22, S12). The third slot is always the shear slot.

inline Eigen::Vector3d strain_to_voigt(const Matrix2& e) { return {e(0, 0), e(1, 1), 2.0 * e(0, 1)}; }
inline Matrix2 stress_from_voigt(const Eigen::Vector3d& s) {
  Matrix2 m;
  m << s[0], s[2], s[2], s[1];
  return m;
}

/// Dense 2x2x2x2 tensor, index (i, j, k, l) -> i*8 + j*4 + k*2 + l.
using Dense4 = std::array<double, 16>;

/// Constant fourth-order elastic tensor with minor and major symmetries,
/// stored in Voigt form.
class SymTensor4 {
 public:
  SymTensor4() : voigt_(Voigt3::Zero()) {}
  explicit SymTensor4(const Voigt3& v) : voigt_(v) {
    if ((v - v.transpose()).cwiseAbs().maxCoeff() > 1e-14 * (1.0 + v.cwiseAbs().maxCoeff()))
      throw Error("tensor", "Voigt matrix must be symmetric");
  }

  const Voigt3& voigt() const { return voigt_; }

  SymTensor4 operator+(const SymTensor4& o) const { return SymTensor4(voigt_ + o.voigt_); }
  SymTensor4 operator*(double a) const { return SymTensor4(a * voigt_); }

  /// Frobenius inner product of the Voigt matrices.
  double frobenius(const SymTensor4& o) const { return (voigt_.array() * o.voigt_.array()).sum(); }

  Dense4 to_dense() const {
    // Voigt slot of the index pair (i, j).
    static constexpr int slot[2][2] = {{0, 2}, {2, 1}};
    Dense4 c{};
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k)
          for (int l = 0; l < 2; ++l) c[i * 8 + j * 4 + k * 2 + l] = voigt_(slot[i][j], slot[k][l]);
    return c;
  }

  static SymTensor4 from_dense(const Dense4& c) {
    static constexpr int pairs[3][2] = {{0, 0}, {1, 1}, {0, 1}};
    Voigt3 v;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        v(a, b) = c[pairs[a][0] * 8 + pairs[a][1] * 4 + pairs[b][0] * 2 + pairs[b][1]];
    return SymTensor4(v);
  }

 private:
  Voigt3 voigt_;
};

/// sigma = C : E for symmetric E.
inline Matrix2 contract(const SymTensor4& c, const Matrix2& e) {
  if (std::abs(e(0, 1) - e(1, 0)) > 1e-12 * (1.0 + e.norm())) throw Error("tensor", "strain must be symmetric");
  return stress_from_voigt(c.voigt() * strain_to_voigt(e));
}

struct ElasticBasis {
  std::string name;
  std::vector<SymTensor4> tensors;

  int size() const { return static_cast<int>(tensors.size()); }

  /// C = sum_k coeffs[k] C_k.
  SymTensor4 combine(const Eigen::VectorXd& coeffs) const {
    if (coeffs.size() != size()) throw Error("tensor", "coefficient count does not match basis size");
    Voigt3 v = Voigt3::Zero();
    for (int k = 0; k < size(); ++k) v += coeffs[k] * tensors[k].voigt();
    return SymTensor4(v);
  }
};

/// Fourth-order identity: I : E = E.
inline SymTensor4 identity_tensor() {
  Voigt3 v = Voigt3::Zero();
  v(0, 0) = v(1, 1) = 1.0;
  v(2, 2) = 0.5;
  return SymTensor4(v);
}

/// I (x) I : E = tr(E) I.
inline SymTensor4 trace_tensor() {
  Voigt3 v = Voigt3::Zero();
  v.topLeftCorner<2, 2>().setOnes();
  return SymTensor4(v);
}

/// Single shear-modulus-like parameter: C = mu I.
inline ElasticBasis make_single_basis() { return {"single", {identity_tensor()}}; }

/// Lame model C = mu (2 I) + lambda (I (x) I), ordered (mu, lambda).
inline ElasticBasis make_isotropic_basis() { return {"isotropic2", {identity_tensor() * 2.0, trace_tensor()}}; }

/// Same model with unit shear weight, C = mu I + lambda (I (x) I).
inline ElasticBasis make_lame_basis() { return {"lame", {identity_tensor(), trace_tensor()}}; }

/// Orthogonal basis of 2-D symmetric elastic tensors (Voigt form).
inline ElasticBasis make_aniso6_basis() {
  const double s = std::numbers::sqrt2;
  auto unit = [](int a, int b, double v) {
    Voigt3 m = Voigt3::Zero();
    m(a, b) = v;
    m(b, a) = v;
    return SymTensor4(m);
  };
  return {"aniso6", {unit(0, 0, s), unit(2, 2, s), unit(1, 1, s), unit(0, 2, 1.0), unit(0, 1, 1.0), unit(1, 2, 1.0)}};
}

/// Plain-text block: one line with the count, then three rows of three
/// numbers per tensor.
inline void write_basis(const ElasticBasis& basis, std::ostream& os) {
  os << std::setprecision(17) << basis.size() << '\n';
  for (const auto& t : basis.tensors) {
    for (int a = 0; a < 3; ++a) os << t.voigt()(a, 0) << ' ' << t.voigt()(a, 1) << ' ' << t.voigt()(a, 2) << '\n';
  }
}

inline ElasticBasis read_basis(std::istream& is, std::string name = "custom") {
  int count = 0;
  if (!(is >> count) || count <= 0) throw Error("tensor", "basis block must start with a positive tensor count");
  ElasticBasis basis{std::move(name), {}};
  for (int k = 0; k < count; ++k) {
    Voigt3 v;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        if (!(is >> v(a, b))) throw Error("tensor", "truncated basis block");
    basis.tensors.emplace_back(v);
  }
  return basis;
}

inline ElasticBasis read_basis_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("tensor", "cannot open basis file " + path);
  return read_basis(is);
}

inline ElasticBasis make_basis(const std::string& name, const std::string& custom_path = {}) {
  if (name == "single") return make_single_basis();
  if (name == "isotropic2") return make_isotropic_basis();
  if (name == "lame") return make_lame_basis();
  if (name == "aniso6") return make_aniso6_basis();
  if (name == "custom") {
    if (custom_path.empty()) throw Error("config", "custom basis requires basis_file");
    return read_basis_file(custom_path);
  }
  throw Error("config", "unknown basis '" + name + "'");
}

}  // namespace rwf
