#include <gtest/gtest.h>

#include <random>

#include "rwf/inverse_solver.hpp"

using namespace rwf;

namespace {

struct Small {
  std::shared_ptr<const HoneycombPair> pair;
  DataSet data;
  RwfSystem sys;
};

// Smooth non-affine fields on a coarse honeycomb: full column rank data.
Small small_system(const ElasticBasis& basis, int fields, double h = 0.12) {
  Small s;
  s.pair = std::make_shared<const HoneycombPair>(generate_honeycomb({-0.6, 0.6, -0.6, 0.6}, h));
  const auto mesh = sub_mesh(s.pair);
  const std::vector<std::function<Eigen::Vector2d(const Point&)>> fns{
      [](const Point& p) { return Eigen::Vector2d(std::sin(1.3 * p.x() + 0.4 * p.y()), p.x() * p.y()); },
      [](const Point& p) { return Eigen::Vector2d(p.y() * p.y() - 0.3 * p.x(), std::cos(p.x() - 0.7 * p.y())); },
      [](const Point& p) { return Eigen::Vector2d(std::exp(0.5 * p.y()), std::sin(p.x()) + p.y()); }};
  for (int l = 0; l < fields; ++l) s.data.fields.push_back(interpolate(mesh, fns[l]));
  s.sys = assemble_system(assemble_T(s.data, basis), s.data, *s.pair);
  return s;
}

// Static single-parameter data from a forward solve on a small problem.
struct Forward {
  std::shared_ptr<const HoneycombPair> pair;
  ExactParamField exact;
  RwfSystem sys;
};

Forward forward_single(const BoundaryCondition& bc) {
  Forward f;
  f.exact.background = Vector::Constant(1, 4.0);
  Region r;
  r.center = Point(0.0, 0.1);
  r.radius = 0.3;
  r.values = Vector::Constant(1, 8.0);
  f.exact.regions.push_back(r);
  auto mesh = std::make_shared<const TriMesh>(generate_triangular({-1, 1, -1, 1}, 0.01));
  const VectorField u = solve_static(mesh, make_single_basis(), f.exact, bc);
  f.pair = std::make_shared<const HoneycombPair>(generate_honeycomb({-0.6, 0.6, -0.6, 0.6}, 0.04));
  DataSet d;
  d.fields = {interpolate_to_inversion(u, f.pair)};
  f.sys = assemble_system(assemble_T(d, make_single_basis()), d, *f.pair);
  return f;
}

}  // namespace

TEST(InverseSolver, ConsistentSystemIsRecovered) {
  Small s = small_system(make_isotropic_basis(), 2);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(1.0, 3.0);
  Vector m0(s.sys.cols());
  for (auto& v : m0) v = u(rng);
  s.sys.g = s.sys.A * m0;
  const NormalOperator op(s.sys);
  const ReconstructedField f = solve_inhomogeneous(s.sys, op);
  EXPECT_LT((f.coeffs - m0).norm() / m0.norm(), 1e-8);
  EXPECT_FALSE(f.normalized);
}

TEST(InverseSolver, ShiftedSolveInvertsShiftedOperator) {
  const Small s = small_system(make_single_basis(), 1);
  const NormalOperator op(s.sys);
  Vector b = Vector::LinSpaced(s.sys.cols(), -1.0, 2.0);
  const Vector x = op.solve_shifted(b);
  const Vector r = b - op.apply_h(x) - op.delta() * op.s_m().cwiseProduct(x);
  EXPECT_LT(r.norm(), 1e-10 * b.norm());
  EXPECT_GT(op.lambda_max(), 0.0);
  EXPECT_NEAR(op.delta(), 1e-10 * op.lambda_max(), 1e-24);
}

TEST(InverseSolver, SparseEigenpairsMatchDenseReference) {
  for (int fields : {1, 2}) {
    const Small s = small_system(make_isotropic_basis(), fields, 0.15);
    ASSERT_LE(s.sys.cols(), 500);
    const NormalOperator op(s.sys);
    const EigenPairs sparse = smallest_eigenpairs(op, s.sys);
    ASSERT_TRUE(sparse.converged);
    const DenseEigen dense = dense_reference_eigen(s.sys);
    for (std::size_t i = 0; i < 3; ++i)
      EXPECT_NEAR(sparse.diag.eigenvalues[i], dense.eigenvalues[i], 1e-9 * std::abs(dense.eigenvalues[i]) + 1e-14);
    for (double r : sparse.diag.residuals) EXPECT_LE(r, 1e-8);
    // Angle between first eigenvectors in the S_M geometry.
    const Vector& a = sparse.vectors.front();
    const Vector b = dense.vectors.col(0);
    const double c = std::abs(a.dot(op.s_m().cwiseProduct(b)));
    EXPECT_LE(std::acos(std::min(1.0, c)), 1e-6);
  }
}

TEST(InverseSolver, EigenvectorsAreMassOrthonormal) {
  const Small s = small_system(make_isotropic_basis(), 2, 0.15);
  const NormalOperator op(s.sys);
  const EigenPairs p = smallest_eigenpairs(op, s.sys);
  for (std::size_t i = 0; i < p.vectors.size(); ++i)
    for (std::size_t j = 0; j < p.vectors.size(); ++j)
      EXPECT_NEAR(p.vectors[i].dot(op.s_m().cwiseProduct(p.vectors[j])), i == j ? 1.0 : 0.0, 1e-9);
  for (std::size_t i = 1; i < p.diag.eigenvalues.size(); ++i)
    EXPECT_LE(p.diag.eigenvalues[i - 1], p.diag.eigenvalues[i]);
}

TEST(InverseSolver, HomogeneousSingleParameterReconstruction) {
  const Forward f = forward_single({Side::bottom, Side::top, {1.0, -0.5}});
  const auto [recon, diag] = solve_homogeneous(f.sys);
  EXPECT_TRUE(recon.normalized);
  const NormalOperator op(f.sys);
  EXPECT_NEAR(recon.coeffs.dot(op.s_m().cwiseProduct(recon.coeffs)), 1.0, 1e-10);
  EXPECT_GT(recon.coeffs.dot(op.s_m()), 0.0);
  ASSERT_EQ(diag.eigenvalues.size(), 10u);
  for (double r : diag.residuals) EXPECT_LE(r, 1e-8);
  EXPECT_GT(diag.gap(), 10.0 * diag.eigenvalues[0]);
  const ErrorReport err = relative_error(recon, f.exact, *f.pair);
  EXPECT_LT(err.per_parameter[0], 10.0);
  EXPECT_GT(err.scale, 0.0);
}

TEST(InverseSolver, RankDeficientSystemIsRejected) {
  // Two identical basis tensors: H has an exact null space.
  const ElasticBasis twice{"twice", {identity_tensor(), identity_tensor()}};
  Small s = small_system(twice, 2, 0.15);
  s.sys.g = Vector::Ones(s.sys.rows());
  const NormalOperator op(s.sys);
  try {
    solve_inhomogeneous(s.sys, op);
    FAIL() << "expected rejection";
  } catch (const Error& e) {
    EXPECT_EQ(e.stage(), "solve");
    EXPECT_NE(std::string(e.what()).find("rank deficient"), std::string::npos);
  }
  Small z = small_system(make_single_basis(), 1);
  EXPECT_THROW(solve_inhomogeneous(z.sys), Error);
}

TEST(InverseSolver, HomogeneousSolveConvergesOnExactNullSpace) {
  // Duplicated basis tensor: every (m, -m) pair is in the kernel, so all
  // requested eigenpairs are numerically null and A m is pure roundoff.
  const ElasticBasis twice{"twice", {identity_tensor(), identity_tensor()}};
  const Small s = small_system(twice, 2, 0.1);
  const NormalOperator op(s.sys);
  const auto pairs = smallest_eigenpairs(op, s.sys);
  ASSERT_TRUE(pairs.converged);
  EXPECT_LT(pairs.diag.iterations, 200);
  const int nc = s.sys.cells;
  for (std::size_t i = 0; i < pairs.vectors.size(); ++i) {
    EXPECT_LE(pairs.diag.eigenvalues[i], null_threshold * op.lambda_max());
    EXPECT_LE(pairs.diag.residuals[i], 1e-8);
    const Vector& m = pairs.vectors[i];
    EXPECT_LT((m.head(nc) + m.tail(nc)).norm(), 1e-8 * m.norm());
  }
  EXPECT_EQ(pairs.diag.gap(), pairs.diag.eigenvalues[1] - pairs.diag.eigenvalues[0]);
}

TEST(InverseSolver, SpectralGap) {
  SpectralDiagnostics d;
  d.eigenvalues = {0.5, 0.5, 1.0};
  EXPECT_EQ(d.gap(), 0.0);
  d.eigenvalues = {1e-4, 2e-2};
  EXPECT_NEAR(d.gap(), 2e-2 - 1e-4, 1e-18);
  d.eigenvalues = {1.0};
  EXPECT_THROW(d.gap(), Error);
}

TEST(InverseSolver, RelativeErrorNormalization) {
  const std::vector<double> areas{1.0, 2.0, 0.5};
  Vector exact(6);
  exact << 1, 2, 3, 4, 5, 6;
  ReconstructedField r;
  r.params = 2;
  r.cells = 3;
  r.coeffs = exact;
  EXPECT_NEAR(relative_error(r, exact, areas).joint, 0.0, 1e-12);
  r.normalized = true;
  r.coeffs = -0.01 * exact;
  const ErrorReport e = relative_error(r, exact, areas);
  EXPECT_NEAR(e.joint, 0.0, 1e-10);
  EXPECT_NEAR(e.scale, -100.0, 1e-10);
  r.normalized = false;
  r.coeffs = 1.1 * exact;
  const ErrorReport g = relative_error(r, exact, areas);
  EXPECT_NEAR(g.per_parameter[0], 10.0, 1e-10);
  EXPECT_NEAR(g.per_parameter[1], 10.0, 1e-10);
  EXPECT_THROW(relative_error(r, Vector::Zero(6), areas), Error);
  EXPECT_THROW(relative_error(r, Vector::Zero(4), areas), Error);
}
