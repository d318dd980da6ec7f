#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "rwf/characteristics.hpp"

using namespace rwf;

namespace {

Tensor3 random_tensor(int rows, int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor3 t(rows, 2, n);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < n; ++k) t(i, j, k) = u(rng);
  return t;
}

// Circulation of (-y, x) along a polyline: sum of cross(p_s, p_{s+1}).
double rotational_circulation(const PathCurve& p) {
  double s = 0.0;
  for (std::size_t i = 1; i < p.waypoints.size(); ++i) s += cross(p.waypoints[i - 1], p.waypoints[i]);
  return s;
}

PathCurve random_path(const Point& a, const Point& b, std::mt19937_64& rng, int inner = 2) {
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  PathCurve p{{a}};
  for (int i = 0; i < inner; ++i) p.waypoints.emplace_back(u(rng), u(rng));
  p.waypoints.push_back(b);
  return p;
}

}  // namespace

TEST(Characteristics, LeftInverseOfSingleStrainIsMatrixInverse) {
  Tensor3 t(2, 2, 1);
  Matrix2 e;
  e << 2.0, 0.3, 0.3, 1.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) t(i, j, 0) = e(i, j);
  const LeftInverse li = left_inverse(t);
  const Matrix2 inv = e.inverse();
  for (int j = 0; j < 2; ++j)
    for (int r = 0; r < 2; ++r) EXPECT_NEAR(li.inverse(0, j, r), inv(j, r), 1e-14);
  EXPECT_LE(li.identity_defect, 1e-14);
}

TEST(Characteristics, LeftInverseContractionIdentity) {
  std::mt19937_64 rng(17);
  for (int n : {1, 2, 3, 6}) {
    for (int rows : {2 * n, 2 * n + 4}) {
      const Tensor3 t = random_tensor(rows, n, rng);
      const LeftInverse li = left_inverse(t);
      // (T^{-1} . T)_{ijkl} = sum_r inv(i, j, r) T(r, k, l) = delta_il delta_jk
      double defect = 0.0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < 2; ++j)
          for (int k = 0; k < 2; ++k)
            for (int l = 0; l < n; ++l) {
              double s = 0.0;
              for (int r = 0; r < rows; ++r) s += li.inverse(i, j, r) * t(r, k, l);
              defect = std::max(defect, std::abs(s - (i == l && j == k ? 1.0 : 0.0)));
            }
      EXPECT_LE(defect, 1e-10);
    }
  }
}

TEST(Characteristics, LameBlockInvertibility) {
  auto block = [](const Matrix2& e1, const Matrix2& e2) {
    Tensor3 t(4, 2, 2);
    for (int l = 0; l < 2; ++l) {
      const Matrix2& e = l ? e2 : e1;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          t(2 * l + a, b, 0) = 2.0 * e(a, b);
          t(2 * l + a, b, 1) = a == b ? e.trace() : 0.0;
        }
    }
    return t;
  };
  Matrix2 e1, e2;
  e1 << 1.0, 0.2, 0.2, -0.5;
  e2 << 0.3, 0.8, 0.8, 0.4;
  const Tensor3 good = block(e1, e2);
  EXPECT_GT(std::abs(unfold(good).determinant()), 1e-6);
  EXPECT_NO_THROW(left_inverse(good));
  const Tensor3 bad = block(e1, 2.0 * e1);
  EXPECT_LT(std::abs(unfold(bad).determinant()), 1e-12);
  EXPECT_THROW(left_inverse(bad), Error);
  // One field cannot carry two parameters.
  std::mt19937_64 rng(1);
  EXPECT_THROW(left_inverse(random_tensor(2, 2, rng)), Error);
}

TEST(Characteristics, AnalyticDivergenceRows) {
  std::mt19937_64 rng(2);
  const Tensor3 c = random_tensor(4, 2, rng);
  EXPECT_LT(divergence_rows([&](const Point&) { return c; }, Point(0.1, 0.2)).norm(), 1e-12);
  // T_ij0 = x_j delta_ij, T_ij1 = x_0 x_1 for all i, j.
  auto t = [](const Point& x) {
    Tensor3 v(2, 2, 2);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        v(i, j, 0) = i == j ? x[j] : 0.0;
        v(i, j, 1) = x.x() * x.y();
      }
    return v;
  };
  const Point x(0.3, -0.7);
  Eigen::MatrixXd expected(2, 2);
  expected << 1.0, x.y() + x.x(), 1.0, x.y() + x.x();
  EXPECT_LT((divergence_rows(t, x) - expected).norm(), 1e-10);
}

TEST(Characteristics, DiscreteDivergenceConverges) {
  auto field = [](const Point& x) {
    Tensor3 v(2, 2, 1);
    v(0, 0, 0) = std::sin(x.x()) * x.y();
    v(0, 1, 0) = std::cos(x.y());
    v(1, 0, 0) = x.x() * x.x();
    v(1, 1, 0) = std::exp(0.5 * x.y());
    return v;
  };
  std::vector<double> errors;
  for (double h : {0.1, 0.05, 0.025}) {
    const TriMesh mesh = generate_triangular({-1, 1, -1, 1}, h);
    TuTensor T(mesh.num_triangles(), 1, 1);
    for (int t = 0; t < mesh.num_triangles(); ++t) {
      const Tensor3 v = field(mesh.barycenter(t));
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) T(t, i, j, 0) = v(i, j, 0);
    }
    const auto d = divergence_rows(T, mesh);
    double err = 0.0;
    int count = 0;
    for (int t = 0; t < mesh.num_triangles(); ++t) {
      const Point c = mesh.barycenter(t);
      if (std::abs(c.x()) > 0.8 || std::abs(c.y()) > 0.8) continue;
      err += (d[t] - divergence_rows(field, c)).squaredNorm();
      ++count;
    }
    errors.push_back(std::sqrt(err / count));
  }
  for (std::size_t i = 1; i < errors.size(); ++i) EXPECT_GE(std::log2(errors[i - 1] / errors[i]), 0.9);
}

TEST(Characteristics, ScalarConductivityExpandedForm) {
  // Two potentials u_r; T(r, j, 0) = d_j u_r; B = (grad U)^{-1} . laplacian.
  auto grad = [](const Point& x) {
    Matrix2 g;
    g << 1.0 + 0.2 * x.x(), 0.6 * x.y(), 0.3 * std::cos(x.x()), 1.0 + 0.1 * x.y();
    return g;
  };
  auto t = [&](const Point& x) {
    Tensor3 v(2, 2, 1);
    const Matrix2 g = grad(x);
    for (int r = 0; r < 2; ++r)
      for (int j = 0; j < 2; ++j) v(r, j, 0) = g(r, j);
    return v;
  };
  const ExpandedForm ef = expanded_form(t, {}, 1);
  for (const Point& x : {Point(0.1, 0.2), Point(-0.4, 0.5)}) {
    const Eigen::Vector2d lap(0.2 + 0.6, -0.3 * std::sin(x.x()) + 0.1);
    const Eigen::Vector2d expected = grad(x).inverse() * lap;
    const Tensor3 b = ef.B(x);
    EXPECT_NEAR(b(0, 0, 0), expected[0], 1e-9);
    EXPECT_NEAR(b(0, 1, 0), expected[1], 1e-9);
    EXPECT_EQ(ef.F(x).norm(), 0.0);
  }
}

TEST(Characteristics, ManufacturedExpandedResidualVanishes) {
  // Linear strains of u = (x + 0.1 x^2, 0.6 y + 0.1 x y), C = mu I, f = -div(mu eps(u)):
  // the patch divergence is exact, so grad mu + B mu = F holds to round-off.
  auto eps = [](const Point& x) {
    Matrix2 e;
    e << 1.0 + 0.2 * x.x(), 0.05 * x.y(), 0.05 * x.y(), 0.6 + 0.1 * x.x();
    return e;
  };
  auto mu = [](const Point& x) { return 2.0 + 0.5 * std::sin(x.x() + 2.0 * x.y()); };
  auto grad_mu = [](const Point& x) {
    const double c = 0.5 * std::cos(x.x() + 2.0 * x.y());
    return Eigen::Vector2d(c, 2.0 * c);
  };
  auto force = [&](const Point& x) { return Eigen::Vector2d(-(eps(x) * grad_mu(x) + mu(x) * Eigen::Vector2d(0.25, 0.0))); };
  std::vector<double> res;
  for (double h : {0.08, 0.04}) {
    auto mesh = std::make_shared<const TriMesh>(generate_triangular({-0.5, 0.5, -0.5, 0.5}, h));
    TuTensor T(mesh->num_triangles(), 1, 1);
    for (int t = 0; t < mesh->num_triangles(); ++t) {
      const Matrix2 e = eps(mesh->barycenter(t));
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) T(t, i, j, 0) = e(i, j);
    }
    std::vector<Eigen::VectorXd> loads;
    for (int t = 0; t < mesh->num_triangles(); ++t) loads.push_back(force(mesh->barycenter(t)));
    const auto [b, f] = expanded_form(T, *mesh, loads);
    double err = 0.0;
    int count = 0;
    for (int t = 0; t < mesh->num_triangles(); ++t) {
      const Point c = mesh->barycenter(t);
      if (std::abs(c.x()) > 0.4 || std::abs(c.y()) > 0.4) continue;
      const Eigen::Vector2d r(grad_mu(c)[0] + b[t](0, 0, 0) * mu(c) - f[t](0, 0),
                              grad_mu(c)[1] + b[t](0, 1, 0) * mu(c) - f[t](0, 1));
      err += r.squaredNorm();
      ++count;
    }
    res.push_back(std::sqrt(err / count));
  }
  for (double r : res) EXPECT_LT(r, 1e-12);
}

TEST(Characteristics, ResolventOfZeroFieldIsIdentity) {
  const ThirdOrderField b = ThirdOrderField::zero(3);
  const PathCurve p{{Point(0, 0), Point(0.3, 0.1), Point(-0.2, 0.5)}};
  EXPECT_LE((resolvent(b, p).R - Eigen::MatrixXd::Identity(3, 3)).norm(), 1e-14);
  const ResolventLaws laws = resolvent_laws_check(b, p, PathCurve{{Point(-0.2, 0.5), Point(0.4, 0.4)}});
  EXPECT_LE(laws.inverse_defect, 1e-14);
  EXPECT_LE(laws.concatenation_defect, 1e-14);
}

TEST(Characteristics, ScalarGradientResolventIsPathIndependent) {
  auto nu = [](const Point& x) { return std::sin(x.x()) * std::cos(0.5 * x.y()) + 0.3 * x.x() * x.y(); };
  const ThirdOrderField b = diagonal_field({[](const Point& x) {
    return Eigen::Vector2d(std::cos(x.x()) * std::cos(0.5 * x.y()) + 0.3 * x.y(),
                           -0.5 * std::sin(x.x()) * std::sin(0.5 * x.y()) + 0.3 * x.x());
  }});
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  for (int trial = 0; trial < 100; ++trial) {
    const Point a(u(rng), u(rng)), c(u(rng), u(rng));
    const PathCurve p = random_path(a, c, rng);
    const double r = resolvent(b, p, 64).R(0, 0);
    EXPECT_NEAR(r, std::exp(-(nu(c) - nu(a))), 1e-8);
    // Kernel transport: mu = exp(-nu) is carried from a to c.
    const Eigen::VectorXd mu_a = Eigen::VectorXd::Constant(1, std::exp(-nu(a)));
    EXPECT_NEAR(resolvent(b, p, mu_a, 64)[0], std::exp(-nu(c)), 1e-8);
    EXPECT_GT(r, 0.0);
  }
}

TEST(Characteristics, DiagonalResolventMatchesClosedForm) {
  const ThirdOrderField b = mixed_diagonal_field(3, 1);
  const PathCurve p{{Point(0.1, -0.2), Point(0.5, 0.3), Point(-0.3, 0.4), Point(-0.1, -0.5)}};
  const Eigen::MatrixXd r = resolvent(b, p, 128).R;
  EXPECT_NEAR(r(0, 0), std::exp(-(mixed_potential(0, p.end()) - mixed_potential(0, p.start()))), 1e-8);
  for (int i = 1; i < 3; ++i) EXPECT_NEAR(r(i, i), std::exp(-(1.0 + 0.5 * i) * rotational_circulation(p)), 1e-8);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) EXPECT_EQ(r(i, j), 0.0);
}

TEST(Characteristics, ResolventLawsAndConvergence) {
  const ThirdOrderField b = field_from_matrix(smooth_matrix_field(3, 21));
  const ThirdOrderField m = mixed_diagonal_field(3, 1);
  const PathCurve g1{{Point(-0.5, -0.4), Point(0.2, -0.1), Point(0.4, 0.5)}};
  const PathCurve g2{{Point(0.4, 0.5), Point(-0.3, 0.6), Point(-0.6, 0.0)}};
  for (const ThirdOrderField* f : {&b, &m}) {
    const ResolventLaws laws = resolvent_laws_check(*f, g1, g2, 256);
    EXPECT_LE(laws.inverse_defect, 1e-7);
    EXPECT_LE(laws.concatenation_defect, 1e-7);
  }
  // RK4 order against a fine reference on the rotational stack.
  const Eigen::MatrixXd ref = resolvent(m, g1.then(g2), 2048).R;
  std::vector<double> err;
  for (int steps : {4, 8, 16}) err.push_back((resolvent(m, g1.then(g2), steps).R - ref).norm());
  for (std::size_t i = 1; i < err.size(); ++i) EXPECT_GE(std::log2(err[i - 1] / err[i]), 3.5);
}

TEST(Characteristics, ConservativityOfReferenceFields) {
  const Point x(0.1, -0.1);
  const auto loops = standard_loops(x, default_domain());
  const ConservativityReport zero = conservativity_probe(ThirdOrderField::zero(3), x, loops);
  EXPECT_EQ(zero.k, 3);
  const ConservativityReport mat = conservativity_probe(field_from_matrix(smooth_matrix_field(3, 4)), x, loops);
  EXPECT_EQ(mat.k, 3);
  for (int k = 0; k <= 3; ++k) {
    const ConservativityReport r = conservativity_probe(mixed_diagonal_field(3, k), x, loops);
    EXPECT_EQ(r.k, k);
    EXPECT_LE(r.k, 3);
    if (k > 0) {
      // Basis spans e_1..e_k: no weight on the remaining coordinates.
      EXPECT_LE(r.basis.bottomRows(3 - k).norm(), 1e-4);
      EXPECT_NEAR((r.basis.transpose() * r.basis - Eigen::MatrixXd::Identity(k, k)).norm(), 0.0, 1e-12);
    }
  }
  EXPECT_THROW(conservativity_probe(ThirdOrderField::zero(2), x, {loops.front()}), Error);
  EXPECT_THROW(conservativity_probe(ThirdOrderField::zero(2), Point(0.5, 0.5), loops), Error);
}

TEST(Characteristics, ConservativityIsBasePointIndependent) {
  const ThirdOrderField b = mixed_diagonal_field(4, 2);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  for (int p = 0; p < 5; ++p) {
    const Point x(u(rng), u(rng));
    EXPECT_EQ(conservativity_probe(b, x, standard_loops(x, b.domain)).k, 2);
  }
}

TEST(Characteristics, PiecewiseFieldFromData) {
  auto mesh = std::make_shared<const TriMesh>(generate_triangular({0, 1, 0, 1}, 0.25));
  std::vector<Tensor3> table(mesh->num_triangles(), Tensor3(1, 2, 1));
  const ThirdOrderField f = ThirdOrderField::piecewise(mesh, table);
  EXPECT_EQ(f.n, 1);
  EXPECT_NO_THROW(f(Point(0.5, 0.5)));
  EXPECT_THROW(f(Point(1.5, 0.5)), Error);
  EXPECT_THROW(ThirdOrderField::piecewise(mesh, {}), Error);
}

TEST(Characteristics, PathsAndWaypointFiles) {
  const PathCurve p{{Point(0, 0), Point(0.3, 0.4)}};
  EXPECT_NEAR(p.length(), 0.5, 1e-15);
  EXPECT_EQ(p.reversed().start(), p.end());
  EXPECT_THROW(p.then(PathCurve{{Point(1, 1), Point(0, 0)}}), Error);
  EXPECT_THROW(PathCurve{{Point(0, 0)}}.validate(default_domain()), Error);
  EXPECT_THROW((PathCurve{{Point(0, 0), Point(1.0, 0.0)}}.validate(default_domain())), Error);
  const auto file = std::filesystem::temp_directory_path() / "rwf_waypoints.csv";
  {
    std::ofstream os(file);
    os << "x,y\n# loop\n0.1,0.1\n0.3,0.1\n0.2,0.3\n0.1,0.1\n";
  }
  const PathCurve q = read_waypoints_csv(file.string());
  EXPECT_EQ(q.waypoints.size(), 4u);
  EXPECT_TRUE(q.closed());
  std::filesystem::remove(file);
  EXPECT_THROW(read_waypoints_csv("/nonexistent/path.csv"), Error);
}

TEST(Characteristics, GramIndependence) {
  const int pts = 50;
  Eigen::MatrixXd a(pts, 2), b(pts, 2);
  for (int p = 0; p < pts; ++p) {
    const double t = -1.0 + 2.0 * p / (pts - 1);
    a.row(p) << 1.0 + 0.5 * t, 0.3;
    b.row(p) << t, 1.0;
  }
  const GramCheck single = gram_independence({a});
  EXPECT_TRUE(single.independent);
  EXPECT_NEAR(single.alpha, a.rowwise().squaredNorm().minCoeff(), 1e-14);
  EXPECT_FALSE(gram_independence({a, a}).independent);
  EXPECT_TRUE(gram_independence({a, b}).independent);
  // Both fields vanish at t = 0 (p odd count gives an exact zero sample).
  Eigen::MatrixXd c(pts + 1, 2), d(pts + 1, 2);
  for (int p = 0; p <= pts; ++p) {
    const double t = -1.0 + 2.0 * p / pts;
    c.row(p) << t, 2.0 * t;
    d.row(p) << -t, t * t;
  }
  const GramCheck crossing = gram_independence({c, d});
  EXPECT_FALSE(crossing.independent);
  EXPECT_LT(crossing.alpha, 1e-20);
}
