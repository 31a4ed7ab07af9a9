#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rstgam/bpst.hpp"

namespace rstgam {
namespace {

// Jittered 4x3 grid, diagonals alternating; interior vertices perturbed.
TriMesh jittered_grid(unsigned seed = 3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jit(-0.2, 0.2);
  const int nx = 4, ny = 3;
  std::vector<Point> v;
  for (int j = 0; j <= ny; ++j) {
    for (int i = 0; i <= nx; ++i) {
      Point p(i, j);
      if (i > 0 && i < nx && j > 0 && j < ny) p += Point(jit(rng), jit(rng));
      v.push_back(p);
    }
  }
  std::vector<Triangle> tris;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const int a = j * (nx + 1) + i, b = a + 1, c = a + nx + 2, d = a + nx + 1;
      if ((i + j) % 2 == 0) {
        tris.push_back({a, b, c});
        tris.push_back({a, c, d});
      } else {
        tris.push_back({a, b, d});
        tris.push_back({b, c, d});
      }
    }
  }
  return TriMesh(v, tris);
}

TriMesh two_triangles() { return TriMesh({{0, 0}, {1, 0}, {0, 1}, {1.2, 0.9}}, {{0, 1, 2}, {1, 3, 2}}); }

std::array<oracle::Vec2, 3> corners(const TriMesh& m, int t) {
  return {m.vertex(t, 0), m.vertex(t, 1), m.vertex(t, 2)};
}

Eigen::VectorXd local_coef(const BivariateBasis& basis, const Eigen::VectorXd& gamma, int t) {
  return gamma.segment(t * basis.per_triangle(), basis.per_triangle());
}

Point random_point_in(const TriMesh& mesh, int t, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double a = u(rng), b = u(rng);
  if (a + b > 1) {
    a = 1 - a;
    b = 1 - b;
  }
  return mesh.vertex(t, 0) + a * (mesh.vertex(t, 1) - mesh.vertex(t, 0)) +
         b * (mesh.vertex(t, 2) - mesh.vertex(t, 0));
}

TEST(BpstTest, LinearBasisAtVertex) {
  const BivariateBasis basis(TriMesh({{0, 0}, {1, 0}, {0, 1}}, {{0, 1, 2}}), 1);
  const auto b = eval_basis(basis, Point(1, 0));
  EXPECT_NEAR(b.coeff(0), 0.0, 1e-15);
  EXPECT_NEAR(b.coeff(1), 1.0, 1e-15);
  EXPECT_NEAR(b.coeff(2), 0.0, 1e-15);
}

TEST(BpstTest, QuadraticBasisAtCentroid) {
  const BivariateBasis basis(TriMesh({{0, 0}, {1, 0}, {0, 1}}, {{0, 1, 2}}), 2);
  const auto b = eval_basis(basis, Point(1.0 / 3, 1.0 / 3));
  // 200, 110, 101, 020, 011, 002
  const double expected[] = {1.0 / 9, 2.0 / 9, 2.0 / 9, 1.0 / 9, 2.0 / 9, 1.0 / 9};
  for (int m = 0; m < 6; ++m) EXPECT_NEAR(b.coeff(m), expected[m], 1e-15) << m;
}

TEST(BpstTest, BernsteinValuesMatchDirectFormula) {
  const auto idx = bernstein_indices(3);
  const Eigen::Vector3d b(0.2, 0.5, 0.3);
  const Eigen::VectorXd v = bernstein_values(3, b);
  for (std::size_t m = 0; m < idx.size(); ++m)
    EXPECT_NEAR(v[m], oracle::bernstein(idx[m][0], idx[m][1], idx[m][2], b), 1e-15);
  for (std::size_t m = 0; m < idx.size(); ++m) EXPECT_EQ(bernstein_position(idx[m]), static_cast<int>(m));
}

TEST(BpstTest, PartitionOfUnityAndNonnegativity) {
  const TriMesh mesh = jittered_grid();
  for (int d : {1, 2, 3}) {
    const BivariateBasis basis(mesh, d);
    EXPECT_EQ(basis.size(), mesh.num_triangles() * (d + 1) * (d + 2) / 2);
    std::mt19937_64 rng(11 + d);
    std::uniform_int_distribution<int> pick(0, mesh.num_triangles() - 1);
    for (int k = 0; k < 1000; ++k) {
      const auto vals = eval_basis(basis, random_point_in(mesh, pick(rng), rng));
      EXPECT_EQ(vals.nonZeros(), basis.per_triangle());
      double sum = 0.0;
      for (Eigen::SparseVector<double>::InnerIterator it(vals); it; ++it) {
        EXPECT_GE(it.value(), -1e-15);
        sum += it.value();
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(BpstTest, OutsidePointThrows) {
  const BivariateBasis basis(two_triangles(), 2);
  EXPECT_THROW(eval_basis(basis, Point(5, 5)), DataError);
}

TEST(BpstTest, ConstraintRowCounts) {
  const TriMesh two({{0, 0}, {1, 0}, {0, 1}, {1, 1}}, {{0, 1, 2}, {1, 3, 2}});
  const auto psi01 = build_smoothness_constraints(BivariateBasis(two, 1), 0);
  ASSERT_EQ(psi01.rows(), 2);
  const Eigen::MatrixXd dense = psi01;
  for (int r = 0; r < 2; ++r) {
    int plus = 0, minus = 0, other = 0;
    for (int c = 0; c < dense.cols(); ++c) {
      if (dense(r, c) == 1.0) ++plus;
      else if (dense(r, c) == -1.0) ++minus;
      else if (dense(r, c) != 0.0) ++other;
    }
    EXPECT_EQ(plus, 1);
    EXPECT_EQ(minus, 1);
    EXPECT_EQ(other, 0);
  }
  EXPECT_EQ(build_smoothness_constraints(BivariateBasis(two, 2), 1).rows(), 5);
  const TriMesh single({{0, 0}, {1, 0}, {0, 1}}, {{0, 1, 2}});
  EXPECT_EQ(build_smoothness_constraints(BivariateBasis(single, 2), 1).rows(), 0);
  EXPECT_THROW(build_smoothness_constraints(BivariateBasis(two, 2), 2), ConfigError);
}

TEST(BpstTest, NullSpaceEdgeCases) {
  const Eigen::SparseMatrix<double> empty(0, 4);
  EXPECT_TRUE(null_space_transform(empty).isApprox(Eigen::MatrixXd::Identity(4, 4)));

  Eigen::SparseMatrix<double> pair(1, 2);
  pair.insert(0, 0) = 1.0;
  pair.insert(0, 1) = -1.0;
  const Eigen::MatrixXd q = null_space_transform(pair);
  ASSERT_EQ(q.cols(), 1);
  EXPECT_NEAR(std::abs(q(0, 0)), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(q(0, 0), q(1, 0), 1e-15);
}

TEST(BpstTest, NullSpaceOfRandomConstraints) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd dense(5, 20);
  for (Eigen::Index k = 0; k < dense.size(); ++k) dense.data()[k] = normal(rng);
  const Eigen::SparseMatrix<double> psi = dense.sparseView();
  const Eigen::MatrixXd q2 = null_space_transform(psi);
  ASSERT_EQ(q2.rows(), 20);
  ASSERT_EQ(q2.cols(), 15);
  EXPECT_LT((dense * q2).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((q2.transpose() * q2 - Eigen::MatrixXd::Identity(15, 15)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BpstTest, ConstrainedSplinesAreContinuousAcrossEdges) {
  const TriMesh mesh = jittered_grid();
  for (auto [d, r] : {std::pair{2, 1}, std::pair{3, 1}, std::pair{2, 0}}) {
    const SplineSpace space = build_spline_space(mesh, d, r);
    const Eigen::MatrixXd dense_psi = space.constraints.psi;
    EXPECT_LT((dense_psi * space.constraints.q2).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((space.constraints.q2.transpose() * space.constraints.q2 -
               Eigen::MatrixXd::Identity(space.dim(), space.dim()))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-12);

    std::mt19937_64 rng(17);
    std::normal_distribution<double> normal;
    Eigen::VectorXd gstar(space.dim());
    for (auto& g : gstar) g = normal(rng);
    const Eigen::VectorXd gamma = space.constraints.q2 * gstar;

    std::vector<const Edge*> interior;
    for (const Edge& e : mesh.edges())
      if (e.interior()) interior.push_back(&e);
    std::uniform_int_distribution<std::size_t> pick(0, interior.size() - 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double h = 1e-5;
    for (int k = 0; k < 200; ++k) {
      const Edge& e = *interior[pick(rng)];
      const double s = unif(rng);
      const Point u = (1 - s) * mesh.vertices()[e.v0] + s * mesh.vertices()[e.v1];
      auto side = [&](int t) {
        const auto tri = corners(mesh, t);
        const Eigen::VectorXd c = local_coef(space.basis, gamma, t);
        return [tri, c, d = d](const oracle::Vec2& x) { return oracle::local_poly(tri, d, c, x); };
      };
      const auto fa = side(e.tri0);
      const auto fb = side(e.tri1);
      EXPECT_NEAR(fa(u), fb(u), 1e-8);
      if (r >= 1) {
        const Point ex(h, 0), ey(0, h);
        const double gxa = (fa(u + ex) - fa(u - ex)) / (2 * h);
        const double gxb = (fb(u + ex) - fb(u - ex)) / (2 * h);
        const double gya = (fa(u + ey) - fa(u - ey)) / (2 * h);
        const double gyb = (fb(u + ey) - fb(u - ey)) / (2 * h);
        EXPECT_NEAR(gxa, gxb, 1e-8);
        EXPECT_NEAR(gya, gyb, 1e-8);
      }
    }
  }
}

TEST(BpstTest, LinearSplineHasZeroEnergy) {
  const TriMesh mesh = jittered_grid();
  EXPECT_EQ(build_energy_penalty(BivariateBasis(mesh, 1)).nonZeros(), 0);

  for (int d : {2, 3}) {
    const BivariateBasis basis(mesh, d);
    const Eigen::SparseMatrix<double> pen = build_energy_penalty(basis);
    // Bezier ordinates of an affine function are its values at the domain points.
    Eigen::VectorXd gamma(basis.size());
    const auto idx = bernstein_indices(d);
    for (int t = 0; t < mesh.num_triangles(); ++t) {
      for (std::size_t m = 0; m < idx.size(); ++m) {
        const Point dp = (idx[m][0] * mesh.vertex(t, 0) + idx[m][1] * mesh.vertex(t, 1) +
                          idx[m][2] * mesh.vertex(t, 2)) / d;
        gamma[t * basis.per_triangle() + static_cast<int>(m)] = 1.5 - 2.0 * dp.x() + 0.7 * dp.y();
      }
    }
    EXPECT_NEAR(gamma.dot(pen * gamma), 0.0, 1e-10);
  }
}

TEST(BpstTest, EnergyMatchesQuadratureOracle) {
  for (const TriMesh& mesh : {two_triangles(), jittered_grid()}) {
    for (int d : {2, 3}) {
      const BivariateBasis basis(mesh, d);
      const Eigen::SparseMatrix<double> pen = build_energy_penalty(basis);
      const Eigen::MatrixXd dense = pen;
      EXPECT_LT((dense - dense.transpose()).cwiseAbs().maxCoeff(), 1e-12);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(dense);
      EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-8 * eig.eigenvalues().maxCoeff());

      std::mt19937_64 rng(23 + d);
      std::normal_distribution<double> normal;
      Eigen::VectorXd gamma(basis.size());
      for (auto& g : gamma) g = normal(rng);
      double quad = 0.0;
      for (int t = 0; t < mesh.num_triangles(); ++t) {
        const auto tri = corners(mesh, t);
        const Eigen::VectorXd c = local_coef(basis, gamma, t);
        const auto f = [&](const oracle::Vec2& x) { return oracle::local_poly(tri, d, c, x); };
        quad += oracle::adaptive_integrate(
            [&](const oracle::Vec2& x) { return oracle::energy_density(f, x); }, tri);
      }
      const double closed = gamma.dot(pen * gamma);
      EXPECT_NEAR(closed, quad, 1e-6 * std::abs(quad)) << "degree " << d;
    }
  }
}

TEST(BpstTest, SplineSpaceDimensionIsReduced) {
  const SplineSpace space = build_spline_space(jittered_grid(), 2, 1);
  EXPECT_LT(space.dim(), space.basis.size());
  EXPECT_GE(space.dim(), 6);  // at least the global quadratics
  EXPECT_EQ(space.penalty_star.rows(), space.dim());
}

}  // namespace
}  // namespace rstgam
