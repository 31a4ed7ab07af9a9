#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/QR>
#include <Eigen/Sparse>

#include "rstgam/errors.hpp"
#include "rstgam/mesh.hpp"

namespace rstgam {

using MultiIndex = std::array<int, 3>;

namespace detail {

inline double factorial(int k) {
  double f = 1.0;
  for (int i = 2; i <= k; ++i) f *= i;
  return f;
}

inline double int_pow(double x, int k) {
  double r = 1.0;
  for (int i = 0; i < k; ++i) r *= x;
  return r;
}

}  // namespace detail

/// Multi-indices (i,j,k), i+j+k=d, ordered by i descending then j descending:
/// d=2 gives 200,110,101,020,011,002.
inline std::vector<MultiIndex> bernstein_indices(int degree) {
  std::vector<MultiIndex> out;
  for (int i = degree; i >= 0; --i)
    for (int j = degree - i; j >= 0; --j) out.push_back({i, j, degree - i - j});
  return out;
}

inline int bernstein_count(int degree) { return (degree + 1) * (degree + 2) / 2; }

/// Position of (i,j,k) in bernstein_indices(i+j+k).
inline int bernstein_position(const MultiIndex& a) {
  const int d = a[0] + a[1] + a[2];
  int pos = 0;
  for (int i = d; i > a[0]; --i) pos += d - i + 1;
  return pos + (d - a[0] - a[1]);
}

/// All degree-d Bernstein polynomials at barycentric point b.
inline Eigen::VectorXd bernstein_values(int degree, const Eigen::Vector3d& b) {
  const auto idx = bernstein_indices(degree);
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  const double dfact = detail::factorial(degree);
  for (std::size_t m = 0; m < idx.size(); ++m) {
    const auto& a = idx[m];
    out[static_cast<Eigen::Index>(m)] =
        dfact / (detail::factorial(a[0]) * detail::factorial(a[1]) * detail::factorial(a[2])) *
        detail::int_pow(b[0], a[0]) * detail::int_pow(b[1], a[1]) * detail::int_pow(b[2], a[2]);
  }
  return out;
}

/// Degree-d Bernstein basis over every triangle of a mesh. Global index of
/// local function m on triangle t is t * per_triangle() + m.
class BivariateBasis {
 public:
  BivariateBasis(TriMesh mesh, int degree) : mesh_(std::move(mesh)), degree_(degree) {
    if (degree < 1) throw ConfigError("bivariate spline degree must be >= 1");
  }

  const TriMesh& mesh() const { return mesh_; }
  int degree() const { return degree_; }
  int per_triangle() const { return bernstein_count(degree_); }
  int size() const { return mesh_.num_triangles() * per_triangle(); }
  int global_index(int tri, const MultiIndex& a) const {
    return tri * per_triangle() + bernstein_position(a);
  }

 private:
  TriMesh mesh_;
  int degree_;
};

/// B(u) as a sparse vector over all basis functions. Throws DataError when u
/// is outside the triangulated domain.
inline Eigen::SparseVector<double> eval_basis(const BivariateBasis& basis, const Point& u) {
  const auto loc = locate(basis.mesh(), u);
  if (!loc) {
    throw DataError("point (" + std::to_string(u.x()) + ", " + std::to_string(u.y()) +
                    ") is outside the triangulated domain");
  }
  const Eigen::VectorXd local = bernstein_values(basis.degree(), loc->b);
  Eigen::SparseVector<double> out(basis.size());
  out.reserve(local.size());
  const int offset = loc->triangle * basis.per_triangle();
  for (Eigen::Index m = 0; m < local.size(); ++m) out.insert(offset + m) = local[m];
  return out;
}

/// Stacked rows B(u_i)^T for a set of points.
inline Eigen::SparseMatrix<double, Eigen::RowMajor> eval_basis_matrix(
    const BivariateBasis& basis, const std::vector<Point>& points) {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(points.size() * basis.per_triangle());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Eigen::SparseVector<double> row = eval_basis(basis, points[i]);
    for (Eigen::SparseVector<double>::InnerIterator it(row); it; ++it)
      trips.emplace_back(static_cast<int>(i), static_cast<int>(it.index()), it.value());
  }
  Eigen::SparseMatrix<double, Eigen::RowMajor> out(static_cast<Eigen::Index>(points.size()),
                                                   basis.size());
  out.setFromTriplets(trips.begin(), trips.end());
  return out;
}

/// Cross-edge C^s conditions (s = 0..r) on every interior edge.
///
/// For triangles T = <w, p, q> and T' = <w', q, p> sharing edge pq, with
/// (l_w, l_p, l_q) the barycentric coordinates of w' relative to T, each row reads
///   c'_{s at w', j at p, k at q} - sum_{|nu|=s} c_{(0,j,k)+nu} B^s_nu(l) = 0,  j+k = d-s.
inline Eigen::SparseMatrix<double> build_smoothness_constraints(const BivariateBasis& basis,
                                                                int smoothness) {
  const int d = basis.degree();
  if (smoothness < 0 || smoothness >= d)
    throw ConfigError("smoothness r must satisfy 0 <= r < degree");
  const TriMesh& mesh = basis.mesh();
  std::vector<Eigen::Triplet<double>> trips;
  int row = 0;
  for (const Edge& e : mesh.edges()) {
    if (!e.interior()) continue;
    const Triangle& ta = mesh.triangles()[e.tri0];
    const Triangle& tb = mesh.triangles()[e.tri1];
    auto local_of = [](const Triangle& t, int v) {
      for (int k = 0; k < 3; ++k)
        if (t[k] == v) return k;
      return -1;
    };
    const int pa = local_of(ta, e.v0), qa = local_of(ta, e.v1);
    const int pb = local_of(tb, e.v0), qb = local_of(tb, e.v1);
    const int wa = 3 - pa - qa;
    const int wb = 3 - pb - qb;
    const Eigen::Vector3d lam_local = barycentric(mesh, e.tri0, mesh.vertex(e.tri1, wb));
    const double lw = lam_local[wa], lp = lam_local[pa], lq = lam_local[qa];

    for (int s = 0; s <= smoothness; ++s) {
      const auto nus = bernstein_indices(s);
      const Eigen::VectorXd weights = bernstein_values(s, Eigen::Vector3d(lw, lp, lq));
      for (int j = d - s; j >= 0; --j) {
        const int k = d - s - j;
        MultiIndex ib{};
        ib[wb] = s;
        ib[pb] = j;
        ib[qb] = k;
        trips.emplace_back(row, basis.global_index(e.tri1, ib), 1.0);
        for (std::size_t m = 0; m < nus.size(); ++m) {
          const double wgt = weights[static_cast<Eigen::Index>(m)];
          if (wgt == 0.0) continue;
          MultiIndex ia{};
          ia[wa] = nus[m][0];
          ia[pa] = j + nus[m][1];
          ia[qa] = k + nus[m][2];
          trips.emplace_back(row, basis.global_index(e.tri0, ia), -wgt);
        }
        ++row;
      }
    }
  }
  Eigen::SparseMatrix<double> psi(row, basis.size());
  psi.setFromTriplets(trips.begin(), trips.end());
  return psi;
}

/// Orthonormal basis of null(psi) from a column-pivoted QR of psi^T. The
/// rank threshold is n_cols * eps * max|R_ii|.
inline Eigen::MatrixXd null_space_transform(const Eigen::SparseMatrix<double>& psi) {
  const Eigen::Index n = psi.cols();
  if (psi.rows() == 0) return Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd psi_t = Eigen::MatrixXd(psi).transpose();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(psi_t);
  qr.setThreshold(static_cast<double>(n) * std::numeric_limits<double>::epsilon());
  const Eigen::Index rank = qr.rank();
  const Eigen::MatrixXd q = qr.householderQ();
  return q.rightCols(n - rank);
}

/// Thin-plate energy matrix: gamma^T P gamma integrates
/// (d_xx s)^2 + 2 (d_xy s)^2 + (d_yy s)^2 for the spline s with coefficients
/// gamma. Block-diagonal, one block per triangle, computed in closed form.
inline Eigen::SparseMatrix<double> build_energy_penalty(const BivariateBasis& basis) {
  const int d = basis.degree();
  const int nb = basis.size();
  Eigen::SparseMatrix<double> penalty(nb, nb);
  if (d < 2) return penalty;

  const auto idx_d = bernstein_indices(d);
  const int m = d - 2;
  const auto idx_m = bernstein_indices(m);
  const int n_d = static_cast<int>(idx_d.size());
  const int n_m = static_cast<int>(idx_m.size());

  // Gram matrix of degree-m Bernstein polynomials on a unit-area triangle.
  Eigen::MatrixXd gram(n_m, n_m);
  {
    const double mf = detail::factorial(m);
    const double scale = mf * mf / detail::factorial(2 * m) * 2.0 / ((2 * m + 1) * (2 * m + 2));
    for (int a = 0; a < n_m; ++a) {
      for (int b = 0; b < n_m; ++b) {
        double ratio = 1.0;
        for (int c = 0; c < 3; ++c) {
          const int s = idx_m[a][c] + idx_m[b][c];
          ratio *= detail::factorial(s) / (detail::factorial(idx_m[a][c]) * detail::factorial(idx_m[b][c]));
        }
        gram(a, b) = scale * ratio;
      }
    }
  }

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(basis.mesh().num_triangles()) * n_d * n_d);
  for (int t = 0; t < basis.mesh().num_triangles(); ++t) {
    const Point& v0 = basis.mesh().vertex(t, 0);
    const Point& v1 = basis.mesh().vertex(t, 1);
    const Point& v2 = basis.mesh().vertex(t, 2);
    Eigen::Matrix3d affine;
    affine << v0.x(), v1.x(), v2.x(), v0.y(), v1.y(), v2.y(), 1.0, 1.0, 1.0;
    const Eigen::Matrix3d inv = affine.inverse();
    const Eigen::Vector3d dx = inv.col(0);  // d b_i / dx
    const Eigen::Vector3d dy = inv.col(1);

    // Second directional derivative of each B_alpha as degree-m coefficients.
    auto second = [&](const Eigen::Vector3d& u, const Eigen::Vector3d& v) {
      Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n_m, n_d);
      for (int a = 0; a < n_d; ++a) {
        for (int i = 0; i < 3; ++i) {
          for (int j = 0; j < 3; ++j) {
            MultiIndex beta = idx_d[a];
            --beta[i];
            --beta[j];
            if (beta[0] < 0 || beta[1] < 0 || beta[2] < 0) continue;
            h(bernstein_position(beta), a) += u[i] * v[j];
          }
        }
      }
      return h;
    };
    const Eigen::MatrixXd hxx = second(dx, dx);
    const Eigen::MatrixXd hxy = second(dx, dy);
    const Eigen::MatrixXd hyy = second(dy, dy);
    const double c = static_cast<double>(d * d * (d - 1) * (d - 1)) * basis.mesh().area(t);
    const Eigen::MatrixXd block =
        c * (hxx.transpose() * gram * hxx + 2.0 * hxy.transpose() * gram * hxy +
             hyy.transpose() * gram * hyy);
    const int off = t * n_d;
    for (int a = 0; a < n_d; ++a)
      for (int b = 0; b < n_d; ++b)
        if (block(a, b) != 0.0) trips.emplace_back(off + a, off + b, block(a, b));
  }
  penalty.setFromTriplets(trips.begin(), trips.end());
  return penalty;
}

struct ConstraintSystem {
  Eigen::SparseMatrix<double> psi;
  Eigen::MatrixXd q2;
  Eigen::SparseMatrix<double> penalty;
};

/// Bivariate spline space S^r_d over a mesh with constraints eliminated.
struct SplineSpace {
  BivariateBasis basis;
  int smoothness = 1;
  ConstraintSystem constraints;
  Eigen::MatrixXd penalty_star;  // Q2^T P Q2

  int dim() const { return static_cast<int>(constraints.q2.cols()); }
};

inline SplineSpace build_spline_space(TriMesh mesh, int degree = 2, int smoothness = 1) {
  BivariateBasis basis(std::move(mesh), degree);
  ConstraintSystem cs;
  cs.psi = build_smoothness_constraints(basis, smoothness);
  cs.q2 = null_space_transform(cs.psi);
  cs.penalty = build_energy_penalty(basis);
  Eigen::MatrixXd pstar = cs.q2.transpose() * (cs.penalty * cs.q2);
  pstar = 0.5 * (pstar + pstar.transpose()).eval();
  return SplineSpace{std::move(basis), smoothness, std::move(cs), std::move(pstar)};
}

/// Rows B(u_i)^T Q2 for the given points.
inline Eigen::MatrixXd spline_design(const SplineSpace& space, const std::vector<Point>& points) {
  return eval_basis_matrix(space.basis, points) * space.constraints.q2;
}

/// Spline value at u for reduced coefficients gamma_star; nullopt outside.
inline std::optional<double> eval_spline(const SplineSpace& space,
                                         const Eigen::VectorXd& gamma_star, const Point& u) {
  const auto loc = locate(space.basis.mesh(), u);
  if (!loc) return std::nullopt;
  const Eigen::VectorXd local = bernstein_values(space.basis.degree(), loc->b);
  const int off = loc->triangle * space.basis.per_triangle();
  return local.dot(space.constraints.q2.middleRows(off, local.size()) * gamma_star);
}

}  // namespace rstgam
