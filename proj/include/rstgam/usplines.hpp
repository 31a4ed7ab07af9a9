#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "rstgam/errors.hpp"

namespace rstgam {

/// Centered and standardized univariate B-spline basis for one covariate.
struct SplineBasis1D {
  int order = 4;                 // polynomial degree + 1
  std::vector<double> knots;     // open knot vector, boundary knots repeated `order` times
  double lower = 0.0;
  double upper = 1.0;
  Eigen::VectorXd center;        // training mean of each raw column
  Eigen::VectorXd scale;         // sqrt of training second moment after centering

  int size() const { return static_cast<int>(knots.size()) - order; }
  int num_interior_knots() const { return size() - order; }
  bool in_range(double x) const { return x >= lower && x <= upper; }
};

/// Raw B-spline values at clamp(x, lower, upper) by Cox-de Boor recursion.
inline Eigen::VectorXd eval_raw_basis1d(const SplineBasis1D& basis, double x) {
  const int k = basis.order;
  const int nb = basis.size();
  const auto& t = basis.knots;
  x = std::clamp(x, basis.lower, basis.upper);

  // Span mu with t[mu] <= x < t[mu+1]; the right end belongs to the last span.
  int mu = k - 1;
  if (x >= basis.upper) {
    mu = nb - 1;
  } else {
    mu = static_cast<int>(std::upper_bound(t.begin() + k, t.begin() + nb, x) - t.begin()) - 1;
  }

  // Triangular scheme from de Boor, A Practical Guide to Splines (BSPLVB).
  std::vector<double> values(k, 0.0);
  values[0] = 1.0;
  for (int j = 1; j < k; ++j) {
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double tl = t[mu + r + 1];
      const double tr = t[mu + 1 + r - j];
      const double term = values[r] / (tl - tr);
      values[r] = saved + (tl - x) * term;
      saved = (x - tr) * term;
    }
    values[j] = saved;
  }

  Eigen::VectorXd out = Eigen::VectorXd::Zero(nb);
  for (int r = 0; r < k; ++r) out[mu - k + 1 + r] = values[r];
  return out;
}

/// Fits knots at equally spaced empirical quantiles of x and the centering
/// and scaling constants on the same sample. Quantile knots that coincide
/// with each other or the range ends are dropped.
inline SplineBasis1D fit_basis(std::span<const double> x, int order = 4, int n_interior_knots = 4) {
  if (order < 1) throw ConfigError("spline order must be >= 1");
  if (n_interior_knots < 0) throw ConfigError("number of interior knots must be >= 0");
  if (x.empty()) throw DataError("empty covariate sample");
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front();
  const double hi = sorted.back();
  if (!(hi > lo)) throw DataError("covariate is constant; cannot build a spline basis");

  std::vector<double> interior;
  for (int j = 1; j <= n_interior_knots; ++j) {
    const double p = static_cast<double>(j) / (n_interior_knots + 1);
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto below = static_cast<std::size_t>(std::floor(pos));
    const std::size_t above = std::min(below + 1, sorted.size() - 1);
    const double q = sorted[below] + (pos - below) * (sorted[above] - sorted[below]);
    if (q > lo && q < hi && (interior.empty() || q > interior.back())) interior.push_back(q);
  }

  SplineBasis1D basis;
  basis.order = order;
  basis.lower = lo;
  basis.upper = hi;
  basis.knots.assign(order, lo);
  basis.knots.insert(basis.knots.end(), interior.begin(), interior.end());
  basis.knots.insert(basis.knots.end(), order, hi);

  const int nb = basis.size();
  if (static_cast<int>(x.size()) <= nb) {
    throw DataError("covariate sample of size " + std::to_string(x.size()) +
                    " is not larger than the number of basis functions " + std::to_string(nb));
  }
  Eigen::MatrixXd raw(static_cast<Eigen::Index>(x.size()), nb);
  for (std::size_t i = 0; i < x.size(); ++i)
    raw.row(static_cast<Eigen::Index>(i)) = eval_raw_basis1d(basis, x[i]).transpose();
  basis.center = raw.colwise().mean().transpose();
  raw.rowwise() -= basis.center.transpose();
  basis.scale = (raw.colwise().squaredNorm() / static_cast<double>(x.size())).cwiseSqrt().transpose();
  for (int j = 0; j < nb; ++j) {
    if (!(basis.scale[j] > 1e-12))
      throw DataError("spline basis column " + std::to_string(j) + " is degenerate on the sample");
  }
  return basis;
}

/// Centered and scaled basis vector A(x); out-of-range x is clamped.
inline Eigen::VectorXd eval_basis1d(const SplineBasis1D& basis, double x) {
  return (eval_raw_basis1d(basis, x) - basis.center).cwiseQuotient(basis.scale);
}

}  // namespace rstgam
