#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "rstgam/errors.hpp"
#include "rstgam/glm_core.hpp"
#include "rstgam/optim.hpp"

namespace rstgam {

inline int count_active(const Eigen::VectorXd& xi, double tol = kXiZeroTol) {
  return static_cast<int>((xi.array() > tol).count());
}

/// log C(P, k) through log-gamma.
inline double log_binomial(double P, double k) {
  return std::lgamma(P + 1.0) - std::lgamma(k + 1.0) - std::lgamma(P - k + 1.0);
}

inline double bic_value(double loglik, double N, int df) { return -2.0 * loglik + std::log(N) * df; }

inline double ebic_value(double loglik, double N, int df_total, long P, double rho) {
  if (rho < 0.0 || rho > 1.0) throw ConfigError("rho must lie in [0, 1]");
  if (df_total > P) throw std::logic_error("degrees of freedom exceed the parameter count");
  return -2.0 * loglik + std::log(N) * df_total + 2.0 * rho * log_binomial(static_cast<double>(P), df_total);
}

/// Degrees of freedom: every spline coefficient plus the active slacks.
inline int df_total(const FitProblem& prob, const Coefficients& c) {
  const int active = prob.with_slack ? count_active(c.xi) : 0;
  return static_cast<int>(prob.dim_gamma() + prob.dim_theta()) + active;
}

inline long parameter_count(const FitProblem& prob) {
  return static_cast<long>(prob.dim_gamma() + prob.dim_theta()) + prob.n;
}

inline double bic(const FitProblem& prob, const Coefficients& c) {
  const int df = prob.with_slack ? count_active(c.xi) : 0;
  return bic_value(poisson_loglik(prob, prob.pack(c)), static_cast<double>(prob.rows()), df);
}

inline double ebic(const FitProblem& prob, const Coefficients& c, double rho) {
  return ebic_value(poisson_loglik(prob, prob.pack(c)), static_cast<double>(prob.rows()), df_total(prob, c),
                    parameter_count(prob), rho);
}

/// count points evenly spaced in log scale over [lo, hi].
inline std::vector<double> log_grid(double lo, double hi, int count) {
  if (!(lo > 0) || !(hi >= lo) || count < 1) throw ConfigError("invalid grid bounds");
  std::vector<double> g(static_cast<std::size_t>(count));
  if (count == 1) {
    g[0] = lo;
    return g;
  }
  const double a = std::log(lo), b = std::log(hi);
  for (int k = 0; k < count; ++k) g[static_cast<std::size_t>(k)] = std::exp(a + (b - a) * k / (count - 1));
  return g;
}

/// Scale for the slack penalty: median |df/dxi| at the standard starting point.
inline double slack_gradient_scale(const FitProblem& prob) {
  if (!prob.with_slack || prob.n == 0) return 1.0;
  const Coefficients g = gradient_f(prob, initial_coefficients(prob));
  std::vector<double> a(g.xi.data(), g.xi.data() + g.xi.size());
  for (auto& v : a) v = std::abs(v);
  const auto mid = a.begin() + static_cast<std::ptrdiff_t>(a.size() / 2);
  std::nth_element(a.begin(), mid, a.end());
  double m = *mid;
  if (a.size() % 2 == 0) m = 0.5 * (m + *std::max_element(a.begin(), mid));
  return m > 0 && std::isfinite(m) ? m : 1.0;
}

inline std::vector<double> default_lambda1_grid(const FitProblem& prob, int count = 10) {
  const double s = slack_gradient_scale(prob);
  return log_grid(1e-3 * s, 1e2 * s, count);
}

inline std::vector<double> default_lambda0_grid(int count = 10) { return log_grid(1e-4, 1e4, count); }

/// Relative gap below which two criterion values count as a tie.
inline constexpr double kTieTolerance = 1e-9;

enum class PathParam { lambda1, lambda0 };
enum class Criterion { bic, ebic };

struct PathPoint {
  double lambda = 0.0;
  bool valid = false;
  bool converged = false;
  double criterion = std::numeric_limits<double>::quiet_NaN();
  double loglik = std::numeric_limits<double>::quiet_NaN();
  int df = 0;
  int iterations = 0;
  double kkt = std::numeric_limits<double>::quiet_NaN();
  std::string error;
};

struct PathResult {
  std::vector<PathPoint> points;  // in grid order
  int best = -1;
  FitResult best_fit;
  Coefficients last;  // final iterate of the sweep, usable as a warm start
};

/// Fits every grid value from the largest to the smallest, warm-starting each
/// fit from the previous solution. The minimizer of the criterion wins; ties
/// (within kTieTolerance) go to the larger value.
inline PathResult fit_path(const FitProblem& base, PathParam which, const std::vector<double>& grid,
                           Criterion crit, double rho, const Coefficients& init, const SolverConfig& cfg,
                           bool warm_start = true) {
  if (grid.empty()) throw ConfigError("empty tuning grid");
  for (double v : grid)
    if (!(v >= 0) || !std::isfinite(v)) throw ConfigError("grid values must be finite and nonnegative");
  std::vector<std::size_t> order(grid.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return grid[a] > grid[b]; });

  PathResult out;
  out.points.resize(grid.size());
  FitProblem prob = base;
  Coefficients start = init;
  double best_value = std::numeric_limits<double>::infinity();
  for (std::size_t idx : order) {
    PathPoint& pt = out.points[idx];
    pt.lambda = grid[idx];
    (which == PathParam::lambda1 ? prob.lambda1 : prob.lambda0) = grid[idx];
    try {
      FitResult fit = solve(prob, warm_start ? start : init, cfg);
      const Eigen::VectorXd z = prob.pack(fit.coef);
      pt.loglik = poisson_loglik(prob, z);
      pt.converged = fit.converged;
      pt.iterations = fit.iterations;
      pt.kkt = fit.kkt;
      const double N = static_cast<double>(prob.rows());
      if (crit == Criterion::bic) {
        pt.df = prob.with_slack ? count_active(fit.coef.xi) : 0;
        pt.criterion = bic_value(pt.loglik, N, pt.df);
      } else {
        pt.df = df_total(prob, fit.coef);
        pt.criterion = ebic_value(pt.loglik, N, pt.df, parameter_count(prob), rho);
      }
      pt.valid = std::isfinite(pt.criterion);
      const double margin = kTieTolerance * std::max(1.0, std::abs(best_value));
      if (pt.valid && (out.best < 0 || pt.criterion < best_value - margin)) {
        best_value = pt.criterion;
        out.best = static_cast<int>(idx);
        out.best_fit = fit;
      }
      start = fit.coef;
      out.last = std::move(fit.coef);
    } catch (const SolverError& e) {
      pt.valid = false;
      pt.error = e.what();
    }
  }
  if (out.best < 0) throw SolverError("every candidate on the tuning grid failed");
  return out;
}

struct SelectionResult {
  double lambda1_star = 0.0;
  double lambda0_star = 0.0;
  double rho = 0.5;
  std::vector<double> lambda1_grid, lambda0_grid;
  PathResult stage1;  // BIC over lambda1 with lambda0 = 0
  PathResult stage2;  // EBIC over lambda0 at lambda1_star
  FitResult fit;      // fit at the selected pair

  std::vector<double> bic_table() const { return criterion_column(stage1); }
  std::vector<double> ebic_table() const { return criterion_column(stage2); }

 private:
  static std::vector<double> criterion_column(const PathResult& p) {
    std::vector<double> v;
    for (const auto& pt : p.points) v.push_back(pt.criterion);
    return v;
  }
};

/// lambda1 by BIC at lambda0 = 0, then lambda0 by EBIC at the chosen lambda1.
inline SelectionResult select_two_stage(const FitProblem& base, const std::vector<double>& lambda1_grid,
                                        const std::vector<double>& lambda0_grid, double rho,
                                        const SolverConfig& cfg, const Coefficients* init = nullptr,
                                        bool warm_start = true) {
  if (rho < 0.0 || rho > 1.0) throw ConfigError("rho must lie in [0, 1]");
  SelectionResult res;
  res.rho = rho;
  res.lambda1_grid = lambda1_grid;
  res.lambda0_grid = lambda0_grid;
  const Coefficients start = init ? *init : initial_coefficients(base);

  FitProblem prob = base;
  prob.lambda0 = 0.0;
  res.stage1 = fit_path(prob, PathParam::lambda1, lambda1_grid, Criterion::bic, rho, start, cfg, warm_start);
  res.lambda1_star = lambda1_grid[static_cast<std::size_t>(res.stage1.best)];

  prob.lambda1 = res.lambda1_star;
  res.stage2 = fit_path(prob, PathParam::lambda0, lambda0_grid, Criterion::ebic, rho,
                        warm_start ? res.stage1.best_fit.coef : start, cfg, warm_start);
  res.lambda0_star = lambda0_grid[static_cast<std::size_t>(res.stage2.best)];
  res.fit = res.stage2.best_fit;
  return res;
}

}  // namespace rstgam
