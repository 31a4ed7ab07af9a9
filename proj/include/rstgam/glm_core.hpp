#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "rstgam/bpst.hpp"
#include "rstgam/errors.hpp"
#include "rstgam/panel.hpp"
#include "rstgam/usplines.hpp"

namespace rstgam {

/// Model coefficients: reduced bivariate spline coefficients, stacked
/// univariate coefficients and one nonnegative slack per location.
struct Coefficients {
  Eigen::VectorXd gamma_star;
  Eigen::VectorXd theta;
  Eigen::VectorXd xi;
};

struct UnivariateOptions {
  int order = 4;
  int n_interior_knots = 4;
};

/// Design for one moving-window fit. Window rows are ordered time-major:
/// row s * n + i holds location i at window offset s.
struct FitProblem {
  int n = 0;
  int window_len = 1;  // t0 + 1
  int t_index = 0;     // last column of the window in the panel
  Eigen::MatrixXd design_bivariate;   // n x dim(gamma*), rows B(u_i)^T Q2
  Eigen::MatrixXd design_univariate;  // (n * window_len) x sum |J_k|
  Eigen::MatrixXd penalty_star;       // Q2^T P Q2
  Eigen::VectorXd intercept_direction;  // gamma* of the constant function 1
  Eigen::VectorXd y;                  // window counts, same row order
  Eigen::VectorXd weights;            // adaptive Lasso weights, length n
  double lambda0 = 0.0;
  double lambda1 = 0.0;
  double sigma2 = 1.0;
  double eta_max = 30.0;
  bool with_slack = true;
  std::vector<SplineBasis1D> univariate_bases;
  std::size_t clamped_covariates = 0;

  Eigen::Index rows() const { return static_cast<Eigen::Index>(n) * window_len; }
  Eigen::Index dim_gamma() const { return design_bivariate.cols(); }
  Eigen::Index dim_theta() const { return design_univariate.cols(); }
  Eigen::Index dim_xi() const { return with_slack ? n : 0; }
  Eigen::Index dim() const { return dim_gamma() + dim_theta() + dim_xi(); }
  int t0() const { return window_len - 1; }

  Eigen::VectorXd pack(const Coefficients& c) const {
    if (c.gamma_star.size() != dim_gamma() || c.theta.size() != dim_theta() ||
        c.xi.size() != dim_xi())
      throw ConfigError("coefficient dimensions do not match the problem");
    Eigen::VectorXd z(dim());
    z << c.gamma_star, c.theta, c.xi;
    return z;
  }

  Coefficients unpack(const Eigen::VectorXd& z) const {
    return Coefficients{z.head(dim_gamma()), z.segment(dim_gamma(), dim_theta()),
                        z.tail(dim_xi())};
  }

  /// alpha_k(x) evaluated from the k-th block of theta.
  double eval_univariate(const Eigen::VectorXd& theta, int k, double x) const {
    Eigen::Index off = 0;
    for (int j = 0; j < k; ++j) off += univariate_bases[j].size();
    const auto& b = univariate_bases[k];
    return eval_basis1d(b, x).dot(theta.segment(off, b.size()));
  }
};

/// Window counts as an n x (t0+1) matrix ending at column t_index.
inline Eigen::MatrixXd window_counts(const PanelData& panel, int t_index, int t0) {
  if (t0 < 0 || t_index - t0 < 0 || t_index >= panel.num_times())
    throw ConfigError("window [t - t0, t] is outside the panel's time range");
  return panel.counts.middleCols(t_index - t0, t0 + 1);
}

/// Copy of `problem` with the response replaced by n x (t0+1) window counts.
inline FitProblem with_counts(FitProblem problem, const Eigen::MatrixXd& counts) {
  if (counts.rows() != problem.n || counts.cols() != problem.window_len)
    throw ConfigError("count matrix does not match the window shape");
  validate_counts(counts);
  problem.y = counts.reshaped();
  return problem;
}

/// Builds the design for the window ending at t_index. Univariate bases are
/// fitted on the window's covariate values; locations must lie in the mesh.
inline FitProblem assemble(const PanelData& panel, const SplineSpace& space, int t_index, int t0,
                           double lambda0, double lambda1,
                           std::optional<Eigen::VectorXd> weights = std::nullopt,
                           const UnivariateOptions& uopts = {}) {
  if (lambda0 < 0 || lambda1 < 0) throw ConfigError("penalty parameters must be nonnegative");
  const Eigen::MatrixXd counts = window_counts(panel, t_index, t0);
  validate_counts(counts);

  FitProblem prob;
  prob.n = panel.n();
  prob.window_len = t0 + 1;
  prob.t_index = t_index;
  prob.lambda0 = lambda0;
  prob.lambda1 = lambda1;
  prob.y = counts.reshaped();
  prob.design_bivariate = spline_design(space, panel.locations);
  prob.penalty_star = space.penalty_star;
  prob.intercept_direction =
      space.constraints.q2.transpose() * Eigen::VectorXd::Ones(space.basis.size());

  const int p = panel.p();
  const Eigen::Index rows = prob.rows();
  std::vector<std::vector<double>> samples(p);
  int total = 0;
  for (int k = 0; k < p; ++k) {
    const Eigen::MatrixXd window = panel.covariates[k].middleCols(t_index - t0, t0 + 1);
    samples[k].assign(window.data(), window.data() + window.size());
    prob.univariate_bases.push_back(fit_basis(samples[k], uopts.order, uopts.n_interior_knots));
    total += prob.univariate_bases.back().size();
  }
  prob.design_univariate.resize(rows, total);
  int col = 0;
  for (int k = 0; k < p; ++k) {
    const auto& basis = prob.univariate_bases[k];
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double x = samples[k][static_cast<std::size_t>(r)];
      if (!basis.in_range(x)) ++prob.clamped_covariates;
      prob.design_univariate.row(r).segment(col, basis.size()) = eval_basis1d(basis, x).transpose();
    }
    col += basis.size();
  }

  if (weights) {
    if (weights->size() != prob.n) throw ConfigError("weight vector length must equal n");
    if (!weights->allFinite() || weights->minCoeff() < 0)
      throw ConfigError("weights must be finite and nonnegative");
    prob.weights = *weights;
  } else {
    prob.weights = Eigen::VectorXd::Ones(prob.n);
  }
  return prob;
}

/// Linear predictor eta_{is} for every window row (uncapped).
inline Eigen::VectorXd linear_predictor(const FitProblem& prob, const Eigen::VectorXd& z) {
  const Eigen::Index dg = prob.dim_gamma();
  const Eigen::Index dt = prob.dim_theta();
  const Eigen::VectorXd spatial = prob.design_bivariate * z.head(dg);
  Eigen::VectorXd eta = prob.design_univariate * z.segment(dg, dt);
  for (int s = 0; s < prob.window_len; ++s) {
    auto block = eta.segment(static_cast<Eigen::Index>(s) * prob.n, prob.n);
    block += spatial;
    if (prob.with_slack) block += z.tail(prob.n);
  }
  return eta;
}

/// Smooth part f: sum over window rows of (exp(eta) - y eta) / sigma^2 plus
/// (lambda0 / 2) gamma*^T P* gamma*. Fills `grad` when non-null. eta is capped
/// at eta_max; the number of capped rows is added to `cap_hits`.
inline double evaluate_f(const FitProblem& prob, const Eigen::VectorXd& z, Eigen::VectorXd* grad,
                         std::size_t* cap_hits = nullptr) {
  const Eigen::Index dg = prob.dim_gamma();
  const Eigen::Index dt = prob.dim_theta();
  Eigen::VectorXd eta = linear_predictor(prob, z);
  std::size_t caps = 0;
  double value = 0.0;
  for (Eigen::Index r = 0; r < eta.size(); ++r) {
    double e = eta[r];
    if (e > prob.eta_max) {
      e = prob.eta_max;
      ++caps;
    }
    const double mu = std::exp(e);
    value += mu - prob.y[r] * e;
    eta[r] = (mu - prob.y[r]) / prob.sigma2;  // reused as the residual
  }
  value /= prob.sigma2;
  const Eigen::VectorXd pg = prob.penalty_star * z.head(dg);
  value += 0.5 * prob.lambda0 * z.head(dg).dot(pg);
  if (cap_hits) *cap_hits += caps;

  if (grad) {
    const Eigen::VectorXd& resid = eta;
    Eigen::VectorXd per_location = Eigen::VectorXd::Zero(prob.n);
    for (int s = 0; s < prob.window_len; ++s)
      per_location += resid.segment(static_cast<Eigen::Index>(s) * prob.n, prob.n);
    grad->resize(prob.dim());
    grad->head(dg).noalias() = prob.design_bivariate.transpose() * per_location;
    grad->head(dg) += prob.lambda0 * pg;
    grad->segment(dg, dt).noalias() = prob.design_univariate.transpose() * resid;
    if (prob.with_slack) grad->tail(prob.n) = per_location;
  }
  return value;
}

inline double objective_f(const FitProblem& prob, const Coefficients& c) {
  return evaluate_f(prob, prob.pack(c), nullptr);
}

inline Coefficients gradient_f(const FitProblem& prob, const Coefficients& c) {
  Eigen::VectorXd g;
  evaluate_f(prob, prob.pack(c), &g);
  return prob.unpack(g);
}

/// Full Poisson log-likelihood sum (y log mu - mu - log y!) at z.
inline double poisson_loglik(const FitProblem& prob, const Eigen::VectorXd& z) {
  const Eigen::VectorXd eta = linear_predictor(prob, z);
  double ll = 0.0;
  for (Eigen::Index r = 0; r < eta.size(); ++r) {
    const double e = std::min(eta[r], prob.eta_max);
    const double y = prob.y[r];
    ll += y * e - std::exp(e) - std::lgamma(y + 1.0);
  }
  return ll;
}

/// Starting point: constant spatial surface at log(mean count), theta = 0, xi = 0.
inline Coefficients initial_coefficients(const FitProblem& prob) {
  const double mean = prob.y.size() > 0 ? prob.y.mean() : 1.0;
  Coefficients c;
  // Q2 Q2^T 1 = 1 because constants satisfy every smoothness condition.
  c.gamma_star = std::log(mean + 0.5) * prob.intercept_direction;
  c.theta = Eigen::VectorXd::Zero(prob.dim_theta());
  c.xi = Eigen::VectorXd::Zero(prob.dim_xi());
  return c;
}

}  // namespace rstgam
