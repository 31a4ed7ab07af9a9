#pragma once

#include <cstdint>
#include <vector>

#include "rstgam/bpst.hpp"
#include "rstgam/glm_core.hpp"
#include "rstgam/optim.hpp"
#include "rstgam/robust.hpp"
#include "rstgam/select.hpp"

namespace rstgam {

/// Model and tuning knobs shared by the fitting entry points.
struct ModelConfig {
  int degree = 2;
  int smoothness = 1;
  int order = 4;
  int knots = 4;  // interior knots per covariate
  int t0 = 4;
  int folds = 2;
  double rho = 0.5;
  int grid_size = 10;
  std::vector<double> lambda1_grid;  // empty: default grid
  std::vector<double> lambda0_grid;  // empty: default grid
  double weight_epsilon = 0.0;       // <= 0: 1 / sqrt(n (t0 + 1))
  double weight_gamma = 1.0;
  double pilot_lambda0 = 1.0;
  std::uint64_t seed = 1;
  SolverConfig solver;
  int threads = 0;

  void validate() const {
    if (degree < 1) throw ConfigError("degree must be at least 1");
    if (smoothness < 0 || smoothness >= degree) throw ConfigError("smoothness must satisfy 0 <= r < d");
    if (order < 1) throw ConfigError("spline order must be positive");
    if (knots < 0) throw ConfigError("knot count must be nonnegative");
    if (t0 < 0) throw ConfigError("t0 must be nonnegative");
    if (folds < 2) throw ConfigError("fold count must be at least 2");
    if (rho < 0 || rho > 1) throw ConfigError("rho must lie in [0, 1]");
    if (!(pilot_lambda0 >= 0)) throw ConfigError("pilot lambda0 must be nonnegative");
    if (grid_size < 1) throw ConfigError("grid size must be positive");
    for (double v : lambda1_grid)
      if (!(v >= 0)) throw ConfigError("lambda1 grid values must be nonnegative");
    for (double v : lambda0_grid)
      if (!(v >= 0)) throw ConfigError("lambda0 grid values must be nonnegative");
  }

  UnivariateOptions univariate() const { return {order, knots}; }
};

struct RstGamFit {
  FitProblem problem;  // with the adaptive weights and selected penalties
  AdaptiveWeights weights;
  SelectionResult selection;
  const FitResult& result() const { return selection.fit; }
};

/// Adaptive weights from thinned folds, then two-stage selection on the
/// weighted problem. `base` carries the window design; its penalties are ignored.
inline RstGamFit fit_rst_gam(const FitProblem& base, const ModelConfig& cfg) {
  cfg.validate();
  FitProblem prob = base;
  prob.with_slack = true;
  const Eigen::Map<const Eigen::MatrixXd> counts(prob.y.data(), prob.n, prob.window_len);
  const ThinnedFolds folds = thin(counts, cfg.folds, cfg.seed);

  WeightOptions wopts;
  wopts.epsilon = cfg.weight_epsilon;
  wopts.gamma_exp = cfg.weight_gamma;
  wopts.pilot_lambda0 = cfg.pilot_lambda0;
  wopts.grid_size = cfg.grid_size;
  wopts.solver = cfg.solver;
  wopts.threads = cfg.threads;

  RstGamFit out;
  out.weights = compute_weights(prob, folds, wopts);
  prob.weights = out.weights.w;
  const std::vector<double> g1 =
      cfg.lambda1_grid.empty() ? default_lambda1_grid(prob, cfg.grid_size) : cfg.lambda1_grid;
  const std::vector<double> g0 = cfg.lambda0_grid.empty() ? default_lambda0_grid(cfg.grid_size) : cfg.lambda0_grid;
  out.selection = select_two_stage(prob, g1, g0, cfg.rho, cfg.solver);
  prob.lambda1 = out.selection.lambda1_star;
  prob.lambda0 = out.selection.lambda0_star;
  out.problem = std::move(prob);
  return out;
}

inline RstGamFit fit_rst_gam(const PanelData& panel, const SplineSpace& space, int t_index,
                             const ModelConfig& cfg) {
  cfg.validate();
  return fit_rst_gam(assemble(panel, space, t_index, cfg.t0, 0.0, 0.0, std::nullopt, cfg.univariate()), cfg);
}

struct NstGamFit {
  FitProblem problem;
  PathResult path;
  double lambda0_star = 0.0;
  const FitResult& result() const { return path.best_fit; }
};

/// Baseline without slacks: the same lambda0 sweep and EBIC as the second
/// selection stage, with g identically zero.
inline NstGamFit fit_nst_gam(const FitProblem& base, const std::vector<double>& lambda0_grid, double rho,
                             const SolverConfig& solver) {
  NstGamFit out;
  FitProblem prob = base;
  prob.with_slack = false;
  prob.lambda1 = 0.0;
  out.path = fit_path(prob, PathParam::lambda0, lambda0_grid, Criterion::ebic, rho, initial_coefficients(prob),
                      solver);
  out.lambda0_star = lambda0_grid[static_cast<std::size_t>(out.path.best)];
  prob.lambda0 = out.lambda0_star;
  out.problem = std::move(prob);
  return out;
}

inline NstGamFit fit_nst_gam(const FitProblem& base, const ModelConfig& cfg) {
  cfg.validate();
  return fit_nst_gam(base, cfg.lambda0_grid.empty() ? default_lambda0_grid(cfg.grid_size) : cfg.lambda0_grid,
                     cfg.rho, cfg.solver);
}

}  // namespace rstgam
