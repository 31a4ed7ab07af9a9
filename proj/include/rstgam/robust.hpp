#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rstgam/errors.hpp"
#include "rstgam/glm_core.hpp"
#include "rstgam/optim.hpp"
#include "rstgam/parallel.hpp"
#include "rstgam/select.hpp"

namespace rstgam {

struct ThinnedFolds {
  int Q = 0;
  std::uint64_t seed = 0;
  std::vector<Eigen::MatrixXd> folds;
};

/// Splits every count into Q parts by an equal-probability multinomial draw,
/// entries visited in column-major order from one seeded stream.
inline ThinnedFolds thin(const Eigen::MatrixXd& counts, int Q, std::uint64_t seed) {
  if (Q < 2) throw ConfigError("fold count must be at least 2");
  validate_counts(counts);
  ThinnedFolds out;
  out.Q = Q;
  out.seed = seed;
  out.folds.assign(static_cast<std::size_t>(Q), Eigen::MatrixXd::Zero(counts.rows(), counts.cols()));
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x7468u};
  std::mt19937_64 rng(seq);
  for (Eigen::Index k = 0; k < counts.size(); ++k) {
    auto left = static_cast<long long>(counts.data()[k]);
    for (int q = 0; q < Q - 1; ++q) {
      long long a = 0;
      if (left > 0) {
        std::binomial_distribution<long long> draw(left, 1.0 / (Q - q));
        a = draw(rng);
      }
      out.folds[static_cast<std::size_t>(q)].data()[k] = static_cast<double>(a);
      left -= a;
    }
    out.folds[static_cast<std::size_t>(Q - 1)].data()[k] = static_cast<double>(left);
  }
  return out;
}

struct WeightOptions {
  double epsilon = 0.0;  // <= 0 selects 1 / sqrt(n (t0 + 1))
  double gamma_exp = 1.0;
  double pilot_lambda0 = 1.0;  // roughness penalty of the pilot fits
  int grid_size = 10;
  std::vector<double> lambda1_grid;  // empty selects the default grid per fold
  SolverConfig solver;
  int threads = 0;
};

struct AdaptiveWeights {
  Eigen::VectorXd w;
  Eigen::VectorXd xi_bar;
  double epsilon = 0.0;
  double gamma_exp = 1.0;
  std::vector<double> pilot_lambda1;
  std::vector<int> pilot_active;
};

inline double default_epsilon(const FitProblem& prob) {
  return 1.0 / std::sqrt(static_cast<double>(prob.n) * prob.window_len);
}

/// w_i = 1 / (xi_bar_i + epsilon)^gamma_exp with xi_bar the mean fold estimate.
inline AdaptiveWeights weights_from_slacks(const std::vector<Eigen::VectorXd>& fold_xi, double epsilon,
                                           double gamma_exp) {
  if (fold_xi.empty()) throw ConfigError("no fold estimates");
  if (!(epsilon > 0) || !(gamma_exp > 0)) throw ConfigError("weight stabilizer and exponent must be positive");
  AdaptiveWeights out;
  out.epsilon = epsilon;
  out.gamma_exp = gamma_exp;
  out.xi_bar = Eigen::VectorXd::Zero(fold_xi.front().size());
  for (const auto& xi : fold_xi) {
    if (xi.size() != out.xi_bar.size()) throw ConfigError("fold estimates differ in length");
    out.xi_bar += xi;
  }
  out.xi_bar /= static_cast<double>(fold_xi.size());
  out.w = (out.xi_bar.array().max(0.0) + epsilon).pow(-gamma_exp).matrix();
  return out;
}

/// Plain-Lasso pilot fits (unit weights, no ridge) on each fold with lambda1
/// chosen by BIC on that fold, then adaptive weights from the averaged slacks.
/// The fold arrays must be congruent to the window of `base`.
inline AdaptiveWeights compute_weights(const FitProblem& base, const ThinnedFolds& folds,
                                       const WeightOptions& opts = {}) {
  if (!base.with_slack) throw ConfigError("adaptive weights need the slack block");
  if (!(opts.pilot_lambda0 >= 0)) throw ConfigError("pilot lambda0 must be nonnegative");
  const auto Q = static_cast<std::size_t>(folds.Q);
  std::vector<Eigen::VectorXd> fold_xi(Q);
  std::vector<double> pilot(Q);
  std::vector<int> active(Q);
  parallel_for(
      Q,
      [&](std::size_t q) {
        FitProblem prob = with_counts(base, folds.folds[q]);
        prob.weights = Eigen::VectorXd::Ones(prob.n);
        prob.lambda0 = opts.pilot_lambda0;
        const std::vector<double> grid =
            opts.lambda1_grid.empty() ? default_lambda1_grid(prob, opts.grid_size) : opts.lambda1_grid;
        try {
          const PathResult path = fit_path(prob, PathParam::lambda1, grid, Criterion::bic, 0.0,
                                           initial_coefficients(prob), opts.solver);
          fold_xi[q] = path.best_fit.coef.xi;
          pilot[q] = grid[static_cast<std::size_t>(path.best)];
          active[q] = count_active(fold_xi[q]);
        } catch (const SolverError& e) {
          throw SolverError("pilot fit on fold " + std::to_string(q + 1) + ": " + e.what());
        }
      },
      opts.threads);
  AdaptiveWeights out =
      weights_from_slacks(fold_xi, opts.epsilon > 0 ? opts.epsilon : default_epsilon(base), opts.gamma_exp);
  out.pilot_lambda1 = std::move(pilot);
  out.pilot_active = std::move(active);
  return out;
}

}  // namespace rstgam
