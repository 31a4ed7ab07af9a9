#include <random>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <gtest/gtest.h>

#include "rstgam/pipeline.hpp"
#include "rstgam/select.hpp"
#include "rstgam/simulate.hpp"
#include "test_support.hpp"

namespace rstgam {
namespace {

FitProblem toy_problem(unsigned seed) {
  const PanelData panel = fixtures::random_panel(40, 3, 1, seed);
  const SplineSpace space = build_spline_space(fixtures::unit_square_mesh(), 2, 1);
  return assemble(panel, space, 2, 2, 0.0, 0.0, std::nullopt, {4, 2});
}

TEST(CriteriaTest, BicWithoutActiveSlacksIsDeviance) {
  const FitProblem prob = toy_problem(1);
  const Coefficients c = initial_coefficients(prob);
  EXPECT_DOUBLE_EQ(bic(prob, c), -2.0 * poisson_loglik(prob, prob.pack(c)));
  EXPECT_DOUBLE_EQ(bic_value(-10.0, 500.0, 3) - 20.0, std::log(500.0) * 3);
}

TEST(CriteriaTest, SaturatedLogLikelihood) {
  FitProblem prob = toy_problem(2);
  std::mt19937_64 rng(2);
  Coefficients c = initial_coefficients(prob);
  c.theta = fixtures::random_vector(prob.dim_theta(), rng, 0.2);
  prob.y = linear_predictor(prob, prob.pack(c)).array().exp();
  double oracle = 0.0;
  for (double y : prob.y) oracle += y * std::log(y) - y - std::lgamma(y + 1.0);
  EXPECT_NEAR(-2.0 * poisson_loglik(prob, prob.pack(c)), -2.0 * oracle, 1e-9 * std::abs(oracle));
}

TEST(CriteriaTest, EbicExamples) {
  EXPECT_DOUBLE_EQ(ebic_value(-7.0, 100.0, 4, 50, 0.0), bic_value(-7.0, 100.0, 4));
  EXPECT_NEAR(ebic_value(0.0, 1.0, 3, 10, 1.0), 2.0 * std::log(120.0), 1e-12);

  using Big = boost::multiprecision::cpp_bin_float_50;
  const Big exact = boost::multiprecision::lgamma(Big(1001)) - boost::multiprecision::lgamma(Big(51)) -
                    boost::multiprecision::lgamma(Big(951));
  const double expected = -2.0 * -3.5 + std::log(200.0) * 50 + 2.0 * 0.5 * exact.convert_to<double>();
  EXPECT_NEAR(ebic_value(-3.5, 200.0, 50, 1000, 0.5), expected, 1e-9);

  EXPECT_THROW(ebic_value(0.0, 10.0, 11, 10, 0.5), std::logic_error);
  EXPECT_THROW(ebic_value(0.0, 10.0, 1, 10, 1.5), ConfigError);
}

TEST(CriteriaTest, GridsAndDf) {
  const auto g = log_grid(1e-4, 1e4, 9);
  ASSERT_EQ(g.size(), 9u);
  EXPECT_NEAR(g.front(), 1e-4, 1e-18);
  EXPECT_NEAR(g[4], 1.0, 1e-12);
  EXPECT_NEAR(g.back(), 1e4, 1e-8);
  EXPECT_THROW(log_grid(0.0, 1.0, 3), ConfigError);

  const FitProblem prob = toy_problem(3);
  Coefficients c = initial_coefficients(prob);
  c.xi[0] = 1.0;
  c.xi[1] = 1e-12;
  EXPECT_EQ(df_total(prob, c), prob.dim_gamma() + prob.dim_theta() + 1);
  EXPECT_EQ(parameter_count(prob), prob.dim_gamma() + prob.dim_theta() + 40);
  EXPECT_EQ(default_lambda1_grid(prob).size(), 10u);
}

TEST(SelectTest, SingleCandidateGrids) {
  const FitProblem prob = toy_problem(4);
  SolverConfig cfg = study_solver();
  const SelectionResult r = select_two_stage(prob, {5.0}, {0.1}, 0.5, cfg);
  EXPECT_DOUBLE_EQ(r.lambda1_star, 5.0);
  EXPECT_DOUBLE_EQ(r.lambda0_star, 0.1);
  EXPECT_EQ(r.bic_table().size(), 1u);
  EXPECT_EQ(r.ebic_table().size(), 1u);
  EXPECT_TRUE(std::isfinite(r.bic_table()[0]));
}

TEST(SelectTest, TiesGoToTheLargerPenalty) {
  const FitProblem prob = toy_problem(5);
  const SolverConfig cfg = study_solver();
  // Both penalties are far above every slack gradient: all slacks stay zero.
  const SelectionResult r = select_two_stage(prob, {1e6, 2e6, 1e6}, {0.5, 0.5}, 0.5, cfg);
  EXPECT_DOUBLE_EQ(r.bic_table()[0], r.bic_table()[1]);
  EXPECT_DOUBLE_EQ(r.lambda1_star, 2e6);
  EXPECT_EQ(r.stage1.best, 1);
  EXPECT_EQ(r.stage2.best, 0);
}

TEST(SelectTest, FailsOnlyWhenEveryCandidateFails) {
  FitProblem prob = toy_problem(6);
  prob.y[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(select_two_stage(prob, {1.0, 2.0}, {1.0}, 0.5, study_solver()), SolverError);
  EXPECT_THROW(select_two_stage(toy_problem(6), {}, {1.0}, 0.5, study_solver()), ConfigError);
}

TEST(SelectTest, WarmStartsAgreeWithColdStarts) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Scenario sc = gen_horseshoe_scenario(300, 5, seed, 30.0, 15);
    const SplineSpace space = build_spline_space(sc.mesh, 2, 1);
    FitProblem prob = assemble(sc.panel, space, 4, 4, 0.0, 0.0);
    const Eigen::Map<const Eigen::MatrixXd> counts(prob.y.data(), prob.n, prob.window_len);
    WeightOptions wopts;
    wopts.solver = study_solver();
    prob.weights = compute_weights(prob, thin(counts, 2, seed), wopts).w;
    const auto g1 = default_lambda1_grid(prob);
    const auto g0 = default_lambda0_grid();
    const SelectionResult warm = select_two_stage(prob, g1, g0, 0.5, study_solver(), nullptr, true);
    const SelectionResult cold = select_two_stage(prob, g1, g0, 0.5, study_solver(), nullptr, false);
    EXPECT_LE(std::abs(warm.stage1.best - cold.stage1.best), 1) << "seed " << seed;
    EXPECT_LE(std::abs(warm.stage2.best - cold.stage2.best), 1) << "seed " << seed;
  }
}

TEST(SelectTest, BaselineUsesTheRidgeSweep) {
  const FitProblem prob = toy_problem(7);
  const NstGamFit nst = fit_nst_gam(prob, {0.01, 1.0, 100.0}, 0.5, study_solver());
  EXPECT_FALSE(nst.problem.with_slack);
  EXPECT_EQ(nst.result().coef.xi.size(), 0);
  EXPECT_EQ(nst.path.points.size(), 3u);
  for (const auto& pt : nst.path.points) EXPECT_EQ(pt.df, prob.dim_gamma() + prob.dim_theta());
  EXPECT_DOUBLE_EQ(nst.lambda0_star, nst.path.points[static_cast<std::size_t>(nst.path.best)].lambda);
}

}  // namespace
}  // namespace rstgam
