#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rstgam/optim.hpp"
#include "rstgam/simulate.hpp"
#include "test_support.hpp"

namespace rstgam {
namespace {

using fixtures::random_panel;
using fixtures::unit_square_mesh;

TEST(ProxTest, SoftThresholdAtZero) {
  const Eigen::VectorXd w = Eigen::VectorXd::Ones(3);
  const Eigen::VectorXd xi{{5.0, 1.0, -0.5}};
  const Eigen::VectorXd out = prox_g(xi, 1.0, 2.0, w);
  EXPECT_DOUBLE_EQ(out[0], 3.0);
  EXPECT_DOUBLE_EQ(out[1], 0.0);
  EXPECT_DOUBLE_EQ(out[2], 0.0);
}

TEST(ProxTest, MatchesGridMinimizer) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> xi_dist(-3.0, 3.0), pos(0.05, 2.0);
  for (int k = 0; k < 1000; ++k) {
    const double xi = xi_dist(rng), eta = pos(rng), lambda = pos(rng), w = pos(rng);
    const double got = prox_g(Eigen::VectorXd::Constant(1, xi), eta, lambda, Eigen::VectorXd::Constant(1, w))[0];
    EXPECT_NEAR(got, oracle::prox_grid(xi, eta, lambda, w, 1e-6), 2e-6);
  }
}

TEST(ProxTest, Nonexpansive) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal(0.0, 2.0);
  std::uniform_real_distribution<double> pos(0.1, 1.0);
  for (int k = 0; k < 200; ++k) {
    Eigen::VectorXd a(10), b(10), w(10);
    for (int j = 0; j < 10; ++j) {
      a[j] = normal(rng);
      b[j] = normal(rng);
      w[j] = pos(rng);
    }
    const double eta = pos(rng), lambda = pos(rng);
    EXPECT_LE((prox_g(a, eta, lambda, w) - prox_g(b, eta, lambda, w)).norm(), (a - b).norm() + 1e-15);
  }
}

TEST(AdaptiveStepTest, WorkedExamples) {
  const Eigen::VectorXd z0 = Eigen::VectorXd::Zero(1), z1 = Eigen::VectorXd::Ones(1);
  // L = 1, eta_prev = 1: both branches give 1.
  StepUpdate s = adaptive_step(1.0, 1.0 / 3.0, Eigen::VectorXd::Ones(1), z0, z1, z0);
  EXPECT_NEAR(s.eta, 1.0, 1e-15);
  EXPECT_NEAR(s.lipschitz, 1.0, 1e-15);

  // Small curvature: growth branch sqrt(2/3 + 1/3) * 0.1.
  s = adaptive_step(0.1, 1.0 / 3.0, Eigen::VectorXd::Constant(1, 0.01), z0, z1, z0);
  EXPECT_NEAR(s.eta, 0.1, 1e-15);
  s = adaptive_step(0.1, 1.0, Eigen::VectorXd::Constant(1, 0.01), z0, z1, z0);
  EXPECT_NEAR(s.eta, std::sqrt(2.0 / 3.0 + 1.0) * 0.1, 1e-15);
  EXPECT_NEAR(s.upsilon, std::sqrt(2.0 / 3.0 + 1.0), 1e-15);

  // L = 10, eta_prev = 1: 1 / sqrt(199).
  s = adaptive_step(1.0, 1.0 / 3.0, Eigen::VectorXd::Constant(1, 10.0), z0, z1, z0);
  EXPECT_NEAR(s.eta, 1.0 / std::sqrt(199.0), 1e-15);
  EXPECT_NEAR(s.eta, 0.0709, 1e-4);

  s = adaptive_step(0.5, 0.2, z1, z0, z1, z1);
  EXPECT_TRUE(s.zero_displacement);
  EXPECT_DOUBLE_EQ(s.eta, 0.5);
}

// 0.5 |A z - b|^2 + lambda |z_tail|_1 with z_tail >= 0.
struct ToyLasso {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::Index n_free = 0;
  double lambda = 0.0;

  Eigen::Index dim() const { return A.cols(); }
  double smooth(const Eigen::VectorXd& z, Eigen::VectorXd* g) const {
    const Eigen::VectorXd r = A * z - b;
    if (g) *g = A.transpose() * r;
    return 0.5 * r.squaredNorm();
  }
  double nonsmooth(const Eigen::VectorXd& z) const {
    const auto t = z.tail(dim() - n_free);
    if (t.size() > 0 && t.minCoeff() < 0) return std::numeric_limits<double>::infinity();
    return lambda * t.sum();
  }
  void prox(Eigen::VectorXd& z, double eta) const {
    const Eigen::Index m = dim() - n_free;
    z.tail(m) = prox_g(z.tail(m), eta, lambda, Eigen::VectorXd::Ones(m));
  }
  double kkt(const Eigen::VectorXd& z, const Eigen::VectorXd& g) const {
    double res = n_free > 0 ? g.head(n_free).cwiseAbs().maxCoeff() : 0.0;
    for (Eigen::Index j = n_free; j < dim(); ++j)
      res = std::max(res, z[j] > 0 ? std::abs(g[j] + lambda) : std::max(-g[j] - lambda, -z[j]));
    return res;
  }
};
static_assert(CompositeProblem<ToyLasso>);

TEST(SolverTest, QuadraticReachesExactMinimizer) {
  // Diagonal design: the minimizer is known in closed form.
  ToyLasso toy;
  toy.A = Eigen::VectorXd{{1.0, 2.0, 3.0, 0.5}}.asDiagonal();
  toy.b = Eigen::VectorXd{{1.0, -2.0, 3.0, 0.1}};
  toy.n_free = 1;
  toy.lambda = 0.5;
  Eigen::VectorXd expected(4);
  expected[0] = 1.0;
  for (int j = 1; j < 4; ++j) {
    const double a = toy.A(j, j);
    expected[j] = std::max(0.0, (a * toy.b[j] - toy.lambda) / (a * a));
  }
  for (Acceleration acc : {Acceleration::off, Acceleration::restart_momentum}) {
    SolverConfig cfg;
    cfg.kkt_tol = 1e-10;
    cfg.accel = acc;
    const SolveOutcome out = solve_composite(toy, Eigen::VectorXd::Constant(4, 2.0), cfg);
    EXPECT_TRUE(out.converged);
    EXPECT_LT((out.z - expected).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(SolverTest, RandomLeastSquaresMatchesNormalEquations) {
  std::mt19937_64 rng(4);
  ToyLasso toy;
  toy.A = Eigen::MatrixXd::Zero(30, 6);
  std::normal_distribution<double> normal;
  for (Eigen::Index k = 0; k < toy.A.size(); ++k) toy.A.data()[k] = normal(rng);
  toy.b = fixtures::random_vector(30, rng);
  toy.n_free = 6;
  SolverConfig cfg;
  cfg.kkt_tol = 1e-10;
  const SolveOutcome out = solve_composite(toy, Eigen::VectorXd::Zero(6), cfg);
  const Eigen::VectorXd ls = toy.A.colPivHouseholderQr().solve(toy.b);
  EXPECT_TRUE(out.converged);
  EXPECT_LT((out.z - ls).norm(), 1e-8);
}

TEST(SolverTest, ConfigValidation) {
  ToyLasso toy;
  toy.A = Eigen::MatrixXd::Identity(2, 2);
  toy.b = Eigen::VectorXd::Ones(2);
  SolverConfig cfg;
  cfg.kkt_tol = 0;
  EXPECT_THROW(solve_composite(toy, Eigen::VectorXd::Zero(2), cfg), ConfigError);
  EXPECT_THROW(solve_composite(toy, Eigen::VectorXd::Zero(3)), ConfigError);
}

struct SmallFit {
  PanelData panel;
  SplineSpace space;
  FitProblem prob;
};

SmallFit small_fit(double lambda1) {
  PanelData panel = random_panel(50, 3, 1, 77);
  panel.counts(3, 2) += 60;
  panel.counts(17, 2) += 45;
  SplineSpace space = build_spline_space(TriMesh({{0, 0}, {1, 0}, {0, 1}, {1, 1}}, {{0, 1, 2}, {1, 3, 2}}), 2, 1);
  FitProblem prob = assemble(panel, space, 2, 2, 0.1, lambda1, std::nullopt, {4, 2});
  return {std::move(panel), std::move(space), std::move(prob)};
}

TEST(KktTest, WorkedExamples) {
  SmallFit s = small_fit(2.0);
  FitProblem& prob = s.prob;
  const Eigen::Index nb = prob.dim_gamma() + prob.dim_theta();
  Eigen::VectorXd z = Eigen::VectorXd::Zero(prob.dim());
  Eigen::VectorXd g = Eigen::VectorXd::Zero(prob.dim());
  // Active slack with gradient exactly -lambda1 w.
  z[nb] = 1.0;
  g[nb] = -2.0;
  EXPECT_DOUBLE_EQ(kkt_residual_from_gradient(prob, z, g), 0.0);
  // Zero slack with positive gradient lies in the normal cone.
  z[nb] = 0.0;
  g[nb] = 5.0;
  EXPECT_DOUBLE_EQ(kkt_residual_from_gradient(prob, z, g), 0.0);
  // Zero slack pushed beyond the threshold.
  g[nb] = -3.0;
  EXPECT_DOUBLE_EQ(kkt_residual_from_gradient(prob, z, g), 1.0);
  // Active slack off the stationarity line.
  z[nb] = 0.5;
  g[nb] = 1.0;
  EXPECT_DOUBLE_EQ(kkt_residual_from_gradient(prob, z, g), 3.0);
  // Spatial block.
  g.setZero();
  z.setZero();
  g[0] = -0.25;
  EXPECT_DOUBLE_EQ(kkt_residual_from_gradient(prob, z, g), 0.25);
}

TEST(SolverTest, SmallInstanceConvergesFromDifferentStarts) {
  const SmallFit s = small_fit(3.0);
  SolverConfig cfg;
  cfg.max_iters = 200000;
  const FitResult a = solve(s.prob, initial_coefficients(s.prob), cfg);
  ASSERT_TRUE(a.converged);
  EXPECT_LT(a.kkt, 1e-6);
  EXPECT_LT(kkt_residual(s.prob, a.coef), 1e-6);
  EXPECT_GE(a.coef.xi.minCoeff(), 0.0);

  Coefficients other = initial_coefficients(s.prob);
  other.gamma_star *= 0.5;
  other.theta.setConstant(0.1);
  other.xi.setConstant(0.5);
  const FitResult b = solve(s.prob, other, cfg);
  ASSERT_TRUE(b.converged);
  EXPECT_LT(b.kkt, 1e-6);
  const double scale = std::max(1.0, std::abs(a.objective));
  EXPECT_NEAR(a.objective, b.objective, 1e-7 * scale);

  SolverConfig acc = cfg;
  acc.accel = Acceleration::restart_momentum;
  const FitResult c = solve(s.prob, initial_coefficients(s.prob), acc);
  ASSERT_TRUE(c.converged);
  EXPECT_NEAR(a.objective, c.objective, 1e-6 * scale);

  for (std::size_t k = 1; k < a.trace.size(); ++k)
    EXPECT_LE(a.trace.running_min[k], a.trace.running_min[k - 1]);
  EXPECT_FALSE(a.flagged().empty());
}

TEST(SolverTest, PreconditionedSolveReachesSameOptimum) {
  const SmallInstance s = small_instance();
  SolverConfig plain;
  plain.kkt_tol = 1e-8;
  plain.max_iters = 100000;
  SolverConfig pre = plain;
  pre.precondition = true;
  const FitResult a = solve(s.problem, initial_coefficients(s.problem), plain);
  const FitResult b = solve(s.problem, initial_coefficients(s.problem), pre);
  ASSERT_TRUE(a.converged);
  ASSERT_TRUE(b.converged);
  EXPECT_LT(b.kkt, 1e-8);
  EXPECT_LT(kkt_residual(s.problem, b.coef), 1e-7);
  EXPECT_LT(b.iterations, a.iterations);
  EXPECT_NEAR(a.objective, b.objective, 1e-7 * std::abs(a.objective));
  EXPECT_EQ(a.flagged(), b.flagged());
}

TEST(SolverTest, TraceCsvHeader) {
  SolverTrace trace;
  trace.push(0, 1.0, 0.5, std::nan(""), 0.1);
  trace.push(1, 0.5, 0.6, 2.0, std::nan(""));
  std::ostringstream out;
  write_trace_csv(out, trace);
  const std::string text = out.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "iter,F,eta,L,kkt");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
}

}  // namespace
}  // namespace rstgam
