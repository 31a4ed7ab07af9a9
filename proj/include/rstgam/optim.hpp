#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rstgam/errors.hpp"
#include "rstgam/glm_core.hpp"

namespace rstgam {

enum class Acceleration { off, restart_momentum };

struct SolverConfig {
  double eta0 = 0.0;            // <= 0 selects the probe below
  double upsilon0 = 1.0 / 3.0;
  double probe_delta = 1e-6;
  int max_iters = 5000;
  double kkt_tol = 1e-6;
  Acceleration accel = Acceleration::off;
  int check_every = 10;         // KKT checkpoint spacing for the accelerated path
  bool record_trace = true;
  bool precondition = false;    // solve in rescaled coordinates, see PreconditionedObjective
};

/// Per-iteration history. `kkt` is NaN between accelerated checkpoints.
struct SolverTrace {
  std::vector<int> iter;
  std::vector<double> objective;
  std::vector<double> eta;
  std::vector<double> lipschitz;
  std::vector<double> running_min;
  std::vector<double> kkt;

  std::size_t size() const { return iter.size(); }

  void push(int k, double f, double step, double lip, double kkt_value) {
    const double best = running_min.empty() ? f : std::min(running_min.back(), f);
    iter.push_back(k);
    objective.push_back(f);
    eta.push_back(step);
    lipschitz.push_back(lip);
    running_min.push_back(best);
    kkt.push_back(kkt_value);
  }
};

inline void write_trace_csv(std::ostream& out, const SolverTrace& trace) {
  out << "iter,F,eta,L,kkt\n";
  out.precision(17);
  for (std::size_t k = 0; k < trace.size(); ++k) {
    out << trace.iter[k] << ',' << trace.objective[k] << ',' << trace.eta[k] << ','
        << trace.lipschitz[k] << ',';
    if (!std::isnan(trace.kkt[k])) out << trace.kkt[k];
    out << '\n';
  }
}

/// Proximal map of eta * lambda1 * sum w_i |xi_i| + indicator(xi >= 0):
/// [xi_i - eta lambda1 w_i]_+ elementwise.
inline Eigen::VectorXd prox_g(const Eigen::VectorXd& xi, double eta, double lambda1,
                              const Eigen::VectorXd& w) {
  return (xi - eta * lambda1 * w).cwiseMax(0.0);
}

struct StepUpdate {
  double eta = 0.0;
  double upsilon = 0.0;
  double lipschitz = 0.0;
  bool zero_displacement = false;
};

/// Local Lipschitz estimate and step-size update of the adaptive proximal
/// gradient method. With zero displacement the previous step is reused.
inline StepUpdate adaptive_step(double eta_prev, double upsilon_prev,
                                const Eigen::VectorXd& grad_now, const Eigen::VectorXd& grad_prev,
                                const Eigen::VectorXd& z_now, const Eigen::VectorXd& z_prev) {
  const double dz = (z_now - z_prev).norm();
  if (dz == 0.0) return StepUpdate{eta_prev, 1.0, 0.0, true};
  const double lip = (grad_now - grad_prev).norm() / dz;
  const double grow = std::sqrt(2.0 / 3.0 + upsilon_prev) * eta_prev;
  const double bracket = 2.0 * eta_prev * eta_prev * lip * lip - 1.0;
  const double limit =
      bracket > 0.0 ? eta_prev / std::sqrt(bracket) : std::numeric_limits<double>::infinity();
  const double eta = std::min(grow, limit);
  return StepUpdate{eta, eta / eta_prev, lip, false};
}

/// f + g split consumed by the solver. `kkt` receives the gradient of f at z.
template <class P>
concept CompositeProblem = requires(const P& p, const Eigen::VectorXd& z, Eigen::VectorXd& zm,
                                    Eigen::VectorXd* g, double eta) {
  { p.dim() } -> std::convertible_to<Eigen::Index>;
  { p.smooth(z, g) } -> std::convertible_to<double>;
  { p.nonsmooth(z) } -> std::convertible_to<double>;
  p.prox(zm, eta);
  { p.kkt(z, z) } -> std::convertible_to<double>;
};

struct SolveOutcome {
  Eigen::VectorXd z;
  double objective = 0.0;
  double kkt = 0.0;
  int iterations = 0;
  bool converged = false;
  SolverTrace trace;
};

namespace detail {

template <CompositeProblem P>
double probe_step(const P& problem, const Eigen::VectorXd& z, const Eigen::VectorXd& grad,
                  double delta) {
  const double gnorm = grad.norm();
  if (!(gnorm > 0.0)) return 1.0;
  const Eigen::VectorXd z_probe = z - (delta / gnorm) * grad;
  Eigen::VectorXd g_probe;
  problem.smooth(z_probe, &g_probe);
  const double dg = (g_probe - grad).norm();
  return dg > 0.0 ? delta / dg : 1.0;
}

template <CompositeProblem P>
double full_objective(const P& problem, const Eigen::VectorXd& z, Eigen::VectorXd* grad) {
  const double f = problem.smooth(z, grad) + problem.nonsmooth(z);
  if (!std::isfinite(f)) throw SolverError("objective became non-finite");
  return f;
}

// Prefer the terminal iterate when it is as good as the best one seen.
inline bool terminal_is_best(double f_term, double f_best) {
  return f_term <= f_best + 1e-12 * std::max(1.0, std::abs(f_best));
}

template <CompositeProblem P>
SolveOutcome solve_plain(const P& problem, Eigen::VectorXd z, const SolverConfig& cfg) {
  SolveOutcome out;
  Eigen::VectorXd grad;
  double f = full_objective(problem, z, &grad);
  double kkt = problem.kkt(z, grad);
  const double eta0 = cfg.eta0 > 0 ? cfg.eta0 : probe_step(problem, z, grad, cfg.probe_delta);
  if (cfg.record_trace) out.trace.push(0, f, eta0, std::nan(""), kkt);

  Eigen::VectorXd best_z = z;
  double best_f = f;
  if (kkt < cfg.kkt_tol) {
    out.z = z;
    out.objective = f;
    out.kkt = kkt;
    out.converged = true;
    return out;
  }

  Eigen::VectorXd z_prev = z;
  Eigen::VectorXd grad_prev = grad;
  double eta_prev = eta0;
  double upsilon = cfg.upsilon0;
  z -= eta0 * grad;
  problem.prox(z, eta0);

  int k = 1;
  for (; k <= cfg.max_iters; ++k) {
    f = full_objective(problem, z, &grad);
    kkt = problem.kkt(z, grad);
    if (f < best_f) {
      best_f = f;
      best_z = z;
    }
    if (kkt < cfg.kkt_tol) {
      out.converged = true;
      if (cfg.record_trace) out.trace.push(k, f, std::nan(""), std::nan(""), kkt);
      break;
    }
    const StepUpdate step = adaptive_step(eta_prev, upsilon, grad, grad_prev, z, z_prev);
    if (cfg.record_trace) out.trace.push(k, f, step.eta, step.lipschitz, kkt);
    z_prev = z;
    grad_prev = grad;
    z -= step.eta * grad;
    problem.prox(z, step.eta);
    eta_prev = step.eta;
    upsilon = step.upsilon;
  }
  out.iterations = std::min(k, cfg.max_iters);
  if (out.converged && terminal_is_best(f, best_f)) {
    out.z = z;
    out.objective = f;
    out.kkt = kkt;
  } else {
    out.z = best_z;
    out.objective = full_objective(problem, best_z, &grad);
    out.kkt = problem.kkt(best_z, grad);
  }
  return out;
}

// Momentum extrapolation on top of the adaptive step, restarted whenever the
// objective increases while momentum is active.
template <CompositeProblem P>
SolveOutcome solve_accelerated(const P& problem, Eigen::VectorXd z, const SolverConfig& cfg) {
  SolveOutcome out;
  Eigen::VectorXd grad;
  double f_z = full_objective(problem, z, &grad);
  double kkt = problem.kkt(z, grad);
  const double eta0 = cfg.eta0 > 0 ? cfg.eta0 : probe_step(problem, z, grad, cfg.probe_delta);
  if (cfg.record_trace) out.trace.push(0, f_z, eta0, std::nan(""), kkt);
  if (kkt < cfg.kkt_tol) {
    out.z = z;
    out.objective = f_z;
    out.kkt = kkt;
    out.converged = true;
    return out;
  }

  Eigen::VectorXd y = z;
  Eigen::VectorXd grad_y = grad;
  Eigen::VectorXd y_prev, grad_y_prev;
  double eta_prev = eta0;
  double upsilon = cfg.upsilon0;
  double momentum_t = 1.0;
  bool have_prev = false;
  Eigen::VectorXd grad_z;

  int k = 1;
  for (; k <= cfg.max_iters; ++k) {
    if (k > 1) problem.smooth(y, &grad_y);
    StepUpdate step{eta0, cfg.upsilon0, std::nan(""), false};
    if (have_prev) step = adaptive_step(eta_prev, upsilon, grad_y, grad_y_prev, y, y_prev);
    Eigen::VectorXd z_new = y - step.eta * grad_y;
    problem.prox(z_new, step.eta);
    const double f_new = full_objective(problem, z_new, nullptr);

    y_prev = y;
    grad_y_prev = grad_y;
    have_prev = true;
    eta_prev = step.eta;
    upsilon = step.upsilon;

    if (f_new > f_z && momentum_t > 1.0) {
      momentum_t = 1.0;
      y = z;
      if (cfg.record_trace) out.trace.push(k, f_z, step.eta, step.lipschitz, std::nan(""));
      continue;
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum_t * momentum_t));
    y = z_new + ((momentum_t - 1.0) / t_next) * (z_new - z);
    z = std::move(z_new);
    f_z = f_new;
    momentum_t = t_next;

    double kkt_here = std::nan("");
    if (k % cfg.check_every == 0) {
      problem.smooth(z, &grad_z);
      kkt = problem.kkt(z, grad_z);
      kkt_here = kkt;
    }
    if (cfg.record_trace) out.trace.push(k, f_z, step.eta, step.lipschitz, kkt_here);
    if (!std::isnan(kkt_here) && kkt < cfg.kkt_tol) {
      out.converged = true;
      break;
    }
  }
  out.iterations = std::min(k, cfg.max_iters);
  out.z = z;
  out.objective = full_objective(problem, z, &grad_z);
  out.kkt = problem.kkt(z, grad_z);
  return out;
}

}  // namespace detail

/// Proximal gradient descent with the adaptive step-size rule; optionally
/// accelerated. Returns the best iterate and its KKT residual.
template <CompositeProblem P>
SolveOutcome solve_composite(const P& problem, const Eigen::VectorXd& init,
                             const SolverConfig& cfg = {}) {
  if (cfg.kkt_tol <= 0) throw ConfigError("kkt_tol must be positive");
  if (cfg.max_iters < 1) throw ConfigError("max_iters must be positive");
  if (init.size() != problem.dim()) throw ConfigError("initial point has the wrong dimension");
  Eigen::VectorXd z = init;
  problem.prox(z, 0.0);  // feasibility projection
  return cfg.accel == Acceleration::off ? detail::solve_plain(problem, std::move(z), cfg)
                                        : detail::solve_accelerated(problem, std::move(z), cfg);
}

/// Maximal violation of the optimality conditions at z given grad = grad f(z):
/// spatial and univariate gradient blocks must vanish; each active slack needs
/// grad_i = -lambda1 w_i; each zero slack needs -grad_i <= lambda1 w_i; and xi >= 0.
inline double kkt_residual_from_gradient(const FitProblem& prob, const Eigen::VectorXd& z,
                                         const Eigen::VectorXd& grad) {
  const Eigen::Index nb = prob.dim_gamma() + prob.dim_theta();
  double res = nb > 0 ? grad.head(nb).cwiseAbs().maxCoeff() : 0.0;
  if (!prob.with_slack) return res;
  for (int i = 0; i < prob.n; ++i) {
    const double xi = z[nb + i];
    const double g = grad[nb + i];
    const double bound = prob.lambda1 * prob.weights[i];
    double v;
    if (xi > 0.0) {
      v = std::abs(g + bound);
    } else {
      v = std::max(-g - bound, 0.0);
      v = std::max(v, -xi);
    }
    res = std::max(res, v);
  }
  return res;
}

inline double kkt_residual(const FitProblem& prob, const Coefficients& c) {
  const Eigen::VectorXd z = prob.pack(c);
  Eigen::VectorXd grad;
  evaluate_f(prob, z, &grad);
  return kkt_residual_from_gradient(prob, z, grad);
}

/// Adapter presenting a FitProblem as f + g to the solver.
class RstGamObjective {
 public:
  explicit RstGamObjective(const FitProblem& prob) : prob_(prob) {}

  Eigen::Index dim() const { return prob_.dim(); }

  double smooth(const Eigen::VectorXd& z, Eigen::VectorXd* grad) const {
    return evaluate_f(prob_, z, grad, &cap_hits_);
  }

  double nonsmooth(const Eigen::VectorXd& z) const {
    if (!prob_.with_slack) return 0.0;
    const auto xi = z.tail(prob_.n);
    if (xi.minCoeff() < 0.0) return std::numeric_limits<double>::infinity();
    return prob_.lambda1 * prob_.weights.dot(xi);
  }

  void prox(Eigen::VectorXd& z, double eta) const {
    if (!prob_.with_slack) return;
    z.tail(prob_.n) = prox_g(z.tail(prob_.n), eta, prob_.lambda1, prob_.weights);
  }

  double kkt(const Eigen::VectorXd& z, const Eigen::VectorXd& grad) const {
    return kkt_residual_from_gradient(prob_, z, grad);
  }

  std::size_t cap_hits() const { return cap_hits_; }

 private:
  const FitProblem& prob_;
  mutable std::size_t cap_hits_ = 0;
};

/// The same problem in the coordinates v = R (gamma*, theta), zeta = s * xi,
/// where R^T R is the Hessian of f at a reference point (plus a tiny ridge)
/// restricted to the smooth block and s_i^2 the slack diagonal of that Hessian.
/// The slack penalty stays separable, so the prox is the same soft threshold
/// with weights w_i / s_i. KKT residuals are reported in the original coordinates.
class PreconditionedObjective {
 public:
  PreconditionedObjective(const FitProblem& prob, const Eigen::VectorXd& reference) : prob_(prob) {
    const Eigen::Index dg = prob.dim_gamma(), dt = prob.dim_theta(), nb = dg + dt;
    Eigen::VectorXd mu = linear_predictor(prob, reference).cwiseMin(prob.eta_max).array().exp();
    const double floor = 1e-3 * std::max(mu.mean(), 1e-12);
    mu = mu.cwiseMax(floor) / prob.sigma2;

    Eigen::MatrixXd design(prob.rows(), nb);
    for (int s = 0; s < prob.window_len; ++s)
      design.block(static_cast<Eigen::Index>(s) * prob.n, 0, prob.n, dg) = prob.design_bivariate;
    design.rightCols(dt) = prob.design_univariate;
    Eigen::MatrixXd h = design.transpose() * mu.asDiagonal() * design;
    h.topLeftCorner(dg, dg) += prob.lambda0 * prob.penalty_star;
    const double ridge = 1e-10 * std::max(h.diagonal().maxCoeff(), 1e-300);
    h.diagonal().array() += ridge;
    Eigen::LLT<Eigen::MatrixXd> llt(h);
    if (llt.info() != Eigen::Success) throw SolverError("preconditioner factorization failed");
    r_ = llt.matrixU();

    scale_ = Eigen::VectorXd::Ones(prob.dim_xi());
    for (int i = 0; i < prob.dim_xi(); ++i) {
      double d = 0.0;
      for (int s = 0; s < prob.window_len; ++s) d += mu[static_cast<Eigen::Index>(s) * prob.n + i];
      scale_[i] = std::sqrt(d);
    }
    if (prob.with_slack) shrink_ = prob.weights.cwiseQuotient(scale_);
  }

  Eigen::Index dim() const { return prob_.dim(); }

  Eigen::VectorXd to_original(const Eigen::VectorXd& y) const {
    const Eigen::Index nb = r_.rows();
    Eigen::VectorXd z(y.size());
    z.head(nb) = r_.triangularView<Eigen::Upper>().solve(y.head(nb));
    z.tail(y.size() - nb) = y.tail(y.size() - nb).cwiseQuotient(scale_);
    return z;
  }

  Eigen::VectorXd from_original(const Eigen::VectorXd& z) const {
    const Eigen::Index nb = r_.rows();
    Eigen::VectorXd y(z.size());
    y.head(nb) = r_.triangularView<Eigen::Upper>() * z.head(nb);
    y.tail(z.size() - nb) = z.tail(z.size() - nb).cwiseProduct(scale_);
    return y;
  }

  double smooth(const Eigen::VectorXd& y, Eigen::VectorXd* grad) const {
    if (!grad) return evaluate_f(prob_, to_original(y), nullptr, &cap_hits_);
    Eigen::VectorXd g;
    const double f = evaluate_f(prob_, to_original(y), &g, &cap_hits_);
    const Eigen::Index nb = r_.rows();
    grad->resize(y.size());
    grad->head(nb) = r_.transpose().triangularView<Eigen::Lower>().solve(g.head(nb));
    grad->tail(y.size() - nb) = g.tail(y.size() - nb).cwiseQuotient(scale_);
    return f;
  }

  double nonsmooth(const Eigen::VectorXd& y) const {
    if (!prob_.with_slack) return 0.0;
    const auto zeta = y.tail(prob_.n);
    if (zeta.minCoeff() < 0.0) return std::numeric_limits<double>::infinity();
    return prob_.lambda1 * shrink_.dot(zeta);
  }

  void prox(Eigen::VectorXd& y, double eta) const {
    if (!prob_.with_slack) return;
    y.tail(prob_.n) = prox_g(y.tail(prob_.n), eta, prob_.lambda1, shrink_);
  }

  double kkt(const Eigen::VectorXd& y, const Eigen::VectorXd& grad) const {
    const Eigen::Index nb = r_.rows();
    Eigen::VectorXd g(grad.size());
    g.head(nb) = r_.transpose() * grad.head(nb);
    g.tail(grad.size() - nb) = grad.tail(grad.size() - nb).cwiseProduct(scale_);
    return kkt_residual_from_gradient(prob_, to_original(y), g);
  }

  std::size_t cap_hits() const { return cap_hits_; }

 private:
  const FitProblem& prob_;
  Eigen::MatrixXd r_;
  Eigen::VectorXd scale_;
  Eigen::VectorXd shrink_;
  mutable std::size_t cap_hits_ = 0;
};

/// Slack threshold used to count active slacks and flag outliers.
inline constexpr double kXiZeroTol = 1e-8;

struct FitResult {
  Coefficients coef;
  double objective = 0.0;
  double kkt = 0.0;
  int iterations = 0;
  bool converged = false;
  std::size_t cap_hits = 0;
  SolverTrace trace;

  std::vector<int> flagged(double tol = kXiZeroTol) const {
    std::vector<int> out;
    for (Eigen::Index i = 0; i < coef.xi.size(); ++i)
      if (coef.xi[i] > tol) out.push_back(static_cast<int>(i));
    return out;
  }
};

inline FitResult solve(const FitProblem& prob, const Coefficients& init,
                       const SolverConfig& cfg = {}) {
  if (cfg.precondition) {
    const Eigen::VectorXd z0 = prob.pack(init);
    const PreconditionedObjective objective(prob, z0);
    SolveOutcome out = solve_composite(objective, objective.from_original(z0), cfg);
    FitResult res;
    Eigen::VectorXd z = objective.to_original(out.z);
    if (prob.with_slack) z.tail(prob.n) = z.tail(prob.n).cwiseMax(0.0);
    res.coef = prob.unpack(z);
    res.objective = out.objective;
    res.kkt = out.kkt;
    res.iterations = out.iterations;
    res.converged = out.converged;
    res.cap_hits = objective.cap_hits();
    res.trace = std::move(out.trace);
    return res;
  }
  const RstGamObjective objective(prob);
  SolveOutcome out = solve_composite(objective, prob.pack(init), cfg);
  FitResult res;
  res.coef = prob.unpack(out.z);
  res.objective = out.objective;
  res.kkt = out.kkt;
  res.iterations = out.iterations;
  res.converged = out.converged;
  res.cap_hits = objective.cap_hits();
  res.trace = std::move(out.trace);
  return res;
}

}  // namespace rstgam
