#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rstgam/bpst.hpp"
#include "rstgam/errors.hpp"
#include "rstgam/glm_core.hpp"
#include "rstgam/mesh.hpp"
#include "rstgam/optim.hpp"
#include "rstgam/parallel.hpp"
#include "rstgam/pipeline.hpp"

namespace rstgam {

namespace horseshoe {
inline constexpr double kRadius = 0.5;     // centerline radius of the bend
inline constexpr double kHalfWidth = 0.4;  // tube half-width
inline constexpr double kArmLength = 3.0;
}  // namespace horseshoe

/// Polygonal horseshoe: a half annulus (radii 0.1 and 0.9) opening to the
/// right with two straight arms over 0 <= x <= 3. The strip is cut into
/// `layers` radial bands and 8 + 2 * arm_segments segments along the centerline.
inline TriMesh horseshoe_mesh(int layers = 2, int bend_segments = 8, int arm_segments = 8) {
  using namespace horseshoe;
  std::vector<Point> centre, normal;
  // Lower arm from its far end towards the bend.
  for (int k = 0; k < arm_segments; ++k) {
    const double x = kArmLength * (1.0 - static_cast<double>(k) / arm_segments);
    centre.emplace_back(x, -kRadius);
    normal.emplace_back(0.0, -1.0);
  }
  for (int k = 0; k <= bend_segments; ++k) {
    const double phi = -std::numbers::pi / 2 - std::numbers::pi * k / bend_segments;
    const Point dir(std::cos(phi), std::sin(phi));
    centre.push_back(kRadius * dir);
    normal.push_back(dir);
  }
  for (int k = 1; k <= arm_segments; ++k) {
    centre.emplace_back(kArmLength * static_cast<double>(k) / arm_segments, kRadius);
    normal.emplace_back(0.0, 1.0);
  }
  const int cols = static_cast<int>(centre.size());
  std::vector<Point> v;
  for (int c = 0; c < cols; ++c)
    for (int l = 0; l <= layers; ++l)
      v.push_back(centre[c] + kHalfWidth * (2.0 * l / layers - 1.0) * normal[c]);
  std::vector<Triangle> tris;
  for (int c = 0; c + 1 < cols; ++c) {
    for (int l = 0; l < layers; ++l) {
      const int a = c * (layers + 1) + l, b = a + 1, d = a + layers + 1, e = d + 1;
      tris.push_back({a, d, e});
      tris.push_back({a, e, b});
    }
  }
  return TriMesh(std::move(v), std::move(tris));
}

/// Along-centerline coordinate (zero at the apex of the bend) and signed
/// distance from the centerline.
inline std::pair<double, double> horseshoe_coords(const Point& u) {
  using namespace horseshoe;
  if (u.x() >= 0.0) {
    const double quarter = std::numbers::pi * kRadius / 2;
    if (u.y() >= 0.0) return {quarter + u.x(), u.y() - kRadius};
    return {-(quarter + u.x()), -u.y() - kRadius};
  }
  const double phi = std::atan2(u.y(), u.x());
  const double a = phi >= 0 ? kRadius * (std::numbers::pi - phi) : -kRadius * (std::numbers::pi + phi);
  return {a, u.norm() - kRadius};
}

inline double horseshoe_beta(const Point& u) {
  const auto [a, d] = horseshoe_coords(u);
  return 2.0 + 0.35 * (a + d * d);
}

/// Jittered 10 x 6 grid over [0, 2.5] x [0, 1.5] with a corner notch removed
/// and diagonals chosen at random; fixed geometry.
inline TriMesh irregular_mesh() {
  constexpr int nx = 10, ny = 6;
  constexpr double hx = 0.25, hy = 0.25;
  std::mt19937_64 rng(20240607);
  std::uniform_real_distribution<double> jitter(-0.3, 0.3);
  std::bernoulli_distribution flip(0.5);
  std::vector<Point> v;
  for (int j = 0; j <= ny; ++j) {
    for (int i = 0; i <= nx; ++i) {
      Point p(i * hx, j * hy);
      const bool interior_x = i > 0 && i < nx, interior_y = j > 0 && j < ny;
      const double jx = jitter(rng), jy = jitter(rng);
      if (interior_x && interior_y) p += Point(jx * hx, jy * hy);
      v.push_back(p);
    }
  }
  std::vector<Triangle> tris;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const bool diag = flip(rng);
      if (i >= 7 && j >= 4) continue;
      const int a = j * (nx + 1) + i, b = a + 1, c = a + nx + 2, d = a + nx + 1;
      if (diag) {
        tris.push_back({a, b, c});
        tris.push_back({a, c, d});
      } else {
        tris.push_back({a, b, d});
        tris.push_back({b, c, d});
      }
    }
  }
  // Drop vertices no longer referenced (the notch corner).
  std::vector<int> remap(v.size(), -1);
  std::vector<Point> used;
  for (auto& t : tris)
    for (int& k : t) {
      if (remap[static_cast<std::size_t>(k)] < 0) {
        remap[static_cast<std::size_t>(k)] = static_cast<int>(used.size());
        used.push_back(v[static_cast<std::size_t>(k)]);
      }
      k = remap[static_cast<std::size_t>(k)];
    }
  return TriMesh(std::move(used), std::move(tris));
}

inline double irregular_beta(const Point& u) {
  return 2.0 + 0.6 * std::sin(1.3 * u.x()) * std::cos(1.7 * u.y()) + 0.2 * u.x();
}

/// Covariate effects: sine, centered quadratic, cubic, linear.
inline double true_alpha(int k, double x) {
  switch (k) {
    case 0: return 0.5 * std::sin(2 * std::numbers::pi * x);
    case 1: return 1.2 * ((x - 0.5) * (x - 0.5) - 1.0 / 12.0);
    case 2: return 4.0 * (x - 0.5) * (x - 0.5) * (x - 0.5);
    case 3: return 0.15 * (x - 2.5);
    default: throw ConfigError("unknown covariate effect");
  }
}

inline constexpr int kScenarioCovariates = 4;

struct ScenarioSpec {
  std::string domain = "horseshoe";  // horseshoe | irregular
  int n = 500;
  int T = 5;
  double strength = 30.0;
  int quantity = 25;
  std::uint64_t seed = 1;

  void validate() const {
    if (domain != "horseshoe" && domain != "irregular") throw ConfigError("unknown domain: " + domain);
    if (n <= 0) throw ConfigError("n must be positive");
    if (T < 2) throw ConfigError("T must be at least 2");
    if (strength < 0) throw ConfigError("outlier strength must be nonnegative");
    if (quantity < 0 || quantity > n) throw ConfigError("outlier quantity must lie in [0, n]");
  }
};

struct Scenario {
  ScenarioSpec spec;
  TriMesh mesh;
  PanelData panel;          // observed, possibly contaminated
  Eigen::MatrixXd mu;       // clean means, n x T
  Eigen::VectorXd beta;     // true surface at the locations
  std::vector<int> outliers;  // sorted contaminated locations
  std::vector<bool> mask;

  double true_beta(const Point& u) const {
    return spec.domain == "horseshoe" ? horseshoe_beta(u) : irregular_beta(u);
  }
};

namespace detail {

inline std::mt19937_64 stream(std::uint64_t seed, std::uint32_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), id};
  return std::mt19937_64(seq);
}

inline Point sample_in_triangle(const TriMesh& mesh, int tri, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double s = std::sqrt(unif(rng)), r = unif(rng);
  return (1 - s) * mesh.vertex(tri, 0) + s * (1 - r) * mesh.vertex(tri, 1) + s * r * mesh.vertex(tri, 2);
}

}  // namespace detail

/// Uniform locations over the mesh, covariates X1..X3 ~ U(0,1) fixed in time,
/// X4 = 1 at the first time and the log cumulative count afterwards; counts
/// drawn sequentially in time. No contamination.
inline Scenario generate_clean(const ScenarioSpec& spec) {
  spec.validate();
  Scenario sc;
  sc.spec = spec;
  sc.mesh = spec.domain == "horseshoe" ? horseshoe_mesh() : irregular_mesh();
  const int n = spec.n, T = spec.T;

  auto loc_rng = detail::stream(spec.seed, 1);
  std::vector<double> areas;
  for (int t = 0; t < sc.mesh.num_triangles(); ++t) areas.push_back(sc.mesh.area(t));
  std::discrete_distribution<int> pick(areas.begin(), areas.end());
  PanelData& panel = sc.panel;
  for (int i = 0; i < n; ++i) {
    panel.loc_ids.push_back("s" + std::to_string(i + 1));
    const int tri = pick(loc_rng);
    panel.locations.push_back(detail::sample_in_triangle(sc.mesh, tri, loc_rng));
  }
  for (int t = 0; t < T; ++t) panel.times.push_back(t + 1);

  auto cov_rng = detail::stream(spec.seed, 2);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  panel.covariates.assign(kScenarioCovariates, Eigen::MatrixXd(n, T));
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < n; ++i) panel.covariates[k].row(i).setConstant(unif(cov_rng));

  sc.beta.resize(n);
  for (int i = 0; i < n; ++i) sc.beta[i] = sc.true_beta(panel.locations[i]);
  auto count_rng = detail::stream(spec.seed, 3);
  panel.counts.resize(n, T);
  sc.mu.resize(n, T);
  Eigen::VectorXd cumulative = Eigen::VectorXd::Zero(n);
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < n; ++i) {
      const double x4 = t == 0 ? 1.0 : std::log(std::max(1.0, cumulative[i]));
      panel.covariates[3](i, t) = x4;
      double eta = sc.beta[i];
      for (int k = 0; k < kScenarioCovariates; ++k) eta += true_alpha(k, panel.covariates[k](i, t));
      sc.mu(i, t) = std::exp(eta);
      std::poisson_distribution<long long> draw(sc.mu(i, t));
      panel.counts(i, t) = static_cast<double>(draw(count_rng));
      cumulative[i] += panel.counts(i, t);
    }
  }
  sc.mask.assign(static_cast<std::size_t>(n), false);
  return sc;
}

/// Picks `quantity` locations uniformly without replacement and redraws their
/// counts from Poisson(mu + strength) at every time. Covariates are untouched.
inline void inject_outliers(Scenario& sc) {
  const int n = sc.spec.n;
  auto rng = detail::stream(sc.spec.seed, 4);
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  sc.outliers.assign(idx.begin(), idx.begin() + sc.spec.quantity);
  std::sort(sc.outliers.begin(), sc.outliers.end());
  sc.mask.assign(static_cast<std::size_t>(n), false);
  if (sc.spec.strength <= 0) {
    for (int i : sc.outliers) sc.mask[static_cast<std::size_t>(i)] = true;
    return;
  }
  auto redraw = detail::stream(sc.spec.seed, 5);
  for (int i : sc.outliers) {
    sc.mask[static_cast<std::size_t>(i)] = true;
    for (int t = 0; t < sc.spec.T; ++t) {
      std::poisson_distribution<long long> draw(sc.mu(i, t) + sc.spec.strength);
      sc.panel.counts(i, t) = static_cast<double>(draw(redraw));
    }
  }
}

inline Scenario generate_scenario(const ScenarioSpec& spec) {
  Scenario sc = generate_clean(spec);
  if (spec.quantity > 0) inject_outliers(sc);
  return sc;
}

inline Scenario gen_horseshoe_scenario(int n, int T, std::uint64_t seed, double strength, int quantity) {
  ScenarioSpec spec;
  spec.n = n;
  spec.T = T;
  spec.seed = seed;
  spec.strength = strength;
  spec.quantity = quantity;
  return generate_scenario(spec);
}

struct Metrics {
  double mise_beta = 0.0;
  std::array<double, kScenarioCovariates> mise_alpha{};
  double fpr = std::numeric_limits<double>::quiet_NaN();
  double fnr = std::numeric_limits<double>::quiet_NaN();
  int true_pos = 0, false_pos = 0, false_neg = 0, true_neg = 0;
};

/// Errors on the window of `prob`. The fitted surface absorbs the window means
/// of the true covariate effects, and each fitted effect is compared with the
/// true effect centered on the window sample.
inline Metrics score(const FitProblem& prob, const Coefficients& coef, const Scenario& sc) {
  const int n = prob.n, L = prob.window_len;
  const int first = prob.t_index - prob.t0();
  const PanelData& panel = sc.panel;
  if (panel.p() != kScenarioCovariates || n != sc.spec.n) throw ConfigError("problem does not match scenario");
  Metrics m;
  std::array<double, kScenarioCovariates> mean_alpha{};
  for (int k = 0; k < kScenarioCovariates; ++k) {
    double s = 0.0;
    for (int c = 0; c < L; ++c)
      for (int i = 0; i < n; ++i) s += true_alpha(k, panel.covariates[k](i, first + c));
    mean_alpha[static_cast<std::size_t>(k)] = s / (static_cast<double>(n) * L);
  }
  const double shift = std::accumulate(mean_alpha.begin(), mean_alpha.end(), 0.0);
  const Eigen::VectorXd beta_hat = prob.design_bivariate * coef.gamma_star;
  m.mise_beta = (beta_hat.array() - sc.beta.array() - shift).square().mean();
  for (int k = 0; k < kScenarioCovariates; ++k) {
    double s = 0.0;
    for (int c = 0; c < L; ++c) {
      for (int i = 0; i < n; ++i) {
        const double x = panel.covariates[k](i, first + c);
        const double d = prob.eval_univariate(coef.theta, k, x) - (true_alpha(k, x) - mean_alpha[static_cast<std::size_t>(k)]);
        s += d * d;
      }
    }
    m.mise_alpha[static_cast<std::size_t>(k)] = s / (static_cast<double>(n) * L);
  }
  if (prob.with_slack) {
    for (int i = 0; i < n; ++i) {
      const bool flagged = coef.xi[i] > kXiZeroTol;
      const bool truth = sc.mask[static_cast<std::size_t>(i)];
      if (flagged && truth) ++m.true_pos;
      else if (flagged) ++m.false_pos;
      else if (truth) ++m.false_neg;
      else ++m.true_neg;
    }
    const int neg = m.false_pos + m.true_neg, pos = m.true_pos + m.false_neg;
    m.fpr = neg > 0 ? static_cast<double>(m.false_pos) / neg : 0.0;
    m.fnr = pos > 0 ? static_cast<double>(m.false_neg) / pos : 0.0;
  }
  return m;
}

struct StudyConfig {
  ScenarioSpec scenario;
  ModelConfig model;
  int replicates = 20;
  std::uint64_t master_seed = 1;
  bool baseline = true;
  int threads = 0;
};

/// Solver settings used by the simulation studies.
inline SolverConfig study_solver() {
  SolverConfig cfg;
  cfg.kkt_tol = 1e-4;
  cfg.max_iters = 20000;
  cfg.precondition = true;
  cfg.accel = Acceleration::restart_momentum;
  cfg.record_trace = false;
  return cfg;
}

inline StudyConfig desk_study(double strength = 30.0, int quantity = 25) {
  StudyConfig cfg;
  cfg.scenario.strength = strength;
  cfg.scenario.quantity = quantity;
  cfg.model.solver = study_solver();
  return cfg;
}

/// Full-size design: n = 2000 and 100 replicates.
inline StudyConfig paper_scale(StudyConfig cfg) {
  cfg.scenario.n = 2000;
  cfg.replicates = 100;
  return cfg;
}

inline std::uint64_t replicate_seed(std::uint64_t master, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(index), 0x5eedu};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

struct ReplicateResult {
  int index = 0;
  std::uint64_t seed = 0;
  Metrics rst;
  std::optional<Metrics> nst;
  double lambda1 = 0.0, lambda0 = 0.0, nst_lambda0 = 0.0;
  int active = 0;
  bool converged = true;
};

inline ReplicateResult run_replicate(const StudyConfig& cfg, int index) {
  ReplicateResult out;
  out.index = index;
  out.seed = replicate_seed(cfg.master_seed, index);
  ScenarioSpec spec = cfg.scenario;
  spec.seed = out.seed;
  const Scenario sc = generate_scenario(spec);
  const SplineSpace space = build_spline_space(sc.mesh, cfg.model.degree, cfg.model.smoothness);
  ModelConfig model = cfg.model;
  model.seed = out.seed;
  model.threads = 1;
  const int t_index = spec.T - 1;
  const int t0 = std::min(model.t0, t_index);
  model.t0 = t0;
  const FitProblem base = assemble(sc.panel, space, t_index, t0, 0.0, 0.0, std::nullopt, model.univariate());

  const RstGamFit rst = fit_rst_gam(base, model);
  out.rst = score(rst.problem, rst.result().coef, sc);
  out.lambda1 = rst.selection.lambda1_star;
  out.lambda0 = rst.selection.lambda0_star;
  out.active = count_active(rst.result().coef.xi);
  out.converged = rst.result().converged;
  if (cfg.baseline) {
    const NstGamFit nst = fit_nst_gam(base, model);
    out.nst = score(nst.problem, nst.result().coef, sc);
    out.nst_lambda0 = nst.lambda0_star;
    out.converged = out.converged && nst.result().converged;
  }
  return out;
}

inline std::vector<ReplicateResult> run_study(const StudyConfig& cfg) {
  cfg.scenario.validate();
  cfg.model.validate();
  if (cfg.replicates < 1) throw ConfigError("replicate count must be positive");
  std::vector<ReplicateResult> results(static_cast<std::size_t>(cfg.replicates));
  parallel_for(
      results.size(), [&](std::size_t r) { results[r] = run_replicate(cfg, static_cast<int>(r)); }, cfg.threads);
  return results;
}

/// Replicate averages; NaN entries (missing baseline or rates) are skipped.
struct StudySummary {
  Metrics rst;
  std::optional<Metrics> nst;
  int replicates = 0;
  int nonconverged = 0;
};

inline StudySummary summarize(const std::vector<ReplicateResult>& results) {
  StudySummary s;
  s.replicates = static_cast<int>(results.size());
  if (results.empty()) return s;
  auto average = [](const std::vector<const Metrics*>& ms) {
    Metrics m;
    m.fpr = m.fnr = 0.0;
    for (const Metrics* x : ms) {
      m.mise_beta += x->mise_beta;
      for (std::size_t k = 0; k < m.mise_alpha.size(); ++k) m.mise_alpha[k] += x->mise_alpha[k];
      m.fpr += x->fpr;
      m.fnr += x->fnr;
      m.true_pos += x->true_pos;
      m.false_pos += x->false_pos;
      m.false_neg += x->false_neg;
      m.true_neg += x->true_neg;
    }
    const double c = static_cast<double>(ms.size());
    m.mise_beta /= c;
    for (auto& v : m.mise_alpha) v /= c;
    m.fpr /= c;
    m.fnr /= c;
    return m;
  };
  std::vector<const Metrics*> rst, nst;
  for (const auto& r : results) {
    rst.push_back(&r.rst);
    if (r.nst) nst.push_back(&*r.nst);
    if (!r.converged) ++s.nonconverged;
  }
  s.rst = average(rst);
  if (!nst.empty()) {
    s.nst = average(nst);
    s.nst->fpr = s.nst->fnr = std::numeric_limits<double>::quiet_NaN();
  }
  return s;
}

namespace detail {
inline void write_number(std::ostream& out, double v) {
  if (std::isnan(v)) return;
  out << v;
}
}  // namespace detail

/// Per-replicate metrics, one row per replicate and method.
inline void write_replicate_csv(std::ostream& out, const std::vector<ReplicateResult>& results) {
  out.precision(17);
  out << "replicate,seed,method,mise_beta,mise_alpha1,mise_alpha2,mise_alpha3,mise_alpha4,fpr,fnr,"
         "true_pos,false_pos,false_neg,lambda1,lambda0\n";
  auto row = [&](const ReplicateResult& r, const char* method, const Metrics& m, double l1, double l0) {
    out << r.index << ',' << r.seed << ',' << method << ',' << m.mise_beta;
    for (double a : m.mise_alpha) out << ',' << a;
    out << ',';
    detail::write_number(out, m.fpr);
    out << ',';
    detail::write_number(out, m.fnr);
    out << ',' << m.true_pos << ',' << m.false_pos << ',' << m.false_neg << ',';
    detail::write_number(out, l1);
    out << ',' << l0 << '\n';
  };
  for (const auto& r : results) {
    row(r, "rst", r.rst, r.lambda1, r.lambda0);
    if (r.nst) row(r, "nst", *r.nst, std::numeric_limits<double>::quiet_NaN(), r.nst_lambda0);
  }
}

/// One row per scenario setting with the averaged metrics of both methods.
inline void write_table_header(std::ostream& out) {
  out << "strength,quantity,n,replicates,rst_mise_beta,rst_mise_alpha1,rst_mise_alpha2,rst_mise_alpha3,"
         "rst_mise_alpha4,rst_fpr,rst_fnr,nst_mise_beta,nst_mise_alpha1,nst_mise_alpha2,nst_mise_alpha3,"
         "nst_mise_alpha4\n";
}

inline void write_table_row(std::ostream& out, const ScenarioSpec& spec, const StudySummary& s) {
  out.precision(17);
  out << spec.strength << ',' << spec.quantity << ',' << spec.n << ',' << s.replicates << ',' << s.rst.mise_beta;
  for (double a : s.rst.mise_alpha) out << ',' << a;
  out << ',' << s.rst.fpr << ',' << s.rst.fnr;
  for (int k = 0; k < 5; ++k) {
    out << ',';
    if (s.nst) detail::write_number(out, k == 0 ? s.nst->mise_beta : s.nst->mise_alpha[static_cast<std::size_t>(k - 1)]);
  }
  out << '\n';
}

/// n = 50 locations on one triangle, three times, one covariate and two
/// contaminated locations; window t0 = 2 at the last time.
struct SmallInstance {
  PanelData panel;
  SplineSpace space;
  FitProblem problem;
};

inline SmallInstance small_instance(std::uint64_t seed = 7, double lambda0 = 1.0, double lambda1 = 10.0) {
  const TriMesh tri({{0, 0}, {1, 0}, {0, 1}}, {{0, 1, 2}});
  auto rng = detail::stream(seed, 11);
  PanelData panel;
  constexpr int n = 50, T = 3;
  for (int i = 0; i < n; ++i) {
    panel.loc_ids.push_back("s" + std::to_string(i + 1));
    panel.locations.push_back(detail::sample_in_triangle(tri, 0, rng));
  }
  panel.times = {1, 2, 3};
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  panel.covariates.assign(1, Eigen::MatrixXd(n, T));
  for (Eigen::Index k = 0; k < panel.covariates[0].size(); ++k) panel.covariates[0].data()[k] = unif(rng);
  panel.counts.resize(n, T);
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < T; ++t) {
      const Point& u = panel.locations[i];
      const double mu = std::exp(1.5 + u.x() - 0.5 * u.y() + true_alpha(0, panel.covariates[0](i, t))) +
                        (i < 2 ? 25.0 : 0.0);
      std::poisson_distribution<long long> draw(mu);
      panel.counts(i, t) = static_cast<double>(draw(rng));
    }
  }
  SplineSpace space = build_spline_space(tri, 2, 1);
  FitProblem problem = assemble(panel, space, 2, 2, lambda0, lambda1, std::nullopt, {4, 2});
  return {std::move(panel), std::move(space), std::move(problem)};
}

}  // namespace rstgam
