// rstgam command-line front end: fit, select, thin, simulate.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "rstgam/rstgam.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace rstgam;

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kNonConvergence = 4 };

struct Options {
  std::string command;
  std::string panel, mesh, out = "rstgam_out";
  int time = -1;  // panel time value closing the window; -1 picks the last one
  ModelConfig model;
  std::string lambda1_grid, lambda0_grid;
  bool baseline = false;
  int max_iters = 20000;
  double kkt_tol = 1e-6;
  bool plain_solver = false;
  bool no_accel = false;
  int surface_grid = 60;
  int alpha_points = 101;

  // simulate
  std::string domain = "horseshoe";
  std::string grid = "strength";
  int n = 500;
  int periods = 5;
  double strength = 30.0;
  int quantity = 25;
  int replicates = 20;
  bool paper_scale = false;
  bool emit_data = false;
};

std::vector<double> parse_grid(const std::string& text, const char* name) {
  std::vector<double> g;
  if (text.empty()) return g;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      g.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(std::string("cannot parse ") + name + " value '" + item + "'");
    }
  }
  return g;
}

SolverConfig solver_from(const Options& o) {
  SolverConfig s;
  s.max_iters = o.max_iters;
  s.kkt_tol = o.kkt_tol;
  s.precondition = !o.plain_solver;
  s.accel = o.no_accel ? Acceleration::off : Acceleration::restart_momentum;
  if (s.max_iters < 1) throw ConfigError("max-iters must be positive");
  if (!(s.kkt_tol > 0)) throw ConfigError("kkt-tol must be positive");
  return s;
}

json vec_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

json model_json(const ModelConfig& m) {
  return {{"degree", m.degree},
          {"smoothness", m.smoothness},
          {"order", m.order},
          {"knots", m.knots},
          {"t0", m.t0},
          {"folds", m.folds},
          {"rho", m.rho},
          {"grid_size", m.grid_size},
          {"lambda1_grid", m.lambda1_grid},
          {"lambda0_grid", m.lambda0_grid},
          {"weight_epsilon", m.weight_epsilon},
          {"weight_gamma", m.weight_gamma},
          {"pilot_lambda0", m.pilot_lambda0},
          {"seed", m.seed},
          {"solver",
           {{"max_iters", m.solver.max_iters},
            {"kkt_tol", m.solver.kkt_tol},
            {"precondition", m.solver.precondition},
            {"acceleration", m.solver.accel == Acceleration::off ? "off" : "restart_momentum"},
            {"check_every", m.solver.check_every}}}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string number(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

json config_echo(const Options& o) {
  json j{{"command", o.command}, {"out", o.out}, {"threads", max_threads()}};
  if (o.command == "fit" || o.command == "select" || o.command == "thin") {
    j["panel"] = o.panel;
    if (o.command != "thin") {
      j["mesh"] = o.mesh;
      j["time"] = o.time;
      j["baseline"] = o.baseline;
    }
  }
  if (o.command == "fit") {
    j["surface_grid"] = o.surface_grid;
    j["alpha_points"] = o.alpha_points;
  }
  if (o.command == "simulate") {
    j["domain"] = o.domain;
    j["grid"] = o.grid;
    j["n"] = o.n;
    j["periods"] = o.periods;
    j["strength"] = o.strength;
    j["quantity"] = o.quantity;
    j["replicates"] = o.replicates;
    j["paper_scale"] = o.paper_scale;
    j["baseline"] = o.baseline;
    j["emit_data"] = o.emit_data;
  }
  j["model"] = model_json(o.model);
  return j;
}

json path_json(const PathResult& p) {
  json pts = json::array();
  for (const auto& pt : p.points) {
    pts.push_back({{"lambda", pt.lambda},
                   {"valid", pt.valid},
                   {"converged", pt.converged},
                   {"criterion", pt.criterion},
                   {"loglik", pt.loglik},
                   {"df", pt.df},
                   {"iterations", pt.iterations},
                   {"kkt", pt.kkt},
                   {"error", pt.error}});
  }
  return {{"best", p.best}, {"points", pts}};
}

json fit_summary(const FitResult& r) {
  return {{"objective", r.objective},
          {"kkt", r.kkt},
          {"iterations", r.iterations},
          {"converged", r.converged},
          {"cap_hits", r.cap_hits}};
}

struct Inputs {
  PanelData panel;
  SplineSpace space;
  FitProblem base;
};

Inputs load_inputs(const Options& o) {
  if (o.panel.empty()) throw ConfigError("--panel is required");
  if (o.mesh.empty()) throw ConfigError("--mesh is required");
  if (!fs::exists(o.panel)) throw ConfigError("panel file not found: " + o.panel);
  if (!fs::exists(o.mesh)) throw ConfigError("mesh file not found: " + o.mesh);
  o.model.validate();
  PanelData panel = load_panel_csv(o.panel);
  SplineSpace space = build_spline_space(load_mesh(o.mesh), o.model.degree, o.model.smoothness);
  const int t_index = o.time < 0 ? panel.num_times() - 1 : panel.time_index(o.time);
  if (o.model.t0 > t_index)
    throw ConfigError("t0 = " + std::to_string(o.model.t0) + " needs " + std::to_string(o.model.t0 + 1) +
                      " time points up to the window end, the panel has " + std::to_string(t_index + 1));
  FitProblem base = assemble(panel, space, t_index, o.model.t0, 0.0, 0.0, std::nullopt, o.model.univariate());
  return {std::move(panel), std::move(space), std::move(base)};
}

json selection_json(const RstGamFit& fit) {
  const SelectionResult& s = fit.selection;
  return {{"lambda1_star", s.lambda1_star},
          {"lambda0_star", s.lambda0_star},
          {"rho", s.rho},
          {"lambda1_grid", s.lambda1_grid},
          {"lambda0_grid", s.lambda0_grid},
          {"bic", path_json(s.stage1)},
          {"ebic", path_json(s.stage2)},
          {"weights",
           {{"epsilon", fit.weights.epsilon},
            {"gamma", fit.weights.gamma_exp},
            {"pilot_lambda1", fit.weights.pilot_lambda1},
            {"pilot_active", fit.weights.pilot_active}}},
          {"fit", fit_summary(s.fit)},
          {"active", count_active(s.fit.coef.xi)}};
}

void write_weights(const fs::path& dir, const PanelData& panel, const AdaptiveWeights& w) {
  std::ostringstream out;
  out << "loc_id,xi_bar,weight\n";
  for (int i = 0; i < panel.n(); ++i)
    out << panel.loc_ids[static_cast<std::size_t>(i)] << ',' << number(w.xi_bar[i]) << ',' << number(w.w[i]) << '\n';
  write_text(dir / "weights.csv", out.str());
}

void write_coefficients(const fs::path& path, const FitProblem& prob, const FitResult& r, const char* method) {
  write_json(path, {{"method", method},
                    {"lambda1", prob.lambda1},
                    {"lambda0", prob.lambda0},
                    {"t_index", prob.t_index},
                    {"t0", prob.t0()},
                    {"gamma_star", vec_json(r.coef.gamma_star)},
                    {"theta", vec_json(r.coef.theta)},
                    {"xi", vec_json(r.coef.xi)},
                    {"fit", fit_summary(r)}});
}

void write_surface(const fs::path& path, const SplineSpace& space, const Eigen::VectorXd& gamma_star, int grid) {
  const auto& verts = space.basis.mesh().vertices();
  Point lo = verts.front(), hi = verts.front();
  for (const Point& v : verts) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  std::ostringstream out;
  out << "x,y,beta_hat\n";
  for (int j = 0; j < grid; ++j) {
    for (int i = 0; i < grid; ++i) {
      const Point u(lo.x() + (hi.x() - lo.x()) * i / (grid - 1), lo.y() + (hi.y() - lo.y()) * j / (grid - 1));
      if (const auto v = eval_spline(space, gamma_star, u)) out << number(u.x()) << ',' << number(u.y()) << ',' << number(*v) << '\n';
    }
  }
  write_text(path, out.str());
}

void write_alphas(const fs::path& dir, const std::string& prefix, const FitProblem& prob, const Eigen::VectorXd& theta,
                  int points) {
  for (std::size_t k = 0; k < prob.univariate_bases.size(); ++k) {
    const auto& b = prob.univariate_bases[k];
    std::ostringstream out;
    out << "x,alpha_hat\n";
    for (int m = 0; m < points; ++m) {
      const double x = b.lower + (b.upper - b.lower) * m / (points - 1);
      out << number(x) << ',' << number(prob.eval_univariate(theta, static_cast<int>(k), x)) << '\n';
    }
    write_text(dir / (prefix + "alpha_" + std::to_string(k + 1) + ".csv"), out.str());
  }
}

int cmd_select_or_fit(const Options& o, const fs::path& dir, bool full) {
  const Inputs in = load_inputs(o);
  const RstGamFit fit = fit_rst_gam(in.base, o.model);
  const FitResult& r = fit.result();
  write_json(dir / "selection.json", selection_json(fit));
  write_weights(dir, in.panel, fit.weights);
  bool converged = r.converged;

  if (full) {
    write_coefficients(dir / "coefficients.json", fit.problem, r, "rst-gam");
    std::ostringstream flagged;
    flagged << "loc_id,xi_hat\n";
    for (int i : r.flagged()) flagged << in.panel.loc_ids[static_cast<std::size_t>(i)] << ',' << number(r.coef.xi[i]) << '\n';
    write_text(dir / "flagged.csv", flagged.str());
    write_surface(dir / "surface.csv", in.space, r.coef.gamma_star, o.surface_grid);
    write_alphas(dir, "", fit.problem, r.coef.theta, o.alpha_points);
    // Cold refit at the selected pair to record the iteration history.
    SolverConfig traced = o.model.solver;
    traced.record_trace = true;
    const FitResult again = solve(fit.problem, initial_coefficients(fit.problem), traced);
    std::ostringstream trace;
    write_trace_csv(trace, again.trace);
    write_text(dir / "trace.csv", trace.str());
  }

  if (o.baseline) {
    const NstGamFit nst = fit_nst_gam(in.base, o.model);
    const FitResult& b = nst.result();
    write_json(dir / "baseline_selection.json",
               {{"lambda0_star", nst.lambda0_star}, {"ebic", path_json(nst.path)}, {"fit", fit_summary(b)}});
    if (full) {
      write_coefficients(dir / "baseline_coefficients.json", nst.problem, b, "nst-gam");
      write_surface(dir / "baseline_surface.csv", in.space, b.coef.gamma_star, o.surface_grid);
      write_alphas(dir, "baseline_", nst.problem, b.coef.theta, o.alpha_points);
    }
    converged = converged && b.converged;
  }
  if (!converged) throw SolverError("the selected fit did not reach the KKT tolerance; artifacts hold the last iterate");
  std::cout << "selected lambda1 = " << fit.selection.lambda1_star << ", lambda0 = " << fit.selection.lambda0_star
            << ", flagged " << r.flagged().size() << " of " << in.panel.n() << " locations\n";
  return kOk;
}

int cmd_thin(const Options& o, const fs::path& dir) {
  if (o.panel.empty()) throw ConfigError("--panel is required");
  if (!fs::exists(o.panel)) throw ConfigError("panel file not found: " + o.panel);
  if (o.model.folds < 2) throw ConfigError("fold count must be at least 2");
  PanelData panel = load_panel_csv(o.panel);
  const ThinnedFolds folds = thin(panel.counts, o.model.folds, o.model.seed);
  for (int q = 0; q < o.model.folds; ++q) {
    panel.counts = folds.folds[static_cast<std::size_t>(q)];
    std::ostringstream out;
    write_panel_csv(out, panel);
    write_text(dir / ("fold_" + std::to_string(q + 1) + ".csv"), out.str());
  }
  std::cout << "wrote " << o.model.folds << " folds\n";
  return kOk;
}

ScenarioSpec scenario_from(const Options& o) {
  ScenarioSpec spec;
  spec.domain = o.domain;
  spec.n = o.n;
  spec.T = o.periods;
  spec.strength = o.strength;
  spec.quantity = o.quantity;
  spec.seed = o.model.seed;
  spec.validate();
  return spec;
}

int emit_data(const Options& o, const fs::path& dir) {
  const Scenario sc = generate_scenario(scenario_from(o));
  std::ostringstream panel, mesh, truth;
  write_panel_csv(panel, sc.panel);
  write_mesh(mesh, sc.mesh);
  truth << "loc_id,outlier,beta\n";
  for (int i = 0; i < sc.panel.n(); ++i)
    truth << sc.panel.loc_ids[static_cast<std::size_t>(i)] << ',' << (sc.mask[static_cast<std::size_t>(i)] ? 1 : 0)
          << ',' << number(sc.beta[i]) << '\n';
  write_text(dir / "panel.csv", panel.str());
  write_text(dir / "mesh.txt", mesh.str());
  write_text(dir / "truth.csv", truth.str());
  std::cout << "wrote scenario with " << sc.outliers.size() << " outliers\n";
  return kOk;
}

int cmd_simulate(const Options& o, const fs::path& dir) {
  if (o.emit_data) return emit_data(o, dir);
  StudyConfig base;
  base.scenario = scenario_from(o);
  base.model = o.model;
  base.replicates = o.replicates;
  base.master_seed = o.model.seed;
  base.baseline = o.baseline;
  if (o.paper_scale) base = paper_scale(base);
  if (base.replicates < 1) throw ConfigError("replicates must be positive");
  base.model.validate();

  std::vector<double> values;
  if (o.grid == "strength") values = {1, 5, 15, 30, 50, 100};
  else if (o.grid == "quantity") values = {1, 10, 50, 100, 150, 200};
  else if (o.grid == "none") values = {0.0};
  else throw ConfigError("unknown grid '" + o.grid + "' (strength, quantity, none)");

  std::ostringstream table;
  write_table_header(table);
  int nonconverged = 0;
  for (double v : values) {
    StudyConfig cfg = base;
    std::string tag = "single";
    if (o.grid == "strength") {
      cfg.scenario.strength = v;
      tag = "strength_" + number(v);
    } else if (o.grid == "quantity") {
      cfg.scenario.quantity = static_cast<int>(v);
      tag = "quantity_" + number(v);
    }
    cfg.scenario.validate();
    const auto results = run_study(cfg);
    std::ostringstream reps;
    write_replicate_csv(reps, results);
    write_text(dir / ("replicates_" + tag + ".csv"), reps.str());
    const StudySummary s = summarize(results);
    nonconverged += s.nonconverged;
    write_table_row(table, cfg.scenario, s);
    write_text(dir / "table.csv", table.str());
    std::cout << tag << ": MISE(beta) " << s.rst.mise_beta << ", FPR " << s.rst.fpr << ", FNR " << s.rst.fnr << '\n';
  }
  if (nonconverged > 0)
    throw SolverError(std::to_string(nonconverged) + " replicate fits did not reach the KKT tolerance");
  return kOk;
}

void report_error(const Options& o, int code, const char* kind, const std::string& message) {
  const json err{{"status", "error"}, {"exit_code", code}, {"kind", kind}, {"message", message}};
  std::cerr << err.dump() << '\n';
  if (!o.out.empty()) {
    std::error_code ec;
    fs::create_directories(o.out, ec);
    if (!ec) std::ofstream(fs::path(o.out) / "error.json") << err.dump(2) << '\n';
  }
}

void add_model_flags(CLI::App* app, Options& o) {
  app->add_option("--degree", o.model.degree, "bivariate spline degree d")->capture_default_str();
  app->add_option("--smoothness", o.model.smoothness, "smoothness r across edges")->capture_default_str();
  app->add_option("--order", o.model.order, "univariate spline order")->capture_default_str();
  app->add_option("--knots", o.model.knots, "interior knots per covariate")->capture_default_str();
  app->add_option("--t0", o.model.t0, "window length minus one")->capture_default_str();
  app->add_option("--folds", o.model.folds, "data-thinning folds Q")->capture_default_str();
  app->add_option("--rho", o.model.rho, "EBIC exponent in [0, 1]")->capture_default_str();
  app->add_option("--lambda1-grid", o.lambda1_grid, "comma-separated slack penalties (default: data-scaled)");
  app->add_option("--lambda0-grid", o.lambda0_grid, "comma-separated roughness penalties (default: 1e-4..1e4)");
  app->add_option("--pilot-lambda0", o.model.pilot_lambda0, "roughness penalty of the weight pilot fits")
      ->capture_default_str();
  app->add_option("--grid-size", o.model.grid_size, "points in default grids")->capture_default_str();
  app->add_option("--seed", o.model.seed, "random seed")->capture_default_str();
  app->add_option("--max-iters", o.max_iters, "solver iteration cap")->capture_default_str();
  app->add_option("--kkt-tol", o.kkt_tol, "solver KKT tolerance")->capture_default_str();
  app->add_flag("--plain-solver", o.plain_solver, "solve in the original coordinates");
  app->add_flag("--no-accel", o.no_accel, "disable restarted momentum");
  app->add_option("--out", o.out, "output directory")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"Robust spatiotemporal GAM for Poisson count panels"};
  app.require_subcommand(1);

  auto* fit = app.add_subcommand("fit", "fit a panel and write coefficients, outliers, surfaces and reports");
  auto* sel = app.add_subcommand("select", "run tuning-parameter selection only");
  for (auto* sub : {fit, sel}) {
    sub->add_option("--panel", o.panel, "panel CSV (loc_id,x,y,time,count,cov...)");
    sub->add_option("--mesh", o.mesh, "triangulation file");
    sub->add_option("--time", o.time, "time value closing the window (default: last)");
    sub->add_flag("--baseline", o.baseline, "also fit the non-robust model");
    add_model_flags(sub, o);
  }
  fit->add_option("--surface-grid", o.surface_grid, "grid points per axis for surface.csv")->capture_default_str();
  fit->add_option("--alpha-points", o.alpha_points, "points per univariate function CSV")->capture_default_str();

  auto* thn = app.add_subcommand("thin", "split panel counts into thinned folds");
  thn->add_option("--panel", o.panel, "panel CSV");
  thn->add_option("--folds", o.model.folds, "number of folds")->capture_default_str();
  thn->add_option("--seed", o.model.seed, "random seed")->capture_default_str();
  thn->add_option("--out", o.out, "output directory")->capture_default_str();

  auto* sim = app.add_subcommand("simulate", "run contamination studies on synthetic panels");
  sim->add_option("--domain", o.domain, "horseshoe or irregular")->capture_default_str();
  sim->add_option("--grid", o.grid, "strength, quantity or none")->capture_default_str();
  sim->add_option("--n", o.n, "locations")->capture_default_str();
  sim->add_option("--periods", o.periods, "time points T")->capture_default_str();
  sim->add_option("--strength", o.strength, "outlier shift when not on the grid")->capture_default_str();
  sim->add_option("--quantity", o.quantity, "outlier count when not on the grid")->capture_default_str();
  sim->add_option("--replicates", o.replicates, "replicates per grid value")->capture_default_str();
  sim->add_flag("--paper-scale", o.paper_scale, "n = 2000 and 100 replicates");
  sim->add_flag("--baseline", o.baseline, "also fit the non-robust model");
  sim->add_flag("--emit-data", o.emit_data, "write one scenario (panel.csv, mesh.txt, truth.csv) and stop");
  add_model_flags(sim, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error(Options{.out = ""}, kConfig, "config", e.what());
    return kConfig;
  }
  o.command = app.get_subcommands().front()->get_name();

  try {
    o.model.lambda1_grid = parse_grid(o.lambda1_grid, "lambda1-grid");
    o.model.lambda0_grid = parse_grid(o.lambda0_grid, "lambda0-grid");
    o.model.solver = solver_from(o);
    if (o.surface_grid < 2 || o.alpha_points < 2) throw ConfigError("output grids need at least 2 points");
    if (o.paper_scale) {
      o.n = 2000;
      o.replicates = 100;
    }
    const fs::path dir(o.out);
    fs::create_directories(dir);
    fs::remove(dir / "error.json");
    write_json(dir / "config.json", config_echo(o));
    if (o.command == "fit") return cmd_select_or_fit(o, dir, true);
    if (o.command == "select") return cmd_select_or_fit(o, dir, false);
    if (o.command == "thin") return cmd_thin(o, dir);
    return cmd_simulate(o, dir);
  } catch (const ConfigError& e) {
    report_error(o, kConfig, "config", e.what());
    return kConfig;
  } catch (const DataError& e) {
    report_error(o, kData, "data", e.what());
    return kData;
  } catch (const SolverError& e) {
    report_error(o, kNonConvergence, "solver", e.what());
    return kNonConvergence;
  } catch (const fs::filesystem_error& e) {
    report_error(o, kData, "io", e.what());
    return kData;
  } catch (const std::exception& e) {
    report_error(o, kInternal, "internal", e.what());
    return kInternal;
  }
}
