#pragma once

#include "bmc/bmc.hpp"
#include "bmc/io.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

namespace bmc::cli {

enum ExitCode : int { ok = 0, usage = 1, assumption = 2, solver_failure = 3, io_failure = 4 };

struct Inputs {
  std::string data;
  std::string format = "auto";
  std::string row_graph, col_graph;
  std::string row_features, col_features;
  Index knn = 10;
};

struct SolverFlags {
  std::string method = "auto";
  double cg_tol = 1e-8;
  double pivot_tol = 1e-10;

  SolverConfig config() const {
    SolverConfig c;
    c.method = parse_solver_method(method);
    c.cg_rel_tol = cg_tol;
    c.pivot_tol = pivot_tol;
    c.validate();
    return c;
  }
};

struct Settings {
  std::optional<unsigned> threads;
  bool timing = false;
  Inputs in;
  SolverFlags solver;

  double gamma_row = 1.0, gamma_col = 1.0;
  bool limit = false;
  std::string out;

  std::string method = "ims";
  std::string mode = "exact";
  std::string criterion = "bic";
  Index probes = 5;
  std::uint64_t seed = 0;
  std::string grid = "50x50";
  std::string range = "-9:1";
  Index folds = 5;
  Index max_iters = 200;
  double grad_tol = 1e-5;
  std::string report, trace;

  std::string features;
  std::string spec;
  std::string summary;
  std::optional<Index> replicates;
  std::optional<std::uint64_t> sim_seed;

  unsigned thread_count() const { return threads ? *threads : default_thread_count(); }
};

inline void add_input_options(CLI::App* cmd, Inputs& in) {
  cmd->add_option("--data", in.data, "Observed matrix: CSV with NaN/empty for missing, or MatrixMarket coordinate")
      ->required();
  cmd->add_option("--format", in.format, "Data format (auto picks by extension: .mtx/.mm = MatrixMarket)")
      ->check(CLI::IsMember({"auto", "csv", "mtx"}))
      ->capture_default_str();
  auto* rg = cmd->add_option("--row-graph", in.row_graph, "Row similarity graph (MatrixMarket, symmetric)");
  auto* rf = cmd->add_option("--row-features", in.row_features, "Row feature CSV; builds a kNN correlation graph");
  auto* cg = cmd->add_option("--col-graph", in.col_graph, "Column similarity graph (MatrixMarket, symmetric)");
  auto* cf = cmd->add_option("--col-features", in.col_features, "Column feature CSV; builds a kNN correlation graph");
  rg->excludes(rf);
  cg->excludes(cf);
  cmd->add_option("--knn", in.knn, "Neighbours kept per vertex when building graphs from features")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

inline void add_solver_options(CLI::App* cmd, SolverFlags& s) {
  cmd->add_option("--solver", s.method, "Linear solver")
      ->check(CLI::IsMember({"auto", "direct", "pcg", "spectral"}))
      ->capture_default_str();
  cmd->add_option("--cg-tol", s.cg_tol, "PCG relative residual tolerance")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--pivot-tol", s.pivot_tol, "Relative pivot threshold for declaring S singular")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

inline void add_gamma_options(CLI::App* cmd, Settings& s) {
  cmd->add_option("--gamma-row", s.gamma_row, "Row penalty")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--gamma-col", s.gamma_col, "Column penalty")->check(CLI::PositiveNumber)->capture_default_str();
}

inline void add_trace_options(CLI::App* cmd, Settings& s) {
  cmd->add_option("--mode", s.mode, "Trace evaluation for df")
      ->check(CLI::IsMember({"exact", "hutchinson"}))
      ->capture_default_str();
  cmd->add_option("--probes", s.probes, "Rademacher probes in hutchinson mode")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--seed", s.seed, "Master seed")->capture_default_str();
}

/// Builds the command tree; every flag is bound into `s`.
inline std::unique_ptr<CLI::App> build_app(Settings& s) {
  auto app = std::make_unique<CLI::App>("Biclustered matrix completion with graph Laplacian penalties");
  app->require_subcommand(1);
  app->fallthrough();
  app->add_option("--threads", s.threads, "Worker threads (default: BMC_THREADS, else all cores)")->check(CLI::PositiveNumber);
  app->add_flag("--timing", s.timing, "Include wall-clock times in reports (makes output nondeterministic)");

  auto* check = app->add_subcommand("check", "Check that every bicluster patch has an observation");
  add_input_options(check, s.in);

  auto* complete = app->add_subcommand("complete", "Fit at fixed penalties and write the completed matrix");
  add_input_options(complete, s.in);
  add_solver_options(complete, s.solver);
  add_gamma_options(complete, s);
  complete->add_flag("--limit", s.limit, "Write the infinite-penalty solution (patch means) instead");
  complete->add_option("--out", s.out, "Output CSV for the completed matrix")->required();

  auto* select = app->add_subcommand("select", "Select penalties by IMS, BIC grid or CV grid");
  add_input_options(select, s.in);
  add_solver_options(select, s.solver);
  add_trace_options(select, s);
  select->add_option("--method", s.method, "Selection method")
      ->check(CLI::IsMember({"ims", "grid-bic", "grid-cv"}))
      ->capture_default_str();
  select->add_option("--criterion", s.criterion, "Information criterion")
      ->check(CLI::IsMember({"bic", "aic"}))
      ->capture_default_str();
  select->add_option("--gamma-row", s.gamma_row, "IMS starting row penalty")->check(CLI::PositiveNumber)->capture_default_str();
  select->add_option("--gamma-col", s.gamma_col, "IMS starting column penalty")->check(CLI::PositiveNumber)->capture_default_str();
  select->add_option("--max-iters", s.max_iters, "IMS iteration cap")->check(CLI::PositiveNumber)->capture_default_str();
  select->add_option("--grad-tol", s.grad_tol, "IMS gradient tolerance (log scale)")->check(CLI::PositiveNumber)->capture_default_str();
  select->add_option("--grid", s.grid, "Grid size as ROWSxCOLS")->capture_default_str();
  select->add_option("--range", s.range, "Grid range LO:HI of the exponent (penalty = e^t)")->capture_default_str();
  select->add_option("--folds", s.folds, "Cross-validation folds")->check(CLI::Range(2, 1000))->capture_default_str();
  select->add_option("--report", s.report, "JSON report path (default: stdout)");
  select->add_option("--trace", s.trace, "Iterate trace CSV path (IMS only)");
  select->add_option("--out", s.out, "Also write the completed matrix at the selected penalties");

  auto* weights = app->add_subcommand("weights", "Build a kNN correlation graph from a feature table");
  weights->add_option("--features", s.features, "Feature CSV, one row per vertex, optional header")
      ->required();
  weights->add_option("--knn", s.in.knn, "Neighbours kept per vertex")->check(CLI::PositiveNumber)->capture_default_str();
  weights->add_option("--out", s.out, "Output MatrixMarket graph")->required();

  auto* simulate = app->add_subcommand("simulate", "Run a checkerboard comparison experiment");
  simulate->add_option("--spec", s.spec, "Experiment JSON file")->required();
  simulate->add_option("--out", s.out, "Results CSV, one row per method and replicate")->required();
  simulate->add_option("--summary", s.summary, "JSON summary of means and standard deviations");
  simulate->add_option("--replicates", s.replicates, "Override the replicate count")->check(CLI::PositiveNumber);
  simulate->add_option("--seed", s.sim_seed, "Override the master seed");
  add_solver_options(simulate, s.solver);

  auto* df = app->add_subcommand("df", "Degrees of freedom tr(S^-1) at fixed penalties");
  add_input_options(df, s.in);
  add_solver_options(df, s.solver);
  add_gamma_options(df, s);
  add_trace_options(df, s);

  auto* surface = app->add_subcommand("surface", "Criterion surface over a penalty grid, as CSV");
  add_input_options(surface, s.in);
  add_solver_options(surface, s.solver);
  add_trace_options(surface, s);
  surface->add_option("--criterion", s.criterion, "Information criterion")
      ->check(CLI::IsMember({"bic", "aic"}))
      ->capture_default_str();
  surface->add_option("--grid", s.grid, "Grid size as ROWSxCOLS")->capture_default_str();
  surface->add_option("--range", s.range, "Grid range LO:HI of the exponent (penalty = e^t)")->capture_default_str();
  surface->add_option("--out", s.out, "Output CSV (default: stdout)");
  return app;
}

namespace detail {

inline std::pair<Index, Index> parse_grid(const std::string& text) {
  const auto x = text.find_first_of("xX");
  try {
    if (x == std::string::npos) {
      const Index n = std::stol(text);
      if (n >= 1) return {n, n};
    } else {
      const Index r = std::stol(text.substr(0, x));
      const Index c = std::stol(text.substr(x + 1));
      if (r >= 1 && c >= 1) return {r, c};
    }
  } catch (const std::exception&) {
  }
  throw InvalidArgument("grid must look like 50x50");
}

inline std::pair<double, double> parse_range(const std::string& text) {
  const auto colon = text.find(':', 1);
  try {
    if (colon != std::string::npos) {
      const double lo = std::stod(text.substr(0, colon));
      const double hi = std::stod(text.substr(colon + 1));
      if (lo <= hi) return {lo, hi};
    }
  } catch (const std::exception&) {
  }
  throw InvalidArgument("range must look like -9:1 with LO <= HI");
}

inline WeightedGraph load_graph(const std::string& graph, const std::string& features, Index knn, Index expected,
                                const char* side) {
  WeightedGraph g;
  if (!graph.empty()) {
    g = io::read_graph(graph);
  } else if (!features.empty()) {
    g = weights_from_features(io::read_features(features), knn);
  } else {
    throw InvalidArgument(std::string("need --") + side + "-graph or --" + side + "-features");
  }
  if (g.vertex_count() != expected)
    throw DimensionMismatch(std::string(side) + " graph has " + std::to_string(g.vertex_count()) + " vertices, expected " +
                            std::to_string(expected));
  return g;
}

inline BmcProblem load_problem(const Inputs& in) {
  io::MatrixFormat fmt = io::format_from_path(in.data);
  if (in.format == "csv") fmt = io::MatrixFormat::csv_nan;
  if (in.format == "mtx") fmt = io::MatrixFormat::mm_coord;
  ObservedMatrix data = io::read_observed_matrix(in.data, fmt);
  WeightedGraph rows = load_graph(in.row_graph, in.row_features, in.knn, data.rows(), "row");
  WeightedGraph cols = load_graph(in.col_graph, in.col_features, in.knn, data.cols(), "col");
  return BmcProblem(std::move(data), std::move(rows), std::move(cols));
}

inline void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-")
    out << text;
  else
    io::detail::write_file(path, text);
}

inline std::string describe(const Patch& patch) {
  return "row component " + std::to_string(patch.row_component) + ", column component " +
         std::to_string(patch.col_component);
}

inline io::Json evaluation_json(const ObjectiveEvaluation& ev) {
  return io::Json{{"rss", ev.rss}, {"df", ev.df}, {"bic", ev.bic}, {"aic", ev.aic}, {"observed", ev.observed}};
}

using Clock = std::chrono::steady_clock;
inline double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

inline int cmd_check(const Settings& s, std::ostream& out) {
  const BmcProblem p = load_problem(s.in);
  const AssumptionReport rep = check_assumption(p);
  out << "row components: " << p.row_partition().component_count << "\n";
  out << "column components: " << p.col_partition().component_count << "\n";
  out << "observed: " << p.mask().observed_count() << " of " << p.mask().size() << "\n";
  if (rep.holds) {
    out << "assumption holds\n";
    return ok;
  }
  out << "assumption violated: no observed entry in " << describe(*rep.first_violation) << "\n";
  return assumption;
}

inline int cmd_complete(const Settings& s, std::ostream& out) {
  const BmcProblem p = load_problem(s.in);
  require_assumption(p);
  const CompletedMatrix z = s.limit ? limiting_solution(p) : complete(p, {s.gamma_row, s.gamma_col}, s.solver.config());
  io::write_matrix_csv(s.out, z.estimate);
  if (z.report)
    out << "solver " << to_string(z.report->method) << ", relative residual " << io::format_double(z.report->relative_residual)
        << "\n";
  return ok;
}

inline int cmd_select(const Settings& s, std::ostream& out) {
  const auto t0 = Clock::now();
  const BmcProblem p = load_problem(s.in);
  require_assumption(p);
  const SolverConfig solver = s.solver.config();
  const Criterion criterion = s.criterion == "aic" ? Criterion::aic : Criterion::bic;
  const TraceMode mode = s.mode == "hutchinson" ? TraceMode::hutchinson : TraceMode::exact;
  io::Json rep{{"schema", 1}, {"command", "select"}, {"method", s.method}, {"criterion", s.criterion}, {"seed", s.seed}};
  PenaltyParams chosen;
  if (s.method == "ims") {
    ImsConfig cfg;
    cfg.init = {s.gamma_row, s.gamma_col};
    cfg.mode = mode;
    cfg.criterion = criterion;
    cfg.probe_count = s.probes;
    cfg.seed = s.seed;
    cfg.solver = solver;
    cfg.lbfgs.max_iters = s.max_iters;
    cfg.lbfgs.grad_tol = s.grad_tol;
    const ImsResult r = ims(p, cfg);
    chosen = r.gamma;
    rep["mode"] = s.mode;
    if (mode == TraceMode::hutchinson) rep["probes"] = s.probes;
    rep["gamma"] = io::gamma_json(r.gamma);
    rep["objective"] = r.evaluation.value(criterion);
    rep["fit"] = evaluation_json(r.evaluation);
    rep["log_gradient"] = {r.log_gradient.row, r.log_gradient.col};
    rep["status"] = to_string(r.trace.status);
    rep["iterations"] = r.trace.iterates.size();
    rep["evaluations"] = r.trace.evaluations;
    rep["solves"] = r.trace.total_solves;
    if (!s.trace.empty()) io::detail::write_file(s.trace, io::format_trace_csv(r.trace, s.timing));
  } else {
    const auto [nr, nc] = parse_grid(s.grid);
    const auto [lo, hi] = parse_range(s.range);
    GridOptions go;
    go.objective = s.method == "grid-cv" ? GridObjective::cv
                   : mode == TraceMode::hutchinson ? GridObjective::bic_hutchinson
                                                   : GridObjective::bic_exact;
    go.criterion = criterion;
    go.probe_count = s.probes;
    go.folds = s.folds;
    go.seed = s.seed;
    go.solver = solver;
    go.threads = s.thread_count();
    const GridResult g = grid_search(p, GridSpec{nr, nc, lo, hi}, go);
    chosen = g.best;
    if (s.method == "grid-bic") rep["mode"] = s.mode;
    if (s.method == "grid-cv") rep["folds"] = s.folds;
    rep["grid"] = {{"rows", nr}, {"cols", nc}, {"lo", lo}, {"hi", hi}};
    rep["gamma"] = io::gamma_json(g.best);
    rep["objective"] = g.surface(g.best_row, g.best_col);
    EvaluationOptions eo;
    eo.solver = solver;
    rep["fit"] = evaluation_json(evaluate_objective(p, g.best, eo));
    rep["failures"] = g.failures;
    rep["solves"] = g.solves;
  }
  if (!s.out.empty()) io::write_matrix_csv(s.out, complete(p, chosen, solver).estimate);
  if (s.timing) rep["wall_seconds"] = seconds_since(t0);
  emit(s.report, io::dump(rep), out);
  return ok;
}

inline int cmd_weights(const Settings& s, std::ostream& out) {
  const Matrix f = io::read_features(s.features);
  const WeightedGraph g = weights_from_features(f, s.in.knn);
  io::write_graph(s.out, g);
  out << "vertices " << g.vertex_count() << ", edges " << g.edge_count() << ", components "
      << connected_components(g).component_count << "\n";
  return ok;
}

inline int cmd_simulate(const Settings& s, std::ostream& out) {
  io::ExperimentFile ex = io::parse_experiment(io::detail::read_file(s.spec));
  ComparisonConfig cfg;
  cfg.replicates = s.replicates.value_or(ex.replicates);
  cfg.master_seed = s.sim_seed.value_or(ex.seed);
  cfg.threads = s.thread_count();
  cfg.solver = s.solver.config();
  const auto records = run_comparison(ex.spec, ex.methods, cfg);
  io::detail::write_file(s.out, io::format_results_csv(records, s.timing));
  const auto summary = summarize(records);
  if (!s.summary.empty()) io::detail::write_file(s.summary, io::dump(io::summary_json(summary, s.timing)));
  for (const auto& m : summary)
    out << m.method << ": mse_missing " << io::format_double(m.mean_mse_missing) << " (sd "
        << io::format_double(m.sd_mse_missing) << "), mean solves " << io::format_double(m.mean_solves) << "\n";
  return ok;
}

inline int cmd_df(const Settings& s, std::ostream& out) {
  const BmcProblem p = load_problem(s.in);
  require_assumption(p);
  EvaluationOptions eo;
  eo.solver = s.solver.config();
  eo.mode = s.mode == "hutchinson" ? TraceMode::hutchinson : TraceMode::exact;
  std::optional<ProbeSet> probes;
  if (eo.mode == TraceMode::hutchinson) {
    probes = ProbeSet::rademacher(p.mask().size(), s.probes, SeedSplitter(s.seed).seed("probes"));
    eo.probes = &*probes;
  }
  const ObjectiveEvaluation ev = evaluate_objective(p, {s.gamma_row, s.gamma_col}, eo);
  out << io::format_double(ev.df) << "\n";
  return ok;
}

inline int cmd_surface(const Settings& s, std::ostream& out) {
  const BmcProblem p = load_problem(s.in);
  require_assumption(p);
  const auto [nr, nc] = parse_grid(s.grid);
  const auto [lo, hi] = parse_range(s.range);
  GridOptions go;
  go.objective = s.mode == "hutchinson" ? GridObjective::bic_hutchinson : GridObjective::bic_exact;
  go.criterion = s.criterion == "aic" ? Criterion::aic : Criterion::bic;
  go.probe_count = s.probes;
  go.seed = s.seed;
  go.solver = s.solver.config();
  go.threads = s.thread_count();
  const GridResult g = grid_search(p, GridSpec{nr, nc, lo, hi}, go);
  emit(s.out, io::format_surface_csv(g, s.criterion), out);
  return ok;
}

}  // namespace detail

/// Parses and runs one command line. Library errors map to exit codes:
/// 1 usage, 2 assumption violation, 3 solver failure, 4 I/O.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Settings s;
  auto app = build_app(s);
  try {
    app->parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e_;
    const int code = app->exit(e, o, e_);
    out << o.str();
    err << e_.str();
    return code == 0 ? ok : usage;
  }
  if (s.threads && *s.threads < 1) return usage;
  WarningSink previous = set_warning_sink([&err](const std::string& msg) { err << "warning: " << msg << "\n"; });
  auto done = [&previous] { set_warning_sink(std::move(previous)); };
  try {
    const CLI::App* sub = app->get_subcommands().front();
    const std::string name = sub->get_name();
    int code = ok;
    if (name == "check") code = detail::cmd_check(s, out);
    else if (name == "complete") code = detail::cmd_complete(s, out);
    else if (name == "select") code = detail::cmd_select(s, out);
    else if (name == "weights") code = detail::cmd_weights(s, out);
    else if (name == "simulate") code = detail::cmd_simulate(s, out);
    else if (name == "df") code = detail::cmd_df(s, out);
    else if (name == "surface") code = detail::cmd_surface(s, out);
    done();
    return code;
  } catch (const Error& e) {
    done();
    err << "error: " << e.what() << "\n";
    switch (e.code()) {
      case ErrorCode::assumption_violated:
      case ErrorCode::fold_infeasible:
      case ErrorCode::infeasible_realization: return assumption;
      case ErrorCode::not_positive_definite:
      case ErrorCode::max_iters_exceeded:
      case ErrorCode::gradient_undefined:
      case ErrorCode::cap_exceeded: return solver_failure;
      case ErrorCode::parse_error:
      case ErrorCode::io_error: return io_failure;
      default: return usage;
    }
  } catch (const std::exception& e) {
    done();
    err << "error: " << e.what() << "\n";
    return usage;
  }
}

}  // namespace bmc::cli
