#pragma once

#include "bmc/common.hpp"
#include "bmc/completion.hpp"
#include "bmc/errors.hpp"
#include "bmc/lbfgs.hpp"
#include "bmc/parallel.hpp"
#include "bmc/rng.hpp"
#include "bmc/solver.hpp"
#include "bmc/system.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace bmc {

enum class TraceMode { exact, hutchinson };
enum class Criterion { bic, aic };

inline std::string to_string(TraceMode m) { return m == TraceMode::exact ? "exact" : "hutchinson"; }
inline std::string to_string(Criterion c) { return c == Criterion::bic ? "bic" : "aic"; }

/// Rademacher probe vectors, fixed for the lifetime of a selection run.
struct ProbeSet {
  std::uint64_t seed = 0;
  std::vector<Vector> probes;

  Index count() const noexcept { return static_cast<Index>(probes.size()); }

  static ProbeSet rademacher(Index length, Index count, std::uint64_t seed) {
    if (count < 1) throw InvalidArgument("probe count must be >= 1");
    ProbeSet set;
    set.seed = seed;
    Rng rng(seed);
    set.probes.reserve(static_cast<std::size_t>(count));
    for (Index k = 0; k < count; ++k) {
      Vector w(length);
      for (Index i = 0; i < length; ++i) w[i] = (rng() >> 63) ? 1.0 : -1.0;
      set.probes.push_back(std::move(w));
    }
    return set;
  }
};

/// Number of Rademacher samples for an (epsilon, delta) trace estimator:
/// ceil(6 epsilon^-2 log(2 / delta)).
inline Index sample_count_for(double epsilon, double delta) {
  if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("delta must lie in (0, 1)");
  const double raw = 6.0 / (epsilon * epsilon) * std::log(2.0 / delta);
  // Values within rounding of an integer are not bumped to the next one.
  const double nearest = std::round(raw);
  if (std::abs(raw - nearest) <= 1e-9 * std::max(1.0, raw)) return static_cast<Index>(nearest);
  return static_cast<Index>(std::ceil(raw));
}

/// Per-sample quadratic forms w_k^T S^{-1} w_k.
inline std::vector<double> hutchinson_samples(const Factorization& f, const ProbeSet& probes) {
  const auto sols = f.solve_many(probes.probes);
  std::vector<double> out;
  out.reserve(sols.size());
  for (std::size_t k = 0; k < sols.size(); ++k) out.push_back(probes.probes[k].dot(sols[k].solution));
  return out;
}

/// Unbiased estimate of tr(S^{-1}) from Rademacher probes.
inline double hutchinson_trace(const Factorization& f, const ProbeSet& probes) {
  const auto s = hutchinson_samples(f, probes);
  double sum = 0.0;
  for (double v : s) sum += v;
  return sum / static_cast<double>(s.size());
}

struct DfExactOptions {
  Index dense_cap = 2000;  // largest np for the dense-inverse route
  double spectral_max_work = 2e10;
};

struct ExactTraces {
  double inverse = 0.0;
  double row = 0.0;  // tr(S^-1 (I (x) L_r) S^-1)
  double col = 0.0;  // tr(S^-1 (L_c (x) I) S^-1)
};

/// Dense S^{-1}. Only for small systems.
inline Matrix dense_inverse(const SystemOperator& op, Index cap) {
  if (op.size() > cap)
    throw CapExceeded("dense inverse needs np <= " + std::to_string(cap) + ", got " + std::to_string(op.size()));
  const Matrix s = Matrix(op.assemble());
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success) throw NotPositiveDefinite("system matrix is not positive definite");
  const Vector d = llt.matrixLLT().diagonal();
  for (Index k = 0; k < d.size(); ++k)
    if (!(d[k] * d[k] > 1e-10 * s(k, k))) throw NotPositiveDefinite("system matrix is numerically singular");
  return llt.solve(Matrix::Identity(s.rows(), s.cols()));
}

/// Exact tr(S^{-1}) and, optionally, the traces entering the gradient. Uses
/// the factorization's Kronecker structure when available, otherwise the
/// spectral route if the basis exists, otherwise a dense inverse.
inline ExactTraces exact_traces(const SystemOperator& op, bool penalty_terms, const DfExactOptions& opts,
                                const Factorization* f = nullptr) {
  std::optional<Factorization::SpectralTraces> st;
  if (f) st = f->spectral_traces(penalty_terms);
  if (!st && op.basis()) {
    const double m = static_cast<double>(op.mask().missing_count());
    if (m * m * static_cast<double>(op.size()) <= opts.spectral_max_work)
      st = detail::SpectralBackend(op, SolverConfig{}).traces(penalty_terms);
  }
  if (st) return {st->inverse, st->row, st->col};

  const Matrix g = dense_inverse(op, opts.dense_cap);
  ExactTraces tr;
  tr.inverse = g.trace();
  if (penalty_terms) {
    Matrix kr(g.rows(), g.cols());
    Matrix kc(g.rows(), g.cols());
    for (Index c = 0; c < g.cols(); ++c) {
      kr.col(c) = op.apply_row_penalty(g.col(c));
      kc.col(c) = op.apply_col_penalty(g.col(c));
    }
    tr.row = g.cwiseProduct(kr).sum();
    tr.col = g.cwiseProduct(kc).sum();
  }
  return tr;
}

/// tr(S^{-1}), the degrees of freedom of the fit.
inline double degrees_of_freedom_exact(const SystemOperator& op, const DfExactOptions& opts = {}) {
  return exact_traces(op, false, opts).inverse;
}

inline double degrees_of_freedom_exact(const BmcProblem& p, PenaltyParams gamma, const DfExactOptions& opts = {}) {
  require_assumption(p);
  return degrees_of_freedom_exact(p.system(gamma), opts);
}

struct EvaluationOptions {
  TraceMode mode = TraceMode::exact;
  const ProbeSet* probes = nullptr;  // required in hutchinson mode
  SolverConfig solver;
  DfExactOptions df;
  bool gradient_traces = false;  // exact mode: compute the gradient traces now
};

struct ObjectiveEvaluation {
  PenaltyParams gamma;
  TraceMode mode = TraceMode::exact;
  Index observed = 0;
  double rss = 0.0;
  double df = 0.0;
  double bic = 0.0;
  double aic = 0.0;
  bool rss_floored = false;
  Vector z;
  Vector residual;  // P_Omega (z - x)
  std::vector<Vector> probe_solutions;
  std::optional<ExactTraces> exact;
  std::shared_ptr<const Factorization> factorization;

  double value(Criterion c) const { return c == Criterion::bic ? bic : aic; }
  Index solves() const { return factorization ? factorization->solve_count() : 0; }
};

inline constexpr double kRssFloor = 1e-300;

inline double criterion_penalty(Criterion c, Index observed) {
  return c == Criterion::bic ? std::log(static_cast<double>(observed)) : 2.0;
}

/// BIC / AIC at fixed penalties. Exact mode takes tr(S^{-1}) exactly;
/// hutchinson mode replaces it with the probe average and performs exactly
/// N + 1 solves against one factorization.
inline ObjectiveEvaluation evaluate_objective(const BmcProblem& p, PenaltyParams gamma, const EvaluationOptions& opts) {
  require_assumption(p);
  if (opts.mode == TraceMode::hutchinson && (!opts.probes || opts.probes->count() < 1))
    throw InvalidArgument("hutchinson mode needs a probe set");
  const SystemOperator op = p.system(gamma);
  auto f = std::make_shared<const Factorization>(op, opts.solver);

  ObjectiveEvaluation ev;
  ev.gamma = gamma;
  ev.mode = opts.mode;
  ev.observed = p.mask().observed_count();
  ev.factorization = f;

  const Vector px = p.observed_data();
  if (opts.mode == TraceMode::hutchinson) {
    std::vector<Vector> rhs;
    rhs.reserve(opts.probes->probes.size() + 1);
    rhs.push_back(px);
    for (const Vector& w : opts.probes->probes) rhs.push_back(w);
    auto sols = f->solve_many(rhs);
    ev.z = std::move(sols[0].solution);
    double sum = 0.0;
    for (std::size_t k = 1; k < sols.size(); ++k) {
      sum += opts.probes->probes[k - 1].dot(sols[k].solution);
      ev.probe_solutions.push_back(std::move(sols[k].solution));
    }
    ev.df = sum / static_cast<double>(opts.probes->count());
  } else {
    ev.z = f->solve(px).solution;
    ev.exact = exact_traces(op, opts.gradient_traces, opts.df, f.get());
    if (!opts.gradient_traces) ev.exact->row = ev.exact->col = std::numeric_limits<double>::quiet_NaN();
    ev.df = ev.exact->inverse;
  }
  ev.residual = project(p.mask(), ev.z - p.data_vector());
  ev.rss = ev.residual.squaredNorm();
  if (!(ev.rss >= kRssFloor)) {
    ev.rss = kRssFloor;
    ev.rss_floored = true;
  }
  const double n_obs = static_cast<double>(ev.observed);
  const double fit = n_obs * std::log(ev.rss);
  ev.bic = fit + std::log(n_obs) * ev.df;
  ev.aic = fit + 2.0 * ev.df;
  return ev;
}

struct Gradient {
  double row = 0.0;
  double col = 0.0;
};

/// d criterion / d gamma. One extra solve v = S^{-1} P_Omega r; the data term
/// is -(2|Omega| / rss) z^T K v for K = I (x) L_r or L_c (x) I, the trace
/// term is tr(S^{-1} K S^{-1}) exactly or (1/N) sum z_k^T K z_k with the
/// cached probe solutions.
inline Gradient gradient(const BmcProblem& p, const ObjectiveEvaluation& ev, Criterion criterion = Criterion::bic,
                         const DfExactOptions& df_opts = {}) {
  if (ev.rss_floored || !(ev.rss > 0.0))
    throw GradientUndefined("residual sum of squares is zero; log(rss) has no derivative");
  if (!ev.factorization) throw InvalidArgument("evaluation carries no factorization");
  const Factorization& f = *ev.factorization;
  const SystemOperator& op = f.op();
  const Vector v = f.solve(ev.residual).solution;

  const double scale = -2.0 * static_cast<double>(ev.observed) / ev.rss;
  Gradient g;
  g.row = scale * ev.z.dot(op.apply_row_penalty(v));
  g.col = scale * ev.z.dot(op.apply_col_penalty(v));

  double tr_row = 0.0;
  double tr_col = 0.0;
  if (ev.mode == TraceMode::hutchinson) {
    for (const Vector& zk : ev.probe_solutions) {
      tr_row += zk.dot(op.apply_row_penalty(zk));
      tr_col += zk.dot(op.apply_col_penalty(zk));
    }
    tr_row /= static_cast<double>(ev.probe_solutions.size());
    tr_col /= static_cast<double>(ev.probe_solutions.size());
  } else {
    ExactTraces tr;
    if (ev.exact && std::isfinite(ev.exact->row))
      tr = *ev.exact;
    else
      tr = exact_traces(op, true, df_opts, &f);
    tr_row = tr.row;
    tr_col = tr.col;
  }
  const double c = criterion_penalty(criterion, ev.observed);
  g.row -= c * tr_row;
  g.col -= c * tr_col;
  return g;
}

// ---------------------------------------------------------------------------
// Iterative model selection

enum class ImsStatus { converged, max_iters, line_search_failure, degenerate_fit };

inline std::string to_string(ImsStatus s) {
  switch (s) {
    case ImsStatus::converged: return "converged";
    case ImsStatus::max_iters: return "max_iters";
    case ImsStatus::line_search_failure: return "line_search_failure";
    case ImsStatus::degenerate_fit: return "degenerate_fit";
  }
  return "?";
}

struct ImsConfig {
  PenaltyParams init{1.0, 1.0};
  TraceMode mode = TraceMode::exact;
  Criterion criterion = Criterion::bic;
  Index probe_count = 5;
  std::uint64_t seed = 0;
  // Iterative solves leave noise near 1e-9 relative on the criterion, below
  // which the gradient test alone can stall.
  LbfgsOptions lbfgs{.f_rel_tol = 2.2e-9};
  SolverConfig solver;
  DfExactOptions df;
};

struct TraceRecord {
  Index iteration = 0;
  PenaltyParams gamma;
  double value = 0.0;
  double grad_inf_norm = 0.0;  // log-scale gradient
  Index solves = 0;            // cumulative
  Index evaluations = 0;       // cumulative
  double wall_seconds = 0.0;   // since the start of the run
};

struct SelectionTrace {
  std::vector<TraceRecord> iterates;
  ImsStatus status = ImsStatus::max_iters;
  Index total_solves = 0;
  Index evaluations = 0;
  double wall_seconds = 0.0;
};

struct ImsResult {
  PenaltyParams gamma;
  ObjectiveEvaluation evaluation;
  Gradient log_gradient;
  SelectionTrace trace;
  std::optional<ProbeSet> probes;
};

/// Quasi-Newton minimization of the criterion over eta = log(gamma). In
/// hutchinson mode the probes are drawn once and reused at every iterate,
/// so the surrogate is deterministic; each evaluation costs N + 2 solves.
inline ImsResult ims(const BmcProblem& p, const ImsConfig& cfg) {
  require_assumption(p);
  if (!(cfg.init.row > 0.0 && cfg.init.col > 0.0)) throw InvalidArgument("initial penalties must be positive");
  const auto start = std::chrono::steady_clock::now();
  ImsResult out;
  if (cfg.mode == TraceMode::hutchinson)
    out.probes = ProbeSet::rademacher(p.mask().size(), cfg.probe_count, SeedSplitter(cfg.seed).seed("probes"));

  EvaluationOptions eo;
  eo.mode = cfg.mode;
  eo.probes = out.probes ? &*out.probes : nullptr;
  eo.solver = cfg.solver;
  eo.df = cfg.df;
  eo.gradient_traces = true;

  Index solves = 0;
  struct Cached {
    Vector eta;
    ObjectiveEvaluation ev;
    Gradient grad;
  };
  std::vector<Cached> evaluated;  // most recent evaluation at each accepted point

  auto eval = [&](const Vector& eta) -> std::optional<LbfgsPoint> {
    const PenaltyParams gamma{std::exp(eta[0]), std::exp(eta[1])};
    if (!std::isfinite(gamma.row) || !std::isfinite(gamma.col) || gamma.row <= 0.0 || gamma.col <= 0.0)
      return std::nullopt;
    try {
      ObjectiveEvaluation ev = evaluate_objective(p, gamma, eo);
      LbfgsPoint pt;
      pt.value = ev.value(cfg.criterion);
      Gradient g{0.0, 0.0};
      if (ev.rss_floored) {
        pt.terminal = true;
      } else {
        g = gradient(p, ev, cfg.criterion, cfg.df);
      }
      solves += ev.solves();
      pt.gradient = Vector(2);
      pt.gradient << gamma.row * g.row, gamma.col * g.col;
      evaluated.clear();
      evaluated.push_back({eta, std::move(ev), {pt.gradient[0], pt.gradient[1]}});
      return pt;
    } catch (const NotPositiveDefinite&) {
      return std::nullopt;
    } catch (const MaxItersExceeded&) {
      return std::nullopt;
    }
  };

  Cached last_accepted;
  auto on_accept = [&](const Vector& eta, const LbfgsPoint& pt, Index evaluations) {
    TraceRecord rec;
    rec.iteration = static_cast<Index>(out.trace.iterates.size());
    rec.gamma = {std::exp(eta[0]), std::exp(eta[1])};
    rec.value = pt.value;
    rec.grad_inf_norm = pt.gradient.lpNorm<Eigen::Infinity>();
    rec.solves = solves;
    rec.evaluations = evaluations;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.trace.iterates.push_back(rec);
    last_accepted = evaluated.back();
  };

  Vector eta0(2);
  eta0 << std::log(cfg.init.row), std::log(cfg.init.col);
  const LbfgsResult res = lbfgs_minimize(eval, eta0, cfg.lbfgs, on_accept);

  switch (res.status) {
    case LbfgsStatus::converged: out.trace.status = ImsStatus::converged; break;
    case LbfgsStatus::max_iters: out.trace.status = ImsStatus::max_iters; break;
    case LbfgsStatus::line_search_failure: out.trace.status = ImsStatus::line_search_failure; break;
    case LbfgsStatus::terminal_point: out.trace.status = ImsStatus::degenerate_fit; break;
  }
  out.gamma = {std::exp(res.x[0]), std::exp(res.x[1])};
  out.evaluation = std::move(last_accepted.ev);
  out.log_gradient = last_accepted.grad;
  out.trace.total_solves = solves;
  out.trace.evaluations = res.evaluations;
  out.trace.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

// ---------------------------------------------------------------------------
// Cross-validation

struct CvPlan {
  std::vector<std::vector<Index>> folds;  // held-out linear indices per fold
  std::vector<BmcProblem> training;       // problem restricted to the training mask
  Index attempts = 1;
};

/// Randomly partitions the observed set into K folds whose training masks
/// all satisfy the missingness assumption; reshuffles up to `max_attempts`.
inline CvPlan plan_folds(const BmcProblem& p, Index folds, std::uint64_t seed, Index max_attempts = 20) {
  const auto& observed = p.mask().observed_indices();
  if (folds < 2) throw InvalidArgument("cross-validation needs at least two folds");
  if (folds > static_cast<Index>(observed.size()))
    throw InvalidArgument("more folds than observed entries");
  const SeedSplitter seeds(seed);
  for (Index attempt = 0; attempt < max_attempts; ++attempt) {
    std::vector<Index> order = observed;
    Rng rng = seeds.rng("cv-folds", static_cast<std::uint64_t>(attempt));
    std::shuffle(order.begin(), order.end(), rng);
    CvPlan plan;
    plan.attempts = attempt + 1;
    const auto total = static_cast<Index>(order.size());
    bool feasible = true;
    for (Index k = 0; k < folds && feasible; ++k) {
      const Index lo = k * total / folds;
      const Index hi = (k + 1) * total / folds;
      std::vector<Index> held(order.begin() + lo, order.begin() + hi);
      std::sort(held.begin(), held.end());
      ObservationMask train = p.mask().without(held);
      feasible = check_assumption(p.row_partition(), p.col_partition(), train).holds;
      if (feasible) {
        plan.training.push_back(p.with_mask(std::move(train)));
        plan.folds.push_back(std::move(held));
      }
    }
    if (feasible) return plan;
  }
  throw FoldInfeasible("no fold assignment with every training mask satisfying the missingness assumption after " +
                       std::to_string(max_attempts) + " attempts");
}

struct CvResult {
  double mean_mse = 0.0;
  std::vector<double> fold_mse;
  Index solves = 0;
};

inline CvResult cross_validate(const BmcProblem& p, PenaltyParams gamma, const CvPlan& plan,
                               const SolverConfig& solver = {}) {
  CvResult res;
  const Vector x = p.data_vector();
  for (std::size_t k = 0; k < plan.folds.size(); ++k) {
    const auto fit = complete(plan.training[k], gamma, solver);
    ++res.solves;
    double sse = 0.0;
    for (Index idx : plan.folds[k]) {
      const double e = fit.estimate(idx % p.rows(), idx / p.rows()) - x[idx];
      sse += e * e;
    }
    res.fold_mse.push_back(sse / static_cast<double>(plan.folds[k].size()));
  }
  double sum = 0.0;
  for (double m : res.fold_mse) sum += m;
  res.mean_mse = sum / static_cast<double>(res.fold_mse.size());
  return res;
}

struct CvOptions {
  Index folds = 5;
  std::uint64_t seed = 0;
  Index max_attempts = 20;
  SolverConfig solver;
};

/// Mean held-out MSE over K folds of the observed entries.
inline CvResult cross_validate(const BmcProblem& p, PenaltyParams gamma, const CvOptions& opts = {}) {
  require_assumption(p);
  return cross_validate(p, gamma, plan_folds(p, opts.folds, opts.seed, opts.max_attempts), opts.solver);
}

// ---------------------------------------------------------------------------
// Grid search

enum class GridObjective { bic_exact, bic_hutchinson, cv };

/// Grid of exp(t) for t evenly spaced over [lo, hi] in each coordinate.
struct GridSpec {
  Index row_points = 50;
  Index col_points = 50;
  double lo = -9.0;
  double hi = 1.0;

  static Vector points(Index count, double lo, double hi) {
    if (count < 2) throw InvalidArgument("grid needs at least two points per axis");
    return Vector::LinSpaced(count, lo, hi).array().exp().matrix();
  }
  Vector row_values() const { return points(row_points, lo, hi); }
  Vector col_values() const { return points(col_points, lo, hi); }
};

struct GridOptions {
  GridObjective objective = GridObjective::bic_exact;
  Criterion criterion = Criterion::bic;
  Index probe_count = 5;
  Index folds = 5;
  std::uint64_t seed = 0;
  SolverConfig solver;
  DfExactOptions df;
  unsigned threads = 1;
};

struct GridResult {
  PenaltyParams best;
  Index best_row = 0;
  Index best_col = 0;
  Matrix surface;  // row_points x col_points
  Vector row_values;
  Vector col_values;
  Index solves = 0;
  Index failures = 0;
};

inline GridResult grid_search(const BmcProblem& p, const GridSpec& grid, const GridOptions& opts = {}) {
  require_assumption(p);
  GridResult res;
  res.row_values = grid.row_values();
  res.col_values = grid.col_values();
  const Index nr = grid.row_points;
  const Index nc = grid.col_points;
  res.surface.resize(nr, nc);

  std::optional<ProbeSet> probes;
  if (opts.objective == GridObjective::bic_hutchinson)
    probes = ProbeSet::rademacher(p.mask().size(), opts.probe_count, SeedSplitter(opts.seed).seed("probes"));
  std::optional<CvPlan> plan;
  if (opts.objective == GridObjective::cv) plan = plan_folds(p, opts.folds, opts.seed);

  std::vector<Index> solves(static_cast<std::size_t>(nr * nc), 0);
  std::vector<char> failed(static_cast<std::size_t>(nr * nc), 0);
  parallel_for(static_cast<std::size_t>(nr * nc), opts.threads, [&](std::size_t cell) {
    const Index i = static_cast<Index>(cell) / nc;
    const Index j = static_cast<Index>(cell) % nc;
    const PenaltyParams gamma{res.row_values[i], res.col_values[j]};
    try {
      if (opts.objective == GridObjective::cv) {
        const CvResult cv = cross_validate(p, gamma, *plan, opts.solver);
        res.surface(i, j) = cv.mean_mse;
        solves[cell] = cv.solves;
      } else {
        EvaluationOptions eo;
        eo.mode = opts.objective == GridObjective::bic_exact ? TraceMode::exact : TraceMode::hutchinson;
        eo.probes = probes ? &*probes : nullptr;
        eo.solver = opts.solver;
        eo.df = opts.df;
        const ObjectiveEvaluation ev = evaluate_objective(p, gamma, eo);
        res.surface(i, j) = ev.value(opts.criterion);
        solves[cell] = ev.solves();
      }
    } catch (const Error& e) {
      res.surface(i, j) = std::numeric_limits<double>::infinity();
      failed[cell] = 1;
      warn("grid point (" + std::to_string(gamma.row) + ", " + std::to_string(gamma.col) + ") failed: " + e.what());
    }
  });

  double best = std::numeric_limits<double>::infinity();
  bool found = false;
  for (Index i = 0; i < nr; ++i)
    for (Index j = 0; j < nc; ++j) {
      const double v = res.surface(i, j);
      if (!found || v < best) {
        best = v;
        res.best_row = i;
        res.best_col = j;
        found = true;
      }
    }
  res.best = {res.row_values[res.best_row], res.col_values[res.best_col]};
  for (std::size_t k = 0; k < solves.size(); ++k) {
    res.solves += solves[k];
    res.failures += failed[k];
  }
  return res;
}

}  // namespace bmc
