#pragma once

#include "bmc/common.hpp"
#include "bmc/completion.hpp"
#include "bmc/errors.hpp"
#include "bmc/graph.hpp"
#include "bmc/parallel.hpp"
#include "bmc/rng.hpp"
#include "bmc/selection.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <utility>
#include <algorithm>
#include <random>
#include <string>
#include <vector>

namespace bmc {

/// Block-constant ground truth plus Gaussian noise and uniform missingness.
struct CheckerboardSpec {
  std::vector<Index> row_blocks{25, 25};
  std::vector<Index> col_blocks{25, 25};
  Matrix block_means = (Matrix(2, 2) << 10.0, -25.0, 25.0, -10.0).finished();
  double noise_sd = 1.0;
  double missing_fraction = 0.1;
  std::uint64_t seed = 0;
  // Similarity weights for the row and column graphs.
  double within_weight = 1.0;
  double cross_weight = 0.001;

  Index rows() const { return std::accumulate(row_blocks.begin(), row_blocks.end(), Index{0}); }
  Index cols() const { return std::accumulate(col_blocks.begin(), col_blocks.end(), Index{0}); }

  void validate() const {
    if (row_blocks.empty() || col_blocks.empty()) throw InvalidArgument("block size lists must be nonempty");
    for (Index b : row_blocks)
      if (b < 1) throw InvalidArgument("row block sizes must be positive");
    for (Index b : col_blocks)
      if (b < 1) throw InvalidArgument("column block sizes must be positive");
    if (block_means.rows() != static_cast<Index>(row_blocks.size()) ||
        block_means.cols() != static_cast<Index>(col_blocks.size()))
      throw DimensionMismatch("block means must be (#row blocks) x (#column blocks)");
    if (!(noise_sd >= 0.0)) throw InvalidArgument("noise sd must be nonnegative");
    if (!(missing_fraction >= 0.0 && missing_fraction < 1.0)) throw InvalidArgument("missing fraction must be in [0, 1)");
    const Index total = rows() * cols();
    if (static_cast<Index>(std::ceil(missing_fraction * static_cast<double>(total))) >= total)
      throw InvalidArgument("missing fraction leaves no observed entries");
    if (!(within_weight >= 0.0 && cross_weight >= 0.0)) throw InvalidArgument("weights must be nonnegative");
  }

  /// The 50 x 50 four-bicluster design.
  static CheckerboardSpec standard(double missing_fraction, std::uint64_t seed = 0) {
    CheckerboardSpec s;
    s.missing_fraction = missing_fraction;
    s.seed = seed;
    return s;
  }
};

inline Matrix block_matrix(const std::vector<Index>& row_blocks, const std::vector<Index>& col_blocks,
                           const Matrix& means) {
  Index n = 0, p = 0;
  for (Index b : row_blocks) n += b;
  for (Index b : col_blocks) p += b;
  Matrix m(n, p);
  Index c0 = 0;
  for (std::size_t c = 0; c < col_blocks.size(); ++c) {
    Index r0 = 0;
    for (std::size_t r = 0; r < row_blocks.size(); ++r) {
      m.block(r0, c0, row_blocks[r], col_blocks[c]).setConstant(means(static_cast<Index>(r), static_cast<Index>(c)));
      r0 += row_blocks[r];
    }
    c0 += col_blocks[c];
  }
  return m;
}

/// Weight `within` between distinct vertices of the same block, `cross`
/// between vertices of different blocks.
inline WeightedGraph block_weights(const std::vector<Index>& blocks, double within = 1.0, double cross = 0.001) {
  std::vector<Index> label;
  for (std::size_t b = 0; b < blocks.size(); ++b) label.insert(label.end(), static_cast<std::size_t>(blocks[b]), static_cast<Index>(b));
  const auto n = static_cast<Index>(label.size());
  std::vector<Edge> edges;
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) {
      const double w = label[i] == label[j] ? within : cross;
      if (w > 0.0) edges.push_back({i, j, w});
    }
  return WeightedGraph(n, std::move(edges));
}

struct Realization {
  Matrix truth;
  ObservedMatrix observed;
};

/// X = M + sigma * noise with exactly ceil(f * np) entries removed uniformly
/// without replacement. `mask_attempt` selects an independent mask stream.
inline Realization generate(const CheckerboardSpec& spec, std::uint64_t mask_attempt = 0) {
  spec.validate();
  const SeedSplitter seeds(spec.seed);
  Realization out;
  out.truth = block_matrix(spec.row_blocks, spec.col_blocks, spec.block_means);
  const Index n = out.truth.rows();
  const Index p = out.truth.cols();
  Matrix x = out.truth;
  if (spec.noise_sd > 0.0) {
    Rng rng = seeds.rng("noise");
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Index j = 0; j < p; ++j)
      for (Index i = 0; i < n; ++i) x(i, j) += spec.noise_sd * normal(rng);
  }
  const Index total = n * p;
  const auto missing = static_cast<Index>(std::ceil(spec.missing_fraction * static_cast<double>(total) - 1e-9));
  std::vector<Index> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng = seeds.rng("mask", mask_attempt);
  // Partial Fisher-Yates: the first `missing` positions are a uniform sample.
  for (Index k = 0; k < missing; ++k) {
    std::uniform_int_distribution<Index> pick(k, total - 1);
    std::swap(order[k], order[pick(rng)]);
  }
  std::vector<unsigned char> flags(static_cast<std::size_t>(total), 1);
  for (Index k = 0; k < missing; ++k) flags[order[k]] = 0;
  out.observed = ObservedMatrix(std::move(x), ObservationMask::from_flags(n, p, std::move(flags)));
  return out;
}

enum class MethodKind { ims_exact, ims_hutchinson, grid_bic, grid_cv };

struct MethodSpec {
  MethodKind kind = MethodKind::ims_exact;
  Index probes = 5;       // ims_hutchinson
  Index grid_points = 10;  // grid_bic, grid_cv
  Index folds = 5;        // grid_cv

  /// "ims_exact", "ims_hutchinson:N", "grid_bic:N", "grid_cv:N:K"
  std::string id() const {
    switch (kind) {
      case MethodKind::ims_exact: return "ims_exact";
      case MethodKind::ims_hutchinson: return "ims_hutchinson:" + std::to_string(probes);
      case MethodKind::grid_bic: return "grid_bic:" + std::to_string(grid_points);
      case MethodKind::grid_cv: return "grid_cv:" + std::to_string(grid_points) + ":" + std::to_string(folds);
    }
    return "?";
  }

  static MethodSpec parse(const std::string& text) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
      const auto pos = text.find(':', start);
      parts.push_back(text.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    auto number = [&](std::size_t k, Index fallback) -> Index {
      if (parts.size() <= k) return fallback;
      try {
        std::size_t used = 0;
        const long long v = std::stoll(parts[k], &used);
        if (used != parts[k].size() || v < 1) throw InvalidArgument("");
        return static_cast<Index>(v);
      } catch (...) {
        throw InvalidArgument("bad number in method spec '" + text + "'");
      }
    };
    MethodSpec m;
    if (parts[0] == "ims_exact" && parts.size() == 1) {
      m.kind = MethodKind::ims_exact;
    } else if (parts[0] == "ims_hutchinson" && parts.size() <= 2) {
      m.kind = MethodKind::ims_hutchinson;
      m.probes = number(1, 5);
    } else if (parts[0] == "grid_bic" && parts.size() <= 2) {
      m.kind = MethodKind::grid_bic;
      m.grid_points = number(1, 10);
    } else if (parts[0] == "grid_cv" && parts.size() <= 3) {
      m.kind = MethodKind::grid_cv;
      m.grid_points = number(1, 10);
      m.folds = number(2, 5);
    } else {
      throw InvalidArgument("unknown method spec '" + text + "'");
    }
    return m;
  }
};

struct MethodRecord {
  std::string method;
  Index replicate = 0;
  double wall_seconds = 0.0;
  PenaltyParams gamma;
  double bic = 0.0;             // exact BIC at the selected penalties
  double mse_missing = 0.0;     // against the noiseless truth
  double mse_observed = 0.0;    // against the noiseless truth
  double mse_observed_data = 0.0;  // against the noisy data
  Index solves = 0;
  Index iterations = 0;
  std::string status;
};

struct ComparisonConfig {
  Index replicates = 30;
  std::uint64_t master_seed = 0;
  unsigned threads = 1;
  ImsConfig ims;          // mode, probes and seed are set per method
  SolverConfig solver;
  double grid_lo = -9.0;
  double grid_hi = 1.0;
  Index max_mask_attempts = 20;
  bool exact_bic_at_selection = true;
};

namespace detail {
inline void score_fit(const Matrix& z, const Realization& real, MethodRecord& rec) {
  const auto& mask = real.observed.mask;
  const Index n = z.rows();
  double miss = 0.0, obs = 0.0, obs_data = 0.0;
  for (Index k : mask.missing_indices()) {
    const double e = z(k % n, k / n) - real.truth(k % n, k / n);
    miss += e * e;
  }
  for (Index k : mask.observed_indices()) {
    const double e = z(k % n, k / n) - real.truth(k % n, k / n);
    const double d = z(k % n, k / n) - real.observed.values(k % n, k / n);
    obs += e * e;
    obs_data += d * d;
  }
  rec.mse_missing = mask.missing_count() > 0 ? miss / static_cast<double>(mask.missing_count()) : 0.0;
  rec.mse_observed = obs / static_cast<double>(mask.observed_count());
  rec.mse_observed_data = obs_data / static_cast<double>(mask.observed_count());
}
}  // namespace detail

/// Runs one method on one problem/realization; timing covers selection and the final fit.
inline MethodRecord run_method(const BmcProblem& problem, const Realization& real, const MethodSpec& method,
                               const ComparisonConfig& cfg, const SeedSplitter& seeds) {
  MethodRecord rec;
  rec.method = method.id();
  const auto start = std::chrono::steady_clock::now();
  Matrix z;
  switch (method.kind) {
    case MethodKind::ims_exact:
    case MethodKind::ims_hutchinson: {
      ImsConfig ic = cfg.ims;
      ic.solver = cfg.solver;
      ic.mode = method.kind == MethodKind::ims_exact ? TraceMode::exact : TraceMode::hutchinson;
      ic.probe_count = method.probes;
      ic.seed = seeds.seed("probes");
      const ImsResult r = ims(problem, ic);
      rec.gamma = r.gamma;
      rec.solves = r.trace.total_solves;
      rec.iterations = static_cast<Index>(r.trace.iterates.size());
      rec.status = to_string(r.trace.status);
      z = unvectorize(r.evaluation.z, problem.rows(), problem.cols());
      break;
    }
    case MethodKind::grid_bic:
    case MethodKind::grid_cv: {
      GridSpec grid{method.grid_points, method.grid_points, cfg.grid_lo, cfg.grid_hi};
      GridOptions go;
      go.objective = method.kind == MethodKind::grid_bic ? GridObjective::bic_exact : GridObjective::cv;
      go.folds = method.folds;
      go.seed = seeds.seed("folds");
      go.solver = cfg.solver;
      const GridResult g = grid_search(problem, grid, go);
      rec.gamma = g.best;
      rec.solves = g.solves;
      rec.iterations = grid.row_points * grid.col_points;
      rec.status = g.failures == 0 ? "ok" : std::to_string(g.failures) + " failed points";
      // Refit on every observed entry at the selected penalties.
      const CompletedMatrix fit = complete(problem, g.best, cfg.solver);
      ++rec.solves;
      z = fit.estimate;
      break;
    }
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  detail::score_fit(z, real, rec);
  if (cfg.exact_bic_at_selection) {
    EvaluationOptions eo;
    eo.solver = cfg.solver;
    rec.bic = evaluate_objective(problem, rec.gamma, eo).bic;
  }
  return rec;
}

/// Draws a realization whose mask satisfies the missingness assumption,
/// regenerating the mask up to `max_attempts` times.
inline std::pair<Realization, BmcProblem> feasible_realization(const CheckerboardSpec& spec, Index max_attempts) {
  const WeightedGraph row_graph = block_weights(spec.row_blocks, spec.within_weight, spec.cross_weight);
  const WeightedGraph col_graph = block_weights(spec.col_blocks, spec.within_weight, spec.cross_weight);
  // The noise stream does not depend on the attempt, so only the mask changes.
  Realization real = generate(spec, 0);
  const BmcProblem base(real.observed, row_graph, col_graph);
  for (Index attempt = 0; attempt < max_attempts; ++attempt) {
    if (attempt > 0) real = generate(spec, static_cast<std::uint64_t>(attempt));
    BmcProblem problem = attempt == 0 ? base : base.with_mask(real.observed.mask);
    if (check_assumption(problem).holds) return {std::move(real), std::move(problem)};
  }
  throw InfeasibleRealization("no mask satisfying the missingness assumption after " + std::to_string(max_attempts) +
                              " attempts");
}

/// Every method sees the identical realization in each replicate. Output is
/// a pure function of (spec, methods, master seed) apart from wall times.
inline std::vector<MethodRecord> run_comparison(const CheckerboardSpec& spec, const std::vector<MethodSpec>& methods,
                                                const ComparisonConfig& cfg) {
  spec.validate();
  if (cfg.replicates < 1) throw InvalidArgument("need at least one replicate");
  const SeedSplitter master(cfg.master_seed);
  std::vector<std::vector<MethodRecord>> per_rep(static_cast<std::size_t>(cfg.replicates));
  parallel_for(static_cast<std::size_t>(cfg.replicates), cfg.threads, [&](std::size_t r) {
    const SeedSplitter rep = master.child("replicate", r);
    CheckerboardSpec s = spec;
    s.seed = rep.seed("data");
    const auto [real, problem] = feasible_realization(s, cfg.max_mask_attempts);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      MethodRecord rec = run_method(problem, real, methods[m], cfg, rep.child("method", m));
      rec.replicate = static_cast<Index>(r);
      per_rep[r].push_back(std::move(rec));
    }
  });
  std::vector<MethodRecord> out;
  for (auto& v : per_rep)
    for (auto& rec : v) out.push_back(std::move(rec));
  return out;
}

struct MethodSummary {
  std::string method;
  Index count = 0;
  double mean_wall_seconds = 0.0, sd_wall_seconds = 0.0;
  double mean_bic = 0.0, sd_bic = 0.0;
  double mean_mse_missing = 0.0, sd_mse_missing = 0.0;
  double mean_mse_observed = 0.0, sd_mse_observed = 0.0;
  double mean_solves = 0.0;
};

inline std::vector<MethodSummary> summarize(const std::vector<MethodRecord>& records) {
  std::vector<std::string> order;
  for (const auto& r : records)
    if (std::find(order.begin(), order.end(), r.method) == order.end()) order.push_back(r.method);
  auto mean_sd = [](const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    sd = 0.0;
    for (double x : v) sd += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(sd / static_cast<double>(v.size() - 1)) : 0.0;
  };
  std::vector<MethodSummary> out;
  for (const auto& name : order) {
    std::vector<double> wall, bic, miss, obs, solves;
    for (const auto& r : records) {
      if (r.method != name) continue;
      wall.push_back(r.wall_seconds);
      bic.push_back(r.bic);
      miss.push_back(r.mse_missing);
      obs.push_back(r.mse_observed);
      solves.push_back(static_cast<double>(r.solves));
    }
    MethodSummary s;
    s.method = name;
    s.count = static_cast<Index>(wall.size());
    mean_sd(wall, s.mean_wall_seconds, s.sd_wall_seconds);
    mean_sd(bic, s.mean_bic, s.sd_bic);
    mean_sd(miss, s.mean_mse_missing, s.sd_mse_missing);
    mean_sd(obs, s.mean_mse_observed, s.sd_mse_observed);
    double unused = 0.0;
    mean_sd(solves, s.mean_solves, unused);
    out.push_back(s);
  }
  return out;
}

}  // namespace bmc
