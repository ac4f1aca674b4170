#pragma once

#include "bmc/common.hpp"
#include "bmc/errors.hpp"
#include "bmc/graph.hpp"
#include "bmc/solver.hpp"
#include "bmc/system.hpp"

#include <memory>
#include <optional>
#include <sstream>
#include <utility>
#include <vector>

namespace bmc {

struct ProblemOptions {
  // Laplacian eigenbases are precomputed when both dimensions are at most
  // this size; they enable the spectral solver.
  Index spectral_max_dim = 2000;
};

/// Immutable estimation problem. Graph-derived quantities (Laplacians,
/// incidence matrices, components, eigenbases) are shared between copies and
/// between problems that differ only in their mask.
class BmcProblem {
 public:
  BmcProblem(ObservedMatrix data, WeightedGraph row_graph, WeightedGraph col_graph, ProblemOptions opts = {})
      : data_(std::make_shared<const ObservedMatrix>(std::move(data))) {
    if (row_graph.vertex_count() != data_->rows() || col_graph.vertex_count() != data_->cols())
      throw DimensionMismatch("graph sizes do not match the data matrix");
    auto g = std::make_shared<GraphData>();
    g->row_graph = std::move(row_graph);
    g->col_graph = std::move(col_graph);
    g->row_laplacian = std::make_shared<const SparseMatrix>(build_laplacian(g->row_graph));
    g->col_laplacian = std::make_shared<const SparseMatrix>(build_laplacian(g->col_graph));
    g->row_incidence = build_incidence(g->row_graph);
    g->col_incidence = build_incidence(g->col_graph);
    g->row_partition = connected_components(g->row_graph);
    g->col_partition = connected_components(g->col_graph);
    if (std::max(data_->rows(), data_->cols()) <= opts.spectral_max_dim)
      g->basis = std::make_shared<const KroneckerBasis>(KroneckerBasis::compute(*g->row_laplacian, *g->col_laplacian));
    graphs_ = std::move(g);
    mask_ = std::make_shared<const ObservationMask>(data_->mask);
  }

  /// Same graphs and values, different observed set.
  BmcProblem with_mask(ObservationMask mask) const {
    BmcProblem p = *this;
    p.data_ = std::make_shared<const ObservedMatrix>(data_->values, std::move(mask));
    p.mask_ = std::make_shared<const ObservationMask>(p.data_->mask);
    return p;
  }

  Index rows() const noexcept { return data_->rows(); }
  Index cols() const noexcept { return data_->cols(); }
  const ObservedMatrix& data() const noexcept { return *data_; }
  const ObservationMask& mask() const noexcept { return *mask_; }
  const WeightedGraph& row_graph() const noexcept { return graphs_->row_graph; }
  const WeightedGraph& col_graph() const noexcept { return graphs_->col_graph; }
  const SparseMatrix& row_laplacian() const noexcept { return *graphs_->row_laplacian; }
  const SparseMatrix& col_laplacian() const noexcept { return *graphs_->col_laplacian; }
  const SparseMatrix& row_incidence() const noexcept { return graphs_->row_incidence; }
  const SparseMatrix& col_incidence() const noexcept { return graphs_->col_incidence; }
  const ComponentPartition& row_partition() const noexcept { return graphs_->row_partition; }
  const ComponentPartition& col_partition() const noexcept { return graphs_->col_partition; }
  const KroneckerBasis* basis() const noexcept { return graphs_->basis.get(); }

  Vector data_vector() const { return vectorize(data_->values); }
  Vector observed_data() const { return project(*mask_, data_vector()); }

  SystemOperator system(PenaltyParams params) const {
    return SystemOperator(mask_, graphs_->row_laplacian, graphs_->col_laplacian, params, graphs_->basis);
  }

 private:
  struct GraphData {
    WeightedGraph row_graph;
    WeightedGraph col_graph;
    std::shared_ptr<const SparseMatrix> row_laplacian;
    std::shared_ptr<const SparseMatrix> col_laplacian;
    SparseMatrix row_incidence;
    SparseMatrix col_incidence;
    ComponentPartition row_partition;
    ComponentPartition col_partition;
    std::shared_ptr<const KroneckerBasis> basis;
  };

  std::shared_ptr<const ObservedMatrix> data_;
  std::shared_ptr<const ObservationMask> mask_;
  std::shared_ptr<const GraphData> graphs_;
};

struct Patch {
  Index row_component;
  Index col_component;
  friend bool operator==(const Patch&, const Patch&) = default;
};

struct AssumptionReport {
  bool holds = true;
  std::optional<Patch> first_violation;  // lowest (row, col) component pair without observations
};

/// Observed-entry counts per (row component, column component) patch.
inline Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic> patch_counts(const ComponentPartition& rows,
                                                                          const ComponentPartition& cols,
                                                                          const ObservationMask& mask) {
  Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic> counts =
      Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic>::Zero(rows.component_count, cols.component_count);
  const Index n = mask.rows();
  for (Index k : mask.observed_indices()) ++counts(rows.labels[k % n], cols.labels[k / n]);
  return counts;
}

/// Every bicluster patch must contain at least one observed entry. O(n + p + np).
inline AssumptionReport check_assumption(const ComponentPartition& rows, const ComponentPartition& cols,
                                         const ObservationMask& mask) {
  const auto counts = patch_counts(rows, cols, mask);
  AssumptionReport rep;
  for (Index r = 0; r < counts.rows() && rep.holds; ++r)
    for (Index c = 0; c < counts.cols(); ++c)
      if (counts(r, c) == 0) {
        rep.holds = false;
        rep.first_violation = Patch{r, c};
        break;
      }
  return rep;
}

inline AssumptionReport check_assumption(const BmcProblem& p) {
  return check_assumption(p.row_partition(), p.col_partition(), p.mask());
}

inline void require_assumption(const BmcProblem& p) {
  const auto rep = check_assumption(p);
  if (!rep.holds) {
    std::ostringstream os;
    os << "missingness assumption violated: patch (row component " << rep.first_violation->row_component
       << ", column component " << rep.first_violation->col_component << ") has no observed entries";
    throw AssumptionViolated(os.str());
  }
}

struct CompletedMatrix {
  Matrix estimate;
  std::optional<PenaltyParams> params;  // empty for the limiting solution
  std::optional<SolveReport> report;

  bool is_limit() const noexcept { return !params.has_value(); }
};

/// Fits Z at fixed penalties by solving S z = P_Omega x.
inline CompletedMatrix complete(const BmcProblem& p, PenaltyParams gamma, const SolverConfig& cfg = {}) {
  require_assumption(p);
  const Factorization f = factorize(p.system(gamma), cfg);
  auto res = f.solve(p.observed_data());
  return {unvectorize(res.solution, p.rows(), p.cols()), gamma, res.report};
}

struct PatchMeans {
  Matrix means;                                           // R x C
  Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic> counts;  // |Omega_rc|
};

namespace detail {
/// Neumaier-compensated running sum.
struct CompensatedSum {
  double sum = 0.0;
  double carry = 0.0;
  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x))
      carry += (sum - t) + x;
    else
      carry += (x - t) + sum;
    sum = t;
  }
  double value() const { return sum + carry; }
};
}  // namespace detail

/// Arithmetic mean of the observed entries in each patch.
inline PatchMeans patch_means(const BmcProblem& p) {
  require_assumption(p);
  const auto& rows = p.row_partition();
  const auto& cols = p.col_partition();
  std::vector<detail::CompensatedSum> sums(static_cast<std::size_t>(rows.component_count * cols.component_count));
  PatchMeans out;
  out.counts = patch_counts(rows, cols, p.mask());
  const Index n = p.rows();
  const Vector x = p.data_vector();
  for (Index k : p.mask().observed_indices()) {
    const Index r = rows.labels[k % n];
    const Index c = cols.labels[k / n];
    sums[static_cast<std::size_t>(r + rows.component_count * c)].add(x[k]);
  }
  out.means.resize(rows.component_count, cols.component_count);
  for (Index c = 0; c < cols.component_count; ++c)
    for (Index r = 0; r < rows.component_count; ++r)
      out.means(r, c) = sums[static_cast<std::size_t>(r + rows.component_count * c)].value() /
                        static_cast<double>(out.counts(r, c));
  return out;
}

/// Block-constant limit of Z as both penalties diverge.
inline CompletedMatrix limiting_solution(const BmcProblem& p) {
  const PatchMeans pm = patch_means(p);
  const auto& rows = p.row_partition();
  const auto& cols = p.col_partition();
  Matrix z(p.rows(), p.cols());
  for (Index j = 0; j < p.cols(); ++j)
    for (Index i = 0; i < p.rows(); ++i) z(i, j) = pm.means(rows.labels[i], cols.labels[j]);
  return {std::move(z), std::nullopt, std::nullopt};
}

struct PenaltyValue {
  double row = 0.0;  // ||Phi_r Z||_F^2 = tr(Z^T L_r Z)
  double col = 0.0;  // ||Z Phi_c^T||_F^2 = tr(Z L_c Z^T)
  double total(PenaltyParams g) const { return 0.5 * (g.row * row + g.col * col); }
};

/// Smoothness penalty evaluated through the incidence factorization, so both
/// parts are sums of squares.
inline PenaltyValue penalty_value(const BmcProblem& p, const Matrix& z) {
  if (z.rows() != p.rows() || z.cols() != p.cols()) throw DimensionMismatch("penalty_value: shape mismatch");
  PenaltyValue v;
  v.row = (p.row_incidence() * z).squaredNorm();
  v.col = (z * p.col_incidence().transpose()).squaredNorm();
  return v;
}

}  // namespace bmc
