#pragma once

#include "bmc/common.hpp"
#include "bmc/errors.hpp"
#include "bmc/system.hpp"

#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace bmc {

enum class SolverMethod { direct, pcg, spectral, automatic };
enum class FillOrdering { amd, natural };

inline std::string to_string(SolverMethod m) {
  switch (m) {
    case SolverMethod::direct: return "direct";
    case SolverMethod::pcg: return "pcg";
    case SolverMethod::spectral: return "spectral";
    case SolverMethod::automatic: return "auto";
  }
  return "?";
}

inline SolverMethod parse_solver_method(const std::string& s) {
  if (s == "direct") return SolverMethod::direct;
  if (s == "pcg") return SolverMethod::pcg;
  if (s == "spectral") return SolverMethod::spectral;
  if (s == "auto") return SolverMethod::automatic;
  throw InvalidArgument("unknown solver method '" + s + "'");
}

struct SolverConfig {
  SolverMethod method = SolverMethod::automatic;
  double cg_rel_tol = 1e-8;
  std::optional<Index> cg_max_iters;  // default 10 * sqrt(np) + 200
  double ic_drop_tol = 0.0;           // 0 = no-fill incomplete Cholesky
  bool use_preconditioner = true;
  Index auto_threshold = 50'000;
  FillOrdering ordering = FillOrdering::amd;
  // A pivot below pivot_tol times its diagonal entry of S is treated as a
  // singular direction.
  double pivot_tol = 1e-10;
  Index assembly_cap = 1'000'000;
  // Kronecker/Woodbury path: used by `automatic` when the Laplacian
  // eigenbases are available and missing^2 * np stays under this budget.
  double spectral_max_work = 5e8;
  // Above this many Laplacian entries per row (row plus column graph) the
  // Cholesky factor fills in badly and `automatic` prefers PCG.
  double direct_max_row_nnz = 64.0;

  Index max_iters_for(Index unknowns) const {
    return cg_max_iters.value_or(static_cast<Index>(10.0 * std::sqrt(static_cast<double>(unknowns))) + 200);
  }

  void validate() const {
    if (!(cg_rel_tol > 0.0)) throw InvalidArgument("cg_rel_tol must be positive");
    if (!(ic_drop_tol >= 0.0)) throw InvalidArgument("ic_drop_tol must be nonnegative");
    if (auto_threshold < 1) throw InvalidArgument("auto_threshold must be >= 1");
    if (cg_max_iters && *cg_max_iters < 1) throw InvalidArgument("cg_max_iters must be >= 1");
    if (!(pivot_tol > 0.0)) throw InvalidArgument("pivot_tol must be positive");
  }
};

struct SolveReport {
  SolverMethod method = SolverMethod::direct;
  Index iterations = 0;
  double relative_residual = 0.0;
  bool factorization_reused = false;
};

struct SolveResult {
  Vector solution;
  SolveReport report;
};

namespace detail {

/// Lower-triangular incomplete Cholesky of a symmetric matrix given by its
/// lower triangle in CSC form. drop_tol == 0 keeps the sparsity pattern of A;
/// a positive value admits fill and drops entries below drop_tol * ||A(:, j)||.
/// Returns nullopt on a nonpositive pivot.
inline std::optional<SparseMatrix> incomplete_cholesky(const SparseMatrix& lower, double drop_tol, double shift) {
  const Index n = lower.cols();
  std::vector<std::vector<std::pair<Index, double>>> cols(static_cast<std::size_t>(n));
  std::vector<std::vector<Index>> pending(static_cast<std::size_t>(n));
  std::vector<std::size_t> cursor(static_cast<std::size_t>(n), 0);
  Vector work = Vector::Zero(n);
  std::vector<Index> mark(static_cast<std::size_t>(n), -1);
  std::vector<Index> pattern;

  for (Index j = 0; j < n; ++j) {
    pattern.clear();
    double col_norm = 0.0;
    for (SparseMatrix::InnerIterator it(lower, j); it; ++it) {
      if (it.row() < j) continue;
      double v = it.value();
      if (it.row() == j) v *= 1.0 + shift;
      work[it.row()] = v;
      mark[it.row()] = j;
      pattern.push_back(it.row());
      col_norm += it.value() * it.value();
    }
    col_norm = std::sqrt(col_norm);
    if (mark[j] != j) {
      work[j] = 0.0;
      mark[j] = j;
      pattern.push_back(j);
    }

    auto ready = std::move(pending[j]);
    pending[j].clear();
    for (Index k : ready) {
      auto& ck = cols[k];
      const double ljk = ck[cursor[k]].second;
      for (std::size_t q = cursor[k]; q < ck.size(); ++q) {
        const Index i = ck[q].first;
        if (mark[i] != j) {
          if (drop_tol == 0.0) continue;
          mark[i] = j;
          work[i] = 0.0;
          pattern.push_back(i);
        }
        work[i] -= ck[q].second * ljk;
      }
      if (++cursor[k] < ck.size()) pending[ck[cursor[k]].first].push_back(k);
    }

    const double pivot = work[j];
    if (!(pivot > 0.0) || !std::isfinite(pivot)) return std::nullopt;
    const double d = std::sqrt(pivot);
    std::sort(pattern.begin(), pattern.end());
    auto& cj = cols[j];
    cj.emplace_back(j, d);
    for (Index i : pattern) {
      if (i == j) continue;
      const double v = work[i] / d;
      if (drop_tol > 0.0 && std::abs(v) < drop_tol * col_norm) continue;
      cj.emplace_back(i, v);
    }
    cursor[j] = 1;
    if (cj.size() > 1) pending[cj[1].first].push_back(j);
  }

  std::vector<Triplet> t;
  for (Index j = 0; j < n; ++j)
    for (const auto& [i, v] : cols[j]) t.emplace_back(i, j, v);
  SparseMatrix l(n, n);
  l.setFromTriplets(t.begin(), t.end());
  l.makeCompressed();
  return l;
}

class SparseCholeskyBackend {
 public:
  SparseCholeskyBackend(const SparseMatrix& s, const SolverConfig& cfg) {
    if (cfg.ordering == FillOrdering::amd)
      factor_.emplace<AmdLlt>();
    else
      factor_.emplace<NaturalLlt>();
    std::visit(
        [&](auto& llt) {
          if constexpr (!std::is_same_v<std::decay_t<decltype(llt)>, std::monostate>) {
            llt.compute(s);
            if (llt.info() != Eigen::Success)
              throw NotPositiveDefinite("sparse Cholesky failed: system matrix is not positive definite");
            // Pivots are squared diagonal entries of the permuted factor.
            const Vector factor_diag = SparseMatrix(llt.matrixL()).diagonal();
            const Vector s_diag = s.diagonal();
            // Natural ordering leaves the permutation empty.
            const Vector permuted_diag = llt.permutationP().size() == 0 ? s_diag : Vector(llt.permutationP() * s_diag);
            for (Index k = 0; k < s.rows(); ++k) {
              const double pivot = factor_diag[k] * factor_diag[k];
              if (!(pivot > cfg.pivot_tol * permuted_diag[k]))
                throw NotPositiveDefinite("sparse Cholesky pivot " + std::to_string(k) +
                                          " is numerically zero: system matrix is singular");
            }
          }
        },
        factor_);
  }

  Vector solve(const Vector& b) const {
    return std::visit(
        [&](const auto& llt) -> Vector {
          if constexpr (std::is_same_v<std::decay_t<decltype(llt)>, std::monostate>)
            return b;
          else
            return llt.solve(b);
        },
        factor_);
  }

  SparseMatrix factor() const {
    return std::visit(
        [](const auto& llt) -> SparseMatrix {
          if constexpr (std::is_same_v<std::decay_t<decltype(llt)>, std::monostate>)
            return {};
          else
            return SparseMatrix(llt.matrixL());
        },
        factor_);
  }

  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> permutation() const {
    return std::visit(
        [](const auto& llt) -> Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> {
          if constexpr (std::is_same_v<std::decay_t<decltype(llt)>, std::monostate>)
            return {};
          else if (llt.permutationP().size() == 0) {
            Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> id(llt.matrixL().rows());
            id.setIdentity();
            return id;
          } else {
            return llt.permutationP();
          }
        },
        factor_);
  }

 private:
  using AmdLlt = Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>;
  using NaturalLlt = Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::NaturalOrdering<int>>;
  std::variant<std::monostate, AmdLlt, NaturalLlt> factor_;
};

class PcgBackend {
 public:
  PcgBackend(SparseMatrix s, const SolverConfig& cfg) : s_(std::move(s)), tol_(cfg.cg_rel_tol) {
    max_iters_ = cfg.max_iters_for(s_.rows());
    if (!cfg.use_preconditioner) return;
    const SparseMatrix lower = s_.triangularView<Eigen::Lower>();
    double shift = 0.0;
    for (int attempt = 0; attempt <= 8; ++attempt) {
      if (auto l = incomplete_cholesky(lower, cfg.ic_drop_tol, shift)) {
        ic_ = std::move(*l);
        shift_ = shift;
        return;
      }
      shift = attempt == 0 ? 1e-3 : 2.0 * shift;
    }
    warn("incomplete Cholesky broke down after 8 shifted retries; using unpreconditioned CG");
  }

  /// Returns (solution, iterations); throws MaxItersExceeded.
  std::pair<Vector, Index> solve(const Vector& b) const {
    Vector x = Vector::Zero(b.size());
    const double bnorm = b.norm();
    if (bnorm == 0.0) return {x, 0};
    Vector r = b;
    Vector z = precondition(r);
    Vector d = z;
    double rz = r.dot(z);
    for (Index it = 1; it <= max_iters_; ++it) {
      const Vector q = s_ * d;
      const double alpha = rz / d.dot(q);
      x += alpha * d;
      r -= alpha * q;
      if (r.norm() <= tol_ * bnorm) {
        // Confirm with the true residual; restart from it if rounding drifted.
        r = b - s_ * x;
        if (r.norm() <= tol_ * bnorm) return {x, it};
        z = precondition(r);
        d = z;
        rz = r.dot(z);
        continue;
      }
      z = precondition(r);
      const double rz_next = r.dot(z);
      d = z + (rz_next / rz) * d;
      rz = rz_next;
    }
    throw MaxItersExceeded("PCG did not reach relative residual " + std::to_string(tol_) + " in " +
                           std::to_string(max_iters_) + " iterations");
  }

  bool preconditioned() const noexcept { return ic_.has_value(); }
  double shift() const noexcept { return shift_; }

 private:
  Vector precondition(const Vector& r) const {
    if (!ic_) return r;
    Vector y = ic_->triangularView<Eigen::Lower>().solve(r);
    return ic_->transpose().triangularView<Eigen::Upper>().solve(y);
  }

  SparseMatrix s_;
  std::optional<SparseMatrix> ic_;
  double tol_;
  double shift_ = 0.0;
  Index max_iters_ = 0;
};

/// Exact solver that diagonalizes the penalty in the Kronecker eigenbasis and
/// corrects for missing entries with a Woodbury capacitance matrix of size
/// |missing|. With A = I + K (K the penalty) and E the missing-entry
/// selector, S = A - E E^T and
///   S^{-1} = A^{-1} + A^{-1} E C^{-1} E^T A^{-1},  C = E^T A^{-1} K E.
class SpectralBackend {
 public:
  SpectralBackend(const SystemOperator& op, const SolverConfig& cfg) : basis_(op.basis_ptr()) {
    if (!basis_) throw InvalidArgument("spectral solver requires a Kronecker basis");
    const Vector hr = basis_->row_penalty_diagonal();
    const Vector hc = basis_->col_penalty_diagonal();
    const Vector d = op.params().row * hr + op.params().col * hc;
    lambda_ = (1.0 + d.array()).inverse().matrix();
    embed_ = basis_->embed(op.mask().missing_indices());
    const Index m = embed_.cols();
    if (m == 0) return;
    const Vector weight = (d.array() * lambda_.array()).sqrt().matrix();
    const Matrix scaled = weight.asDiagonal() * embed_;
    Matrix cap = Matrix::Zero(m, m);
    cap.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose());
    cap.triangularView<Eigen::StrictlyUpper>() = cap.transpose();
    llt_.compute(cap);
    if (llt_.info() != Eigen::Success)
      throw NotPositiveDefinite("capacitance matrix is not positive definite: some bicluster patch is unobserved");
    const auto& lmat = llt_.matrixLLT();
    for (Index k = 0; k < m; ++k) {
      const double pivot = lmat(k, k) * lmat(k, k);
      if (!(pivot > cfg.pivot_tol * cap(k, k)))
        throw NotPositiveDefinite("capacitance pivot " + std::to_string(k) + " is numerically zero");
    }
  }

  Vector solve(const Vector& b) const {
    Vector y = lambda_.cwiseProduct(basis_->to_spectral(b));
    if (embed_.cols() > 0) {
      const Vector t = llt_.solve(embed_.transpose() * y);
      y += lambda_.cwiseProduct(embed_ * t);
    }
    return basis_->from_spectral(y);
  }

  struct Traces {
    double inverse = 0.0;  // tr(S^-1)
    double row = 0.0;      // tr(S^-1 (I (x) L_r) S^-1)
    double col = 0.0;      // tr(S^-1 (L_c (x) I) S^-1)
  };

  /// In spectral coordinates S^-1 = Lambda + B B^T with B = Lambda E C^{-T/2}.
  Traces traces(bool with_penalty_terms) const {
    Traces tr;
    const Vector lam2 = lambda_.cwiseAbs2();
    tr.inverse = lambda_.sum();
    const Vector hr = basis_->row_penalty_diagonal();
    const Vector hc = basis_->col_penalty_diagonal();
    if (with_penalty_terms) {
      tr.row = hr.dot(lam2);
      tr.col = hc.dot(lam2);
    }
    const Index m = embed_.cols();
    if (m == 0) return tr;
    Matrix b = lambda_.asDiagonal() * embed_;
    llt_.matrixU().template solveInPlace<Eigen::OnTheRight>(b);
    // b now holds Lambda E L^{-T}; row norms give the diagonal of B B^T.
    const Vector row_sq = b.rowwise().squaredNorm();
    tr.inverse += row_sq.sum();
    if (!with_penalty_terms) return tr;
    tr.row += 2.0 * hr.cwiseProduct(lambda_).dot(row_sq);
    tr.col += 2.0 * hc.cwiseProduct(lambda_).dot(row_sq);
    const Matrix f0 = gram(b, Vector::Ones(b.rows()));
    tr.row += gram(b, hr).cwiseProduct(f0).sum();
    tr.col += gram(b, hc).cwiseProduct(f0).sum();
    return tr;
  }

 private:
  static Matrix gram(const Matrix& b, const Vector& h) {
    const Matrix scaled = h.cwiseSqrt().asDiagonal() * b;
    Matrix g = Matrix::Zero(b.cols(), b.cols());
    g.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose());
    g.triangularView<Eigen::StrictlyUpper>() = g.transpose();
    return g;
  }

  std::shared_ptr<const KroneckerBasis> basis_;
  Vector lambda_;
  Matrix embed_;
  Eigen::LLT<Matrix> llt_;
};

inline SolverMethod resolve_method(const SystemOperator& op, const SolverConfig& cfg) {
  if (cfg.method != SolverMethod::automatic) return cfg.method;
  const double m = static_cast<double>(op.mask().missing_count());
  if (op.basis() && m * m * static_cast<double>(op.size()) <= cfg.spectral_max_work) return SolverMethod::spectral;
  const double row_nnz = static_cast<double>(op.row_laplacian().nonZeros()) / static_cast<double>(op.rows()) +
                         static_cast<double>(op.col_laplacian().nonZeros()) / static_cast<double>(op.cols());
  return op.size() <= cfg.auto_threshold && row_nnz <= cfg.direct_max_row_nnz ? SolverMethod::direct
                                                                               : SolverMethod::pcg;
}

}  // namespace detail

/// Reusable factorization of S at fixed penalty parameters. Copies share the
/// backend and the audited solve counter; concurrent solves are safe.
class Factorization {
 public:
  using SpectralTraces = detail::SpectralBackend::Traces;

  Factorization(const SystemOperator& op, const SolverConfig& cfg) : op_(op), cfg_(cfg) {
    cfg_.validate();
    method_ = detail::resolve_method(op, cfg);
    switch (method_) {
      case SolverMethod::direct:
        backend_ = std::make_shared<Backend>(
            std::in_place_type<detail::SparseCholeskyBackend>, op.assemble(cfg.assembly_cap), cfg);
        break;
      case SolverMethod::pcg:
        backend_ = std::make_shared<Backend>(std::in_place_type<detail::PcgBackend>, op.assemble(cfg.assembly_cap), cfg);
        break;
      case SolverMethod::spectral:
        backend_ = std::make_shared<Backend>(std::in_place_type<detail::SpectralBackend>, op, cfg);
        break;
      case SolverMethod::automatic: break;
    }
  }

  const SystemOperator& op() const noexcept { return op_; }
  SolverMethod method() const noexcept { return method_; }
  const SolverConfig& config() const noexcept { return cfg_; }

  /// Number of right-hand sides solved against this handle (and its copies).
  Index solve_count() const noexcept { return counter_->load(); }

  SolveResult solve(const Vector& b) const {
    if (b.size() != op_.size()) throw DimensionMismatch("right-hand side length differs from system size");
    SolveResult res;
    res.report.method = method_;
    const Index prior = counter_->fetch_add(1);
    res.report.factorization_reused = prior > 0 && method_ != SolverMethod::pcg;
    std::visit(
        [&](const auto& be) {
          using T = std::decay_t<decltype(be)>;
          if constexpr (std::is_same_v<T, detail::PcgBackend>) {
            auto [x, iters] = be.solve(b);
            res.solution = std::move(x);
            res.report.iterations = iters;
          } else {
            res.solution = be.solve(b);
          }
        },
        *backend_);
    const double bnorm = b.norm();
    res.report.relative_residual = bnorm == 0.0 ? (op_.apply(res.solution)).norm() : (op_.apply(res.solution) - b).norm() / bnorm;
    return res;
  }

  std::vector<SolveResult> solve_many(std::span<const Vector> rhs) const {
    std::vector<SolveResult> out;
    out.reserve(rhs.size());
    for (const Vector& b : rhs) out.push_back(solve(b));
    return out;
  }

  /// Structured exact traces; available only on the spectral path.
  std::optional<SpectralTraces> spectral_traces(bool with_penalty_terms) const {
    if (const auto* be = std::get_if<detail::SpectralBackend>(backend_.get())) return be->traces(with_penalty_terms);
    return std::nullopt;
  }

  /// Cholesky factor and permutation of the direct path: P S P^T = L L^T.
  std::optional<std::pair<SparseMatrix, Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int>>> cholesky_factor()
      const {
    if (const auto* be = std::get_if<detail::SparseCholeskyBackend>(backend_.get()))
      return std::make_pair(be->factor(), be->permutation());
    return std::nullopt;
  }

  bool preconditioned() const {
    if (const auto* be = std::get_if<detail::PcgBackend>(backend_.get())) return be->preconditioned();
    return false;
  }

 private:
  using Backend = std::variant<detail::SparseCholeskyBackend, detail::PcgBackend, detail::SpectralBackend>;

  SystemOperator op_;
  SolverConfig cfg_;
  SolverMethod method_ = SolverMethod::direct;
  std::shared_ptr<const Backend> backend_;
  std::shared_ptr<std::atomic<Index>> counter_ = std::make_shared<std::atomic<Index>>(0);
};

inline Factorization factorize(const SystemOperator& op, const SolverConfig& cfg = {}) { return Factorization(op, cfg); }

inline SolveResult solve(const Factorization& f, const Vector& b) { return f.solve(b); }

inline SolveResult solve(const SystemOperator& op, const SolverConfig& cfg, const Vector& b) {
  return Factorization(op, cfg).solve(b);
}

inline std::vector<SolveResult> solve_many(const Factorization& f, std::span<const Vector> rhs) {
  return f.solve_many(rhs);
}

}  // namespace bmc
