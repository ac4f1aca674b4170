#pragma once

#include "bmc/common.hpp"
#include "bmc/errors.hpp"

#include <cmath>
#include <memory>
#include <utility>
#include <vector>

namespace bmc {

/// Observed index set over an n x p matrix, stored as column-major flags:
/// entry (i, j) has linear index i + n * j.
class ObservationMask {
 public:
  ObservationMask() = default;

  ObservationMask(Index rows, Index cols, bool observed = true)
      : rows_(rows), cols_(cols), flags_(static_cast<std::size_t>(rows * cols), observed ? 1 : 0) {
    if (rows < 1 || cols < 1) throw InvalidArgument("mask dimensions must be positive");
    reindex();
  }

  static ObservationMask from_flags(Index rows, Index cols, std::vector<unsigned char> flags) {
    if (static_cast<Index>(flags.size()) != rows * cols) throw DimensionMismatch("mask flag count mismatch");
    ObservationMask m(rows, cols, false);
    for (auto& f : flags) f = f ? 1 : 0;
    m.flags_ = std::move(flags);
    m.reindex();
    return m;
  }

  static ObservationMask from_indices(Index rows, Index cols, const std::vector<Index>& observed) {
    ObservationMask m(rows, cols, false);
    for (Index k : observed) {
      if (k < 0 || k >= rows * cols) throw InvalidArgument("observed index out of range");
      m.flags_[k] = 1;
    }
    m.reindex();
    return m;
  }

  Index rows() const noexcept { return rows_; }
  Index cols() const noexcept { return cols_; }
  Index size() const noexcept { return rows_ * cols_; }
  Index observed_count() const noexcept { return static_cast<Index>(observed_.size()); }
  Index missing_count() const noexcept { return static_cast<Index>(missing_.size()); }

  bool observed(Index k) const { return flags_[static_cast<std::size_t>(k)] != 0; }
  bool observed(Index i, Index j) const { return observed(i + rows_ * j); }

  const std::vector<Index>& observed_indices() const noexcept { return observed_; }
  const std::vector<Index>& missing_indices() const noexcept { return missing_; }
  const std::vector<unsigned char>& flags() const noexcept { return flags_; }

  Vector as_vector() const {
    Vector d(size());
    for (Index k = 0; k < size(); ++k) d[k] = flags_[k] ? 1.0 : 0.0;
    return d;
  }

  /// Copy with the listed linear indices removed from the observed set.
  ObservationMask without(const std::vector<Index>& dropped) const {
    ObservationMask m = *this;
    for (Index k : dropped) m.flags_[static_cast<std::size_t>(k)] = 0;
    m.reindex();
    return m;
  }

  friend bool operator==(const ObservationMask& a, const ObservationMask& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.flags_ == b.flags_;
  }

 private:
  void reindex() {
    observed_.clear();
    missing_.clear();
    for (Index k = 0; k < size(); ++k) (flags_[k] ? observed_ : missing_).push_back(k);
  }

  Index rows_ = 0;
  Index cols_ = 0;
  std::vector<unsigned char> flags_;
  std::vector<Index> observed_;
  std::vector<Index> missing_;
};

/// Data values plus mask. Values at unobserved positions are arbitrary.
struct ObservedMatrix {
  Matrix values;
  ObservationMask mask;

  ObservedMatrix() = default;
  ObservedMatrix(Matrix v, ObservationMask m) : values(std::move(v)), mask(std::move(m)) {
    if (values.rows() != mask.rows() || values.cols() != mask.cols())
      throw DimensionMismatch("values and mask dimensions differ");
    if (mask.observed_count() < 1) throw InvalidArgument("at least one entry must be observed");
  }

  Index rows() const noexcept { return values.rows(); }
  Index cols() const noexcept { return values.cols(); }
};

struct PenaltyParams {
  double row = 1.0;
  double col = 1.0;

  friend bool operator==(const PenaltyParams&, const PenaltyParams&) = default;
};

/// Zeroes unobserved coordinates of a vectorized n x p quantity.
inline Vector project(const ObservationMask& mask, const Vector& v) {
  if (v.size() != mask.size()) throw DimensionMismatch("project: vector length differs from mask size");
  Vector out = Vector::Zero(v.size());
  for (Index k : mask.observed_indices()) out[k] = v[k];
  return out;
}

/// Eigendecompositions of the row and column Laplacians. With
/// Q = V (x) U, Q^T (gamma_r I (x) L_r + gamma_c L_c (x) I) Q is diagonal with
/// entry gamma_r * row_values[a] + gamma_c * col_values[b] at a + n * b.
struct KroneckerBasis {
  Matrix row_vectors;
  Vector row_values;
  Matrix col_vectors;
  Vector col_values;

  static KroneckerBasis compute(const SparseMatrix& row_laplacian, const SparseMatrix& col_laplacian) {
    KroneckerBasis b;
    Eigen::SelfAdjointEigenSolver<Matrix> er{Matrix(row_laplacian)};
    Eigen::SelfAdjointEigenSolver<Matrix> ec{Matrix(col_laplacian)};
    if (er.info() != Eigen::Success || ec.info() != Eigen::Success)
      throw Error(ErrorCode::invalid_argument, "Laplacian eigendecomposition failed");
    b.row_vectors = er.eigenvectors();
    b.row_values = er.eigenvalues().cwiseMax(0.0);
    b.col_vectors = ec.eigenvectors();
    b.col_values = ec.eigenvalues().cwiseMax(0.0);
    return b;
  }

  Index rows() const noexcept { return row_vectors.rows(); }
  Index cols() const noexcept { return col_vectors.rows(); }

  Vector to_spectral(const Vector& v) const {
    const Matrix m = unvectorize(v, rows(), cols());
    return vectorize(row_vectors.transpose() * m * col_vectors);
  }

  Vector from_spectral(const Vector& v) const {
    const Matrix m = unvectorize(v, rows(), cols());
    return vectorize(row_vectors * m * col_vectors.transpose());
  }

  /// Spectral diagonal of the row penalty I (x) L_r.
  Vector row_penalty_diagonal() const {
    Vector h(rows() * cols());
    for (Index b = 0; b < cols(); ++b) h.segment(b * rows(), rows()) = row_values;
    return h;
  }

  Vector col_penalty_diagonal() const {
    Vector h(rows() * cols());
    for (Index b = 0; b < cols(); ++b) h.segment(b * rows(), rows()).setConstant(col_values[b]);
    return h;
  }

  /// Columns are the spectral coordinates Q^T e_k of the listed linear indices.
  Matrix embed(const std::vector<Index>& linear_indices) const {
    const Index n = rows();
    Matrix e(n * cols(), static_cast<Index>(linear_indices.size()));
    for (Index l = 0; l < e.cols(); ++l) {
      const Index i = linear_indices[l] % n;
      const Index j = linear_indices[l] / n;
      for (Index b = 0; b < cols(); ++b)
        e.col(l).segment(b * n, n) = row_vectors.row(i).transpose() * col_vectors(j, b);
    }
    return e;
  }
};

/// S = P_Omega + gamma_r (I (x) L_r) + gamma_c (L_c (x) I), applied without
/// forming Kronecker products: (I (x) L_r) vec(V) = vec(L_r V) and
/// (L_c (x) I) vec(V) = vec(V L_c).
class SystemOperator {
 public:
  SystemOperator(std::shared_ptr<const ObservationMask> mask, std::shared_ptr<const SparseMatrix> row_laplacian,
                 std::shared_ptr<const SparseMatrix> col_laplacian, PenaltyParams params,
                 std::shared_ptr<const KroneckerBasis> basis = nullptr)
      : mask_(std::move(mask)),
        lr_(std::move(row_laplacian)),
        lc_(std::move(col_laplacian)),
        params_(params),
        basis_(std::move(basis)) {
    if (!mask_ || !lr_ || !lc_) throw InvalidArgument("SystemOperator: null component");
    if (lr_->rows() != mask_->rows() || lr_->cols() != mask_->rows() || lc_->rows() != mask_->cols() ||
        lc_->cols() != mask_->cols())
      throw DimensionMismatch("Laplacian sizes do not match the mask");
    if (!(params_.row >= 0.0) || !(params_.col >= 0.0) || !std::isfinite(params_.row) || !std::isfinite(params_.col))
      throw InvalidArgument("penalty parameters must be finite and nonnegative");
    if (basis_ && (basis_->rows() != rows() || basis_->cols() != cols()))
      throw DimensionMismatch("Kronecker basis does not match the mask");
  }

  Index rows() const noexcept { return mask_->rows(); }
  Index cols() const noexcept { return mask_->cols(); }
  Index size() const noexcept { return mask_->size(); }

  const ObservationMask& mask() const noexcept { return *mask_; }
  const std::shared_ptr<const ObservationMask>& mask_ptr() const noexcept { return mask_; }
  const SparseMatrix& row_laplacian() const noexcept { return *lr_; }
  const SparseMatrix& col_laplacian() const noexcept { return *lc_; }
  const std::shared_ptr<const SparseMatrix>& row_laplacian_ptr() const noexcept { return lr_; }
  const std::shared_ptr<const SparseMatrix>& col_laplacian_ptr() const noexcept { return lc_; }
  const PenaltyParams& params() const noexcept { return params_; }
  const KroneckerBasis* basis() const noexcept { return basis_.get(); }
  const std::shared_ptr<const KroneckerBasis>& basis_ptr() const noexcept { return basis_; }

  SystemOperator with_params(PenaltyParams params) const {
    return SystemOperator(mask_, lr_, lc_, params, basis_);
  }

  /// (I (x) L_r) v
  Vector apply_row_penalty(const Vector& v) const {
    check_length(v);
    const Eigen::Map<const Matrix> m(v.data(), rows(), cols());
    Matrix out = *lr_ * m;
    return vectorize(out);
  }

  /// (L_c (x) I) v
  Vector apply_col_penalty(const Vector& v) const {
    check_length(v);
    const Eigen::Map<const Matrix> m(v.data(), rows(), cols());
    Matrix out = m * *lc_;
    return vectorize(out);
  }

  Vector apply(const Vector& v) const {
    check_length(v);
    Vector out = project(*mask_, v);
    if (params_.row != 0.0) out += params_.row * apply_row_penalty(v);
    if (params_.col != 0.0) out += params_.col * apply_col_penalty(v);
    return out;
  }

  /// Sparse assembly of S, entries in sorted (row, col) order.
  SparseMatrix assemble(Index cap = 1'000'000) const {
    if (size() > cap) throw CapExceeded("system has " + std::to_string(size()) + " unknowns, cap is " + std::to_string(cap));
    const Index n = rows();
    const Index p = cols();
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(size() + p * lr_->nonZeros() + n * lc_->nonZeros()));
    for (Index k : mask_->observed_indices()) t.emplace_back(k, k, 1.0);
    if (params_.row != 0.0) {
      for (Index j = 0; j < p; ++j)
        for (Index c = 0; c < lr_->outerSize(); ++c)
          for (SparseMatrix::InnerIterator it(*lr_, c); it; ++it)
            t.emplace_back(it.row() + n * j, c + n * j, params_.row * it.value());
    }
    if (params_.col != 0.0) {
      for (Index c = 0; c < lc_->outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(*lc_, c); it; ++it)
          for (Index i = 0; i < n; ++i) t.emplace_back(i + n * it.row(), i + n * c, params_.col * it.value());
    }
    SparseMatrix s(size(), size());
    s.setFromTriplets(t.begin(), t.end());
    s.makeCompressed();
    return s;
  }

 private:
  void check_length(const Vector& v) const {
    if (v.size() != size()) throw DimensionMismatch("operator expects a vector of length " + std::to_string(size()));
  }

  std::shared_ptr<const ObservationMask> mask_;
  std::shared_ptr<const SparseMatrix> lr_;
  std::shared_ptr<const SparseMatrix> lc_;
  PenaltyParams params_;
  std::shared_ptr<const KroneckerBasis> basis_;
};

}  // namespace bmc
