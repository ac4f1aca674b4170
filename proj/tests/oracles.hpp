#pragma once

// Reference computations for the test suite. Everything here works on dense
// matrices with textbook formulas and shares no code with the library.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace oracle {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline Mat laplacian(const Mat& w) {
  Mat l = -w;
  l.diagonal().setZero();
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    double deg = 0.0;
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      if (j != i) deg += w(i, j);
    l(i, i) = deg;
  }
  return l;
}

inline Mat kron(const Mat& a, const Mat& b) {
  Mat k(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) k.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return k;
}

/// S = diag(mask) + g_r (I_p kron L_r) + g_c (L_c kron I_n), column-major vec.
inline Mat system_matrix(const std::vector<unsigned char>& mask, const Mat& wr, const Mat& wc, double gr, double gc) {
  const auto n = wr.rows(), p = wc.rows();
  Mat s = gr * kron(Mat::Identity(p, p), laplacian(wr)) + gc * kron(laplacian(wc), Mat::Identity(n, n));
  for (Eigen::Index k = 0; k < n * p; ++k) s(k, k) += mask[static_cast<std::size_t>(k)] ? 1.0 : 0.0;
  return s;
}

inline Vec masked(const std::vector<unsigned char>& mask, const Vec& v) {
  Vec out = v;
  for (Eigen::Index k = 0; k < v.size(); ++k)
    if (!mask[static_cast<std::size_t>(k)]) out[k] = 0.0;
  return out;
}

inline Vec vec(const Mat& m) {
  Vec v(m.size());
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) v[i + m.rows() * j] = m(i, j);
  return v;
}

/// Component labels from the Warshall transitive closure of w > 0.
inline std::vector<int> closure_labels(const Mat& w) {
  const auto n = w.rows();
  std::vector<std::vector<char>> reach(static_cast<std::size_t>(n), std::vector<char>(static_cast<std::size_t>(n), 0));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) reach[i][j] = (i == j) || w(i, j) > 0.0;
  for (Eigen::Index k = 0; k < n; ++k)
    for (Eigen::Index i = 0; i < n; ++i)
      if (reach[i][k])
        for (Eigen::Index j = 0; j < n; ++j)
          if (reach[k][j]) reach[i][j] = 1;
  std::vector<int> label(static_cast<std::size_t>(n), -1);
  int next = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (label[i] >= 0) continue;
    for (Eigen::Index j = 0; j < n; ++j)
      if (reach[i][j]) label[j] = next;
    ++next;
  }
  return label;
}

inline int count_labels(const std::vector<int>& l) { return l.empty() ? 0 : *std::max_element(l.begin(), l.end()) + 1; }

/// Enumerates every (row component, column component) pair and scans all
/// of its cells for an observation.
inline bool assumption_brute_force(const std::vector<unsigned char>& mask, const Mat& wr, const Mat& wc) {
  const auto lr = closure_labels(wr);
  const auto lc = closure_labels(wc);
  const auto n = wr.rows(), p = wc.rows();
  for (int a = 0; a < count_labels(lr); ++a)
    for (int b = 0; b < count_labels(lc); ++b) {
      bool seen = false;
      for (Eigen::Index i = 0; i < n && !seen; ++i)
        for (Eigen::Index j = 0; j < p && !seen; ++j)
          if (lr[i] == a && lc[j] == b && mask[static_cast<std::size_t>(i + n * j)]) seen = true;
      if (!seen) return false;
    }
  return true;
}

/// Patch-mean matrix: each cell gets the mean of the observed values in its patch.
inline Mat patch_average(const Mat& x, const std::vector<unsigned char>& mask, const Mat& wr, const Mat& wc) {
  const auto lr = closure_labels(wr);
  const auto lc = closure_labels(wc);
  const auto n = x.rows(), p = x.cols();
  Mat z(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < p; ++j) {
      long double sum = 0.0L;
      long count = 0;
      for (Eigen::Index a = 0; a < n; ++a)
        for (Eigen::Index b = 0; b < p; ++b)
          if (lr[a] == lr[i] && lc[b] == lc[j] && mask[static_cast<std::size_t>(a + n * b)]) {
            sum += x(a, b);
            ++count;
          }
      z(i, j) = static_cast<double>(sum / count);
    }
  return z;
}

inline double min_eigenvalue(const Mat& s) { return Eigen::SelfAdjointEigenSolver<Mat>(s).eigenvalues().minCoeff(); }

struct Fit {
  Vec z;
  double rss = 0.0;
  double df = 0.0;
  double bic = 0.0;
};

/// Dense BIC via a full-pivot LU inverse of S.
inline Fit dense_fit(const Mat& x, const std::vector<unsigned char>& mask, const Mat& wr, const Mat& wc, double gr,
                     double gc, double penalty_per_df = -1.0) {
  const Mat s = system_matrix(mask, wr, wc, gr, gc);
  const Mat inv = s.fullPivLu().inverse();
  const Vec px = masked(mask, vec(x));
  Fit f;
  f.z = inv * px;
  const Vec r = masked(mask, f.z - vec(x));
  f.rss = r.squaredNorm();
  f.df = inv.trace();
  double observed = 0.0;
  for (auto m : mask) observed += m ? 1.0 : 0.0;
  const double c = penalty_per_df < 0.0 ? std::log(observed) : penalty_per_df;
  f.bic = observed * std::log(f.rss) + c * f.df;
  return f;
}

/// Pearson correlation by the two-pass textbook formula.
inline double pearson(const Vec& a, const Vec& b) {
  const double ma = a.sum() / static_cast<double>(a.size());
  const double mb = b.sum() / static_cast<double>(b.size());
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

/// Random symmetric weights; each pair is an edge with probability `density`.
inline Mat random_weights(Eigen::Index n, double density, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Mat w = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      if (u(rng) < density) w(i, j) = w(j, i) = 0.1 + u(rng);
  return w;
}

inline std::vector<unsigned char> random_mask(Eigen::Index size, double observed_prob, std::mt19937_64& rng) {
  std::bernoulli_distribution b(observed_prob);
  std::vector<unsigned char> m(static_cast<std::size_t>(size));
  for (auto& f : m) f = b(rng) ? 1 : 0;
  if (std::find(m.begin(), m.end(), 1) == m.end()) m[0] = 1;
  return m;
}

inline Mat random_matrix(Eigen::Index n, Eigen::Index p, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Mat m(n, p);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index i = 0; i < n; ++i) m(i, j) = g(rng);
  return m;
}

/// Two-block weights: `within` inside each block, `cross` between blocks.
inline Mat two_block_weights(Eigen::Index n, Eigen::Index first, double within, double cross) {
  Mat w(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) w(i, j) = i == j ? 0.0 : ((i < first) == (j < first) ? within : cross);
  return w;
}

}  // namespace oracle
