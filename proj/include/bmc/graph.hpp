#pragma once

#include "bmc/common.hpp"
#include "bmc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>
#include <utility>
#include <vector>

namespace bmc {

struct Edge {
  Index head;  // smaller endpoint
  Index tail;
  double weight;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Symmetric nonnegative similarity graph. Each unordered pair is stored
/// once with head < tail; zero weights are dropped and self-loops rejected.
/// Edges are kept sorted by (head, tail) so serialization is reproducible.
class WeightedGraph {
 public:
  WeightedGraph() = default;
  explicit WeightedGraph(Index vertex_count) : n_(vertex_count) {
    if (n_ < 0) throw InvalidArgument("vertex count must be nonnegative");
  }

  WeightedGraph(Index vertex_count, std::vector<Edge> edges) : WeightedGraph(vertex_count) {
    edges_.reserve(edges.size());
    for (Edge e : edges) {
      if (e.head == e.tail) throw InvalidArgument("self-loop at vertex " + std::to_string(e.head));
      if (e.head < 0 || e.tail < 0 || e.head >= n_ || e.tail >= n_)
        throw InvalidArgument("edge endpoint out of range");
      if (!(e.weight >= 0.0) || !std::isfinite(e.weight))
        throw InvalidArgument("edge weights must be finite and nonnegative");
      if (e.head > e.tail) std::swap(e.head, e.tail);
      if (e.weight == 0.0) continue;
      edges_.push_back(e);
    }
    std::sort(edges_.begin(), edges_.end(),
              [](const Edge& a, const Edge& b) { return std::pair(a.head, a.tail) < std::pair(b.head, b.tail); });
    for (std::size_t k = 1; k < edges_.size(); ++k) {
      if (edges_[k].head == edges_[k - 1].head && edges_[k].tail == edges_[k - 1].tail) {
        std::ostringstream os;
        os << "duplicate edge (" << edges_[k].head << ", " << edges_[k].tail << ")";
        throw InvalidArgument(os.str());
      }
    }
  }

  /// Builds a graph from a dense symmetric weight matrix; the diagonal is ignored.
  static WeightedGraph from_dense(const Matrix& w, double symmetry_tol = 0.0) {
    if (w.rows() != w.cols()) throw DimensionMismatch("weight matrix must be square");
    std::vector<Edge> edges;
    for (Index j = 0; j < w.cols(); ++j) {
      for (Index i = 0; i < j; ++i) {
        if (std::abs(w(i, j) - w(j, i)) > symmetry_tol) throw InvalidArgument("weight matrix is not symmetric");
        if (w(i, j) != 0.0) edges.push_back({i, j, w(i, j)});
      }
    }
    return WeightedGraph(w.rows(), std::move(edges));
  }

  Index vertex_count() const noexcept { return n_; }
  Index edge_count() const noexcept { return static_cast<Index>(edges_.size()); }
  const std::vector<Edge>& edges() const noexcept { return edges_; }

  std::vector<std::vector<std::pair<Index, double>>> adjacency() const {
    std::vector<std::vector<std::pair<Index, double>>> adj(static_cast<std::size_t>(n_));
    for (const Edge& e : edges_) {
      adj[e.head].emplace_back(e.tail, e.weight);
      adj[e.tail].emplace_back(e.head, e.weight);
    }
    return adj;
  }

  Matrix dense_weights() const {
    Matrix w = Matrix::Zero(n_, n_);
    for (const Edge& e : edges_) w(e.head, e.tail) = w(e.tail, e.head) = e.weight;
    return w;
  }

  friend bool operator==(const WeightedGraph&, const WeightedGraph&) = default;

 private:
  Index n_ = 0;
  std::vector<Edge> edges_;
};

/// Degree-minus-adjacency Laplacian, assembled in sorted (row, col) order.
inline SparseMatrix build_laplacian(const WeightedGraph& g) {
  const Index n = g.vertex_count();
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(4 * g.edge_count()));
  Vector degree = Vector::Zero(n);
  for (const Edge& e : g.edges()) {
    degree[e.head] += e.weight;
    degree[e.tail] += e.weight;
    t.emplace_back(e.head, e.tail, -e.weight);
    t.emplace_back(e.tail, e.head, -e.weight);
  }
  for (Index i = 0; i < n; ++i)
    if (degree[i] != 0.0) t.emplace_back(i, i, degree[i]);
  SparseMatrix l(n, n);
  l.setFromTriplets(t.begin(), t.end());
  l.makeCompressed();
  return l;
}

/// Edge-incidence matrix: one row per edge, +sqrt(w) at the head and
/// -sqrt(w) at the tail, so that Phi^T Phi is the Laplacian.
inline SparseMatrix build_incidence(const WeightedGraph& g) {
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(2 * g.edge_count()));
  Index row = 0;
  for (const Edge& e : g.edges()) {
    const double s = std::sqrt(e.weight);
    t.emplace_back(row, e.head, s);
    t.emplace_back(row, e.tail, -s);
    ++row;
  }
  SparseMatrix phi(g.edge_count(), g.vertex_count());
  phi.setFromTriplets(t.begin(), t.end());
  phi.makeCompressed();
  return phi;
}

struct ComponentPartition {
  Index component_count = 0;
  std::vector<Index> labels;                 // vertex -> component id
  std::vector<std::vector<Index>> supports;  // component id -> sorted vertices

  Index vertex_count() const noexcept { return static_cast<Index>(labels.size()); }

  Vector indicator(Index component) const {
    Vector chi = Vector::Zero(vertex_count());
    for (Index v : supports.at(static_cast<std::size_t>(component))) chi[v] = 1.0;
    return chi;
  }
};

/// Breadth-first labeling. Component ids follow the smallest vertex they contain.
inline ComponentPartition connected_components(const WeightedGraph& g) {
  const Index n = g.vertex_count();
  const auto adj = g.adjacency();
  ComponentPartition part;
  part.labels.assign(static_cast<std::size_t>(n), -1);
  std::queue<Index> frontier;
  for (Index start = 0; start < n; ++start) {
    if (part.labels[start] >= 0) continue;
    const Index id = part.component_count++;
    part.supports.emplace_back();
    part.labels[start] = id;
    frontier.push(start);
    while (!frontier.empty()) {
      const Index v = frontier.front();
      frontier.pop();
      part.supports.back().push_back(v);
      for (const auto& [u, w] : adj[v]) {
        if (w > 0.0 && part.labels[u] < 0) {
          part.labels[u] = id;
          frontier.push(u);
        }
      }
    }
    std::sort(part.supports.back().begin(), part.supports.back().end());
  }
  return part;
}

/// Keeps edge (i, j) when j is among the k heaviest neighbors of i or i is
/// among the k heaviest neighbors of j. Ties at the k-th rank go to the
/// lower vertex index.
inline WeightedGraph knn_sparsify(const WeightedGraph& g, Index k) {
  if (k < 1) throw InvalidArgument("knn_sparsify requires k >= 1");
  auto adj = g.adjacency();
  std::vector<std::pair<Index, Index>> keep;
  for (Index i = 0; i < g.vertex_count(); ++i) {
    auto& nbrs = adj[i];
    std::sort(nbrs.begin(), nbrs.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    const auto take = std::min<std::size_t>(nbrs.size(), static_cast<std::size_t>(k));
    for (std::size_t r = 0; r < take; ++r) keep.emplace_back(std::min(i, nbrs[r].first), std::max(i, nbrs[r].first));
  }
  std::sort(keep.begin(), keep.end());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());

  std::vector<Edge> edges;
  edges.reserve(keep.size());
  auto it = keep.begin();
  for (const Edge& e : g.edges()) {
    while (it != keep.end() && *it < std::pair(e.head, e.tail)) ++it;
    if (it != keep.end() && *it == std::pair(e.head, e.tail)) edges.push_back(e);
  }
  return WeightedGraph(g.vertex_count(), std::move(edges));
}

/// Dense exp(Pearson correlation) weights between the rows of `features`.
inline Matrix correlation_weights(const Matrix& features) {
  const Index n = features.rows();
  const Index d = features.cols();
  if (d < 2) throw InvalidArgument("need at least two feature columns to compute correlations");
  Matrix centered = features.colwise() - features.rowwise().mean();
  Vector norms = centered.rowwise().norm();
  for (Index i = 0; i < n; ++i) {
    if (!(norms[i] > 0.0)) throw InvalidArgument("feature row " + std::to_string(i) + " has zero variance");
    centered.row(i) /= norms[i];
  }
  Matrix rho = centered * centered.transpose();
  Matrix w = rho.array().max(-1.0).min(1.0).exp().matrix();
  w.diagonal().setZero();
  return w;
}

inline WeightedGraph weights_from_features(const Matrix& features, Index k) {
  return knn_sparsify(WeightedGraph::from_dense(correlation_weights(features), 1e-12), k);
}

}  // namespace bmc
