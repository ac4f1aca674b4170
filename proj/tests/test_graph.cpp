#include "bmc/graph.hpp"
#include "bmc/simulate.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <map>
#include <set>

using namespace bmc;

TEST(WeightedGraph, NormalizesAndRejectsBadEdges) {
  const WeightedGraph g(4, {{2, 1, 0.5}, {0, 3, 0.0}, {0, 1, 2.0}});
  ASSERT_EQ(g.edge_count(), 2);
  EXPECT_EQ(g.edges()[0], (Edge{0, 1, 2.0}));
  EXPECT_EQ(g.edges()[1], (Edge{1, 2, 0.5}));
  EXPECT_THROW(WeightedGraph(3, {{1, 1, 1.0}}), InvalidArgument);
  EXPECT_THROW(WeightedGraph(3, {{0, 3, 1.0}}), InvalidArgument);
  EXPECT_THROW(WeightedGraph(3, {{0, 1, -1.0}}), InvalidArgument);
  EXPECT_THROW(WeightedGraph(3, {{0, 1, 1.0}, {1, 0, 2.0}}), InvalidArgument);
}

TEST(WeightedGraph, FromDenseRequiresSymmetry) {
  Matrix w = Matrix::Zero(3, 3);
  w(0, 1) = 1.0;
  EXPECT_THROW(WeightedGraph::from_dense(w), InvalidArgument);
  w(1, 0) = 1.0;
  EXPECT_EQ(WeightedGraph::from_dense(w).edge_count(), 1);
}

TEST(Laplacian, SingleEdge) {
  const Matrix l = Matrix(build_laplacian(WeightedGraph(2, {{0, 1, 3.0}})));
  Matrix expected(2, 2);
  expected << 3, -3, -3, 3;
  EXPECT_EQ(l, expected);
}

TEST(Laplacian, EmptyGraphIsZero) {
  const SparseMatrix l = build_laplacian(WeightedGraph(5));
  EXPECT_EQ(l.rows(), 5);
  EXPECT_EQ(Matrix(l).norm(), 0.0);
}

TEST(Laplacian, BlockWeightsDiagonal) {
  const Matrix l = Matrix(build_laplacian(block_weights({25, 25}, 1.0, 0.001)));
  for (Index i = 0; i < 50; ++i) EXPECT_NEAR(l(i, i), 24.025, 1e-12);
  EXPECT_NEAR(l.rowwise().sum().cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(Laplacian, MatchesDenseOracle) {
  std::mt19937_64 rng(3);
  const oracle::Mat w = oracle::random_weights(12, 0.5, rng);
  const Matrix l = Matrix(build_laplacian(WeightedGraph::from_dense(w)));
  EXPECT_LT((l - oracle::laplacian(w)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Incidence, SingleEdgeRow) {
  const Matrix phi = Matrix(build_incidence(WeightedGraph(2, {{0, 1, 4.0}})));
  ASSERT_EQ(phi.rows(), 1);
  EXPECT_DOUBLE_EQ(phi(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(phi(0, 1), -2.0);
}

TEST(Incidence, EmptyGraph) {
  const SparseMatrix phi = build_incidence(WeightedGraph(4));
  EXPECT_EQ(phi.rows(), 0);
  EXPECT_EQ(phi.cols(), 4);
}

TEST(Incidence, GramMatchesLaplacian) {
  std::mt19937_64 rng(11);
  const oracle::Mat w = oracle::random_weights(10, 0.4, rng);
  const Matrix phi = Matrix(build_incidence(WeightedGraph::from_dense(w)));
  EXPECT_LT((phi.transpose() * phi - oracle::laplacian(w)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Components, TwoCliques) {
  std::vector<Edge> e;
  for (Index a : {0, 3})
    for (Index i = a; i < a + 3; ++i)
      for (Index j = i + 1; j < a + 3; ++j) e.push_back({i, j, 1.0});
  const auto part = connected_components(WeightedGraph(6, e));
  EXPECT_EQ(part.component_count, 2);
  EXPECT_EQ(part.supports[0], (std::vector<Index>{0, 1, 2}));
  EXPECT_EQ(part.supports[1], (std::vector<Index>{3, 4, 5}));
  EXPECT_EQ(part.indicator(1), (Vector(6) << 0, 0, 0, 1, 1, 1).finished());
}

TEST(Components, CompleteGraphHasOne) {
  EXPECT_EQ(connected_components(block_weights({4}, 1.0, 0.0)).component_count, 1);
}

TEST(Components, MatchWarshallClosure) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const oracle::Mat w = oracle::random_weights(20, 0.08, rng);
    const auto part = connected_components(WeightedGraph::from_dense(w));
    const auto lab = oracle::closure_labels(w);
    ASSERT_EQ(part.component_count, oracle::count_labels(lab));
    for (Index i = 0; i < 20; ++i)
      for (Index j = 0; j < 20; ++j) EXPECT_EQ(part.labels[i] == part.labels[j], lab[i] == lab[j]);
  }
}

TEST(Knn, TriangleUnchangedAtK2) {
  const WeightedGraph g(3, {{0, 1, 1.0}, {0, 2, 2.0}, {1, 2, 3.0}});
  EXPECT_EQ(knn_sparsify(g, 2), g);
}

TEST(Knn, LargeKIsIdentity) {
  std::mt19937_64 rng(5);
  const WeightedGraph g = WeightedGraph::from_dense(oracle::random_weights(9, 0.7, rng));
  EXPECT_EQ(knn_sparsify(g, 8), g);
  EXPECT_EQ(knn_sparsify(g, 100), g);
  EXPECT_THROW(knn_sparsify(g, 0), InvalidArgument);
}

TEST(Knn, MatchesSortAllPairsOracle) {
  std::mt19937_64 rng(8);
  const oracle::Mat w = oracle::random_weights(20, 1.0, rng);
  const Index k = 5;
  std::set<std::pair<Index, Index>> keep;
  for (Index i = 0; i < 20; ++i) {
    std::vector<std::pair<double, Index>> all;
    for (Index j = 0; j < 20; ++j)
      if (j != i && w(i, j) > 0) all.push_back({-w(i, j), j});
    std::sort(all.begin(), all.end());
    for (Index r = 0; r < k && r < static_cast<Index>(all.size()); ++r)
      keep.insert({std::min(i, all[r].second), std::max(i, all[r].second)});
  }
  const WeightedGraph s = knn_sparsify(WeightedGraph::from_dense(w), k);
  ASSERT_EQ(s.edge_count(), static_cast<Index>(keep.size()));
  for (const Edge& e : s.edges()) {
    EXPECT_TRUE(keep.count({e.head, e.tail}));
    EXPECT_EQ(e.weight, w(e.head, e.tail));
  }
}

TEST(Knn, TiesGoToLowerIndex) {
  // Vertex 0 sees three equally heavy neighbours; with k = 1 it keeps vertex 1.
  const WeightedGraph g(4, {{0, 1, 1.0}, {0, 2, 1.0}, {0, 3, 1.0}});
  const WeightedGraph s = knn_sparsify(g, 1);
  // Vertices 2 and 3 each keep 0 as their only neighbour, so the union is everything.
  EXPECT_EQ(s, g);
  const WeightedGraph h(4, {{0, 1, 1.0}, {0, 2, 1.0}, {2, 3, 5.0}, {1, 3, 5.0}});
  const WeightedGraph t = knn_sparsify(h, 1);
  std::set<std::pair<Index, Index>> got;
  for (const Edge& e : t.edges()) got.insert({e.head, e.tail});
  EXPECT_EQ(got, (std::set<std::pair<Index, Index>>{{0, 1}, {1, 3}, {2, 3}}));
}

TEST(FeatureWeights, IdenticalAndAnticorrelatedRows) {
  Matrix f(3, 4);
  f << 1, 2, 3, 5, 1, 2, 3, 5, -1, -2, -3, -5;
  const Matrix w = correlation_weights(f);
  EXPECT_NEAR(w(0, 1), std::exp(1.0), 1e-12);
  EXPECT_NEAR(w(0, 2), std::exp(-1.0), 1e-12);
  EXPECT_NEAR(w(0, 1), 2.71828, 1e-5);
  EXPECT_NEAR(w(0, 2), 0.36788, 1e-5);
  EXPECT_EQ(w(1, 1), 0.0);
}

TEST(FeatureWeights, MatchesPearsonOracle) {
  std::mt19937_64 rng(21);
  const oracle::Mat f = oracle::random_matrix(10, 4, rng);
  const Matrix w = correlation_weights(f);
  for (Index i = 0; i < 10; ++i)
    for (Index j = 0; j < 10; ++j)
      if (i != j) EXPECT_NEAR(w(i, j), std::exp(oracle::pearson(f.row(i).transpose(), f.row(j).transpose())), 1e-12);
}

TEST(FeatureWeights, ZeroVarianceRowNamed) {
  Matrix f(3, 3);
  f << 1, 2, 3, 4, 4, 4, 0, 1, 0;
  try {
    correlation_weights(f);
    FAIL() << "expected an error";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos);
  }
}

TEST(FeatureWeights, KnnGraphIsSparsifiedDense) {
  std::mt19937_64 rng(4);
  const oracle::Mat f = oracle::random_matrix(15, 6, rng);
  const WeightedGraph g = weights_from_features(f, 3);
  EXPECT_EQ(g, knn_sparsify(WeightedGraph::from_dense(correlation_weights(f), 1e-12), 3));
  for (Index i = 0; i < 15; ++i) EXPECT_GE(g.adjacency()[i].size(), 3u);
}
