#pragma once

#include "bmc/bmc.hpp"
#include "oracles.hpp"

#include <random>
#include <vector>

namespace testing_support {

struct Instance {
  oracle::Mat x;
  std::vector<unsigned char> mask;
  oracle::Mat wr;
  oracle::Mat wc;

  bmc::ObservedMatrix observed() const {
    return bmc::ObservedMatrix(x, bmc::ObservationMask::from_flags(x.rows(), x.cols(), mask));
  }
  bmc::BmcProblem problem(bmc::ProblemOptions opts = {}) const {
    return bmc::BmcProblem(observed(), bmc::WeightedGraph::from_dense(wr), bmc::WeightedGraph::from_dense(wc), opts);
  }
};

/// Connected random graphs (a path backbone plus random extra edges) and a
/// mask observing roughly `observed` of the cells.
inline Instance random_instance(Eigen::Index n, Eigen::Index p, double observed, std::uint64_t seed,
                                double density = 0.4) {
  std::mt19937_64 rng(seed);
  Instance in;
  in.wr = oracle::random_weights(n, density, rng);
  in.wc = oracle::random_weights(p, density, rng);
  for (Eigen::Index i = 0; i + 1 < n; ++i)
    if (in.wr(i, i + 1) == 0.0) in.wr(i, i + 1) = in.wr(i + 1, i) = 0.5;
  for (Eigen::Index j = 0; j + 1 < p; ++j)
    if (in.wc(j, j + 1) == 0.0) in.wc(j, j + 1) = in.wc(j + 1, j) = 0.5;
  in.x = oracle::random_matrix(n, p, rng);
  in.mask = oracle::random_mask(n * p, observed, rng);
  return in;
}

/// Checkerboard with two row blocks and two column blocks joined
/// by nothing, values mu on each patch.
inline Instance checkerboard(Eigen::Index n, Eigen::Index p, double missing, std::uint64_t seed, double noise = 0.0) {
  std::mt19937_64 rng(seed);
  Instance in;
  in.wr = oracle::two_block_weights(n, n / 2, 1.0, 0.0);
  in.wc = oracle::two_block_weights(p, p / 2, 1.0, 0.0);
  const double mu[2][2] = {{10.0, -25.0}, {25.0, -10.0}};
  std::normal_distribution<double> g(0.0, 1.0);
  in.x.resize(n, p);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index i = 0; i < n; ++i) in.x(i, j) = mu[i >= n / 2][j >= p / 2] + noise * g(rng);
  in.mask.assign(static_cast<std::size_t>(n * p), 1);
  std::vector<std::size_t> order(in.mask.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto drop = static_cast<std::size_t>(std::ceil(missing * static_cast<double>(order.size())));
  for (std::size_t k = 0; k < drop; ++k) in.mask[order[k]] = 0;
  return in;
}

inline bmc::SolverConfig with_method(bmc::SolverMethod m) {
  bmc::SolverConfig c;
  c.method = m;
  return c;
}

}  // namespace testing_support
