#include "bmc/common.hpp"
#include "bmc/lbfgs.hpp"
#include "bmc/parallel.hpp"
#include "bmc/rng.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <set>
#include <stdexcept>

using namespace bmc;

namespace {

auto no_op = [](const Vector&, const LbfgsPoint&, Index) {};

LbfgsPoint rosenbrock(const Vector& x) {
  const double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
  LbfgsPoint p;
  p.value = a * a + 100.0 * b * b;
  p.gradient = Vector(2);
  p.gradient << -2.0 * a - 400.0 * x[0] * b, 200.0 * b;
  return p;
}

}  // namespace

TEST(Lbfgs, QuadraticMinimum) {
  Matrix a(3, 3);
  a << 4, 1, 0, 1, 3, 0.5, 0, 0.5, 2;
  const Vector b = (Vector(3) << 1, -2, 0.5).finished();
  auto eval = [&](const Vector& x) -> std::optional<LbfgsPoint> {
    return LbfgsPoint{0.5 * x.dot(a * x) - b.dot(x), a * x - b, false};
  };
  LbfgsOptions opts;
  opts.grad_tol = 1e-10;
  const auto r = lbfgs_minimize(eval, Vector::Zero(3), opts, no_op);
  EXPECT_EQ(r.status, LbfgsStatus::converged);
  EXPECT_LT((r.x - a.ldlt().solve(b)).norm(), 1e-9);
}

TEST(Lbfgs, Rosenbrock) {
  LbfgsOptions opts;
  opts.grad_tol = 1e-8;
  opts.max_iters = 500;
  Index accepted = 0;
  double last = std::numeric_limits<double>::infinity();
  bool monotone = true;
  const auto r = lbfgs_minimize([](const Vector& x) { return std::optional(rosenbrock(x)); },
                                (Vector(2) << -1.2, 1.0).finished(), opts,
                                [&](const Vector&, const LbfgsPoint& p, Index) {
                                  monotone = monotone && p.value <= last;
                                  last = p.value;
                                  ++accepted;
                                });
  EXPECT_EQ(r.status, LbfgsStatus::converged);
  EXPECT_NEAR(r.x[0], 1.0, 1e-6);
  EXPECT_NEAR(r.x[1], 1.0, 1e-6);
  EXPECT_TRUE(monotone);
  EXPECT_EQ(accepted, r.iterations);
  EXPECT_GE(r.evaluations, r.iterations);
}

TEST(Lbfgs, IterationCapAndInfeasibleRegion) {
  LbfgsOptions opts;
  opts.max_iters = 3;
  // Infeasible for x > 0.5; the minimum of (x - 1)^2 lies beyond the wall.
  auto eval = [](const Vector& x) -> std::optional<LbfgsPoint> {
    if (x[0] > 0.5) return std::nullopt;
    return LbfgsPoint{(x[0] - 1) * (x[0] - 1), Vector::Constant(1, 2 * (x[0] - 1)), false};
  };
  const auto r = lbfgs_minimize(eval, Vector::Zero(1), opts, no_op);
  EXPECT_LE(r.x[0], 0.5);
  EXPECT_NE(r.status, LbfgsStatus::converged);
  EXPECT_LE(r.iterations, 3);
}

TEST(Lbfgs, StartMustBeFeasible) {
  auto eval = [](const Vector&) -> std::optional<LbfgsPoint> { return std::nullopt; };
  EXPECT_THROW(lbfgs_minimize(eval, Vector::Zero(1), {}, no_op), InvalidArgument);
}

TEST(Lbfgs, TerminalPointStops) {
  auto eval = [](const Vector& x) -> std::optional<LbfgsPoint> {
    return LbfgsPoint{x.squaredNorm(), 2 * x, x[0] < 0.5};
  };
  const auto r = lbfgs_minimize(eval, Vector::Constant(1, 3.0), {}, no_op);
  EXPECT_EQ(r.status, LbfgsStatus::terminal_point);
}

TEST(Lbfgs, StepIsCapped) {
  LbfgsOptions opts;
  opts.max_step = 0.25;
  std::vector<double> xs;
  auto eval = [](const Vector& x) -> std::optional<LbfgsPoint> {
    return LbfgsPoint{0.5 * (x[0] - 10) * (x[0] - 10), Vector::Constant(1, x[0] - 10), false};
  };
  lbfgs_minimize(eval, Vector::Zero(1), opts, [&](const Vector& x, const LbfgsPoint&, Index) { xs.push_back(x[0]); });
  for (std::size_t k = 1; k < xs.size(); ++k) EXPECT_LE(std::abs(xs[k] - xs[k - 1]), 0.25 + 1e-12);
}

TEST(Lbfgs, RelativeDecreaseStopsOnPlateau) {
  // Rounding noise on a large offset keeps the gradient test out of reach.
  auto eval = [](const Vector& x) -> std::optional<LbfgsPoint> {
    const double noise = 1e-9 * std::sin(1e7 * x[0]);
    return LbfgsPoint{1e6 + (x[0] - 1) * (x[0] - 1) + noise, Vector::Constant(1, 2 * (x[0] - 1) + 1e-2 * std::cos(1e7 * x[0])), false};
  };
  LbfgsOptions opts;
  opts.grad_tol = 1e-12;
  opts.max_iters = 100;
  const auto loose = lbfgs_minimize(eval, Vector::Zero(1), opts, no_op);
  EXPECT_NE(loose.status, LbfgsStatus::converged);
  opts.f_rel_tol = 2.2e-9;
  const auto r = lbfgs_minimize(eval, Vector::Zero(1), opts, no_op);
  EXPECT_EQ(r.status, LbfgsStatus::converged);
  EXPECT_NEAR(r.x[0], 1.0, 0.1);
  EXPECT_LT(r.evaluations, loose.evaluations);
}

TEST(Seeds, DeterministicAndDistinct) {
  const SeedSplitter a(42), b(42), c(43);
  EXPECT_EQ(a.seed("noise"), b.seed("noise"));
  EXPECT_NE(a.seed("noise"), c.seed("noise"));
  std::set<std::uint64_t> seen;
  for (const char* name : {"noise", "mask", "probes", "folds"})
    for (std::uint64_t i = 0; i < 4; ++i) seen.insert(a.seed(name, i));
  EXPECT_EQ(seen.size(), 16u);
  EXPECT_EQ(a.child("replicate", 3).seed("data"), b.child("replicate", 3).seed("data"));
  EXPECT_NE(a.child("replicate", 3).seed("data"), a.child("replicate", 4).seed("data"));
  auto r1 = a.rng("noise"), r2 = b.rng("noise");
  EXPECT_EQ(r1(), r2());
}

TEST(Seeds, KnownFnvValues) {
  EXPECT_EQ(detail::fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(detail::fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Parallel, CoversEveryIndexOnce) {
  for (unsigned threads : {1u, 3u, 8u}) {
    std::vector<int> hits(100, 0);
    parallel_for(hits.size(), threads, [&](std::size_t i) { ++hits[i]; });
    EXPECT_EQ(std::count(hits.begin(), hits.end(), 1), 100) << threads;
  }
  parallel_for(0, 4, [](std::size_t) { FAIL(); });
}

TEST(Parallel, ExceptionPropagates) {
  EXPECT_THROW(parallel_for(20, 4,
                            [](std::size_t i) {
                              if (i == 7) throw std::runtime_error("boom");
                            }),
               std::runtime_error);
}

TEST(Parallel, ThreadCountFromEnvironment) {
  const char* old = std::getenv("BMC_THREADS");
  const std::string saved = old ? old : "";
  setenv("BMC_THREADS", "3", 1);
  EXPECT_EQ(default_thread_count(), 3u);
  setenv("BMC_THREADS", "zero", 1);
  EXPECT_GE(default_thread_count(), 1u);
  if (old)
    setenv("BMC_THREADS", saved.c_str(), 1);
  else
    unsetenv("BMC_THREADS");
}

TEST(Warnings, SinkSwapsAndRestores) {
  std::vector<std::string> got;
  const WarningSink prev = set_warning_sink([&](const std::string& m) { got.push_back(m); });
  warn("hello");
  set_warning_sink(prev);
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0], "hello");
}
