#include "bmc/completion.hpp"
#include "bmc/solver.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace bmc;
using testing_support::random_instance;
using testing_support::with_method;

namespace {

const SolverMethod kAllMethods[] = {SolverMethod::direct, SolverMethod::pcg, SolverMethod::spectral};

Vector random_vector(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return oracle::random_matrix(n, 1, rng);
}

}  // namespace

TEST(SolverMethodNames, RoundTrip) {
  for (SolverMethod m : {SolverMethod::direct, SolverMethod::pcg, SolverMethod::spectral, SolverMethod::automatic})
    EXPECT_EQ(parse_solver_method(to_string(m)), m);
  EXPECT_THROW(parse_solver_method("lu"), InvalidArgument);
}

TEST(SolverConfigCheck, RejectsBadValues) {
  SolverConfig c;
  c.cg_rel_tol = 0.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.cg_max_iters = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  EXPECT_EQ(SolverConfig{}.max_iters_for(100), 300);
}

TEST(Factorize, IdentitySystemSolvesToRhs) {
  testing_support::Instance in;
  in.wr = oracle::Mat::Zero(3, 3);
  in.wc = oracle::Mat::Zero(4, 4);
  in.x = oracle::Mat::Zero(3, 4);
  in.mask.assign(12, 1);
  const BmcProblem p = in.problem();
  const Vector b = random_vector(12, 1);
  for (SolverMethod m : kAllMethods) {
    const auto res = factorize(p.system({1e-300, 1e-300}), with_method(m)).solve(b);
    EXPECT_LT((res.solution - b).norm(), 1e-12 * b.norm()) << to_string(m);
  }
}

TEST(Factorize, UnobservedPatchIsNotPositiveDefinite) {
  auto in = testing_support::checkerboard(6, 6, 0.0, 2);
  for (Index j = 0; j < 3; ++j)
    for (Index i = 0; i < 3; ++i) in.mask[static_cast<std::size_t>(i + 6 * j)] = 0;
  const BmcProblem p = in.problem();
  EXPECT_FALSE(check_assumption(p).holds);
  EXPECT_THROW(factorize(p.system({1.0, 1.0}), with_method(SolverMethod::direct)), NotPositiveDefinite);
  EXPECT_THROW(factorize(p.system({1.0, 1.0}), with_method(SolverMethod::spectral)), NotPositiveDefinite);
  SolverConfig natural = with_method(SolverMethod::direct);
  natural.ordering = FillOrdering::natural;
  EXPECT_THROW(factorize(p.system({1.0, 1.0}), natural), NotPositiveDefinite);
}

TEST(Factorize, CholeskyReconstructsSystem) {
  const auto in = random_instance(4, 3, 0.6, 5);
  const BmcProblem p = in.problem();
  for (FillOrdering ord : {FillOrdering::amd, FillOrdering::natural}) {
    SolverConfig cfg = with_method(SolverMethod::direct);
    cfg.ordering = ord;
    const Factorization f = factorize(p.system({0.8, 1.7}), cfg);
    const auto lp = f.cholesky_factor();
    ASSERT_TRUE(lp.has_value());
    const Matrix l = Matrix(lp->first);
    const Matrix s = oracle::system_matrix(in.mask, in.wr, in.wc, 0.8, 1.7);
    const Matrix ps = lp->second.transpose() * l * l.transpose() * lp->second;
    EXPECT_LT((ps - s).norm() / s.norm(), 1e-10);
  }
}

TEST(Solve, ZeroRhsGivesZero) {
  const auto in = random_instance(4, 3, 0.6, 6);
  const BmcProblem p = in.problem();
  for (SolverMethod m : kAllMethods) {
    const auto res = solve(p.system({1.0, 1.0}), with_method(m), Vector::Zero(12));
    EXPECT_EQ(res.solution.norm(), 0.0);
    EXPECT_EQ(res.report.relative_residual, 0.0);
  }
}

TEST(Solve, MethodsAgreeWithDenseInverse) {
  const auto in = random_instance(6, 5, 0.6, 7);
  const BmcProblem p = in.problem();
  const Vector b = random_vector(30, 8);
  const Matrix s = oracle::system_matrix(in.mask, in.wr, in.wc, 0.5, 2.0);
  const Vector expected = s.fullPivLu().solve(b);
  const Vector direct = solve(p.system({0.5, 2.0}), with_method(SolverMethod::direct), b).solution;
  for (SolverMethod m : kAllMethods) {
    const auto res = solve(p.system({0.5, 2.0}), with_method(m), b);
    EXPECT_LT((res.solution - expected).norm() / expected.norm(), 1e-7) << to_string(m);
    EXPECT_LT((res.solution - direct).norm() / direct.norm(), 1e-6) << to_string(m);
    EXPECT_EQ(res.report.method, m);
  }
}

TEST(Solve, ReportedResidualIsTrueResidual) {
  const auto in = random_instance(7, 6, 0.5, 9);
  const BmcProblem p = in.problem();
  const Vector b = random_vector(42, 10);
  const Matrix s = oracle::system_matrix(in.mask, in.wr, in.wc, 3.0, 0.2);
  for (SolverMethod m : kAllMethods) {
    const auto res = solve(p.system({3.0, 0.2}), with_method(m), b);
    const double truth = (s * res.solution - b).norm() / b.norm();
    EXPECT_NEAR(res.report.relative_residual, truth, 1e-14);
    if (m == SolverMethod::pcg) {
      EXPECT_LE(res.report.relative_residual, 1e-8);
      EXPECT_GT(res.report.iterations, 0);
    }
  }
}

TEST(Solve, PcgIterationCapRaises) {
  const auto in = random_instance(10, 10, 0.5, 11);
  SolverConfig cfg = with_method(SolverMethod::pcg);
  cfg.cg_max_iters = 1;
  cfg.use_preconditioner = false;
  EXPECT_THROW(solve(in.problem().system({1.0, 1.0}), cfg, random_vector(100, 1)), MaxItersExceeded);
}

TEST(Solve, UnpreconditionedAndDropTolerancesStillConverge) {
  const auto in = random_instance(8, 7, 0.5, 12);
  const BmcProblem p = in.problem();
  const Vector b = random_vector(56, 13);
  const Vector ref = solve(p.system({1.0, 1.0}), with_method(SolverMethod::direct), b).solution;
  for (double drop : {0.0, 1e-3}) {
    for (bool pre : {true, false}) {
      SolverConfig cfg = with_method(SolverMethod::pcg);
      cfg.ic_drop_tol = drop;
      cfg.use_preconditioner = pre;
      const Factorization f = factorize(p.system({1.0, 1.0}), cfg);
      EXPECT_EQ(f.preconditioned(), pre);
      EXPECT_LT((f.solve(b).solution - ref).norm() / ref.norm(), 1e-6);
    }
  }
}

TEST(Solve, RhsLengthChecked) {
  const auto in = random_instance(3, 3, 0.8, 1);
  EXPECT_THROW(solve(in.problem().system({1.0, 1.0}), {}, Vector::Zero(4)), DimensionMismatch);
}

TEST(SolveMany, BatchOfOneEqualsSolve) {
  const auto in = random_instance(5, 4, 0.6, 14);
  const Factorization f = factorize(in.problem().system({1.0, 1.0}), with_method(SolverMethod::direct));
  const Vector b = random_vector(20, 15);
  const std::vector<Vector> batch{b};
  EXPECT_EQ(solve_many(f, batch)[0].solution, f.solve(b).solution);
}

TEST(SolveMany, LinearityOnDirectPath) {
  const auto in = random_instance(5, 4, 0.6, 16);
  const Factorization f = factorize(in.problem().system({1.0, 1.0}), with_method(SolverMethod::direct));
  const Vector b = random_vector(20, 17);
  const std::vector<Vector> batch{b, 2.0 * b};
  const auto res = solve_many(f, batch);
  EXPECT_EQ(res[1].solution, 2.0 * res[0].solution);
  EXPECT_FALSE(res[0].report.factorization_reused);
  EXPECT_TRUE(res[1].report.factorization_reused);
  EXPECT_EQ(f.solve_count(), 2);
}

TEST(SolveMany, RademacherBatchMatchesDenseInverse) {
  const auto in = random_instance(5, 4, 0.6, 18);
  const Matrix inv = oracle::system_matrix(in.mask, in.wr, in.wc, 1.1, 0.9).fullPivLu().inverse();
  std::mt19937_64 rng(19);
  std::vector<Vector> batch;
  for (int k = 0; k < 5; ++k) {
    Vector w(20);
    for (Index i = 0; i < 20; ++i) w[i] = (rng() & 1) ? 1.0 : -1.0;
    batch.push_back(w);
  }
  for (SolverMethod m : kAllMethods) {
    const auto res = solve_many(factorize(in.problem().system({1.1, 0.9}), with_method(m)), batch);
    for (int k = 0; k < 5; ++k) EXPECT_LT((res[k].solution - inv * batch[k]).norm(), 1e-7) << to_string(m);
  }
}

TEST(AutomaticMethod, PrefersSpectralWhenBasisAvailable) {
  const auto in = random_instance(5, 4, 0.6, 20);
  EXPECT_EQ(factorize(in.problem().system({1.0, 1.0})).method(), SolverMethod::spectral);
  ProblemOptions no_basis;
  no_basis.spectral_max_dim = 0;
  EXPECT_EQ(factorize(in.problem(no_basis).system({1.0, 1.0})).method(), SolverMethod::direct);
  SolverConfig small;
  small.auto_threshold = 10;
  EXPECT_EQ(factorize(in.problem(no_basis).system({1.0, 1.0}), small).method(), SolverMethod::pcg);
  EXPECT_THROW(factorize(in.problem(no_basis).system({1.0, 1.0}), with_method(SolverMethod::spectral)), InvalidArgument);
}

TEST(SpectralTraces, MatchDenseInverse) {
  const auto in = random_instance(6, 5, 0.55, 21);
  const Factorization f = factorize(in.problem().system({0.4, 2.5}), with_method(SolverMethod::spectral));
  const auto tr = f.spectral_traces(true);
  ASSERT_TRUE(tr.has_value());
  const Matrix inv = oracle::system_matrix(in.mask, in.wr, in.wc, 0.4, 2.5).fullPivLu().inverse();
  const Matrix kr = oracle::kron(oracle::Mat::Identity(5, 5), oracle::laplacian(in.wr));
  const Matrix kc = oracle::kron(oracle::laplacian(in.wc), oracle::Mat::Identity(6, 6));
  EXPECT_NEAR(tr->inverse, inv.trace(), 1e-10 * inv.trace());
  EXPECT_NEAR(tr->row, (inv * kr * inv).trace(), 1e-9);
  EXPECT_NEAR(tr->col, (inv * kc * inv).trace(), 1e-9);
}
