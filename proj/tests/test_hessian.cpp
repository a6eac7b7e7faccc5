#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "llab/hessian.hpp"
#include "oracles.hpp"

using namespace llab;

namespace {

struct Net50 {
  ModelSpec spec{1, {12}, 2};
  ParamVector theta;
  Batch batch;
  Matrix H;
};

Net50 make_net50(std::uint64_t seed) {
  Net50 n;
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  n.theta = ParamVector(ParamLayout::for_model(n.spec));
  for (auto& x : n.theta.values()) x = nd(gen);
  n.batch.X = Matrix(24, 1);
  for (std::size_t i = 0; i < 24; ++i) {
    n.batch.X(i, 0) = nd(gen);
    n.batch.y.push_back(n.batch.X(i, 0) > 0 ? 1 : 0);
  }
  n.H = exact_hessian(n.spec, n.theta, n.batch, 5e-4);
  return n;
}

}  // namespace

TEST(PowerIteration, IsotropicQuadratic) {
  const ModelSpec spec{3, {4}, 2};
  const ParamVector theta(ParamLayout::for_model(spec));
  const Batch b{Matrix(2, 3, 1.0), {0, 1}};
  CurvatureConfig cfg;
  const EigenEstimate e = top_eigenvalue(spec, theta, b, 0.1, cfg, DataTerm::none);
  EXPECT_NEAR(e.lambda_max, 0.2, 1e-9);
}

TEST(PowerIteration, ZeroOperatorIsDegenerate) {
  const ParamLayout layout = ParamLayout::flat(5);
  CurvatureConfig cfg;
  const EigenEstimate e =
      power_iteration([](const ParamVector& v) { return ParamVector::zeros_like(v); }, layout, cfg);
  EXPECT_TRUE(e.degenerate);
  EXPECT_EQ(e.lambda_max, 0.0);
}

TEST(PowerIteration, MatchesDenseEigensolverOnFiftyParameters) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Net50 n = make_net50(seed);
    ASSERT_EQ(n.theta.size(), 50u);
    const double ref = oracle::dominant(oracle::jacobi_eigenvalues(oracle::to_mat(n.H)));
    CurvatureConfig cfg;
    cfg.rtol = 1e-10;
    cfg.max_iter = 20000;
    const EigenEstimate e = top_eigenvalue(n.spec, n.theta, n.batch, 5e-4, cfg);
    EXPECT_LT(oracle::rel_err(e.lambda_max, ref), 1e-3) << "seed " << seed;
  }
}

TEST(PowerIteration, Deterministic) {
  const Net50 n = make_net50(4);
  CurvatureConfig cfg;
  cfg.seed = 77;
  const EigenEstimate a = top_eigenvalue(n.spec, n.theta, n.batch, 5e-4, cfg);
  const EigenEstimate b = top_eigenvalue(n.spec, n.theta, n.batch, 5e-4, cfg);
  EXPECT_EQ(a.lambda_max, b.lambda_max);
  EXPECT_EQ(a.iters, b.iters);
}

TEST(Hutchinson, IsotropicQuadraticStopsAtSecondProbe) {
  const ModelSpec spec{3, {4}, 2};
  const ParamVector theta(ParamLayout::for_model(spec));
  const Batch b{Matrix(2, 3, 1.0), {0, 1}};
  CurvatureConfig cfg;
  const TraceEstimate t = trace_hutchinson(spec, theta, b, 0.1, cfg, DataTerm::none);
  const double P = static_cast<double>(theta.size());
  EXPECT_NEAR(t.trace, 0.2 * P, 1e-12);
  EXPECT_EQ(t.probes_used, 2u);
  for (double s : t.samples) EXPECT_NEAR(s, 0.2 * P, 1e-12);
}

TEST(Hutchinson, WithinFivePercentOfExactTrace) {
  const Net50 n = make_net50(5);
  CurvatureConfig cfg;
  cfg.rtol = 1e-4;
  cfg.max_iter = 5000;
  const TraceEstimate t = trace_hutchinson(n.spec, n.theta, n.batch, 5e-4, cfg);
  EXPECT_LT(oracle::rel_err(t.trace, trace(n.H)), 0.05);
}

TEST(Hutchinson, UnbiasedOverIndependentRuns) {
  const Net50 n = make_net50(6);
  const double exact = trace(n.H);
  const auto op = hessian_operator(n.spec, n.theta, n.batch, 5e-4);
  std::vector<double> means;
  for (std::uint64_t r = 0; r < 200; ++r) {
    Rng rng(derive_seed(123, r));
    const auto s = hutchinson_samples(op, n.theta.layout(), 100, rng);
    double m = 0.0;
    for (double v : s) m += v;
    means.push_back(m / 100.0);
  }
  double grand = 0.0;
  for (double m : means) grand += m;
  grand /= 200.0;
  double ss = 0.0;
  for (double m : means) ss += (m - grand) * (m - grand);
  const double se = std::sqrt(ss / 199.0) / std::sqrt(200.0);
  EXPECT_LT(std::abs(grand - exact), 3.0 * se);
}

TEST(MetricBatch, SizeAndDeterminism) {
  Dataset ds{Matrix(50, 2, 1.0), std::vector<int>(50, 0), 2, "d", std::nullopt};
  CurvatureConfig cfg;
  cfg.metric_batch = 20;
  EXPECT_EQ(metric_batch(ds, cfg).size(), 20u);
  cfg.metric_batch = 500;
  EXPECT_EQ(metric_batch(ds, cfg).size(), 50u);
}
