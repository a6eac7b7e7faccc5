#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "llab/data.hpp"
#include "llab/modeconn.hpp"
#include "llab/trainer.hpp"

using namespace llab;

namespace {

ParamVector vec(std::vector<double> v) {
  const auto n = v.size();
  return ParamVector(ParamLayout::flat(n), std::move(v));
}

CurveProfile profile_of(std::vector<double> t, std::vector<double> err) {
  CurveProfile p;
  p.t = std::move(t);
  p.error = std::move(err);
  p.cross_entropy.assign(p.t.size(), 0.0);
  return p;
}

}  // namespace

TEST(Bezier, EndpointsExact) {
  BezierCurve c = init_curve(vec({0.1, 0.2}), vec({0.7, -0.3}), 3);
  c.bends[0][0] = 9.0;
  EXPECT_EQ(curve_point(c, 0.0), c.start);
  EXPECT_EQ(curve_point(c, 1.0), c.end);
}

TEST(Bezier, DegreeOneMidpointIsAverage) {
  const BezierCurve c = init_curve(vec({1.0, 3.0}), vec({3.0, -1.0}), 1);
  const ParamVector m = curve_point(c, 0.5);
  EXPECT_DOUBLE_EQ(m[0], 2.0);
  EXPECT_DOUBLE_EQ(m[1], 1.0);
}

TEST(Bezier, QuadraticMidpointCoefficients) {
  BezierCurve c{vec({4.0}), vec({8.0}), {vec({-2.0})}};
  // C(2,j) 0.5^2 = 0.25, 0.5, 0.25
  EXPECT_DOUBLE_EQ(curve_point(c, 0.5)[0], 0.25 * 4.0 + 0.5 * -2.0 + 0.25 * 8.0);
  EXPECT_DOUBLE_EQ(bernstein(2, 0, 0.5), 0.25);
  EXPECT_DOUBLE_EQ(bernstein(2, 1, 0.5), 0.5);
  EXPECT_DOUBLE_EQ(bernstein(2, 2, 0.5), 0.25);
}

TEST(InitCurve, SingleBendAtMidpoint) {
  const BezierCurve c = init_curve(vec({0.0, 2.0}), vec({4.0, 6.0}), 2);
  ASSERT_EQ(c.bends.size(), 1u);
  EXPECT_EQ(c.bends[0], vec({2.0, 4.0}));
}

TEST(InitCurve, IdenticalEndpointsGiveIdenticalControlPoints) {
  const BezierCurve c = init_curve(vec({1.5, -2.5}), vec({1.5, -2.5}), 3);
  for (const auto& b : c.bends) EXPECT_EQ(b, c.start);
}

TEST(InitCurve, UntrainedMidpointProfileEqualsAveragedWeights) {
  const ModelSpec spec{4, {6}, 3};
  Rng r1(1), r2(2);
  const ParamVector a = he_init(spec, r1), b = he_init(spec, r2);
  const Dataset ds = gen_blobs(90, 3, 4, 0.5, 3);
  const BezierCurve c = init_curve(a, b);
  ParamVector avg = a;
  for (std::size_t i = 0; i < avg.size(); ++i) avg[i] = 0.5 * (a[i] + b[i]);
  const CurveProfile p = curve_profile(spec, c, ds);
  EXPECT_DOUBLE_EQ(p.error[2], evaluate(spec, avg, ds).err01);
}

TEST(TrainCurve, EndpointsSurviveTrainingBitForBit) {
  const ModelSpec spec{4, {6}, 3};
  Rng r1(1), r2(2);
  const ParamVector a = he_init(spec, r1), b = he_init(spec, r2);
  const Dataset ds = gen_blobs(90, 3, 4, 0.5, 3);
  CurveTrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 16;
  const BezierCurve trained = train_curve(spec, init_curve(a, b), ds, cfg);
  EXPECT_EQ(trained.start, a);
  EXPECT_EQ(trained.end, b);
  EXPECT_EQ(curve_point(trained, 0.0), a);
  EXPECT_EQ(curve_point(trained, 1.0), b);
}

TEST(TrainCurve, ZeroLearningRateKeepsBends) {
  const ModelSpec spec{4, {6}, 3};
  Rng r1(1), r2(2);
  const ParamVector a = he_init(spec, r1), b = he_init(spec, r2);
  const Dataset ds = gen_blobs(90, 3, 4, 0.5, 3);
  CurveTrainConfig cfg;
  cfg.lr = 0.0;
  cfg.epochs = 3;
  const BezierCurve init = init_curve(a, b, 3);
  const BezierCurve trained = train_curve(spec, init, ds, cfg);
  ASSERT_EQ(trained.bends.size(), init.bends.size());
  for (std::size_t j = 0; j < init.bends.size(); ++j) EXPECT_EQ(trained.bends[j], init.bends[j]);
}

TEST(TrainCurve, ToyQuadraticLowersMidpointLoss) {
  const std::vector<double> c{1.0, -2.0};
  auto L = [&](const ParamVector& p) {
    return (p[0] - c[0]) * (p[0] - c[0]) + (p[1] - c[1]) * (p[1] - c[1]);
  };
  // Endpoints symmetric about c, off the minimum; straight init puts the bend at c + (0, 3).
  BezierCurve curve = init_curve(vec({-2.0, 1.0}), vec({4.0, 1.0}), 2);
  const double before = L(curve_point(curve, 0.5));
  CurveTrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 1;
  cfg.lr = 0.05;
  const BezierCurve trained =
      train_curve_with(curve, 4, cfg, [&](const ParamVector& p, const std::vector<std::size_t>&) {
        LossGrad lg{L(p), ParamVector::zeros_like(p)};
        for (std::size_t i = 0; i < 2; ++i) lg.grad[i] = 2.0 * (p[i] - c[i]);
        return lg;
      });
  EXPECT_LT(L(curve_point(trained, 0.5)), before);
}

TEST(Profile, EndpointsMatchEvaluate) {
  const ModelSpec spec{4, {6}, 3};
  Rng r1(1), r2(2);
  const ParamVector a = he_init(spec, r1), b = he_init(spec, r2);
  const Dataset ds = gen_blobs(90, 3, 4, 0.5, 3);
  const CurveProfile p = curve_profile(spec, init_curve(a, b), ds);
  EXPECT_EQ(p.error.front(), evaluate(spec, a, ds).err01);
  EXPECT_EQ(p.error.back(), evaluate(spec, b, ds).err01);
  EXPECT_EQ(p.cross_entropy.front(), evaluate(spec, a, ds).loss);
}

TEST(Profile, IdenticalEndpointsGiveConstantProfile) {
  const ModelSpec spec{4, {6}, 3};
  Rng r1(1);
  const ParamVector a = he_init(spec, r1);
  const Dataset ds = gen_blobs(90, 3, 4, 0.5, 3);
  const CurveProfile p = curve_profile(spec, init_curve(a, a), ds);
  for (double e : p.error) EXPECT_EQ(e, p.error.front());
  EXPECT_EQ(mode_connectivity(p), 0.0);
}

TEST(Profile, RandomBendBetweenPerfectModelsIsNoBetter) {
  const ModelSpec spec{8, {16}, 4};
  const Dataset ds = gen_blobs(200, 4, 8, 0.05, 4);
  TrainConfig tc;
  tc.seed = 1;
  const ParamVector a = sgd_train(spec, ds, ds, tc).theta;
  tc.seed = 2;
  const ParamVector b = sgd_train(spec, ds, ds, tc).theta;
  ASSERT_EQ(evaluate(spec, a, ds).acc, 100.0);
  ASSERT_EQ(evaluate(spec, b, ds).acc, 100.0);
  BezierCurve c = init_curve(a, b);
  Rng rng(5);
  for (auto& v : c.bends[0].values()) v = 3.0 * rng.normal();
  const CurveProfile p = curve_profile(spec, c, ds);
  EXPECT_GE(p.error[2], p.error[0]);
}

TEST(ModeConnectivity, HandCases) {
  EXPECT_EQ(mode_connectivity(profile_of({0, 0.5, 1}, {0, 60, 0})), -60.0);
  EXPECT_EQ(mode_connectivity(profile_of({0, 0.5, 1}, {80, 20, 80})), 60.0);
  EXPECT_EQ(mode_connectivity(profile_of({0, 0.5, 1}, {7, 7, 7})), 0.0);
}

TEST(ModeConnectivity, TiesPickSmallestT) {
  // Deviations +10 at t=0.25 and -10 at t=0.75 tie; the earlier one wins.
  EXPECT_EQ(mode_connectivity(profile_of({0, 0.25, 0.5, 0.75, 1}, {20, 10, 20, 30, 20})), 10.0);
}

TEST(ModeConnectivity, FuzzedProfilesStayInRange) {
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (int rep = 0; rep < 2000; ++rep) {
    std::vector<double> err(5);
    for (auto& e : err) e = u(gen);
    const double mc = mode_connectivity(profile_of({0, 0.25, 0.5, 0.75, 1}, err));
    EXPECT_GE(mc, -100.0);
    EXPECT_LE(mc, 100.0);
  }
}

TEST(ModeConnectivity, JsonRoundTrip) {
  const CurveProfile p = profile_of({0, 0.5, 1}, {0, 60, 0});
  const CurveProfile q = profile_from_json(profile_to_json(p));
  EXPECT_EQ(q.t, p.t);
  EXPECT_EQ(q.error, p.error);
  EXPECT_EQ(profile_to_json(p).at("mc"), -60.0);
}
