#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "llab/sweep.hpp"

using namespace llab;

namespace {

GridSpec tiny_grid() {
  GridSpec g;
  g.load = {LoadKind::width, {4, 8}};
  g.temp = {TempKind::batch_size, {16, 64}};
  g.replicates = 2;
  g.model = ModelSpec{4, {4}, 3};
  g.data.kind = "blobs";
  g.data.n_train = 120;
  g.data.n_test = 60;
  g.data.num_classes = 3;
  g.data.dim = 4;
  g.train.max_epochs = 8;
  g.curve.epochs = 3;
  g.curve.batch_size = 32;
  g.probes.m = 64;
  g.metrics.metric_batch = 50;
  g.metrics.max_iter = 30;
  g.seed = 99;
  return g;
}

}  // namespace

TEST(L2Distance, Basics) {
  const ParamVector a(ParamLayout::flat(4), {1, 2, 3, 4});
  EXPECT_EQ(l2_distance(a, a), 0.0);
  ParamVector b = a;
  b[2] += 1.0;
  EXPECT_EQ(l2_distance(a, b), 1.0);
}

TEST(L2Distance, MatchesLoopOracle) {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> nd;
  ParamVector a(ParamLayout::flat(100)), b(ParamLayout::flat(100));
  for (auto& x : a.values()) x = nd(gen);
  for (auto& x : b.values()) x = nd(gen);
  long double s = 0.0L;
  for (std::size_t i = 0; i < 100; ++i) s += (long double)(a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_NEAR(l2_distance(a, b), std::sqrt((double)s), 1e-12);
}

TEST(Grid, ValidationRejectsBadAxes) {
  GridSpec g = tiny_grid();
  g.replicates = 1;
  EXPECT_THROW(g.validate(), ConfigError);
  g = tiny_grid();
  g.load.values = {4, 4};
  EXPECT_THROW(g.validate(), ConfigError);
  g = tiny_grid();
  g.temp.values = {16.5};
  EXPECT_THROW(g.validate(), ConfigError);
}

TEST(Grid, CellSetupVariesOnlyItsKnob) {
  const GridSpec g = tiny_grid();
  const CellSetup c = cell_setup(g, 8, 64);
  EXPECT_EQ(c.model.hidden_widths, std::vector<std::size_t>{8});
  EXPECT_EQ(c.train.batch_size, 64u);
  EXPECT_EQ(c.train.lr, g.train.lr);
  EXPECT_EQ(c.train.weight_decay, g.train.weight_decay);
}

TEST(Seeds, KeyedByValuesNotIndices) {
  GridSpec g = tiny_grid();
  const auto s = replicate_seed(g, 8, 64, 1);
  g.load.values = {2, 8, 32};
  EXPECT_EQ(replicate_seed(g, 8, 64, 1), s);
  EXPECT_NE(replicate_seed(g, 8, 64, 0), s);
}

TEST(RunCell, FiveReplicatesMakeTwoPairs) {
  GridSpec g = tiny_grid();
  g.replicates = 5;
  const CellResult c = run_cell(g, 0, 0);
  EXPECT_EQ(c.replicates.size(), 5u);
  ASSERT_EQ(c.pairs.size(), 2u);
  EXPECT_EQ(c.pairs[0].a, 0u);
  EXPECT_EQ(c.pairs[1].b, 3u);
}

TEST(RunCell, IdenticalSeedsGiveTrivialPairMetrics) {
  const GridSpec g = tiny_grid();
  const CellResult c = run_cell(g, 1, 0, CellHooks{{42, 42}});
  ASSERT_TRUE(c.pairs[0].valid);
  EXPECT_EQ(c.pairs[0].mc, 0.0);
  EXPECT_NEAR(c.pairs[0].cka, 1.0, 1e-12);
  EXPECT_EQ(c.pairs[0].l2, 0.0);
}

TEST(RunCell, Deterministic) {
  const GridSpec g = tiny_grid();
  const CellResult a = run_cell(g, 0, 1), b = run_cell(g, 0, 1);
  EXPECT_EQ(results_to_csv(std::vector<CellResult>{a}), results_to_csv(std::vector<CellResult>{b}));
  for (std::size_t r = 0; r < a.replicates.size(); ++r) {
    EXPECT_EQ(a.replicates[r].lambda_max, b.replicates[r].lambda_max);
    EXPECT_EQ(a.replicates[r].hessian_trace, b.replicates[r].hessian_trace);
  }
  EXPECT_EQ(a.pairs[0].profile.error, b.pairs[0].profile.error);
}

TEST(RunCell, DivergedReplicatesAreRecordedNotThrown) {
  GridSpec g = tiny_grid();
  g.temp = {TempKind::lr, {1e30}};
  const CellResult c = run_cell(g, 0, 0);
  EXPECT_FALSE(c.converged());
  for (const auto& r : c.replicates) EXPECT_FALSE(r.failure.empty());
  EXPECT_FALSE(c.pairs[0].valid);
}

TEST(RunSweep, OneByOneEqualsRunCell) {
  GridSpec g = tiny_grid();
  g.load.values = {4};
  g.temp.values = {16};
  const SweepResult s = run_sweep(g, 1);
  ASSERT_EQ(s.cells.size(), 1u);
  EXPECT_EQ(results_to_csv(s.cells), results_to_csv(std::vector<CellResult>{run_cell(g, 0, 0)}));
}

TEST(RunSweep, ThreeByThreeCsvHasNineRows) {
  GridSpec g = tiny_grid();
  g.load.values = {2, 4, 8};
  g.temp.values = {16, 32, 64};
  g.train.max_epochs = 3;
  const std::string csv = results_to_csv(run_sweep(g, 2).cells);
  std::size_t lines = 0;
  for (char ch : csv) lines += ch == '\n';
  EXPECT_EQ(lines, 10u);
}

TEST(RunSweep, WorkerCountDoesNotChangeOutput) {
  const GridSpec g = tiny_grid();
  EXPECT_EQ(results_to_csv(run_sweep(g, 1).cells), results_to_csv(run_sweep(g, 4).cells));
}

TEST(Summary, AggregatesOnlyConvergedReplicates) {
  const std::vector<double> xs{1.0, 3.0, NAN};
  const Stat s = summarize(xs);
  EXPECT_EQ(s.n, 2u);
  EXPECT_EQ(s.mean, 2.0);
  EXPECT_DOUBLE_EQ(s.sd, std::sqrt(2.0));
}

TEST(ResultsCsv, RoundTripsThroughParser) {
  const GridSpec g = tiny_grid();
  const std::string csv = results_to_csv(run_sweep(g, 1).cells);
  std::istringstream in(csv);
  EXPECT_EQ(results_to_csv(parse_results_csv(in, "r")), csv);
}

TEST(ResultsCsv, BadHeaderIsFormatError) {
  std::istringstream in("a,b\n1,2\n");
  EXPECT_THROW(parse_results_csv(in, "r"), FormatError);
}
