#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "llab/checkpoint.hpp"
#include "llab/data.hpp"
#include "llab/trainer.hpp"
#include "oracles.hpp"

using namespace llab;

TEST(Schedule, LinearDecayValues) {
  const LinearDecay s{10, 20, 0.01};
  const double eta = 0.3;
  EXPECT_EQ(linear_decay_lr(0, eta, s), eta);
  EXPECT_EQ(linear_decay_lr(10, eta, s), eta);
  EXPECT_DOUBLE_EQ(linear_decay_lr(20, eta, s), 0.01 * eta);
  EXPECT_DOUBLE_EQ(linear_decay_lr(30, eta, s), 0.01 * eta);
  EXPECT_NEAR(linear_decay_lr(15, eta, s), 0.505 * eta, 1e-15);
}

TEST(Schedule, LinearScalingRule) {
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.batch_size = 256;
  cfg.linear_scale_lr = true;
  cfg.reference_batch = 128;
  EXPECT_DOUBLE_EQ(lr_at_epoch(0, cfg), 0.2);
}

TEST(Batches, PartitionCoversEveryIndexOnce) {
  Rng rng(3);
  for (std::size_t B : {1u, 7u, 32u, 100u, 150u}) {
    const auto batches = epoch_batches(100, B, rng);
    std::vector<int> seen(100, 0);
    for (const auto& b : batches) {
      EXPECT_LE(b.size(), B);
      for (auto i : b) ++seen[i];
    }
    for (int s : seen) EXPECT_EQ(s, 1);
  }
}

TEST(Trainer, QuadraticSurrogateMatchesClosedForm) {
  const ModelSpec spec{1, {}, 2};  // 4 parameters; only the penalty is active
  const Dataset ds{Matrix{{0.0}}, {0}, 2, "one", std::nullopt};
  TrainConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.7;
  cfg.batch_size = 1;
  cfg.max_epochs = 1;
  cfg.plateau_epochs = 0;
  cfg.data_term = DataTerm::none;
  ParamVector theta(ParamLayout::for_model(spec), {0.9, -1.3, 0.4, 2.0});
  const ParamVector theta0 = theta;
  const double factor = 1.0 - 2.0 * cfg.lr * cfg.weight_decay;
  for (int t = 1; t <= 40; ++t) {
    theta = sgd_train(spec, ds, ds, cfg, theta).theta;
    for (std::size_t i = 0; i < theta.size(); ++i)
      ASSERT_NEAR(theta[i], theta0[i] * std::pow(factor, t), 1e-12) << "step " << t;
  }
}

TEST(Trainer, ZeroLearningRateLeavesInitUntouched) {
  const ModelSpec spec{4, {8}, 3};
  const Dataset ds = gen_blobs(60, 3, 4, 0.5, 1);
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.weight_decay = 0.0;
  cfg.batch_size = 7;
  cfg.max_epochs = 5;
  cfg.seed = 11;
  const TrainResult r = sgd_train(spec, ds, ds, cfg);
  EXPECT_EQ(r.theta, initial_params(spec, cfg));
}

TEST(Trainer, SeparableBlobsReachFullTrainingAccuracy) {
  const ModelSpec spec{8, {16}, 4};
  const Dataset train = gen_blobs(400, 4, 8, 0.05, 2);
  const Dataset test = gen_blobs(200, 4, 8, 0.05, 3);
  TrainConfig cfg;
  cfg.seed = 5;
  const TrainResult r = sgd_train(spec, train, test, cfg);
  EXPECT_EQ(evaluate(spec, r.theta, train).acc, 100.0);
}

TEST(Trainer, Deterministic) {
  const ModelSpec spec{2, {6}, 3};
  const Dataset ds = gen_spirals(90, 3, 0.05, 4);
  TrainConfig cfg;
  cfg.max_epochs = 10;
  cfg.seed = 9;
  EXPECT_EQ(sgd_train(spec, ds, ds, cfg).theta, sgd_train(spec, ds, ds, cfg).theta);
}

TEST(Trainer, PlateauStopsEarly) {
  const ModelSpec spec{2, {4}, 2};
  const Dataset ds = gen_blobs(40, 2, 2, 0.1, 6);
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.max_epochs = 100;
  cfg.plateau_epochs = 3;
  const TrainResult r = sgd_train(spec, ds, ds, cfg);
  EXPECT_TRUE(r.history.plateau_stop);
  EXPECT_EQ(r.history.epochs.size(), 4u);
}

TEST(Trainer, DivergenceIsReported) {
  const ModelSpec spec{2, {8}, 2};
  const Dataset ds = gen_blobs(40, 2, 2, 3.0, 6);
  TrainConfig cfg;
  cfg.lr = 1e6;
  cfg.max_epochs = 50;
  cfg.plateau_epochs = 0;
  EXPECT_THROW(sgd_train(spec, ds, ds, cfg), DivergenceError);
}

TEST(Evaluate, ZeroThetaPredictsClassZero) {
  const ModelSpec spec{3, {4}, 4};
  const Dataset ds = gen_blobs(100, 4, 3, 0.5, 7);
  const ParamVector theta(ParamLayout::for_model(spec));
  std::size_t zeros = 0;
  for (int c : ds.y) zeros += c == 0;
  EXPECT_DOUBLE_EQ(evaluate(spec, theta, ds).acc, 100.0 * static_cast<double>(zeros) / 100.0);
}

TEST(Evaluate, PerfectLogitsGiveFullAccuracy) {
  const ModelSpec spec{3, {}, 3};
  ParamVector theta(ParamLayout::for_model(spec));
  auto W = theta.tensor(0, TensorRole::weight);
  for (std::size_t i = 0; i < 3; ++i) W[i * 3 + i] = 1.0;
  Dataset ds{Matrix{{5, 0, 0}, {0, 5, 0}, {0, 0, 5}}, {0, 1, 2}, 3, "eye", std::nullopt};
  EXPECT_EQ(evaluate(spec, theta, ds).acc, 100.0);
  EXPECT_EQ(evaluate(spec, theta, ds).err01, 0.0);
}

TEST(Evaluate, MatchesLoopOracleCounts) {
  std::mt19937_64 gen(8);
  for (int rep = 0; rep < 5; ++rep) {
    auto inst = oracle::random_instance(gen);
    Dataset ds{inst.batch.X, inst.batch.y, inst.spec.num_classes, "r", std::nullopt};
    const auto z = oracle::forward(inst.spec, inst.theta.values(), oracle::to_mat(ds.X));
    std::size_t correct = 0;
    for (std::size_t n = 0; n < z.size(); ++n) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < z[n].size(); ++c)
        if (z[n][c] > z[n][best]) best = c;
      correct += static_cast<int>(best) == ds.y[n];
    }
    const Evaluation e = evaluate(inst.spec, inst.theta, ds);
    EXPECT_DOUBLE_EQ(e.acc, 100.0 * static_cast<double>(correct) / static_cast<double>(z.size()));
    EXPECT_DOUBLE_EQ(e.acc + e.err01, 100.0);
  }
}

class CheckpointTest : public ::testing::Test {
 protected:
  std::filesystem::path dir = std::filesystem::temp_directory_path() / "llab_ckpt_test";
  void SetUp() override { std::filesystem::create_directories(dir); }
  void TearDown() override { std::filesystem::remove_all(dir); }
};

TEST_F(CheckpointTest, RoundTripIsBitIdentical) {
  const ModelSpec spec{3, {5, 4}, 2};
  Rng rng(1);
  const ParamVector theta = he_init(spec, rng);
  save_checkpoint(dir / "a.ckpt", spec, theta, {{"note", "x"}});
  const Checkpoint ck = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(ck.spec, spec);
  EXPECT_EQ(ck.theta, theta);
  EXPECT_EQ(ck.meta.at("note"), "x");
}

TEST_F(CheckpointTest, CorruptMagicIsFormatError) {
  const ModelSpec spec{2, {3}, 2};
  const ParamVector theta(ParamLayout::for_model(spec));
  std::string bytes = encode_checkpoint(spec, theta, nlohmann::json::object());
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, 10)), FormatError);
}

TEST_F(CheckpointTest, WidthMismatchIsRejected) {
  const ModelSpec w8{4, {8}, 2}, w16{4, {16}, 2};
  save_checkpoint(dir / "w8.ckpt", w8, ParamVector(ParamLayout::for_model(w8)));
  EXPECT_THROW(load_checkpoint(dir / "w8.ckpt", w16), DimensionError);
}

TEST_F(CheckpointTest, MissingFileIsIoError) {
  EXPECT_THROW(load_checkpoint(dir / "nope.ckpt"), IoError);
}
