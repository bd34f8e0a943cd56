// SPDX-License-Identifier: Apache-2.0
#include "simeq/errors.hpp"
#include "simeq/metrics.hpp"
#include "simeq/spatial.hpp"
#include "simeq/training.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

namespace simeq {
namespace {

std::vector<ToySample> toy(std::size_t n, std::uint64_t seed) {
  return generate_toy_dataset(ToyDatasetConfig::defaults(), n, seed);
}

std::vector<Tensor> snapshot(const CompletionNetwork& net) {
  std::vector<Tensor> out;
  for (const ad::Parameter* p : net.parameters()) out.push_back(p->value);
  return out;
}

void expect_same_parameters(const CompletionNetwork& a, const CompletionNetwork& b) {
  const ConstParameterList pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(pa[i]->value == pb[i]->value) << pa[i]->name;
}

TEST(Schedule, StepDecay) {
  TrainConfig c;
  EXPECT_EQ(learning_rate_at(c, 0), 1e-4);
  EXPECT_EQ(learning_rate_at(c, 14), 1e-4);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 15), 0.9e-4);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 29), 0.9e-4);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 30), 0.81e-4);
  EXPECT_EQ(c.weight_decay, 5e-4);
}

TEST(TrainConfig, ValidationAndJson) {
  TrainConfig c;
  c.epochs = 7;
  c.seed = 42;
  EXPECT_EQ(to_json(train_config_from_json(to_json(c))), to_json(c));
  c.lr_decay_factor = 1.5;
  EXPECT_THROW(c.validate(), UsageError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), UsageError);
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"learning_rate", -1.0}}), UsageError);
}

TEST(AdamW, MatchesHandComputedSteps) {
  ad::Parameter p{"p", Tensor({1, 1, 2}, std::vector<double>{1.0, -2.0})};
  AdamW opt({&p}, 0.9, 0.999, 1e-8);
  const double lr = 0.1, wd = 0.01;
  std::vector<double> m(2, 0.0), v(2, 0.0), x{1.0, -2.0};
  const std::vector<std::vector<double>> gs = {{0.5, -1.0}, {0.25, 3.0}};
  for (std::size_t t = 0; t < gs.size(); ++t) {
    opt.step({Tensor({1, 1, 2}, gs[t])}, lr, wd);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * gs[t][i];
      v[i] = 0.999 * v[i] + 0.001 * gs[t][i] * gs[t][i];
      const double mh = m[i] / (1.0 - std::pow(0.9, t + 1.0));
      const double vh = v[i] / (1.0 - std::pow(0.999, t + 1.0));
      x[i] = x[i] * (1.0 - lr * wd) - lr * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(p.value[i], x[i], 1e-15);
    }
  }
  EXPECT_EQ(opt.steps(), 2u);
}

TEST(Loss, ZeroAtGroundTruth) {
  const PointCloud gt = toy(1, 1).front().gt;
  EXPECT_EQ(completion_loss(farthest_point_subset(gt, 64), gt, gt, 64), 0.0);
}

TEST(Loss, ScalesWithSimilarity) {
  const auto dist = TransformDistribution::sim3(2, 0.1, 10.0, 10.0 / std::sqrt(3.0));
  const PointCloud gt = toy(1, 2).front().gt;
  const PointCloud coarse = testing::random_cloud(64, 3, 0.5);
  const PointCloud dense = testing::random_cloud(1024, 4, 0.5);
  const double base = completion_loss(coarse, dense, gt, 64);
  for (std::uint64_t i = 0; i < 10; ++i) {
    const Sim3Transform g = sample_transform(dist, i);
    const double moved =
        completion_loss(apply_transform(g, coarse), apply_transform(g, dense), apply_transform(g, gt), 64);
    EXPECT_NEAR(moved, g.scale() * base, 1e-11 * g.scale());
  }
}

TEST(Loss, GroundTruthPermutationInvariantForDense) {
  const PointCloud gt = testing::random_cloud(200, 5);
  PointCloud shuffled = gt;
  Rng rng(5);
  std::shuffle(shuffled.points.begin(), shuffled.points.end(), rng);
  const PointCloud dense = testing::random_cloud(300, 6);
  EXPECT_NEAR(chamfer_l1(dense, shuffled), chamfer_l1(dense, gt), 1e-14);
}

TEST(PrepareSample, NormalizesPartialAndCarriesGroundTruth) {
  const ToySample s = toy(1, 7).front();
  const PreparedSample p = prepare_sample(s, 64);
  Vec3 mean = Vec3::Zero();
  for (const Vec3& q : p.input.points) mean += q;
  EXPECT_LT((mean / static_cast<double>(p.input.size())).norm(), 1e-12);
  EXPECT_EQ(p.coarse_target.size(), 64u);
  EXPECT_LT(testing::max_point_diff(apply_transform(p.to_dataset, p.gt), s.gt), 1e-12);
}

TEST(Trainer, ZeroLearningRateLeavesParametersUnchanged) {
  CompletionModel net(ModelConfig::desk());
  const auto before = snapshot(net);
  TrainConfig c;
  c.learning_rate = 0.0;
  c.epochs = 1;
  c.batch_size = 2;
  Trainer trainer(net, toy(4, 8), {}, c);
  const auto records = trainer.run();
  ASSERT_EQ(records.size(), 1u);
  EXPECT_TRUE(std::isfinite(records[0].train_loss));
  EXPECT_GT(records[0].train_loss, 0.0);
  EXPECT_TRUE(std::isnan(records[0].val_cd_l1_x1000));
  const auto after = snapshot(net);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(before[i] == after[i]);
}

TEST(Trainer, ThreadCountDoesNotChangeResult) {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.epochs = 1;
  c.batch_size = 4;
  const auto data = toy(4, 9);
  CompletionModel a(ModelConfig::desk()), b(ModelConfig::desk());
  Trainer(a, data, {}, c).run();
  c.threads = 3;
  Trainer(b, data, {}, c).run();
  expect_same_parameters(a, b);
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  const auto dir = std::filesystem::temp_directory_path() / "simeq_resume";
  std::filesystem::remove_all(dir);
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.epochs = 2;
  c.batch_size = 2;
  c.lr_decay_every = 1;
  const auto data = toy(4, 10);
  CompletionModel straight(ModelConfig::desk());
  Trainer(straight, data, {}, c).run();

  CompletionModel first(ModelConfig::desk());
  Trainer t1(first, data, {}, c);
  t1.run_epoch();
  t1.save_checkpoint(dir);

  auto resumed = load_network(dir);
  Trainer t2(*resumed, data, {}, c);
  t2.load_checkpoint(dir);
  EXPECT_EQ(t2.epochs_done(), 1u);
  t2.run();
  expect_same_parameters(*resumed, straight);
}

TEST(Trainer, NonFiniteLossAborts) {
  CompletionModel net(ModelConfig::desk());
  net.parameters().back()->value[0] = std::nan("");
  TrainConfig c;
  c.epochs = 1;
  Trainer trainer(net, toy(2, 11), {}, c);
  EXPECT_THROW(trainer.run(), NumericalError);
  EXPECT_EQ(trainer.epochs_done(), 0u);
}

TEST(Trainer, RejectsEmptyTrainingSet) {
  CompletionModel net(ModelConfig::desk());
  EXPECT_THROW(Trainer(net, {}, {}, TrainConfig{}), UsageError);
}

TEST(Split, EveryNthToValidation) {
  const auto all = toy(10, 12);
  const auto [train, val] = split_dataset(all, 5);
  ASSERT_EQ(val.size(), 2u);
  EXPECT_EQ(train.size(), 8u);
  EXPECT_EQ(val[0].gt.points, all[4].gt.points);
  EXPECT_EQ(val[1].gt.points, all[9].gt.points);
  EXPECT_EQ(split_dataset(all, 0).first.size(), 10u);
}

}  // namespace
}  // namespace simeq
