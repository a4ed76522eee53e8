#include <gtest/gtest.h>

#include <cmath>

#include "mslr/error.hpp"
#include "mslr/ops.hpp"
#include "mslr/shapes.hpp"
#include "mslr/training.hpp"

using namespace mslr;

namespace {

TrainConfig fixed_batch_config(std::size_t epochs, double lr) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 8;
  tc.base_lr = lr;
  tc.min_lr = lr;
  tc.warmup_epochs = 0;
  tc.augment = false;
  tc.resample_mask = false;
  return tc;
}

std::vector<PointCloud> eight_shapes(const ModelConfig& mc) {
  DataConfig d;
  return synthetic_dataset(d, mc.num_points, 2, 7);
}

}  // namespace

TEST(AdamW, FirstStepMovesByLearningRate) {
  auto p = Tensor::from({2}, {1.0, -2.0}, true);
  AdamW opt({{"p", p}}, 0.0);
  GradientTape tape;
  tape.backward(sum(mul(p, Tensor::from({2}, {0.5, -3.0}))));
  opt.step(0.1);
  // Bias-corrected first step is lr * g / (|g| + eps).
  EXPECT_NEAR(p[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(p[1], -2.0 + 0.1 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_EQ(opt.state().step, 1u);
}

TEST(AdamW, DecoupledWeightDecay) {
  auto p = Tensor::from({1}, {2.0}, true);
  AdamW opt({{"p", p}}, 0.05);
  opt.step(0.1);  // zero gradient: only decay acts
  EXPECT_NEAR(p[0], 2.0 - 0.1 * 0.05 * 2.0, 1e-15);
}

TEST(AdamW, ZeroGradientAndDecayIsIdentity) {
  auto p = Tensor::from({3}, {0.1, -4.0, 7.5}, true);
  AdamW opt({{"p", p}}, 0.0);
  for (int i = 0; i < 5; ++i) opt.step(0.3);
  EXPECT_EQ(p[0], 0.1);
  EXPECT_EQ(p[1], -4.0);
  EXPECT_EQ(p[2], 7.5);
}

TEST(AdamW, NonFiniteGradientLeavesStateUntouched) {
  auto p = Tensor::from({2}, {1.0, 2.0}, true);
  AdamW opt({{"p", p}}, 0.0);
  p.impl()->grad_buffer()[1] = std::nan("");
  EXPECT_THROW(opt.step(0.1), NumericError);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(opt.state().step, 0u);
  EXPECT_EQ(opt.state().moments.at("p").first[0], 0.0);
}

TEST(Schedule, WarmupThenCosine) {
  TrainConfig tc;
  tc.epochs = 300;
  tc.warmup_epochs = 10;
  tc.base_lr = 1e-4;
  tc.min_lr = 1e-6;
  EXPECT_DOUBLE_EQ(lr_at(0, tc), 1e-5);
  EXPECT_DOUBLE_EQ(lr_at(9, tc), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(10, tc), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(299, tc), 1e-6);
  const double mid = lr_at(10 + 289 / 2, tc);
  EXPECT_GT(mid, 1e-6);
  EXPECT_LT(mid, 1e-4);
  for (std::size_t e = 11; e < 300; ++e) EXPECT_LE(lr_at(e, tc), lr_at(e - 1, tc));
  EXPECT_THROW(lr_at(300, tc), ArgumentError);
}

TEST(Schedule, DegenerateDecaySpan) {
  TrainConfig tc;
  tc.epochs = 3;
  tc.warmup_epochs = 2;
  tc.base_lr = 0.5;
  tc.min_lr = 0.1;
  EXPECT_DOUBLE_EQ(lr_at(2, tc), 0.1);
  tc.warmup_epochs = 0;
  tc.epochs = 1;
  EXPECT_DOUBLE_EQ(lr_at(0, tc), 0.1);
}

TEST(Augment, IdentityLinearityDeterminism) {
  Rng rng(1);
  PointCloud c = gen_shape({"cone", 64, 0.0, 1, 0});
  EXPECT_EQ(apply_augmentation(c, {}).points, c.points);

  const AugmentParams a{1.1, {0.05, -0.02, 0.08}};
  const auto out = apply_augmentation(c, a);
  Point3 before{0, 0, 0}, after{0, 0, 0};
  for (std::size_t i = 0; i < c.points.size(); ++i)
    for (int d = 0; d < 3; ++d) {
      before[d] += c.points[i][d] / 64;
      after[d] += out.points[i][d] / 64;
    }
  for (int d = 0; d < 3; ++d) EXPECT_NEAR(after[d], a.scale * before[d] + a.translation[d], 1e-12);

  TrainConfig tc;
  Rng r1(5), r2(5);
  EXPECT_EQ(augment(c, r1, tc).points, augment(c, r2, tc).points);
  Rng r3(6);
  for (int i = 0; i < 100; ++i) {
    const auto p = draw_augmentation(r3, tc);
    EXPECT_GE(p.scale, 0.8);
    EXPECT_LT(p.scale, 1.25);
    for (double t : p.translation) EXPECT_LE(std::abs(t), 0.1);
  }
}

TEST(Pretrain, DeterministicAndScheduled) {
  const auto mc = tiny_model_config();
  const auto data = eight_shapes(mc);
  TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 3;
  tc.warmup_epochs = 2;
  tc.base_lr = 1e-3;
  auto run = [&] {
    MaskedAutoencoder model(mc, 1);
    AdamW opt(pretrain_parameters(model), tc.weight_decay);
    return pretrain_run(model, opt, data, tc, 9);
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.entries.size(), 6u * 3u);
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    EXPECT_EQ(a.entries[i].loss, b.entries[i].loss);
    EXPECT_EQ(a.entries[i].step, i + 1);
    EXPECT_EQ(a.entries[i].lr, lr_at(a.entries[i].epoch, tc));
    if (i > 0) EXPECT_GE(a.entries[i].epoch, a.entries[i - 1].epoch);
  }
}

TEST(Pretrain, FixedBatchLossMostlyDecreases) {
  const auto mc = tiny_model_config();
  MaskedAutoencoder model(mc, 2);
  const auto tc = fixed_batch_config(60, 1e-3);
  AdamW opt(pretrain_parameters(model), 0.0);
  const auto log = pretrain_run(model, opt, eight_shapes(mc), tc, 3);
  std::size_t down = 0;
  for (std::size_t i = 1; i < log.entries.size(); ++i) down += log.entries[i].loss <= log.entries[i - 1].loss;
  EXPECT_GE(static_cast<double>(down), 0.9 * static_cast<double>(log.entries.size() - 1));
}

TEST(Pretrain, CheckpointHookCadence) {
  const auto mc = tiny_model_config();
  MaskedAutoencoder model(mc, 2);
  auto tc = fixed_batch_config(5, 1e-3);
  tc.checkpoint_interval = 2;
  AdamW opt(pretrain_parameters(model), 0.0);
  std::vector<std::size_t> saved;
  PretrainHooks hooks;
  hooks.save_checkpoint = [&](std::size_t epoch, const AdamW&) { saved.push_back(epoch); };
  pretrain_run(model, opt, eight_shapes(mc), tc, 3, hooks);
  EXPECT_EQ(saved, (std::vector<std::size_t>{1, 3, 4}));
}

TEST(Pretrain, NonFiniteLossAbortsAfterSaving) {
  const auto mc = tiny_model_config();
  MaskedAutoencoder model(mc, 2);
  Tensor w = model.params().get("head.recon.weight");
  w.mutable_data()[0] = std::numeric_limits<double>::infinity();
  AdamW opt(pretrain_parameters(model), 0.0);
  int saves = 0;
  PretrainHooks hooks;
  hooks.save_checkpoint = [&](std::size_t, const AdamW& o) {
    ++saves;
    EXPECT_EQ(o.state().step, 0u);
  };
  EXPECT_THROW(pretrain_run(model, opt, eight_shapes(mc), fixed_batch_config(2, 1e-3), 3, hooks), NumericError);
  EXPECT_EQ(saves, 1);
}

TEST(Pretrain, Preconditions) {
  auto mc = tiny_model_config();
  MaskedAutoencoder model(mc, 2);
  AdamW opt(pretrain_parameters(model), 0.0);
  EXPECT_THROW(pretrain_run(model, opt, {}, fixed_batch_config(1, 1e-3), 1), ArgumentError);
  mc.mask_ratio = 0.0;
  MaskedAutoencoder unmasked(mc, 2);
  AdamW opt2(pretrain_parameters(unmasked), 0.0);
  EXPECT_THROW(pretrain_run(unmasked, opt2, eight_shapes(mc), fixed_batch_config(1, 1e-3), 1), ArgumentError);
}

TEST(Pretrain, ParameterGroups) {
  MaskedAutoencoder model(tiny_model_config(), 1);
  ClassifierHead::create(model.params(), "cls", 32, 8, 3);
  for (const auto& p : pretrain_parameters(model)) EXPECT_NE(p.name.rfind("cls.", 0), 0u) << p.name;
  bool has_cls = false;
  for (const auto& p : finetune_parameters(model)) {
    EXPECT_NE(p.name.rfind("decoder.", 0), 0u) << p.name;
    EXPECT_NE(p.name.rfind("head.", 0), 0u) << p.name;
    has_cls |= p.name.rfind("cls.", 0) == 0;
  }
  EXPECT_TRUE(has_cls);
}

TEST(Finetune, LabelOutsideHeadIsConfigError) {
  const auto mc = tiny_model_config();
  MaskedAutoencoder model(mc, 1);
  auto head = ClassifierHead::create(model.params(), "cls", 2 * mc.dims.back(), 8, 2);
  DataConfig d;
  const auto data = synthetic_dataset(d, mc.num_points, 2, 1);  // labels 0..3
  FinetuneConfig fc;
  fc.epochs = 2;
  fc.warmup_epochs = 1;
  EXPECT_THROW(finetune_classify(model, head, data, {}, fc, 1), ConfigError);
}

TEST(Finetune, FitsASmallSeparableSet) {
  const auto mc = tiny_model_config();
  MaskedAutoencoder model(mc, 1);
  auto head = ClassifierHead::create(model.params(), "cls", 2 * mc.dims.back(), mc.head_hidden, 4);
  DataConfig d;
  const auto train = synthetic_dataset(d, mc.num_points, 8, 1);
  FinetuneConfig fc;
  fc.epochs = 40;
  fc.batch_size = 8;
  fc.warmup_epochs = 2;
  fc.base_lr = 3e-3;
  fc.augment = false;
  const auto r = finetune_classify(model, head, train, {}, fc, 2);
  EXPECT_EQ(r.train_accuracy, 1.0);
  EXPECT_EQ(r.log.entries.size(), 160u);
  EXPECT_TRUE(r.log.entries.front().accuracy.has_value());
}

TEST(FewShot, InsufficientSamplesAndSingleTrial) {
  const auto mc = tiny_model_config();
  MaskedAutoencoder model(mc, 1);
  DataConfig d;
  d.kinds = {"sphere", "cube", "torus"};
  const auto data = synthetic_dataset(d, mc.num_points, 12, 1);
  FinetuneConfig fc;
  fc.way = 3;
  fc.shot = 2;
  fc.query = 10;
  fc.trials = 1;
  fc.fewshot_epochs = 30;
  fc.base_lr = 1e-2;
  const auto r = few_shot_eval(model, data, fc, 4);
  ASSERT_EQ(r.accuracies.size(), 1u);
  EXPECT_EQ(r.stddev, 0.0);
  fc.way = 4;
  EXPECT_THROW(few_shot_eval(model, data, fc, 4), ArgumentError);
  fc.way = 3;
  fc.query = 11;
  EXPECT_THROW(few_shot_eval(model, data, fc, 4), ArgumentError);
}

TEST(FewShot, RandomBackboneProbeBeatsChance) {
  const auto mc = tiny_model_config();
  MaskedAutoencoder model(mc, 3);
  DataConfig d;
  d.kinds = {"sphere", "cube", "torus", "cylinder", "cone"};
  const auto data = synthetic_dataset(d, mc.num_points, 30, 2);
  FinetuneConfig fc;
  fc.trials = 3;
  fc.fewshot_epochs = 100;
  fc.base_lr = 1e-2;
  const auto r = few_shot_eval(model, data, fc, 5);
  EXPECT_GT(r.mean, 0.4);
}
