#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "../oracles.hpp"
#include "mslr/backbone.hpp"
#include "mslr/embedding.hpp"
#include "mslr/error.hpp"
#include "mslr/ops.hpp"
#include "mslr/shapes.hpp"

using namespace mslr;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

void zero(Tensor t) { t.assign(std::vector<double>(t.numel(), 0.0)); }

PointCloud sample(const std::string& kind, std::size_t n, std::uint64_t seed) {
  return normalize(gen_shape({kind, std::max<std::size_t>(n, 64), 0.01, seed, 0}));
}

ScalePyramid tiny_pyramid(const ModelConfig& c, std::uint64_t seed) {
  DataConfig d;
  d.kinds = {"torus"};
  return build_scale_pyramid(normalize(synthetic_dataset(d, c.num_points, 1, seed).front()), c.sizes, c.ks);
}

void expect_bitwise(const Tensor& a, const Tensor& b) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a[i], b[i]) << "entry " << i;
}

}  // namespace

TEST(LA, PreservesShapeAtFullWidth) {
  ParamStore store(1);
  auto la = LAParams::create(store, "la", 96, 5, 32);
  Rng rng(2);
  auto x = random_tensor(rng, {3, 16, 96});
  EXPECT_EQ(la_forward(x, la).shape(), x.shape());
  EXPECT_EQ(la_gate(x, la).shape(), (Shape{3, 96}));
}

TEST(LA, IdentityWhenConvolutionsAreZero) {
  ParamStore store(1);
  auto la = LAParams::create(store, "la", 8, 3, 2);
  for (auto t : {la.avg_kernel, la.avg_bias, la.max_kernel, la.max_bias}) zero(t);
  Rng rng(3);
  auto x = random_tensor(rng, {2, 5, 8});
  expect_bitwise(la_forward(x, la), x);
  // One branch alone gives the constant gate sigmoid(0).
  auto gate = la_gate(x, la, {true, false});
  for (double g : gate.data()) EXPECT_EQ(g, 0.5);
}

TEST(LA, GateStaysInOpenInterval) {
  ParamStore store(4);
  auto la = LAParams::create(store, "la", 16, 5, 4);
  Rng rng(5);
  auto x = random_tensor(rng, {4, 7, 16}, -20.0, 20.0);
  const auto both = la_gate(x, la);
  for (double g : both.data()) {
    EXPECT_GT(g, 0.0);
    EXPECT_LT(g, 2.0);
  }
  const auto single = la_gate(x, la, {false, true});
  for (double g : single.data()) EXPECT_LT(g, 1.0);
}

TEST(LA, BranchTogglesGiveFourBehaviours) {
  ParamStore store(6);
  auto la = LAParams::create(store, "la", 8, 3, 2);
  Rng rng(7);
  auto x = random_tensor(rng, {2, 5, 8});
  const auto both = la_forward(x, la, {true, true});
  const auto avg = la_forward(x, la, {true, false});
  const auto max = la_forward(x, la, {false, true});
  const auto none = la_forward(x, la, {false, false});
  expect_bitwise(none, x);
  // Both-branch gate is the sum of the single-branch gates.
  const auto g_both = la_gate(x, la, {true, true});
  const auto g_avg = la_gate(x, la, {true, false});
  const auto g_max = la_gate(x, la, {false, true});
  for (std::size_t i = 0; i < g_both.numel(); ++i) EXPECT_NEAR(g_both[i], g_avg[i] + g_max[i], 1e-15);
  EXPECT_NE(avg[0], max[0]);
  EXPECT_NE(both[0], avg[0]);
}

TEST(LA, RejectsBadHyperparameters) {
  ParamStore store(1);
  EXPECT_THROW(LAParams::create(store, "a", 8, 4, 2), ConfigError);
  EXPECT_THROW(LAParams::create(store, "b", 8, 3, 3), ConfigError);
}

TEST(Tokenizer, InvariantToPointOrderWithinPatch) {
  ParamStore store(8);
  auto enc = PatchEncoder::create(store, "embed", 8, 8, 3, 2);
  Rng rng(9);
  auto patches = random_tensor(rng, {3, 6, 3}, -0.2, 0.2);
  std::vector<double> shuffled(patches.data().begin(), patches.data().end());
  const std::vector<std::size_t> perm{4, 2, 5, 0, 3, 1};
  for (std::size_t m = 0; m < 3; ++m)
    for (std::size_t j = 0; j < 6; ++j)
      for (std::size_t d = 0; d < 3; ++d) shuffled[(m * 6 + j) * 3 + d] = patches[(m * 6 + perm[j]) * 3 + d];
  const auto a = tokenize_patches(patches, enc);
  const auto b = tokenize_patches(Tensor::from({3, 6, 3}, shuffled), enc);
  ASSERT_EQ(a.shape(), (Shape{3, 8}));
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-13);
}

TEST(Attention, RowsAreDistributions) {
  ParamStore store(10);
  auto block = BlockParams::create(store, "b", 12, 3);
  Rng rng(11);
  auto x = random_tensor(rng, {5, 12});
  const auto heads = attention_weights(x, block);
  ASSERT_EQ(heads.size(), 3u);
  for (const auto& w : heads) {
    ASSERT_EQ(w.shape(), (Shape{5, 5}));
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 5; ++c) s += w[r * 5 + c];
      EXPECT_NEAR(s, 1.0, 1e-14);
    }
  }
  EXPECT_EQ(transformer_block(x, block).shape(), x.shape());
  EXPECT_THROW(BlockParams::create(store, "c", 10, 3), ConfigError);
}

TEST(Interpolation, WeightsAreConvexInverseDistances) {
  Rng rng(12);
  const auto coarse = oracle::random_points(rng, 6);
  auto fine = oracle::random_points(rng, 10);
  fine.push_back(coarse[2]);
  const auto t = interpolation_weights(fine, coarse, 3);
  ASSERT_EQ(t.k, 3u);
  for (std::size_t i = 0; i < fine.size(); ++i) {
    double s = 0;
    const auto nn = oracle::knn(fine[i], coarse, 3);
    for (std::size_t j = 0; j < 3; ++j) {
      s += t.weight[i * 3 + j];
      EXPECT_EQ(t.index[i * 3 + j], nn[j]);
    }
    EXPECT_NEAR(s, 1.0, 1e-14);
    if (i < 10) {
      const double inv0 = 1.0 / std::sqrt(oracle::d2(fine[i], coarse[nn[0]]));
      double total = 0;
      for (auto j : nn) total += 1.0 / std::sqrt(oracle::d2(fine[i], coarse[j]));
      EXPECT_NEAR(t.weight[i * 3], inv0 / total, 1e-12);
    }
  }
  // A fine point sitting on a coarse point takes (almost) all of its weight.
  EXPECT_GT(t.weight[10 * 3], 1.0 - 1e-6);
  // k larger than the coarse set is clamped.
  EXPECT_EQ(interpolation_weights(fine, std::span(coarse).first(2), 3).k, 2u);
}

TEST(Model, TinyForwardShapes) {
  const auto cfg = tiny_model_config();
  MaskedAutoencoder model(cfg, 1);
  const auto pyramid = tiny_pyramid(cfg, 2);
  const auto plan = mask_and_backproject(pyramid, cfg.mask_ratio, 3);
  const auto enc = encoder_forward(model, pyramid, plan);
  ASSERT_EQ(enc.stages.size(), 2u);
  for (std::size_t s = 0; s < 2; ++s) {
    EXPECT_EQ(enc.stages[s].tokens.shape(), (Shape{plan.visible(s + 1).size(), cfg.dims[s]}));
    EXPECT_EQ(enc.stages[s].indices, plan.visible(s + 1));
  }
  const auto dec = decoder_forward(model, enc, pyramid, plan);
  EXPECT_EQ(dec.tokens.shape(), (Shape{cfg.sizes[1], cfg.dims[1]}));
  EXPECT_EQ(dec.masked_tokens().size(0), plan.masked(2).size());
  const auto step = pretrain_forward(model, pyramid, plan);
  EXPECT_EQ(step.prediction.shape(), (Shape{plan.masked(2).size(), cfg.ks[1], 3}));
  EXPECT_EQ(step.masked_centers, plan.masked(2));
  EXPECT_TRUE(std::isfinite(step.loss.item()));
  EXPECT_EQ(global_feature(model, pyramid).shape(), (Shape{1, 2 * cfg.dims.back()}));
}

TEST(Model, ThreeScaleDecoderRunsTwoStages) {
  ModelConfig cfg = tiny_model_config();
  cfg.num_points = 64;
  cfg.sizes = {32, 16, 8};
  cfg.ks = {4, 4, 4};
  cfg.dims = {8, 16, 16};
  MaskedAutoencoder model(cfg, 2);
  EXPECT_EQ(model.decoder_blocks.size(), 2u);
  EXPECT_EQ(model.propagate.size(), 1u);
  const auto pyramid = build_scale_pyramid(sample("cube", 64, 1), cfg.sizes, cfg.ks);
  const auto plan = mask_and_backproject(pyramid, 0.6, 1);
  const auto step = pretrain_forward(model, pyramid, plan);
  EXPECT_EQ(step.prediction.shape(), (Shape{plan.masked(2).size(), 4, 3}));
}

TEST(Model, EncoderIgnoresMaskedPoints) {
  const auto cfg = tiny_model_config();
  MaskedAutoencoder model(cfg, 4);
  auto pyramid = tiny_pyramid(cfg, 5);
  const auto plan = mask_and_backproject(pyramid, 0.6, 6);
  const auto before = encoder_forward(model, pyramid, plan);

  // Scale-0 points outside every visible scale-1 patch, and masked scale-1
  // centers, are invisible to the encoder.
  std::set<std::size_t> used;
  for (auto c : plan.visible(1))
    for (auto j : pyramid.neighbors(1).row(c)) used.insert(j);
  std::size_t moved = 0;
  for (std::size_t i = 0; i < pyramid.count(0); ++i) {
    if (used.count(i)) continue;
    pyramid.mutable_points(0)[i] = {5.0, -5.0, 5.0};
    ++moved;
  }
  for (auto i : plan.masked(1)) pyramid.mutable_points(1)[i] = {-7.0, 7.0, 0.0};
  ASSERT_GT(moved + plan.masked(1).size(), 0u);

  const auto after = encoder_forward(model, pyramid, plan);
  for (std::size_t s = 0; s < before.stages.size(); ++s) expect_bitwise(after.stages[s].tokens, before.stages[s].tokens);
}

TEST(Model, LossIsUndefinedWithoutMaskedCenters) {
  const auto cfg = tiny_model_config();
  MaskedAutoencoder model(cfg, 1);
  const auto pyramid = tiny_pyramid(cfg, 2);
  const auto plan = mask_and_backproject(pyramid, 0.0, 3);
  EXPECT_THROW(pretrain_forward(model, pyramid, plan), UndefinedLossError);
}

TEST(Model, ZeroScaleHeadAddsItsTerm) {
  auto cfg = tiny_model_config();
  cfg.zero_scale_head = true;
  MaskedAutoencoder model(cfg, 1);
  ASSERT_TRUE(model.zero_head.has_value());
  EXPECT_EQ(model.zero_head->out(), cfg.ks[1] * cfg.ks[0] * 3);
  const auto pyramid = tiny_pyramid(cfg, 2);
  const auto plan = mask_and_backproject(pyramid, 0.6, 3);
  const auto step = pretrain_forward(model, pyramid, plan);
  const auto base = pretrain_loss(step.prediction, pyramid, plan);
  EXPECT_GT(step.loss.item(), base.item());
}

TEST(Model, ParameterNamesAreStable) {
  MaskedAutoencoder model(tiny_model_config(), 1);
  for (const char* name : {"embed.conv_a.weight", "embed.la_a.avg.kernel", "embed.la_b.max.kernel",
                           "encoder.0.pos.fc1.weight", "merge.1.fc1.weight", "decoder.mask_token", "decoder.norm.gamma",
                           "head.recon.weight"}) {
    EXPECT_TRUE(model.params().contains(name)) << name;
  }
}
