#include "mslr/backbone.hpp"

#include <algorithm>
#include <cmath>

#include "mslr/error.hpp"
#include "mslr/ops.hpp"

namespace mslr {

BlockParams BlockParams::create(ParamStore& store, const std::string& prefix, std::size_t width, std::size_t heads) {
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("transformer width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  BlockParams b;
  b.norm1 = LayerNorm::create(store, prefix + ".norm1", width);
  b.qkv = Linear::create(store, prefix + ".qkv", width, 3 * width);
  b.proj = Linear::create(store, prefix + ".proj", width, width);
  b.norm2 = LayerNorm::create(store, prefix + ".norm2", width);
  b.fc1 = Linear::create(store, prefix + ".fc1", width, 4 * width);
  b.fc2 = Linear::create(store, prefix + ".fc2", 4 * width, width);
  b.heads = heads;
  return b;
}

namespace {

struct HeadViews {
  std::vector<Tensor> probs;
  std::vector<Tensor> outputs;
};

HeadViews attend(const Tensor& normed, const BlockParams& block) {
  const std::size_t width = normed.size(1);
  const std::size_t d = width / block.heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor qkv = block.qkv(normed);
  HeadViews views;
  for (std::size_t h = 0; h < block.heads; ++h) {
    Tensor q = slice_cols(qkv, h * d, d);
    Tensor k = slice_cols(qkv, width + h * d, d);
    Tensor v = slice_cols(qkv, 2 * width + h * d, d);
    Tensor p = softmax(scale(matmul_nt(q, k), inv_sqrt_d), 1);
    views.outputs.push_back(matmul(p, v));
    views.probs.push_back(p);
  }
  return views;
}

}  // namespace

Tensor transformer_block(const Tensor& tokens, const BlockParams& block) {
  if (tokens.dim() != 2 || tokens.size(1) != block.norm1.gamma.size(0)) {
    throw DimensionError("transformer_block: tokens " + shape_str(tokens.shape()) + " do not match block width");
  }
  auto views = attend(block.norm1(tokens), block);
  Tensor x = add(tokens, block.proj(concat_cols(views.outputs)));
  Tensor ffn = block.fc2(gelu(block.fc1(block.norm2(x))));
  return add(x, ffn);
}

std::vector<Tensor> attention_weights(const Tensor& tokens, const BlockParams& block) {
  return attend(block.norm1(tokens), block).probs;
}

InterpolationTable interpolation_weights(std::span<const Point3> fine, std::span<const Point3> coarse,
                                         std::size_t k) {
  if (coarse.empty()) throw ArgumentError("token propagation needs at least one coarse token");
  if (fine.empty()) throw ArgumentError("token propagation needs at least one fine position");
  k = std::min(k, coarse.size());
  const IndexTable nn = knn_indices(fine, coarse, k);
  InterpolationTable table{k, nn.values, std::vector<double>(nn.values.size())};
  for (std::size_t f = 0; f < fine.size(); ++f) {
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double d = std::max(std::sqrt(squared_distance(fine[f], coarse[nn.values[f * k + j]])), 1e-8);
      table.weight[f * k + j] = 1.0 / d;
      total += 1.0 / d;
    }
    for (std::size_t j = 0; j < k; ++j) table.weight[f * k + j] /= total;
  }
  return table;
}

Tensor token_propagate(const Tensor& coarse_tokens, std::span<const Point3> coarse_coords,
                       std::span<const Point3> fine_coords, std::size_t k, const Linear& projection) {
  if (coarse_coords.empty()) throw ArgumentError("token propagation needs at least one coarse token");
  if (coarse_tokens.size(0) != coarse_coords.size()) {
    throw DimensionError("token_propagate: token rows and coarse coordinates differ");
  }
  const auto table = interpolation_weights(fine_coords, coarse_coords, k);
  return projection(weighted_rows(coarse_tokens, table.index, table.weight, table.k));
}

MaskedAutoencoder::MaskedAutoencoder(const ModelConfig& config, std::uint64_t seed) : config_(config), store_(seed) {
  config_.validate();
  const std::size_t s = config_.scales();
  const auto& dims = config_.dims;
  embed = PatchEncoder::create(store_, "embed", config_.resolved_embed_hidden(), dims[0], config_.la_window,
                               config_.la_groups);
  for (std::size_t i = 0; i < s; ++i) {
    const std::string stage = "encoder." + std::to_string(i);
    encoder_pos.push_back(PositionalEmbedding::create(store_, stage + ".pos", dims[i]));
    std::vector<BlockParams> blocks;
    for (std::size_t b = 0; b < config_.encoder_blocks; ++b) {
      blocks.push_back(BlockParams::create(store_, stage + ".block" + std::to_string(b), dims[i], config_.heads));
    }
    encoder_blocks.push_back(std::move(blocks));
    if (i + 1 < s) mergers.push_back(TokenMerger::create(store_, "merge." + std::to_string(i + 1), dims[i], dims[i + 1]));
  }
  encoder_norm = LayerNorm::create(store_, "encoder.norm", dims[s - 1]);
  mask_token = store_.normal("decoder.mask_token", {dims[s - 1]}, 0.02);
  for (std::size_t j = 0; j + 1 < s; ++j) {
    const std::size_t scale = s - j;  // 1-based scale of this decoder stage
    const std::size_t width = dims[scale - 1];
    const std::string stage = "decoder." + std::to_string(j);
    decoder_pos.push_back(PositionalEmbedding::create(store_, stage + ".pos", width));
    std::vector<BlockParams> blocks;
    for (std::size_t b = 0; b < config_.decoder_blocks; ++b) {
      blocks.push_back(BlockParams::create(store_, stage + ".block" + std::to_string(b), width, config_.heads));
    }
    decoder_blocks.push_back(std::move(blocks));
    if (j + 2 < s) propagate.push_back(Linear::create(store_, stage + ".propagate", width, dims[scale - 2]));
  }
  decoder_norm = LayerNorm::create(store_, "decoder.norm", dims[1]);
  head = Linear::create(store_, "head.recon", dims[1], config_.ks[1] * 3);
  if (config_.zero_scale_head) {
    zero_head = Linear::create(store_, "head.zero_scale", dims[1], config_.ks[1] * config_.ks[0] * 3);
  }
}

EncoderOutput encoder_forward(const MaskedAutoencoder& model, const ScalePyramid& pyramid, const MaskPlan& plan) {
  const auto& cfg = model.config();
  const std::size_t s = cfg.scales();
  if (pyramid.scales() != s || plan.scales() != s) {
    throw ConsistencyError("pyramid/mask plan scale count differs from the model");
  }
  EncoderOutput out;
  TokenBatch batch;
  batch.scale = 1;
  batch.indices = plan.visible(1);
  if (batch.indices.empty()) throw ConsistencyError("no visible scale-1 centers");
  const auto p1 = pyramid.points(1);
  for (auto c : batch.indices) batch.coords.push_back(p1[c]);
  batch.tokens = tokenize_patches(gather_patches(pyramid, 1, batch.indices), model.embed, model.branches());

  for (std::size_t i = 0; i < s; ++i) {
    if (i > 0) batch = merge_tokens(out.stages.back(), pyramid, plan, model.mergers[i - 1]);
    Tensor x = add(batch.tokens, model.encoder_pos[i](batch.coords));
    for (const auto& block : model.encoder_blocks[i]) x = transformer_block(x, block);
    batch.tokens = x;
    out.stages.push_back(batch);
  }
  return out;
}

Tensor DecoderOutput::masked_tokens() const {
  if (masked.empty()) throw UndefinedLossError("no masked positions at scale 2");
  return gather_rows(tokens, masked);
}

Tensor DecoderOutput::visible_tokens() const { return gather_rows(tokens, visible); }

DecoderOutput decoder_forward(const MaskedAutoencoder& model, const EncoderOutput& encoded,
                              const ScalePyramid& pyramid, const MaskPlan& plan) {
  const auto& cfg = model.config();
  const std::size_t s = cfg.scales();
  const TokenBatch& top = encoded.stages.back();
  const std::size_t n_top = pyramid.count(s);
  const std::size_t width = cfg.dims[s - 1];

  // Scale-S sequence: encoder tokens at visible centers, the shared mask token elsewhere.
  const std::size_t filler = top.indices.size();
  std::vector<std::size_t> order(n_top, filler);
  for (std::size_t r = 0; r < top.indices.size(); ++r) order[top.indices[r]] = r;
  Tensor x = gather_rows(concat_rows({top.tokens, reshape(model.mask_token, {1, width})}), order);

  for (std::size_t j = 0; j + 1 < s; ++j) {
    const std::size_t scale = s - j;
    x = add(x, model.decoder_pos[j](pyramid.points(scale)));
    for (const auto& block : model.decoder_blocks[j]) x = transformer_block(x, block);
    if (j + 2 < s) {
      x = token_propagate(x, pyramid.points(scale), pyramid.points(scale - 1), cfg.interp_k, model.propagate[j]);
    }
  }
  DecoderOutput out;
  out.tokens = model.decoder_norm(x);
  out.visible = plan.visible(2);
  out.masked = plan.masked(2);
  return out;
}

Tensor reconstruction_head(const Tensor& masked_tokens, const Linear& head, std::size_t k) {
  if (head.out() != k * 3) throw DimensionError("reconstruction head width does not equal k * 3");
  return reshape(head(masked_tokens), {masked_tokens.size(0), k, 3});
}

Tensor pretrain_loss(const Tensor& pred, const ScalePyramid& pyramid, const MaskPlan& plan) {
  const auto& masked = plan.masked(2);
  if (masked.empty()) throw UndefinedLossError("pretraining loss needs at least one masked scale-2 center");
  const Tensor truth = gather_patches(pyramid, 2, masked);
  if (pred.dim() != 3 || pred.size(0) != masked.size() || pred.size(2) != 3) {
    throw DimensionError("prediction " + shape_str(pred.shape()) + " does not match " +
                         std::to_string(masked.size()) + " masked centers");
  }
  return patch_chamfer_mean(pred, truth);
}

Tensor zero_scale_loss(const Tensor& pred, const ScalePyramid& pyramid, const MaskPlan& plan) {
  const auto& masked = plan.masked(2);
  if (masked.empty()) throw UndefinedLossError("pretraining loss needs at least one masked scale-2 center");
  const auto& i2 = pyramid.neighbors(2);
  const auto& i1 = pyramid.neighbors(1);
  const auto p0 = pyramid.points(0);
  const auto p2 = pyramid.points(2);
  std::vector<double> flat;
  for (auto c : masked)
    for (auto j : i2.row(c))
      for (auto q : i1.row(j))
        for (int d = 0; d < 3; ++d) flat.push_back(p0[q][d] - p2[c][d]);
  const Tensor truth = Tensor::from({masked.size(), i2.cols * i1.cols, 3}, std::move(flat));
  return patch_chamfer_mean(pred, truth);
}

PretrainStep pretrain_forward(const MaskedAutoencoder& model, const ScalePyramid& pyramid, const MaskPlan& plan) {
  if (plan.masked(2).empty()) throw UndefinedLossError("pretraining loss needs at least one masked scale-2 center");
  const auto encoded = encoder_forward(model, pyramid, plan);
  const auto decoded = decoder_forward(model, encoded, pyramid, plan);
  const Tensor masked = decoded.masked_tokens();
  PretrainStep step;
  step.prediction = reconstruction_head(masked, model.head, model.config().ks[1]);
  step.loss = pretrain_loss(step.prediction, pyramid, plan);
  if (model.zero_head) {
    const std::size_t kk = model.config().ks[1] * model.config().ks[0];
    Tensor zero_pred = reshape((*model.zero_head)(masked), {masked.size(0), kk, 3});
    step.loss = add(step.loss, zero_scale_loss(zero_pred, pyramid, plan));
  }
  step.masked_centers = decoded.masked;
  return step;
}

Tensor global_feature(const MaskedAutoencoder& model, const ScalePyramid& pyramid) {
  const MaskPlan full = mask_and_backproject(pyramid, 0.0, 0);
  const auto encoded = encoder_forward(model, pyramid, full);
  Tensor tokens = model.encoder_norm(encoded.stages.back().tokens);
  const std::size_t c = tokens.size(1);
  Tensor mx = reshape(pool_reduce(tokens, 0, PoolMode::kMax), {1, c});
  Tensor avg = reshape(pool_reduce(tokens, 0, PoolMode::kAvg), {1, c});
  return concat_cols({mx, avg});
}

}  // namespace mslr
