#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "mslr/config.hpp"
#include "mslr/embedding.hpp"
#include "mslr/geometry.hpp"
#include "mslr/nn.hpp"

namespace mslr {

// Pre-norm transformer block: x + MHSA(LN(x)), then x + FFN(LN(x)) with a
// C -> 4C -> C GELU feed-forward.
struct BlockParams {
  LayerNorm norm1;
  Linear qkv;  // C -> 3C
  Linear proj;
  LayerNorm norm2;
  Linear fc1;
  Linear fc2;
  std::size_t heads = 1;

  static BlockParams create(ParamStore& store, const std::string& prefix, std::size_t width, std::size_t heads);
};

Tensor transformer_block(const Tensor& tokens, const BlockParams& block);

// Per-head attention probabilities [N x N] of the block's self-attention, for
// inspection and tests.
std::vector<Tensor> attention_weights(const Tensor& tokens, const BlockParams& block);

// Inverse-distance interpolation table: for each fine point the k nearest
// coarse points and convex weights (1/d) / sum(1/d), d clamped at 1e-8.
struct InterpolationTable {
  std::size_t k = 0;
  std::vector<std::size_t> index;
  std::vector<double> weight;
};

InterpolationTable interpolation_weights(std::span<const Point3> fine, std::span<const Point3> coarse,
                                         std::size_t k);

// Spreads coarse tokens [Nc x C] onto fine positions and projects to the
// fine-scale width.
Tensor token_propagate(const Tensor& coarse_tokens, std::span<const Point3> coarse_coords,
                       std::span<const Point3> fine_coords, std::size_t k, const Linear& projection);

class MaskedAutoencoder {
 public:
  MaskedAutoencoder(const ModelConfig& config, std::uint64_t seed);
  MaskedAutoencoder(const MaskedAutoencoder&) = delete;
  MaskedAutoencoder& operator=(const MaskedAutoencoder&) = delete;

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  LABranches branches() const { return {config_.la_avg_branch, config_.la_max_branch}; }

  PatchEncoder embed;
  std::vector<TokenMerger> mergers;                        // [S - 1], merger i feeds stage i + 1
  std::vector<PositionalEmbedding> encoder_pos;            // [S]
  std::vector<std::vector<BlockParams>> encoder_blocks;    // [S][encoder_blocks]
  LayerNorm encoder_norm;                                  // final-stage output, for classification
  Tensor mask_token;                                       // [C_S]
  std::vector<PositionalEmbedding> decoder_pos;            // [S - 1]
  std::vector<std::vector<BlockParams>> decoder_blocks;    // [S - 1][decoder_blocks]
  std::vector<Linear> propagate;                           // [S - 2]
  LayerNorm decoder_norm;
  Linear head;                                             // C_2 -> k_2 * 3
  std::optional<Linear> zero_head;                         // C_2 -> k_2 * k_1 * 3

 private:
  ModelConfig config_;
  ParamStore store_;
};

// Visible tokens of every encoder stage, scale 1 first.
struct EncoderOutput {
  std::vector<TokenBatch> stages;
};

EncoderOutput encoder_forward(const MaskedAutoencoder& model, const ScalePyramid& pyramid, const MaskPlan& plan);

struct DecoderOutput {
  Tensor tokens;  // [N_2 x C_2], rows ordered by scale-2 index
  std::vector<std::size_t> visible;
  std::vector<std::size_t> masked;

  Tensor masked_tokens() const;   // D''
  Tensor visible_tokens() const;  // D'
};

DecoderOutput decoder_forward(const MaskedAutoencoder& model, const EncoderOutput& encoded,
                              const ScalePyramid& pyramid, const MaskPlan& plan);

// [M x C_2] -> [M x k x 3] center-relative neighborhoods.
Tensor reconstruction_head(const Tensor& masked_tokens, const Linear& head, std::size_t k);

// Mean per-patch Chamfer distance between predicted and true scale-1
// neighborhoods of the masked scale-2 centers. Throws UndefinedLossError if
// nothing is masked at scale 2.
Tensor pretrain_loss(const Tensor& pred, const ScalePyramid& pyramid, const MaskPlan& plan);

// Same for the optional scale-0 head: the k_1 input points around each of the
// k_2 scale-1 neighbors.
Tensor zero_scale_loss(const Tensor& pred, const ScalePyramid& pyramid, const MaskPlan& plan);

struct PretrainStep {
  Tensor loss;
  Tensor prediction;  // [M x k_2 x 3]
  std::vector<std::size_t> masked_centers;
};

// Encoder -> decoder -> head -> loss on an already normalized pyramid/plan.
PretrainStep pretrain_forward(const MaskedAutoencoder& model, const ScalePyramid& pyramid, const MaskPlan& plan);

// Global descriptor of a cloud for classification: [1 x 2 C_S], the
// concatenation of max- and mean-pooled final-stage tokens, no masking.
Tensor global_feature(const MaskedAutoencoder& model, const ScalePyramid& pyramid);

}  // namespace mslr
