#pragma once

#include <string>
#include <vector>

#include "mslr/geometry.hpp"
#include "mslr/nn.hpp"
#include "mslr/tensor.hpp"

namespace mslr {

// Which gate branches of the local-attention module are active. Turning both
// off bypasses the module (output = input).
struct LABranches {
  bool avg = true;  // W_x
  bool max = true;  // W_y
};

// Two-branch channel gate. Each branch owns its own channel-axis convolution
// and group-norm affine pair.
struct LAParams {
  std::size_t channels = 0;
  std::size_t window = 0;
  std::size_t groups = 0;
  Tensor avg_kernel, avg_bias, avg_scale, avg_shift;
  Tensor max_kernel, max_bias, max_scale, max_shift;

  static LAParams create(ParamStore& store, const std::string& prefix, std::size_t channels, std::size_t window,
                         std::size_t groups);
};

// Gate values W_x + W_y (or the single active branch) per sample and channel:
// x is [B x L x C], the result is [B x C].
Tensor la_gate(const Tensor& x, const LAParams& params, LABranches branches = {});

// x * gate broadcast over L. Input and output are [B x L x C].
Tensor la_forward(const Tensor& x, const LAParams& params, LABranches branches = {});

// Shared pointwise network turning a k-point patch into one token:
// conv(3 -> hidden) -> LA -> GELU -> conv(hidden -> C_1) -> LA -> max over k.
struct PatchEncoder {
  Linear conv_a;
  LAParams la_a;
  Linear conv_b;
  LAParams la_b;

  static PatchEncoder create(ParamStore& store, const std::string& prefix, std::size_t hidden, std::size_t out,
                             std::size_t window, std::size_t groups);
  std::size_t out_dim() const { return conv_b.out(); }
};

struct TokenBatch {
  Tensor tokens;                     // [N_tok x C]
  std::vector<std::size_t> indices;  // row r lives at this index of its scale
  std::vector<Point3> coords;        // center of each row
  std::size_t scale = 0;
};

// patches: [M x k x 3] center-relative coordinates. Returns [M x C_1].
Tensor tokenize_patches(const Tensor& patches, const PatchEncoder& encoder, LABranches branches = {});

// Shared MLP C_{i-1} -> C_i -> C_i followed by max-pool over gathered tokens.
struct TokenMerger {
  Linear fc1;
  Linear fc2;

  static TokenMerger create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out);
};

// Builds scale-i tokens for the visible scale-i centers from the scale-(i-1)
// visible tokens. Throws ConsistencyError if a referenced lower-scale token is
// absent (mask nesting broken).
TokenBatch merge_tokens(const TokenBatch& lower, const ScalePyramid& pyramid, const MaskPlan& plan,
                        const TokenMerger& merger);

// Learned embedding of raw coordinates: 3 -> C -> C with GELU.
struct PositionalEmbedding {
  Linear fc1;
  Linear fc2;

  static PositionalEmbedding create(ParamStore& store, const std::string& prefix, std::size_t width);
  Tensor operator()(std::span<const Point3> coords) const;
};

}  // namespace mslr
