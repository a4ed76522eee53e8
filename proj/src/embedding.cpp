#include "mslr/embedding.hpp"

#include <cmath>

#include "mslr/error.hpp"
#include "mslr/ops.hpp"

namespace mslr {

LAParams LAParams::create(ParamStore& store, const std::string& prefix, std::size_t channels, std::size_t window,
                          std::size_t groups) {
  if (window % 2 == 0) throw ConfigError("LA window size must be odd, got " + std::to_string(window));
  if (groups == 0 || channels % groups != 0) {
    throw ConfigError("LA: " + std::to_string(channels) + " channels not divisible into " + std::to_string(groups) +
                      " groups");
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(window));
  LAParams p;
  p.channels = channels;
  p.window = window;
  p.groups = groups;
  p.avg_kernel = store.uniform(prefix + ".avg.kernel", {window}, bound);
  p.avg_bias = store.constant(prefix + ".avg.bias", {1}, 0.0);
  p.avg_scale = store.constant(prefix + ".avg.gn_scale", {channels}, 1.0);
  p.avg_shift = store.constant(prefix + ".avg.gn_shift", {channels}, 0.0);
  p.max_kernel = store.uniform(prefix + ".max.kernel", {window}, bound);
  p.max_bias = store.constant(prefix + ".max.bias", {1}, 0.0);
  p.max_scale = store.constant(prefix + ".max.gn_scale", {channels}, 1.0);
  p.max_shift = store.constant(prefix + ".max.gn_shift", {channels}, 0.0);
  return p;
}

namespace {

// sigma(GN(conv(pooled))) for one branch; pooled is [B x C].
Tensor branch_gate(const Tensor& pooled, const Tensor& kernel, const Tensor& bias, const Tensor& scale,
                   const Tensor& shift, std::size_t groups) {
  const std::size_t b = pooled.size(0), c = pooled.size(1);
  Tensor conv = conv1d_channel(pooled, kernel, bias);
  Tensor normed = group_norm(reshape(conv, {b, c, 1}), groups, scale, shift);
  return sigmoid(reshape(normed, {b, c}));
}

}  // namespace

Tensor la_gate(const Tensor& x, const LAParams& params, LABranches branches) {
  if (x.dim() != 3 || x.size(2) != params.channels) {
    throw DimensionError("LA expects [B x L x " + std::to_string(params.channels) + "], got " + shape_str(x.shape()));
  }
  if (!branches.avg && !branches.max) throw UsageError("la_gate with both branches disabled");
  Tensor gate;
  if (branches.avg) {
    gate = branch_gate(pool_reduce(x, 1, PoolMode::kAvg), params.avg_kernel, params.avg_bias, params.avg_scale,
                       params.avg_shift, params.groups);
  }
  if (branches.max) {
    Tensor wy = branch_gate(pool_reduce(x, 1, PoolMode::kMax), params.max_kernel, params.max_bias, params.max_scale,
                            params.max_shift, params.groups);
    gate = gate.defined() ? add(gate, wy) : wy;
  }
  return gate;
}

Tensor la_forward(const Tensor& x, const LAParams& params, LABranches branches) {
  if (!branches.avg && !branches.max) return x;
  return scale_channels(x, la_gate(x, params, branches));
}

PatchEncoder PatchEncoder::create(ParamStore& store, const std::string& prefix, std::size_t hidden, std::size_t out,
                                  std::size_t window, std::size_t groups) {
  PatchEncoder e;
  e.conv_a = Linear::create(store, prefix + ".conv_a", 3, hidden);
  e.la_a = LAParams::create(store, prefix + ".la_a", hidden, window, groups);
  e.conv_b = Linear::create(store, prefix + ".conv_b", hidden, out);
  e.la_b = LAParams::create(store, prefix + ".la_b", out, window, groups);
  return e;
}

Tensor tokenize_patches(const Tensor& patches, const PatchEncoder& encoder, LABranches branches) {
  if (patches.dim() != 3 || patches.size(2) != 3) {
    throw DimensionError("tokenize_patches: expected [M x k x 3], got " + shape_str(patches.shape()));
  }
  Tensor h = la_forward(encoder.conv_a(patches), encoder.la_a, branches);
  h = gelu(h);
  h = la_forward(encoder.conv_b(h), encoder.la_b, branches);
  return pool_reduce(h, 1, PoolMode::kMax);
}

TokenMerger TokenMerger::create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out) {
  return TokenMerger{Linear::create(store, prefix + ".fc1", in, out), Linear::create(store, prefix + ".fc2", out, out)};
}

TokenBatch merge_tokens(const TokenBatch& lower, const ScalePyramid& pyramid, const MaskPlan& plan,
                        const TokenMerger& merger) {
  const std::size_t scale = lower.scale + 1;
  const auto& table = pyramid.neighbors(scale);
  const std::size_t lower_count = pyramid.count(lower.scale);
  if (lower.indices.size() != lower.tokens.size(0)) throw ConsistencyError("token batch rows and indices differ");

  constexpr std::size_t kAbsent = static_cast<std::size_t>(-1);
  std::vector<std::size_t> row_of(lower_count, kAbsent);
  for (std::size_t r = 0; r < lower.indices.size(); ++r) row_of[lower.indices[r]] = r;

  const auto& centers = plan.visible(scale);
  if (centers.empty()) throw ConsistencyError("no visible centers at scale " + std::to_string(scale));
  std::vector<std::size_t> gather;
  gather.reserve(centers.size() * table.cols);
  for (auto c : centers) {
    for (auto nb : table.row(c)) {
      if (row_of[nb] == kAbsent) {
        throw ConsistencyError("scale-" + std::to_string(scale) + " center " + std::to_string(c) +
                               " references token " + std::to_string(nb) + " missing at scale " +
                               std::to_string(lower.scale));
      }
      gather.push_back(row_of[nb]);
    }
  }
  Tensor g = gather_rows(lower.tokens, gather);
  Tensor h = merger.fc2(gelu(merger.fc1(g)));
  h = reshape(h, {centers.size(), table.cols, merger.fc2.out()});

  TokenBatch out;
  out.tokens = pool_reduce(h, 1, PoolMode::kMax);
  out.indices = centers;
  const auto pts = pyramid.points(scale);
  for (auto c : centers) out.coords.push_back(pts[c]);
  out.scale = scale;
  return out;
}

PositionalEmbedding PositionalEmbedding::create(ParamStore& store, const std::string& prefix, std::size_t width) {
  return PositionalEmbedding{Linear::create(store, prefix + ".fc1", 3, width),
                             Linear::create(store, prefix + ".fc2", width, width)};
}

Tensor PositionalEmbedding::operator()(std::span<const Point3> coords) const {
  return fc2(gelu(fc1(points_tensor(coords))));
}

}  // namespace mslr
