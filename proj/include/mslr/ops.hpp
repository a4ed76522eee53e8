#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mslr/tensor.hpp"

// Differentiable tensor operations. Every function records a backward rule on
// the active GradientTape when at least one input requires gradients.
namespace mslr {

enum class PoolMode { kMax, kAvg };
enum class Activation { kSigmoid, kGelu, kRelu };

inline constexpr double kNormEps = 1e-5;

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// x[..., C] + bias[C]
Tensor add_bias(const Tensor& x, const Tensor& bias);

// [m x k] * [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m x k] * [n x k]^T, avoids materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor reshape(const Tensor& x, Shape shape);

Tensor softmax(const Tensor& x, std::size_t axis);

// Row-wise normalization of [N x C] with affine gamma/beta [C].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kNormEps);

// x is [C x L] (a single sample) or [B x C x L]. Statistics are taken per
// sample over each group of C/groups consecutive channels and all L positions.
Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& scale, const Tensor& shift,
                  double eps = kNormEps);

// Convolution along the channel axis of pooled descriptors. x is [B x C]
// (B independent descriptors, use B = 1 for a single one); kernel is [lambda]
// with lambda odd and zero padding (lambda - 1) / 2; bias is [1].
Tensor conv1d_channel(const Tensor& x, const Tensor& kernel, const Tensor& bias);

// Reduces one axis. Max routes the gradient to the first (lowest-index) maximum.
// The axis is dropped from the result; a rank-1 input yields shape [1].
Tensor pool_reduce(const Tensor& x, std::size_t axis, PoolMode mode);

Tensor activation(const Tensor& x, Activation kind);
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::kSigmoid); }
inline Tensor gelu(const Tensor& x) { return activation(x, Activation::kGelu); }
inline Tensor relu(const Tensor& x) { return activation(x, Activation::kRelu); }

// x[B x L x C] * gate[B x C], gate broadcast over L.
Tensor scale_channels(const Tensor& x, const Tensor& gate);

// Rows of x (first axis) selected by index; repeats allowed.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);

// out[m] = sum_j weight[m*k + j] * x[index[m*k + j]], x is [N x C].
Tensor weighted_rows(const Tensor& x, std::span<const std::size_t> index, std::span<const double> weight,
                     std::size_t k);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Mean softmax cross-entropy of logits [B x K] against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace mslr
