#include "mslr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mslr/error.hpp"

namespace mslr {

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (GradientTape::active() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

Tensor make(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

void attach(const Tensor& out, GradientTape::BackwardFn fn) {
  out.impl()->requires_grad = true;
  GradientTape::active()->record(out.impl(), std::move(fn));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw UsageError(std::string(op) + ": undefined tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require_defined(t, op);
  if (t.dim() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i < axis) s.outer *= shape[i];
    else if (i == axis) s.extent = shape[i];
    else s.inner *= shape[i];
  }
  return s;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tensor y = make(a.shape(), std::move(out));
  if (recording({&a, &b})) {
    attach(y, [ai = a.impl(), bi = b.impl()](const std::vector<double>& g) {
      if (ai->requires_grad) {
        auto& ga = ai->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bi->requires_grad) {
        auto& gb = bi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  Tensor y = make(a.shape(), std::move(out));
  if (recording({&a, &b})) {
    attach(y, [ai = a.impl(), bi = b.impl()](const std::vector<double>& g) {
      if (ai->requires_grad) {
        auto& ga = ai->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bi->requires_grad) {
        auto& gb = bi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor y = make(a.shape(), std::move(out));
  if (recording({&a, &b})) {
    attach(y, [ai = a.impl(), bi = b.impl()](const std::vector<double>& g) {
      if (ai->requires_grad) {
        auto& ga = ai->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        auto& gb = bi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& a, double factor) {
  require_defined(a, "scale");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  Tensor y = make(a.shape(), std::move(out));
  if (recording({&a})) {
    attach(y, [ai = a.impl(), factor](const std::vector<double>& g) {
      auto& ga = ai->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return y;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_defined(x, "add_bias");
  require_rank(bias, 1, "add_bias");
  const std::size_t c = bias.size(0);
  if (x.shape().back() != c) {
    throw DimensionError("add_bias: trailing extent of " + shape_str(x.shape()) + " != " + std::to_string(c));
  }
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + bias[i % c];
  Tensor y = make(x.shape(), std::move(out));
  if (recording({&x, &bias})) {
    attach(y, [xi = x.impl(), bi = bias.impl(), c](const std::vector<double>& g) {
      if (xi->requires_grad) {
        auto& gx = xi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bi->requires_grad) {
        auto& gb = bi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
      }
    });
  }
  return y;
}

namespace {

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x n] += a[m x k] * b[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  if (b.size(0) != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  Tensor y = make({m, n}, std::move(out));
  if (recording({&a, &b})) {
    attach(y, [ai = a.impl(), bi = b.impl(), m, k, n](const std::vector<double>& g) {
      if (ai->requires_grad) gemm_nt(g.data(), bi->data.data(), ai->grad_buffer().data(), m, n, k);
      if (bi->requires_grad) gemm_tn(ai->data.data(), g.data(), bi->grad_buffer().data(), m, k, n);
    });
  }
  return y;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(0);
  if (b.size(1) != k) {
    throw DimensionError("matmul_nt: inner extents differ, " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
  Tensor y = make({m, n}, std::move(out));
  if (recording({&a, &b})) {
    attach(y, [ai = a.impl(), bi = b.impl(), m, k, n](const std::vector<double>& g) {
      // da = g * b, db = g^T * a
      if (ai->requires_grad) gemm_nn(g.data(), bi->data.data(), ai->grad_buffer().data(), m, n, k);
      if (bi->requires_grad) gemm_tn(g.data(), ai->data.data(), bi->grad_buffer().data(), m, n, k);
    });
  }
  return y;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.size(0), n = a.size(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  Tensor y = make({n, m}, std::move(out));
  if (recording({&a})) {
    attach(y, [ai = a.impl(), m, n](const std::vector<double>& g) {
      auto& ga = ai->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape.empty() || numel_of(shape) != x.numel() || std::find(shape.begin(), shape.end(), 0) != shape.end()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor y = make(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (recording({&x})) {
    attach(y, [xi = x.impl()](const std::vector<double>& g) {
      auto& gx = xi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return y;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_defined(x, "softmax");
  if (axis >= x.dim()) throw DimensionError("softmax: axis out of range for " + shape_str(x.shape()));
  const auto s = split_axis(x.shape(), axis);
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double mx = x[base];
      for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, x[base + e * s.inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(x[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        total += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= total;
    }
  }
  Tensor y = make(x.shape(), std::move(out));
  if (recording({&x})) {
    attach(y, [xi = x.impl(), yi = y.impl().get(), s](const std::vector<double>& g) {
      auto& gx = xi->grad_buffer();
      const auto& yv = yi->data;
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.extent * s.inner + in;
          double dot = 0.0;
          for (std::size_t e = 0; e < s.extent; ++e) dot += g[base + e * s.inner] * yv[base + e * s.inner];
          for (std::size_t e = 0; e < s.extent; ++e) {
            const std::size_t i = base + e * s.inner;
            gx[i] += yv[i] * (g[i] - dot);
          }
        }
      }
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t n = x.size(0), c = x.size(1);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw DimensionError("layer_norm: affine parameters must be [" + std::to_string(c) + "]");
  }
  std::vector<double> xhat(n * c), out(n * c), inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = x.data().data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[r * c + j] = (row[j] - mu) * inv_std[r];
      out[r * c + j] = xhat[r * c + j] * gamma[j] + beta[j];
    }
  }
  Tensor y = make(x.shape(), std::move(out));
  if (recording({&x, &gamma, &beta})) {
    attach(y, [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), xhat = std::move(xhat),
               inv_std = std::move(inv_std), n, c](const std::vector<double>& g) {
      if (gi->requires_grad || bi->requires_grad) {
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            if (gi->requires_grad) gi->grad_buffer()[j] += g[r * c + j] * xhat[r * c + j];
            if (bi->requires_grad) bi->grad_buffer()[j] += g[r * c + j];
          }
        }
      }
      if (!xi->requires_grad) return;
      auto& gx = xi->grad_buffer();
      const double inv_c = 1.0 / static_cast<double>(c);
      for (std::size_t r = 0; r < n; ++r) {
        double mean_g = 0.0, mean_gx = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          const double gh = g[r * c + j] * gi->data[j];
          mean_g += gh;
          mean_gx += gh * xhat[r * c + j];
        }
        mean_g *= inv_c;
        mean_gx *= inv_c;
        for (std::size_t j = 0; j < c; ++j) {
          const double gh = g[r * c + j] * gi->data[j];
          gx[r * c + j] += inv_std[r] * (gh - mean_g - xhat[r * c + j] * mean_gx);
        }
      }
    });
  }
  return y;
}

Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& scale_t, const Tensor& shift, double eps) {
  require_defined(x, "group_norm");
  if (x.dim() != 2 && x.dim() != 3) {
    throw DimensionError("group_norm: expected [C x L] or [B x C x L], got " + shape_str(x.shape()));
  }
  if (!(eps > 0.0)) throw ConfigError("group_norm: eps must be positive");
  const std::size_t batch = x.dim() == 3 ? x.size(0) : 1;
  const std::size_t c = x.dim() == 3 ? x.size(1) : x.size(0);
  const std::size_t len = x.shape().back();
  if (groups == 0 || c % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                      std::to_string(groups) + " groups");
  }
  if (scale_t.shape() != Shape{c} || shift.shape() != Shape{c}) {
    throw DimensionError("group_norm: affine parameters must be [" + std::to_string(c) + "]");
  }
  const std::size_t per_group = c / groups;
  const std::size_t group_size = per_group * len;
  std::vector<double> xhat(x.numel()), out(x.numel()), inv_std(batch * groups);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t gr = 0; gr < groups; ++gr) {
      const std::size_t base = (b * c + gr * per_group) * len;  // group elements are contiguous
      double mu = 0.0;
      for (std::size_t i = 0; i < group_size; ++i) mu += x[base + i];
      mu /= static_cast<double>(group_size);
      double var = 0.0;
      for (std::size_t i = 0; i < group_size; ++i) var += (x[base + i] - mu) * (x[base + i] - mu);
      var /= static_cast<double>(group_size);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[b * groups + gr] = is;
      for (std::size_t i = 0; i < group_size; ++i) {
        const std::size_t ch = gr * per_group + i / len;
        xhat[base + i] = (x[base + i] - mu) * is;
        out[base + i] = xhat[base + i] * scale_t[ch] + shift[ch];
      }
    }
  }
  Tensor y = make(x.shape(), std::move(out));
  if (recording({&x, &scale_t, &shift})) {
    attach(y, [xi = x.impl(), si = scale_t.impl(), hi = shift.impl(), xhat = std::move(xhat),
               inv_std = std::move(inv_std), batch, c, len, groups, per_group,
               group_size](const std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t ch = (i / len) % c;
        if (si->requires_grad) si->grad_buffer()[ch] += g[i] * xhat[i];
        if (hi->requires_grad) hi->grad_buffer()[ch] += g[i];
      }
      if (!xi->requires_grad) return;
      auto& gx = xi->grad_buffer();
      const double inv_n = 1.0 / static_cast<double>(group_size);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t gr = 0; gr < groups; ++gr) {
          const std::size_t base = (b * c + gr * per_group) * len;
          double mean_g = 0.0, mean_gx = 0.0;
          for (std::size_t i = 0; i < group_size; ++i) {
            const double gh = g[base + i] * si->data[gr * per_group + i / len];
            mean_g += gh;
            mean_gx += gh * xhat[base + i];
          }
          mean_g *= inv_n;
          mean_gx *= inv_n;
          const double is = inv_std[b * groups + gr];
          for (std::size_t i = 0; i < group_size; ++i) {
            const double gh = g[base + i] * si->data[gr * per_group + i / len];
            gx[base + i] += is * (gh - mean_g - xhat[base + i] * mean_gx);
          }
        }
      }
    });
  }
  return y;
}

Tensor conv1d_channel(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  require_rank(x, 2, "conv1d_channel");
  require_rank(kernel, 1, "conv1d_channel");
  const std::size_t window = kernel.size(0);
  if (window % 2 == 0) throw ConfigError("conv1d_channel: window size must be odd, got " + std::to_string(window));
  if (bias.shape() != Shape{1}) throw DimensionError("conv1d_channel: bias must be [1]");
  const std::size_t batch = x.size(0), c = x.size(1);
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  std::vector<double> out(batch * c);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = bias[0];
      for (std::size_t d = 0; d < window; ++d) {
        const auto src = static_cast<std::ptrdiff_t>(ch) + static_cast<std::ptrdiff_t>(d) - half;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(c)) continue;
        acc += kernel[d] * x[b * c + static_cast<std::size_t>(src)];
      }
      out[b * c + ch] = acc;
    }
  }
  Tensor y = make(x.shape(), std::move(out));
  if (recording({&x, &kernel, &bias})) {
    attach(y, [xi = x.impl(), ki = kernel.impl(), bi = bias.impl(), batch, c, window,
               half](const std::vector<double>& g) {
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double go = g[b * c + ch];
          if (bi->requires_grad) bi->grad_buffer()[0] += go;
          for (std::size_t d = 0; d < window; ++d) {
            const auto src = static_cast<std::ptrdiff_t>(ch) + static_cast<std::ptrdiff_t>(d) - half;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(c)) continue;
            const std::size_t si = b * c + static_cast<std::size_t>(src);
            if (ki->requires_grad) ki->grad_buffer()[d] += go * xi->data[si];
            if (xi->requires_grad) xi->grad_buffer()[si] += go * ki->data[d];
          }
        }
      }
    });
  }
  return y;
}

Tensor pool_reduce(const Tensor& x, std::size_t axis, PoolMode mode) {
  require_defined(x, "pool_reduce");
  if (axis >= x.dim()) throw DimensionError("pool_reduce: axis out of range for " + shape_str(x.shape()));
  const auto s = split_axis(x.shape(), axis);
  Shape out_shape;
  for (std::size_t i = 0; i < x.dim(); ++i)
    if (i != axis) out_shape.push_back(x.shape()[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> out(s.outer * s.inner);
  std::vector<std::size_t> argmax;
  if (mode == PoolMode::kMax) argmax.resize(out.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      const std::size_t oi = o * s.inner + in;
      if (mode == PoolMode::kMax) {
        std::size_t best = base;
        for (std::size_t e = 1; e < s.extent; ++e) {
          const std::size_t i = base + e * s.inner;
          if (x[i] > x[best]) best = i;
        }
        argmax[oi] = best;
        out[oi] = x[best];
      } else {
        double acc = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) acc += x[base + e * s.inner];
        out[oi] = acc / static_cast<double>(s.extent);
      }
    }
  }
  Tensor y = make(std::move(out_shape), std::move(out));
  if (recording({&x})) {
    attach(y, [xi = x.impl(), s, mode, argmax = std::move(argmax)](const std::vector<double>& g) {
      auto& gx = xi->grad_buffer();
      if (mode == PoolMode::kMax) {
        for (std::size_t oi = 0; oi < g.size(); ++oi) gx[argmax[oi]] += g[oi];
        return;
      }
      const double inv = 1.0 / static_cast<double>(s.extent);
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const double go = g[o * s.inner + in] * inv;
          const std::size_t base = o * s.extent * s.inner + in;
          for (std::size_t e = 0; e < s.extent; ++e) gx[base + e * s.inner] += go;
        }
      }
    });
  }
  return y;
}

Tensor activation(const Tensor& x, Activation kind) {
  require_defined(x, "activation");
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x[i];
    switch (kind) {
      case Activation::kSigmoid:
        out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        break;
      case Activation::kRelu:
        out[i] = v > 0.0 ? v : 0.0;
        break;
      case Activation::kGelu:
        out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
        break;
    }
  }
  Tensor y = make(x.shape(), std::move(out));
  if (recording({&x})) {
    attach(y, [xi = x.impl(), yi = y.impl().get(), kind](const std::vector<double>& g) {
      auto& gx = xi->grad_buffer();
      const auto& xv = xi->data;
      for (std::size_t i = 0; i < g.size(); ++i) {
        double d = 0.0;
        switch (kind) {
          case Activation::kSigmoid: {
            const double s = yi->data[i];
            d = s * (1.0 - s);
            break;
          }
          case Activation::kRelu:
            d = xv[i] > 0.0 ? 1.0 : 0.0;
            break;
          case Activation::kGelu: {
            const double v = xv[i];
            const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
            d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
            break;
          }
        }
        gx[i] += g[i] * d;
      }
    });
  }
  return y;
}

Tensor scale_channels(const Tensor& x, const Tensor& gate) {
  require_rank(x, 3, "scale_channels");
  require_rank(gate, 2, "scale_channels");
  const std::size_t batch = x.size(0), len = x.size(1), c = x.size(2);
  if (gate.size(0) != batch || gate.size(1) != c) {
    throw DimensionError("scale_channels: gate " + shape_str(gate.shape()) + " does not fit " + shape_str(x.shape()));
  }
  std::vector<double> out(x.numel());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t i = (b * len + l) * c + ch;
        out[i] = x[i] * gate[b * c + ch];
      }
  Tensor y = make(x.shape(), std::move(out));
  if (recording({&x, &gate})) {
    attach(y, [xi = x.impl(), gi = gate.impl(), batch, len, c](const std::vector<double>& g) {
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t l = 0; l < len; ++l)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t i = (b * len + l) * c + ch;
            if (xi->requires_grad) xi->grad_buffer()[i] += g[i] * gi->data[b * c + ch];
            if (gi->requires_grad) gi->grad_buffer()[b * c + ch] += g[i] * xi->data[i];
          }
    });
  }
  return y;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
  require_defined(x, "gather_rows");
  if (index.empty()) throw DimensionError("gather_rows: empty index set");
  const std::size_t rows = x.size(0);
  const std::size_t width = x.numel() / rows;
  Shape shape = x.shape();
  shape[0] = index.size();
  std::vector<double> out(index.size() * width);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= rows) {
      throw DimensionError("gather_rows: index " + std::to_string(index[r]) + " out of range " + std::to_string(rows));
    }
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(index[r] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  Tensor y = make(std::move(shape), std::move(out));
  if (recording({&x})) {
    attach(y, [xi = x.impl(), idx = std::vector<std::size_t>(index.begin(), index.end()),
               width](const std::vector<double>& g) {
      auto& gx = xi->grad_buffer();
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < width; ++j) gx[idx[r] * width + j] += g[r * width + j];
    });
  }
  return y;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  Shape shape = parts.front().shape();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    Shape tail(p.shape().begin() + 1, p.shape().end());
    if (!std::equal(tail.begin(), tail.end(), shape.begin() + 1, shape.end()) || p.dim() != shape.size()) {
      throw DimensionError("concat_rows: trailing extents differ: " + shape_str(p.shape()) + " vs " + shape_str(shape));
    }
    rows += p.size(0);
  }
  shape[0] = rows;
  std::vector<double> out;
  out.reserve(numel_of(shape));
  bool any_grad = false;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    any_grad = any_grad || p.requires_grad();
  }
  Tensor y = make(std::move(shape), std::move(out));
  if (GradientTape::active() != nullptr && any_grad) {
    std::vector<ImplPtr> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    attach(y, [impls = std::move(impls)](const std::vector<double>& g) {
      std::size_t offset = 0;
      for (const auto& pi : impls) {
        if (pi->requires_grad) {
          auto& gp = pi->grad_buffer();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
        }
        offset += pi->data.size();
      }
    });
  }
  return y;
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank(x, 2, "slice_cols");
  const std::size_t n = x.size(0), c = x.size(1);
  if (count == 0 || start + count > c) {
    throw DimensionError("slice_cols: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") outside " + std::to_string(c) + " columns");
  }
  std::vector<double> out(n * count);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < count; ++j) out[r * count + j] = x[r * c + start + j];
  Tensor y = make({n, count}, std::move(out));
  if (recording({&x})) {
    attach(y, [xi = x.impl(), n, c, start, count](const std::vector<double>& g) {
      auto& gx = xi->grad_buffer();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < count; ++j) gx[r * c + start + j] += g[r * count + j];
    });
  }
  return y;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t n = parts.front().size(0);
  std::size_t total = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.size(0) != n) throw DimensionError("concat_cols: row counts differ");
    total += p.size(1);
    any_grad = any_grad || p.requires_grad();
  }
  std::vector<double> out(n * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.size(1);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < w; ++j) out[r * total + offset + j] = p[r * w + j];
    offset += w;
  }
  Tensor y = make({n, total}, std::move(out));
  if (GradientTape::active() != nullptr && any_grad) {
    std::vector<ImplPtr> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    attach(y, [impls = std::move(impls), n, total](const std::vector<double>& g) {
      std::size_t off = 0;
      for (const auto& pi : impls) {
        const std::size_t w = pi->shape[1];
        if (pi->requires_grad) {
          auto& gp = pi->grad_buffer();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < w; ++j) gp[r * w + j] += g[r * total + off + j];
        }
        off += w;
      }
    });
  }
  return y;
}

Tensor weighted_rows(const Tensor& x, std::span<const std::size_t> index, std::span<const double> weight,
                     std::size_t k) {
  require_rank(x, 2, "weighted_rows");
  if (k == 0 || index.empty() || index.size() % k != 0 || weight.size() != index.size()) {
    throw DimensionError("weighted_rows: index/weight tables must both be [M x k]");
  }
  const std::size_t rows = x.size(0), c = x.size(1), m = index.size() / k;
  std::vector<double> out(m * c, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t src = index[r * k + j];
      if (src >= rows) throw DimensionError("weighted_rows: index out of range");
      const double w = weight[r * k + j];
      for (std::size_t ch = 0; ch < c; ++ch) out[r * c + ch] += w * x[src * c + ch];
    }
  }
  Tensor y = make({m, c}, std::move(out));
  if (recording({&x})) {
    attach(y, [xi = x.impl(), idx = std::vector<std::size_t>(index.begin(), index.end()),
               w = std::vector<double>(weight.begin(), weight.end()), m, k, c](const std::vector<double>& g) {
      auto& gx = xi->grad_buffer();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < k; ++j)
          for (std::size_t ch = 0; ch < c; ++ch) gx[idx[r * k + j] * c + ch] += w[r * k + j] * g[r * c + ch];
    });
  }
  return y;
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor y = make({1}, {acc});
  if (recording({&x})) {
    attach(y, [xi = x.impl()](const std::vector<double>& g) {
      auto& gx = xi->grad_buffer();
      for (auto& v : gx) v += g[0];
    });
  }
  return y;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t b = logits.size(0), k = logits.size(1);
  if (labels.size() != b) throw DimensionError("cross_entropy: label count differs from batch");
  std::vector<double> prob(b * k);
  double loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k) {
      throw ArgumentError("cross_entropy: label " + std::to_string(labels[r]) + " outside [0, " +
                          std::to_string(k) + ")");
    }
    double mx = logits[r * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits[r * k + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      prob[r * k + j] = std::exp(logits[r * k + j] - mx);
      total += prob[r * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) prob[r * k + j] /= total;
    loss += -(logits[r * k + static_cast<std::size_t>(labels[r])] - mx - std::log(total));
  }
  loss /= static_cast<double>(b);
  Tensor y = make({1}, {loss});
  if (recording({&logits})) {
    attach(y, [li = logits.impl(), prob = std::move(prob), lab = std::vector<int>(labels.begin(), labels.end()),
               b, k](const std::vector<double>& g) {
      auto& gl = li->grad_buffer();
      const double s = g[0] / static_cast<double>(b);
      for (std::size_t r = 0; r < b; ++r)
        for (std::size_t j = 0; j < k; ++j) {
          const double target = static_cast<int>(j) == lab[r] ? 1.0 : 0.0;
          gl[r * k + j] += s * (prob[r * k + j] - target);
        }
    });
  }
  return y;
}

}  // namespace mslr
