#include "mslr/nn.hpp"

#include <cmath>

#include "mslr/error.hpp"
#include "mslr/ops.hpp"

namespace mslr {

Tensor ParamStore::add(const std::string& name, Shape shape, std::vector<double> values) {
  if (params_.count(name)) throw ConsistencyError("duplicate parameter " + name);
  Tensor t = Tensor::from(std::move(shape), std::move(values), true);
  params_.emplace(name, t);
  return t;
}

Tensor ParamStore::uniform(const std::string& name, Shape shape, double bound) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = rng_.uniform(-bound, bound);
  return add(name, std::move(shape), std::move(v));
}

Tensor ParamStore::normal(const std::string& name, Shape shape, double stddev) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = stddev * rng_.normal();
  return add(name, std::move(shape), std::move(v));
}

Tensor ParamStore::constant(const std::string& name, Shape shape, double value) {
  std::vector<double> v(numel_of(shape), value);
  return add(name, std::move(shape), std::move(v));
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ArgumentError("unknown parameter " + name);
  return it->second;
}

std::vector<NamedTensor> ParamStore::named(const std::string& prefix) const {
  std::vector<NamedTensor> out;
  for (const auto& [name, t] : params_) {
    if (name.compare(0, prefix.size(), prefix) == 0) out.push_back({name, t});
  }
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : params_) Tensor(t).zero_grad();
}

Linear Linear::create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = store.uniform(prefix + ".weight", {in, out}, bound);
  l.bias = store.uniform(prefix + ".bias", {out}, bound);
  return l;
}

Tensor Linear::operator()(const Tensor& x) const {
  if (x.dim() == 2) return add_bias(matmul(x, weight), bias);
  if (x.dim() < 2) throw DimensionError("linear layer needs a rank >= 2 input, got " + shape_str(x.shape()));
  const std::size_t rows = x.numel() / x.shape().back();
  Shape out_shape = x.shape();
  out_shape.back() = out();
  Tensor flat = reshape(x, {rows, x.shape().back()});
  return reshape(add_bias(matmul(flat, weight), bias), out_shape);
}

LayerNorm LayerNorm::create(ParamStore& store, const std::string& prefix, std::size_t width) {
  return LayerNorm{store.constant(prefix + ".gamma", {width}, 1.0), store.constant(prefix + ".beta", {width}, 0.0)};
}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }

}  // namespace mslr
