#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mslr/gradcheck.hpp"
#include "mslr/rng.hpp"
#include "mslr/tensor.hpp"

namespace mslr {

// Owns every learnable tensor under a dotted path ("encoder.0.1.qkv.weight").
// Iteration order is lexicographic by path, which fixes checkpoint layout and
// optimizer order.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : rng_(seed) {}

  Tensor uniform(const std::string& name, Shape shape, double bound);
  Tensor normal(const std::string& name, Shape shape, double stddev);
  Tensor constant(const std::string& name, Shape shape, double value);

  const std::map<std::string, Tensor>& all() const { return params_; }
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::vector<NamedTensor> named(const std::string& prefix = "") const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  Tensor add(const std::string& name, Shape shape, std::vector<double> values);

  Rng rng_;
  std::map<std::string, Tensor> params_;
};

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  static Linear create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out);
  std::size_t in() const { return weight.size(0); }
  std::size_t out() const { return weight.size(1); }
  // Applies to the trailing axis of a rank >= 2 input.
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gamma, beta;

  static LayerNorm create(ParamStore& store, const std::string& prefix, std::size_t width);
  Tensor operator()(const Tensor& x) const;
};

}  // namespace mslr
