#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mslr/tensor.hpp"

namespace mslr {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct ParamCheck {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;   // entries sitting on a kink (one-sided slopes disagree)
  std::size_t flagged = 0;   // entries above tolerance
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double tolerance = 0.0;

  double max_rel_err() const;
  bool passed() const;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor * max(1, |f|)).
  // Roundoff in f(p + h) - f(p - h) scales with |f|; without the floor an
  // exactly-zero gradient reads as an O(1) relative error.
  double floor = 1e-5;
  // One-sided slopes differing by more than this (relative to max(1, |slope|))
  // mark a non-differentiable point, which is then excluded.
  double kink_threshold = 1e-2;
};

// Compares analytic gradients of a scalar function against central finite
// differences for every entry of every listed tensor. `f` must rebuild its
// graph from the current parameter values on each call. Throws
// InvalidCheckError when f is not deterministic.
GradCheckReport finite_diff_check(const std::function<Tensor()>& f, const std::vector<NamedTensor>& params,
                                  const GradCheckOptions& options = {});

}  // namespace mslr
