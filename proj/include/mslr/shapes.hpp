#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mslr/config.hpp"
#include "mslr/geometry.hpp"

namespace mslr {

// Analytic surfaces, before normalization:
//   sphere           radius 1
//   cube             [-1, 1]^3 surface
//   torus            major radius 1, minor radius 0.35, axis z
//   cylinder         radius 0.6, z in [-1, 1], with caps
//   cone             base radius 0.8 at z = -0.8, apex at z = 0.8, with base
//   plane-with-bump  z = 0.6 exp(-(x^2 + y^2) / 0.1) over [-1, 1]^2
struct ShapeSpec {
  std::string kind;
  std::size_t n_points = 2048;
  double jitter = 0.0;
  std::uint64_t seed = 0;
  int label = 0;
};

const std::vector<std::string>& shape_kinds();

PointCloud gen_shape(const ShapeSpec& spec);
std::vector<PointCloud> gen_shapes(const std::vector<ShapeSpec>& specs);

// `per_class` clouds for each kind in data.kinds (label = position in the
// list), in class-major order. `split` separates train and test streams.
// Counts below the 64-point floor are sampled at 64 and reduced by FPS.
std::vector<PointCloud> synthetic_dataset(const DataConfig& data, std::size_t n_points, std::size_t per_class,
                                          std::uint64_t seed, std::uint64_t split = 0);

}  // namespace mslr
