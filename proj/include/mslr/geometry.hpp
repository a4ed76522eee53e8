#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mslr/tensor.hpp"

namespace mslr {

using Point3 = std::array<double, 3>;

struct PointCloud {
  std::vector<Point3> points;
  std::optional<int> label;
};

inline double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// Centers on the centroid and scales so the farthest point sits at radius 1.
PointCloud normalize(const PointCloud& cloud);

// Row-major [rows x cols] table of point indices.
struct IndexTable {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> values;

  std::span<const std::size_t> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
};

// Greedy max-min subsampling starting from `start`. Distance ties go to the
// lowest index.
std::vector<std::size_t> farthest_point_sample(std::span<const Point3> points, std::size_t count,
                                               std::size_t start = 0);

// For every query, the k reference indices with smallest squared distance,
// ordered by (distance, index).
IndexTable knn_indices(std::span<const Point3> queries, std::span<const Point3> reference, std::size_t k);

struct ScaleLevel {
  std::vector<Point3> centers;      // P_i
  std::vector<std::size_t> source;  // index of each center within P_{i-1}
  IndexTable neighbors;             // I_i: rows index into P_{i-1}
};

// Scale 0 is the input cloud; scales 1..S are successive FPS subsets, each
// linked to its parent scale by a k-NN table.
class ScalePyramid {
 public:
  ScalePyramid(std::vector<Point3> base, std::vector<ScaleLevel> levels);

  std::size_t scales() const { return levels_.size(); }
  std::span<const Point3> points(std::size_t scale) const;
  const IndexTable& neighbors(std::size_t scale) const;
  const ScaleLevel& level(std::size_t scale) const;
  std::size_t count(std::size_t scale) const { return points(scale).size(); }
  std::size_t k(std::size_t scale) const { return neighbors(scale).cols; }

  // Mutable access for tests that perturb coordinates in place.
  std::vector<Point3>& mutable_points(std::size_t scale);

 private:
  std::vector<Point3> base_;
  std::vector<ScaleLevel> levels_;
};

ScalePyramid build_scale_pyramid(const PointCloud& cloud, std::span<const std::size_t> sizes,
                                 std::span<const std::size_t> ks);

// Visible/masked split of every scale. Index lists are sorted ascending.
class MaskPlan {
 public:
  MaskPlan(double ratio, std::vector<std::vector<std::size_t>> visible,
           std::vector<std::vector<std::size_t>> masked);

  double ratio() const { return ratio_; }
  std::size_t scales() const { return visible_.size(); }
  const std::vector<std::size_t>& visible(std::size_t scale) const;
  const std::vector<std::size_t>& masked(std::size_t scale) const;
  bool is_visible(std::size_t scale, std::size_t index) const;

  bool operator==(const MaskPlan&) const = default;

 private:
  double ratio_;
  std::vector<std::vector<std::size_t>> visible_;  // [scale - 1]
  std::vector<std::vector<std::size_t>> masked_;
};

std::size_t masked_count(double ratio, std::size_t n);

// Masks floor(ratio * N_S) final-scale centers uniformly at random, then
// marks every neighbor of a visible scale-(i+1) center visible at scale i.
MaskPlan mask_and_backproject(const ScalePyramid& pyramid, double ratio, std::uint64_t seed);

// [M x k_i x 3] neighbor coordinates of the listed scale-i centers, relative
// to each center.
Tensor gather_patches(const ScalePyramid& pyramid, std::size_t scale, std::span<const std::size_t> centers);

Tensor points_tensor(std::span<const Point3> points);

// Symmetric l2 Chamfer distance between [A x 3] and [B x 3] point sets.
Tensor chamfer_l2(const Tensor& pred, const Tensor& truth);

// Mean over M patches of chamfer_l2(pred[m], truth[m]); pred is [M x A x 3],
// truth is [M x B x 3].
Tensor patch_chamfer_mean(const Tensor& pred, const Tensor& truth);

}  // namespace mslr
