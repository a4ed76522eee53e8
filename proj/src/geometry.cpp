#include "mslr/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "mslr/error.hpp"
#include "mslr/ops.hpp"
#include "mslr/rng.hpp"

namespace mslr {

PointCloud normalize(const PointCloud& cloud) {
  if (cloud.points.empty()) throw ArgumentError("normalize: empty point cloud");
  Point3 centroid{0.0, 0.0, 0.0};
  for (const auto& p : cloud.points)
    for (int d = 0; d < 3; ++d) centroid[d] += p[d];
  for (int d = 0; d < 3; ++d) centroid[d] /= static_cast<double>(cloud.points.size());
  PointCloud out{cloud.points, cloud.label};
  double radius = 0.0;
  for (auto& p : out.points) {
    for (int d = 0; d < 3; ++d) p[d] -= centroid[d];
    radius = std::max(radius, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
  }
  if (radius > 0.0) {
    for (auto& p : out.points)
      for (int d = 0; d < 3; ++d) p[d] /= radius;
  }
  return out;
}

std::vector<std::size_t> farthest_point_sample(std::span<const Point3> points, std::size_t count,
                                               std::size_t start) {
  const std::size_t n = points.size();
  if (count == 0 || count > n) {
    throw ArgumentError("farthest_point_sample: cannot draw " + std::to_string(count) + " of " + std::to_string(n) +
                        " points");
  }
  if (start >= n) throw ArgumentError("farthest_point_sample: start index out of range");
  std::vector<std::size_t> picked;
  picked.reserve(count);
  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  std::size_t current = start;
  for (std::size_t s = 0; s < count; ++s) {
    picked.push_back(current);
    taken[current] = 1;
    std::size_t best = n;
    double best_dist = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      min_dist[i] = std::min(min_dist[i], squared_distance(points[i], points[current]));
      if (min_dist[i] > best_dist) {
        best_dist = min_dist[i];
        best = i;
      }
    }
    current = best;
  }
  return picked;
}

IndexTable knn_indices(std::span<const Point3> queries, std::span<const Point3> reference, std::size_t k) {
  if (k == 0 || k > reference.size()) {
    throw ArgumentError("knn_indices: k = " + std::to_string(k) + " with " + std::to_string(reference.size()) +
                        " reference points");
  }
  IndexTable table{queries.size(), k, std::vector<std::size_t>(queries.size() * k)};
  std::vector<std::pair<double, std::size_t>> cand(reference.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (std::size_t r = 0; r < reference.size(); ++r) cand[r] = {squared_distance(queries[q], reference[r]), r};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t j = 0; j < k; ++j) table.values[q * k + j] = cand[j].second;
  }
  return table;
}

ScalePyramid::ScalePyramid(std::vector<Point3> base, std::vector<ScaleLevel> levels)
    : base_(std::move(base)), levels_(std::move(levels)) {}

std::span<const Point3> ScalePyramid::points(std::size_t scale) const {
  if (scale == 0) return base_;
  return level(scale).centers;
}

std::vector<Point3>& ScalePyramid::mutable_points(std::size_t scale) {
  if (scale == 0) return base_;
  if (scale > levels_.size()) throw ArgumentError("pyramid scale out of range");
  return levels_[scale - 1].centers;
}

const ScaleLevel& ScalePyramid::level(std::size_t scale) const {
  if (scale == 0 || scale > levels_.size()) {
    throw ArgumentError("pyramid scale " + std::to_string(scale) + " outside 1.." + std::to_string(levels_.size()));
  }
  return levels_[scale - 1];
}

const IndexTable& ScalePyramid::neighbors(std::size_t scale) const { return level(scale).neighbors; }

ScalePyramid build_scale_pyramid(const PointCloud& cloud, std::span<const std::size_t> sizes,
                                 std::span<const std::size_t> ks) {
  if (sizes.empty() || sizes.size() != ks.size()) {
    throw ConfigError("pyramid: need one k per scale and at least one scale");
  }
  std::size_t parent = cloud.points.size();
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const bool ok = i == 0 ? sizes[i] <= parent : sizes[i] < sizes[i - 1];
    if (sizes[i] == 0 || !ok) {
      throw ConfigError("pyramid: scale sizes must satisfy N >= N_1 > ... > N_S >= 1");
    }
    if (ks[i] == 0 || ks[i] > parent) {
      throw ConfigError("pyramid: k_" + std::to_string(i + 1) + " = " + std::to_string(ks[i]) +
                        " exceeds parent scale size " + std::to_string(parent));
    }
    parent = sizes[i];
  }
  std::vector<ScaleLevel> levels;
  std::span<const Point3> prev = cloud.points;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    ScaleLevel lvl;
    lvl.source = farthest_point_sample(prev, sizes[i], 0);
    lvl.centers.reserve(sizes[i]);
    for (auto s : lvl.source) lvl.centers.push_back(prev[s]);
    lvl.neighbors = knn_indices(lvl.centers, prev, ks[i]);
    levels.push_back(std::move(lvl));
    prev = levels.back().centers;
  }
  return ScalePyramid(cloud.points, std::move(levels));
}

MaskPlan::MaskPlan(double ratio, std::vector<std::vector<std::size_t>> visible,
                   std::vector<std::vector<std::size_t>> masked)
    : ratio_(ratio), visible_(std::move(visible)), masked_(std::move(masked)) {}

const std::vector<std::size_t>& MaskPlan::visible(std::size_t scale) const {
  if (scale == 0 || scale > visible_.size()) throw ArgumentError("mask plan scale out of range");
  return visible_[scale - 1];
}

const std::vector<std::size_t>& MaskPlan::masked(std::size_t scale) const {
  if (scale == 0 || scale > masked_.size()) throw ArgumentError("mask plan scale out of range");
  return masked_[scale - 1];
}

bool MaskPlan::is_visible(std::size_t scale, std::size_t index) const {
  const auto& v = visible(scale);
  return std::binary_search(v.begin(), v.end(), index);
}

std::size_t masked_count(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
}

MaskPlan mask_and_backproject(const ScalePyramid& pyramid, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ArgumentError("mask ratio must lie in [0, 1)");
  const std::size_t scales = pyramid.scales();
  std::vector<std::vector<std::size_t>> visible(scales), masked(scales);

  const std::size_t n_top = pyramid.count(scales);
  const std::size_t hide = masked_count(ratio, n_top);
  std::vector<std::size_t> order(n_top);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < hide; ++i) {  // partial Fisher-Yates
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n_top - i));
    std::swap(order[i], order[j]);
  }
  std::vector<char> vis(n_top, 1);
  for (std::size_t i = 0; i < hide; ++i) vis[order[i]] = 0;

  for (std::size_t scale = scales;; --scale) {
    auto& v = visible[scale - 1];
    auto& m = masked[scale - 1];
    for (std::size_t i = 0; i < vis.size(); ++i) (vis[i] ? v : m).push_back(i);
    if (scale == 1) break;
    const auto& table = pyramid.neighbors(scale);
    std::vector<char> below(pyramid.count(scale - 1), 0);
    for (auto c : v)
      for (auto nb : table.row(c)) below[nb] = 1;
    vis = std::move(below);
  }
  return MaskPlan(ratio, std::move(visible), std::move(masked));
}

Tensor gather_patches(const ScalePyramid& pyramid, std::size_t scale, std::span<const std::size_t> centers) {
  const auto& table = pyramid.neighbors(scale);
  const auto parent = pyramid.points(scale - 1);
  const auto own = pyramid.points(scale);
  if (centers.empty()) throw ArgumentError("gather_patches: empty center subset");
  const std::size_t k = table.cols;
  std::vector<double> out;
  out.reserve(centers.size() * k * 3);
  for (auto c : centers) {
    if (c >= own.size()) throw ArgumentError("gather_patches: center index out of range");
    for (auto nb : table.row(c))
      for (int d = 0; d < 3; ++d) out.push_back(parent[nb][d] - own[c][d]);
  }
  return Tensor::from({centers.size(), k, 3}, std::move(out));
}

Tensor points_tensor(std::span<const Point3> points) {
  if (points.empty()) throw ArgumentError("points_tensor: empty point set");
  std::vector<double> flat;
  flat.reserve(points.size() * 3);
  for (const auto& p : points) flat.insert(flat.end(), p.begin(), p.end());
  return Tensor::from({points.size(), 3}, std::move(flat));
}

Tensor chamfer_l2(const Tensor& pred, const Tensor& truth) {
  if (pred.dim() != 2 || pred.size(1) != 3 || truth.dim() != 2 || truth.size(1) != 3) {
    throw ArgumentError("chamfer_l2: expected [A x 3] and [B x 3] point sets");
  }
  return patch_chamfer_mean(reshape(pred, {1, pred.size(0), 3}), reshape(truth, {1, truth.size(0), 3}));
}

namespace {

// Nearest neighbor of every point of `from` inside `to`, ties to lowest index.
void nearest(const double* from, std::size_t nf, const double* to, std::size_t nt, std::vector<std::size_t>& idx,
             std::vector<double>& dist) {
  idx.assign(nf, 0);
  dist.assign(nf, 0.0);
  for (std::size_t i = 0; i < nf; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < nt; ++j) {
      const double dx = from[i * 3] - to[j * 3];
      const double dy = from[i * 3 + 1] - to[j * 3 + 1];
      const double dz = from[i * 3 + 2] - to[j * 3 + 2];
      const double d = dx * dx + dy * dy + dz * dz;
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    idx[i] = arg;
    dist[i] = best;
  }
}

}  // namespace

Tensor patch_chamfer_mean(const Tensor& pred, const Tensor& truth) {
  if (!pred.defined() || !truth.defined() || pred.dim() != 3 || truth.dim() != 3 || pred.size(2) != 3 ||
      truth.size(2) != 3 || pred.size(0) != truth.size(0)) {
    throw ArgumentError("patch_chamfer_mean: expected [M x A x 3] and [M x B x 3]");
  }
  const std::size_t m = pred.size(0), na = pred.size(1), nb = truth.size(1);
  std::vector<std::size_t> nn_pred(m * na), nn_truth(m * nb);
  std::vector<std::size_t> idx;
  std::vector<double> dist;
  double total = 0.0;
  for (std::size_t p = 0; p < m; ++p) {
    const double* a = pred.data().data() + p * na * 3;
    const double* b = truth.data().data() + p * nb * 3;
    nearest(a, na, b, nb, idx, dist);
    double term_a = 0.0;
    for (std::size_t i = 0; i < na; ++i) {
      term_a += dist[i];
      nn_pred[p * na + i] = idx[i];
    }
    nearest(b, nb, a, na, idx, dist);
    double term_b = 0.0;
    for (std::size_t i = 0; i < nb; ++i) {
      term_b += dist[i];
      nn_truth[p * nb + i] = idx[i];
    }
    total += term_a / static_cast<double>(na) + term_b / static_cast<double>(nb);
  }
  Tensor y = Tensor::scalar(total / static_cast<double>(m));
  auto* tape = GradientTape::active();
  if (tape != nullptr && (pred.requires_grad() || truth.requires_grad())) {
    y.impl()->requires_grad = true;
    tape->record(y.impl(), [pi = pred.impl(), ti = truth.impl(), nn_pred = std::move(nn_pred),
                            nn_truth = std::move(nn_truth), m, na, nb](const std::vector<double>& g) {
      const double s = g[0] / static_cast<double>(m);
      const double wa = 2.0 * s / static_cast<double>(na);
      const double wb = 2.0 * s / static_cast<double>(nb);
      std::vector<double>* gp = pi->requires_grad ? &pi->grad_buffer() : nullptr;
      std::vector<double>* gt = ti->requires_grad ? &ti->grad_buffer() : nullptr;
      for (std::size_t p = 0; p < m; ++p) {
        for (std::size_t i = 0; i < na; ++i) {
          const std::size_t ai = (p * na + i) * 3;
          const std::size_t bi = (p * nb + nn_pred[p * na + i]) * 3;
          for (int d = 0; d < 3; ++d) {
            const double diff = pi->data[ai + d] - ti->data[bi + d];
            if (gp) (*gp)[ai + d] += wa * diff;
            if (gt) (*gt)[bi + d] -= wa * diff;
          }
        }
        for (std::size_t i = 0; i < nb; ++i) {
          const std::size_t bi = (p * nb + i) * 3;
          const std::size_t ai = (p * na + nn_truth[p * nb + i]) * 3;
          for (int d = 0; d < 3; ++d) {
            const double diff = ti->data[bi + d] - pi->data[ai + d];
            if (gt) (*gt)[bi + d] += wb * diff;
            if (gp) (*gp)[ai + d] -= wb * diff;
          }
        }
      }
    });
  }
  return y;
}

}  // namespace mslr
