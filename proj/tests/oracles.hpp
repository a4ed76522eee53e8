#pragma once

// Reference implementations written for clarity, not speed. They share no
// code with the library beyond the point type.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "mslr/geometry.hpp"
#include "mslr/rng.hpp"

namespace oracle {

using mslr::Point3;

inline double d2(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// Exhaustive greedy max-min: every step rescans all selected points.
inline std::vector<std::size_t> fps(const std::vector<Point3>& pts, std::size_t m) {
  std::vector<std::size_t> chosen{0};
  std::vector<bool> taken(pts.size(), false);
  taken[0] = true;
  while (chosen.size() < m) {
    std::size_t best = pts.size();
    double best_d = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (taken[i]) continue;
      double nearest = std::numeric_limits<double>::infinity();
      for (auto c : chosen) nearest = std::min(nearest, d2(pts[i], pts[c]));
      if (nearest > best_d) {
        best_d = nearest;
        best = i;
      }
    }
    chosen.push_back(best);
    taken[best] = true;
  }
  return chosen;
}

// Full sort of (distance, index) pairs.
inline std::vector<std::size_t> knn(const Point3& q, const std::vector<Point3>& ref, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < ref.size(); ++i) all.emplace_back(d2(q, ref[i]), i);
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(all[i].second);
  return out;
}

// Symmetric Chamfer by brute force: mean nearest squared distance both ways.
inline double chamfer(const std::vector<Point3>& a, const std::vector<Point3>& b) {
  auto one_way = [](const std::vector<Point3>& x, const std::vector<Point3>& y) {
    double total = 0.0;
    for (const auto& p : x) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : y) best = std::min(best, d2(p, q));
      total += best;
    }
    return total / static_cast<double>(x.size());
  };
  return one_way(a, b) + one_way(b, a);
}

inline std::vector<Point3> random_points(mslr::Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<Point3> pts(n);
  for (auto& p : pts)
    for (auto& c : p) c = rng.uniform(lo, hi);
  return pts;
}

// Grid points give many exact distance ties, which exercise tie-breaking.
inline std::vector<Point3> grid_points(mslr::Rng& rng, std::size_t n) {
  std::vector<Point3> pts(n);
  for (auto& p : pts)
    for (auto& c : p) c = static_cast<double>(rng.below(5));
  return pts;
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("mslr_" + tag + "_" + std::to_string(mslr::Rng::mix(reinterpret_cast<std::uintptr_t>(this), tag.size())));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace oracle
