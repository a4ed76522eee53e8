#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "../oracles.hpp"
#include "mslr/error.hpp"
#include "mslr/geometry.hpp"
#include "mslr/ops.hpp"
#include "mslr/shapes.hpp"

using namespace mslr;

namespace {

ScalePyramid pyramid_for(std::uint64_t seed, std::size_t n, std::vector<std::size_t> sizes,
                         std::vector<std::size_t> ks) {
  Rng rng(seed);
  PointCloud cloud{oracle::random_points(rng, n), std::nullopt};
  return build_scale_pyramid(cloud, sizes, ks);
}

}  // namespace

TEST(Fps, MatchesExhaustiveOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 2 + rng.below(120);
    const std::size_t m = 1 + rng.below(n);
    const auto pts = trial % 2 ? oracle::grid_points(rng, n) : oracle::random_points(rng, n);
    EXPECT_EQ(farthest_point_sample(pts, m), oracle::fps(pts, m)) << "trial " << trial;
  }
}

TEST(Fps, DuplicatePointsAreNeverReselected) {
  std::vector<Point3> pts(5, Point3{1, 1, 1});
  const auto idx = farthest_point_sample(pts, 5);
  EXPECT_EQ(idx, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Fps, RejectsBadCounts) {
  std::vector<Point3> pts(4);
  EXPECT_THROW(farthest_point_sample(pts, 0), ArgumentError);
  EXPECT_THROW(farthest_point_sample(pts, 5), ArgumentError);
}

TEST(Knn, MatchesFullSortOracle) {
  Rng rng(12);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t r = 1 + rng.below(200);
    const std::size_t q = 1 + rng.below(20);
    const std::size_t k = 1 + rng.below(r);
    const auto ref = trial % 2 ? oracle::grid_points(rng, r) : oracle::random_points(rng, r);
    const auto queries = oracle::random_points(rng, q);
    const auto table = knn_indices(queries, ref, k);
    ASSERT_EQ(table.rows, q);
    ASSERT_EQ(table.cols, k);
    for (std::size_t i = 0; i < q; ++i) {
      const auto row = table.row(i);
      EXPECT_EQ(std::vector<std::size_t>(row.begin(), row.end()), oracle::knn(queries[i], ref, k));
    }
  }
}

TEST(Knn, QueryInReferenceComesFirst) {
  Rng rng(3);
  const auto pts = oracle::random_points(rng, 30);
  const auto table = knn_indices(pts, pts, 3);
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(table.row(i)[0], i);
  EXPECT_THROW(knn_indices(pts, pts, 31), ArgumentError);
}

TEST(Pyramid, LevelsAreNestedFpsSubsets) {
  const auto p = pyramid_for(4, 128, {32, 16, 4}, {8, 4, 4});
  ASSERT_EQ(p.scales(), 3u);
  for (std::size_t s = 1; s <= 3; ++s) {
    const auto parent = p.points(s - 1);
    const auto& lvl = p.level(s);
    const std::vector<Point3> parent_vec(parent.begin(), parent.end());
    EXPECT_EQ(lvl.source, oracle::fps(parent_vec, lvl.centers.size()));
    for (std::size_t i = 0; i < lvl.centers.size(); ++i) {
      EXPECT_EQ(lvl.centers[i], parent[lvl.source[i]]);
      const auto row = lvl.neighbors.row(i);
      EXPECT_EQ(std::vector<std::size_t>(row.begin(), row.end()), oracle::knn(lvl.centers[i], parent_vec, p.k(s)));
    }
  }
}

TEST(Pyramid, RejectsInconsistentSizes) {
  Rng rng(1);
  PointCloud c{oracle::random_points(rng, 32), std::nullopt};
  EXPECT_THROW(build_scale_pyramid(c, std::vector<std::size_t>{16, 16}, std::vector<std::size_t>{4, 4}), ConfigError);
  EXPECT_THROW(build_scale_pyramid(c, std::vector<std::size_t>{16, 8}, std::vector<std::size_t>{4, 20}), ConfigError);
  EXPECT_THROW(build_scale_pyramid(c, std::vector<std::size_t>{64, 8}, std::vector<std::size_t>{4, 4}), ConfigError);
}

TEST(Mask, PartitionCountAndNesting) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = pyramid_for(seed, 96, {32, 16, 8}, {6, 4, 4});
    for (double mu : {0.0, 0.5, 0.6, 0.9}) {
      const auto plan = mask_and_backproject(p, mu, seed);
      EXPECT_EQ(plan.masked(3).size(), masked_count(mu, 8));
      for (std::size_t s = 1; s <= 3; ++s) {
        std::vector<std::size_t> all;
        std::set_union(plan.visible(s).begin(), plan.visible(s).end(), plan.masked(s).begin(), plan.masked(s).end(),
                       std::back_inserter(all));
        std::vector<std::size_t> want(p.count(s));
        std::iota(want.begin(), want.end(), 0);
        EXPECT_EQ(all, want);
        EXPECT_EQ(plan.visible(s).size() + plan.masked(s).size(), p.count(s));
      }
      for (std::size_t s = 1; s < 3; ++s) {
        std::set<std::size_t> expect;
        for (auto c : plan.visible(s + 1))
          for (auto j : p.neighbors(s + 1).row(c)) expect.insert(j);
        EXPECT_EQ(std::vector<std::size_t>(expect.begin(), expect.end()), plan.visible(s));
      }
    }
  }
}

TEST(Mask, FloorCountAndSeedDeterminism) {
  EXPECT_EQ(masked_count(0.6, 64), 38u);
  EXPECT_EQ(masked_count(0.6, 8), 4u);
  EXPECT_EQ(masked_count(0.9, 8), 7u);
  const auto p = pyramid_for(1, 64, {16, 8}, {4, 4});
  EXPECT_EQ(mask_and_backproject(p, 0.6, 5), mask_and_backproject(p, 0.6, 5));
  EXPECT_THROW(mask_and_backproject(p, 1.0, 5), ArgumentError);
  EXPECT_THROW(mask_and_backproject(p, -0.1, 5), ArgumentError);
}

TEST(Patches, AreCenterRelative) {
  const auto p = pyramid_for(2, 64, {16, 8}, {4, 4});
  const std::vector<std::size_t> centers{0, 3};
  const auto patches = gather_patches(p, 2, centers);
  ASSERT_EQ(patches.shape(), (Shape{2, 4, 3}));
  for (std::size_t m = 0; m < 2; ++m) {
    const auto& c = p.points(2)[centers[m]];
    const auto row = p.neighbors(2).row(centers[m]);
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t d = 0; d < 3; ++d)
        EXPECT_EQ(patches[(m * 4 + j) * 3 + d], p.points(1)[row[j]][d] - c[d]);
  }
  // The center is its own nearest neighbor.
  for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(patches[d], 0.0);
}

TEST(Chamfer, HandValues) {
  auto single = chamfer_l2(Tensor::from({1, 3}, {0, 0, 0}), Tensor::from({1, 3}, {1, 0, 0}));
  EXPECT_NEAR(single.item(), 2.0, 1e-12);
  auto two_one = chamfer_l2(Tensor::from({2, 3}, {0, 0, 0, 2, 0, 0}), Tensor::from({1, 3}, {1, 0, 0}));
  EXPECT_NEAR(two_one.item(), 2.0, 1e-12);
}

TEST(Chamfer, MatchesBruteForceAndIsSymmetric) {
  Rng rng(9);
  for (int t = 0; t < 10; ++t) {
    const auto a = oracle::random_points(rng, 1 + rng.below(12));
    const auto b = oracle::random_points(rng, 1 + rng.below(12));
    const double ab = chamfer_l2(points_tensor(a), points_tensor(b)).item();
    const double ba = chamfer_l2(points_tensor(b), points_tensor(a)).item();
    EXPECT_NEAR(ab, oracle::chamfer(a, b), 1e-12);
    EXPECT_NEAR(ab, ba, 1e-12);
    EXPECT_EQ(chamfer_l2(points_tensor(a), points_tensor(a)).item(), 0.0);
    auto moved_a = a, moved_b = b;
    for (auto& p : moved_a) p = {p[0] + 0.3, p[1] - 1.2, p[2] + 0.05};
    for (auto& p : moved_b) p = {p[0] + 0.3, p[1] - 1.2, p[2] + 0.05};
    EXPECT_NEAR(chamfer_l2(points_tensor(moved_a), points_tensor(moved_b)).item(), ab, 1e-9);
  }
}

TEST(Normalize, CentersAndScalesToUnitSphere) {
  Rng rng(4);
  PointCloud c{oracle::random_points(rng, 50, 3.0, 9.0), 2};
  const auto n = normalize(c);
  double cx = 0, cy = 0, cz = 0, rmax = 0;
  for (const auto& p : n.points) {
    cx += p[0];
    cy += p[1];
    cz += p[2];
    rmax = std::max(rmax, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
  }
  EXPECT_NEAR(cx / 50, 0.0, 1e-12);
  EXPECT_NEAR(cy / 50, 0.0, 1e-12);
  EXPECT_NEAR(cz / 50, 0.0, 1e-12);
  EXPECT_NEAR(rmax, 1.0, 1e-12);
  EXPECT_EQ(n.label, 2);
}
