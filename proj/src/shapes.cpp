#include "mslr/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mslr/error.hpp"
#include "mslr/rng.hpp"

namespace mslr {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Point3 sphere_point(Rng& rng) {
  for (;;) {
    const double x = rng.normal(), y = rng.normal(), z = rng.normal();
    const double r = std::sqrt(x * x + y * y + z * z);
    if (r > 1e-12) return {x / r, y / r, z / r};
  }
}

Point3 cube_point(Rng& rng) {
  const auto face = rng.below(6);
  const double a = rng.uniform(-1.0, 1.0), b = rng.uniform(-1.0, 1.0);
  const double s = face % 2 == 0 ? 1.0 : -1.0;
  switch (face / 2) {
    case 0: return {s, a, b};
    case 1: return {a, s, b};
    default: return {a, b, s};
  }
}

Point3 torus_point(Rng& rng) {
  constexpr double R = 1.0, r = 0.35;
  for (;;) {
    const double u = rng.uniform(0.0, kTwoPi), v = rng.uniform(0.0, kTwoPi);
    // Area element is proportional to R + r cos v.
    if (rng.uniform() * (R + r) > R + r * std::cos(v)) continue;
    const double ring = R + r * std::cos(v);
    return {ring * std::cos(u), ring * std::sin(u), r * std::sin(v)};
  }
}

Point3 cylinder_point(Rng& rng) {
  constexpr double r = 0.6, h = 2.0;
  const double side = kTwoPi * r * h, caps = 2.0 * std::numbers::pi * r * r;
  const double t = rng.uniform(0.0, kTwoPi);
  if (rng.uniform() * (side + caps) < side) return {r * std::cos(t), r * std::sin(t), rng.uniform(-1.0, 1.0)};
  const double rho = r * std::sqrt(rng.uniform());
  return {rho * std::cos(t), rho * std::sin(t), rng.uniform() < 0.5 ? -1.0 : 1.0};
}

Point3 cone_point(Rng& rng) {
  constexpr double r = 0.8, h = 1.6;
  const double slant = std::sqrt(r * r + h * h);
  const double side = std::numbers::pi * r * slant, base = std::numbers::pi * r * r;
  const double t = rng.uniform(0.0, kTwoPi);
  if (rng.uniform() * (side + base) < side) {
    // Radius from the apex grows linearly, so sample it with sqrt.
    const double f = std::sqrt(rng.uniform());
    return {f * r * std::cos(t), f * r * std::sin(t), h / 2 - f * h};
  }
  const double rho = r * std::sqrt(rng.uniform());
  return {rho * std::cos(t), rho * std::sin(t), -h / 2};
}

Point3 bump_point(Rng& rng) {
  const double x = rng.uniform(-1.0, 1.0), y = rng.uniform(-1.0, 1.0);
  return {x, y, 0.6 * std::exp(-(x * x + y * y) / 0.1)};
}

}  // namespace

const std::vector<std::string>& shape_kinds() {
  static const std::vector<std::string> kinds{"sphere", "cube", "torus", "cylinder", "cone", "plane-with-bump"};
  return kinds;
}

PointCloud gen_shape(const ShapeSpec& spec) {
  Point3 (*sampler)(Rng&) = nullptr;
  if (spec.kind == "sphere") sampler = sphere_point;
  else if (spec.kind == "cube") sampler = cube_point;
  else if (spec.kind == "torus") sampler = torus_point;
  else if (spec.kind == "cylinder") sampler = cylinder_point;
  else if (spec.kind == "cone") sampler = cone_point;
  else if (spec.kind == "plane-with-bump") sampler = bump_point;
  else throw ArgumentError("unknown shape kind '" + spec.kind + "'");
  if (spec.n_points < 64) throw ArgumentError("shapes need at least 64 points");
  if (!(spec.jitter >= 0.0) || !std::isfinite(spec.jitter)) throw ArgumentError("jitter must be >= 0");

  Rng rng(spec.seed);
  PointCloud cloud;
  cloud.label = spec.label;
  cloud.points.reserve(spec.n_points);
  for (std::size_t i = 0; i < spec.n_points; ++i) {
    Point3 p = sampler(rng);
    if (spec.jitter > 0.0)
      for (auto& c : p) c += spec.jitter * rng.normal();
    cloud.points.push_back(p);
  }
  return cloud;
}

std::vector<PointCloud> gen_shapes(const std::vector<ShapeSpec>& specs) {
  std::vector<PointCloud> out;
  out.reserve(specs.size());
  for (const auto& s : specs) out.push_back(gen_shape(s));
  return out;
}

std::vector<PointCloud> synthetic_dataset(const DataConfig& data, std::size_t n_points, std::size_t per_class,
                                          std::uint64_t seed, std::uint64_t split) {
  std::vector<ShapeSpec> specs;
  const std::uint64_t stream = Rng::mix(seed, split);
  for (std::size_t c = 0; c < data.kinds.size(); ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      specs.push_back({data.kinds[c], std::max<std::size_t>(n_points, 64), data.jitter,
                       Rng::mix(stream, c * 1000003 + i), static_cast<int>(c)});
    }
  }
  auto clouds = gen_shapes(specs);
  if (n_points < 64) {
    for (auto& cloud : clouds) {
      const auto keep = farthest_point_sample(cloud.points, n_points);
      std::vector<Point3> sub;
      for (auto i : keep) sub.push_back(cloud.points[i]);
      cloud.points = std::move(sub);
    }
  }
  return clouds;
}

}  // namespace mslr
