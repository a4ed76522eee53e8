#include "mslr/gradsuite.hpp"

#include <functional>
#include <map>

#include "mslr/backbone.hpp"
#include "mslr/config.hpp"
#include "mslr/embedding.hpp"
#include "mslr/error.hpp"
#include "mslr/geometry.hpp"
#include "mslr/ops.hpp"
#include "mslr/rng.hpp"
#include "mslr/shapes.hpp"

namespace mslr {
namespace {

constexpr double kOpTolerance = 1e-4;
constexpr double kEndToEndTolerance = 1e-3;

Tensor random(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  Tensor t = Tensor::from(std::move(shape), std::move(v));
  t.set_requires_grad(grad);
  return t;
}

// Random linear functional of the output, so every output entry matters.
Tensor project(const Tensor& out, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(out, random(rng, out.shape(), -1.0, 1.0, false)));
}

GradCheckReport check(const std::function<Tensor()>& f, std::vector<NamedTensor> params,
                      double tolerance = kOpTolerance) {
  GradCheckOptions opts;
  opts.tolerance = tolerance;
  return finite_diff_check(f, params, opts);
}

std::vector<NamedTensor> store_params(const ParamStore& store) { return store.named(); }

PointCloud sample_cloud(std::uint64_t seed, std::size_t n) {
  DataConfig data;
  data.kinds = {"torus"};
  return normalize(synthetic_dataset(data, n, 1, seed).front());
}

using Case = std::function<GradCheckReport(std::uint64_t)>;

const std::map<std::string, Case>& cases() {
  static const std::map<std::string, Case> table = {
      {"add", [](std::uint64_t s) {
         Rng r(s);
         auto a = random(r, {3, 4}), b = random(r, {3, 4});
         return check([=] { return project(add(a, b), s); }, {{"a", a}, {"b", b}});
       }},
      {"sub", [](std::uint64_t s) {
         Rng r(s);
         auto a = random(r, {3, 4}), b = random(r, {3, 4});
         return check([=] { return project(sub(a, b), s); }, {{"a", a}, {"b", b}});
       }},
      {"mul", [](std::uint64_t s) {
         Rng r(s);
         auto a = random(r, {3, 4}), b = random(r, {3, 4});
         return check([=] { return project(mul(a, b), s); }, {{"a", a}, {"b", b}});
       }},
      {"scale", [](std::uint64_t s) {
         Rng r(s);
         auto a = random(r, {5});
         return check([=] { return project(scale(a, -2.5), s); }, {{"a", a}});
       }},
      {"add_bias", [](std::uint64_t s) {
         Rng r(s);
         auto x = random(r, {2, 3, 4}), b = random(r, {4});
         return check([=] { return project(add_bias(x, b), s); }, {{"x", x}, {"bias", b}});
       }},
      {"matmul", [](std::uint64_t s) {
         Rng r(s);
         auto a = random(r, {3, 4}), b = random(r, {4, 2});
         return check([=] { return project(matmul(a, b), s); }, {{"a", a}, {"b", b}});
       }},
      {"matmul_nt", [](std::uint64_t s) {
         Rng r(s);
         auto a = random(r, {3, 4}), b = random(r, {5, 4});
         return check([=] { return project(matmul_nt(a, b), s); }, {{"a", a}, {"b", b}});
       }},
      {"transpose", [](std::uint64_t s) {
         Rng r(s);
         auto a = random(r, {3, 4});
         return check([=] { return project(transpose(a), s); }, {{"a", a}});
       }},
      {"reshape", [](std::uint64_t s) {
         Rng r(s);
         auto a = random(r, {3, 4});
         return check([=] { return project(reshape(a, {2, 6}), s); }, {{"a", a}});
       }},
      {"softmax", [](std::uint64_t s) {
         Rng r(s);
         auto a = random(r, {3, 5}, -2.0, 2.0);
         return check([=] { return project(add(softmax(a, 1), softmax(a, 0)), s); }, {{"a", a}});
       }},
      {"layer_norm", [](std::uint64_t s) {
         Rng r(s);
         auto x = random(r, {4, 6}), g = random(r, {6}, 0.5, 1.5), b = random(r, {6});
         return check([=] { return project(layer_norm(x, g, b), s); }, {{"x", x}, {"gamma", g}, {"beta", b}});
       }},
      {"group_norm", [](std::uint64_t s) {
         Rng r(s);
         auto x = random(r, {2, 4, 3}), g = random(r, {4}, 0.5, 1.5), b = random(r, {4});
         return check([=] { return project(group_norm(x, 2, g, b), s); }, {{"x", x}, {"scale", g}, {"shift", b}});
       }},
      {"conv1d_channel", [](std::uint64_t s) {
         Rng r(s);
         auto x = random(r, {2, 7}), k = random(r, {5}), b = random(r, {1});
         return check([=] { return project(conv1d_channel(x, k, b), s); }, {{"x", x}, {"kernel", k}, {"bias", b}});
       }},
      {"max_pool", [](std::uint64_t s) {
         Rng r(s);
         auto x = random(r, {2, 5, 3});
         return check([=] { return project(pool_reduce(x, 1, PoolMode::kMax), s); }, {{"x", x}});
       }},
      {"avg_pool", [](std::uint64_t s) {
         Rng r(s);
         auto x = random(r, {2, 5, 3});
         return check([=] { return project(pool_reduce(x, 1, PoolMode::kAvg), s); }, {{"x", x}});
       }},
      {"sigmoid", [](std::uint64_t s) {
         Rng r(s);
         auto x = random(r, {8}, -3.0, 3.0);
         return check([=] { return project(sigmoid(x), s); }, {{"x", x}});
       }},
      {"gelu", [](std::uint64_t s) {
         Rng r(s);
         auto x = random(r, {8}, -3.0, 3.0);
         return check([=] { return project(gelu(x), s); }, {{"x", x}});
       }},
      {"relu", [](std::uint64_t s) {
         Rng r(s);
         auto x = random(r, {8}, -3.0, 3.0);
         return check([=] { return project(relu(x), s); }, {{"x", x}});
       }},
      {"scale_channels", [](std::uint64_t s) {
         Rng r(s);
         auto x = random(r, {2, 3, 4}), g = random(r, {2, 4});
         return check([=] { return project(scale_channels(x, g), s); }, {{"x", x}, {"gate", g}});
       }},
      {"gather_rows", [](std::uint64_t s) {
         Rng r(s);
         auto x = random(r, {4, 3});
         const std::vector<std::size_t> idx{2, 0, 2, 3};
         return check([=] { return project(gather_rows(x, idx), s); }, {{"x", x}});
       }},
      {"concat_rows", [](std::uint64_t s) {
         Rng r(s);
         auto a = random(r, {2, 3}), b = random(r, {1, 3});
         return check([=] { return project(concat_rows({a, b}), s); }, {{"a", a}, {"b", b}});
       }},
      {"slice_cols", [](std::uint64_t s) {
         Rng r(s);
         auto a = random(r, {3, 6});
         return check([=] { return project(slice_cols(a, 2, 3), s); }, {{"a", a}});
       }},
      {"concat_cols", [](std::uint64_t s) {
         Rng r(s);
         auto a = random(r, {3, 2}), b = random(r, {3, 4});
         return check([=] { return project(concat_cols({a, b}), s); }, {{"a", a}, {"b", b}});
       }},
      {"weighted_rows", [](std::uint64_t s) {
         Rng r(s);
         auto x = random(r, {4, 3});
         const std::vector<std::size_t> idx{0, 1, 3, 3, 2, 1};
         const std::vector<double> w{0.2, 0.8, 0.5, 0.5, 0.9, 0.1};
         return check([=] { return project(weighted_rows(x, idx, w, 2), s); }, {{"x", x}});
       }},
      {"mean", [](std::uint64_t s) {
         Rng r(s);
         auto x = random(r, {3, 4});
         return check([=] { return mean(mul(x, x)); }, {{"x", x}});
       }},
      {"cross_entropy", [](std::uint64_t s) {
         Rng r(s);
         auto x = random(r, {3, 4}, -2.0, 2.0);
         const std::vector<int> labels{1, 3, 0};
         return check([=] { return cross_entropy(x, labels); }, {{"logits", x}});
       }},
      {"chamfer", [](std::uint64_t s) {
         Rng r(s);
         auto p = random(r, {2, 4, 3}), t = random(r, {2, 5, 3});
         return check([=] { return patch_chamfer_mean(p, t); }, {{"pred", p}, {"truth", t}});
       }},
      {"la_module", [](std::uint64_t s) {
         ParamStore store(s);
         auto la = LAParams::create(store, "la", 8, 3, 2);
         Rng r(s);
         auto x = random(r, {2, 5, 8});
         auto params = store_params(store);
         params.push_back({"x", x});
         return check([=] { return project(la_forward(x, la), s); }, params);
       }},
      {"patch_encoder", [](std::uint64_t s) {
         ParamStore store(s);
         auto enc = PatchEncoder::create(store, "embed", 4, 4, 3, 2);
         Rng r(s);
         auto x = random(r, {3, 4, 3}, -0.3, 0.3);
         auto params = store_params(store);
         params.push_back({"patches", x});
         return check([=] { return project(tokenize_patches(x, enc), s); }, params);
       }},
      {"positional_embedding", [](std::uint64_t s) {
         ParamStore store(s);
         auto pos = PositionalEmbedding::create(store, "pos", 6);
         const std::vector<Point3> coords{{0.1, 0.2, -0.3}, {0.5, -0.1, 0.0}, {-0.4, 0.3, 0.2}};
         return check([=] { return project(pos(coords), s); }, store_params(store));
       }},
      {"token_merge", [](std::uint64_t s) {
         const auto cloud = sample_cloud(s, 64);
         const std::vector<std::size_t> sizes{16, 8}, ks{4, 4};
         const auto pyramid = build_scale_pyramid(cloud, sizes, ks);
         const auto plan = mask_and_backproject(pyramid, 0.5, s);
         ParamStore store(s);
         auto merger = TokenMerger::create(store, "merge", 4, 6);
         Rng r(s);
         TokenBatch lower;
         lower.scale = 1;
         lower.indices = plan.visible(1);
         for (auto i : lower.indices) lower.coords.push_back(pyramid.points(1)[i]);
         lower.tokens = random(r, {lower.indices.size(), 4});
         auto params = store_params(store);
         params.push_back({"tokens", lower.tokens});
         return check([=] { return project(merge_tokens(lower, pyramid, plan, merger).tokens, s); }, params);
       }},
      {"transformer_block", [](std::uint64_t s) {
         ParamStore store(s);
         auto block = BlockParams::create(store, "block", 8, 2);
         Rng r(s);
         auto x = random(r, {5, 8});
         auto params = store_params(store);
         params.push_back({"x", x});
         return check([=] { return project(transformer_block(x, block), s); }, params);
       }},
      {"token_propagate", [](std::uint64_t s) {
         ParamStore store(s);
         auto proj = Linear::create(store, "proj", 4, 3);
         Rng r(s);
         auto coarse = random(r, {4, 4});
         const std::vector<Point3> cc{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
         const std::vector<Point3> fc{{0.2, 0.1, 0}, {0.9, 0.1, 0.2}, {0.1, 0.1, 0.8}, {0.5, 0.5, 0.5}, {1, 0, 0}};
         auto params = store_params(store);
         params.push_back({"coarse", coarse});
         return check([=] { return project(token_propagate(coarse, cc, fc, 3, proj), s); }, params);
       }},
      {"pretrain_loss", [](std::uint64_t s) {
         const auto config = tiny_model_config();
         auto model = std::make_shared<MaskedAutoencoder>(config, s);
         const auto cloud = sample_cloud(s, config.num_points);
         const auto pyramid = build_scale_pyramid(cloud, config.sizes, config.ks);
         const auto plan = mask_and_backproject(pyramid, config.mask_ratio, s);
         std::vector<NamedTensor> params;
         for (auto& p : model->params().named()) {
           if (p.name.rfind("encoder.norm.", 0) != 0) params.push_back(p);
         }
         return check([=] { return pretrain_forward(*model, pyramid, plan).loss; }, params, kEndToEndTolerance);
       }},
  };
  return table;
}

}  // namespace

std::vector<std::string> gradcheck_case_names() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : cases()) names.push_back(name);
  return names;
}

SuiteResult run_gradcheck_case(const std::string& name, std::uint64_t seed) {
  auto it = cases().find(name);
  if (it == cases().end()) throw ArgumentError("unknown gradient check '" + name + "'");
  return {name, it->second(seed)};
}

std::vector<SuiteResult> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<SuiteResult> out;
  for (const auto& name : gradcheck_case_names()) out.push_back(run_gradcheck_case(name, seed));
  return out;
}

}  // namespace mslr
