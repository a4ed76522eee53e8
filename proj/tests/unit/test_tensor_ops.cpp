#include <gtest/gtest.h>

#include <cmath>

#include "mslr/error.hpp"
#include "mslr/gradsuite.hpp"
#include "mslr/ops.hpp"
#include "mslr/tensor.hpp"

using namespace mslr;

namespace {

Tensor leaf(Shape s, std::vector<double> v) { return Tensor::from(std::move(s), std::move(v), true); }

void expect_values(const Tensor& t, const std::vector<double>& want, double tol = 1e-12) {
  ASSERT_EQ(t.numel(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t[i], want[i], tol) << "at " << i;
}

}  // namespace

TEST(Tensor, FactoryValidatesShapeAndValues) {
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::from({0, 2}, {}), DimensionError);
  EXPECT_THROW(Tensor::from({1}, {std::nan("")}), NumericError);
  auto t = Tensor::full({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.size(1), 3u);
}

TEST(Tensor, CopiesShareStorageDetachDoesNot) {
  auto a = Tensor::zeros({2}, true);
  Tensor b = a;
  a.mutable_data()[0] = 4.0;
  EXPECT_EQ(b[0], 4.0);
  Tensor c = a.detach();
  a.mutable_data()[0] = 5.0;
  EXPECT_EQ(c[0], 4.0);
  EXPECT_FALSE(c.requires_grad());
}

TEST(Tape, BackwardRejectsNonScalarAndConstantLoss) {
  GradientTape tape;
  auto a = leaf({2}, {1, 2});
  EXPECT_THROW(tape.backward(scale(a, 2.0)), UsageError);
  EXPECT_THROW(tape.backward(Tensor::scalar(1.0)), UsageError);
}

TEST(Tape, GradientsAccumulateOverReuse) {
  auto a = leaf({3}, {1, -2, 0.5});
  GradientTape tape;
  tape.backward(sum(mul(a, a)));
  expect_values(Tensor::from({3}, {a.grad().begin(), a.grad().end()}), {2, -4, 1});
}

TEST(Tape, NothingRecordedWithoutTape) {
  auto a = leaf({2}, {1, 2});
  auto y = sum(a);
  GradientTape tape;
  EXPECT_EQ(tape.size(), 0u);
  (void)y;
}

TEST(Ops, MatmulHandValues) {
  auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto b = Tensor::from({2, 2}, {5, 6, 7, 8});
  expect_values(matmul(a, b), {19, 22, 43, 50});
  expect_values(matmul_nt(a, b), {17, 23, 39, 53});
  EXPECT_THROW(matmul(a, Tensor::zeros({3, 1})), DimensionError);
}

TEST(Ops, SoftmaxHandValues) {
  auto s = softmax(Tensor::from({1, 3}, {1, 2, 3}), 1);
  expect_values(s, {0.09003057317038046, 0.24472847105479767, 0.6652409557748219}, 1e-15);
  // Large logits stay finite.
  auto big = softmax(Tensor::from({1, 2}, {1000, 1000}), 1);
  expect_values(big, {0.5, 0.5});
}

TEST(Ops, LayerNormMatchesFormula) {
  auto x = Tensor::from({1, 3}, {1, 2, 3});
  auto y = layer_norm(x, Tensor::ones({3}), Tensor::zeros({3}));
  const double sd = std::sqrt(2.0 / 3.0 + kNormEps);
  expect_values(y, {-1 / sd, 0, 1 / sd});
}

TEST(Ops, GroupNormStatistics) {
  // Two groups of two channels, L = 2. Values large enough that eps is a
  // small, exactly predictable correction.
  auto x = Tensor::from({4, 2}, {0, 10, 20, 30, -5, 5, 15, 35});
  auto y = group_norm(x, 2, Tensor::ones({4}), Tensor::zeros({4}));
  for (std::size_t g = 0; g < 2; ++g) {
    double m = 0, v = 0, var_in = 0, mean_in = 0;
    for (std::size_t i = 0; i < 4; ++i) mean_in += x[g * 4 + i] / 4;
    for (std::size_t i = 0; i < 4; ++i) var_in += std::pow(x[g * 4 + i] - mean_in, 2) / 4;
    for (std::size_t i = 0; i < 4; ++i) m += y[g * 4 + i] / 4;
    for (std::size_t i = 0; i < 4; ++i) v += y[g * 4 + i] * y[g * 4 + i] / 4;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, var_in / (var_in + kNormEps), 1e-12);
  }
  EXPECT_THROW(group_norm(x, 3, Tensor::ones({4}), Tensor::zeros({4})), ConfigError);
}

TEST(Ops, ChannelConvZeroPadding) {
  auto y = conv1d_channel(Tensor::from({1, 3}, {1, 2, 3}), Tensor::from({3}, {1, 1, 1}), Tensor::zeros({1}));
  expect_values(y, {3, 6, 5});
  auto shifted = conv1d_channel(Tensor::from({1, 3}, {1, 2, 3}), Tensor::from({3}, {0, 0, 1}), Tensor::full({1}, 0.5));
  expect_values(shifted, {2.5, 3.5, 0.5});
  EXPECT_THROW(conv1d_channel(Tensor::zeros({1, 3}), Tensor::zeros({2}), Tensor::zeros({1})), ConfigError);
}

TEST(Ops, PoolingAndActivations) {
  auto x = Tensor::from({1, 3, 2}, {1, 6, 5, 2, 3, 4});
  expect_values(pool_reduce(x, 1, PoolMode::kMax), {5, 6});
  expect_values(pool_reduce(x, 1, PoolMode::kAvg), {3, 4});
  expect_values(sigmoid(Tensor::from({2}, {0, 100})), {0.5, 1.0});
  expect_values(gelu(Tensor::from({2}, {0, 1})), {0.0, 0.8411919906082768}, 1e-15);
  expect_values(relu(Tensor::from({2}, {-1, 2})), {0, 2});
}

TEST(Ops, MaxPoolGradientGoesToFirstArgmax) {
  auto x = leaf({1, 3, 1}, {2, 2, 1});
  GradientTape tape;
  tape.backward(sum(pool_reduce(x, 1, PoolMode::kMax)));
  EXPECT_EQ(x.grad()[0], 1.0);
  EXPECT_EQ(x.grad()[1], 0.0);
}

TEST(Ops, CrossEntropyHandValue) {
  auto ce = cross_entropy(Tensor::from({2, 2}, {0, 0, 3, 1}), std::vector<int>{0, 1});
  EXPECT_NEAR(ce.item(), 0.5 * (std::log(2.0) + (std::log(std::exp(3.0) + std::exp(1.0)) - 1.0)), 1e-14);
  EXPECT_THROW(cross_entropy(Tensor::zeros({1, 2}), std::vector<int>{2}), ArgumentError);
}

TEST(Ops, RowAndColumnPlumbing) {
  auto x = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  const std::vector<std::size_t> idx{2, 2, 0};
  expect_values(gather_rows(x, idx), {5, 6, 5, 6, 1, 2});
  expect_values(slice_cols(x, 1, 1), {2, 4, 6});
  expect_values(concat_cols({x, slice_cols(x, 0, 1)}), {1, 2, 1, 3, 4, 3, 5, 6, 5});
  const std::vector<std::size_t> w_idx{0, 2};
  const std::vector<double> w{0.25, 0.75};
  expect_values(weighted_rows(x, w_idx, w, 2), {4, 5});
  EXPECT_THROW(gather_rows(x, std::vector<std::size_t>{}), DimensionError);
}

// Every differentiable op against central differences.
class GradSuite : public ::testing::TestWithParam<std::string> {};

TEST_P(GradSuite, MatchesFiniteDifferences) {
  for (std::uint64_t seed : {1u, 2u}) {
    const auto r = run_gradcheck_case(GetParam(), seed);
    EXPECT_TRUE(r.report.passed()) << GetParam() << " seed " << seed << " max rel err " << r.report.max_rel_err();
    std::size_t checked = 0;
    for (const auto& p : r.report.params) checked += p.checked;
    EXPECT_GT(checked, 0u);
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, GradSuite, ::testing::ValuesIn(gradcheck_case_names()),
                         [](const auto& info) {
                           std::string n = info.param;
                           for (auto& c : n)
                             if (c == '-') c = '_';
                           return n;
                         });

TEST(GradCheck, DetectsAWrongGradient) {
  // A hand-rolled op whose backward is off by a factor of two.
  auto x = leaf({2}, {0.3, -0.7});
  auto bad = [&] {
    Tensor out = Tensor::from({1}, {x[0] * x[0] + x[1]}, true);
    if (auto* tape = GradientTape::active()) {
      auto xi = x.impl();
      tape->record(out.impl(), [xi, v = x[0]](const std::vector<double>& g) {
        auto& buf = xi->grad_buffer();
        buf[0] += g[0] * 4.0 * v;
        buf[1] += g[0];
      });
    }
    return out;
  };
  const auto report = finite_diff_check(bad, {{"x", x}});
  EXPECT_FALSE(report.passed());
  EXPECT_EQ(report.params[0].flagged, 1u);
}

TEST(GradCheck, RejectsNonDeterministicFunctions) {
  auto x = leaf({1}, {1.0});
  int calls = 0;
  auto f = [&] { return sum(scale(x, static_cast<double>(++calls))); };
  EXPECT_THROW(finite_diff_check(f, {{"x", x}}), InvalidCheckError);
}

TEST(GradCheck, SkipsKinks) {
  auto x = leaf({2}, {0.0, 1.0});
  const auto report = finite_diff_check([&] { return sum(relu(x)); }, {{"x", x}});
  EXPECT_TRUE(report.passed());
  EXPECT_EQ(report.params[0].skipped, 1u);
  EXPECT_EQ(report.params[0].checked, 1u);
}
