#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "spmim/autodiff.hpp"
#include "spmim/errors.hpp"
#include "spmim/gradcheck.hpp"
#include "support.hpp"

namespace spmim {
namespace {

using test::naive_conv2d;
using test::random_tensor;

Var conv(Graph& g, const Tensor& x, const Tensor& w, const Conv2dOptions& opt) {
  return ops::conv2d(g.constant(x), g.constant(w), std::nullopt, opt);
}

TEST(Tensor, ConstructionChecksLength) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.reshaped({3, 2}).dim(0), 3);
  EXPECT_THROW(t.reshaped({4, 2}), DimensionError);
}

TEST(Tensor, StackAndUnstackRoundTrip) {
  std::vector<Tensor> items = {random_tensor({2, 3}, 1), random_tensor({2, 3}, 2)};
  const Tensor s = stack(items);
  EXPECT_EQ(s.shape(), (Shape{2, 2, 3}));
  EXPECT_TRUE(bitwise_equal(unstack_one(s, 1), items[1]));
}

TEST(Conv2d, OnesKernelCountsNeighbourhood) {
  Graph g;
  const Tensor y = conv(g, Tensor({1, 1, 3, 3}, 1.0), Tensor({1, 1, 3, 3}, 1.0), {1, 1, 1}).value();
  EXPECT_EQ(y.at(0, 0, 1, 1), 9.0);
  EXPECT_EQ(y.at(0, 0, 0, 0), 4.0);
  EXPECT_EQ(y.at(0, 0, 2, 2), 4.0);
  EXPECT_EQ(y.at(0, 0, 0, 1), 6.0);
}

TEST(Conv2d, UnitPointwiseKernelIsIdentity) {
  Graph g;
  const Tensor x = random_tensor({2, 1, 4, 5}, 3);
  EXPECT_TRUE(bitwise_equal(conv(g, x, Tensor({1, 1, 1, 1}, 1.0), {1, 0, 1}).value(), x));
}

TEST(Conv2d, MatchesNaiveOracleStride2) {
  const Tensor x = random_tensor({1, 2, 5, 5}, 4), w = random_tensor({3, 2, 3, 3}, 5);
  Graph g;
  const Tensor y = conv(g, x, w, {2, 1, 1}).value();
  EXPECT_EQ(y.shape(), (Shape{1, 3, 3, 3}));
  EXPECT_LE(max_abs_diff(y, naive_conv2d(x, w, nullptr, 2, 1, 1, 1)), 1e-12);
}

TEST(Conv2d, MatchesNaiveOracleOnRandomShapes) {
  std::mt19937_64 rng(6);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  int tested = 0;
  while (tested < 200) {
    const int n = pick(1, 3), cin = pick(1, 8), cout = pick(1, 8), h = pick(1, 8), w = pick(1, 8);
    const int k = pick(1, 3), stride = pick(1, 3), pb = pick(0, 2), pe = pick(0, 2);
    const int groups = pick(0, 3) == 0 ? cin : 1;
    const int co = groups == 1 ? cout : cin;
    const int span_h = h + pb + pe - k, span_w = w + pb + pe - k;
    if (span_h < 0 || span_w < 0 || span_h % stride || span_w % stride) continue;
    const Tensor x = random_tensor({n, cin, h, w}, rng()), wt = random_tensor({co, cin / groups, k, k}, rng());
    const Tensor b = random_tensor({co}, rng());
    Graph g;
    Conv2dOptions opt{stride, pb, groups, pe};
    const Tensor y = ops::conv2d(g.constant(x), g.constant(wt), g.constant(b), opt).value();
    ASSERT_LE(max_abs_diff(y, naive_conv2d(x, wt, &b, stride, pb, pe, groups)), 1e-12);
    ++tested;
  }
}

TEST(Conv2d, DepthwiseMatchesPerChannelConvolution) {
  const Tensor x = random_tensor({2, 3, 6, 6}, 7), w = random_tensor({3, 1, 3, 3}, 8);
  Graph g;
  const Tensor y = conv(g, x, w, {1, 1, 3}).value();
  EXPECT_LE(max_abs_diff(y, naive_conv2d(x, w, nullptr, 1, 1, 1, 3)), 1e-12);
}

TEST(Conv2d, ErrorsOnBadGeometry) {
  Graph g;
  EXPECT_THROW(conv(g, Tensor({1, 1, 4, 4}), Tensor({1, 1, 3, 3}), {2, 1, 1}), GeometryError);
  EXPECT_THROW(conv(g, Tensor({1, 1, 2, 2}), Tensor({1, 1, 3, 3}), {1, 0, 1}), GeometryError);
  EXPECT_THROW(conv(g, Tensor({1, 2, 4, 4}), Tensor({1, 3, 3, 3}), {1, 1, 1}), DimensionError);
  EXPECT_THROW(conv(g, Tensor({1, 3, 4, 4}), Tensor({2, 1, 3, 3}), {1, 1, 2}), DimensionError);
  EXPECT_EQ(conv_output_extent(4, 3, 2, 0, 1), 2);
}

TEST(Conv2d, ActiveOutputsAreBitwiseEqualAndMaskedZero) {
  const Tensor x = random_tensor({2, 3, 8, 8}, 9), w = random_tensor({4, 3, 3, 3}, 10);
  SpatialMask m(2, 4, 4);
  std::mt19937_64 rng(11);
  for (int n = 0; n < 2; ++n)
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) m.set(n, r, c, rng() % 2 == 0);
  Graph g;
  const Conv2dOptions opt{2, 0, 1, 1};
  const Tensor full = conv(g, x, w, opt).value();
  const Tensor sparse = ops::conv2d(g.constant(x), g.constant(w), std::nullopt, opt, &m).value();
  for (int n = 0; n < 2; ++n)
    for (int co = 0; co < 4; ++co)
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
          if (m.visible(n, r, c)) {
            ASSERT_EQ(std::bit_cast<std::uint64_t>(sparse.at(n, co, r, c)), std::bit_cast<std::uint64_t>(full.at(n, co, r, c)));
          } else {
            ASSERT_EQ(sparse.at(n, co, r, c), 0.0);
          }
        }
}

TEST(Relu6, Definition) {
  Graph g;
  const Tensor y = ops::relu6(g.constant(Tensor({3}, {-1.0, 3.5, 10.0}))).value();
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 3.5);
  EXPECT_EQ(y[2], 6.0);
}

TEST(Relu6, RangeProperty) {
  Graph g;
  const Tensor y = ops::relu6(g.constant(random_tensor({1000}, 12, -50, 50))).value();
  for (double v : y.data()) ASSERT_TRUE(v >= 0.0 && v <= 6.0);
}

TEST(Upsample, ReplicatesIntoBlocks) {
  Graph g;
  const Tensor y = ops::upsample_nearest2x(g.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}))).value();
  const std::vector<double> expected = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  EXPECT_EQ(y.values(), expected);
  EXPECT_EQ(ops::upsample_nearest2x(g.constant(Tensor({1, 8, 7, 7}))).shape(), (Shape{1, 8, 14, 14}));
}

TEST(Upsample, AveragePoolRecoversSource) {
  Graph g;
  const Tensor x = random_tensor({2, 3, 5, 4}, 13);
  const Tensor y = ops::upsample_nearest2x(g.constant(x)).value();
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < 5; ++r)
        for (int q = 0; q < 4; ++q) {
          const double mean =
              (y.at(n, c, 2 * r, 2 * q) + y.at(n, c, 2 * r, 2 * q + 1) + y.at(n, c, 2 * r + 1, 2 * q) +
               y.at(n, c, 2 * r + 1, 2 * q + 1)) / 4.0;
          ASSERT_EQ(mean, x.at(n, c, r, q));
        }
}

TEST(Backward, Relu6Gradients) {
  for (auto [x, expected] : {std::pair{3.0, 1.0}, std::pair{7.0, 0.0}}) {
    Parameter p("x", Tensor::scalar(x));
    Graph g;
    g.backward(ops::sum(ops::relu6(g.param(p))));
    EXPECT_EQ(p.grad[0], expected);
  }
}

TEST(Backward, TapeIsSingleUse) {
  Parameter p("x", Tensor::scalar(1.0));
  Graph g;
  Var loss = ops::sum(ops::square(g.param(p)));
  g.backward(loss);
  EXPECT_THROW(g.backward(loss), StateError);
  EXPECT_THROW(g.backward(Var{}), StateError);
}

TEST(Backward, UnreachableParameterGetsZeroGradient) {
  Parameter used("used", Tensor::scalar(2.0)), unused("unused", Tensor::full({3}, 5.0));
  unused.grad = Tensor::full({3}, 9.0);
  Graph g;
  g.param(unused);
  g.backward(ops::sum(ops::square(g.param(used))));
  EXPECT_EQ(used.grad[0], 4.0);
  EXPECT_EQ(unused.grad.values(), std::vector<double>(3, 0.0));
}

TEST(Backward, RequiresScalarLoss) {
  Parameter p("x", Tensor::zeros({2}));
  Graph g;
  EXPECT_THROW(g.backward(g.param(p)), DimensionError);
}

TEST(Forward, NonFiniteValuesAreErrors) {
  Graph g;
  EXPECT_THROW(ops::scale(g.constant(Tensor::scalar(1e300)), 1e300), NumericalError);
}

TEST(Forward, RepeatedPassesAreBitwiseIdentical) {
  const Tensor x = random_tensor({2, 3, 6, 6}, 14), w = random_tensor({4, 3, 3, 3}, 15);
  Graph a, b;
  EXPECT_TRUE(bitwise_equal(ops::relu6(conv(a, x, w, {1, 1, 1})).value(), ops::relu6(conv(b, x, w, {1, 1, 1})).value()));
}

TEST(FiniteDifference, Polynomial) {
  const Tensor g = finite_difference_grad([](const Tensor& x) { return x[0] * x[0]; }, Tensor::scalar(3.0));
  EXPECT_NEAR(g[0], 6.0, 1e-8);
}

TEST(FiniteDifference, ConstantFunctionHasZeroGradient) {
  const Tensor g = finite_difference_grad([](const Tensor&) { return 4.2; }, random_tensor({5}, 16));
  for (double v : g.data()) EXPECT_EQ(v, 0.0);
}

TEST(FiniteDifference, NonFiniteValueIsAnError) {
  EXPECT_THROW(finite_difference_grad([](const Tensor&) { return std::numeric_limits<double>::quiet_NaN(); },
                                      Tensor::scalar(1.0)),
               NumericalError);
}

// ---------------------------------------------------------------------------
// Per-primitive gradient checks (64-bit, h = 1e-5, relative error < 1e-6).

class PrimitiveGrad : public ::testing::Test {
 protected:
  void expect_grad_ok(const std::vector<Parameter*>& params, const std::function<Var(Graph&)>& build) {
    const test::GradCheck r = test::check_parameter_grads(params, build);
    EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
    EXPECT_GT(r.coords, 0u);
  }
  // A fixed random linear functional keeps the loss sensitive to every output.
  static Var project(Var y, std::uint64_t seed) { return ops::sum(ops::mul_const(y, random_tensor(y.shape(), seed))); }
};

TEST_F(PrimitiveGrad, Conv2dWithBiasStrideAndGroups) {
  Parameter x("x", random_tensor({2, 4, 6, 6}, 20)), w("w", random_tensor({4, 2, 3, 3}, 21)), b("b", random_tensor({4}, 22));
  expect_grad_ok({&x, &w, &b}, [&](Graph& g) {
    return project(ops::conv2d(g.param(x), g.param(w), g.param(b), {2, 0, 2, 1}), 23);
  });
}

TEST_F(PrimitiveGrad, Conv2dRestrictedToActiveOutputs) {
  Parameter x("x", random_tensor({1, 2, 4, 4}, 24)), w("w", random_tensor({3, 2, 3, 3}, 25));
  SpatialMask m(1, 4, 4);
  m.set(0, 1, 1, false);
  m.set(0, 3, 0, false);
  expect_grad_ok({&x, &w}, [&](Graph& g) {
    return project(ops::conv2d(g.param(x), g.param(w), std::nullopt, {1, 1, 1}, &m), 26);
  });
}

TEST_F(PrimitiveGrad, Relu6AwayFromKinks) {
  Tensor v = random_tensor({20}, 27, -2, 8);
  for (double& e : v.data())
    if (std::abs(e) < 0.01 || std::abs(e - 6) < 0.01) e += 0.1;
  Parameter x("x", v);
  expect_grad_ok({&x}, [&](Graph& g) { return project(ops::relu6(g.param(x)), 28); });
}

TEST_F(PrimitiveGrad, ElementwiseAndReductions) {
  Parameter a("a", random_tensor({2, 3}, 29)), b("b", random_tensor({2, 3}, 30));
  expect_grad_ok({&a, &b}, [&](Graph& g) {
    Var x = g.param(a), y = g.param(b);
    Var t = ops::add(ops::mul(x, y), ops::sub(ops::square(x), ops::scale(y, 0.3)));
    return ops::add(ops::mean(t), project(t, 31));
  });
}

TEST_F(PrimitiveGrad, UpsampleAndPooling) {
  Parameter x("x", random_tensor({2, 3, 2, 3}, 32));
  expect_grad_ok({&x}, [&](Graph& g) {
    return ops::add(project(ops::upsample_nearest2x(g.param(x)), 33), project(ops::global_avg_pool(g.param(x)), 34));
  });
}

TEST_F(PrimitiveGrad, MaskZeroAndFillMasked) {
  Parameter x("x", random_tensor({2, 3, 4, 4}, 35)), fill("fill", random_tensor({3}, 36));
  SpatialMask m(2, 4, 4);
  m.set(0, 0, 0, false);
  m.set(1, 2, 3, false);
  m.set(1, 3, 3, false);
  expect_grad_ok({&x, &fill}, [&](Graph& g) {
    return ops::add(project(ops::mask_zero(g.param(x), m), 37), project(ops::fill_masked(g.param(x), m, g.param(fill)), 38));
  });
}

TEST_F(PrimitiveGrad, BatchNormTrainDenseAndMasked) {
  Parameter x("x", random_tensor({2, 3, 4, 4}, 39)), gamma("gamma", random_tensor({3}, 40, 0.5, 1.5)),
      beta("beta", random_tensor({3}, 41));
  SpatialMask m(2, 4, 4);
  for (int r = 0; r < 4; ++r) m.set(0, r, 1, false);
  m.set(1, 0, 0, false);
  for (const SpatialMask* mask : std::initializer_list<const SpatialMask*>{nullptr, &m}) {
    BatchNormStats stats{Tensor::zeros({3}), Tensor::full({3}, 1.0)};
    expect_grad_ok({&x, &gamma, &beta}, [&](Graph& g) {
      return project(ops::batch_norm(g.param(x), g.param(gamma), g.param(beta), stats, Mode::kTrain, mask), 42);
    });
  }
}

TEST_F(PrimitiveGrad, BatchNormEval) {
  Parameter x("x", random_tensor({2, 3, 2, 2}, 43)), gamma("gamma", random_tensor({3}, 44)), beta("beta", random_tensor({3}, 45));
  BatchNormStats stats{random_tensor({3}, 46), random_tensor({3}, 47, 0.5, 2.0)};
  expect_grad_ok({&x, &gamma, &beta}, [&](Graph& g) {
    return project(ops::batch_norm(g.param(x), g.param(gamma), g.param(beta), stats, Mode::kEval), 48);
  });
}

TEST_F(PrimitiveGrad, LinearAndCrossEntropy) {
  Parameter x("x", random_tensor({4, 5}, 49)), w("w", random_tensor({3, 5}, 50)), b("b", random_tensor({3}, 51));
  expect_grad_ok({&x, &w, &b}, [&](Graph& g) {
    return ops::softmax_cross_entropy(ops::linear(g.param(x), g.param(w), g.param(b)), {0, 2, 1, 2});
  });
}

TEST_F(PrimitiveGrad, MaskedMse) {
  Parameter r("r", random_tensor({2, 3, 4, 4}, 52));
  const Tensor target = random_tensor({2, 3, 4, 4}, 53);
  SpatialMask m(2, 4, 4);
  m.set(0, 1, 2, false);
  m.set(1, 0, 0, false);
  m.set(1, 3, 1, false);
  expect_grad_ok({&r}, [&](Graph& g) { return ops::masked_mse(g.param(r), target, m); });
}

TEST(EndToEndGrad, TwoLayerConvNet) {
  Parameter x("x", random_tensor({2, 2, 6, 6}, 54)), w1("w1", random_tensor({3, 2, 3, 3}, 55)),
      b1("b1", random_tensor({3}, 56)), w2("w2", random_tensor({2, 3, 3, 3}, 57));
  const Tensor target = random_tensor({2, 2, 3, 3}, 58);
  const test::GradCheck r = test::check_parameter_grads({&w1, &b1, &w2}, [&](Graph& g) {
    Var h = ops::relu6(ops::conv2d(g.param(x), g.param(w1), g.param(b1), {1, 1, 1}));
    Var y = ops::conv2d(h, g.param(w2), std::nullopt, {2, 0, 1, 1});
    return ops::mean(ops::square(ops::sub(y, g.constant(target))));
  });
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(EndToEndGrad, FiniteDifferenceAgreesOnMaskedMseOfOneConv) {
  const Tensor x = random_tensor({1, 3, 4, 4}, 59), target = random_tensor({1, 3, 4, 4}, 60);
  Parameter w("w", random_tensor({3, 3, 3, 3}, 61));
  SpatialMask m(1, 4, 4);
  m.set(0, 0, 0, false);
  m.set(0, 2, 3, false);
  auto loss_at = [&](const Tensor& weights) {
    Graph g;
    Parameter p("w", weights);
    return ops::masked_mse(ops::conv2d(g.constant(x), g.param(p), std::nullopt, {1, 1, 1}), target, m).value().item();
  };
  {
    Graph g;
    g.backward(ops::masked_mse(ops::conv2d(g.constant(x), g.param(w), std::nullopt, {1, 1, 1}), target, m));
  }
  const Tensor numeric = finite_difference_grad(loss_at, w.value);
  for (std::size_t i = 0; i < numeric.numel(); ++i) EXPECT_LT(relative_error(w.grad[i], numeric[i]), 1e-6);
}

}  // namespace
}  // namespace spmim
