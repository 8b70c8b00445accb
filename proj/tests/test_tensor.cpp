// Copyright 2026 The quantsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include "quantsep/tensor.hpp"
#include "test_util.hpp"

namespace {

using namespace quantsep;
using qs_test::expect_gradients;
using qs_test::random_floats;
using qs_test::Vec;

TEST(TensorPrimitives, PreluHalvesNegativeSideAtQuarterSlope) {
  auto y = prelu(Tensor::from({2}, {-2.0f, 3.0f}), Tensor::scalar(0.25f));
  EXPECT_FLOAT_EQ(y.at(0), -0.5f);
  EXPECT_FLOAT_EQ(y.at(1), 3.0f);
}

TEST(TensorPrimitives, DilatedConvSumsEveryOtherSample) {
  auto x = Tensor::from({1, 5}, {1, 2, 3, 4, 5});
  auto w = Tensor::from({1, 1, 3}, {1, 1, 1});
  auto y = conv1d(x, w, {}, {.dilation = 2});
  ASSERT_EQ(y.shape(), (Shape{1, 5}));
  EXPECT_FLOAT_EQ(y.at(2), 9.0f);
  // Zero padding at the edges.
  EXPECT_FLOAT_EQ(y.at(0), 1.0f + 3.0f);
  EXPECT_FLOAT_EQ(y.at(4), 3.0f + 5.0f);
}

TEST(TensorPrimitives, SigmoidZeroIsHalf) { EXPECT_FLOAT_EQ(sigmoid(Tensor::scalar(0.0f)).item(), 0.5f); }

TEST(TensorPrimitives, ShapeMismatchNamesPrimitiveAndShapes) {
  auto a = Tensor::zeros({2, 3}), b = Tensor::zeros({3, 2});
  try {
    add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3,2]"), std::string::npos) << msg;
  }
  EXPECT_THROW(concat_channels({Tensor::zeros({1, 3}), Tensor::zeros({1, 4})}), ShapeError);
  EXPECT_THROW(conv1d(Tensor::zeros({2, 4}), Tensor::zeros({1, 3, 1}), {}), ShapeError);
  EXPECT_THROW(conv1d(Tensor::zeros({2, 4}), Tensor::zeros({1, 2, 2}), {}), ShapeError);
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
}

TEST(TensorBackward, SquareAtThreeHasGradientSix) {
  auto x = Tensor::scalar(3.0f, true);
  mul(x, x).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 6.0f);
}

TEST(TensorBackward, SigmoidSlopeAtZeroIsQuarter) {
  auto x = Tensor::scalar(0.0f, true);
  sigmoid(x).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 0.25f);
}

TEST(TensorBackward, RejectsNonScalarLoss) {
  auto x = Tensor::zeros({3}, true);
  EXPECT_THROW(scale(x, 2.0f).backward(), ShapeError);
}

TEST(TensorBackward, GradientsAccumulateAcrossCalls) {
  auto x = Tensor::scalar(2.0f, true);
  mul(x, x).backward();
  mul(x, x).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 8.0f);
  x.zero_grad();
  EXPECT_FLOAT_EQ(x.grad()[0], 0.0f);
}

TEST(TensorBackward, LeavesWithoutRequiresGradReceiveNothing) {
  auto x = Tensor::scalar(2.0f, true), c = Tensor::scalar(5.0f);
  mul(x, c).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 5.0f);
  EXPECT_FALSE(c.has_grad());
}

TEST(TensorBackward, InteriorValuesAreReadOnly) {
  auto x = Tensor::scalar(1.0f, true);
  auto y = scale(x, 2.0f);
  EXPECT_THROW(y.mutable_data(), ShapeError);
}

// --- finite-difference checks, one per primitive --------------------------

TEST(TensorGradCheck, Add) {
  expect_gradients([](const auto& in) { return add(in[0], in[1]); },
                   [](const auto& in) {
                     Vec y(in[0].size());
                     for (std::size_t i = 0; i < y.size(); ++i) y[i] = in[0][i] + in[1][i];
                     return y;
                   },
                   {random_floats(6, 1), random_floats(6, 2)}, {{2, 3}, {2, 3}}, 10);
}

TEST(TensorGradCheck, Sub) {
  expect_gradients([](const auto& in) { return sub(in[0], in[1]); },
                   [](const auto& in) {
                     Vec y(in[0].size());
                     for (std::size_t i = 0; i < y.size(); ++i) y[i] = in[0][i] - in[1][i];
                     return y;
                   },
                   {random_floats(6, 3), random_floats(6, 4)}, {{6}, {6}}, 11);
}

TEST(TensorGradCheck, Mul) {
  expect_gradients([](const auto& in) { return mul(in[0], in[1]); },
                   [](const auto& in) {
                     Vec y(in[0].size());
                     for (std::size_t i = 0; i < y.size(); ++i) y[i] = in[0][i] * in[1][i];
                     return y;
                   },
                   {random_floats(8, 5), random_floats(8, 6)}, {{2, 4}, {2, 4}}, 12);
}

TEST(TensorGradCheck, Scale) {
  expect_gradients([](const auto& in) { return scale(in[0], -1.5f); },
                   [](const auto& in) {
                     Vec y(in[0]);
                     for (double& v : y) v *= -1.5;
                     return y;
                   },
                   {random_floats(5, 7)}, {{5}}, 13);
}

TEST(TensorGradCheck, Sigmoid) {
  expect_gradients([](const auto& in) { return sigmoid(in[0]); },
                   [](const auto& in) {
                     Vec y(in[0]);
                     for (double& v : y) v = 1.0 / (1.0 + std::exp(-v));
                     return y;
                   },
                   {random_floats(10, 8, -2.0, 2.0)}, {{10}}, 14);
}

TEST(TensorGradCheck, Tanh) {
  expect_gradients([](const auto& in) { return quantsep::tanh(in[0]); },
                   [](const auto& in) {
                     Vec y(in[0]);
                     for (double& v : y) v = std::tanh(v);
                     return y;
                   },
                   {random_floats(10, 9, -1.5, 1.5)}, {{10}}, 15);
}

TEST(TensorGradCheck, Prelu) {
  expect_gradients([](const auto& in) { return prelu(in[0], in[1]); },
                   [](const auto& in) { return qs_test::ref_prelu(in[0], in[1][0]); },
                   {random_floats(12, 16, -1.0, 1.0, 0.05), {0.3f}}, {{3, 4}, {1}}, 17);
}

TEST(TensorGradCheck, SumAndMean) {
  expect_gradients([](const auto& in) { return add(scale(sum(in[0]), 0.5f), mean(in[0])); },
                   [](const auto& in) {
                     double s = 0.0;
                     for (double v : in[0]) s += v;
                     return Vec{0.5 * s + s / static_cast<double>(in[0].size())};
                   },
                   {random_floats(7, 18)}, {{7}}, 19);
}

TEST(TensorGradCheck, Softmax) {
  expect_gradients([](const auto& in) { return softmax(in[0]); },
                   [](const auto& in) {
                     Vec y(in[0].size());
                     double z = 0.0;
                     for (std::size_t i = 0; i < y.size(); ++i) z += y[i] = std::exp(in[0][i]);
                     for (double& v : y) v /= z;
                     return y;
                   },
                   {random_floats(4, 20, -2.0, 2.0)}, {{4}}, 21);
}

TEST(TensorGradCheck, Mix) {
  expect_gradients([](const auto& in) { return mix({in[0], in[1], in[2]}, in[3]); },
                   [](const auto& in) {
                     Vec y(in[0].size(), 0.0);
                     for (std::size_t k = 0; k < 3; ++k)
                       for (std::size_t i = 0; i < y.size(); ++i) y[i] += in[3][k] * in[k][i];
                     return y;
                   },
                   {random_floats(6, 22), random_floats(6, 23), random_floats(6, 24), random_floats(3, 25, 0.1, 1.0)},
                   {{2, 3}, {2, 3}, {2, 3}, {3}}, 26);
}

TEST(TensorGradCheck, ConcatAndSlice) {
  expect_gradients(
      [](const auto& in) { return slice_channels(concat_channels({in[0], in[1]}), 1, 2); },
      [](const auto& in) {
        Vec all(in[0]);
        all.insert(all.end(), in[1].begin(), in[1].end());
        return Vec(all.begin() + 4, all.begin() + 12);
      },
      {random_floats(8, 27), random_floats(4, 28)}, {{2, 4}, {1, 4}}, 29);
}

TEST(TensorGradCheck, PointwiseConv) {
  expect_gradients([](const auto& in) { return conv1d(in[0], in[1], in[2]); },
                   [](const auto& in) { return qs_test::ref_conv1d(in[0], 3, 5, in[1], 2, 1, in[2]); },
                   {random_floats(15, 30), random_floats(6, 31), random_floats(2, 32)}, {{3, 5}, {2, 3, 1}, {2}}, 33);
}

TEST(TensorGradCheck, DilatedDepthwiseConv) {
  expect_gradients(
      [](const auto& in) { return conv1d(in[0], in[1], in[2], {.dilation = 2, .groups = 3}); },
      [](const auto& in) { return qs_test::ref_conv1d(in[0], 3, 7, in[1], 3, 3, in[2], 2, 3); },
      {random_floats(21, 34), random_floats(9, 35), random_floats(3, 36)}, {{3, 7}, {3, 1, 3}, {3}}, 37);
}

TEST(TensorGradCheck, GroupedConvWithoutBias) {
  expect_gradients([](const auto& in) { return conv1d(in[0], in[1], {}, {.dilation = 1, .groups = 2}); },
                   [](const auto& in) { return qs_test::ref_conv1d(in[0], 4, 6, in[1], 4, 3, {}, 1, 2); },
                   {random_floats(24, 38), random_floats(24, 39)}, {{4, 6}, {4, 2, 3}}, 40);
}

TEST(TensorGradCheck, GlobalLayerNorm) {
  expect_gradients([](const auto& in) { return global_layer_norm(in[0], in[1], in[2]); },
                   [](const auto& in) { return qs_test::ref_gln(in[0], 3, 4, in[1], in[2]); },
                   {random_floats(12, 41, -2.0, 2.0), random_floats(3, 42, 0.5, 1.5), random_floats(3, 43)},
                   {{3, 4}, {3}, {3}}, 44);
}

// Three layers: pointwise conv, tanh, dilated depthwise conv, PReLU, head.
TEST(TensorGradCheck, ThreeLayerToyNetwork) {
  const std::size_t T = 6;
  auto build = [](const auto& in) {
    auto h = quantsep::tanh(conv1d(in[0], in[1], in[2]));
    h = prelu(conv1d(h, in[3], in[4], {.dilation = 2, .groups = 3}), in[5]);
    return conv1d(h, in[6], in[7]);
  };
  auto oracle = [T](const auto& in) {
    Vec h = qs_test::ref_conv1d(in[0], 2, T, in[1], 3, 1, in[2]);
    for (double& v : h) v = std::tanh(v);
    h = qs_test::ref_prelu(qs_test::ref_conv1d(h, 3, T, in[3], 3, 3, in[4], 2, 3), in[5][0]);
    return qs_test::ref_conv1d(h, 3, T, in[6], 1, 1, in[7]);
  };
  expect_gradients(build, oracle,
                   {random_floats(2 * T, 50), random_floats(6, 51), random_floats(3, 52), random_floats(9, 53),
                    random_floats(3, 54), {0.2f}, random_floats(3, 55), random_floats(1, 56)},
                   {{2, T}, {3, 2, 1}, {3}, {3, 1, 3}, {3}, {1}, {1, 3, 1}, {1}}, 57);
}

TEST(TensorProperties, BackwardIsLinearInTheLoss) {
  const auto xv = random_floats(6, 60);
  auto grad_of = [&](float a, float b) {
    auto x = Tensor::from({6}, xv, true);
    auto f = sum(quantsep::tanh(x));
    auto g = sum(mul(x, x));
    add(scale(f, a), scale(g, b)).backward();
    return std::vector<float>(x.grad().begin(), x.grad().end());
  };
  const auto gf = grad_of(1, 0), gg = grad_of(0, 1), gab = grad_of(2.5f, -0.75f);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(gab[i], 2.5f * gf[i] - 0.75f * gg[i], 1e-6);
}

TEST(TensorProperties, RepeatedRunsAreBitIdentical) {
  auto run = [] {
    auto x = Tensor::from({2, 8}, random_floats(16, 70), true);
    auto w = Tensor::from({4, 2, 3}, random_floats(24, 71), true);
    auto y = global_layer_norm(conv1d(x, w, {}), Tensor::from({4}, {1, 1, 1, 1}), Tensor::zeros({4}));
    auto loss = mean(mul(y, y));
    const float value = loss.item();
    loss.backward();
    std::vector<float> out{value};
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
