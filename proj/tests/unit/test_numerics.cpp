#include <gtest/gtest.h>

#include <cmath>

#include "fedlips/error.hpp"
#include "fedlips/finite_diff.hpp"
#include "fedlips/kernels.hpp"
#include "fedlips/rng.hpp"
#include "helpers.hpp"

using namespace fedlips;
using namespace fedlips::numerics;
using fedlips::testing::naive_conv2d;
using fedlips::testing::naive_matmul;
using fedlips::testing::random_tensor;

namespace {

constexpr double kFdEps = 1e-5;
constexpr double kFdTol = 1e-4;

// Contracts an output with a fixed random projection so that every output
// element contributes to the scalar checked by finite differences.
double project(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

}  // namespace

// --- matmul ---------------------------------------------------------------

TEST(Matmul, HandComputedProduct) {
  const Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
  const Tensor b = Tensor::from_rows({{5, 6}, {7, 8}});
  EXPECT_EQ(matmul(a, b), Tensor::from_rows({{19, 22}, {43, 50}}));
}

TEST(Matmul, IdentityAndZero) {
  const Tensor a = random_tensor({3, 3}, 1);
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  EXPECT_EQ(matmul(a, eye), a);
  EXPECT_EQ(matmul(a, Tensor({3, 2})), Tensor({3, 2}));
}

TEST(Matmul, MatchesNaiveOracleOnRandomShapes) {
  Rng rng = make_rng(11);
  std::uniform_int_distribution<std::size_t> dim(1, 17);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    const Tensor a = random_tensor({m, k}, 100 + trial), b = random_tensor({k, n}, 200 + trial);
    const Tensor c = matmul(a, b), ref = naive_matmul(a, b);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-12);
  }
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    (void)matmul(Tensor({2, 3}), Tensor({4, 5}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

// --- conv2d -----------------------------------------------------------------

TEST(Conv2d, IdentityKernelReproducesChannel) {
  const Tensor x = random_tensor({2, 1, 5, 5}, 3);
  const Tensor w({1, 1, 1, 1}, 1.0);
  EXPECT_EQ(conv2d_forward(x, w, Tensor::vector({0.0}), 1, 0), x);
}

TEST(Conv2d, ZeroKernelGivesBias) {
  const Tensor x = random_tensor({1, 2, 4, 4}, 4);
  const Tensor y = conv2d_forward(x, Tensor({3, 2, 3, 3}), Tensor::vector({1, 2, 3}), 1, 1);
  for (std::size_t f = 0; f < 3; ++f)
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(y[f * 16 + i], static_cast<double>(f + 1));
}

TEST(Conv2d, OnesKernelOverOnesSumsWindow) {
  const Tensor y = conv2d_forward(Tensor({1, 1, 4, 4}, 1.0), Tensor({1, 1, 3, 3}, 1.0), Tensor(), 1, 0);
  EXPECT_EQ(y, Tensor({1, 1, 2, 2}, 9.0));
}

TEST(Conv2d, MatchesDirectLoopOracle) {
  Rng rng = make_rng(5);
  std::uniform_int_distribution<int> side(3, 9), k(1, 3), st(1, 3), pd(0, 2), ch(1, 3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t h = side(rng), w = side(rng), kh = k(rng), kw = k(rng);
    const int stride = st(rng), pad = pd(rng);
    const std::size_t c = ch(rng), f = ch(rng);
    const Tensor x = random_tensor({2, c, h, w}, 300 + trial);
    const Tensor wt = random_tensor({f, c, kh, kw}, 400 + trial);
    const Tensor b = random_tensor({f}, 500 + trial);
    const Tensor y = conv2d_forward(x, wt, b, stride, pad);
    const Tensor ref = naive_conv2d(x, wt, b, stride, pad);
    ASSERT_EQ(y.shape(), ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
  }
}

TEST(Conv2d, OutputShapeFormulaSweep) {
  Rng rng = make_rng(6);
  std::uniform_int_distribution<int> side(1, 12), k(1, 5), st(1, 4), pd(0, 3);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t h = side(rng), w = side(rng), kh = k(rng), kw = k(rng);
    const int stride = st(rng), pad = pd(rng);
    if (kh > h + 2 * pad || kw > w + 2 * pad) {
      if (kh > h + 2 * pad) EXPECT_THROW(conv_output_size(h, kh, stride, pad), ShapeError);
      if (kw > w + 2 * pad) EXPECT_THROW(conv_output_size(w, kw, stride, pad), ShapeError);
      continue;
    }
    const Tensor y = conv2d_forward(Tensor({1, 1, h, w}, 1.0), Tensor({1, 1, kh, kw}, 1.0), Tensor(),
                                    stride, pad);
    EXPECT_EQ(y.dim(2), (h + 2 * pad - kh) / stride + 1);
    EXPECT_EQ(y.dim(3), (w + 2 * pad - kw) / stride + 1);
    ++checked;
  }
  EXPECT_GT(checked, 100);
}

TEST(Conv2d, RejectsNegativePadAndZeroStride) {
  EXPECT_THROW(conv_output_size(4, 3, 1, -1), ArgumentError);
  EXPECT_THROW(conv_output_size(4, 3, 0, 0), ArgumentError);
  EXPECT_THROW(conv2d_forward(Tensor({1, 1, 4, 4}), Tensor({1, 1, 3, 3}), Tensor(), 1, -1),
               ArgumentError);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Rng rng = make_rng(7);
  std::uniform_int_distribution<int> side(3, 6), st(1, 2), pd(0, 1);
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t h = side(rng), w = side(rng);
    const int stride = st(rng), pad = pd(rng);
    const Tensor x = random_tensor({2, 2, h, w}, 600 + trial);
    const Tensor wt = random_tensor({3, 2, 3, 3}, 700 + trial);
    const Tensor b = random_tensor({3}, 800 + trial);
    const Tensor y = conv2d_forward(x, wt, b, stride, pad);
    const Tensor r = random_tensor(y.shape(), 900 + trial);
    const Conv2dGrads g = conv2d_backward(x, wt, r, stride, pad, true);

    const Tensor nx = finite_diff_grad(
        [&](const Tensor& v) { return project(conv2d_forward(v, wt, b, stride, pad), r); }, x, kFdEps);
    const Tensor nw = finite_diff_grad(
        [&](const Tensor& v) { return project(conv2d_forward(x, v, b, stride, pad), r); }, wt, kFdEps);
    const Tensor nb = finite_diff_grad(
        [&](const Tensor& v) { return project(conv2d_forward(x, wt, v, stride, pad), r); }, b, kFdEps);
    EXPECT_LT(max_relative_error(g.input, nx), kFdTol);
    EXPECT_LT(max_relative_error(g.weight, nw), kFdTol);
    EXPECT_LT(max_relative_error(g.bias, nb), kFdTol);
  }
}

// --- linear / relu / pooling ---------------------------------------------------

TEST(Linear, GradientsMatchFiniteDifferences) {
  const Tensor x = random_tensor({4, 5}, 10), w = random_tensor({3, 5}, 11), b = random_tensor({3}, 12);
  const Tensor r = random_tensor({4, 3}, 13);
  const LinearGrads g = linear_backward(x, w, r, true);
  EXPECT_LT(max_relative_error(g.input, finite_diff_grad([&](const Tensor& v) {
              return project(linear_forward(v, w, b), r);
            }, x)), kFdTol);
  EXPECT_LT(max_relative_error(g.weight, finite_diff_grad([&](const Tensor& v) {
              return project(linear_forward(x, v, b), r);
            }, w)), kFdTol);
  EXPECT_LT(max_relative_error(g.bias, finite_diff_grad([&](const Tensor& v) {
              return project(linear_forward(x, w, v), r);
            }, b)), kFdTol);
}

TEST(Relu, GradientMatchesFiniteDifferencesAwayFromKink) {
  Tensor x = random_tensor({3, 7}, 20);
  for (double& v : x.values()) {
    if (std::abs(v) < 1e-2) v = 0.5;
  }
  const Tensor r = random_tensor(x.shape(), 21);
  const Tensor g = relu_backward(x, r);
  const Tensor n = finite_diff_grad([&](const Tensor& v) { return project(relu_forward(v), r); }, x);
  EXPECT_LT(max_relative_error(g, n), kFdTol);
}

TEST(MaxPool, GradientMatchesFiniteDifferences) {
  const Tensor x = random_tensor({2, 2, 4, 6}, 30);
  const MaxPoolResult fwd = maxpool2d_forward(x, 2, 2);
  EXPECT_EQ(fwd.output.shape(), (Shape{2, 2, 2, 3}));
  const Tensor r = random_tensor(fwd.output.shape(), 31);
  const Tensor g = maxpool2d_backward(r, fwd.argmax, x.shape());
  const Tensor n = finite_diff_grad(
      [&](const Tensor& v) { return project(maxpool2d_forward(v, 2, 2).output, r); }, x);
  EXPECT_LT(max_relative_error(g, n), kFdTol);
}

TEST(AvgPool, GradientMatchesFiniteDifferences) {
  const Tensor x = random_tensor({2, 3, 3, 3}, 40);
  const Tensor y = global_avgpool_forward(x);
  EXPECT_EQ(y.shape(), (Shape{2, 3}));
  const Tensor r = random_tensor(y.shape(), 41);
  const Tensor g = global_avgpool_backward(r, x.shape());
  const Tensor n =
      finite_diff_grad([&](const Tensor& v) { return project(global_avgpool_forward(v), r); }, x);
  EXPECT_LT(max_relative_error(g, n), kFdTol);
}

// --- batch norm -------------------------------------------------------------

TEST(BatchNorm, TrainModeNormalizesPerChannel) {
  const Tensor x = random_tensor({8, 3, 2, 2}, 50, 10.0);
  const RunningStats rs{Tensor({3}, 0.0), Tensor({3}, 1.0)};
  const auto r = batchnorm_forward(x, Tensor({3}, 1.0), Tensor({3}, 0.0), rs, BatchNormMode::kTrain);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t n = 0; n < 8; ++n)
      for (std::size_t j = 0; j < 4; ++j) mean += r.output[(n * 3 + c) * 4 + j];
    mean /= 32.0;
    for (std::size_t n = 0; n < 8; ++n)
      for (std::size_t j = 0; j < 4; ++j) sq += std::pow(r.output[(n * 3 + c) * 4 + j] - mean, 2);
    EXPECT_NEAR(mean, 0.0, 1e-6);
    // var / (var + eps) stays within 1e-6 of 1 at this input scale.
    EXPECT_NEAR(sq / 32.0, 1.0, 1e-6);
  }
}

TEST(BatchNorm, AffineCase) {
  const Tensor x = random_tensor({6, 2}, 51);
  const RunningStats rs{Tensor({2}, 0.0), Tensor({2}, 1.0)};
  const auto plain = batchnorm_forward(x, Tensor({2}, 1.0), Tensor({2}, 0.0), rs, BatchNormMode::kTrain);
  const auto affine = batchnorm_forward(x, Tensor({2}, 2.0), Tensor({2}, 3.0), rs, BatchNormMode::kTrain);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(affine.output[i], 2.0 * plain.output[i] + 3.0, 1e-12);
}

TEST(BatchNorm, EvalModeScalarHandEvaluation) {
  // x = 2.5 with running mean 0.5, var 3.0, gamma 1.5, beta -0.25.
  const Tensor x({1, 1}, 2.5);
  const RunningStats rs{Tensor({1}, 0.5), Tensor({1}, 3.0)};
  const auto r = batchnorm_forward(x, Tensor({1}, 1.5), Tensor({1}, -0.25), rs, BatchNormMode::kEval);
  const double expected = (2.5 - 0.5) / std::sqrt(3.0 + 1e-5) * 1.5 - 0.25;
  EXPECT_NEAR(r.output[0], expected, 1e-14);
  EXPECT_EQ(r.running, rs);
}

TEST(BatchNorm, RunningStatsUseMomentumAndUnbiasedVariance) {
  const Tensor x = Tensor::from_rows({{1.0}, {3.0}});
  const RunningStats rs{Tensor({1}, 0.0), Tensor({1}, 1.0)};
  const auto r = batchnorm_forward(x, Tensor({1}, 1.0), Tensor({1}, 0.0), rs, BatchNormMode::kTrain);
  EXPECT_NEAR(r.running.mean[0], 0.1 * 2.0, 1e-15);
  EXPECT_NEAR(r.running.var[0], 0.9 * 1.0 + 0.1 * 2.0, 1e-15);  // unbiased var of {1,3} = 2
}

TEST(BatchNorm, SingleValuePerChannelInTrainModeThrows) {
  const RunningStats rs{Tensor({2}, 0.0), Tensor({2}, 1.0)};
  EXPECT_THROW(batchnorm_forward(Tensor({1, 2}), Tensor({2}, 1.0), Tensor({2}, 0.0), rs,
                                 BatchNormMode::kTrain),
               ArgumentError);
}

TEST(BatchNorm, GradientsMatchFiniteDifferences) {
  for (auto mode : {BatchNormMode::kTrain, BatchNormMode::kEval}) {
    const Tensor x = random_tensor({4, 3, 2, 2}, 60);
    const Tensor gamma = random_tensor({3}, 61), beta = random_tensor({3}, 62);
    const RunningStats rs{random_tensor({3}, 63), Tensor({3}, 1.7)};
    const auto fwd = batchnorm_forward(x, gamma, beta, rs, mode);
    const Tensor r = random_tensor(x.shape(), 64);
    const auto g = batchnorm_backward(fwd.cache, gamma, r);
    auto out = [&](const Tensor& xv, const Tensor& gv, const Tensor& bv) {
      return project(batchnorm_forward(xv, gv, bv, rs, mode).output, r);
    };
    EXPECT_LT(max_relative_error(g.input, finite_diff_grad([&](const Tensor& v) { return out(v, gamma, beta); }, x)), kFdTol);
    EXPECT_LT(max_relative_error(g.gamma, finite_diff_grad([&](const Tensor& v) { return out(x, v, beta); }, gamma)), kFdTol);
    EXPECT_LT(max_relative_error(g.beta, finite_diff_grad([&](const Tensor& v) { return out(x, gamma, v); }, beta)), kFdTol);
  }
}

// --- softmax cross-entropy -----------------------------------------------------

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLogC) {
  const std::vector<int> labels{0, 3, 4};
  const auto r = softmax_cross_entropy(Tensor({3, 5}, 0.7), labels);
  EXPECT_NEAR(r.loss, std::log(5.0), 1e-14);
}

TEST(SoftmaxCrossEntropy, ConfidentCorrectLogitGivesNearZeroLoss) {
  Tensor logits({1, 4}, 0.0);
  logits[2] = 50.0;
  const std::vector<int> labels{2};
  EXPECT_LT(softmax_cross_entropy(logits, labels).loss, 1e-6);
}

TEST(SoftmaxCrossEntropy, StableForHugeLogits) {
  Tensor logits = Tensor::from_rows({{1e4, -1e4, 0.0}});
  const std::vector<int> labels{1};
  const auto r = softmax_cross_entropy(logits, labels);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_TRUE(r.grad.all_finite());
}

TEST(SoftmaxCrossEntropy, GradientMatchesFiniteDifferences) {
  const Tensor logits = random_tensor({5, 4}, 70, 2.0);
  const std::vector<int> labels{0, 1, 3, 2, 3};
  const auto r = softmax_cross_entropy(logits, labels);
  const Tensor n = finite_diff_grad(
      [&](const Tensor& v) { return softmax_cross_entropy(v, labels).loss; }, logits);
  EXPECT_LT(max_relative_error(r.grad, n), kFdTol);
}

TEST(SoftmaxCrossEntropy, LabelOutOfRangeThrows) {
  const std::vector<int> bad{4};
  EXPECT_THROW(softmax_cross_entropy(Tensor({1, 4}), bad), ArgumentError);
  const std::vector<int> neg{-1};
  EXPECT_THROW(softmax_cross_entropy(Tensor({1, 4}), neg), ArgumentError);
}

// --- finite differences ----------------------------------------------------------

TEST(FiniteDiff, SumOfSquares) {
  const Tensor g = finite_diff_grad(
      [](const Tensor& v) { return v[0] * v[0] + v[1] * v[1]; }, Tensor::vector({1.0, 2.0}), 1e-5);
  EXPECT_NEAR(g[0], 2.0, 1e-6);
  EXPECT_NEAR(g[1], 4.0, 1e-6);
}

TEST(FiniteDiff, ConstantFunctionHasZeroGradient) {
  const Tensor g = finite_diff_grad([](const Tensor&) { return 3.0; }, random_tensor({4}, 80));
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(FiniteDiff, AgreesWithTwoLayerMlpBackprop) {
  const Tensor x = random_tensor({4, 3}, 90);
  const Tensor w1 = random_tensor({5, 3}, 91), b1 = random_tensor({5}, 92);
  const Tensor w2 = random_tensor({2, 5}, 93), b2 = random_tensor({2}, 94);
  const std::vector<int> labels{0, 1, 1, 0};
  auto loss = [&](const Tensor& w) {
    const Tensor h = relu_forward(linear_forward(x, w, b1));
    return softmax_cross_entropy(linear_forward(h, w2, b2), labels).loss;
  };
  const Tensor pre = linear_forward(x, w1, b1);
  const Tensor h = relu_forward(pre);
  const auto ce = softmax_cross_entropy(linear_forward(h, w2, b2), labels);
  const LinearGrads g2 = linear_backward(h, w2, ce.grad, true);
  const LinearGrads g1 = linear_backward(x, w1, relu_backward(pre, g2.input), true);
  EXPECT_LT(max_relative_error(g1.weight, finite_diff_grad(loss, w1)), kFdTol);
}

// --- purity -------------------------------------------------------------------

TEST(Kernels, PureAndBitwiseRepeatable) {
  const Tensor x = random_tensor({3, 2, 5, 5}, 100), w = random_tensor({4, 2, 3, 3}, 101);
  const Tensor b = random_tensor({4}, 102);
  const Tensor x_copy = x;
  EXPECT_EQ(conv2d_forward(x, w, b, 1, 1), conv2d_forward(x, w, b, 1, 1));
  const Tensor dy = random_tensor({3, 4, 5, 5}, 103);
  const auto g1 = conv2d_backward(x, w, dy, 1, 1, true), g2 = conv2d_backward(x, w, dy, 1, 1, true);
  EXPECT_EQ(g1.input, g2.input);
  EXPECT_EQ(g1.weight, g2.weight);
  const RunningStats rs{Tensor({2}, 0.0), Tensor({2}, 1.0)};
  EXPECT_EQ(batchnorm_forward(x, Tensor({2}, 1.0), Tensor({2}, 0.0), rs, BatchNormMode::kTrain).output,
            batchnorm_forward(x, Tensor({2}, 1.0), Tensor({2}, 0.0), rs, BatchNormMode::kTrain).output);
  EXPECT_EQ(x, x_copy);
}
