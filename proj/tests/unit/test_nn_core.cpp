#include <gtest/gtest.h>

#include <cmath>

#include "xfire/nn/adam.hpp"
#include "xfire/nn/gradcheck_suite.hpp"
#include "xfire/nn/lstm.hpp"
#include "xfire/nn/ops.hpp"

namespace {

using namespace xfire;
using namespace xfire::nn;

Tensor<double> random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.vec()) v = rng.uniform(-1.0, 1.0);
  return t;
}

TEST(Dense, IdentityWeightsCopyInput) {
  const auto x = random_tensor({4, 3}, 1);
  Tensor<double> w({3, 3});
  for (std::size_t i = 0; i < 3; ++i) w(i, i) = 1.0;
  Tensor<double> b({3}, 0.5);
  const auto y = dense_forward(x, w, b);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i] + 0.5);
  EXPECT_THROW(dense_forward(x, Tensor<double>({2, 3}), b), std::invalid_argument);
}

TEST(Conv2d, OneByOneIdentityKernel) {
  const auto x = random_tensor({2, 5, 6, 3}, 2);
  Tensor<double> k({1, 1, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) k(0, 0, c, c) = 1.0;
  const auto y = conv2d_forward(x, k);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(y.vec(), x.vec());
}

TEST(Conv2d, ValidPaddingShape) {
  const auto x = random_tensor({1, 15, 80, 1}, 3);
  const auto y = conv2d_forward(x, random_tensor({9, 1, 1, 16}, 4));
  EXPECT_EQ(y.shape(), (Shape{1, 7, 80, 16}));
}

TEST(Conv2d, MatchesNaiveCorrelation) {
  const auto x = random_tensor({2, 6, 5, 2}, 5);
  const auto k = random_tensor({3, 2, 2, 4}, 6);
  const auto y = conv2d_forward(x, k);
  ASSERT_EQ(y.shape(), (Shape{2, 4, 4, 4}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t o = 0; o < 4; ++o) {
          double s = 0;
          for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t c = 0; c < 2; ++c)
              for (std::size_t ci = 0; ci < 2; ++ci) s += x(b, i + a, j + c, ci) * k(a, c, ci, o);
          EXPECT_NEAR(y(b, i, j, o), s, 1e-12);
        }
}

// kw * ci = 68 takes the transposed-kernel path in both directions.
TEST(Conv2d, WideKernelMatchesNaiveForwardAndBackward) {
  const std::size_t n = 2, h = 5, w = 36, ci = 2, kh = 2, kw = 34, co = 3, ho = 4, wo = 3;
  const auto x = random_tensor({n, h, w, ci}, 11);
  const auto k = random_tensor({kh, kw, ci, co}, 12);
  const auto dy = random_tensor({n, ho, wo, co}, 13);
  const auto y = conv2d_forward(x, k);
  ASSERT_EQ(y.shape(), (Shape{n, ho, wo, co}));
  Tensor<double> dx, dk(k.shape());
  conv2d_backward(x, k, dy, &dx, dk);
  Tensor<double> ref_dx(x.shape()), ref_dk(k.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j)
        for (std::size_t o = 0; o < co; ++o) {
          double s = 0;
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t c = 0; c < kw; ++c)
              for (std::size_t q = 0; q < ci; ++q) {
                s += x(b, i + a, j + c, q) * k(a, c, q, o);
                ref_dk(a, c, q, o) += x(b, i + a, j + c, q) * dy(b, i, j, o);
                ref_dx(b, i + a, j + c, q) += k(a, c, q, o) * dy(b, i, j, o);
              }
          EXPECT_NEAR(y(b, i, j, o), s, 1e-12);
        }
  for (std::size_t i = 0; i < dk.size(); ++i) ASSERT_NEAR(dk[i], ref_dk[i], 1e-12) << i;
  for (std::size_t i = 0; i < dx.size(); ++i) ASSERT_NEAR(dx[i], ref_dx[i], 1e-12) << i;
}

TEST(BatchNorm, TrainModeNormalizesEachChannel) {
  const auto x = random_tensor({8, 3, 2, 2}, 7);
  Tensor<double> gamma({2}, 1.0), beta({2}, 0.0), rm({2}, 0.0), rv({2}, 1.0);
  const auto y = batchnorm_forward(x, gamma, beta, rm, rv, Mode::train);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0, s2 = 0;
    const std::size_t m = y.size() / 2;
    for (std::size_t i = c; i < y.size(); i += 2) {
      s += y[i];
      s2 += y[i] * y[i];
    }
    EXPECT_NEAR(s / m, 0.0, 1e-12);
    EXPECT_NEAR(s2 / m, 1.0, 1e-3);
  }
}

TEST(BatchNorm, GammaAndBetaScaleAndShift) {
  const auto x = random_tensor({4, 2, 2, 1}, 8);
  Tensor<double> g1({1}, 1.0), b0({1}, 0.0), g3({1}, 3.0), b2({1}, -2.0);
  Tensor<double> rm({1}), rv({1}, 1.0);
  const auto base = batchnorm_forward(x, g1, b0, rm, rv, Mode::train);
  const auto scaled = batchnorm_forward(x, g3, b2, rm, rv, Mode::train);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(scaled[i], 3.0 * base[i] - 2.0, 1e-12);
}

TEST(BatchNorm, RunningStatisticsUsedInEvalMode) {
  const auto x = random_tensor({2, 1, 1, 1}, 9);
  Tensor<double> g({1}, 1.0), b({1}, 0.0), rm({1}, 0.25), rv({1}, 4.0);
  const auto y = batchnorm_forward(x, g, b, rm, rv, Mode::eval);
  EXPECT_NEAR(y[0], (x[0] - 0.25) / std::sqrt(4.0 + 1e-5), 1e-12);
  EXPECT_THROW(batchnorm_forward(random_tensor({1, 2, 2, 1}, 1), g, b, rm, rv, Mode::train), std::invalid_argument);
}

TEST(Activations, ReluAndSoftmax) {
  Tensor<double> x({1, 4}, std::vector<double>{-1.0, 0.0, 2.0, -0.5});
  EXPECT_EQ(relu_forward(x).vec(), (std::vector<double>{0.0, 0.0, 2.0, 0.0}));
  const auto p = softmax(random_tensor({6, 2}, 10));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(p(i, 0) + p(i, 1), 1.0, 1e-12);
  Tensor<double> zeros({3, 2});
  const std::vector<std::uint8_t> labels{0, 1, 1};
  EXPECT_NEAR(softmax_cross_entropy(zeros, std::span<const std::uint8_t>(labels)), std::log(2.0), 1e-12);
}

TEST(Softmax, StableForLargeLogits) {
  Tensor<double> x({1, 2}, std::vector<double>{1000.0, 999.0});
  const auto p = softmax(x);
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(Adam, ZeroGradientLeavesWeights) {
  Parameter<double> p("w", random_tensor({5}, 11));
  const auto before = p.value.vec();
  AdamState<double> st;
  std::vector<Parameter<double>*> ps{&p};
  for (int i = 0; i < 3; ++i) adam_update(std::span<Parameter<double>* const>(ps), st);
  EXPECT_EQ(p.value.vec(), before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter<double> p("w", Tensor<double>({3}, std::vector<double>{1.0, 1.0, 1.0}));
  p.grad = Tensor<double>({3}, std::vector<double>{0.5, -2.0, 1e-3});
  AdamState<double> st(AdamOptions{0.01});
  std::vector<Parameter<double>*> ps{&p};
  adam_update(std::span<Parameter<double>* const>(ps), st);
  EXPECT_NEAR(p.value[0], 0.99, 1e-6);
  EXPECT_NEAR(p.value[1], 1.01, 1e-6);
  EXPECT_NEAR(p.value[2], 0.99, 1e-4);
}

TEST(Lstm, ZeroWeightsGiveZeroHidden) {
  LstmParams<double> p("l", 3, 4);
  const auto h = lstm_forward(random_tensor({2, 5, 3}, 12), p);
  for (double v : h.vec()) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, StepwiseMatchesSequenceForward) {
  LstmParams<double> p("l", 3, 4);
  Rng rng(13);
  p.init(rng);
  const auto x = random_tensor({1, 7, 3}, 14);
  const auto h = lstm_forward(x, p);
  LstmCellState<double> s(4);
  for (std::size_t t = 0; t < 7; ++t) {
    s = lstm_step(std::span<const double>(x.data() + t * 3, 3), s, p);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(s.h[j], h(0, t, j), 1e-12);
  }
}

TEST(Lstm, ForgetGateBiasInitializedToOne) {
  LstmParams<double> p("l", 2, 3);
  Rng rng(1);
  p.init(rng);
  for (std::size_t j = 0; j < 12; ++j) EXPECT_EQ(p.b.value[j], (j >= 3 && j < 6) ? 1.0 : 0.0);
}

TEST(GradCheck, SuitePassesWithFewTrials) {
  GradCheckSuiteOptions opt;
  opt.trials = 3;
  for (const auto& r : run_gradcheck_suite(opt)) EXPECT_TRUE(r.passed) << r.layer << " " << r.max_rel_error;
}

TEST(GradCheck, CorruptedLayerFails) {
  GradCheckSuiteOptions opt;
  opt.trials = 2;
  opt.corrupt = "dense";
  for (const auto& r : run_gradcheck_suite(opt)) EXPECT_EQ(r.passed, r.layer != "dense") << r.layer;
}

TEST(GradCheck, RelativeErrorUsesFloor) {
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0, 1e-3), 1e-6);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0, 1e-3), 0.5);
}

}  // namespace
