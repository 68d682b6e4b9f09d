// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>

#include "neurodiff/errors.hpp"
#include "neurodiff/nn/gradcheck.hpp"
#include "neurodiff/nn/ops.hpp"
#include "neurodiff/nn/rng.hpp"

namespace neurodiff::nn {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

TEST(AffineMap, IdentityWeights) {
  NoGradGuard g;
  auto y = affine_map(constant(Tensor::from_rows({{1, 2}})),
                      constant(Tensor::from_rows({{1, 0}, {0, 1}})), constant(Tensor::vector({0, 0})));
  EXPECT_EQ(y.value(), Tensor::from_rows({{1, 2}}));
}

TEST(AffineMap, BiasShift) {
  NoGradGuard g;
  auto y = affine_map(constant(Tensor::from_rows({{1, 2}})),
                      constant(Tensor::from_rows({{1, 0}, {0, 1}})), constant(Tensor::vector({3, 4})));
  EXPECT_EQ(y.value(), Tensor::from_rows({{4, 6}}));
}

TEST(AffineMap, HandMultiply) {
  NoGradGuard g;
  auto y = affine_map(constant(Tensor::from_rows({{1, 2}, {3, 4}})),
                      constant(Tensor::from_rows({{1, 1}, {1, -1}})), constant(Tensor::vector({0, 0})));
  EXPECT_EQ(y.value(), Tensor::from_rows({{3, -1}, {7, -1}}));
}

TEST(AffineMap, DimensionMismatchNamesBothShapes) {
  NoGradGuard g;
  try {
    affine_map(constant(Tensor({2, 3})), constant(Tensor({2, 2})), Var());
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[2x2]"), std::string::npos);
  }
}

TEST(AffineMap, LinearWithoutBias) {
  NoGradGuard g;
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({4, 5}, rng);
    Tensor w = random_tensor({5, 3}, rng);
    const double a = rng.normal() * 3.0;
    Tensor ax = x;
    for (auto& v : ax.data()) v *= a;
    auto y1 = affine_map(constant(ax), constant(w), constant(Tensor({3}, 0.0))).value();
    auto y0 = affine_map(constant(x), constant(w), constant(Tensor({3}, 0.0))).value();
    for (std::size_t i = 0; i < y0.numel(); ++i) {
      EXPECT_NEAR(y1[i], a * y0[i], 1e-6 * std::max(1.0, std::abs(a * y0[i])));
    }
  }
}

TEST(Conv2d, UnitKernelIsIdentityBitForBit) {
  NoGradGuard g;
  Rng rng(1);
  Tensor x = random_tensor({1, 4, 4}, rng);
  auto y = conv2d(constant(x), constant(Tensor({1, 1, 1, 1}, 1.0)), Var(), 1, 0);
  EXPECT_EQ(y.value(), x);
}

TEST(Conv2d, WindowSum) {
  NoGradGuard g;
  auto y = conv2d(constant(Tensor({1, 3, 3}, 1.0)), constant(Tensor({1, 1, 3, 3}, 1.0)), Var(), 1, 0);
  EXPECT_EQ(y.value(), Tensor({1, 1, 1}, 9.0));
}

TEST(Conv2d, ZeroInputGivesZeroOutput) {
  NoGradGuard g;
  Rng rng(2);
  auto y = conv2d(constant(Tensor({2, 5, 6}, 0.0)), constant(random_tensor({3, 2, 3, 3}, rng)),
                  Var(), 1, 1);
  for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, NonIntegralExtentIsShapeError) {
  NoGradGuard g;
  EXPECT_THROW(conv2d(constant(Tensor({1, 4, 4}, 1.0)), constant(Tensor({1, 1, 3, 3}, 1.0)),
                      Var(), 2, 1),
               ShapeError);
  EXPECT_THROW(conv2d(constant(Tensor({1, 4, 4}, 1.0)), constant(Tensor({1, 1, 2, 2}, 1.0)),
                      Var(), 1, 0),
               ShapeError);
}

TEST(Conv2d, StridedAsymmetricPaddingHalvesEvenExtents) {
  NoGradGuard g;
  auto y = conv2d_padded(constant(Tensor({1, 1, 8, 16}, 1.0)),
                         constant(Tensor({1, 1, 3, 3}, 1.0)), Var(), 2, 0, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 4, 8}));
}

TEST(SoftmaxRows, Examples) {
  auto a = softmax_rows(Tensor::from_rows({{0, 0}}));
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  EXPECT_DOUBLE_EQ(a[1], 0.5);
  for (double x : {-1e3, 0.0, 42.0, 1e3}) {
    EXPECT_EQ(softmax_rows(Tensor::from_rows({{x}}))[0], 1.0);
  }
  auto b = softmax_rows(Tensor::from_rows({{std::log(1.0), std::log(3.0)}}));
  EXPECT_NEAR(b[0], 0.25, 1e-12);
  EXPECT_NEAR(b[1], 0.75, 1e-12);
}

TEST(SoftmaxRows, RowsSumToOneAndShiftInvariant) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor m = random_tensor({3, 7}, rng, 20.0);
    Tensor p = softmax_rows(m);
    Tensor shifted = m;
    const double c = rng.normal() * 50.0;
    for (std::size_t j = 0; j < 7; ++j) shifted.at(1, j) += c;
    Tensor q = softmax_rows(shifted);
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        EXPECT_GE(p.at(r, j), 0.0);
        total += p.at(r, j);
        EXPECT_NEAR(p.at(r, j), q.at(r, j), 1e-6);
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(FiniteDiffCheck, QuadraticHasExactCentralDifference) {
  ParamSet params;
  Param& p = params.add("p", Tensor::vector({1, 2, 3}));
  // sum(p^2) expressed through mse against zero: mean((p - 0)^2) * 3.
  auto quad = [&] { return scale(mse_loss(parameter(p), constant(Tensor({3}, 0.0))), 3.0); };
  auto result = finite_diff_check(quad, params, 1e-4, 30);
  EXPECT_LT(result.max_relative_error, 1e-6);
  EXPECT_NEAR(p.grad[0], 2.0, 1e-12);
  EXPECT_NEAR(p.grad[1], 4.0, 1e-12);
  EXPECT_NEAR(p.grad[2], 6.0, 1e-12);
}

TEST(FiniteDiffCheck, ConstantLossHasZeroError) {
  ParamSet params;
  params.add("p", Tensor::vector({1, 2, 3}));
  auto loss = [&] { return constant(Tensor({1}, 5.0)); };
  auto result = finite_diff_check(loss, params, 1e-5, 10);
  EXPECT_EQ(result.max_relative_error, 0.0);
}

TEST(FiniteDiffCheck, RejectsEpsOutsideRangeAndNonFiniteLoss) {
  ParamSet params;
  params.add("p", Tensor::vector({1}));
  auto loss = [&] { return constant(Tensor({1}, 1.0)); };
  EXPECT_THROW(finite_diff_check(loss, params, 1e-2, 1), ConfigError);
  EXPECT_THROW(finite_diff_check(loss, params, 1e-9, 1), ConfigError);
  auto bad = [&] { return constant(Tensor({1}, std::nan(""))); };
  EXPECT_THROW(finite_diff_check(bad, params, 1e-5, 1), NumericError);
}

// Each differentiable op, checked on random small inputs. A fixed random
// projection turns the op output into a scalar.
class OpGradients : public ::testing::Test {
 protected:
  Rng rng{11};
  ParamSet params;

  Var project(const Var& y) {
    if (!probe_.count(y.shape())) probe_[y.shape()] = random_tensor(y.shape(), rng);
    const Tensor& w = probe_[y.shape()];
    return sum(matmul(flatten(y), constant(w.reshaped({w.numel(), 1}))));
  }

  void expect_gradients(const std::function<Var()>& f, double tol = 1e-4) {
    auto loss = [&] { return project(f()); };
    auto result = finite_diff_check(loss, params, 1e-6, 60, 5);
    EXPECT_LT(result.max_relative_error, tol)
        << result.worst_param << "[" << result.worst_index << "] analytic " << result.analytic
        << " numeric " << result.numeric;
  }

 private:
  static Var flatten(const Var& y) {
    const std::size_t n = y.value().numel();
    Tensor flat = y.value().reshaped({1, n});
    return make_result(std::move(flat), {y}, [n](Node& self) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
    });
  }
  std::map<Shape, Tensor> probe_;
};

TEST_F(OpGradients, AffineMap) {
  auto& x = params.add("x", random_tensor({3, 4}, rng));
  auto& w = params.add("w", random_tensor({4, 5}, rng));
  auto& b = params.add("b", random_tensor({5}, rng));
  expect_gradients([&] { return affine_map(parameter(x), parameter(w), parameter(b)); });
}

TEST_F(OpGradients, Conv2dBatchedStridedPadded) {
  auto& x = params.add("x", random_tensor({2, 3, 6, 8}, rng));
  auto& k = params.add("k", random_tensor({4, 3, 3, 3}, rng));
  auto& b = params.add("b", random_tensor({4}, rng));
  expect_gradients([&] { return conv2d(parameter(x), parameter(k), parameter(b), 1, 1); });
  expect_gradients([&] { return conv2d_padded(parameter(x), parameter(k), parameter(b), 2, 0, 1); });
}

TEST_F(OpGradients, GroupNormSiLU) {
  auto& x = params.add("x", random_tensor({2, 4, 3, 5}, rng));
  auto& g = params.add("g", random_tensor({4}, rng));
  auto& b = params.add("b", random_tensor({4}, rng));
  expect_gradients([&] { return silu(group_norm(parameter(x), parameter(g), parameter(b), 2)); });
}

TEST_F(OpGradients, SoftmaxAndAttention) {
  auto& m = params.add("m", random_tensor({3, 5}, rng));
  expect_gradients([&] { return softmax_rows(parameter(m)); });
  auto& q = params.add("q", random_tensor({2 * 6, 4}, rng));
  auto& k = params.add("k", random_tensor({2 * 3, 4}, rng));
  auto& v = params.add("v", random_tensor({2 * 3, 4}, rng));
  expect_gradients([&] { return attention(parameter(q), parameter(k), parameter(v), 2, 2); });
}

TEST_F(OpGradients, LayoutOps) {
  auto& a = params.add("a", random_tensor({2, 3, 2, 4}, rng));
  auto& b = params.add("b", random_tensor({2, 2, 2, 4}, rng));
  auto& v = params.add("v", random_tensor({2, 3}, rng));
  expect_gradients([&] {
    Var x = concat_channels(add_channel_bias(parameter(a), parameter(v)), parameter(b));
    return from_tokens(to_tokens(upsample_nearest2x(x)), {2, 5, 4, 8});
  });
  auto& c = params.add("c", random_tensor({2 * 3, 4}, rng));
  auto& h = params.add("h", random_tensor({2 * 5, 2}, rng));
  expect_gradients([&] {
    return concat_cols(parameter(h), broadcast_rows(token_mean(parameter(c), 2), 5));
  });
}

TEST_F(OpGradients, Losses) {
  auto& a = params.add("a", random_tensor({3, 4}, rng));
  auto& b = params.add("b", random_tensor({3, 4}, rng));
  expect_gradients([&] { return scale(sub(mse_loss(parameter(a), parameter(b)), sum(parameter(b))), 0.5); });
}

TEST(GroupNorm, GroupCountKeepsTwoChannelsPerGroup) {
  EXPECT_EQ(group_count(64), 32u);
  EXPECT_EQ(group_count(320), 32u);
  EXPECT_EQ(group_count(8), 4u);
  EXPECT_EQ(group_count(12), 6u);
  EXPECT_EQ(group_count(7), 1u);
  EXPECT_EQ(group_count(2), 1u);
  EXPECT_EQ(group_count(1), 1u);
  for (std::size_t c = 1; c <= 200; ++c) {
    const auto g = group_count(c);
    EXPECT_EQ(c % g, 0u) << c;
    EXPECT_LE(g, 32u);
    if (c > 1) EXPECT_GE(c / g, 2u) << c;
  }
}

TEST(Autograd, NoGradRecordsNothing) {
  ParamSet params;
  auto& p = params.add("p", Tensor::vector({1, 2}));
  NoGradGuard g;
  Var v = parameter(p);
  EXPECT_FALSE(v.requires_grad());
  EXPECT_TRUE(mse_loss(v, constant(Tensor({2}, 0.0))).node()->inputs.empty());
}

TEST(ParamSet, NamesUniqueAndGradShapeMatches) {
  ParamSet params;
  auto& p = params.add("a", Tensor({2, 3}));
  EXPECT_EQ(p.grad.shape(), p.value.shape());
  EXPECT_THROW(params.add("a", Tensor({1})), ConfigError);
  EXPECT_THROW(params.get("missing"), LookupError);
}

}  // namespace
}  // namespace neurodiff::nn
