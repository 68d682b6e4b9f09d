// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "neurodiff/conditioning.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "neurodiff/errors.hpp"
#include "neurodiff/nn/gradcheck.hpp"
#include "neurodiff/nn/rng.hpp"

namespace neurodiff::conditioning {
namespace {

using nn::Tensor;

Tensor random_tensor(nn::Shape shape, nn::Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

CrossAttentionWeights random_weights(std::size_t d_model, std::size_t width, std::size_t heads,
                                     nn::Rng& rng) {
  const double s = 0.2;
  return {random_tensor({d_model, d_model}, rng, s), random_tensor({width, d_model}, rng, s),
          random_tensor({width, d_model}, rng, s), random_tensor({d_model, d_model}, rng, s),
          heads};
}

Tensor rows_of(const Tensor& t, const std::vector<std::size_t>& order) {
  const std::size_t w = t.dim(1);
  Tensor out({order.size(), w});
  for (std::size_t r = 0; r < order.size(); ++r) {
    std::copy_n(t.ptr() + order[r] * w, w, out.ptr() + r * w);
  }
  return out;
}

std::size_t below(nn::Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

TEST(FusionModeNames, RoundTrip) {
  for (auto m : {FusionMode::kCrossAttention, FusionMode::kAddition, FusionMode::kConcatenation}) {
    EXPECT_EQ(parse_fusion_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_fusion_mode("film"), ConfigError);
}

TEST(ConditionEmbedding, Validation) {
  nn::Rng rng(1);
  EXPECT_NO_THROW(validate({random_tensor({1, 768}, rng), "a"}, 768));
  try {
    validate({random_tensor({1, 512}, rng), "b"}, 768);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("768"), std::string::npos);
  }
  Tensor bad = random_tensor({2, 768}, rng);
  bad[5] = std::nan("");
  EXPECT_THROW(validate({bad, "c"}, 768), NumericError);
}

TEST(CrossAttention, SingleTokenGivesItsValueRow) {
  nn::Rng rng(2);
  auto w = random_weights(16, 768, 1, rng);
  Tensor h = random_tensor({10, 16}, rng);
  ConditionEmbedding cond{random_tensor({1, 768}, rng, 0.05), "x"};
  Tensor out = attention_values(h, cond, w);
  Tensor v = nn::matmul(nn::constant(cond.tokens), nn::constant(w.w_v)).value();
  for (std::size_t r = 0; r < 10; ++r) {
    for (std::size_t c = 0; c < 16; ++c) EXPECT_NEAR(out.at(r, c), v[c], 1e-12);
  }
}

TEST(CrossAttention, IdenticalTokensAverageValues) {
  nn::Rng rng(3);
  auto w = random_weights(8, 768, 2, rng);
  Tensor h = random_tensor({5, 8}, rng);
  Tensor token = random_tensor({1, 768}, rng, 0.05);
  Tensor two({2, 768});
  std::copy_n(token.ptr(), 768, two.ptr());
  std::copy_n(token.ptr(), 768, two.ptr() + 768);
  Tensor out = attention_values(h, {two, "x"}, w);
  Tensor v = nn::matmul(nn::constant(two), nn::constant(w.w_v)).value();
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 8; ++c) {
      EXPECT_NEAR(out.at(r, c), 0.5 * (v.at(0, c) + v.at(1, c)), 1e-12);
    }
  }
}

TEST(CrossAttention, OutputShapeAndWidthCheck) {
  nn::Rng rng(4);
  auto w = random_weights(512, 768, 8, rng);
  Tensor h = random_tensor({100, 512}, rng);
  Tensor out = cross_attention(h, {random_tensor({1, 768}, rng, 0.05), "x"}, w);
  EXPECT_EQ(out.shape(), (nn::Shape{100, 512}));
  EXPECT_THROW(cross_attention(h, {random_tensor({1, 640}, rng), "y"}, w), ShapeError);
}

TEST(CrossAttention, ResidualWithZeroOutputProjection) {
  nn::Rng rng(5);
  auto w = random_weights(8, 768, 2, rng);
  w.w_out.fill(0.0);
  Tensor h = random_tensor({6, 8}, rng);
  EXPECT_EQ(cross_attention(h, {random_tensor({3, 768}, rng, 0.05), "x"}, w), h);
}

// Property: output does not depend on token order.
TEST(CrossAttention, TokenPermutationInvariance) {
  nn::Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t s = 1 + below(rng, 6);
    const std::size_t heads = std::size_t(1) << below(rng, 3);
    auto w = random_weights(8, 768, heads, rng);
    Tensor h = random_tensor({1 + below(rng, 12), 8}, rng);
    Tensor tokens = random_tensor({s, 768}, rng, 0.1);
    std::vector<std::size_t> order(s);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = s; i > 1; --i) std::swap(order[i - 1], order[below(rng, i)]);
    Tensor a = cross_attention(h, {tokens, "x"}, w);
    Tensor b = cross_attention(h, {rows_of(tokens, order), "x"}, w);
    EXPECT_LT(max_abs_diff(a, b), 1e-6) << "trial " << trial;
  }
}

// Property: pre-projection rows are convex combinations of value rows.
TEST(CrossAttention, PreProjectionRowsAreConvex) {
  nn::Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t s = 1 + below(rng, 5);
    auto w = random_weights(8, 768, 2, rng);
    Tensor h = random_tensor({1 + below(rng, 10), 8}, rng, 3.0);
    Tensor tokens = random_tensor({s, 768}, rng, 0.5);
    Tensor out = attention_values(h, {tokens, "x"}, w);
    Tensor v = nn::matmul(nn::constant(tokens), nn::constant(w.w_v)).value();
    for (std::size_t c = 0; c < 8; ++c) {
      double lo = v.at(0, c), hi = v.at(0, c);
      for (std::size_t r = 1; r < s; ++r) {
        lo = std::min(lo, v.at(r, c));
        hi = std::max(hi, v.at(r, c));
      }
      for (std::size_t r = 0; r < out.dim(0); ++r) {
        EXPECT_GE(out.at(r, c), lo - 1e-12);
        EXPECT_LE(out.at(r, c), hi + 1e-12);
      }
    }
  }
}

TEST(FuseAddition, Examples) {
  nn::Rng rng(8);
  Tensor h = random_tensor({4, 3}, rng);
  ConditionEmbedding cond{random_tensor({2, 768}, rng), "x"};
  EXPECT_EQ(fuse_addition(h, cond, Tensor({768, 3}), Tensor({3})), h);

  // Single token mapped to v lands on every row.
  Tensor w({768, 3});
  w.at(0, 0) = 1.0;
  w.at(1, 1) = 1.0;
  w.at(2, 2) = 1.0;
  Tensor token({1, 768});
  token[0] = 0.5, token[1] = -1.0, token[2] = 2.0;
  Tensor out = fuse_addition(Tensor({4, 3}), {token, "x"}, w, Tensor({3}));
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_EQ(out.at(r, 0), 0.5);
    EXPECT_EQ(out.at(r, 1), -1.0);
    EXPECT_EQ(out.at(r, 2), 2.0);
  }

  // Two tokens: the added vector is their mean.
  Tensor pair({2, 768});
  pair.at(0, 0) = 1.0, pair.at(0, 1) = 4.0, pair.at(0, 2) = -2.0;
  pair.at(1, 0) = 3.0, pair.at(1, 1) = 0.0, pair.at(1, 2) = 2.0;
  out = fuse_addition(h, {pair, "x"}, w, Tensor({3}));
  const double mean[3] = {2.0, 2.0, 0.0};
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(out.at(r, c), h.at(r, c) + mean[c]);
  }
  EXPECT_THROW(fuse_addition(h, cond, Tensor({768, 4}), Tensor({4})), ShapeError);
}

TEST(FuseConcatenation, Examples) {
  nn::Rng rng(9);
  Tensor h = random_tensor({4, 3}, rng);
  ConditionEmbedding cond{random_tensor({2, 768}, rng), "x"};
  Tensor ident({771, 3});
  for (std::size_t i = 0; i < 3; ++i) ident.at(i, i) = 1.0;
  EXPECT_EQ(fuse_concatenation(h, cond, ident, Tensor({3})), h);

  Tensor cond_only = random_tensor({771, 3}, rng);
  for (std::size_t i = 0; i < 9; ++i) cond_only[i] = 0.0;
  Tensor out = fuse_concatenation(Tensor({4, 3}), cond, cond_only, Tensor({3}));
  for (std::size_t r = 1; r < 4; ++r) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.at(r, c), out.at(0, c));
  }
  EXPECT_THROW(fuse_concatenation(h, cond, Tensor({770, 3}), Tensor({3})), ShapeError);
}

TEST(FuseConcatenation, HandComputedReducedWidth) {
  // d_model = 2, condition width 2: [h | c] = [1, 2 | 3, 4] through a 4x2 map.
  Tensor h({1, 2}, {1, 2});
  Tensor c({1, 2}, {3, 4});
  Tensor w({4, 2}, {1, 0,  //
                    0, 1,  //
                    1, -1,  //
                    2, 0.5});
  Tensor b = Tensor::vector({0.5, -0.5});
  Tensor out = fuse_concatenation(h, {c, "x"}, w, b);
  // col 0: 1 + 0 + 3 + 8 + 0.5; col 1: 0 + 2 - 3 + 2 - 0.5
  EXPECT_DOUBLE_EQ(out.at(0, 0), 12.5);
  EXPECT_DOUBLE_EQ(out.at(0, 1), 0.5);
}

// Property: both baselines are exactly linear in the brain features once
// the condition contribution is removed.
TEST(BaselineFusion, LinearInFeatures) {
  nn::Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    ConditionEmbedding cond{random_tensor({1 + below(rng, 3), 768}, rng), "x"};
    Tensor h1 = random_tensor({5, 4}, rng), h2 = random_tensor({5, 4}, rng);
    const double a = rng.normal(), b = rng.normal();
    Tensor mix({5, 4});
    for (std::size_t i = 0; i < 20; ++i) mix[i] = a * h1[i] + b * h2[i];
    Tensor wa = random_tensor({768, 4}, rng), ba = random_tensor({4}, rng);
    Tensor wc = random_tensor({772, 4}, rng), bc = random_tensor({4}, rng);
    Tensor zero({5, 4});
    // f(h) - f(0) is the linear part.
    auto lin = [&](auto f, const Tensor& x) {
      Tensor fx = f(x), f0 = f(zero);
      for (std::size_t i = 0; i < fx.numel(); ++i) fx[i] -= f0[i];
      return fx;
    };
    auto fa = [&](const Tensor& x) { return fuse_addition(x, cond, wa, ba); };
    auto fc = [&](const Tensor& x) { return fuse_concatenation(x, cond, wc, bc); };
    for (auto f : {std::function<Tensor(const Tensor&)>(fa), std::function<Tensor(const Tensor&)>(fc)}) {
      Tensor lhs = lin(f, mix), l1 = lin(f, h1), l2 = lin(f, h2);
      for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(lhs[i], a * l1[i] + b * l2[i], 1e-10);
    }
  }
}

class FusionGradients : public ::testing::Test {
 protected:
  void SetUp() override {
    nn::Rng rng(11);
    h = random_tensor({2 * 6, 8}, rng);
    cond = random_tensor({2 * 3, 16}, rng, 0.5);
    target = random_tensor({2 * 6, 8}, rng);
    auto add = [&](const std::string& name, nn::Shape shape) {
      params.add(name, random_tensor(std::move(shape), rng, 0.3));
    };
    add("h", {12, 8});
    params.get("h").value = h;
    add("cond", {6, 16});
    params.get("cond").value = cond;
    add("w_q", {8, 8});
    add("w_k", {16, 8});
    add("w_v", {16, 8});
    add("w_out", {8, 8});
    add("add.w", {16, 8});
    add("add.b", {8});
    add("cat.w", {24, 8});
    add("cat.b", {8});
  }

  nn::Var p(const std::string& name) { return nn::parameter(params.get(name)); }

  Tensor h, cond, target;
  nn::ParamSet params;
};

TEST_F(FusionGradients, CrossAttention) {
  auto loss = [&] {
    return nn::mse_loss(
        cross_attention(p("h"), p("cond"), p("w_q"), p("w_k"), p("w_v"), p("w_out"), 2, 2),
        nn::constant(target));
  };
  EXPECT_LT(nn::finite_diff_check(loss, params, 1e-6, 200, 1).max_relative_error, 1e-4);
}

TEST_F(FusionGradients, Addition) {
  auto loss = [&] {
    return nn::mse_loss(fuse_addition(p("h"), p("cond"), p("add.w"), p("add.b"), 2),
                        nn::constant(target));
  };
  EXPECT_LT(nn::finite_diff_check(loss, params, 1e-6, 200, 2).max_relative_error, 1e-4);
}

TEST_F(FusionGradients, Concatenation) {
  auto loss = [&] {
    return nn::mse_loss(fuse_concatenation(p("h"), p("cond"), p("cat.w"), p("cat.b"), 2),
                        nn::constant(target));
  };
  EXPECT_LT(nn::finite_diff_check(loss, params, 1e-6, 200, 3).max_relative_error, 1e-4);
}

}  // namespace
}  // namespace neurodiff::conditioning
