// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "neurodiff/conditioning.hpp"

#include "neurodiff/errors.hpp"

namespace neurodiff::conditioning {

using nn::Tensor;
using nn::Var;

void validate(const ConditionEmbedding& cond, std::size_t expected_width) {
  if (cond.tokens.rank() != 2) {
    throw ShapeError("condition '" + cond.image_id + "' must be a token matrix, got " +
                     nn::shape_str(cond.tokens.shape()));
  }
  if (cond.width() != expected_width) {
    throw ShapeError("condition '" + cond.image_id + "' has token width " +
                     std::to_string(cond.width()) + " but the cross-attention dimension is " +
                     std::to_string(expected_width));
  }
  if (!cond.tokens.all_finite()) {
    throw NumericError("condition '" + cond.image_id + "' has non-finite entries");
  }
}

std::string_view to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kCrossAttention: return "cross_attention";
    case FusionMode::kAddition: return "addition";
    case FusionMode::kConcatenation: return "concatenation";
  }
  return "unknown";
}

FusionMode parse_fusion_mode(std::string_view text) {
  if (text == "cross_attention") return FusionMode::kCrossAttention;
  if (text == "addition") return FusionMode::kAddition;
  if (text == "concatenation") return FusionMode::kConcatenation;
  throw ConfigError("unknown fusion mode '" + std::string(text) +
                    "' (expected cross_attention, addition or concatenation)");
}

namespace {

void check_width(const Var& cond, std::size_t rows_of_w, const char* op) {
  if (cond.value().rank() != 2 || cond.shape()[1] != rows_of_w) {
    throw ShapeError(std::string(op) + ": condition tokens " + nn::shape_str(cond.shape()) +
                     " do not match projection input width " + std::to_string(rows_of_w));
  }
}

}  // namespace

Var cross_attention(const Var& h, const Var& cond, const Var& w_q, const Var& w_k,
                    const Var& w_v, const Var& w_out, std::size_t batch, std::size_t heads) {
  check_width(cond, w_k.shape().at(0), "cross_attention");
  Var q = nn::matmul(h, w_q);
  Var k = nn::matmul(cond, w_k);
  Var v = nn::matmul(cond, w_v);
  Var attended = nn::attention(q, k, v, batch, heads);
  return nn::add(h, nn::matmul(attended, w_out));
}

Var fuse_addition(const Var& h, const Var& cond, const Var& w, const Var& b, std::size_t batch) {
  check_width(cond, w.shape().at(0), "fuse_addition");
  if (h.value().rank() != 2 || h.shape()[1] != w.shape().at(1)) {
    throw ShapeError("fuse_addition: features " + nn::shape_str(h.shape()) +
                     " do not match projection " + nn::shape_str(w.shape()));
  }
  Var pooled = nn::token_mean(nn::affine_map(cond, w, b), batch);
  return nn::add(h, nn::broadcast_rows(pooled, h.shape()[0] / batch));
}

Var fuse_concatenation(const Var& h, const Var& cond, const Var& w, const Var& b,
                       std::size_t batch) {
  if (h.value().rank() != 2 || cond.value().rank() != 2) {
    throw ShapeError("fuse_concatenation: expected token matrices");
  }
  const std::size_t d_model = h.shape()[1];
  if (w.shape().at(0) != d_model + cond.shape()[1] || w.shape().at(1) != d_model) {
    throw ShapeError("fuse_concatenation: projection " + nn::shape_str(w.shape()) +
                     " does not map [" + std::to_string(d_model) + " + " +
                     std::to_string(cond.shape()[1]) + "] features back to " +
                     std::to_string(d_model));
  }
  Var pooled = nn::broadcast_rows(nn::token_mean(cond, batch), h.shape()[0] / batch);
  return nn::affine_map(nn::concat_cols(h, pooled), w, b);
}

namespace {

Var frozen(const Tensor& t) { return nn::constant(t); }

}  // namespace

Tensor cross_attention(const Tensor& h, const ConditionEmbedding& cond,
                       const CrossAttentionWeights& w) {
  validate(cond, w.w_k.dim(0));
  nn::NoGradGuard guard;
  return cross_attention(frozen(h), frozen(cond.tokens), frozen(w.w_q), frozen(w.w_k),
                         frozen(w.w_v), frozen(w.w_out), 1, w.heads)
      .value();
}

Tensor attention_values(const Tensor& h, const ConditionEmbedding& cond,
                        const CrossAttentionWeights& w) {
  validate(cond, w.w_k.dim(0));
  nn::NoGradGuard guard;
  Var q = nn::matmul(frozen(h), frozen(w.w_q));
  Var k = nn::matmul(frozen(cond.tokens), frozen(w.w_k));
  Var v = nn::matmul(frozen(cond.tokens), frozen(w.w_v));
  return nn::attention(q, k, v, 1, w.heads).value();
}

Tensor fuse_addition(const Tensor& h, const ConditionEmbedding& cond, const Tensor& w,
                     const Tensor& b) {
  validate(cond, w.dim(0));
  nn::NoGradGuard guard;
  return fuse_addition(frozen(h), frozen(cond.tokens), frozen(w), frozen(b), 1).value();
}

Tensor fuse_concatenation(const Tensor& h, const ConditionEmbedding& cond, const Tensor& w,
                          const Tensor& b) {
  nn::NoGradGuard guard;
  return fuse_concatenation(frozen(h), frozen(cond.tokens), frozen(w), frozen(b), 1).value();
}

}  // namespace neurodiff::conditioning
