// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef NEURODIFF_CONDITIONING_HPP_
#define NEURODIFF_CONDITIONING_HPP_

#include <cstddef>
#include <string>
#include <string_view>

#include "neurodiff/nn/ops.hpp"

namespace neurodiff::conditioning {

/// Visual embedding tokens [S, width] for one image.
struct ConditionEmbedding {
  nn::Tensor tokens;
  std::string image_id;

  std::size_t token_count() const { return tokens.dim(0); }
  std::size_t width() const { return tokens.dim(1); }
};

/// Validates width, token count and finiteness.
void validate(const ConditionEmbedding& cond, std::size_t expected_width);

enum class FusionMode { kCrossAttention, kAddition, kConcatenation };

std::string_view to_string(FusionMode mode);
/// Accepts "cross_attention", "addition", "concatenation".
FusionMode parse_fusion_mode(std::string_view text);

struct CrossAttentionWeights {
  nn::Tensor w_q;    // [d_model, d_attn]
  nn::Tensor w_k;    // [width, d_attn]
  nn::Tensor w_v;    // [width, d_attn]
  nn::Tensor w_out;  // [d_attn, d_model]
  std::size_t heads = 1;
};

// Batched graph-level fusion operators. `h` holds the brain-signal tokens of
// `batch` items stacked as [batch*L, d_model]; `cond` holds their condition
// tokens stacked as [batch*S, width].

/// Multi-head cross-attention with output projection and residual add.
nn::Var cross_attention(const nn::Var& h, const nn::Var& cond, const nn::Var& w_q,
                        const nn::Var& w_k, const nn::Var& w_v, const nn::Var& w_out,
                        std::size_t batch, std::size_t heads);

/// h + broadcast(token-mean of (cond W + b)).
nn::Var fuse_addition(const nn::Var& h, const nn::Var& cond, const nn::Var& w,
                      const nn::Var& b, std::size_t batch);

/// [h, token-mean of cond] W + b, with W [(d_model + width), d_model].
nn::Var fuse_concatenation(const nn::Var& h, const nn::Var& cond, const nn::Var& w,
                           const nn::Var& b, std::size_t batch);

// Single-item conveniences on plain tensors: h is [L, d_model].

nn::Tensor cross_attention(const nn::Tensor& h, const ConditionEmbedding& cond,
                           const CrossAttentionWeights& w);
/// Per-head attention output before W_out and the residual, [L, d_attn].
nn::Tensor attention_values(const nn::Tensor& h, const ConditionEmbedding& cond,
                            const CrossAttentionWeights& w);
nn::Tensor fuse_addition(const nn::Tensor& h, const ConditionEmbedding& cond,
                         const nn::Tensor& w, const nn::Tensor& b);
nn::Tensor fuse_concatenation(const nn::Tensor& h, const ConditionEmbedding& cond,
                              const nn::Tensor& w, const nn::Tensor& b);

}  // namespace neurodiff::conditioning

#endif  // NEURODIFF_CONDITIONING_HPP_
