// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef NEURODIFF_NN_OPS_HPP_
#define NEURODIFF_NN_OPS_HPP_

#include <cstddef>

#include "neurodiff/nn/autograd.hpp"

// Differentiable operations. Image-like tensors are [N, C, H, W]; token
// matrices are [rows, features] with rows grouped by batch item.

namespace neurodiff::nn {

/// y = x W + b, x [N, d_in], W [d_in, d_out], b [d_out]. Pass an empty Var
/// to skip the bias.
Var affine_map(const Var& x, const Var& w, const Var& b);
Var matmul(const Var& a, const Var& b);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double factor);

/// x [N, C, H, W] + v [N, C] broadcast over the spatial plane.
Var add_channel_bias(const Var& x, const Var& v);

/// Cross-correlation. x is [N, C_in, H, W] or [C_in, H, W]; kernel is
/// [C_out, C_in, k, k] with odd k; bias [C_out] or empty.
Var conv2d(const Var& x, const Var& kernel, const Var& bias, int stride, int pad);
/// As conv2d with separate low/high-end zero padding; stride-2 downsampling
/// of even extents uses pad_lo = 0, pad_hi = 1.
Var conv2d_padded(const Var& x, const Var& kernel, const Var& bias, int stride, int pad_lo,
                  int pad_hi);

/// Number of groups used for `channels`: the largest divisor of `channels`
/// that is at most 32 and leaves at least two channels per group.
std::size_t group_count(std::size_t channels);
Var group_norm(const Var& x, const Var& gamma, const Var& beta, std::size_t groups,
               double eps = 1e-5);

Var silu(const Var& x);

/// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& m);
Var softmax_rows(const Var& m);

Var concat_channels(const Var& a, const Var& b);
Var upsample_nearest2x(const Var& x);

/// [N, C, H, W] -> [N*H*W, C] and back.
Var to_tokens(const Var& x);
Var from_tokens(const Var& t, const Shape& image_shape);

/// Multi-head scaled dot-product attention, before any output projection.
/// q [N*L, D], k and v [N*S, D]; each batch item attends only to its own
/// S keys. Heads split D into equal contiguous slices.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t batch,
              std::size_t heads);

/// Mean over the S rows of each batch item: [N*S, D] -> [N, D].
Var token_mean(const Var& tokens, std::size_t batch);
/// Repeat each row L times: [N, D] -> [N*L, D].
Var broadcast_rows(const Var& v, std::size_t repeats);
Var concat_cols(const Var& a, const Var& b);

/// Mean of squared differences, a scalar.
Var mse_loss(const Var& a, const Var& b);
Var sum(const Var& x);

}  // namespace neurodiff::nn

#endif  // NEURODIFF_NN_OPS_HPP_
