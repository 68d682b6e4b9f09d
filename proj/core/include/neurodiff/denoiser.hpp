// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef NEURODIFF_DENOISER_HPP_
#define NEURODIFF_DENOISER_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "neurodiff/conditioning.hpp"
#include "neurodiff/nn/ops.hpp"

namespace neurodiff::denoiser {

using conditioning::FusionMode;

/// Structure of the noise-prediction network.
///
/// The signal enters as a single-channel plane of (channels x time). Four
/// encoder levels with two residual units each, stride-2 downsampling after
/// levels 1-3, a middle block (residual, fusion, residual) and a mirrored
/// decoder consuming one skip per residual unit. Fusion blocks follow every
/// residual unit on the levels listed in `attn_levels` (1-based).
struct DenoiserConfig {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::array<std::size_t, 4> level_channels{128, 256, 512, 512};
  std::vector<int> attn_levels{3, 4};
  std::size_t cross_attn_dim = 768;
  std::size_t heads = 8;
  std::size_t sample_channels = 63;
  std::size_t sample_timepoints = 250;
  std::size_t time_embed_dim = 512;
  FusionMode fusion = FusionMode::kCrossAttention;

  bool has_fusion(int level) const;
  void validate() const;

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

/// 4-level config used by tests and the overfit smoke run.
DenoiserConfig tiny_config();

inline constexpr std::size_t kLayersPerLevel = 2;
inline constexpr std::size_t kGridMultiple = 8;

/// Zero padding at the high ends of both axes up to multiples of 8.
struct PadSpec {
  std::size_t channels = 0;
  std::size_t timepoints = 0;
  std::size_t padded_channels = 0;
  std::size_t padded_timepoints = 0;
  // Padding is applied at the high ends only, so the origin offset is zero.
  std::size_t channel_offset = 0;
  std::size_t time_offset = 0;

  friend bool operator==(const PadSpec&, const PadSpec&) = default;
};

PadSpec pad_spec(std::size_t channels, std::size_t timepoints);
/// [N_c, N_t] -> [N_c', N_t'].
nn::Tensor pad_to_grid(const nn::Tensor& signal, PadSpec* spec_out = nullptr);
nn::Tensor crop(const nn::Tensor& padded, const PadSpec& spec);

/// Raw sinusoidal stage of the time embedding: sin over the first half and
/// cos over the second, frequencies geometric from 1 down to 1e-4.
/// Accepts t = 0 as a test hook.
nn::Tensor sinusoidal_embedding(int t, std::size_t dim);
/// Batched form, [N, dim].
nn::Tensor sinusoidal_embedding(std::span<const int> t, std::size_t dim);

enum class Init { kNormal, kZero, kOne, kConcatIdentity };

struct ParamSpec {
  std::string name;
  nn::Shape shape;
  Init init = Init::kNormal;
};

/// Every parameter the config implies, in registration order.
std::vector<ParamSpec> parameter_layout(const DenoiserConfig& cfg);
std::size_t parameter_count(const DenoiserConfig& cfg);

inline constexpr double kInitStddev = 0.02;

/// Allocates and initializes parameters: normal(0, 0.02) weights, zero
/// biases, unit norm gains, zero output convolution.
nn::ParamSet init_params(const DenoiserConfig& cfg, std::uint64_t seed);

/// Activation resolutions (height, width) of the four encoder levels.
std::vector<std::array<std::size_t, 2>> level_resolutions(const DenoiserConfig& cfg);

/// eps_theta(y_t, t, cond). y_t is [N, 1, H, W] at padded resolution; `t`
/// holds one step per batch item; `cond` is [N*S, cross_attn_dim].
nn::Var predict_noise(const nn::Var& y_t, std::span<const int> t, const nn::Var& cond,
                      nn::ParamSet& params, const DenoiserConfig& cfg);

/// Single-item inference on a padded [H, W] plane.
nn::Tensor predict_noise(const nn::Tensor& y_t, int t,
                         const conditioning::ConditionEmbedding& cond, nn::ParamSet& params,
                         const DenoiserConfig& cfg);

}  // namespace neurodiff::denoiser

#endif  // NEURODIFF_DENOISER_HPP_
