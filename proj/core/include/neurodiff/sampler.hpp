// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef NEURODIFF_SAMPLER_HPP_
#define NEURODIFF_SAMPLER_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "neurodiff/checkpoint.hpp"
#include "neurodiff/conditioning.hpp"
#include "neurodiff/denoiser.hpp"
#include "neurodiff/nn/rng.hpp"
#include "neurodiff/schedule.hpp"
#include "neurodiff/store.hpp"

namespace neurodiff::sampling {

/// A batch of reverse trajectories. y is [B, ...]; sample b draws its noise
/// from rngs[b] (a single rng covers the whole tensor).
struct SamplerState {
  nn::Tensor y;
  int t = 0;
  std::vector<nn::Rng> rngs;
  nn::Tensor last_noise;
};

/// Noise-free part of a reverse step.
nn::Tensor posterior_mean(const nn::Tensor& y_t, const nn::Tensor& eps_hat, int t,
                          const diffusion::NoiseSchedule& sched);

/// One ancestral step from t to t - 1. With `stochastic` false, z is zero at
/// every t.
void reverse_step(SamplerState& state, const nn::Tensor& eps_hat,
                  const diffusion::NoiseSchedule& sched, bool stochastic = true);

/// Seed of sample `index` under run seed `seed`.
std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index);

struct GenerateOptions {
  /// Samples evaluated together in one network call.
  std::size_t batch = 32;
};

/// One sample per (cond, seed) pair, cropped to the model's sample shape and
/// still normalized.
std::vector<nn::Tensor> generate_batch(nn::ParamSet& params, const denoiser::DenoiserConfig& cfg,
                                       const std::vector<conditioning::ConditionEmbedding>& conds,
                                       const std::vector<std::uint64_t>& seeds,
                                       const diffusion::NoiseSchedule& sched,
                                       const GenerateOptions& options = {});

struct Generated {
  std::vector<nn::Tensor> normalized;
  std::vector<nn::Tensor> physical;
};

/// n_samples draws for one condition; sample i uses sample_seed(seed, i).
Generated generate(const checkpoint::Checkpoint& ckpt, const denoiser::DenoiserConfig& expected,
                   const conditioning::ConditionEmbedding& cond, std::uint64_t seed,
                   std::size_t n_samples, const GenerateOptions& options = {});

/// Seed used for the samples of one image in archive generation.
std::uint64_t image_seed(std::uint64_t seed, const std::string& image_id);

/// Generates n_samples per image and writes a trial archive whose trials all
/// carry split "generated", in physical units.
store::ArchiveManifest generate_archive(const checkpoint::Checkpoint& ckpt,
                                        const denoiser::DenoiserConfig& expected,
                                        const std::vector<conditioning::ConditionEmbedding>& conds,
                                        std::uint64_t seed, std::size_t n_samples,
                                        const store::ArchiveManifest& source,
                                        const std::filesystem::path& dir,
                                        const GenerateOptions& options = {});

}  // namespace neurodiff::sampling

#endif  // NEURODIFF_SAMPLER_HPP_
