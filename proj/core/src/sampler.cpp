// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "neurodiff/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "neurodiff/errors.hpp"
#include "neurodiff/nn/autograd.hpp"

namespace neurodiff::sampling {

using nn::Tensor;

Tensor posterior_mean(const Tensor& y_t, const Tensor& eps_hat, int t,
                      const diffusion::NoiseSchedule& sched) {
  if (t < 1 || t > sched.steps()) {
    throw StateError("reverse step needs 1 <= t <= " + std::to_string(sched.steps()) + ", got " +
                     std::to_string(t));
  }
  if (eps_hat.shape() != y_t.shape()) {
    throw ShapeError("noise prediction " + nn::shape_str(eps_hat.shape()) + " vs state " +
                     nn::shape_str(y_t.shape()));
  }
  const double alpha = sched.alpha(t);
  const double root = std::sqrt(alpha);
  const double coef = (1.0 - alpha) / std::sqrt(1.0 - sched.alpha_bar(t));
  Tensor out(y_t.shape());
  for (std::size_t k = 0; k < out.numel(); ++k) out[k] = (y_t[k] - coef * eps_hat[k]) / root;
  return out;
}

void reverse_step(SamplerState& state, const Tensor& eps_hat,
                  const diffusion::NoiseSchedule& sched, bool stochastic) {
  if (state.t == 0) throw StateError("sampler is already at t = 0");
  Tensor next = posterior_mean(state.y, eps_hat, state.t, sched);
  Tensor z(state.y.shape(), 0.0);
  if (stochastic && state.t > 1) {
    if (state.rngs.empty()) throw StateError("sampler state has no noise stream");
    const std::size_t per = z.numel() / state.rngs.size();
    if (per * state.rngs.size() != z.numel()) {
      throw ShapeError(std::to_string(state.rngs.size()) + " noise streams do not divide " +
                       nn::shape_str(z.shape()));
    }
    for (std::size_t b = 0; b < state.rngs.size(); ++b) {
      for (std::size_t k = b * per; k < (b + 1) * per; ++k) z[k] = state.rngs[b].normal();
    }
    const double sigma = sched.sigma(state.t);
    for (std::size_t k = 0; k < next.numel(); ++k) next[k] += sigma * z[k];
  }
  if (!next.all_finite()) {
    throw NumericError("sampler state became non-finite at t = " + std::to_string(state.t));
  }
  state.y = std::move(next);
  state.last_noise = std::move(z);
  --state.t;
}

std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index) {
  return nn::derive_seed(seed, index);
}

std::uint64_t image_seed(std::uint64_t seed, const std::string& image_id) {
  return nn::derive_seed(seed, nn::hash_string(image_id));
}

std::vector<Tensor> generate_batch(nn::ParamSet& params, const denoiser::DenoiserConfig& cfg,
                                   const std::vector<conditioning::ConditionEmbedding>& conds,
                                   const std::vector<std::uint64_t>& seeds,
                                   const diffusion::NoiseSchedule& sched,
                                   const GenerateOptions& options) {
  if (conds.size() != seeds.size()) {
    throw ShapeError(std::to_string(conds.size()) + " conditions for " +
                     std::to_string(seeds.size()) + " seeds");
  }
  if (options.batch == 0) throw ConfigError("generation batch must be at least 1");
  std::vector<Tensor> out;
  if (conds.empty()) return out;
  for (const auto& c : conds) conditioning::validate(c, cfg.cross_attn_dim);
  const std::size_t tokens = conds.front().tokens.dim(0);
  for (const auto& c : conds) {
    if (c.tokens.dim(0) != tokens) {
      throw ShapeError("conditions in one generation call must share a token count");
    }
  }
  const auto pad = denoiser::pad_spec(cfg.sample_channels, cfg.sample_timepoints);
  const std::size_t plane = pad.padded_channels * pad.padded_timepoints;
  const std::size_t width = cfg.cross_attn_dim;
  nn::NoGradGuard no_grad;
  out.reserve(conds.size());

  for (std::size_t first = 0; first < conds.size(); first += options.batch) {
    const std::size_t n = std::min(options.batch, conds.size() - first);
    SamplerState state;
    state.t = sched.steps();
    state.y = Tensor({n, 1, pad.padded_channels, pad.padded_timepoints});
    Tensor cond({n * tokens, width});
    for (std::size_t b = 0; b < n; ++b) {
      auto& rng = state.rngs.emplace_back(seeds[first + b]);
      for (std::size_t k = b * plane; k < (b + 1) * plane; ++k) state.y[k] = rng.normal();
      const Tensor& c = conds[first + b].tokens;
      std::copy(c.ptr(), c.ptr() + c.numel(), cond.ptr() + b * tokens * width);
    }
    const nn::Var cond_var = nn::constant(cond);
    std::vector<int> t(n);
    while (state.t > 0) {
      std::fill(t.begin(), t.end(), state.t);
      auto eps_hat = denoiser::predict_noise(nn::constant(state.y), t, cond_var, params, cfg);
      reverse_step(state, eps_hat.value(), sched);
    }
    for (std::size_t b = 0; b < n; ++b) {
      Tensor padded({pad.padded_channels, pad.padded_timepoints},
                    std::vector<double>(state.y.ptr() + b * plane, state.y.ptr() + (b + 1) * plane));
      out.push_back(denoiser::crop(padded, pad));
    }
  }
  return out;
}

namespace {

void check_ckpt(const checkpoint::Checkpoint& ckpt, const denoiser::DenoiserConfig& expected) {
  checkpoint::require_compatible(ckpt.config, expected);
  if (!ckpt.norm) throw CompatibilityError("checkpoint carries no normalization statistics");
  if (ckpt.norm->mean.size() != expected.sample_channels) {
    throw CompatibilityError("checkpoint normalization covers " +
                             std::to_string(ckpt.norm->mean.size()) + " channels, model has " +
                             std::to_string(expected.sample_channels));
  }
}

}  // namespace

Generated generate(const checkpoint::Checkpoint& ckpt, const denoiser::DenoiserConfig& expected,
                   const conditioning::ConditionEmbedding& cond, std::uint64_t seed,
                   std::size_t n_samples, const GenerateOptions& options) {
  check_ckpt(ckpt, expected);
  std::vector<conditioning::ConditionEmbedding> conds(n_samples, cond);
  std::vector<std::uint64_t> seeds(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) seeds[i] = sample_seed(seed, i);
  auto params = ckpt.params;
  Generated g;
  g.normalized = generate_batch(params, ckpt.config, conds, seeds,
                                diffusion::NoiseSchedule::linear(ckpt.schedule), options);
  for (const auto& s : g.normalized) g.physical.push_back(store::denormalize(s, *ckpt.norm));
  return g;
}

store::ArchiveManifest generate_archive(const checkpoint::Checkpoint& ckpt,
                                        const denoiser::DenoiserConfig& expected,
                                        const std::vector<conditioning::ConditionEmbedding>& conds,
                                        std::uint64_t seed, std::size_t n_samples,
                                        const store::ArchiveManifest& source,
                                        const std::filesystem::path& dir,
                                        const GenerateOptions& options) {
  check_ckpt(ckpt, expected);
  if (source.n_channels != expected.sample_channels ||
      source.n_timepoints != expected.sample_timepoints) {
    throw CompatibilityError("source archive shape differs from the model sample shape");
  }
  std::vector<conditioning::ConditionEmbedding> all;
  std::vector<std::uint64_t> seeds;
  for (const auto& c : conds) {
    const auto base = image_seed(seed, c.image_id);
    for (std::size_t i = 0; i < n_samples; ++i) {
      all.push_back(c);
      seeds.push_back(sample_seed(base, i));
    }
  }
  auto params = ckpt.params;
  auto samples = generate_batch(params, ckpt.config, all, seeds,
                                diffusion::NoiseSchedule::linear(ckpt.schedule), options);

  store::ArchiveManifest manifest = source;
  manifest.dataset_id = source.dataset_id + "-generated";
  manifest.subjects.clear();
  std::vector<store::TrialRecord> records;
  records.reserve(samples.size());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    store::TrialRecord r;
    r.meta.trial_id = k;
    r.meta.subject = ckpt.subject;
    r.meta.image_id = all[k].image_id;
    r.meta.repetition = static_cast<int>(k % std::max<std::size_t>(n_samples, 1));
    r.meta.split = store::kGenerated;
    r.samples = store::denormalize(samples[k], *ckpt.norm);
    records.push_back(std::move(r));
  }
  if (records.empty()) throw DataError("nothing to generate: no images or zero samples");
  store::write_archive(dir, manifest, records);
  return store::Archive::open(dir).manifest();
}

}  // namespace neurodiff::sampling
