// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "neurodiff/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

#include "neurodiff/errors.hpp"
#include "neurodiff/nn/ops.hpp"

namespace neurodiff::training {

namespace fs = std::filesystem;
using nn::Tensor;
using nn::Var;

namespace {

// Independent streams carved from the run seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kNoiseStream = 3;

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be positive, got " + std::to_string(learning_rate));
  }
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ConfigError("weight_decay must be non-negative, got " + std::to_string(weight_decay));
  }
  if (epochs < 1) throw ConfigError("epochs must be at least 1, got " + std::to_string(epochs));
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
  if (subject.empty()) throw ConfigError("subject must be set");
  diffusion::NoiseSchedule::linear(schedule);
}

void LossTrace::push(const LossRecord& r) {
  if (!std::isfinite(r.loss)) {
    throw NumericError("non-finite loss at step " + std::to_string(r.step));
  }
  if (!records_.empty() && r.step <= records_.back().step) {
    throw StateError("loss trace steps must increase");
  }
  records_.push_back(r);
}

double LossTrace::mean(std::size_t first, std::size_t window) const {
  if (window == 0 || first + window > records_.size()) {
    throw IndexError("loss window [" + std::to_string(first) + ", " +
                     std::to_string(first + window) + ") outside a trace of " +
                     std::to_string(records_.size()));
  }
  double s = 0.0;
  for (std::size_t i = first; i < first + window; ++i) s += records_[i].loss;
  return s / static_cast<double>(window);
}

double LossTrace::initial_running(std::size_t window) const {
  return mean(0, std::min(window, records_.size()));
}

double LossTrace::final_running(std::size_t window) const {
  const std::size_t w = std::min(window, records_.size());
  return mean(records_.size() - w, w);
}

std::string LossTrace::header() { return "epoch\tstep\tt_bucket\tloss"; }

std::string LossTrace::line(const LossRecord& r) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%d\t%llu\t%d\t%.17g", r.epoch,
                static_cast<unsigned long long>(r.step), r.t_bucket, r.loss);
  return buf;
}

std::string LossTrace::to_text() const {
  std::string out = header() + "\n";
  for (const auto& r : records_) out += line(r) + "\n";
  return out;
}

int time_bucket(double t, int steps) {
  const int b = static_cast<int>((t - 1.0) * kTimeBuckets / static_cast<double>(steps));
  return std::clamp(b, 0, kTimeBuckets - 1);
}

Predictor denoiser_predictor(nn::ParamSet& params, const denoiser::DenoiserConfig& cfg) {
  return [&params, cfg](const Var& y_t, std::span<const int> t, const Var& cond) {
    return denoiser::predict_noise(y_t, t, cond, params, cfg);
  };
}

LossResult diffusion_loss(const TrainingBatch& batch, const diffusion::NoiseSchedule& sched,
                          nn::Rng& rng, const Predictor& predict) {
  const Tensor& y0 = batch.signals;
  if (y0.rank() != 4 || y0.dim(0) == 0 || y0.dim(1) != 1) {
    throw ShapeError("training batch must be [B, 1, H, W] with B >= 1, got " +
                     nn::shape_str(y0.shape()));
  }
  const std::size_t n = y0.dim(0);
  const std::size_t per = y0.numel() / n;

  LossResult r;
  r.t.resize(n);
  r.eps = Tensor(y0.shape());
  r.y_t = Tensor(y0.shape());
  for (std::size_t b = 0; b < n; ++b) {
    const int t = static_cast<int>(rng.uniform_int(1, sched.steps()));
    r.t[b] = t;
    const double a = std::sqrt(sched.alpha_bar(t));
    const double s = std::sqrt(1.0 - sched.alpha_bar(t));
    for (std::size_t k = b * per; k < (b + 1) * per; ++k) {
      r.eps[k] = rng.normal();
      r.y_t[k] = a * y0[k] + s * r.eps[k];
    }
  }

  Var eps_hat = predict(nn::constant(r.y_t), r.t, nn::constant(batch.cond));
  if (eps_hat.shape() != y0.shape()) {
    throw ShapeError("noise prediction shape " + nn::shape_str(eps_hat.shape()) +
                     " differs from the batch " + nn::shape_str(y0.shape()));
  }
  r.loss = nn::mse_loss(eps_hat, nn::constant(r.eps));
  if (!std::isfinite(r.loss.value()[0])) {
    const Tensor& e = eps_hat.value();
    for (std::size_t b = 0; b < n; ++b) {
      double s = 0.0;
      for (std::size_t k = b * per; k < (b + 1) * per; ++k) {
        const double d = e[k] - r.eps[k];
        s += d * d;
      }
      if (!std::isfinite(s)) {
        throw NumericError("diffusion loss is not finite for sample " + std::to_string(b) +
                           " (t = " + std::to_string(r.t[b]) + ")");
      }
    }
    throw NumericError("diffusion loss is not finite");
  }
  return r;
}

void adamw_step(nn::ParamSet& params, AdamState& state, const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.shape(), 0.0);
      state.v.emplace_back(p.value.shape(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw StateError("optimizer state holds " + std::to_string(state.m.size()) +
                     " tensors for " + std::to_string(params.size()) + " parameters");
  }
  ++state.step;
  const double step = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, step);
  const double c2 = 1.0 - std::pow(cfg.beta2, step);
  const double decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
  std::size_t i = 0;
  for (auto& p : params) {
    auto w = p.value.data();
    auto g = p.grad.data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.adam_eps);
      w[k] = w[k] * decay - cfg.learning_rate * update;
    }
    ++i;
  }
}

std::string epoch_checkpoint_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%04d.ndck", epoch);
  return buf;
}

TrainResult train(const TrainConfig& cfg, const denoiser::DenoiserConfig& model,
                  const store::Archive& archive, embedding::EmbeddingProvider& provider,
                  const fs::path& run_dir, const StepCallback& on_step) {
  cfg.validate();
  model.validate();
  const auto& manifest = archive.manifest();
  if (manifest.n_channels != model.sample_channels ||
      manifest.n_timepoints != model.sample_timepoints) {
    throw ConfigError("archive signals are " + std::to_string(manifest.n_channels) + "x" +
                      std::to_string(manifest.n_timepoints) + " but the model expects " +
                      std::to_string(model.sample_channels) + "x" +
                      std::to_string(model.sample_timepoints));
  }
  if (provider.dim() != model.cross_attn_dim) {
    throw ConfigError("embedding width " + std::to_string(provider.dim()) +
                      " differs from cross_attn_dim " + std::to_string(model.cross_attn_dim));
  }
  const auto rows = archive.select(cfg.subject, store::kTrain);
  if (rows.empty()) throw DataError("subject '" + cfg.subject + "' has no training trials");

  const auto sched = diffusion::NoiseSchedule::linear(cfg.schedule);
  const auto stats = store::compute_stats(archive, cfg.subject);

  // Normalized, padded signals and conditioning tokens, keyed by trial position.
  std::map<std::size_t, Tensor> signals;
  std::map<std::string, Tensor> conds;
  denoiser::PadSpec pad;
  for (auto i : rows) {
    signals.emplace(i, denoiser::pad_to_grid(store::normalize(archive.read(i), stats), &pad));
    const auto& id = archive.trials()[i].image_id;
    if (!conds.contains(id)) {
      auto c = provider.get(id);
      conditioning::validate(c, model.cross_attn_dim);
      conds.emplace(id, std::move(c.tokens));
    }
  }
  const std::size_t tokens = conds.begin()->second.dim(0);
  for (const auto& [id, t] : conds) {
    if (t.dim(0) != tokens) {
      throw DataError("image '" + id + "' has " + std::to_string(t.dim(0)) +
                      " embedding tokens, others have " + std::to_string(tokens));
    }
  }
  const std::size_t plane = pad.padded_channels * pad.padded_timepoints;
  const std::size_t width = model.cross_attn_dim;

  checkpoint::Checkpoint ckpt;
  ckpt.config = model;
  ckpt.schedule = cfg.schedule;
  ckpt.seed = cfg.seed;
  ckpt.dataset_id = manifest.dataset_id;
  ckpt.subject = cfg.subject;
  ckpt.norm = stats;
  ckpt.params = denoiser::init_params(model, nn::derive_seed(cfg.seed, kInitStream));

  const fs::path ckpt_dir = run_dir / kCheckpointDir;
  fs::create_directories(ckpt_dir);
  std::ofstream log(run_dir / kLossLog, std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot write " + (run_dir / kLossLog).string());
  log << LossTrace::header() << "\n";

  TrainResult result;
  result.final_path = ckpt_dir / kFinalCheckpoint;
  result.best_path = ckpt_dir / kBestCheckpoint;
  nn::Rng noise_rng(nn::derive_seed(cfg.seed, kNoiseStream));
  const auto shuffle_seed = nn::derive_seed(cfg.seed, kShuffleStream);
  const Predictor predict = denoiser_predictor(ckpt.params, model);
  AdamState adam;
  double best = std::numeric_limits<double>::infinity();
  bool done = false;

  for (int epoch = 1; epoch <= cfg.epochs && !done; ++epoch) {
    const auto batches = store::make_batches(archive, rows, cfg.batch_size, shuffle_seed,
                                             static_cast<std::uint64_t>(epoch - 1));
    double epoch_sum = 0.0;
    std::size_t epoch_steps = 0;
    for (const auto& b : batches) {
      const std::size_t n = b.trials.size();
      TrainingBatch tb{Tensor({n, 1, pad.padded_channels, pad.padded_timepoints}),
                       Tensor({n * tokens, width})};
      for (std::size_t k = 0; k < n; ++k) {
        const Tensor& s = signals.at(b.trials[k]);
        std::copy(s.ptr(), s.ptr() + plane, tb.signals.ptr() + k * plane);
        const Tensor& c = conds.at(b.image_ids[k]);
        std::copy(c.ptr(), c.ptr() + c.numel(), tb.cond.ptr() + k * tokens * width);
      }
      ckpt.params.zero_grad();
      auto loss = diffusion_loss(tb, sched, noise_rng, predict);
      nn::backward(loss.loss);
      adamw_step(ckpt.params, adam, cfg);

      double mean_t = 0.0;
      for (int t : loss.t) mean_t += t;
      mean_t /= static_cast<double>(loss.t.size());
      const LossRecord rec{epoch, adam.step, time_bucket(mean_t, sched.steps()),
                           loss.loss.value()[0]};
      result.trace.push(rec);
      log << LossTrace::line(rec) << "\n";
      if (on_step) on_step(rec);
      epoch_sum += rec.loss;
      ++epoch_steps;
      if (cfg.max_steps != 0 && adam.step >= cfg.max_steps) {
        done = true;
        break;
      }
    }
    log.flush();
    if (!log) throw IoError("write to " + (run_dir / kLossLog).string() + " failed");

    ckpt.epoch = epoch;
    ckpt.step = adam.step;
    ckpt.loss = epoch_sum / static_cast<double>(epoch_steps);
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      checkpoint::save(ckpt_dir / epoch_checkpoint_name(epoch), ckpt);
    }
    if (ckpt.loss < best) {
      best = ckpt.loss;
      checkpoint::save(result.best_path, ckpt);
    }
  }
  checkpoint::save(result.final_path, ckpt);
  result.final = std::move(ckpt);
  return result;
}

}  // namespace neurodiff::training
