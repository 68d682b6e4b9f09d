// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef NEURODIFF_TRAINER_HPP_
#define NEURODIFF_TRAINER_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "neurodiff/checkpoint.hpp"
#include "neurodiff/denoiser.hpp"
#include "neurodiff/embeddings.hpp"
#include "neurodiff/nn/autograd.hpp"
#include "neurodiff/nn/rng.hpp"
#include "neurodiff/schedule.hpp"
#include "neurodiff/store.hpp"

namespace neurodiff::training {

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  int epochs = 50;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Stop after this many optimizer steps; 0 means run all epochs.
  std::uint64_t max_steps = 0;
  /// Periodic checkpoint every this many epochs; 0 keeps only final and best.
  int checkpoint_every = 1;
  std::string subject = "sub-01";
  diffusion::ScheduleParams schedule;

  void validate() const;
};

inline constexpr int kTimeBuckets = 10;

struct LossRecord {
  int epoch = 0;
  std::uint64_t step = 0;
  int t_bucket = 0;
  double loss = 0.0;
};

class LossTrace {
 public:
  void push(const LossRecord& r);
  const std::vector<LossRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  /// Mean loss over `window` records starting at `first`.
  double mean(std::size_t first, std::size_t window) const;
  double initial_running(std::size_t window) const;
  double final_running(std::size_t window) const;
  /// Tab-separated log with a header line.
  std::string to_text() const;
  static std::string header();
  static std::string line(const LossRecord& r);

 private:
  std::vector<LossRecord> records_;
};

/// Bucket of a timestep in [1, steps], 0 .. kTimeBuckets - 1.
int time_bucket(double t, int steps);

/// Padded, normalized training signals [B, 1, H', W'] with their
/// conditioning tokens stacked to [B * S, D].
struct TrainingBatch {
  nn::Tensor signals;
  nn::Tensor cond;
};

/// eps_hat for a noised batch; the default wraps predict_noise.
using Predictor =
    std::function<nn::Var(const nn::Var& y_t, std::span<const int> t, const nn::Var& cond)>;

Predictor denoiser_predictor(nn::ParamSet& params, const denoiser::DenoiserConfig& cfg);

struct LossResult {
  nn::Var loss;
  std::vector<int> t;
  nn::Tensor eps;
  nn::Tensor y_t;
};

/// Draws t then eps per sample from `rng`, noises the batch, and returns the
/// mean squared error between eps and the prediction.
LossResult diffusion_loss(const TrainingBatch& batch, const diffusion::NoiseSchedule& sched,
                          nn::Rng& rng, const Predictor& predict);

struct AdamState {
  std::uint64_t step = 0;
  std::vector<nn::Tensor> m;
  std::vector<nn::Tensor> v;
};

/// Decoupled-decay Adam over each param's accumulated grad.
void adamw_step(nn::ParamSet& params, AdamState& state, const TrainConfig& cfg);

inline constexpr char kLossLog[] = "loss.log";
inline constexpr char kCheckpointDir[] = "checkpoints";
inline constexpr char kFinalCheckpoint[] = "final.ndck";
inline constexpr char kBestCheckpoint[] = "best.ndck";
std::string epoch_checkpoint_name(int epoch);

struct TrainResult {
  checkpoint::Checkpoint final;
  LossTrace trace;
  std::filesystem::path final_path;
  std::filesystem::path best_path;
};

using StepCallback = std::function<void(const LossRecord&)>;

/// Trains on the train split of cfg.subject, writing the loss log and
/// checkpoints under run_dir.
TrainResult train(const TrainConfig& cfg, const denoiser::DenoiserConfig& model,
                  const store::Archive& archive, embedding::EmbeddingProvider& provider,
                  const std::filesystem::path& run_dir, const StepCallback& on_step = {});

}  // namespace neurodiff::training

#endif  // NEURODIFF_TRAINER_HPP_
