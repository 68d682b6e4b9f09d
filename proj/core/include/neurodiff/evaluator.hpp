// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef NEURODIFF_EVALUATOR_HPP_
#define NEURODIFF_EVALUATOR_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neurodiff/checkpoint.hpp"
#include "neurodiff/conditioning.hpp"
#include "neurodiff/embeddings.hpp"
#include "neurodiff/nn/tensor.hpp"
#include "neurodiff/store.hpp"
#include "neurodiff/trainer.hpp"

namespace neurodiff::eval {

double mse(const nn::Tensor& a, const nn::Tensor& b);
/// Pearson correlation of the flattened inputs. Throws MetricError when
/// either side has zero variance.
double pcc(const nn::Tensor& a, const nn::Tensor& b);

double mean(std::span<const double> v);
/// Sample standard deviation (n - 1). Needs at least two values.
double sample_std(std::span<const double> v);
/// Half-up rounding at `decimals` places, robust to binary representation
/// error (0.2345 rounds to 0.235).
double round_half_up(double v, int decimals = 3);
std::string fixed3(double v);

/// Within-subject metrics for one dataset.
struct MetricReport {
  std::string dataset_id;
  std::vector<std::string> subjects;
  std::vector<double> mse;
  std::vector<double> pcc;

  double mean_mse() const { return mean(mse); }
  double mean_pcc() const { return mean(pcc); }
  void validate() const;
  std::string to_csv() const;
  std::string to_json() const;
};

MetricReport build_report(std::string dataset_id, std::vector<std::string> subjects,
                          std::vector<double> mse, std::vector<double> pcc);

/// values[source][target]; the diagonal is absent.
class CrossSubjectMatrix {
 public:
  CrossSubjectMatrix(std::string dataset_id, std::string metric,
                     std::vector<std::string> subjects,
                     std::vector<std::vector<std::optional<double>>> values);

  const std::vector<std::string>& subjects() const { return subjects_; }
  const std::string& metric() const { return metric_; }
  const std::string& dataset_id() const { return dataset_id_; }
  std::optional<double> at(std::size_t source, std::size_t target) const;

  double source_mean(std::size_t s) const;
  double source_std(std::size_t s) const;
  double target_mean(std::size_t r) const;
  double target_std(std::size_t r) const;
  /// Mean and sample std over every off-diagonal cell.
  double grand_mean() const;
  double grand_std() const;

  std::string to_csv() const;
  std::string to_json() const;

 private:
  std::vector<double> row(std::size_t s) const;
  std::vector<double> column(std::size_t r) const;

  std::string dataset_id_;
  std::string metric_;
  std::vector<std::string> subjects_;
  std::vector<std::vector<std::optional<double>>> values_;
};

/// One row per fusion mode, one column per subject.
struct StrategyTable {
  std::string dataset_id;
  std::string metric;
  std::vector<std::string> subjects;
  std::vector<conditioning::FusionMode> modes;
  std::vector<std::vector<double>> values;  // [mode][subject]

  std::string to_csv() const;
  std::string to_json() const;
};

/// image id -> signal [n_channels, n_timepoints].
using SignalMap = std::map<std::string, nn::Tensor>;

struct PairScore {
  double mse = 0.0;
  double pcc = 0.0;
  std::size_t images = 0;
};

/// Scores generated against target signals, both z-scored with `stats`,
/// averaged over the target images. Every target image must be generated.
PairScore score(const SignalMap& generated, const SignalMap& targets,
                const store::NormalizationStats& stats);

/// Repetition-averaged test signals of `subject`, in physical units.
SignalMap test_targets(const store::Archive& archive, const std::string& subject);

/// Physical-unit generations for each image, averaging `samples_per_image`
/// draws.
SignalMap generate_for_images(const checkpoint::Checkpoint& ckpt,
                              const denoiser::DenoiserConfig& expected,
                              embedding::EmbeddingProvider& provider,
                              const std::vector<std::string>& image_ids, std::uint64_t seed,
                              std::size_t samples_per_image);

/// Generated signals per image read from an archive with split "generated".
SignalMap generated_from_archive(const store::Archive& generated, const std::string& subject);

struct EvalOptions {
  std::uint64_t seed = 0;
  std::size_t samples_per_image = 1;
};

/// Scores each subject's model on its own test split.
MetricReport within_subject_eval(const std::map<std::string, checkpoint::Checkpoint>& models,
                                 const denoiser::DenoiserConfig& expected,
                                 const store::Archive& archive,
                                 embedding::EmbeddingProvider& provider,
                                 const EvalOptions& options = {});

struct CrossSubjectResult {
  CrossSubjectMatrix mse;
  CrossSubjectMatrix pcc;
};

/// Scores every source subject's model on every other subject's test split.
CrossSubjectResult cross_subject_eval(const std::map<std::string, checkpoint::Checkpoint>& models,
                                      const denoiser::DenoiserConfig& expected,
                                      const store::Archive& archive,
                                      embedding::EmbeddingProvider& provider,
                                      const EvalOptions& options = {});

struct StrategyResult {
  StrategyTable mse;
  StrategyTable pcc;
};

/// Trains one model per (mode, subject) under identical data and seed, then
/// runs the within-subject evaluation per mode.
StrategyResult strategy_comparison(const training::TrainConfig& train,
                                   const denoiser::DenoiserConfig& base,
                                   const std::vector<std::string>& subjects,
                                   const store::Archive& archive,
                                   embedding::EmbeddingProvider& provider,
                                   const std::filesystem::path& run_dir,
                                   const EvalOptions& options = {},
                                   const std::vector<conditioning::FusionMode>& modes = {
                                       conditioning::FusionMode::kAddition,
                                       conditioning::FusionMode::kConcatenation,
                                       conditioning::FusionMode::kCrossAttention});

/// "<dataset>_<kind>_<metric>", used for report file names.
std::string report_stem(const std::string& dataset_id, const std::string& kind,
                        const std::string& metric);

}  // namespace neurodiff::eval

#endif  // NEURODIFF_EVALUATOR_HPP_
