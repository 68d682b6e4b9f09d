// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef NEURODIFF_STORE_HPP_
#define NEURODIFF_STORE_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "neurodiff/nn/tensor.hpp"

namespace neurodiff::store {

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kTrialsFile = "trials.f32";
inline constexpr const char* kTrialIndexFile = "trials.index.json";
inline constexpr int kFormatVersion = 1;

inline constexpr const char* kTrain = "train";
inline constexpr const char* kTest = "test";
inline constexpr const char* kGenerated = "generated";

struct ArchiveManifest {
  std::string dataset_id;
  std::size_t n_channels = 0;
  std::size_t n_timepoints = 0;
  double sampling_rate_hz = 0.0;
  std::vector<std::string> channel_names;
  std::vector<std::string> subjects;
  /// subject -> split name -> trial ids.
  std::map<std::string, std::map<std::string, std::vector<std::uint64_t>>> splits;
  /// Physical unit label for topography annotation.
  std::string units = "a.u.";
  /// Stimulus onset within the epoch, in ms from sample 0.
  std::optional<double> stimulus_onset_ms;

  void validate() const;
};

struct TrialMeta {
  std::uint64_t trial_id = 0;
  std::string subject;
  std::string image_id;
  int repetition = 0;
  std::string split;
  /// Row in trials.f32.
  std::size_t row = 0;
};

struct TrialRecord {
  TrialMeta meta;
  nn::Tensor samples;  // [n_channels, n_timepoints]
};

/// Read-only view of an archive directory. Trial samples are read lazily.
class Archive {
 public:
  /// Validates manifest, index and data size against each other.
  static Archive open(const std::filesystem::path& dir);

  const std::filesystem::path& path() const { return dir_; }
  const ArchiveManifest& manifest() const { return manifest_; }
  const std::vector<TrialMeta>& trials() const { return trials_; }
  std::size_t size() const { return trials_.size(); }

  /// Samples of trials()[i] as [n_channels, n_timepoints].
  nn::Tensor read(std::size_t i) const;
  TrialRecord record(std::size_t i) const { return {trials_[i], read(i)}; }

  /// Positions in trials() for one subject and split, in index order.
  std::vector<std::size_t> select(const std::string& subject, const std::string& split) const;
  /// Image ids of a subject/split, sorted and unique.
  std::vector<std::string> image_ids(const std::string& subject, const std::string& split) const;

 private:
  std::filesystem::path dir_;
  ArchiveManifest manifest_;
  std::vector<TrialMeta> trials_;
};

/// Writes a complete archive. Trial rows follow `records` order; manifest
/// splits are rebuilt from the records.
void write_archive(const std::filesystem::path& dir, ArchiveManifest manifest,
                   const std::vector<TrialRecord>& records);

/// Re-reads every trial and writes an equivalent archive to `dir`.
void copy_archive(const Archive& archive, const std::filesystem::path& dir);

/// Per-channel mean and sample standard deviation (divisor n - 1).
struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> std;

  friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

/// Statistics over every time sample of every trial of the subject's
/// training split. Zero-variance channels raise DataError naming the channel.
NormalizationStats compute_stats(const Archive& archive, const std::string& subject);
/// Same over explicit [n_channels, n_timepoints] signals.
NormalizationStats compute_stats(const std::vector<nn::Tensor>& signals,
                                 const std::vector<std::string>& channel_names = {});

nn::Tensor normalize(const nn::Tensor& signal, const NormalizationStats& stats);
nn::Tensor denormalize(const nn::Tensor& signal, const NormalizationStats& stats);

/// Mean over repetitions per image id.
std::map<std::string, nn::Tensor> average_repetitions(const Archive& archive,
                                                      const std::string& subject,
                                                      const std::string& split);
/// Mean over every trial of the subject/split.
nn::Tensor grand_average(const Archive& archive, const std::string& subject,
                         const std::string& split);
nn::Tensor mean_of(const std::vector<nn::Tensor>& signals);

struct Batch {
  std::vector<std::size_t> trials;  // positions in Archive::trials()
  std::vector<std::string> image_ids;
};

/// One epoch of shuffled batches. The shuffle is seeded by (seed, epoch);
/// the last batch may be short.
std::vector<Batch> make_batches(const Archive& archive, const std::string& subject,
                                const std::string& split, std::size_t batch_size,
                                std::uint64_t seed, std::uint64_t epoch = 0);
/// Same over explicit positions.
std::vector<Batch> make_batches(const Archive& archive, const std::vector<std::size_t>& trials,
                                std::size_t batch_size, std::uint64_t seed,
                                std::uint64_t epoch = 0);

/// Parameters of the deterministic synthetic dataset.
struct SyntheticSpec {
  std::string dataset_id = "synthetic";
  std::size_t subjects = 1;
  std::size_t images = 8;
  /// Trials per subject; repetitions cycle over images.
  std::size_t trials = 32;
  std::size_t channels = 8;
  std::size_t timepoints = 32;
  double sampling_rate_hz = 250.0;
  /// Fraction of images held out as the test split (at least one image when
  /// images > 1).
  double test_fraction = 0.25;
  double noise = 0.3;
  std::uint64_t seed = 0;
  std::vector<std::string> channel_names;
};

/// Image ids used by the synthetic generator, "img_000"...
std::vector<std::string> synthetic_image_ids(std::size_t n);
/// Clean per-image template shared by all subjects up to a gain.
nn::Tensor synthetic_template(std::uint64_t seed, const std::string& image_id,
                              std::size_t channels, std::size_t timepoints);
std::vector<TrialRecord> synthetic_trials(const SyntheticSpec& spec, ArchiveManifest* manifest);
void write_synthetic_archive(const SyntheticSpec& spec, const std::filesystem::path& dir);

}  // namespace neurodiff::store

#endif  // NEURODIFF_STORE_HPP_
