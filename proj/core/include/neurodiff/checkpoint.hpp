// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef NEURODIFF_CHECKPOINT_HPP_
#define NEURODIFF_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "neurodiff/denoiser.hpp"
#include "neurodiff/schedule.hpp"
#include "neurodiff/store.hpp"

namespace neurodiff::checkpoint {

inline constexpr char kMagic[4] = {'N', 'D', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;

/// Everything needed to resume sampling from a trained model.
///
/// On disk: "NDCK", u32 version, u64 header length, UTF-8 JSON header, then
/// float32 little-endian blocks in the order of the header's tensor table.
/// Normalization statistics travel as the blocks "norm.mean" and "norm.std".
struct Checkpoint {
  denoiser::DenoiserConfig config;
  diffusion::ScheduleParams schedule;
  std::uint64_t seed = 0;
  int epoch = 0;
  std::uint64_t step = 0;
  double loss = 0.0;
  std::string dataset_id;
  std::string subject;
  std::optional<store::NormalizationStats> norm;
  nn::ParamSet params;
};

void save(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load(const std::filesystem::path& path);

/// Names of DenoiserConfig fields that differ, as "field: a != b".
std::vector<std::string> config_differences(const denoiser::DenoiserConfig& a,
                                            const denoiser::DenoiserConfig& b);
/// Throws CompatibilityError listing differing fields.
void require_compatible(const denoiser::DenoiserConfig& stored,
                        const denoiser::DenoiserConfig& expected);

/// JSON text of a config, used in headers and run snapshots.
std::string config_json(const denoiser::DenoiserConfig& cfg);
denoiser::DenoiserConfig config_from_json(const std::string& text);

}  // namespace neurodiff::checkpoint

#endif  // NEURODIFF_CHECKPOINT_HPP_
