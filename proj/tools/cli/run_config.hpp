// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef NEURODIFF_TOOLS_RUN_CONFIG_HPP_
#define NEURODIFF_TOOLS_RUN_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "neurodiff/denoiser.hpp"
#include "neurodiff/schedule.hpp"
#include "neurodiff/trainer.hpp"

namespace neurodiff::cli {

/// Environment variable naming the root for relative output directories.
inline constexpr const char* kRunRootEnv = "NEURODIFF_RUN_ROOT";

/// Flat configuration keyed by dotted paths such as "model.heads".
///
/// Resolution order: built-in defaults, then the named preset, then the
/// config file, then `--set` overrides. Nested JSON objects in the file are
/// flattened, so {"model": {"heads": 2}} and {"model.heads": 2} are the same.
class RunConfig {
 public:
  RunConfig();

  static std::vector<std::string> preset_names();

  /// `file_text` may be empty. `overrides` are "key=value" strings whose value
  /// is parsed as JSON when possible and as a bare string otherwise.
  static RunConfig resolve(const std::string& file_text,
                           const std::vector<std::string>& overrides,
                           const std::string& preset = {});

  void set(const std::string& key, const nlohmann::json& value);
  const nlohmann::json& get(const std::string& key) const;

  std::string str(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  double number(const std::string& key) const;
  std::vector<std::string> strings(const std::string& key) const;

  denoiser::DenoiserConfig model() const;
  diffusion::ScheduleParams schedule() const;
  training::TrainConfig train() const;
  std::uint64_t seed() const;

  /// Output directory, resolved against NEURODIFF_RUN_ROOT when relative.
  std::filesystem::path output_dir() const;
  std::filesystem::path path(const std::string& key) const;

  /// Sorted flat document.
  nlohmann::ordered_json snapshot() const;

 private:
  void apply_preset(const std::string& name);
  void merge(const nlohmann::json& doc, const std::string& prefix);

  nlohmann::json values_;
};

/// Flattens nested objects into dotted keys. Arrays are leaves.
nlohmann::json flatten(const nlohmann::json& doc);

}  // namespace neurodiff::cli

#endif  // NEURODIFF_TOOLS_RUN_CONFIG_HPP_
