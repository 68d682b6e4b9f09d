// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "neurodiff/checkpoint.hpp"

#include <cstring>

#include "json.hpp"
#include "neurodiff/errors.hpp"
#include "neurodiff/io.hpp"

namespace neurodiff::checkpoint {

namespace fs = std::filesystem;
using denoiser::DenoiserConfig;
using nlohmann::json;
using nlohmann::ordered_json;
using nn::Tensor;

namespace {

ordered_json to_json(const DenoiserConfig& c) {
  ordered_json j;
  j["in_channels"] = c.in_channels;
  j["out_channels"] = c.out_channels;
  j["level_channels"] = c.level_channels;
  j["attn_levels"] = c.attn_levels;
  j["cross_attn_dim"] = c.cross_attn_dim;
  j["heads"] = c.heads;
  j["sample_channels"] = c.sample_channels;
  j["sample_timepoints"] = c.sample_timepoints;
  j["time_embed_dim"] = c.time_embed_dim;
  j["fusion"] = std::string(conditioning::to_string(c.fusion));
  return j;
}

DenoiserConfig from_json(const json& j) {
  try {
    DenoiserConfig c;
    c.in_channels = j.at("in_channels").get<std::size_t>();
    c.out_channels = j.at("out_channels").get<std::size_t>();
    c.level_channels = j.at("level_channels").get<std::array<std::size_t, 4>>();
    c.attn_levels = j.at("attn_levels").get<std::vector<int>>();
    c.cross_attn_dim = j.at("cross_attn_dim").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.sample_channels = j.at("sample_channels").get<std::size_t>();
    c.sample_timepoints = j.at("sample_timepoints").get<std::size_t>();
    c.time_embed_dim = j.at("time_embed_dim").get<std::size_t>();
    c.fusion = conditioning::parse_fusion_mode(j.at("fusion").get<std::string>());
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("denoiser config: ") + e.what());
  }
}

}  // namespace

std::string config_json(const DenoiserConfig& cfg) { return to_json(cfg).dump(2); }

DenoiserConfig config_from_json(const std::string& text) {
  try {
    return from_json(json::parse(text));
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("denoiser config: ") + e.what());
  }
}

std::vector<std::string> config_differences(const DenoiserConfig& a, const DenoiserConfig& b) {
  std::vector<std::string> out;
  const json ja = to_json(a), jb = to_json(b);
  for (const auto& [key, value] : ja.items()) {
    if (value != jb.at(key)) out.push_back(key + ": " + value.dump() + " != " + jb.at(key).dump());
  }
  return out;
}

void require_compatible(const DenoiserConfig& stored, const DenoiserConfig& expected) {
  auto diffs = config_differences(stored, expected);
  if (diffs.empty()) return;
  std::string msg = "checkpoint config does not match the run config (stored vs expected):";
  for (const auto& d : diffs) msg += " " + d + ";";
  msg.pop_back();
  throw CompatibilityError(msg);
}

void save(const fs::path& path, const Checkpoint& ckpt) {
  std::vector<std::pair<std::string, const Tensor*>> blocks;
  for (const auto& p : ckpt.params) blocks.emplace_back(p.name, &p.value);
  Tensor mean, std;
  if (ckpt.norm) {
    const std::size_t n = ckpt.norm->mean.size();
    mean = Tensor({n}, ckpt.norm->mean);
    std = Tensor({n}, ckpt.norm->std);
    blocks.emplace_back("norm.mean", &mean);
    blocks.emplace_back("norm.std", &std);
  }

  ordered_json header;
  header["format"] = "neurodiff-checkpoint";
  header["config"] = to_json(ckpt.config);
  header["schedule"] = {{"steps", ckpt.schedule.steps},
                        {"beta_start", ckpt.schedule.beta_start},
                        {"beta_end", ckpt.schedule.beta_end}};
  header["seed"] = ckpt.seed;
  header["epoch"] = ckpt.epoch;
  header["step"] = ckpt.step;
  header["loss"] = ckpt.loss;
  header["dataset_id"] = ckpt.dataset_id;
  header["subject"] = ckpt.subject;
  ordered_json table = ordered_json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : blocks) {
    table.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}});
    offset += t->numel();
  }
  header["tensors"] = table;

  const std::string head = header.dump();
  std::string bytes(kMagic, 4);
  io::append_u32(bytes, kVersion);
  io::append_u64(bytes, head.size());
  bytes += head;
  bytes.reserve(bytes.size() + offset * 4);
  for (const auto& [name, t] : blocks) io::append_f32(bytes, t->data());
  io::write_file(path, bytes);
}

Checkpoint load(const fs::path& path) {
  const std::string bytes = io::read_file(path);
  const std::string where = path.string();
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(where + " is not a checkpoint (bad magic)");
  }
  const auto version = io::decode_u32(bytes, 4);
  if (version != kVersion) {
    throw FormatError(where + ": checkpoint version " + std::to_string(version) +
                      ", this build reads " + std::to_string(kVersion));
  }
  const auto head_len = io::decode_u64(bytes, 8);
  if (16 + head_len > bytes.size()) throw FormatError(where + ": truncated header");
  json header;
  try {
    header = json::parse(std::string_view(bytes).substr(16, head_len));
  } catch (const json::exception& e) {
    throw FormatError(where + ": header: " + e.what());
  }
  const std::string_view payload = std::string_view(bytes).substr(16 + head_len);

  Checkpoint c;
  try {
    c.config = from_json(header.at("config"));
    const auto& s = header.at("schedule");
    c.schedule = {s.at("steps").get<int>(), s.at("beta_start").get<double>(),
                  s.at("beta_end").get<double>()};
    c.seed = header.at("seed").get<std::uint64_t>();
    c.epoch = header.at("epoch").get<int>();
    c.step = header.at("step").get<std::uint64_t>();
    c.loss = header.at("loss").get<double>();
    c.dataset_id = header.at("dataset_id").get<std::string>();
    c.subject = header.at("subject").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(where + ": header: " + e.what());
  }

  std::size_t total = 0;
  std::vector<double> norm_mean, norm_std;
  for (const auto& entry : header.at("tensors")) {
    std::string name;
    nn::Shape shape;
    std::size_t offset = 0;
    try {
      name = entry.at("name").get<std::string>();
      shape = entry.at("shape").get<nn::Shape>();
      offset = entry.at("offset").get<std::size_t>();
    } catch (const json::exception& e) {
      throw FormatError(where + ": tensor table: " + e.what());
    }
    const std::size_t n = nn::shape_numel(shape);
    if (offset != total) throw FormatError(where + ": tensor '" + name + "' is out of order");
    if ((offset + n) * 4 > payload.size()) {
      throw FormatError(where + ": tensor '" + name + "' runs past the end of the file");
    }
    auto values = io::decode_f32(payload.substr(offset * 4, n * 4));
    total += n;
    if (name == "norm.mean") {
      norm_mean = std::move(values);
    } else if (name == "norm.std") {
      norm_std = std::move(values);
    } else {
      c.params.add(name, Tensor(shape, std::move(values)));
    }
  }
  if (total * 4 != payload.size()) {
    throw FormatError(where + ": " + std::to_string(payload.size() - total * 4) +
                      " trailing bytes after the tensor table");
  }
  if (!norm_mean.empty() || !norm_std.empty()) {
    if (norm_mean.size() != norm_std.size()) {
      throw FormatError(where + ": norm.mean and norm.std differ in length");
    }
    c.norm = store::NormalizationStats{std::move(norm_mean), std::move(norm_std)};
  }

  // Every parameter the config implies must be present with its shape.
  const auto layout = denoiser::parameter_layout(c.config);
  if (layout.size() != c.params.size()) {
    throw FormatError(where + ": holds " + std::to_string(c.params.size()) +
                      " parameter tensors but its config implies " + std::to_string(layout.size()));
  }
  for (const auto& spec : layout) {
    if (!c.params.contains(spec.name)) {
      throw FormatError(where + ": missing parameter '" + spec.name + "'");
    }
    if (c.params.get(spec.name).value.shape() != spec.shape) {
      throw FormatError(where + ": parameter '" + spec.name + "' has shape " +
                        nn::shape_str(c.params.get(spec.name).value.shape()) + ", expected " +
                        nn::shape_str(spec.shape));
    }
  }
  return c;
}

}  // namespace neurodiff::checkpoint
