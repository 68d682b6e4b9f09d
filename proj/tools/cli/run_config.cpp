// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "run_config.hpp"

#include <cstdlib>
#include <map>

#include "neurodiff/conditioning.hpp"
#include "neurodiff/embeddings.hpp"
#include "neurodiff/errors.hpp"

namespace neurodiff::cli {

using nlohmann::json;

namespace {

enum class Kind { kString, kUnsigned, kNumber, kUnsignedList, kStringList };

struct KeySpec {
  const char* key;
  Kind kind;
  json fallback;
};

const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> keys = {
      {"preset", Kind::kString, ""},
      {"seed", Kind::kUnsigned, 0},
      {"output", Kind::kString, "runs/default"},
      {"subjects", Kind::kStringList, json::array()},
      {"data.archive", Kind::kString, ""},
      {"data.embeddings", Kind::kString, ""},
      {"data.embedding_url", Kind::kString, ""},
      {"data.image_dir", Kind::kString, ""},
      {"data.montage", Kind::kString, ""},
      {"model.level_channels", Kind::kUnsignedList, json::array({128, 256, 512, 512})},
      {"model.attn_levels", Kind::kUnsignedList, json::array({3, 4})},
      {"model.cross_attn_dim", Kind::kUnsigned, 768},
      {"model.heads", Kind::kUnsigned, 8},
      {"model.sample_channels", Kind::kUnsigned, 63},
      {"model.sample_timepoints", Kind::kUnsigned, 250},
      {"model.time_embed_dim", Kind::kUnsigned, 512},
      {"model.fusion", Kind::kString, "cross_attention"},
      {"schedule.steps", Kind::kUnsigned, 1000},
      {"schedule.beta_start", Kind::kNumber, 1e-4},
      {"schedule.beta_end", Kind::kNumber, 0.02},
      {"train.learning_rate", Kind::kNumber, 1e-4},
      {"train.weight_decay", Kind::kNumber, 1e-5},
      {"train.epochs", Kind::kUnsigned, 50},
      {"train.batch_size", Kind::kUnsigned, 16},
      {"train.max_steps", Kind::kUnsigned, 0},
      {"train.checkpoint_every", Kind::kUnsigned, 1},
      {"train.beta1", Kind::kNumber, 0.9},
      {"train.beta2", Kind::kNumber, 0.999},
      {"train.adam_eps", Kind::kNumber, 1e-8},
      {"generate.samples_per_image", Kind::kUnsigned, 1},
      {"generate.batch", Kind::kUnsigned, 32},
      {"generate.split", Kind::kString, "test"},
      {"eval.samples_per_image", Kind::kUnsigned, 1},
      {"topo.window_ms", Kind::kNumber, 100.0},
      {"topo.grid", Kind::kUnsigned, 64},
      {"topo.cell_px", Kind::kUnsigned, 2},
  };
  return keys;
}

const KeySpec* find_key(const std::string& key) {
  for (const auto& k : schema()) {
    if (key == k.key) return &k;
  }
  return nullptr;
}

const std::map<std::string, json>& presets() {
  static const std::map<std::string, json> p = {
      {"eeg-things2",
       {{"model.sample_channels", 63}, {"model.sample_timepoints", 250}, {"train.batch_size", 16}}},
      {"meg-things",
       {{"model.sample_channels", 271}, {"model.sample_timepoints", 200}, {"train.batch_size", 4}}},
      {"tiny",
       {{"model.level_channels", json::array({8, 8, 8, 8})},
        {"model.heads", 1},
        {"model.time_embed_dim", 32},
        {"model.sample_channels", 8},
        {"model.sample_timepoints", 16},
        {"schedule.steps", 100},
        {"train.learning_rate", 1e-3},
        {"train.epochs", 5},
        {"train.batch_size", 8}}},
  };
  return p;
}

std::string kind_name(Kind k) {
  switch (k) {
    case Kind::kString: return "a string";
    case Kind::kUnsigned: return "a non-negative integer";
    case Kind::kNumber: return "a number";
    case Kind::kUnsignedList: return "a list of non-negative integers";
    case Kind::kStringList: return "a list of strings";
  }
  return "a value";
}

bool matches(Kind k, const json& v) {
  switch (k) {
    case Kind::kString: return v.is_string();
    case Kind::kUnsigned: return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    case Kind::kNumber: return v.is_number();
    case Kind::kUnsignedList:
      if (!v.is_array()) return false;
      for (const auto& x : v) {
        if (!matches(Kind::kUnsigned, x)) return false;
      }
      return true;
    case Kind::kStringList:
      if (!v.is_array()) return false;
      for (const auto& x : v) {
        if (!x.is_string()) return false;
      }
      return true;
  }
  return false;
}

void flatten_into(const json& doc, const std::string& prefix, json& out) {
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      flatten_into(*it, key, out);
    } else {
      out[key] = *it;
    }
  }
}

}  // namespace

json flatten(const json& doc) {
  if (!doc.is_object()) throw ConfigError("configuration must be a JSON object");
  json out = json::object();
  flatten_into(doc, "", out);
  return out;
}

RunConfig::RunConfig() : values_(json::object()) {
  for (const auto& k : schema()) values_[k.key] = k.fallback;
}

std::vector<std::string> RunConfig::preset_names() {
  std::vector<std::string> out;
  for (const auto& [name, v] : presets()) out.push_back(name);
  return out;
}

void RunConfig::set(const std::string& key, const json& value) {
  const KeySpec* spec = find_key(key);
  if (!spec) {
    std::vector<std::string> known;
    for (const auto& k : schema()) known.push_back(k.key);
    const auto near = embedding::nearest_ids(known, key, 1);
    throw ConfigError("unknown config key '" + key + "'" +
                      (near.empty() ? "" : "; did you mean '" + near.front() + "'?"));
  }
  if (!matches(spec->kind, value)) {
    throw ConfigError("config key '" + key + "' must be " + kind_name(spec->kind) + ", got " +
                      value.dump());
  }
  values_[key] = value;
}

const json& RunConfig::get(const std::string& key) const {
  if (!values_.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  return values_.at(key);
}

void RunConfig::apply_preset(const std::string& name) {
  auto it = presets().find(name);
  if (it == presets().end()) {
    std::string msg = "unknown preset '" + name + "'; known:";
    for (const auto& p : preset_names()) msg += " " + p;
    throw ConfigError(msg);
  }
  for (auto v = it->second.begin(); v != it->second.end(); ++v) set(v.key(), *v);
  values_["preset"] = name;
}

void RunConfig::merge(const json& doc, const std::string& prefix) {
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (it.key() == "preset") continue;
    set(prefix + it.key(), *it);
  }
}

RunConfig RunConfig::resolve(const std::string& file_text, const std::vector<std::string>& overrides,
                             const std::string& preset) {
  json file = json::object();
  if (!file_text.empty()) {
    try {
      file = flatten(json::parse(file_text));
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config file is not valid JSON: ") + e.what());
    }
  }
  json over = json::object();
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override '" + o + "' must look like key=value");
    }
    const std::string key = o.substr(0, eq), text = o.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    over[key] = value;
  }
  std::string chosen = preset;
  for (const json* doc : {&file, &over}) {
    if (doc->contains("preset") && !(*doc)["preset"].is_string()) {
      throw ConfigError("config key 'preset' must be a string");
    }
  }
  if (over.contains("preset")) chosen = over["preset"].get<std::string>();
  if (chosen.empty() && file.contains("preset")) chosen = file["preset"].get<std::string>();
  RunConfig cfg;
  if (!chosen.empty()) cfg.apply_preset(chosen);
  cfg.merge(file, "");
  cfg.merge(over, "");
  return cfg;
}

std::string RunConfig::str(const std::string& key) const { return get(key).get<std::string>(); }

std::int64_t RunConfig::integer(const std::string& key) const {
  return get(key).get<std::int64_t>();
}

double RunConfig::number(const std::string& key) const { return get(key).get<double>(); }

std::vector<std::string> RunConfig::strings(const std::string& key) const {
  return get(key).get<std::vector<std::string>>();
}

denoiser::DenoiserConfig RunConfig::model() const {
  denoiser::DenoiserConfig m;
  const auto levels = get("model.level_channels").get<std::vector<std::size_t>>();
  if (levels.size() != m.level_channels.size()) {
    throw ConfigError("model.level_channels must list 4 widths, got " +
                      std::to_string(levels.size()));
  }
  std::copy(levels.begin(), levels.end(), m.level_channels.begin());
  m.attn_levels = get("model.attn_levels").get<std::vector<int>>();
  m.cross_attn_dim = get("model.cross_attn_dim").get<std::size_t>();
  m.heads = get("model.heads").get<std::size_t>();
  m.sample_channels = get("model.sample_channels").get<std::size_t>();
  m.sample_timepoints = get("model.sample_timepoints").get<std::size_t>();
  m.time_embed_dim = get("model.time_embed_dim").get<std::size_t>();
  try {
    m.fusion = conditioning::parse_fusion_mode(str("model.fusion"));
  } catch (const Error& e) {
    throw ConfigError(std::string("model.fusion: ") + e.what());
  }
  try {
    m.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  return m;
}

diffusion::ScheduleParams RunConfig::schedule() const {
  diffusion::ScheduleParams s;
  s.steps = static_cast<int>(integer("schedule.steps"));
  s.beta_start = number("schedule.beta_start");
  s.beta_end = number("schedule.beta_end");
  try {
    diffusion::NoiseSchedule::linear(s);
  } catch (const Error& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
  return s;
}

training::TrainConfig RunConfig::train() const {
  training::TrainConfig t;
  t.learning_rate = number("train.learning_rate");
  t.weight_decay = number("train.weight_decay");
  t.epochs = static_cast<int>(integer("train.epochs"));
  t.batch_size = get("train.batch_size").get<std::size_t>();
  t.max_steps = get("train.max_steps").get<std::uint64_t>();
  t.checkpoint_every = static_cast<int>(integer("train.checkpoint_every"));
  t.beta1 = number("train.beta1");
  t.beta2 = number("train.beta2");
  t.adam_eps = number("train.adam_eps");
  t.seed = seed();
  t.schedule = schedule();
  t.validate();
  return t;
}

std::uint64_t RunConfig::seed() const { return get("seed").get<std::uint64_t>(); }

std::filesystem::path RunConfig::output_dir() const {
  std::filesystem::path out = str("output");
  if (out.empty()) throw ConfigError("output must name a directory");
  if (out.is_relative()) {
    if (const char* root = std::getenv(kRunRootEnv); root && *root) out = std::filesystem::path(root) / out;
  }
  return out;
}

std::filesystem::path RunConfig::path(const std::string& key) const { return str(key); }

nlohmann::ordered_json RunConfig::snapshot() const {
  nlohmann::ordered_json out;
  // json objects keep keys sorted.
  for (auto it = values_.begin(); it != values_.end(); ++it) out[it.key()] = *it;
  return out;
}

}  // namespace neurodiff::cli
