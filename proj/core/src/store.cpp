// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "neurodiff/store.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"
#include "neurodiff/errors.hpp"
#include "neurodiff/io.hpp"
#include "neurodiff/nn/rng.hpp"

namespace neurodiff::store {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using nn::Tensor;

namespace {

bool known_split(const std::string& s) { return s == kTrain || s == kTest || s == kGenerated; }

template <typename T>
T field(const json& doc, const char* name, const fs::path& where) {
  if (!doc.contains(name)) throw FormatError(where.string() + ": missing field '" + name + "'");
  try {
    return doc.at(name).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(where.string() + ": field '" + name + "' has the wrong type (" + e.what() + ")");
  }
}

json parse_json(const fs::path& path) {
  try {
    return json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

ordered_json manifest_json(const ArchiveManifest& m) {
  ordered_json doc;
  doc["format_version"] = kFormatVersion;
  doc["dataset_id"] = m.dataset_id;
  doc["n_channels"] = m.n_channels;
  doc["n_timepoints"] = m.n_timepoints;
  doc["sampling_rate_hz"] = m.sampling_rate_hz;
  doc["units"] = m.units;
  if (m.stimulus_onset_ms) doc["stimulus_onset_ms"] = *m.stimulus_onset_ms;
  doc["channel_names"] = m.channel_names;
  doc["subjects"] = m.subjects;
  ordered_json splits = ordered_json::object();
  for (const auto& subject : m.subjects) {
    ordered_json per = ordered_json::object();
    auto it = m.splits.find(subject);
    if (it != m.splits.end()) {
      for (const auto& [name, ids] : it->second) per[name] = ids;
    }
    splits[subject] = per;
  }
  doc["splits"] = splits;
  return doc;
}

ArchiveManifest parse_manifest(const fs::path& path) {
  json doc = parse_json(path);
  if (!doc.is_object()) throw FormatError(path.string() + ": expected a JSON object");
  ArchiveManifest m;
  const int version = field<int>(doc, "format_version", path);
  if (version != kFormatVersion) {
    throw FormatError(path.string() + ": field 'format_version' is " + std::to_string(version) +
                      ", this build reads " + std::to_string(kFormatVersion));
  }
  m.dataset_id = field<std::string>(doc, "dataset_id", path);
  m.n_channels = field<std::size_t>(doc, "n_channels", path);
  m.n_timepoints = field<std::size_t>(doc, "n_timepoints", path);
  m.sampling_rate_hz = field<double>(doc, "sampling_rate_hz", path);
  if (doc.contains("units")) m.units = field<std::string>(doc, "units", path);
  if (doc.contains("stimulus_onset_ms")) {
    m.stimulus_onset_ms = field<double>(doc, "stimulus_onset_ms", path);
  }
  m.channel_names = field<std::vector<std::string>>(doc, "channel_names", path);
  m.subjects = field<std::vector<std::string>>(doc, "subjects", path);
  m.splits = field<std::map<std::string, std::map<std::string, std::vector<std::uint64_t>>>>(
      doc, "splits", path);
  return m;
}

}  // namespace

void ArchiveManifest::validate() const {
  if (n_channels == 0 || n_timepoints == 0) {
    throw FormatError("manifest: n_channels and n_timepoints must be positive");
  }
  if (!(sampling_rate_hz > 0.0) || !std::isfinite(sampling_rate_hz)) {
    throw FormatError("manifest: field 'sampling_rate_hz' must be positive");
  }
  if (channel_names.size() != n_channels) {
    throw FormatError("manifest: field 'channel_names' has " +
                      std::to_string(channel_names.size()) + " entries but n_channels is " +
                      std::to_string(n_channels));
  }
  if (std::set<std::string>(channel_names.begin(), channel_names.end()).size() != n_channels) {
    throw FormatError("manifest: field 'channel_names' has duplicates");
  }
  std::set<std::string> subject_set(subjects.begin(), subjects.end());
  if (subject_set.size() != subjects.size()) throw FormatError("manifest: duplicate subjects");
  std::unordered_set<std::uint64_t> seen;
  for (const auto& [subject, per] : splits) {
    if (!subject_set.contains(subject)) {
      throw FormatError("manifest: splits reference unknown subject '" + subject + "'");
    }
    for (const auto& [name, ids] : per) {
      if (!known_split(name)) throw FormatError("manifest: unknown split '" + name + "'");
      for (auto id : ids) {
        if (!seen.insert(id).second) {
          throw FormatError("manifest: trial " + std::to_string(id) +
                            " appears in more than one split");
        }
      }
    }
  }
}

Archive Archive::open(const fs::path& dir) {
  Archive a;
  a.dir_ = dir;
  a.manifest_ = parse_manifest(dir / kManifestFile);
  a.manifest_.validate();

  const fs::path index_path = dir / kTrialIndexFile;
  json index = parse_json(index_path);
  if (!index.is_array()) throw FormatError(index_path.string() + ": expected an array");
  std::unordered_map<std::uint64_t, std::pair<std::string, std::string>> split_of;
  for (const auto& [subject, per] : a.manifest_.splits) {
    for (const auto& [name, ids] : per) {
      for (auto id : ids) split_of[id] = {subject, name};
    }
  }
  std::set<std::string> subjects(a.manifest_.subjects.begin(), a.manifest_.subjects.end());
  std::unordered_set<std::uint64_t> ids;
  std::unordered_set<std::size_t> rows;
  a.trials_.reserve(index.size());
  for (const auto& entry : index) {
    TrialMeta t;
    t.trial_id = field<std::uint64_t>(entry, "trial_id", index_path);
    t.subject = field<std::string>(entry, "subject", index_path);
    t.image_id = field<std::string>(entry, "image_id", index_path);
    t.repetition = field<int>(entry, "repetition", index_path);
    t.split = field<std::string>(entry, "split", index_path);
    t.row = field<std::size_t>(entry, "row", index_path);
    const std::string where = index_path.string() + ": trial " + std::to_string(t.trial_id);
    if (!ids.insert(t.trial_id).second) throw FormatError(where + " is listed twice");
    if (!rows.insert(t.row).second) throw FormatError(where + " reuses row " + std::to_string(t.row));
    if (!subjects.contains(t.subject)) throw FormatError(where + " has unknown subject '" + t.subject + "'");
    auto it = split_of.find(t.trial_id);
    if (it == split_of.end()) throw FormatError(where + " is in no manifest split");
    if (it->second != std::pair{t.subject, t.split}) {
      throw FormatError(where + " is '" + t.subject + "/" + t.split + "' in the index but '" +
                        it->second.first + "/" + it->second.second + "' in the manifest");
    }
    a.trials_.push_back(std::move(t));
  }
  if (a.trials_.size() != split_of.size()) {
    throw FormatError(index_path.string() + ": manifest splits list " +
                      std::to_string(split_of.size()) + " trials but the index has " +
                      std::to_string(a.trials_.size()));
  }
  const std::size_t per_trial = a.manifest_.n_channels * a.manifest_.n_timepoints;
  const fs::path data_path = dir / kTrialsFile;
  std::error_code ec;
  const auto bytes = fs::file_size(data_path, ec);
  if (ec) throw FormatError("cannot stat " + data_path.string() + ": " + ec.message());
  const auto expected = static_cast<std::uintmax_t>(a.trials_.size()) * per_trial * 4;
  if (bytes != expected) {
    throw FormatError(data_path.string() + " is " + std::to_string(bytes) + " bytes; manifest (" +
                      std::to_string(a.manifest_.n_channels) + " channels x " +
                      std::to_string(a.manifest_.n_timepoints) + " timepoints) and " +
                      std::to_string(a.trials_.size()) + " trials imply " +
                      std::to_string(expected));
  }
  for (const auto& t : a.trials_) {
    if (t.row >= a.trials_.size()) {
      throw FormatError(index_path.string() + ": trial " + std::to_string(t.trial_id) +
                        " points at missing row " + std::to_string(t.row));
    }
  }
  return a;
}

Tensor Archive::read(std::size_t i) const {
  if (i >= trials_.size()) {
    throw IndexError("trial position " + std::to_string(i) + " out of range (archive has " +
                     std::to_string(trials_.size()) + ")");
  }
  const std::size_t per_trial = manifest_.n_channels * manifest_.n_timepoints;
  auto values = io::read_f32_range(dir_ / kTrialsFile, trials_[i].row * per_trial, per_trial);
  Tensor t({manifest_.n_channels, manifest_.n_timepoints}, std::move(values));
  if (!t.all_finite()) {
    throw DataError("trial " + std::to_string(trials_[i].trial_id) + " has non-finite samples");
  }
  return t;
}

std::vector<std::size_t> Archive::select(const std::string& subject,
                                         const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < trials_.size(); ++i) {
    if (trials_[i].subject == subject && trials_[i].split == split) out.push_back(i);
  }
  return out;
}

std::vector<std::string> Archive::image_ids(const std::string& subject,
                                            const std::string& split) const {
  std::set<std::string> ids;
  for (auto i : select(subject, split)) ids.insert(trials_[i].image_id);
  return {ids.begin(), ids.end()};
}

void write_archive(const fs::path& dir, ArchiveManifest manifest,
                   const std::vector<TrialRecord>& records) {
  manifest.splits.clear();
  std::set<std::string> subjects(manifest.subjects.begin(), manifest.subjects.end());
  for (const auto& r : records) {
    if (!subjects.contains(r.meta.subject)) {
      manifest.subjects.push_back(r.meta.subject);
      subjects.insert(r.meta.subject);
    }
    if (!known_split(r.meta.split)) throw FormatError("unknown split '" + r.meta.split + "'");
    manifest.splits[r.meta.subject][r.meta.split].push_back(r.meta.trial_id);
  }
  manifest.validate();

  std::string data;
  data.reserve(records.size() * manifest.n_channels * manifest.n_timepoints * 4);
  ordered_json index = ordered_json::array();
  for (std::size_t row = 0; row < records.size(); ++row) {
    const auto& r = records[row];
    nn::expect_shape(r.samples, {manifest.n_channels, manifest.n_timepoints},
                     "trial " + std::to_string(r.meta.trial_id));
    if (!r.samples.all_finite()) {
      throw DataError("trial " + std::to_string(r.meta.trial_id) + " has non-finite samples");
    }
    io::append_f32(data, r.samples.data());
    ordered_json e;
    e["trial_id"] = r.meta.trial_id;
    e["subject"] = r.meta.subject;
    e["image_id"] = r.meta.image_id;
    e["repetition"] = r.meta.repetition;
    e["split"] = r.meta.split;
    e["row"] = row;
    index.push_back(std::move(e));
  }
  io::write_file(dir / kTrialsFile, data);
  io::write_file(dir / kTrialIndexFile, index.dump(2) + "\n");
  io::write_file(dir / kManifestFile, manifest_json(manifest).dump(2) + "\n");
}

void copy_archive(const Archive& archive, const fs::path& dir) {
  std::vector<std::size_t> order(archive.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) {
    return archive.trials()[a].row < archive.trials()[b].row;
  });
  std::vector<TrialRecord> records;
  records.reserve(order.size());
  for (auto i : order) records.push_back(archive.record(i));
  write_archive(dir, archive.manifest(), records);
}

NormalizationStats compute_stats(const std::vector<Tensor>& signals,
                                 const std::vector<std::string>& channel_names) {
  if (signals.empty()) throw DataError("normalization statistics need at least one trial");
  const std::size_t channels = signals.front().dim(0);
  const std::size_t timepoints = signals.front().dim(1);
  std::vector<double> sum(channels, 0.0);
  for (const auto& s : signals) {
    nn::expect_shape(s, {channels, timepoints}, "normalization input");
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t t = 0; t < timepoints; ++t) sum[c] += s.at(c, t);
    }
  }
  const double n = static_cast<double>(signals.size() * timepoints);
  NormalizationStats stats;
  stats.mean.resize(channels);
  stats.std.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) stats.mean[c] = sum[c] / n;
  std::vector<double> ss(channels, 0.0);
  for (const auto& s : signals) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t t = 0; t < timepoints; ++t) {
        const double d = s.at(c, t) - stats.mean[c];
        ss[c] += d * d;
      }
    }
  }
  for (std::size_t c = 0; c < channels; ++c) {
    stats.std[c] = n > 1 ? std::sqrt(ss[c] / (n - 1)) : 0.0;
    if (!(stats.std[c] > 0.0)) {
      const std::string name =
          c < channel_names.size() ? channel_names[c] : "#" + std::to_string(c);
      throw DataError("channel " + name + " has zero variance over the training split");
    }
  }
  return stats;
}

NormalizationStats compute_stats(const Archive& archive, const std::string& subject) {
  auto rows = archive.select(subject, kTrain);
  if (rows.empty()) throw DataError("subject '" + subject + "' has no training trials");
  std::vector<Tensor> signals;
  signals.reserve(rows.size());
  for (auto i : rows) signals.push_back(archive.read(i));
  return compute_stats(signals, archive.manifest().channel_names);
}

namespace {

void check_stats(const Tensor& signal, const NormalizationStats& stats) {
  if (signal.rank() != 2 || signal.dim(0) != stats.mean.size() ||
      stats.std.size() != stats.mean.size()) {
    throw ShapeError("signal " + nn::shape_str(signal.shape()) + " does not match " +
                     std::to_string(stats.mean.size()) + "-channel normalization statistics");
  }
}

}  // namespace

Tensor normalize(const Tensor& signal, const NormalizationStats& stats) {
  check_stats(signal, stats);
  Tensor out = signal;
  const std::size_t w = signal.dim(1);
  for (std::size_t c = 0; c < signal.dim(0); ++c) {
    if (!(stats.std[c] > 0.0)) {
      throw DataError("channel #" + std::to_string(c) + " has zero standard deviation");
    }
    for (std::size_t t = 0; t < w; ++t) out.at(c, t) = (signal.at(c, t) - stats.mean[c]) / stats.std[c];
  }
  return out;
}

Tensor denormalize(const Tensor& signal, const NormalizationStats& stats) {
  check_stats(signal, stats);
  Tensor out = signal;
  for (std::size_t c = 0; c < signal.dim(0); ++c) {
    for (std::size_t t = 0; t < signal.dim(1); ++t) {
      out.at(c, t) = signal.at(c, t) * stats.std[c] + stats.mean[c];
    }
  }
  return out;
}

Tensor mean_of(const std::vector<Tensor>& signals) {
  if (signals.empty()) throw DataError("cannot average an empty group of trials");
  Tensor out(signals.front().shape(), 0.0);
  for (const auto& s : signals) {
    nn::expect_shape(s, out.shape(), "averaged trial");
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += s[i];
  }
  const double n = static_cast<double>(signals.size());
  for (auto& v : out.data()) v /= n;
  return out;
}

std::map<std::string, Tensor> average_repetitions(const Archive& archive,
                                                  const std::string& subject,
                                                  const std::string& split) {
  auto rows = archive.select(subject, split);
  if (rows.empty()) {
    throw DataError("subject '" + subject + "' has no trials in split '" + split + "'");
  }
  std::map<std::string, std::vector<Tensor>> groups;
  for (auto i : rows) groups[archive.trials()[i].image_id].push_back(archive.read(i));
  std::map<std::string, Tensor> out;
  for (auto& [id, group] : groups) out.emplace(id, mean_of(group));
  return out;
}

Tensor grand_average(const Archive& archive, const std::string& subject,
                     const std::string& split) {
  auto rows = archive.select(subject, split);
  if (rows.empty()) {
    throw DataError("subject '" + subject + "' has no trials in split '" + split + "'");
  }
  Tensor out({archive.manifest().n_channels, archive.manifest().n_timepoints}, 0.0);
  for (auto i : rows) {
    Tensor s = archive.read(i);
    for (std::size_t k = 0; k < out.numel(); ++k) out[k] += s[k];
  }
  for (auto& v : out.data()) v /= static_cast<double>(rows.size());
  return out;
}

std::vector<Batch> make_batches(const Archive& archive, const std::vector<std::size_t>& trials,
                                std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  std::vector<std::size_t> order = trials;
  nn::Rng rng(nn::derive_seed(seed, epoch));
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    Batch b;
    for (std::size_t k = start; k < std::min(order.size(), start + batch_size); ++k) {
      b.trials.push_back(order[k]);
      b.image_ids.push_back(archive.trials().at(order[k]).image_id);
    }
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<Batch> make_batches(const Archive& archive, const std::string& subject,
                                const std::string& split, std::size_t batch_size,
                                std::uint64_t seed, std::uint64_t epoch) {
  return make_batches(archive, archive.select(subject, split), batch_size, seed, epoch);
}

std::vector<std::string> synthetic_image_ids(std::size_t n) {
  std::vector<std::string> ids;
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "img_%03zu", i);
    ids.emplace_back(buf);
  }
  return ids;
}

// Three components per image, each a random spatial pattern times a
// Gaussian-windowed oscillation with its own latency, width and frequency.
Tensor synthetic_template(std::uint64_t seed, const std::string& image_id, std::size_t channels,
                          std::size_t timepoints) {
  nn::Rng rng(nn::derive_seed(nn::mix64(seed ^ 0x7e3a), nn::hash_string(image_id)));
  Tensor out({channels, timepoints}, 0.0);
  const double n_t = static_cast<double>(timepoints);
  for (int k = 0; k < 3; ++k) {
    std::vector<double> pattern(channels);
    for (auto& p : pattern) p = rng.normal();
    const double latency = (0.15 + 0.7 * rng.uniform()) * n_t;
    const double width = (0.05 + 0.15 * rng.uniform()) * n_t;
    const double cycles = 0.5 + 3.0 * rng.uniform();
    const double phase = 2.0 * std::numbers::pi * rng.uniform();
    for (std::size_t t = 0; t < timepoints; ++t) {
      const double x = static_cast<double>(t);
      const double env = std::exp(-0.5 * std::pow((x - latency) / width, 2.0));
      const double wave = std::cos(2.0 * std::numbers::pi * cycles * x / n_t + phase);
      for (std::size_t c = 0; c < channels; ++c) out.at(c, t) += pattern[c] * env * wave;
    }
  }
  double ss = 0.0;
  for (double v : out.data()) ss += v * v;
  const double rms = std::sqrt(ss / static_cast<double>(out.numel()));
  if (rms > 0.0) {
    for (auto& v : out.data()) v /= rms;
  }
  return out;
}

std::vector<TrialRecord> synthetic_trials(const SyntheticSpec& spec, ArchiveManifest* manifest) {
  if (spec.subjects == 0 || spec.images == 0 || spec.trials == 0 || spec.channels == 0 ||
      spec.timepoints == 0) {
    throw ConfigError("synthetic dataset needs at least one subject, image, trial, channel and timepoint");
  }
  if (spec.test_fraction < 0.0 || spec.test_fraction >= 1.0) {
    throw ConfigError("synthetic test_fraction must lie in [0, 1)");
  }
  if (!spec.channel_names.empty() && spec.channel_names.size() != spec.channels) {
    throw ConfigError("synthetic channel_names has " + std::to_string(spec.channel_names.size()) +
                      " entries for " + std::to_string(spec.channels) + " channels");
  }
  const auto ids = synthetic_image_ids(spec.images);
  std::size_t n_test = static_cast<std::size_t>(
      std::ceil(spec.test_fraction * static_cast<double>(spec.images) - 1e-9));
  if (spec.test_fraction > 0.0 && spec.images > 1) n_test = std::max<std::size_t>(n_test, 1);
  n_test = std::min(n_test, spec.images - 1);
  std::vector<Tensor> templates;
  for (const auto& id : ids) {
    templates.push_back(synthetic_template(spec.seed, id, spec.channels, spec.timepoints));
  }

  ArchiveManifest m;
  m.dataset_id = spec.dataset_id;
  m.n_channels = spec.channels;
  m.n_timepoints = spec.timepoints;
  m.sampling_rate_hz = spec.sampling_rate_hz;
  m.units = "uV";
  if (spec.channel_names.empty()) {
    for (std::size_t c = 0; c < spec.channels; ++c) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "ch%03zu", c + 1);
      m.channel_names.emplace_back(buf);
    }
  } else {
    m.channel_names = spec.channel_names;
  }

  std::vector<TrialRecord> records;
  for (std::size_t s = 0; s < spec.subjects; ++s) {
    char subject[32];
    std::snprintf(subject, sizeof subject, "sub-%02zu", s + 1);
    m.subjects.emplace_back(subject);
    // Subjects differ by gain and offset so normalization has work to do.
    const double gain = 5.0 * (1.0 + 0.1 * static_cast<double>(s));
    const double offset = 0.5 * static_cast<double>(s);
    for (std::size_t k = 0; k < spec.trials; ++k) {
      const std::size_t image = k % spec.images;
      TrialRecord r;
      r.meta.trial_id = s * spec.trials + k;
      r.meta.subject = subject;
      r.meta.image_id = ids[image];
      r.meta.repetition = static_cast<int>(k / spec.images);
      r.meta.split = image >= spec.images - n_test ? kTest : kTrain;
      nn::Rng rng(nn::derive_seed(spec.seed, r.meta.trial_id + 1));
      r.samples = Tensor({spec.channels, spec.timepoints});
      for (std::size_t i = 0; i < r.samples.numel(); ++i) {
        r.samples[i] = offset + gain * (templates[image][i] + spec.noise * rng.normal());
      }
      records.push_back(std::move(r));
    }
  }
  if (manifest) *manifest = std::move(m);
  return records;
}

void write_synthetic_archive(const SyntheticSpec& spec, const fs::path& dir) {
  ArchiveManifest m;
  auto records = synthetic_trials(spec, &m);
  write_archive(dir, std::move(m), records);
}

}  // namespace neurodiff::store
