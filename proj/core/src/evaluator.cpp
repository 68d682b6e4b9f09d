// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "neurodiff/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

#include "json.hpp"
#include "neurodiff/errors.hpp"
#include "neurodiff/sampler.hpp"

namespace neurodiff::eval {

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using nn::Tensor;

namespace {

void same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shapes " + nn::shape_str(a.shape()) + " and " +
                     nn::shape_str(b.shape()) + " differ");
  }
  if (a.numel() == 0) throw ShapeError(std::string(what) + ": empty inputs");
}

ordered_json number_or_null(double v) {
  return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr);
}

std::string cell(double v) { return std::isfinite(v) ? fixed3(v) : std::string(); }

}  // namespace

double mse(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "mse");
  double s = 0.0;
  for (std::size_t k = 0; k < a.numel(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s / static_cast<double>(a.numel());
}

double pcc(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "pcc");
  const double n = static_cast<double>(a.numel());
  double ma = 0.0, mb = 0.0;
  for (std::size_t k = 0; k < a.numel(); ++k) {
    ma += a[k];
    mb += b[k];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t k = 0; k < a.numel(); ++k) {
    const double da = a[k] - ma, db = b[k] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) {
    throw MetricError(std::string("pcc undefined: ") + (saa == 0.0 ? "first" : "second") +
                      " input has zero variance");
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double mean(std::span<const double> v) {
  if (v.empty()) throw MetricError("mean of no values");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_std(std::span<const double> v) {
  if (v.size() < 2) throw MetricError("sample standard deviation needs at least two values");
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double round_half_up(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  // Snap to 1e-6 of the last digit first so 0.2345 stored as 0.23449999...
  // still rounds up.
  const double scaled = std::round(std::abs(v) * scale * 1e6) / 1e6;
  return std::copysign(std::floor(scaled + 0.5) / scale, v);
}

std::string fixed3(double v) {
  char buf[64];
  const double r = round_half_up(v, 3);
  std::snprintf(buf, sizeof(buf), "%.3f", r == 0.0 ? 0.0 : r);
  return buf;
}

void MetricReport::validate() const {
  if (subjects.empty()) throw MetricError("metric report has no subjects");
  if (mse.size() != subjects.size() || pcc.size() != subjects.size()) {
    throw MetricError("metric report lists " + std::to_string(subjects.size()) + " subjects but " +
                      std::to_string(mse.size()) + " MSE and " + std::to_string(pcc.size()) +
                      " PCC values");
  }
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    if (!std::isfinite(mse[i]) || !std::isfinite(pcc[i])) {
      throw MetricError("non-finite metric for subject '" + subjects[i] + "'");
    }
  }
}

MetricReport build_report(std::string dataset_id, std::vector<std::string> subjects,
                          std::vector<double> mse, std::vector<double> pcc) {
  MetricReport r{std::move(dataset_id), std::move(subjects), std::move(mse), std::move(pcc)};
  r.validate();
  return r;
}

std::string MetricReport::to_csv() const {
  std::string out = "metric";
  for (const auto& s : subjects) out += "," + s;
  out += ",average\n";
  auto line = [&](const char* name, const std::vector<double>& v) {
    out += name;
    for (double x : v) out += "," + fixed3(x);
    out += "," + fixed3(mean(v)) + "\n";
  };
  line("MSE", mse);
  line("PCC", pcc);
  return out;
}

std::string MetricReport::to_json() const {
  ordered_json j;
  j["dataset_id"] = dataset_id;
  j["experiment"] = "within_subject";
  j["subjects"] = subjects;
  j["mse"] = mse;
  j["pcc"] = pcc;
  j["average"] = {{"mse", mean_mse()}, {"pcc", mean_pcc()}};
  return j.dump(2) + "\n";
}

CrossSubjectMatrix::CrossSubjectMatrix(std::string dataset_id, std::string metric,
                                       std::vector<std::string> subjects,
                                       std::vector<std::vector<std::optional<double>>> values)
    : dataset_id_(std::move(dataset_id)),
      metric_(std::move(metric)),
      subjects_(std::move(subjects)),
      values_(std::move(values)) {
  const std::size_t n = subjects_.size();
  if (n < 2) throw MetricError("a cross-subject matrix needs at least two subjects");
  if (values_.size() != n) throw MetricError("cross-subject matrix row count differs from subjects");
  for (std::size_t s = 0; s < n; ++s) {
    if (values_[s].size() != n) {
      throw MetricError("cross-subject matrix row " + std::to_string(s) + " has " +
                        std::to_string(values_[s].size()) + " entries, expected " +
                        std::to_string(n));
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (s == r && values_[s][r]) {
        throw MetricError("cross-subject matrix has a diagonal entry for '" + subjects_[s] + "'");
      }
      if (s != r && (!values_[s][r] || !std::isfinite(*values_[s][r]))) {
        throw MetricError("cross-subject matrix lacks a finite entry for source '" + subjects_[s] +
                          "', target '" + subjects_[r] + "'");
      }
    }
  }
}

std::optional<double> CrossSubjectMatrix::at(std::size_t source, std::size_t target) const {
  if (source >= subjects_.size() || target >= subjects_.size()) {
    throw IndexError("cross-subject index out of range");
  }
  return values_[source][target];
}

std::vector<double> CrossSubjectMatrix::row(std::size_t s) const {
  std::vector<double> v;
  for (std::size_t r = 0; r < subjects_.size(); ++r) {
    if (at(s, r)) v.push_back(*values_[s][r]);
  }
  return v;
}

std::vector<double> CrossSubjectMatrix::column(std::size_t r) const {
  std::vector<double> v;
  for (std::size_t s = 0; s < subjects_.size(); ++s) {
    if (at(s, r)) v.push_back(*values_[s][r]);
  }
  return v;
}

// With two subjects each row and column holds one value; its std is NaN.
double CrossSubjectMatrix::source_mean(std::size_t s) const { return mean(row(s)); }
double CrossSubjectMatrix::source_std(std::size_t s) const {
  auto v = row(s);
  return v.size() < 2 ? std::numeric_limits<double>::quiet_NaN() : sample_std(v);
}
double CrossSubjectMatrix::target_mean(std::size_t r) const { return mean(column(r)); }
double CrossSubjectMatrix::target_std(std::size_t r) const {
  auto v = column(r);
  return v.size() < 2 ? std::numeric_limits<double>::quiet_NaN() : sample_std(v);
}

double CrossSubjectMatrix::grand_mean() const {
  std::vector<double> all;
  for (std::size_t s = 0; s < subjects_.size(); ++s) {
    auto v = row(s);
    all.insert(all.end(), v.begin(), v.end());
  }
  return mean(all);
}

double CrossSubjectMatrix::grand_std() const {
  std::vector<double> all;
  for (std::size_t s = 0; s < subjects_.size(); ++s) {
    auto v = row(s);
    all.insert(all.end(), v.begin(), v.end());
  }
  return sample_std(all);
}

std::string CrossSubjectMatrix::to_csv() const {
  const std::size_t n = subjects_.size();
  std::string out = "train_subject";
  for (const auto& s : subjects_) out += "," + s;
  out += ",source_mean,source_std\n";
  for (std::size_t s = 0; s < n; ++s) {
    out += subjects_[s];
    for (std::size_t r = 0; r < n; ++r) out += "," + (values_[s][r] ? fixed3(*values_[s][r]) : "");
    out += "," + cell(source_mean(s)) + "," + cell(source_std(s)) + "\n";
  }
  out += "target_mean";
  for (std::size_t r = 0; r < n; ++r) out += "," + cell(target_mean(r));
  out += "," + cell(grand_mean()) + ",\n";
  out += "target_std";
  for (std::size_t r = 0; r < n; ++r) out += "," + cell(target_std(r));
  out += "," + cell(grand_std()) + ",\n";
  return out;
}

std::string CrossSubjectMatrix::to_json() const {
  const std::size_t n = subjects_.size();
  ordered_json j;
  j["dataset_id"] = dataset_id_;
  j["experiment"] = "cross_subject";
  j["metric"] = metric_;
  j["subjects"] = subjects_;
  ordered_json rows = ordered_json::array();
  for (std::size_t s = 0; s < n; ++s) {
    ordered_json row = ordered_json::array();
    for (std::size_t r = 0; r < n; ++r) {
      row.push_back(values_[s][r] ? ordered_json(*values_[s][r]) : ordered_json(nullptr));
    }
    rows.push_back(row);
  }
  j["values"] = rows;
  ordered_json sm = ordered_json::array(), ss = ordered_json::array();
  ordered_json tm = ordered_json::array(), ts = ordered_json::array();
  for (std::size_t i = 0; i < n; ++i) {
    sm.push_back(source_mean(i));
    ss.push_back(number_or_null(source_std(i)));
    tm.push_back(target_mean(i));
    ts.push_back(number_or_null(target_std(i)));
  }
  j["source_mean"] = sm;
  j["source_std"] = ss;
  j["target_mean"] = tm;
  j["target_std"] = ts;
  j["grand_mean"] = grand_mean();
  j["grand_std"] = grand_std();
  return j.dump(2) + "\n";
}

std::string StrategyTable::to_csv() const {
  std::string out = "method";
  for (const auto& s : subjects) out += "," + s;
  out += ",average\n";
  for (std::size_t m = 0; m < modes.size(); ++m) {
    out += std::string(conditioning::to_string(modes[m]));
    for (double v : values[m]) out += "," + fixed3(v);
    out += "," + fixed3(mean(values[m])) + "\n";
  }
  return out;
}

std::string StrategyTable::to_json() const {
  ordered_json j;
  j["dataset_id"] = dataset_id;
  j["experiment"] = "strategy_comparison";
  j["metric"] = metric;
  j["subjects"] = subjects;
  ordered_json rows = ordered_json::array();
  for (std::size_t m = 0; m < modes.size(); ++m) {
    rows.push_back({{"method", std::string(conditioning::to_string(modes[m]))},
                    {"values", values[m]},
                    {"average", mean(values[m])}});
  }
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

PairScore score(const SignalMap& generated, const SignalMap& targets,
                const store::NormalizationStats& stats) {
  if (targets.empty()) throw DataError("no target images to score");
  PairScore out;
  for (const auto& [id, target] : targets) {
    auto it = generated.find(id);
    if (it == generated.end()) throw DataError("no generated signal for test image '" + id + "'");
    const Tensor g = store::normalize(it->second, stats);
    const Tensor t = store::normalize(target, stats);
    out.mse += mse(g, t);
    out.pcc += pcc(g, t);
    ++out.images;
  }
  out.mse /= static_cast<double>(out.images);
  out.pcc /= static_cast<double>(out.images);
  return out;
}

SignalMap test_targets(const store::Archive& archive, const std::string& subject) {
  return store::average_repetitions(archive, subject, store::kTest);
}

SignalMap generate_for_images(const checkpoint::Checkpoint& ckpt,
                              const denoiser::DenoiserConfig& expected,
                              embedding::EmbeddingProvider& provider,
                              const std::vector<std::string>& image_ids, std::uint64_t seed,
                              std::size_t samples_per_image) {
  if (samples_per_image == 0) throw ConfigError("samples_per_image must be at least 1");
  std::vector<conditioning::ConditionEmbedding> conds;
  for (const auto& id : image_ids) {
    try {
      conds.push_back(provider.get(id));
    } catch (const LookupError& e) {
      throw DataError(std::string("missing embedding: ") + e.what());
    }
  }
  // Reuse the archive path's seeding so in-memory and on-disk generations agree.
  std::vector<conditioning::ConditionEmbedding> all;
  std::vector<std::uint64_t> seeds;
  for (const auto& c : conds) {
    const auto base = sampling::image_seed(seed, c.image_id);
    for (std::size_t i = 0; i < samples_per_image; ++i) {
      all.push_back(c);
      seeds.push_back(sampling::sample_seed(base, i));
    }
  }
  checkpoint::require_compatible(ckpt.config, expected);
  if (!ckpt.norm) throw CompatibilityError("checkpoint carries no normalization statistics");
  auto params = ckpt.params;
  auto samples = sampling::generate_batch(params, ckpt.config, all, seeds,
                                          diffusion::NoiseSchedule::linear(ckpt.schedule));
  SignalMap out;
  for (std::size_t i = 0; i < image_ids.size(); ++i) {
    std::vector<Tensor> group(samples.begin() + static_cast<std::ptrdiff_t>(i * samples_per_image),
                              samples.begin() +
                                  static_cast<std::ptrdiff_t>((i + 1) * samples_per_image));
    out[image_ids[i]] = store::denormalize(store::mean_of(group), *ckpt.norm);
  }
  return out;
}

SignalMap generated_from_archive(const store::Archive& generated, const std::string& subject) {
  return store::average_repetitions(generated, subject, store::kGenerated);
}

namespace {

std::vector<std::string> keys(const SignalMap& m) {
  std::vector<std::string> out;
  for (const auto& [k, v] : m) out.push_back(k);
  return out;
}

const checkpoint::Checkpoint& model_for(
    const std::map<std::string, checkpoint::Checkpoint>& models, const std::string& subject) {
  auto it = models.find(subject);
  if (it == models.end()) throw DataError("no checkpoint for subject '" + subject + "'");
  return it->second;
}

}  // namespace

MetricReport within_subject_eval(const std::map<std::string, checkpoint::Checkpoint>& models,
                                 const denoiser::DenoiserConfig& expected,
                                 const store::Archive& archive,
                                 embedding::EmbeddingProvider& provider,
                                 const EvalOptions& options) {
  if (models.empty()) throw DataError("within-subject evaluation needs at least one checkpoint");
  MetricReport report;
  report.dataset_id = archive.manifest().dataset_id;
  for (const auto& [subject, ckpt] : models) {
    const auto targets = test_targets(archive, subject);
    const auto generated = generate_for_images(ckpt, expected, provider, keys(targets),
                                               options.seed, options.samples_per_image);
    const auto s = score(generated, targets, store::compute_stats(archive, subject));
    report.subjects.push_back(subject);
    report.mse.push_back(s.mse);
    report.pcc.push_back(s.pcc);
  }
  report.validate();
  return report;
}

CrossSubjectResult cross_subject_eval(const std::map<std::string, checkpoint::Checkpoint>& models,
                                      const denoiser::DenoiserConfig& expected,
                                      const store::Archive& archive,
                                      embedding::EmbeddingProvider& provider,
                                      const EvalOptions& options) {
  std::vector<std::string> subjects;
  for (const auto& [s, c] : models) subjects.push_back(s);
  const std::size_t n = subjects.size();
  if (n < 2) throw DataError("cross-subject evaluation needs at least two subjects");

  std::map<std::string, SignalMap> targets;
  std::map<std::string, store::NormalizationStats> stats;
  std::set<std::string> images;
  for (const auto& s : subjects) {
    targets[s] = test_targets(archive, s);
    stats[s] = store::compute_stats(archive, s);
    for (const auto& [id, t] : targets[s]) images.insert(id);
  }
  std::vector<std::vector<std::optional<double>>> mse_v(n, std::vector<std::optional<double>>(n));
  auto pcc_v = mse_v;
  const std::vector<std::string> image_list(images.begin(), images.end());
  for (std::size_t i = 0; i < n; ++i) {
    // A source model's generations depend only on the image, so they are
    // shared across targets.
    const auto generated = generate_for_images(model_for(models, subjects[i]), expected, provider,
                                               image_list, options.seed,
                                               options.samples_per_image);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto s = score(generated, targets[subjects[j]], stats[subjects[j]]);
      mse_v[i][j] = s.mse;
      pcc_v[i][j] = s.pcc;
    }
  }
  const auto& id = archive.manifest().dataset_id;
  return {CrossSubjectMatrix(id, "mse", subjects, std::move(mse_v)),
          CrossSubjectMatrix(id, "pcc", subjects, std::move(pcc_v))};
}

StrategyResult strategy_comparison(const training::TrainConfig& train,
                                   const denoiser::DenoiserConfig& base,
                                   const std::vector<std::string>& subjects,
                                   const store::Archive& archive,
                                   embedding::EmbeddingProvider& provider, const fs::path& run_dir,
                                   const EvalOptions& options,
                                   const std::vector<conditioning::FusionMode>& modes) {
  if (modes.empty()) throw ConfigError("strategy comparison needs at least one fusion mode");
  if (subjects.empty()) throw ConfigError("strategy comparison needs at least one subject");
  const auto& id = archive.manifest().dataset_id;
  StrategyResult out{{id, "mse", subjects, modes, {}}, {id, "pcc", subjects, modes, {}}};
  for (auto mode : modes) {
    auto cfg = base;
    cfg.fusion = mode;
    std::map<std::string, checkpoint::Checkpoint> models;
    for (const auto& subject : subjects) {
      auto tc = train;
      tc.subject = subject;
      const fs::path dir = run_dir / std::string(conditioning::to_string(mode)) / subject;
      models.emplace(subject, training::train(tc, cfg, archive, provider, dir).final);
    }
    auto report = within_subject_eval(models, cfg, archive, provider, options);
    out.mse.values.push_back(report.mse);
    out.pcc.values.push_back(report.pcc);
  }
  return out;
}

std::string report_stem(const std::string& dataset_id, const std::string& kind,
                        const std::string& metric) {
  return dataset_id + "_" + kind + "_" + metric;
}

}  // namespace neurodiff::eval
