// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <optional>

#include "CLI11.hpp"
#include "neurodiff/checkpoint.hpp"
#include "neurodiff/embeddings.hpp"
#include "neurodiff/evaluator.hpp"
#include "neurodiff/io.hpp"
#include "neurodiff/sampler.hpp"
#include "neurodiff/store.hpp"
#include "neurodiff/topoviz.hpp"
#include "neurodiff/trainer.hpp"
#include "run_config.hpp"

namespace neurodiff::cli {

namespace fs = std::filesystem;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kCompatibility:
      return kExitConfig;
    case ErrorKind::kNumeric:
    case ErrorKind::kMetric:
    case ErrorKind::kState:
      return kExitNumeric;
    case ErrorKind::kShape:
    case ErrorKind::kFormat:
    case ErrorKind::kData:
    case ErrorKind::kLookup:
    case ErrorKind::kIndex:
    case ErrorKind::kMontage:
    case ErrorKind::kProvider:
    case ErrorKind::kIo:
      return kExitData;
  }
  return kExitInternal;
}

std::string error_line(int code, const std::string& kind, const std::string& message) {
  std::string escaped;
  for (char c : message) {
    if (c == '"' || c == '\\') {
      escaped += '\\';
      escaped += c;
    } else if (c == '\n') {
      escaped += "\\n";
    } else {
      escaped += c;
    }
  }
  return "error code=" + std::to_string(code) + " kind=" + kind + " message=\"" + escaped + "\"";
}

fs::path train_dir(const fs::path& out, const std::string& subject) {
  return out / "train" / subject;
}
fs::path final_checkpoint(const fs::path& out, const std::string& subject) {
  return train_dir(out, subject) / training::kCheckpointDir / training::kFinalCheckpoint;
}
fs::path generated_dir(const fs::path& out, const std::string& subject) {
  return out / "generated" / subject;
}
fs::path reports_dir(const fs::path& out) { return out / "reports"; }
fs::path topo_dir(const fs::path& out) { return out / "topo"; }

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string preset;
};

struct SynthOptions {
  std::string out = "synthetic";
  std::size_t subjects = 2;
  std::size_t images = 8;
  std::size_t trials = 32;
  std::size_t channels = 8;
  std::size_t timepoints = 16;
  double rate = 250.0;
  double test_fraction = 0.25;
  double noise = 0.3;
  std::uint64_t seed = 0;
  std::size_t dim = 768;
  std::string montage;
  std::string dataset_id = "synthetic";
};

void require_path(const RunConfig& cfg, const std::string& key) {
  const std::string p = cfg.str(key);
  if (p.empty()) throw ConfigError(key + " is not set");
  if (!fs::exists(p)) throw ConfigError(key + " '" + p + "' does not exist");
}

// Loaded inputs shared by the data-driven commands.
struct Session {
  RunConfig cfg;
  denoiser::DenoiserConfig model;
  fs::path out;
  std::unique_ptr<store::Archive> archive;
  std::unique_ptr<embedding::EmbeddingProvider> provider;
  std::vector<std::string> subjects;

  explicit Session(RunConfig c) : cfg(std::move(c)), model(cfg.model()), out(cfg.output_dir()) {
    cfg.schedule();
    require_path(cfg, "data.archive");
    archive = std::make_unique<store::Archive>(store::Archive::open(cfg.path("data.archive")));
    const auto& m = archive->manifest();
    if (m.n_channels != model.sample_channels || m.n_timepoints != model.sample_timepoints) {
      throw ConfigError("model sample shape (" + std::to_string(model.sample_channels) + ", " +
                        std::to_string(model.sample_timepoints) + ") differs from the archive's (" +
                        std::to_string(m.n_channels) + ", " + std::to_string(m.n_timepoints) + ")");
    }
    if (!cfg.str("data.embedding_url").empty()) {
      embedding::RemoteOptions r;
      r.url = cfg.str("data.embedding_url");
      r.dim = model.cross_attn_dim;
      r.image_dir = cfg.path("data.image_dir");
      provider = std::make_unique<embedding::RemoteProvider>(r);
    } else {
      require_path(cfg, "data.embeddings");
      auto index = embedding::load_embedding_file(cfg.path("data.embeddings"), 0);
      if (index.dim() != model.cross_attn_dim) {
        throw ConfigError("embedding width " + std::to_string(index.dim()) +
                          " differs from model.cross_attn_dim " +
                          std::to_string(model.cross_attn_dim));
      }
      provider = std::make_unique<embedding::IndexProvider>(std::move(index));
    }
    subjects = cfg.strings("subjects");
    if (subjects.empty()) subjects = m.subjects;
    for (const auto& s : subjects) {
      if (std::find(m.subjects.begin(), m.subjects.end(), s) == m.subjects.end()) {
        throw ConfigError("subject '" + s + "' is not in the archive");
      }
    }
    if (!cfg.str("data.montage").empty()) require_path(cfg, "data.montage");
  }

  checkpoint::Checkpoint load_final(const std::string& subject) const {
    const auto p = final_checkpoint(out, subject);
    if (!fs::exists(p)) {
      throw DataError("no trained checkpoint for '" + subject + "' at " + p.string() +
                      "; run train first");
    }
    return checkpoint::load(p);
  }

  std::map<std::string, checkpoint::Checkpoint> load_models() const {
    std::map<std::string, checkpoint::Checkpoint> models;
    for (const auto& s : subjects) models.emplace(s, load_final(s));
    return models;
  }

  eval::EvalOptions eval_options() const {
    return {cfg.seed(), static_cast<std::size_t>(cfg.integer("eval.samples_per_image"))};
  }
};

void write_snapshot(const fs::path& dir, const std::string& command, const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["config"] = cfg.snapshot();
  io::write_file(dir / (command + ".resolved.json"), j.dump(2) + "\n");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void write_report(const fs::path& dir, const std::string& stem, const std::string& csv,
                  const std::string& json, std::ostream& out) {
  io::write_file(dir / (stem + ".csv"), csv);
  io::write_file(dir / (stem + ".json"), json);
  out << "wrote " << (dir / (stem + ".csv")).string() << "\n";
}

int cmd_validate(const RunConfig& cfg, std::ostream& out) {
  Session s(cfg);
  s.cfg.train();
  if (!cfg.str("data.montage").empty()) {
    topo::Montage::load(cfg.path("data.montage")).aligned_to(s.archive->manifest().channel_names);
  }
  fs::create_directories(s.out);
  write_snapshot(s.out, "validate", s.cfg);
  out << "ok parameters=" << denoiser::parameter_count(s.model) << " subjects=" << s.subjects.size()
      << " trials=" << s.archive->size() << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  Session s(cfg);
  auto tc = s.cfg.train();
  fs::create_directories(s.out);
  write_snapshot(s.out, "train", s.cfg);
  for (const auto& subject : s.subjects) {
    tc.subject = subject;
    auto r = training::train(tc, s.model, *s.archive, *s.provider, train_dir(s.out, subject));
    out << "subject=" << subject << " steps=" << r.final.step << " loss=" << fmt(r.final.loss)
        << " checkpoint=" << r.final_path.string() << "\n";
  }
  return kExitOk;
}

int cmd_generate(const RunConfig& cfg, const std::string& checkpoint_path, std::ostream& out) {
  Session s(cfg);
  fs::create_directories(s.out);
  write_snapshot(s.out, "generate", s.cfg);
  const std::string split = cfg.str("generate.split");
  const auto n = static_cast<std::size_t>(cfg.integer("generate.samples_per_image"));
  if (!checkpoint_path.empty() && s.subjects.size() != 1) {
    throw ConfigError("--checkpoint needs exactly one subject selected");
  }
  for (const auto& subject : s.subjects) {
    const auto ckpt = checkpoint_path.empty() ? s.load_final(subject) : checkpoint::load(checkpoint_path);
    const auto ids = s.archive->image_ids(subject, split);
    if (ids.empty()) throw DataError("subject '" + subject + "' has no '" + split + "' images");
    std::vector<conditioning::ConditionEmbedding> conds;
    for (const auto& id : ids) conds.push_back(s.provider->get(id));
    sampling::GenerateOptions go;
    go.batch = static_cast<std::size_t>(cfg.integer("generate.batch"));
    const auto dir = generated_dir(s.out, subject);
    const auto m = sampling::generate_archive(ckpt, s.model, conds, s.cfg.seed(), n,
                                              s.archive->manifest(), dir, go);
    out << "subject=" << subject << " images=" << ids.size() << " samples=" << ids.size() * n
        << " archive=" << dir.string() << "\n";
  }
  return kExitOk;
}

int cmd_eval_within(const RunConfig& cfg, std::ostream& out) {
  Session s(cfg);
  fs::create_directories(reports_dir(s.out));
  write_snapshot(s.out, "eval-within", s.cfg);
  const auto r = eval::within_subject_eval(s.load_models(), s.model, *s.archive, *s.provider,
                                           s.eval_options());
  write_report(reports_dir(s.out), eval::report_stem(r.dataset_id, "within", "mse_pcc"),
               r.to_csv(), r.to_json(), out);
  out << "mse=" << eval::fixed3(r.mean_mse()) << " pcc=" << eval::fixed3(r.mean_pcc()) << "\n";
  return kExitOk;
}

int cmd_eval_cross(const RunConfig& cfg, std::ostream& out) {
  Session s(cfg);
  fs::create_directories(reports_dir(s.out));
  write_snapshot(s.out, "eval-cross", s.cfg);
  const auto r = eval::cross_subject_eval(s.load_models(), s.model, *s.archive, *s.provider,
                                          s.eval_options());
  for (const auto* m : {&r.mse, &r.pcc}) {
    write_report(reports_dir(s.out), eval::report_stem(m->dataset_id(), "cross", m->metric()),
                 m->to_csv(), m->to_json(), out);
  }
  out << "mse=" << eval::fixed3(r.mse.grand_mean()) << " pcc=" << eval::fixed3(r.pcc.grand_mean())
      << "\n";
  return kExitOk;
}

int cmd_compare_fusion(const RunConfig& cfg, std::ostream& out) {
  Session s(cfg);
  fs::create_directories(reports_dir(s.out));
  write_snapshot(s.out, "compare-fusion", s.cfg);
  const auto r = eval::strategy_comparison(s.cfg.train(), s.model, s.subjects, *s.archive,
                                           *s.provider, s.out / "fusion", s.eval_options());
  for (const auto* t : {&r.mse, &r.pcc}) {
    write_report(reports_dir(s.out), eval::report_stem(t->dataset_id, "fusion", t->metric),
                 t->to_csv(), t->to_json(), out);
  }
  return kExitOk;
}

int cmd_topo(const RunConfig& cfg, std::ostream& out) {
  Session s(cfg);
  if (cfg.str("data.montage").empty()) throw ConfigError("topo needs data.montage");
  const auto& m = s.archive->manifest();
  const auto montage = topo::Montage::load(cfg.path("data.montage")).aligned_to(m.channel_names);
  fs::create_directories(topo_dir(s.out));
  write_snapshot(s.out, "topo", s.cfg);
  for (const auto& subject : s.subjects) {
    const auto gdir = generated_dir(s.out, subject);
    if (!fs::exists(gdir)) {
      throw DataError("no generated archive for '" + subject + "' at " + gdir.string() +
                      "; run generate first");
    }
    const auto generated = store::Archive::open(gdir);
    topo::RenderOptions ro;
    ro.grid_res = static_cast<int>(cfg.integer("topo.grid"));
    ro.onset_ms = m.stimulus_onset_ms.value_or(0.0);
    ro.units = m.units;
    ro.title = m.dataset_id + " " + subject;
    const auto fig = topo::render_comparison(
        store::grand_average(*s.archive, subject, store::kTrain),
        store::grand_average(*s.archive, subject, store::kTest),
        store::grand_average(generated, subject, store::kGenerated), montage,
        cfg.number("topo.window_ms"), m.sampling_rate_hz, ro);
    const auto path = topo_dir(s.out) / (m.dataset_id + "_" + subject + "_topo.png");
    topo::write_figure(fig, path, static_cast<int>(cfg.integer("topo.cell_px")));
    out << "wrote " << path.string() << " frames=" << fig.rows[0].frames.size() << "\n";
  }
  return kExitOk;
}

int cmd_synth(const SynthOptions& o, std::ostream& out) {
  store::SyntheticSpec spec;
  spec.dataset_id = o.dataset_id;
  spec.subjects = o.subjects;
  spec.images = o.images;
  spec.trials = o.trials;
  spec.channels = o.channels;
  spec.timepoints = o.timepoints;
  spec.sampling_rate_hz = o.rate;
  spec.test_fraction = o.test_fraction;
  spec.noise = o.noise;
  spec.seed = o.seed;
  if (!o.montage.empty()) {
    if (!fs::exists(o.montage)) throw ConfigError("montage '" + o.montage + "' does not exist");
    const auto montage = topo::Montage::load(o.montage);
    spec.channels = montage.size();
    for (const auto& e : montage.entries()) spec.channel_names.push_back(e.name);
  }
  const fs::path root = fs::absolute(o.out);
  const fs::path archive = root / "archive", embeddings = root / "embeddings";
  store::write_synthetic_archive(spec, archive);
  embedding::write_embedding_file(
      embedding::synthetic_index(o.seed, store::synthetic_image_ids(o.images), o.dim), embeddings);
  store::Archive::open(archive);

  nlohmann::ordered_json cfg;
  cfg["preset"] = "tiny";
  cfg["seed"] = o.seed;
  cfg["output"] = (root / "run").string();
  cfg["data"]["archive"] = archive.string();
  cfg["data"]["embeddings"] = embeddings.string();
  if (!o.montage.empty()) cfg["data"]["montage"] = fs::absolute(o.montage).string();
  cfg["model"]["sample_channels"] = spec.channels;
  cfg["model"]["sample_timepoints"] = spec.timepoints;
  cfg["model"]["cross_attn_dim"] = o.dim;
  io::write_file(root / "config.json", cfg.dump(2) + "\n");

  nlohmann::ordered_json snap;
  snap["command"] = "synth-data";
  snap["config"] = {{"dataset_id", o.dataset_id}, {"subjects", o.subjects},
                    {"images", o.images},         {"trials", o.trials},
                    {"channels", spec.channels},  {"timepoints", o.timepoints},
                    {"rate_hz", o.rate},          {"test_fraction", o.test_fraction},
                    {"noise", o.noise},           {"seed", o.seed},
                    {"embedding_dim", o.dim},     {"montage", o.montage}};
  io::write_file(root / "synth-data.resolved.json", snap.dump(2) + "\n");
  out << "archive=" << archive.string() << " embeddings=" << embeddings.string()
      << " config=" << (root / "config.json").string() << "\n";
  return kExitOk;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config_path, "JSON run configuration");
  sub->add_option("--set", c.overrides, "Override a config key: key.path=value")->take_all();
  sub->add_option("--preset", c.preset, "Preset: eeg-things2, meg-things or tiny");
}

RunConfig load(const Common& c) {
  std::string text;
  if (!c.config_path.empty()) {
    if (!fs::exists(c.config_path)) throw ConfigError("config file '" + c.config_path + "' does not exist");
    text = io::read_file(c.config_path);
  }
  return RunConfig::resolve(text, c.overrides, c.preset);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Generate M/EEG signals from image embeddings with a conditional diffusion model",
               "neurodiff"};
  app.require_subcommand(1);
  Common common;
  SynthOptions synth;
  std::string checkpoint_path;
  std::map<std::string, std::function<int()>> actions;

  struct Entry {
    const char* name;
    const char* help;
    std::function<int(const RunConfig&)> fn;
  };
  const std::vector<Entry> entries = {
      {"validate", "Check a configuration and its inputs",
       [&](const RunConfig& c) { return cmd_validate(c, out); }},
      {"train", "Train one model per selected subject",
       [&](const RunConfig& c) { return cmd_train(c, out); }},
      {"generate", "Sample signals for a split's images",
       [&](const RunConfig& c) { return cmd_generate(c, checkpoint_path, out); }},
      {"eval-within", "Within-subject MSE and PCC report",
       [&](const RunConfig& c) { return cmd_eval_within(c, out); }},
      {"eval-cross", "Cross-subject MSE and PCC matrices",
       [&](const RunConfig& c) { return cmd_eval_cross(c, out); }},
      {"compare-fusion", "Train and evaluate every fusion mode",
       [&](const RunConfig& c) { return cmd_compare_fusion(c, out); }},
      {"topo", "Render train, test, generated and difference topographies",
       [&](const RunConfig& c) { return cmd_topo(c, out); }},
  };
  for (const auto& e : entries) {
    auto* sub = app.add_subcommand(e.name, e.help);
    add_common(sub, common);
    if (std::string(e.name) == "generate") {
      sub->add_option("--checkpoint", checkpoint_path, "Checkpoint to sample from");
    }
    actions[e.name] = [&common, fn = e.fn] { return fn(load(common)); };
  }
  auto* s = app.add_subcommand("synth-data", "Write a deterministic synthetic dataset");
  s->add_option("--out", synth.out, "Output directory");
  s->add_option("--subjects", synth.subjects);
  s->add_option("--images", synth.images);
  s->add_option("--trials", synth.trials, "Trials per subject");
  s->add_option("--channels", synth.channels);
  s->add_option("--timepoints", synth.timepoints);
  s->add_option("--rate", synth.rate, "Sampling rate in Hz");
  s->add_option("--test-fraction", synth.test_fraction);
  s->add_option("--noise", synth.noise);
  s->add_option("--seed", synth.seed);
  s->add_option("--dim", synth.dim, "Embedding width");
  s->add_option("--montage", synth.montage, "Take channel names and count from a montage");
  s->add_option("--dataset-id", synth.dataset_id);
  actions["synth-data"] = [&] { return cmd_synth(synth, out); };

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  std::string command = "neurodiff";
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << error_line(kExitConfig, "usage", e.what()) << "\n";
    err << "neurodiff: " << e.what() << "\n";
    return kExitConfig;
  }
  for (auto* sub : app.get_subcommands()) command = sub->get_name();
  try {
    return actions.at(command)();
  } catch (const Error& e) {
    const int code = exit_code(e.kind());
    err << error_line(code, to_string(e.kind()), e.what()) << "\n";
    err << "neurodiff " << command << ": " << to_string(e.kind()) << " error: " << e.what() << "\n";
    return code;
  } catch (const std::exception& e) {
    err << error_line(kExitInternal, "internal", e.what()) << "\n";
    err << "neurodiff " << command << ": unexpected failure: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace neurodiff::cli
