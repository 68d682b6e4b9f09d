// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "neurodiff/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "neurodiff/errors.hpp"
#include "neurodiff/nn/rng.hpp"

namespace neurodiff::denoiser {

using nn::Shape;
using nn::Tensor;
using nn::Var;

bool DenoiserConfig::has_fusion(int level) const {
  return std::find(attn_levels.begin(), attn_levels.end(), level) != attn_levels.end();
}

void DenoiserConfig::validate() const {
  if (in_channels != 1 || out_channels != 1) {
    throw ConfigError("denoiser: the signal plane has exactly 1 input and 1 output channel");
  }
  for (std::size_t c : level_channels) {
    if (c == 0) throw ConfigError("denoiser: level channel widths must be positive");
  }
  if (level_channels[0] % 2 != 0) {
    throw ConfigError("denoiser: first level width feeds the sinusoidal embedding and must be even");
  }
  for (int level : attn_levels) {
    if (level < 1 || level > 4) {
      throw ConfigError("denoiser: attention level " + std::to_string(level) + " outside 1..4");
    }
  }
  if (cross_attn_dim == 0) throw ConfigError("denoiser: cross_attn_dim must be positive");
  if (time_embed_dim == 0) throw ConfigError("denoiser: time_embed_dim must be positive");
  if (sample_channels == 0 || sample_timepoints == 0) {
    throw ConfigError("denoiser: sample shape must be positive");
  }
  if (fusion == FusionMode::kCrossAttention) {
    if (heads == 0) throw ConfigError("denoiser: heads must be >= 1");
    for (int level = 1; level <= 4; ++level) {
      const bool used = has_fusion(level) || level == 4;  // level 4 width feeds the mid block
      const std::size_t c = level_channels[static_cast<std::size_t>(level - 1)];
      if (used && c % heads != 0) {
        throw ConfigError("denoiser: level " + std::to_string(level) + " width " +
                          std::to_string(c) + " is not divisible by " + std::to_string(heads) +
                          " heads");
      }
    }
  }
}

DenoiserConfig tiny_config() {
  DenoiserConfig cfg;
  cfg.level_channels = {8, 8, 8, 8};
  cfg.heads = 1;
  cfg.sample_channels = 8;
  cfg.sample_timepoints = 16;
  cfg.time_embed_dim = 32;
  return cfg;
}

namespace {

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

}  // namespace

PadSpec pad_spec(std::size_t channels, std::size_t timepoints) {
  if (channels == 0 || timepoints == 0) throw ShapeError("pad_spec: empty signal");
  return PadSpec{channels, timepoints, round_up(channels, kGridMultiple),
                 round_up(timepoints, kGridMultiple), 0, 0};
}

Tensor pad_to_grid(const Tensor& signal, PadSpec* spec_out) {
  if (signal.rank() != 2) {
    throw ShapeError("pad_to_grid: expected [channels, time], got " + nn::shape_str(signal.shape()));
  }
  const PadSpec spec = pad_spec(signal.dim(0), signal.dim(1));
  Tensor out({spec.padded_channels, spec.padded_timepoints}, 0.0);
  for (std::size_t c = 0; c < spec.channels; ++c) {
    std::copy_n(signal.ptr() + c * spec.timepoints, spec.timepoints,
                out.ptr() + c * spec.padded_timepoints);
  }
  if (spec_out) *spec_out = spec;
  return out;
}

Tensor crop(const Tensor& padded, const PadSpec& spec) {
  nn::expect_shape(padded, {spec.padded_channels, spec.padded_timepoints}, "crop");
  Tensor out({spec.channels, spec.timepoints});
  for (std::size_t c = 0; c < spec.channels; ++c) {
    std::copy_n(padded.ptr() + c * spec.padded_timepoints, spec.timepoints,
                out.ptr() + c * spec.timepoints);
  }
  return out;
}

Tensor sinusoidal_embedding(std::span<const int> t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) {
    throw ConfigError("time embedding width must be even and positive, got " + std::to_string(dim));
  }
  const std::size_t half = dim / 2;
  Tensor out({t.size(), dim});
  for (std::size_t i = 0; i < half; ++i) {
    const double exponent = half == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(half - 1);
    const double freq = std::exp(-std::log(1e4) * exponent);
    for (std::size_t n = 0; n < t.size(); ++n) {
      const double arg = static_cast<double>(t[n]) * freq;
      out[n * dim + i] = std::sin(arg);
      out[n * dim + half + i] = std::cos(arg);
    }
  }
  return out;
}

Tensor sinusoidal_embedding(int t, std::size_t dim) {
  const int ts[] = {t};
  return sinusoidal_embedding(ts, dim).reshaped({dim});
}

namespace {

class LayoutBuilder {
 public:
  explicit LayoutBuilder(const DenoiserConfig& cfg) : cfg_(cfg) {}

  void add(std::string name, Shape shape, Init init) {
    specs_.push_back({std::move(name), std::move(shape), init});
  }

  void conv(const std::string& name, std::size_t cout, std::size_t cin, std::size_t k,
            Init weight_init = Init::kNormal) {
    add(name + ".weight", {cout, cin, k, k}, weight_init);
    add(name + ".bias", {cout}, Init::kZero);
  }

  void norm(const std::string& name, std::size_t c) {
    add(name + ".gamma", {c}, Init::kOne);
    add(name + ".beta", {c}, Init::kZero);
  }

  void res(const std::string& name, std::size_t cin, std::size_t cout) {
    norm(name + ".norm1", cin);
    conv(name + ".conv1", cout, cin, 3);
    add(name + ".temb.weight", {cfg_.time_embed_dim, cout}, Init::kNormal);
    add(name + ".temb.bias", {cout}, Init::kZero);
    norm(name + ".norm2", cout);
    conv(name + ".conv2", cout, cout, 3);
    if (cin != cout) conv(name + ".skip", cout, cin, 1);
  }

  void fuse(const std::string& name, std::size_t c) {
    const std::size_t d = cfg_.cross_attn_dim;
    switch (cfg_.fusion) {
      case FusionMode::kCrossAttention:
        add(name + ".w_q", {c, c}, Init::kNormal);
        add(name + ".w_k", {d, c}, Init::kNormal);
        add(name + ".w_v", {d, c}, Init::kNormal);
        add(name + ".w_out", {c, c}, Init::kNormal);
        break;
      case FusionMode::kAddition:
        add(name + ".proj.weight", {d, c}, Init::kNormal);
        add(name + ".proj.bias", {c}, Init::kZero);
        break;
      case FusionMode::kConcatenation:
        add(name + ".proj.weight", {c + d, c}, Init::kConcatIdentity);
        add(name + ".proj.bias", {c}, Init::kZero);
        break;
    }
  }

  std::vector<ParamSpec> take() { return std::move(specs_); }

 private:
  const DenoiserConfig& cfg_;
  std::vector<ParamSpec> specs_;
};

std::string level_name(const char* path, std::size_t level) {
  return std::string(path) + "." + std::to_string(level + 1);
}

}  // namespace

std::vector<ParamSpec> parameter_layout(const DenoiserConfig& cfg) {
  cfg.validate();
  const auto& ch = cfg.level_channels;
  LayoutBuilder b(cfg);
  b.add("time.lin1.weight", {ch[0], cfg.time_embed_dim}, Init::kNormal);
  b.add("time.lin1.bias", {cfg.time_embed_dim}, Init::kZero);
  b.add("time.lin2.weight", {cfg.time_embed_dim, cfg.time_embed_dim}, Init::kNormal);
  b.add("time.lin2.bias", {cfg.time_embed_dim}, Init::kZero);
  b.conv("conv_in", ch[0], cfg.in_channels, 3);

  std::size_t current = ch[0];
  for (std::size_t l = 0; l < 4; ++l) {
    const std::string base = level_name("down", l);
    for (std::size_t r = 0; r < kLayersPerLevel; ++r) {
      b.res(base + ".res." + std::to_string(r), current, ch[l]);
      current = ch[l];
      if (cfg.has_fusion(static_cast<int>(l + 1))) b.fuse(base + ".fuse." + std::to_string(r), ch[l]);
    }
    if (l < 3) b.conv(base + ".downsample", ch[l], ch[l], 3);
  }

  b.res("mid.res.0", ch[3], ch[3]);
  b.fuse("mid.fuse.0", ch[3]);
  b.res("mid.res.1", ch[3], ch[3]);

  current = ch[3];
  for (std::size_t l = 4; l-- > 0;) {
    const std::string base = level_name("up", l);
    for (std::size_t r = 0; r < kLayersPerLevel; ++r) {
      b.res(base + ".res." + std::to_string(r), current + ch[l], ch[l]);
      current = ch[l];
      if (cfg.has_fusion(static_cast<int>(l + 1))) b.fuse(base + ".fuse." + std::to_string(r), ch[l]);
    }
    if (l > 0) b.conv(base + ".upsample", ch[l], ch[l], 3);
  }

  b.norm("out.norm", ch[0]);
  b.conv("out.conv", cfg.out_channels, ch[0], 3, Init::kZero);
  return b.take();
}

std::size_t parameter_count(const DenoiserConfig& cfg) {
  std::size_t n = 0;
  for (const auto& spec : parameter_layout(cfg)) n += nn::shape_numel(spec.shape);
  return n;
}

nn::ParamSet init_params(const DenoiserConfig& cfg, std::uint64_t seed) {
  nn::Rng rng(seed);
  nn::ParamSet params;
  for (auto& spec : parameter_layout(cfg)) {
    Tensor value(spec.shape, 0.0);
    switch (spec.init) {
      case Init::kNormal: nn::init_normal(value, kInitStddev, rng); break;
      case Init::kZero: break;
      case Init::kOne: value.fill(1.0); break;
      case Init::kConcatIdentity: {
        // Feature block passes through; the condition block starts small.
        nn::init_normal(value, kInitStddev, rng);
        const std::size_t c = spec.shape[1];
        for (std::size_t i = 0; i < c; ++i) {
          for (std::size_t j = 0; j < c; ++j) value.at(i, j) = i == j ? 1.0 : 0.0;
        }
        break;
      }
    }
    params.add(spec.name, std::move(value));
  }
  return params;
}

std::vector<std::array<std::size_t, 2>> level_resolutions(const DenoiserConfig& cfg) {
  const PadSpec spec = pad_spec(cfg.sample_channels, cfg.sample_timepoints);
  std::vector<std::array<std::size_t, 2>> out;
  std::size_t h = spec.padded_channels, w = spec.padded_timepoints;
  for (int l = 0; l < 4; ++l) {
    out.push_back({h, w});
    h /= 2;
    w /= 2;
  }
  return out;
}

namespace {

class Forward {
 public:
  Forward(nn::ParamSet& params, const DenoiserConfig& cfg, const Var& cond, std::size_t batch)
      : params_(params), cfg_(cfg), cond_(cond), batch_(batch) {}

  Var p(const std::string& name) { return nn::parameter(params_.get(name)); }

  Var conv(const Var& x, const std::string& name, int stride = 1, int pad = 1) {
    return nn::conv2d(x, p(name + ".weight"), p(name + ".bias"), stride, pad);
  }

  Var norm(const Var& x, const std::string& name) {
    return nn::group_norm(x, p(name + ".gamma"), p(name + ".beta"), nn::group_count(x.shape()[1]));
  }

  void set_time(const Var& temb_act) { temb_act_ = temb_act; }

  Var res(const Var& x, const std::string& name) {
    Var h = conv(nn::silu(norm(x, name + ".norm1")), name + ".conv1");
    h = nn::add_channel_bias(h, nn::affine_map(temb_act_, p(name + ".temb.weight"),
                                               p(name + ".temb.bias")));
    h = conv(nn::silu(norm(h, name + ".norm2")), name + ".conv2");
    Var skip = params_.contains(name + ".skip.weight") ? conv(x, name + ".skip", 1, 0) : x;
    return checked(nn::add(skip, h), name);
  }

  Var fuse(const Var& x, const std::string& name) {
    const Shape shape = x.shape();
    Var tokens = nn::to_tokens(x);
    Var fused;
    switch (cfg_.fusion) {
      case FusionMode::kCrossAttention:
        fused = conditioning::cross_attention(tokens, cond_, p(name + ".w_q"), p(name + ".w_k"),
                                              p(name + ".w_v"), p(name + ".w_out"), batch_,
                                              cfg_.heads);
        break;
      case FusionMode::kAddition:
        fused = conditioning::fuse_addition(tokens, cond_, p(name + ".proj.weight"),
                                            p(name + ".proj.bias"), batch_);
        break;
      case FusionMode::kConcatenation:
        fused = conditioning::fuse_concatenation(tokens, cond_, p(name + ".proj.weight"),
                                                 p(name + ".proj.bias"), batch_);
        break;
    }
    return checked(nn::from_tokens(fused, shape), name);
  }

  Var checked(Var v, const std::string& block) {
    if (!v.value().all_finite()) {
      throw NumericError("non-finite activation in block '" + block + "'");
    }
    return v;
  }

 private:
  nn::ParamSet& params_;
  const DenoiserConfig& cfg_;
  Var cond_;
  std::size_t batch_;
  Var temb_act_;
};

}  // namespace

Var predict_noise(const Var& y_t, std::span<const int> t, const Var& cond, nn::ParamSet& params,
                  const DenoiserConfig& cfg) {
  const PadSpec spec = pad_spec(cfg.sample_channels, cfg.sample_timepoints);
  const auto& s = y_t.shape();
  if (s.size() != 4 || s[1] != cfg.in_channels || s[2] != spec.padded_channels ||
      s[3] != spec.padded_timepoints) {
    throw ShapeError("predict_noise: input " + nn::shape_str(s) + " does not match padded sample " +
                     nn::shape_str({cfg.in_channels, spec.padded_channels, spec.padded_timepoints}));
  }
  const std::size_t batch = s[0];
  if (t.size() != batch) {
    throw ShapeError("predict_noise: " + std::to_string(t.size()) + " time steps for batch of " +
                     std::to_string(batch));
  }
  if (cond.value().rank() != 2 || cond.shape()[1] != cfg.cross_attn_dim ||
      cond.shape()[0] % batch != 0 || cond.shape()[0] == 0) {
    throw ShapeError("predict_noise: condition tokens " + nn::shape_str(cond.shape()) +
                     " do not match batch " + std::to_string(batch) + " x width " +
                     std::to_string(cfg.cross_attn_dim));
  }

  Forward f(params, cfg, cond, batch);
  const auto& ch = cfg.level_channels;

  Var temb = nn::constant(sinusoidal_embedding(t, ch[0]));
  temb = nn::affine_map(temb, f.p("time.lin1.weight"), f.p("time.lin1.bias"));
  temb = nn::affine_map(nn::silu(temb), f.p("time.lin2.weight"), f.p("time.lin2.bias"));
  f.set_time(nn::silu(temb));

  Var h = f.conv(y_t, "conv_in");
  std::vector<Var> skips;
  for (std::size_t l = 0; l < 4; ++l) {
    const std::string base = level_name("down", l);
    for (std::size_t r = 0; r < kLayersPerLevel; ++r) {
      h = f.res(h, base + ".res." + std::to_string(r));
      if (cfg.has_fusion(static_cast<int>(l + 1))) h = f.fuse(h, base + ".fuse." + std::to_string(r));
      skips.push_back(h);
    }
    if (l < 3) {
      h = nn::conv2d_padded(h, f.p(base + ".downsample.weight"), f.p(base + ".downsample.bias"),
                            2, 0, 1);
    }
  }

  h = f.res(h, "mid.res.0");
  h = f.fuse(h, "mid.fuse.0");
  h = f.res(h, "mid.res.1");

  for (std::size_t l = 4; l-- > 0;) {
    const std::string base = level_name("up", l);
    for (std::size_t r = 0; r < kLayersPerLevel; ++r) {
      h = nn::concat_channels(h, skips.back());
      skips.pop_back();
      h = f.res(h, base + ".res." + std::to_string(r));
      if (cfg.has_fusion(static_cast<int>(l + 1))) h = f.fuse(h, base + ".fuse." + std::to_string(r));
    }
    if (l > 0) h = f.conv(nn::upsample_nearest2x(h), base + ".upsample");
  }

  h = f.conv(nn::silu(f.norm(h, "out.norm")), "out.conv");
  return f.checked(h, "out.conv");
}

Tensor predict_noise(const Tensor& y_t, int t, const conditioning::ConditionEmbedding& cond,
                     nn::ParamSet& params, const DenoiserConfig& cfg) {
  conditioning::validate(cond, cfg.cross_attn_dim);
  if (y_t.rank() != 2) throw ShapeError("predict_noise: expected a padded [H, W] plane");
  nn::NoGradGuard guard;
  const int ts[] = {t};
  Var x = nn::constant(y_t.reshaped({1, 1, y_t.dim(0), y_t.dim(1)}));
  Var out = predict_noise(x, ts, nn::constant(cond.tokens), params, cfg);
  return out.value().reshaped(y_t.shape());
}

}  // namespace neurodiff::denoiser
