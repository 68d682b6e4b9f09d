// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "neurodiff/topoviz.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "neurodiff/errors.hpp"
#include "neurodiff/io.hpp"

namespace neurodiff::topo {

namespace {

constexpr double kCoincide = 1e-12;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_coord(const std::string& text, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw MontageError("montage line " + std::to_string(line) + ": '" + text +
                       "' is not a number");
  }
}

}  // namespace

Montage::Montage(std::vector<Entry> entries) : entries_(std::move(entries)) {
  if (entries_.size() < 2) {
    throw MontageError("montage needs at least two sensors, got " +
                       std::to_string(entries_.size()));
  }
  std::set<std::string> names;
  std::map<std::pair<double, double>, std::string> seen;
  for (const auto& e : entries_) {
    if (e.name.empty()) throw MontageError("montage has an unnamed sensor");
    if (!names.insert(e.name).second) throw MontageError("duplicate montage name '" + e.name + "'");
    if (!std::isfinite(e.x) || !std::isfinite(e.y) || std::abs(e.x) > 1.0 || std::abs(e.y) > 1.0) {
      throw MontageError("sensor '" + e.name + "' lies outside [-1, 1]^2");
    }
    auto [it, fresh] = seen.emplace(std::pair{e.x, e.y}, e.name);
    if (!fresh) {
      throw MontageError("sensors '" + it->second + "' and '" + e.name +
                         "' share coordinates");
    }
  }
}

Montage Montage::parse(const std::string& text) {
  std::vector<Entry> entries;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = trim(raw);
    if (s.empty() || s[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(s);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(trim(f));
    if (fields.size() != 3) {
      throw MontageError("montage line " + std::to_string(line) + " has " +
                         std::to_string(fields.size()) + " fields, expected name,x,y");
    }
    entries.push_back({fields[0], parse_coord(fields[1], line), parse_coord(fields[2], line)});
  }
  return Montage(std::move(entries));
}

Montage Montage::load(const std::filesystem::path& path) {
  try {
    return parse(io::read_file(path));
  } catch (const MontageError& e) {
    throw MontageError(path.string() + ": " + e.what());
  }
}

Montage Montage::aligned_to(const std::vector<std::string>& channel_names) const {
  std::map<std::string, const Entry*> by_name;
  for (const auto& e : entries_) by_name[e.name] = &e;
  std::vector<Entry> out;
  std::vector<std::string> missing;
  for (const auto& n : channel_names) {
    auto it = by_name.find(n);
    if (it == by_name.end()) {
      missing.push_back(n);
    } else {
      out.push_back(*it->second);
    }
  }
  if (!missing.empty() || channel_names.size() != entries_.size()) {
    std::string msg = "montage does not match the channel names";
    if (!missing.empty()) msg += "; missing: " + missing.front();
    if (missing.size() > 1) msg += " and " + std::to_string(missing.size() - 1) + " more";
    msg += " (montage has " + std::to_string(entries_.size()) + " sensors, data has " +
           std::to_string(channel_names.size()) + " channels)";
    throw MontageError(msg);
  }
  return Montage(std::move(out));
}

std::string Montage::to_csv() const {
  std::string out;
  char buf[128];
  for (const auto& e : entries_) {
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", e.x, e.y);
    out += e.name + buf;
  }
  return out;
}

std::vector<std::vector<double>> window_average(const nn::Tensor& signal, double window_ms,
                                                double rate_hz) {
  if (signal.rank() != 2) {
    throw ShapeError("window_average expects [channels, timepoints], got " +
                     nn::shape_str(signal.shape()));
  }
  if (!(rate_hz > 0.0) || !(window_ms > 0.0) || !std::isfinite(window_ms * rate_hz)) {
    throw ConfigError("window and sampling rate must be positive");
  }
  const auto len = static_cast<std::size_t>(std::floor(window_ms * rate_hz / 1000.0 + 1e-9));
  const std::size_t nc = signal.dim(0), nt = signal.dim(1);
  if (len < 1) {
    throw ConfigError("a " + std::to_string(window_ms) + " ms window at " +
                      std::to_string(rate_hz) + " Hz holds no samples");
  }
  if (len > nt) {
    throw ConfigError("window of " + std::to_string(len) + " samples exceeds the " +
                      std::to_string(nt) + "-sample epoch");
  }
  std::vector<std::vector<double>> out(nt / len, std::vector<double>(nc, 0.0));
  for (std::size_t w = 0; w < out.size(); ++w) {
    for (std::size_t c = 0; c < nc; ++c) {
      double s = 0.0;
      for (std::size_t k = w * len; k < (w + 1) * len; ++k) s += signal.at(c, k);
      out[w][c] = s / static_cast<double>(len);
    }
  }
  return out;
}

double Grid::coord(int i) const { return -1.0 + 2.0 * i / (res - 1); }

bool Grid::masked(int row, int col) const { return std::isnan(at(row, col)); }

std::pair<double, double> Grid::range() const {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : values) {
    if (std::isnan(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return {lo, hi};
}

double idw_at(std::span<const double> values, const Montage& montage, double x, double y) {
  if (values.size() != montage.size()) {
    throw ShapeError(std::to_string(values.size()) + " values for a " +
                     std::to_string(montage.size()) + "-sensor montage");
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double dx = x - montage[i].x, dy = y - montage[i].y;
    const double d2 = dx * dx + dy * dy;
    if (d2 < kCoincide * kCoincide) return values[i];
    num += values[i] / d2;
    den += 1.0 / d2;
  }
  return num / den;
}

Grid interpolate_scalp(std::span<const double> values, const Montage& montage, int grid_res) {
  if (grid_res < 2) throw ConfigError("grid resolution must be at least 2");
  if (values.size() != montage.size()) {
    throw ShapeError(std::to_string(values.size()) + " values for a " +
                     std::to_string(montage.size()) + "-sensor montage");
  }
  Grid g;
  g.res = grid_res;
  g.values.assign(static_cast<std::size_t>(grid_res) * grid_res,
                  std::numeric_limits<double>::quiet_NaN());
  for (int r = 0; r < grid_res; ++r) {
    const double y = -g.coord(r);
    for (int c = 0; c < grid_res; ++c) {
      const double x = g.coord(c);
      if (x * x + y * y > 1.0 + 1e-12) continue;
      g.values[static_cast<std::size_t>(r) * grid_res + c] = idw_at(values, montage, x, y);
    }
  }
  return g;
}

TopoSeries topo_series(const nn::Tensor& signal, const Montage& montage, double window_ms,
                       double rate_hz, double onset_ms, int grid_res) {
  if (signal.rank() != 2 || signal.dim(0) != montage.size()) {
    throw ShapeError("signal " + nn::shape_str(signal.shape()) + " does not match a " +
                     std::to_string(montage.size()) + "-sensor montage");
  }
  const auto windows = window_average(signal, window_ms, rate_hz);
  const auto len = static_cast<std::size_t>(std::floor(window_ms * rate_hz / 1000.0 + 1e-9));
  const double span_ms = 1000.0 * static_cast<double>(len) / rate_hz;
  TopoSeries out;
  for (std::size_t w = 0; w < windows.size(); ++w) {
    TopoFrame f;
    f.start_ms = static_cast<double>(w) * span_ms - onset_ms;
    f.end_ms = f.start_ms + span_ms;
    f.channel_values = windows[w];
    f.grid = interpolate_scalp(f.channel_values, montage, grid_res);
    out.frames.push_back(std::move(f));
  }
  return out;
}

ComparisonFigure render_comparison(const nn::Tensor& train_avg, const nn::Tensor& test_avg,
                                   const nn::Tensor& generated_avg, const Montage& montage,
                                   double window_ms, double rate_hz,
                                   const RenderOptions& options) {
  if (train_avg.shape() != test_avg.shape() || train_avg.shape() != generated_avg.shape()) {
    throw DataError("topography inputs differ in shape: train " +
                    nn::shape_str(train_avg.shape()) + ", test " +
                    nn::shape_str(test_avg.shape()) + ", generated " +
                    nn::shape_str(generated_avg.shape()));
  }
  nn::Tensor diff(train_avg.shape());
  for (std::size_t k = 0; k < diff.numel(); ++k) diff[k] = train_avg[k] - test_avg[k];
  ComparisonFigure fig;
  fig.units = options.units;
  fig.title = options.title;
  const std::array<const nn::Tensor*, 4> inputs = {&train_avg, &test_avg, &generated_avg, &diff};
  for (std::size_t r = 0; r < 4; ++r) {
    fig.rows[r] = topo_series(*inputs[r], montage, window_ms, rate_hz, options.onset_ms,
                              options.grid_res);
    double m = 0.0;
    for (const auto& f : fig.rows[r].frames) {
      for (double v : f.channel_values) m = std::max(m, std::abs(v));
    }
    // IDW is convex, so the sensor values bound the grid.
    fig.scales[r] = m;
  }
  return fig;
}

Rgb diverging_color(double v) {
  if (std::isnan(v)) v = 0.0;
  v = std::clamp(v, -1.0, 1.0);
  // Blue (-1) through white (0) to red (+1).
  constexpr double lo[3] = {33, 102, 172}, mid[3] = {247, 247, 247}, hi[3] = {178, 24, 43};
  const double* end = v < 0 ? lo : hi;
  const double t = std::abs(v);
  auto ch = [&](int i) {
    return static_cast<std::uint8_t>(std::lround(mid[i] + t * (end[i] - mid[i])));
  };
  return {ch(0), ch(1), ch(2)};
}

Rgb Image::get(int x, int y) const {
  const std::size_t k = 3 * (static_cast<std::size_t>(y) * width + x);
  return {pixels[k], pixels[k + 1], pixels[k + 2]};
}

void Image::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  const std::size_t k = 3 * (static_cast<std::size_t>(y) * width + x);
  pixels[k] = c.r;
  pixels[k + 1] = c.g;
  pixels[k + 2] = c.b;
}

namespace {

constexpr int kMargin = 8;
constexpr int kGap = 4;
constexpr int kBarGap = 8;
constexpr int kBarWidth = 12;
constexpr Rgb kWhite{255, 255, 255};
constexpr Rgb kInk{0, 0, 0};

void draw_circle(Image& img, double cx, double cy, double radius) {
  const int steps = std::max(64, static_cast<int>(8 * radius));
  for (int s = 0; s < steps; ++s) {
    const double a = 2.0 * M_PI * s / steps;
    img.set(static_cast<int>(std::lround(cx + radius * std::cos(a))),
            static_cast<int>(std::lround(cy + radius * std::sin(a))), kInk);
  }
}

}  // namespace

Image rasterize(const ComparisonFigure& figure, int cell_px) {
  if (cell_px < 1) throw ConfigError("cell size must be at least 1 pixel");
  const std::size_t cols = figure.rows[0].frames.size();
  const int res = cols ? figure.rows[0].frames[0].grid.res : 0;
  const int tile = res * cell_px;
  Image img;
  img.width = 2 * kMargin + static_cast<int>(cols) * (tile + kGap) + kBarGap + kBarWidth;
  img.height = 2 * kMargin + 4 * tile + 3 * kGap;
  img.pixels.assign(3 * static_cast<std::size_t>(img.width) * img.height, 255);
  for (std::size_t r = 0; r < 4; ++r) {
    const int y0 = kMargin + static_cast<int>(r) * (tile + kGap);
    const double scale = figure.scales[r];
    auto color = [&](double v) { return diverging_color(scale > 0.0 ? v / scale : 0.0); };
    for (std::size_t c = 0; c < cols; ++c) {
      const int x0 = kMargin + static_cast<int>(c) * (tile + kGap);
      const Grid& g = figure.rows[r].frames[c].grid;
      for (int gr = 0; gr < res; ++gr) {
        for (int gc = 0; gc < res; ++gc) {
          const Rgb px = g.masked(gr, gc) ? kWhite : color(g.at(gr, gc));
          for (int dy = 0; dy < cell_px; ++dy) {
            for (int dx = 0; dx < cell_px; ++dx) img.set(x0 + gc * cell_px + dx, y0 + gr * cell_px + dy, px);
          }
        }
      }
      draw_circle(img, x0 + (tile - 1) / 2.0, y0 + (tile - 1) / 2.0, (tile - 1) / 2.0);
    }
    const int bx = kMargin + static_cast<int>(cols) * (tile + kGap) + kBarGap;
    for (int y = 0; y < tile; ++y) {
      const Rgb px = diverging_color(1.0 - 2.0 * y / std::max(1, tile - 1));
      for (int x = 0; x < kBarWidth; ++x) img.set(bx + x, y0 + y, px);
    }
  }
  return img;
}

namespace {

struct PngWriteState {
  std::FILE* file = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriteState() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (file) std::fclose(file);
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

namespace {

// Keeps setjmp away from objects with destructors.
bool png_encode(std::FILE* file, png_structp png, png_infop info, int width, int height,
                png_textp text, int n_text, png_bytepp rows) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, file);
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (n_text > 0) png_set_text(png, info, text, n_text);
  png_write_info(png, info);
  png_write_image(png, rows);
  png_write_end(png, nullptr);
  return true;
}

}  // namespace

void write_png(const Image& image, const std::filesystem::path& path,
               const std::vector<std::pair<std::string, std::string>>& text) {
  if (image.width <= 0 || image.height <= 0) throw ShapeError("cannot write an empty image");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  PngWriteState s;
  s.file = std::fopen(path.c_str(), "wb");
  if (!s.file) throw IoError("cannot open '" + path.string() + "' for writing");
  s.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!s.png) throw IoError("libpng initialisation failed");
  s.info = png_create_info_struct(s.png);
  if (!s.info) throw IoError("libpng initialisation failed");
  std::vector<png_text> chunks(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
    chunks[i].key = const_cast<char*>(text[i].first.c_str());
    chunks[i].text = const_cast<char*>(text[i].second.c_str());
    chunks[i].text_length = text[i].second.size();
  }
  std::vector<png_bytep> rows(image.height);
  for (int y = 0; y < image.height; ++y) {
    rows[y] = const_cast<png_bytep>(image.pixels.data() +
                                    3 * static_cast<std::size_t>(y) * image.width);
  }
  if (!png_encode(s.file, s.png, s.info, image.width, image.height, chunks.data(),
                  static_cast<int>(chunks.size()), rows.data())) {
    throw IoError("libpng failed writing '" + path.string() + "'");
  }
}

Image read_png(const std::filesystem::path& path) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str())) {
    throw IoError("cannot read PNG '" + path.string() + "': " + pi.message);
  }
  pi.format = PNG_FORMAT_RGB;
  Image img;
  img.width = static_cast<int>(pi.width);
  img.height = static_cast<int>(pi.height);
  img.pixels.resize(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw IoError("cannot decode PNG '" + path.string() + "': " + pi.message);
  }
  return img;
}

void write_figure(const ComparisonFigure& figure, const std::filesystem::path& path,
                  int cell_px) {
  std::vector<std::pair<std::string, std::string>> text;
  if (!figure.title.empty()) text.emplace_back("Title", figure.title);
  text.emplace_back("units", figure.units);
  for (std::size_t r = 0; r < 4; ++r) {
    text.emplace_back(std::string("scale.") + kRowNames[r],
                      "-" + fmt(figure.scales[r]) + " .. +" + fmt(figure.scales[r]) + " " +
                          figure.units);
  }
  write_png(rasterize(figure, cell_px), path, text);

  nlohmann::ordered_json j;
  j["title"] = figure.title;
  j["units"] = figure.units;
  j["image"] = path.filename().string();
  j["rows"] = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < 4; ++r) {
    nlohmann::ordered_json row;
    row["name"] = kRowNames[r];
    row["scale"] = figure.scales[r];
    row["windows_ms"] = nlohmann::ordered_json::array();
    for (const auto& f : figure.rows[r].frames) row["windows_ms"].push_back({f.start_ms, f.end_ms});
    j["rows"].push_back(row);
  }
  auto side = path;
  side.replace_extension(".json");
  io::write_file(side, j.dump(2) + "\n");
}

}  // namespace neurodiff::topo
