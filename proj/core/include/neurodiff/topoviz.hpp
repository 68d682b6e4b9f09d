// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef NEURODIFF_TOPOVIZ_HPP_
#define NEURODIFF_TOPOVIZ_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neurodiff/nn/tensor.hpp"

namespace neurodiff::topo {

/// Planar sensor positions in the unit disk.
class Montage {
 public:
  struct Entry {
    std::string name;
    double x = 0.0;
    double y = 0.0;
  };

  /// Throws MontageError on duplicate names or coordinates, coordinates
  /// outside [-1, 1]^2, or fewer than two entries.
  explicit Montage(std::vector<Entry> entries);

  /// Parses `name,x,y` lines. Blank lines and lines starting with '#' are
  /// skipped.
  static Montage parse(const std::string& text);
  static Montage load(const std::filesystem::path& path);

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }

  /// Reordered to `channel_names`. The name sets must be equal.
  Montage aligned_to(const std::vector<std::string>& channel_names) const;

  std::string to_csv() const;

 private:
  std::vector<Entry> entries_;
};

/// Per-channel means over consecutive windows of floor(window_ms * rate / 1000)
/// samples; a trailing remainder is dropped. Result is [window][channel].
std::vector<std::vector<double>> window_average(const nn::Tensor& signal, double window_ms,
                                                double rate_hz);

/// Square field over [-1, 1]^2 sampled at res x res points including the
/// edges. Points outside the unit disk hold NaN.
struct Grid {
  int res = 0;
  std::vector<double> values;  // row-major, row 0 at y = +1

  double coord(int i) const;
  double at(int row, int col) const { return values[static_cast<std::size_t>(row) * res + col]; }
  bool masked(int row, int col) const;
  /// Minimum and maximum over unmasked points.
  std::pair<double, double> range() const;
};

/// Inverse-distance-weighted (power 2) value at (x, y). A point within 1e-12
/// of a sensor takes that sensor's value.
double idw_at(std::span<const double> values, const Montage& montage, double x, double y);

Grid interpolate_scalp(std::span<const double> values, const Montage& montage, int grid_res = 64);

struct TopoFrame {
  double start_ms = 0.0;
  double end_ms = 0.0;
  std::vector<double> channel_values;
  Grid grid;
};

struct TopoSeries {
  std::vector<TopoFrame> frames;
};

/// Windows labelled relative to `onset_ms` (the stimulus onset within the
/// epoch).
TopoSeries topo_series(const nn::Tensor& signal, const Montage& montage, double window_ms,
                       double rate_hz, double onset_ms = 0.0, int grid_res = 64);

inline constexpr std::array<const char*, 4> kRowNames = {"train", "test", "generated",
                                                         "difference"};

struct ComparisonFigure {
  std::array<TopoSeries, 4> rows;
  /// Symmetric color limit per row: values map onto [-scale, +scale].
  std::array<double, 4> scales{};
  std::string units = "a.u.";
  std::string title;
};

struct RenderOptions {
  int grid_res = 64;
  double onset_ms = 0.0;
  std::string units = "a.u.";
  std::string title;
};

/// Rows are train, test, generated and train minus test. Inputs must share
/// shape [n_channels, n_timepoints] with n_channels == montage size.
ComparisonFigure render_comparison(const nn::Tensor& train_avg, const nn::Tensor& test_avg,
                                   const nn::Tensor& generated_avg, const Montage& montage,
                                   double window_ms, double rate_hz,
                                   const RenderOptions& options = {});

struct Rgb {
  std::uint8_t r, g, b;
};

/// Diverging blue-white-red map of v in [-1, 1]; values outside clamp.
Rgb diverging_color(double v);

/// 8-bit RGB raster.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // RGB, row-major

  Rgb get(int x, int y) const;
  void set(int x, int y, Rgb c);
};

/// Lays out the four rows of tiles, each with a head outline and a colorbar.
Image rasterize(const ComparisonFigure& figure, int cell_px = 2);

/// Writes `path` as PNG with the color scales in tEXt chunks, plus
/// `path` with extension ".json" describing rows, windows and scales.
void write_figure(const ComparisonFigure& figure, const std::filesystem::path& path,
                  int cell_px = 2);

void write_png(const Image& image, const std::filesystem::path& path,
               const std::vector<std::pair<std::string, std::string>>& text = {});
Image read_png(const std::filesystem::path& path);

}  // namespace neurodiff::topo

#endif  // NEURODIFF_TOPOVIZ_HPP_
