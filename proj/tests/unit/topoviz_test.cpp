// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "neurodiff/topoviz.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "json.hpp"
#include "neurodiff/errors.hpp"
#include "test_util.hpp"

#ifndef NEURODIFF_MONTAGE_DIR
#error "NEURODIFF_MONTAGE_DIR must point at data/montages"
#endif

namespace neurodiff::topo {
namespace {

using nn::Tensor;
using testing::TempDir;

const std::filesystem::path kMontages = NEURODIFF_MONTAGE_DIR;

Montage random_montage(std::size_t n, nn::Rng& rng) {
  std::vector<Montage::Entry> e;
  while (e.size() < n) {
    const double x = 2.0 * rng.uniform() - 1.0, y = 2.0 * rng.uniform() - 1.0;
    if (x * x + y * y < 0.95) e.push_back({"s" + std::to_string(e.size()), x, y});
  }
  return Montage(std::move(e));
}

std::vector<double> random_values(std::size_t n, nn::Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = 5.0 * rng.normal();
  return v;
}

TEST(Montage, ParsesAndValidates) {
  auto m = Montage::parse("# comment\nFz,0,0.4\n\n Cz , 0 , 0 \nPz,0,-0.4\n");
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m[1].name, "Cz");
  EXPECT_EQ(m[2].y, -0.4);
  EXPECT_EQ(Montage::parse(m.to_csv()).entries().size(), 3u);
  EXPECT_THROW(Montage::parse("a,0,0\na,0.1,0\n"), MontageError);
  EXPECT_THROW(Montage::parse("a,0,0\nb,0,0\n"), MontageError);
  EXPECT_THROW(Montage::parse("a,0,0\nb,1.5,0\n"), MontageError);
  EXPECT_THROW(Montage::parse("a,0,0\nb,x,0\n"), MontageError);
  EXPECT_THROW(Montage::parse("a,0,0\nb,0\n"), MontageError);
  EXPECT_THROW(Montage::parse("a,0,0\n"), MontageError);
}

TEST(Montage, AlignsToChannelNames) {
  auto m = Montage::parse("a,0,0.5\nb,0.5,0\nc,0,-0.5\n");
  auto aligned = m.aligned_to({"c", "a", "b"});
  EXPECT_EQ(aligned[0].name, "c");
  EXPECT_EQ(aligned[0].y, -0.5);
  EXPECT_THROW(m.aligned_to({"a", "b"}), MontageError);
  EXPECT_THROW(m.aligned_to({"a", "b", "d"}), MontageError);
}

TEST(Montage, ShippedLayoutsLoad) {
  const auto eeg = Montage::load(kMontages / "eeg63.csv");
  const auto meg = Montage::load(kMontages / "meg271.csv");
  EXPECT_EQ(eeg.size(), 63u);
  EXPECT_EQ(meg.size(), 271u);
  for (const auto* m : {&eeg, &meg}) {
    for (const auto& e : m->entries()) EXPECT_LE(std::hypot(e.x, e.y), 1.0) << e.name;
  }
  EXPECT_EQ(eeg[23].name, "Cz");
  EXPECT_THROW(Montage::load(kMontages / "missing.csv"), IoError);
}

TEST(WindowAverage, Examples) {
  const Tensor ones({3, 250}, 1.0);
  const auto w = window_average(ones, 100.0, 250.0);
  ASSERT_EQ(w.size(), 10u);
  for (const auto& v : w) EXPECT_EQ(v, std::vector<double>(3, 1.0));
  // Two-sample windows at 1 kHz.
  const auto h = window_average(Tensor({1, 4}, std::vector<double>{0, 2, 4, 6}), 2.0, 1000.0);
  ASSERT_EQ(h.size(), 2u);
  EXPECT_EQ(h[0][0], 1.0);
  EXPECT_EQ(h[1][0], 5.0);
  // The trailing remainder is dropped.
  EXPECT_EQ(window_average(Tensor({1, 7}, 0.0), 2.0, 1000.0).size(), 3u);
  EXPECT_THROW(window_average(Tensor({1, 4}, 0.0), 5.0, 1000.0), ConfigError);
  EXPECT_THROW(window_average(Tensor({1, 4}, 0.0), 0.5, 1000.0), ConfigError);
  EXPECT_THROW(window_average(Tensor({1, 4}, 0.0), 1.0, 0.0), ConfigError);
  EXPECT_THROW(window_average(Tensor::vector({1, 2}), 1.0, 1000.0), ShapeError);
}

TEST(Interpolate, TwoSensorMidpoint) {
  auto m = Montage::parse("l,-0.5,0\nr,0.5,0\n");
  const std::vector<double> v = {0.0, 10.0};
  EXPECT_EQ(idw_at(v, m, 0.0, 0.0), 5.0);
  EXPECT_EQ(idw_at(v, m, 0.5, 0.0), 10.0);
  // Odd resolutions include the origin as a grid point.
  const auto g = interpolate_scalp(v, m, 65);
  EXPECT_EQ(g.at(32, 32), 5.0);
  EXPECT_TRUE(g.masked(0, 0));
  EXPECT_FALSE(g.masked(32, 0));
}

TEST(Interpolate, GridPointOnSensorTakesItsValue) {
  // With res 5 the grid coordinates are -1, -0.5, 0, 0.5, 1.
  auto m = Montage::parse("a,0.5,0.5\nb,-0.5,0\nc,0,-1\n");
  const std::vector<double> v = {3.0, -2.0, 7.0};
  const auto g = interpolate_scalp(v, m, 5);
  EXPECT_EQ(g.at(1, 3), 3.0);
  EXPECT_EQ(g.at(2, 1), -2.0);
  EXPECT_EQ(g.at(4, 2), 7.0);
  EXPECT_THROW(interpolate_scalp(std::vector<double>{1.0}, m, 5), ShapeError);
}

TEST(Interpolate, ConstantFieldIsConstant) {
  nn::Rng rng(3);
  const auto m = random_montage(40, rng);
  const std::vector<double> v(40, -2.75);
  const auto g = interpolate_scalp(v, m);
  EXPECT_EQ(g.res, 64);
  for (double x : g.values) {
    if (!std::isnan(x)) EXPECT_NEAR(x, -2.75, 1e-9);
  }
}

// Property: IDW weights are convex, so every grid value lies within the
// range of the sensor values.
TEST(Interpolate, ValuesAreBoundedBySensorRange) {
  nn::Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(2, 30));
    const auto m = random_montage(n, rng);
    const auto v = random_values(n, rng);
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const auto g = interpolate_scalp(v, m, 33);
    const auto [glo, ghi] = g.range();
    EXPECT_GE(glo, *lo - 1e-12);
    EXPECT_LE(ghi, *hi + 1e-12);
  }
}

// Property: permuting sensors together with their values leaves the field
// unchanged.
TEST(Interpolate, PermutationEquivariance) {
  nn::Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(3, 20));
    const auto m = random_montage(n, rng);
    const auto v = random_values(n, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) {
      std::swap(perm[i], perm[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
    }
    std::vector<Montage::Entry> pe;
    std::vector<double> pv;
    for (auto k : perm) {
      pe.push_back(m[k]);
      pv.push_back(v[k]);
    }
    const auto a = interpolate_scalp(v, m, 17);
    const auto b = interpolate_scalp(pv, Montage(pe), 17);
    for (std::size_t k = 0; k < a.values.size(); ++k) {
      if (std::isnan(a.values[k])) {
        EXPECT_TRUE(std::isnan(b.values[k]));
      } else {
        EXPECT_NEAR(a.values[k], b.values[k], 1e-12 * (1.0 + std::abs(a.values[k])));
      }
    }
  }
}

struct ComparisonFixture : ::testing::Test {
  Montage eeg = Montage::load(kMontages / "eeg63.csv");
  nn::Rng rng{11};
  Tensor train = testing::random_tensor({63, 250}, rng);
  Tensor test = testing::random_tensor({63, 250}, rng);
  Tensor gen = testing::random_tensor({63, 250}, rng);
};

TEST_F(ComparisonFixture, FourRowsOfTenFrames) {
  const auto fig = render_comparison(train, test, gen, eeg, 100.0, 250.0, {32, 0.0, "uV", "x"});
  for (const auto& row : fig.rows) {
    ASSERT_EQ(row.frames.size(), 10u);
    for (std::size_t k = 0; k < 10; ++k) {
      EXPECT_EQ(row.frames[k].start_ms, 100.0 * k);
      EXPECT_EQ(row.frames[k].end_ms, 100.0 * (k + 1));
    }
  }
  // Difference row is train minus test.
  const auto expect = window_average(train, 100.0, 250.0);
  const auto sub = window_average(test, 100.0, 250.0);
  for (std::size_t c = 0; c < 63; ++c) {
    EXPECT_NEAR(fig.rows[3].frames[4].channel_values[c], expect[4][c] - sub[4][c], 1e-12);
  }
  for (std::size_t r = 0; r < 4; ++r) EXPECT_GT(fig.scales[r], 0.0);
}

TEST_F(ComparisonFixture, IdenticalInputsGiveZeroDifference) {
  const auto fig = render_comparison(train, train, gen, eeg, 100.0, 250.0, {24});
  for (const auto& f : fig.rows[3].frames) {
    for (double v : f.grid.values) {
      if (!std::isnan(v)) EXPECT_EQ(v, 0.0);
    }
  }
  EXPECT_EQ(fig.scales[3], 0.0);
}

TEST_F(ComparisonFixture, DifferenceIsAntisymmetric) {
  const auto ab = render_comparison(train, test, gen, eeg, 100.0, 250.0, {16});
  const auto ba = render_comparison(test, train, gen, eeg, 100.0, 250.0, {16});
  for (std::size_t k = 0; k < ab.rows[3].frames.size(); ++k) {
    const auto& a = ab.rows[3].frames[k].grid.values;
    const auto& b = ba.rows[3].frames[k].grid.values;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!std::isnan(a[i])) EXPECT_NEAR(a[i], -b[i], 1e-12);
    }
  }
}

TEST_F(ComparisonFixture, OnsetShiftsWindowLabels) {
  const auto fig = render_comparison(train, test, gen, eeg, 100.0, 250.0, {8, 200.0});
  EXPECT_EQ(fig.rows[0].frames[0].start_ms, -200.0);
  EXPECT_EQ(fig.rows[0].frames[2].start_ms, 0.0);
}

TEST_F(ComparisonFixture, ShapeMismatchIsDataError) {
  EXPECT_THROW(render_comparison(train, Tensor({63, 200}), gen, eeg, 100.0, 250.0), DataError);
  EXPECT_THROW(render_comparison(Tensor({8, 250}), Tensor({8, 250}), Tensor({8, 250}), eeg, 100.0,
                                 250.0),
               ShapeError);
}

TEST(Color, DivergingMap) {
  const auto white = diverging_color(0.0);
  EXPECT_EQ(white.r, white.g);
  EXPECT_GT(diverging_color(1.0).r, diverging_color(1.0).b);
  EXPECT_LT(diverging_color(-1.0).r, diverging_color(-1.0).b);
  const auto clamp = diverging_color(5.0);
  const auto top = diverging_color(1.0);
  EXPECT_EQ(clamp.r, top.r);
}

TEST_F(ComparisonFixture, WritesPngAndSidecar) {
  TempDir dir("topo");
  const auto fig = render_comparison(train, test, gen, eeg, 100.0, 250.0, {16, 0.0, "uV", "s1"});
  write_figure(fig, dir / "eeg_sub-01_topo.png", 2);
  const auto img = read_png(dir / "eeg_sub-01_topo.png");
  const auto ref = rasterize(fig, 2);
  EXPECT_EQ(img.width, ref.width);
  EXPECT_EQ(img.height, ref.height);
  EXPECT_EQ(img.pixels, ref.pixels);
  const std::string bytes = testing::slurp(dir / "eeg_sub-01_topo.png");
  EXPECT_NE(bytes.find("scale.difference"), std::string::npos);
  EXPECT_NE(bytes.find("tEXt"), std::string::npos);
  auto j = nlohmann::json::parse(testing::slurp(dir / "eeg_sub-01_topo.json"));
  EXPECT_EQ(j["units"], "uV");
  ASSERT_EQ(j["rows"].size(), 4u);
  EXPECT_EQ(j["rows"][3]["name"], "difference");
  EXPECT_EQ(j["rows"][0]["windows_ms"].size(), 10u);
}

TEST(Raster, FlatFieldTilesAreUniform) {
  auto m = Montage::parse("a,-0.5,0\nb,0.5,0\nc,0,0.5\n");
  const Tensor flat({3, 10}, 2.0);
  const auto fig = render_comparison(flat, flat, flat, m, 20.0, 250.0, {9});
  const auto img = rasterize(fig, 1);
  // Grid centre of the first train tile maps to +1 on the colour scale.
  const auto top = diverging_color(1.0);
  const auto px = img.get(8 + 4, 8 + 4);
  EXPECT_EQ(px.r, top.r);
  EXPECT_EQ(px.g, top.g);
  EXPECT_EQ(px.b, top.b);
}

}  // namespace
}  // namespace neurodiff::topo
