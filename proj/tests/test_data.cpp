#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "dbswin/data.hpp"

using namespace dbswin;
using namespace dbswin::data;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dbswin_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::size_t mask_count(const Raster& m) {
  std::size_t n = 0;
  for (auto v : m.pixels) n += v;
  return n;
}

}  // namespace

TEST(Synthetic, SameSeedIsBitwiseIdentical) {
  SyntheticRoadConfig cfg;
  cfg.seed = 99;
  const Sample a = generate_synthetic(cfg), b = generate_synthetic(cfg);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.mask, b.mask);
  cfg.seed = 100;
  EXPECT_NE(generate_synthetic(cfg).image, a.image);
}

TEST(Synthetic, ZeroRoadsGiveEmptyMask) {
  SyntheticRoadConfig cfg;
  cfg.min_roads = cfg.max_roads = 0;
  cfg.min_distractors = cfg.max_distractors = 0;
  const Sample s = generate_synthetic(cfg);
  EXPECT_EQ(mask_count(s.mask), 0u);
  EXPECT_NO_THROW(validate_sample(s));
}

TEST(Synthetic, MaskAreaBoundsOverManySeeds) {
  SyntheticRoadConfig cfg;
  const double min_len = static_cast<double>(cfg.size);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    cfg.seed = seed;
    const Sample s = generate_synthetic(cfg);
    validate_sample(s);
    const auto n = static_cast<double>(mask_count(s.mask));
    EXPECT_GE(n, cfg.min_width * min_len) << seed;
    EXPECT_LE(n, static_cast<double>(cfg.size * cfg.size) / 2.0) << seed;
  }
}

TEST(Synthetic, OccludersChangeImageNotMask) {
  SyntheticRoadConfig with, without;
  with.seed = without.seed = 5;
  without.min_occluders = without.max_occluders = 0;
  with.min_occluders = with.max_occluders = 5;
  with.noise_std = without.noise_std = 0;
  with.min_distractors = with.max_distractors = without.min_distractors = without.max_distractors = 0;
  const Sample a = generate_synthetic(with), b = generate_synthetic(without);
  EXPECT_EQ(a.mask, b.mask);
  std::size_t hidden_road = 0;
  for (std::size_t i = 0; i < a.mask.pixels.size(); ++i) {
    hidden_road += a.mask.pixels[i] && a.image.pixels[i] != b.image.pixels[i];
  }
  EXPECT_GT(hidden_road, 0u);
}

TEST(Synthetic, RejectsBadConfigs) {
  SyntheticRoadConfig cfg;
  cfg.size = 12;
  EXPECT_THROW(generate_synthetic(cfg), std::invalid_argument);
  cfg = {};
  cfg.min_width = 0.5;
  EXPECT_THROW(generate_synthetic(cfg), std::invalid_argument);
  cfg = {};
  cfg.min_roads = 3;
  cfg.max_roads = 1;
  EXPECT_THROW(generate_synthetic(cfg), std::invalid_argument);
}

TEST(Synthetic, ThreeChannelScenes) {
  SyntheticRoadConfig cfg;
  cfg.channels = 3;
  const Sample s = generate_synthetic(cfg);
  EXPECT_EQ(s.image.channels, 3u);
  EXPECT_EQ(s.image.pixels.size(), 3u * 64 * 64);
}

TEST(Pgm, MinimalFileBytes) {
  const Raster r(1, 1, 1, 0);
  const auto bytes = encode_pgm(r);
  const std::string header = "P5\n1 1\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 1);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())), header);
  EXPECT_EQ(bytes.back(), 0);
}

TEST(Pgm, RandomRoundTripThroughFile) {
  Rng rng(3);
  Raster r(13, 7, 1);
  for (auto& v : r.pixels) v = static_cast<std::uint8_t>(rng.below(256));
  const auto dir = temp_dir("pgm");
  save_pgm(r, dir / "x.pgm");
  EXPECT_EQ(load_pgm(dir / "x.pgm"), r);
  EXPECT_EQ(parse_pgm(encode_pgm(r)), r);
}

TEST(Pgm, CommentsInHeaderAreSkipped) {
  const std::string text = "P5\n# made by hand\n2 1\n255\n";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  bytes.push_back(7);
  bytes.push_back(9);
  const Raster r = parse_pgm(bytes);
  EXPECT_EQ(r.width, 2u);
  EXPECT_EQ(r.pixels, (std::vector<std::uint8_t>{7, 9}));
}

TEST(Pgm, ErrorsCarryByteOffsets) {
  const std::string ascii = "P2\n1 1\n255\n0\n";
  try {
    parse_pgm({ascii.begin(), ascii.end()});
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("P2"), std::string::npos);
    EXPECT_EQ(e.offset(), 1u);
  }
  const std::string truncated = "P5\n4 4\n255\nabc";
  try {
    parse_pgm({truncated.begin(), truncated.end()});
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
    EXPECT_EQ(e.offset(), truncated.size());
  }
  const std::string bad_width = "P5\nx 4\n255\n";
  EXPECT_THROW(parse_pgm({bad_width.begin(), bad_width.end()}), ParseError);
  const std::string big_max = "P5\n1 1\n65535\n\x01\x02";
  EXPECT_THROW(parse_pgm({big_max.begin(), big_max.end()}), ParseError);
  EXPECT_THROW(load_pgm("/nonexistent/file.pgm"), IoError);
}

TEST(Pgm, MaskStoredAs0And255) {
  Raster m(3, 1, 1);
  m.pixels = {0, 1, 1};
  const auto dir = temp_dir("mask");
  save_mask(m, dir / "m.pgm");
  EXPECT_EQ(load_pgm(dir / "m.pgm").pixels, (std::vector<std::uint8_t>{0, 255, 255}));
  EXPECT_EQ(load_mask(dir / "m.pgm"), m);
}

TEST(Pgm, ThreeChannelPlanRoundTrip) {
  SyntheticRoadConfig cfg;
  cfg.channels = 3;
  const Sample s = generate_synthetic(cfg);
  const auto dir = temp_dir("plan");
  save_image(s.image, dir / "rgb.plan");
  EXPECT_TRUE(fs::exists(dir / "rgb.c2.pgm"));
  EXPECT_EQ(load_image(dir / "rgb.plan"), s.image);
}

TEST(Tiling, ExactFitAndClampedEdges) {
  const auto one = tile_origins(64, 64, 64, 64);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0], (std::pair<std::size_t, std::size_t>{0, 0}));
  const auto four = tile_origins(100, 100, 64, 64);
  const std::vector<std::pair<std::size_t, std::size_t>> expected{{0, 0}, {0, 36}, {36, 0}, {36, 36}};
  EXPECT_EQ(four, expected);
}

TEST(Tiling, EveryPixelCoveredForRandomSizes) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t h = 1 + rng.below(150), w = 1 + rng.below(150);
    const std::size_t t = 1 + rng.below(std::min(h, w));
    const std::size_t stride = 1 + rng.below(t);
    std::vector<int> cover(h * w, 0);
    for (auto [r, c] : tile_origins(h, w, t, stride)) {
      ASSERT_LE(r + t, h);
      ASSERT_LE(c + t, w);
      for (std::size_t i = r; i < r + t; ++i)
        for (std::size_t j = c; j < c + t; ++j) ++cover[i * w + j];
    }
    for (int v : cover) ASSERT_GE(v, 1) << h << "x" << w << " t=" << t << " s=" << stride;
  }
}

TEST(Tiling, TileContentsMatchSource) {
  Raster img(5, 4, 1);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i);
  const auto tiles = tile(img, 3, 2);
  for (const auto& t : tiles) {
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(t.raster.at(0, r, c), img.at(0, t.row + r, t.col + c));
  }
  EXPECT_THROW(tile(img, 5, 1), std::invalid_argument);
}

TEST(Split, SizesForSmallCounts) {
  std::vector<int> ten(10), twenty(20);
  for (int i = 0; i < 20; ++i) {
    if (i < 10) ten[i] = i;
    twenty[i] = i;
  }
  const auto a = split_811(ten, 1);
  EXPECT_EQ(a.train.size(), 8u);
  EXPECT_EQ(a.val.size(), 1u);
  EXPECT_EQ(a.test.size(), 1u);
  const auto b = split_811(twenty, 1);
  EXPECT_EQ(b.train.size(), 16u);
  EXPECT_EQ(b.val.size(), 2u);
  EXPECT_EQ(b.test.size(), 2u);
  EXPECT_THROW(split_811(std::vector<int>(9), 1), std::invalid_argument);
}

TEST(Split, PartitionPropertyOverRandomSizes) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 10 + rng.below(300);
    std::vector<std::size_t> items(n);
    for (std::size_t i = 0; i < n; ++i) items[i] = i;
    const auto s = split_811(items, rng());
    EXPECT_EQ(s.train.size(), n * 8 / 10);
    EXPECT_EQ(s.val.size(), n / 10);
    std::set<std::size_t> all;
    for (const auto* part : {&s.train, &s.val, &s.test}) {
      for (auto v : *part) EXPECT_TRUE(all.insert(v).second) << "duplicate " << v;
    }
    EXPECT_EQ(all.size(), n);
  }
}

TEST(Split, DeterministicInSeed) {
  EXPECT_EQ(split_order(50, 7), split_order(50, 7));
  EXPECT_NE(split_order(50, 7), split_order(50, 8));
}

TEST(Manifest, SyntheticDatasetRoundTrip) {
  const auto dir = temp_dir("manifest");
  SyntheticRoadConfig cfg;
  cfg.size = 32;
  cfg.max_width = 4;
  cfg.seed = 40;
  const auto entries = write_synthetic_dataset(dir, 3, cfg);
  EXPECT_EQ(entries.size(), 3u);
  const auto read = read_manifest(dir / "manifest.tsv");
  ASSERT_EQ(read.size(), 3u);
  const auto samples = load_dataset(dir / "manifest.tsv");
  for (std::size_t i = 0; i < 3; ++i) {
    cfg.seed = 40 + i;
    const Sample s = generate_synthetic(cfg);
    EXPECT_EQ(samples[i].image, s.image);
    EXPECT_EQ(samples[i].mask, s.mask);
  }
  std::ofstream(dir / "bad.tsv") << "only_one_column\n";
  EXPECT_THROW(read_manifest(dir / "bad.tsv"), IoError);
}

TEST(Tensors, ImageNormalizationAndMask) {
  Raster img(2, 1, 1);
  img.pixels = {0, 255};
  const Tensor t = image_to_tensor(img);
  EXPECT_EQ(t.shape(), (Shape{1, 1, 2}));
  EXPECT_DOUBLE_EQ(t.at(0), -1.0);
  EXPECT_DOUBLE_EQ(t.at(1), 1.0);
  Raster m(2, 1, 1);
  m.pixels = {1, 0};
  EXPECT_DOUBLE_EQ(mask_to_tensor(m).at(0), 1.0);
}
