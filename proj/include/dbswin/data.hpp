#pragma once

// Rasters, synthetic occluded-road scenes, PGM I/O, tiling and the 8:1:1 split.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dbswin/rng.hpp"
#include "dbswin/tensor.hpp"

namespace dbswin::data {

// 8-bit planar raster: pixels[(c * height + row) * width + col].
struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  Raster() = default;
  Raster(std::size_t w, std::size_t h, std::size_t c = 1, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  std::uint8_t& at(std::size_t c, std::size_t row, std::size_t col) {
    return pixels[(c * height + row) * width + col];
  }
  std::uint8_t at(std::size_t c, std::size_t row, std::size_t col) const {
    return pixels[(c * height + row) * width + col];
  }
  bool operator==(const Raster&) const = default;
};

// image: 1 or 3 channels; mask: 1 channel of {0, 1} with the same extent.
struct Sample {
  Raster image;
  Raster mask;
};

void validate_sample(const Sample& sample);

struct SyntheticRoadConfig {
  std::size_t size = 64;
  std::size_t channels = 1;
  std::size_t min_roads = 1, max_roads = 3;
  double min_width = 2.0, max_width = 5.0;
  std::size_t min_occluders = 2, max_occluders = 5;
  double min_radius = 3.0, max_radius = 7.0;
  // Bright road-coloured blocks that are not road.
  std::size_t min_distractors = 0, max_distractors = 2;
  double noise_std = 8.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Roads are polylines crossing the scene between opposite borders, rasterized
// into the mask; occluder disks overwrite image pixels only.
Sample generate_synthetic(const SyntheticRoadConfig& cfg);

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary "P5" PGM, maxval <= 255.
Raster parse_pgm(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_pgm(const Raster& raster);
Raster load_pgm(const std::filesystem::path& path);
void save_pgm(const Raster& raster, const std::filesystem::path& path);

// Masks are stored as 0/255 and binarized at 128 on load.
Raster load_mask(const std::filesystem::path& path);
void save_mask(const Raster& mask, const std::filesystem::path& path);

// A ".plan" file lists one PGM plane per line; anything else is read as a single PGM.
Raster load_image(const std::filesystem::path& path);
// Multi-channel rasters are written as `<stem>.c<i>.pgm` planes plus the .plan file at `path`.
void save_image(const Raster& raster, const std::filesystem::path& path);

struct Tile {
  std::size_t row = 0;
  std::size_t col = 0;
  Raster raster;
};

// Row-major tile origins; the last row/column is clamped to the border.
std::vector<std::pair<std::size_t, std::size_t>> tile_origins(std::size_t height,
                                                              std::size_t width,
                                                              std::size_t tile_size,
                                                              std::size_t stride);
std::vector<Tile> tile(const Raster& image, std::size_t tile_size, std::size_t stride);

template <typename T>
struct Split {
  std::vector<T> train;
  std::vector<T> val;
  std::vector<T> test;
};

// Seeded shuffle into floor(0.8 n) / floor(0.1 n) / remainder; n >= 10.
std::vector<std::size_t> split_order(std::size_t n, std::uint64_t seed);

template <typename T>
Split<T> split_811(const std::vector<T>& samples, std::uint64_t seed) {
  const std::size_t n = samples.size();
  const auto order = split_order(n, seed);
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_val = n / 10;
  Split<T> out;
  for (std::size_t i = 0; i < n; ++i) {
    const T& s = samples[order[i]];
    if (i < n_train) {
      out.train.push_back(s);
    } else if (i < n_train + n_val) {
      out.val.push_back(s);
    } else {
      out.test.push_back(s);
    }
  }
  return out;
}

struct ManifestEntry {
  std::string image_path;
  std::string mask_path;
  bool operator==(const ManifestEntry&) const = default;
};

// Tab-separated `image<TAB>mask` lines; relative paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);
Sample load_sample(const ManifestEntry& entry);
std::vector<Sample> load_dataset(const std::filesystem::path& manifest);

// Writes `count` synthetic samples (seeds seed, seed+1, ...) plus manifest.tsv into dir.
std::vector<ManifestEntry> write_synthetic_dataset(const std::filesystem::path& dir,
                                                   std::size_t count,
                                                   const SyntheticRoadConfig& base);

// image -> [C, H, W] with values (v / 255 - 0.5) / 0.5.
Tensor image_to_tensor(const Raster& image);
// mask -> [1, H, W] of {0, 1}.
Tensor mask_to_tensor(const Raster& mask);

// FNV-1a over the raw bytes of every sample, in order.
std::uint64_t dataset_hash(const std::vector<Sample>& samples);

}  // namespace dbswin::data
