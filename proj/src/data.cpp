#include "dbswin/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace dbswin::data {

namespace fs = std::filesystem;

namespace {

struct Point {
  double x;
  double y;
};

double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x;
  const double vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx);
  const double dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// Per-channel tint of each scene element, used for 3-channel scenes.
enum class Surface { kGround, kRoad, kBuilding, kTree };

std::array<double, 3> tint(Surface s) {
  switch (s) {
    case Surface::kGround:
      return {0.85, 1.05, 0.80};
    case Surface::kRoad:
      return {1.0, 1.0, 1.0};
    case Surface::kBuilding:
      return {1.08, 0.95, 0.90};
    case Surface::kTree:
      return {0.70, 1.20, 0.65};
  }
  return {1.0, 1.0, 1.0};
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path resolve(const fs::path& base_dir, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

}  // namespace

void validate_sample(const Sample& s) {
  if (s.image.width != s.mask.width || s.image.height != s.mask.height) {
    throw std::invalid_argument("image and mask extents differ");
  }
  if (s.mask.channels != 1) throw std::invalid_argument("mask must have one channel");
  for (std::uint8_t v : s.mask.pixels) {
    if (v > 1) throw std::invalid_argument("mask values must be 0 or 1");
  }
}

void SyntheticRoadConfig::validate() const {
  if (channels != 1 && channels != 3) throw std::invalid_argument("channels must be 1 or 3");
  if (!(min_width >= 1.0) || max_width < min_width) {
    throw std::invalid_argument("road width range must satisfy 1 <= min <= max");
  }
  if (max_roads < min_roads || max_occluders < min_occluders ||
      max_distractors < min_distractors || max_radius < min_radius || min_radius < 0.0) {
    throw std::invalid_argument("empty synthetic range");
  }
  if (noise_std < 0.0) throw std::invalid_argument("noise std must be >= 0");
  if (static_cast<double>(size) < 4.0 * max_width || size < 8) {
    throw std::invalid_argument("size " + std::to_string(size) + " too small for road width " +
                                std::to_string(max_width));
  }
}

Sample generate_synthetic(const SyntheticRoadConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t n = cfg.size;
  const double sz = static_cast<double>(n);

  std::vector<double> gray(n * n);
  std::vector<Surface> surface(n * n, Surface::kGround);

  // Ground: base level, two low-frequency undulations, later pixel noise.
  const double base = rng.uniform(70.0, 120.0);
  std::array<double, 6> wave{};
  for (std::size_t i = 0; i < 2; ++i) {
    wave[3 * i] = rng.uniform(0.05, 0.25);
    wave[3 * i + 1] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    wave[3 * i + 2] = rng.uniform(5.0, 15.0);
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double x = static_cast<double>(c);
      const double y = static_cast<double>(r);
      gray[r * n + c] = base + wave[2] * std::sin(wave[0] * x + wave[1]) +
                        wave[5] * std::sin(wave[3] * y + wave[4]);
    }
  }

  Raster mask(n, n, 1, 0);
  const double road_level = std::min(245.0, base + rng.uniform(50.0, 90.0));
  const auto num_roads = static_cast<std::size_t>(
      rng.range(static_cast<std::int64_t>(cfg.min_roads), static_cast<std::int64_t>(cfg.max_roads)));
  for (std::size_t k = 0; k < num_roads; ++k) {
    const bool horizontal = rng.uniform() < 0.5;
    const double width = rng.uniform(cfg.min_width, cfg.max_width);
    const double a = rng.uniform(0.1 * sz, 0.9 * sz);
    const double b = rng.uniform(0.1 * sz, 0.9 * sz);
    const double mid_along = rng.uniform(0.3 * sz, 0.7 * sz);
    const double mid_across = rng.uniform(0.1 * sz, 0.9 * sz);
    std::array<Point, 3> pts = horizontal ? std::array<Point, 3>{Point{-2.0, a},
                                                                 Point{mid_along, mid_across},
                                                                 Point{sz + 2.0, b}}
                                          : std::array<Point, 3>{Point{a, -2.0},
                                                                 Point{mid_across, mid_along},
                                                                 Point{b, sz + 2.0}};
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        const Point p{static_cast<double>(c) + 0.5, static_cast<double>(r) + 0.5};
        const double d =
            std::min(segment_distance(p, pts[0], pts[1]), segment_distance(p, pts[1], pts[2]));
        if (d <= 0.5 * width) {
          mask.at(0, r, c) = 1;
          gray[r * n + c] = road_level;
          surface[r * n + c] = Surface::kRoad;
        }
      }
    }
  }

  // Distractors sit on background only, so the mask stays exact.
  const auto num_distractors = static_cast<std::size_t>(rng.range(
      static_cast<std::int64_t>(cfg.min_distractors), static_cast<std::int64_t>(cfg.max_distractors)));
  for (std::size_t k = 0; k < num_distractors; ++k) {
    const auto bw = static_cast<std::size_t>(rng.range(4, 10));
    const auto bh = static_cast<std::size_t>(rng.range(4, 10));
    const auto r0 = static_cast<std::size_t>(rng.below(n - bh));
    const auto c0 = static_cast<std::size_t>(rng.below(n - bw));
    const double level = road_level + rng.uniform(-10.0, 10.0);
    for (std::size_t r = r0; r < r0 + bh; ++r) {
      for (std::size_t c = c0; c < c0 + bw; ++c) {
        if (mask.at(0, r, c) == 0) {
          gray[r * n + c] = level;
          surface[r * n + c] = Surface::kBuilding;
        }
      }
    }
  }

  // Occluders hide road pixels in the image; most are centred on a road.
  std::vector<std::size_t> road_pixels;
  for (std::size_t i = 0; i < n * n; ++i) {
    if (mask.pixels[i]) road_pixels.push_back(i);
  }
  const auto num_occluders = static_cast<std::size_t>(rng.range(
      static_cast<std::int64_t>(cfg.min_occluders), static_cast<std::int64_t>(cfg.max_occluders)));
  for (std::size_t k = 0; k < num_occluders; ++k) {
    double cx;
    double cy;
    if (!road_pixels.empty() && rng.uniform() < 0.75) {
      const std::size_t pix = road_pixels[rng.below(road_pixels.size())];
      cx = static_cast<double>(pix % n) + 0.5;
      cy = static_cast<double>(pix / n) + 0.5;
    } else {
      cx = rng.uniform(0.0, sz);
      cy = rng.uniform(0.0, sz);
    }
    const double radius = rng.uniform(cfg.min_radius, cfg.max_radius);
    const double level = rng.uniform(25.0, 55.0);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        const double dx = static_cast<double>(c) + 0.5 - cx;
        const double dy = static_cast<double>(r) + 0.5 - cy;
        if (dx * dx + dy * dy <= radius * radius) {
          gray[r * n + c] = level;
          surface[r * n + c] = Surface::kTree;
        }
      }
    }
  }

  Sample s;
  s.mask = std::move(mask);
  s.image = Raster(n, n, cfg.channels, 0);
  for (std::size_t i = 0; i < n * n; ++i) {
    const auto t = tint(surface[i]);
    for (std::size_t ch = 0; ch < cfg.channels; ++ch) {
      const double noise = cfg.noise_std > 0.0 ? cfg.noise_std * rng.normal() : 0.0;
      const double v = (cfg.channels == 3 ? gray[i] * t[ch] : gray[i]) + noise;
      s.image.pixels[ch * n * n + i] = to_byte(v);
    }
  }
  return s;
}

Raster parse_pgm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  if (bytes.size() < 2 || bytes[0] != 'P') throw ParseError("not a PGM file", 0);
  if (bytes[1] != '5') {
    throw ParseError(std::string("unsupported PGM variant P") + static_cast<char>(bytes[1]) +
                         " (only binary P5 is supported)",
                     1);
  }
  pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_number = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    std::size_t value = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (value > (1u << 24)) throw ParseError(std::string(what) + " too large", start);
      ++pos;
    }
    if (pos == start) throw ParseError(std::string("expected ") + what, start);
    return value;
  };
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw ParseError("expected whitespace after magic", pos);
  }
  const std::size_t width = read_number("width");
  const std::size_t height = read_number("height");
  const std::size_t maxval_pos = pos;
  const std::size_t maxval = read_number("maxval");
  if (width == 0 || height == 0) throw ParseError("zero image dimension", maxval_pos);
  if (maxval == 0 || maxval > 255) throw ParseError("maxval must be in 1..255", maxval_pos);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw ParseError("expected single whitespace before payload", pos);
  }
  ++pos;
  const std::size_t need = width * height;
  if (bytes.size() - pos < need) {
    throw ParseError("truncated payload: need " + std::to_string(need) + " bytes, have " +
                         std::to_string(bytes.size() - pos),
                     bytes.size());
  }
  Raster r(width, height, 1);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), need, r.pixels.begin());
  return r;
}

std::vector<std::uint8_t> encode_pgm(const Raster& raster) {
  if (raster.channels != 1) throw std::invalid_argument("PGM holds a single channel");
  const std::string header = "P5\n" + std::to_string(raster.width) + " " +
                             std::to_string(raster.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), raster.pixels.begin(), raster.pixels.end());
  return out;
}

Raster load_pgm(const fs::path& path) {
  try {
    return parse_pgm(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

void save_pgm(const Raster& raster, const fs::path& path) {
  const auto bytes = encode_pgm(raster);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Raster load_mask(const fs::path& path) {
  Raster r = load_pgm(path);
  for (auto& v : r.pixels) v = v >= 128 ? 1 : 0;
  return r;
}

void save_mask(const Raster& mask, const fs::path& path) {
  Raster out = mask;
  for (auto& v : out.pixels) v = v ? 255 : 0;
  save_pgm(out, path);
}

Raster load_image(const fs::path& path) {
  if (path.extension() != ".plan") return load_pgm(path);
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Raster> planes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    planes.push_back(load_pgm(resolve(path.parent_path(), line)));
  }
  if (planes.empty()) throw IoError(path.string() + ": plan lists no planes");
  Raster out(planes[0].width, planes[0].height, planes.size());
  for (std::size_t c = 0; c < planes.size(); ++c) {
    if (planes[c].width != out.width || planes[c].height != out.height) {
      throw IoError(path.string() + ": plane extents differ");
    }
    std::copy(planes[c].pixels.begin(), planes[c].pixels.end(),
              out.pixels.begin() + static_cast<std::ptrdiff_t>(c * out.width * out.height));
  }
  return out;
}

void save_image(const Raster& raster, const fs::path& path) {
  if (raster.channels == 1 && path.extension() != ".plan") {
    save_pgm(raster, path);
    return;
  }
  std::ofstream plan(path);
  if (!plan) throw IoError("cannot write " + path.string());
  const std::size_t plane = raster.width * raster.height;
  for (std::size_t c = 0; c < raster.channels; ++c) {
    Raster p(raster.width, raster.height, 1);
    std::copy_n(raster.pixels.begin() + static_cast<std::ptrdiff_t>(c * plane), plane,
                p.pixels.begin());
    const std::string name = path.stem().string() + ".c" + std::to_string(c) + ".pgm";
    save_pgm(p, path.parent_path() / name);
    plan << name << '\n';
  }
}

std::vector<std::pair<std::size_t, std::size_t>> tile_origins(std::size_t height,
                                                              std::size_t width,
                                                              std::size_t tile_size,
                                                              std::size_t stride) {
  if (tile_size == 0 || stride == 0 || tile_size > height || tile_size > width) {
    throw std::invalid_argument("tile size must be in 1..min(height, width) and stride positive");
  }
  auto axis = [&](std::size_t extent) {
    std::vector<std::size_t> starts;
    for (std::size_t s = 0;; s += stride) {
      if (s + tile_size >= extent) {
        starts.push_back(extent - tile_size);
        break;
      }
      starts.push_back(s);
    }
    starts.erase(std::unique(starts.begin(), starts.end()), starts.end());
    return starts;
  };
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t r : axis(height)) {
    for (std::size_t c : axis(width)) out.emplace_back(r, c);
  }
  return out;
}

std::vector<Tile> tile(const Raster& image, std::size_t tile_size, std::size_t stride) {
  std::vector<Tile> tiles;
  for (const auto& [r0, c0] : tile_origins(image.height, image.width, tile_size, stride)) {
    Tile t{r0, c0, Raster(tile_size, tile_size, image.channels)};
    for (std::size_t c = 0; c < image.channels; ++c) {
      for (std::size_t r = 0; r < tile_size; ++r) {
        for (std::size_t col = 0; col < tile_size; ++col) {
          t.raster.at(c, r, col) = image.at(c, r0 + r, c0 + col);
        }
      }
    }
    tiles.push_back(std::move(t));
  }
  return tiles;
}

std::vector<std::size_t> split_order(std::size_t n, std::uint64_t seed) {
  if (n < 10) {
    throw std::invalid_argument("8:1:1 split needs at least 10 samples, got " + std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  return order;
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw IoError(path.string() + ":" + std::to_string(lineno) +
                    ": expected `image<TAB>mask`");
    }
    out.push_back({resolve(path.parent_path(), line.substr(0, tab)).string(),
                   resolve(path.parent_path(), line.substr(tab + 1)).string()});
  }
  return out;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  const fs::path base = path.parent_path();
  for (const auto& e : entries) {
    auto rel = [&](const std::string& p) {
      const fs::path abs(p);
      if (!abs.is_absolute() || base.empty()) return p;
      return fs::relative(abs, fs::absolute(base)).string();
    };
    out << rel(e.image_path) << '\t' << rel(e.mask_path) << '\n';
  }
}

Sample load_sample(const ManifestEntry& entry) {
  Sample s{load_image(entry.image_path), load_mask(entry.mask_path)};
  try {
    validate_sample(s);
  } catch (const std::invalid_argument& e) {
    throw IoError(entry.image_path + " / " + entry.mask_path + ": " + e.what());
  }
  return s;
}

std::vector<Sample> load_dataset(const fs::path& manifest) {
  std::vector<Sample> out;
  for (const auto& e : read_manifest(manifest)) out.push_back(load_sample(e));
  return out;
}

std::vector<ManifestEntry> write_synthetic_dataset(const fs::path& dir, std::size_t count,
                                                   const SyntheticRoadConfig& base) {
  fs::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    SyntheticRoadConfig cfg = base;
    cfg.seed = base.seed + i;
    const Sample s = generate_synthetic(cfg);
    char stem[32];
    std::snprintf(stem, sizeof(stem), "sample_%05zu", i);
    const fs::path image = dir / (std::string(stem) + (s.image.channels == 1 ? ".pgm" : ".plan"));
    const fs::path mask = dir / (std::string(stem) + "_mask.pgm");
    save_image(s.image, image);
    save_mask(s.mask, mask);
    entries.push_back({image.filename().string(), mask.filename().string()});
  }
  write_manifest(entries, dir / "manifest.tsv");
  return entries;
}

Tensor image_to_tensor(const Raster& image) {
  std::vector<double> v(image.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = (static_cast<double>(image.pixels[i]) / 255.0 - 0.5) / 0.5;
  }
  return Tensor::from_data({image.channels, image.height, image.width}, std::move(v));
}

Tensor mask_to_tensor(const Raster& mask) {
  std::vector<double> v(mask.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = mask.pixels[i] ? 1.0 : 0.0;
  return Tensor::from_data({1, mask.height, mask.width}, std::move(v));
}

std::uint64_t dataset_hash(const std::vector<Sample>& samples) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const std::vector<std::uint8_t>& bytes) {
    for (std::uint8_t b : bytes) {
      h ^= b;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& s : samples) {
    feed(s.image.pixels);
    feed(s.mask.pixels);
  }
  return h;
}

}  // namespace dbswin::data
