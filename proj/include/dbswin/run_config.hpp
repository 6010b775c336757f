#pragma once

// Flat `key = value` run configuration (one entry per line, `#` comments).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dbswin/data.hpp"
#include "dbswin/model.hpp"
#include "dbswin/training.hpp"

namespace dbswin {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  // model
  std::vector<std::size_t> branches{4, 8};
  std::size_t embed_dim = 16;
  std::size_t window = 4;
  std::vector<std::size_t> depths{2, 2, 2, 2};
  std::size_t decoder_depth = 2;
  std::size_t mlp_ratio = 4;
  std::size_t aff_ratio = 4;
  std::size_t in_channels = 1;
  std::uint64_t init_seed = 1;

  training::TrainConfig train;

  // data: a manifest to split 8:1:1, or synthetic scenes when `data` is empty
  std::string data;
  std::size_t synth_count = 250;
  std::size_t image_size = 64;
  std::uint64_t synth_seed = 7;
  std::size_t min_occluders = 2, max_occluders = 5;
  double min_radius = 3.0, max_radius = 7.0;
  std::uint64_t split_seed = 11;

  std::string out_dir = "run";
  double threshold = 0.5;

  model::ModelConfig model_config() const;
  data::SyntheticRoadConfig synth_config() const;
  void validate() const;

  // Canonical key/value listing; parse(to_pairs()) reproduces the config.
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
  static RunConfig from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs);
  static RunConfig parse(const std::string& text, const std::string& source = "<config>");
  static RunConfig load(const std::filesystem::path& path);
  std::string to_text() const;

  // One line per key: name, default and meaning.
  static std::string schema_help();
};

std::vector<std::size_t> parse_size_list(const std::string& text);

}  // namespace dbswin
