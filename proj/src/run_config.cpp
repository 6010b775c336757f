#include "dbswin/run_config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace dbswin {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty() || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a finite number, got '" + v + "'");
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Key {
  const char* name;
  const char* help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define DBSWIN_SIZE_KEY(field, help)                                                       \
  Key {                                                                                    \
    #field, help, [](const RunConfig& c) { return std::to_string(c.field); },              \
        [](RunConfig& c, const std::string& v) { c.field = to_u64(#field, v); }             \
  }
#define DBSWIN_REAL_KEY(field, help)                                                       \
  Key {                                                                                    \
    #field, help, [](const RunConfig& c) { return fmt_double(c.field); },                  \
        [](RunConfig& c, const std::string& v) { c.field = to_double(#field, v); }         \
  }
#define DBSWIN_TRAIN_SIZE_KEY(field, help)                                                 \
  Key {                                                                                    \
    #field, help, [](const RunConfig& c) { return std::to_string(c.train.field); },        \
        [](RunConfig& c, const std::string& v) { c.train.field = to_u64(#field, v); }      \
  }
#define DBSWIN_TRAIN_REAL_KEY(field, help)                                                 \
  Key {                                                                                    \
    #field, help, [](const RunConfig& c) { return fmt_double(c.train.field); },            \
        [](RunConfig& c, const std::string& v) { c.train.field = to_double(#field, v); }   \
  }

const std::vector<Key>& schema() {
  static const std::vector<Key> keys = {
      {"branches", "comma-separated patch sizes, anchor first (1 to 3 entries)",
       [](const RunConfig& c) { return join(c.branches); },
       [](RunConfig& c, const std::string& v) { c.branches = parse_size_list(v); }},
      DBSWIN_SIZE_KEY(embed_dim, "embedding channels C of every branch"),
      DBSWIN_SIZE_KEY(window, "attention window side M"),
      {"depths", "Swin blocks in each of the four encoder stages",
       [](const RunConfig& c) { return join(c.depths); },
       [](RunConfig& c, const std::string& v) { c.depths = parse_size_list(v); }},
      DBSWIN_SIZE_KEY(decoder_depth, "Swin blocks per decoder stage"),
      DBSWIN_SIZE_KEY(mlp_ratio, "MLP hidden width as a multiple of C"),
      DBSWIN_SIZE_KEY(aff_ratio, "channel reduction inside the fusion attention"),
      DBSWIN_SIZE_KEY(in_channels, "image channels (1 or 3)"),
      DBSWIN_SIZE_KEY(init_seed, "parameter initialization seed"),
      DBSWIN_TRAIN_REAL_KEY(lr0, "initial learning rate"),
      DBSWIN_TRAIN_REAL_KEY(momentum, "SGD momentum"),
      DBSWIN_TRAIN_REAL_KEY(weight_decay, "L2 weight decay"),
      DBSWIN_TRAIN_SIZE_KEY(batch_size, "samples per optimizer step"),
      DBSWIN_TRAIN_SIZE_KEY(epochs, "training epochs"),
      DBSWIN_TRAIN_SIZE_KEY(decay_every, "epochs between learning-rate decays"),
      DBSWIN_TRAIN_REAL_KEY(decay_factor, "learning-rate multiplier at each decay"),
      DBSWIN_TRAIN_SIZE_KEY(seed, "shuffle seed"),
      {"data", "dataset manifest to split 8:1:1; empty generates synthetic scenes",
       [](const RunConfig& c) { return c.data; },
       [](RunConfig& c, const std::string& v) { c.data = v; }},
      DBSWIN_SIZE_KEY(synth_count, "synthetic scenes when data is empty"),
      DBSWIN_SIZE_KEY(image_size, "synthetic scene side in pixels"),
      DBSWIN_SIZE_KEY(synth_seed, "seed of the first synthetic scene"),
      DBSWIN_SIZE_KEY(min_occluders, "fewest occluder disks per synthetic scene"),
      DBSWIN_SIZE_KEY(max_occluders, "most occluder disks per synthetic scene"),
      DBSWIN_REAL_KEY(min_radius, "smallest occluder radius in pixels"),
      DBSWIN_REAL_KEY(max_radius, "largest occluder radius in pixels"),
      DBSWIN_SIZE_KEY(split_seed, "8:1:1 split shuffle seed"),
      {"out_dir", "directory for manifests, checkpoints and logs",
       [](const RunConfig& c) { return c.out_dir; },
       [](RunConfig& c, const std::string& v) { c.out_dir = v; }},
      {"threshold", "sigmoid threshold for a road pixel",
       [](const RunConfig& c) { return fmt_double(c.threshold); },
       [](RunConfig& c, const std::string& v) { c.threshold = to_double("threshold", v); }},
  };
  return keys;
}

#undef DBSWIN_SIZE_KEY
#undef DBSWIN_REAL_KEY
#undef DBSWIN_TRAIN_SIZE_KEY
#undef DBSWIN_TRAIN_REAL_KEY

}  // namespace

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(static_cast<std::size_t>(to_u64("list", trim(item))));
  }
  if (out.empty()) throw ConfigError("empty list '" + text + "'");
  return out;
}

model::ModelConfig RunConfig::model_config() const {
  model::ModelConfig m = model::ModelConfig::with_branches(branches, embed_dim, window);
  for (auto& b : m.branches) {
    for (std::size_t s = 0; s < model::kStages; ++s) b.depths[s] = depths.at(s);
  }
  m.in_channels = in_channels;
  m.decoder_depth = decoder_depth;
  m.mlp_ratio = mlp_ratio;
  m.aff_ratio = aff_ratio;
  m.init_seed = init_seed;
  return m;
}

data::SyntheticRoadConfig RunConfig::synth_config() const {
  data::SyntheticRoadConfig s;
  s.size = image_size;
  s.channels = in_channels;
  s.seed = synth_seed;
  s.min_occluders = min_occluders;
  s.max_occluders = max_occluders;
  s.min_radius = min_radius;
  s.max_radius = max_radius;
  return s;
}

void RunConfig::validate() const {
  if (depths.size() != model::kStages) throw ConfigError("depths needs exactly 4 entries");
  for (auto d : depths) {
    if (d == 0 || d % 2 != 0) throw ConfigError("depths entries must be positive and even");
  }
  if (decoder_depth == 0 || decoder_depth % 2 != 0) {
    throw ConfigError("decoder_depth must be positive and even");
  }
  if (mlp_ratio == 0 || aff_ratio == 0) throw ConfigError("ratios must be positive");
  if (in_channels != 1 && in_channels != 3) throw ConfigError("in_channels must be 1 or 3");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must be in (0, 1)");
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
  try {
    model_config().validate();
    train.validate();
    if (data.empty()) synth_config().validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

std::vector<std::pair<std::string, std::string>> RunConfig::to_pairs() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : schema()) out.emplace_back(k.name, k.get(*this));
  return out;
}

RunConfig RunConfig::from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
  RunConfig c;
  std::set<std::string> seen;
  for (const auto& [name, value] : pairs) {
    const Key* key = nullptr;
    for (const auto& k : schema()) {
      if (name == k.name) key = &k;
    }
    if (key == nullptr) throw ConfigError("unknown key '" + name + "'");
    if (!seen.insert(name).second) throw ConfigError("duplicate key '" + name + "'");
    key->set(c, value);
  }
  c.validate();
  return c;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& source) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    }
    pairs.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  try {
    return from_pairs(pairs);
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data::IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : to_pairs()) out += k + " = " + v + "\n";
  return out;
}

std::string RunConfig::schema_help() {
  const RunConfig defaults;
  std::string out = "Config keys (key = value, '#' starts a comment):\n";
  for (const auto& k : schema()) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "  %-14s %-10s %s\n", k.name, k.get(defaults).c_str(), k.help);
    out += buf;
  }
  return out;
}

}  // namespace dbswin
