#include "dbswin/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "dbswin/data.hpp"
#include "dbswin/gradcheck.hpp"
#include "dbswin/metrics.hpp"
#include "dbswin/model.hpp"
#include "dbswin/run_config.hpp"
#include "dbswin/training.hpp"

namespace dbswin::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Gradient check fell outside tolerance.
class CheckFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw data::IoError(std::string(what) + " not found: " + path);
}

std::vector<data::Sample> load_entries(const std::vector<data::ManifestEntry>& entries) {
  std::vector<data::Sample> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(data::load_sample(e));
  return out;
}

struct Splits {
  data::Split<data::ManifestEntry> entries;
  data::Split<data::Sample> samples;
};

// Synthesizes or reads the dataset, splits it 8:1:1 and writes the three manifests.
Splits prepare_data(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
  fs::path manifest;
  if (cfg.data.empty()) {
    const fs::path dir = out_dir / "data";
    data::write_synthetic_dataset(dir, cfg.synth_count, cfg.synth_config());
    manifest = dir / "manifest.tsv";
    out << "synthesized " << cfg.synth_count << " scenes into " << dir.string() << "\n";
  } else {
    require_file(cfg.data, "dataset manifest");
    manifest = cfg.data;
  }
  const auto entries = data::read_manifest(manifest);
  Splits s;
  s.entries = data::split_811(entries, cfg.split_seed);
  data::write_manifest(s.entries.train, out_dir / "train.tsv");
  data::write_manifest(s.entries.val, out_dir / "val.tsv");
  data::write_manifest(s.entries.test, out_dir / "test.tsv");
  s.samples.train = load_entries(s.entries.train);
  s.samples.val = load_entries(s.entries.val);
  s.samples.test = load_entries(s.entries.test);
  for (const auto* split : {&s.samples.train, &s.samples.val, &s.samples.test}) {
    for (const auto& sample : *split) {
      if (sample.image.channels != cfg.in_channels) {
        throw data::IoError("dataset has " + std::to_string(sample.image.channels) +
                            "-channel images but in_channels = " +
                            std::to_string(cfg.in_channels));
      }
    }
  }
  return s;
}

struct LoadedModel {
  RunConfig config;
  std::unique_ptr<model::Model> model;
};

LoadedModel load_model(const std::string& checkpoint) {
  require_file(checkpoint, "checkpoint");
  const auto ckpt = training::load_checkpoint(checkpoint);
  LoadedModel m;
  try {
    m.config = RunConfig::from_pairs(ckpt.config);
  } catch (const ConfigError& e) {
    throw training::CheckpointError(checkpoint + ": bad config snapshot: " + e.what());
  }
  m.model = std::make_unique<model::Model>(m.config.model_config());
  training::load_params(*m.model, ckpt);
  return m;
}

std::string ckpt_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%04zu.ckpt", epoch);
  return buf;
}

int cmd_synth(const std::string& out_dir, std::size_t count, std::size_t size, std::uint64_t seed,
              std::size_t channels, std::ostream& out) {
  data::SyntheticRoadConfig cfg;
  cfg.size = size;
  cfg.seed = seed;
  cfg.channels = channels;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  data::write_synthetic_dataset(out_dir, count, cfg);
  out << "wrote " << count << " samples and " << (fs::path(out_dir) / "manifest.tsv").string()
      << "\n";
  return kOk;
}

int cmd_train(const std::string& config_path, const std::string& resume, std::ostream& out) {
  require_file(config_path, "config");
  const RunConfig cfg = RunConfig::load(config_path);
  const fs::path out_dir = cfg.out_dir;
  fs::create_directories(out_dir / "checkpoints");
  {
    std::ofstream f(out_dir / "config.txt");
    f << cfg.to_text();
  }
  const Splits data = prepare_data(cfg, out_dir, out);
  out << "split: " << data.samples.train.size() << " train / " << data.samples.val.size()
      << " val / " << data.samples.test.size() << " test\n";

  model::Model net(cfg.model_config());
  training::Trainer trainer(net, cfg.train);
  const fs::path log_path = out_dir / "train_log.csv";
  std::vector<std::string> kept_rows;
  if (!resume.empty()) {
    require_file(resume, "checkpoint");
    training::restore(trainer, training::load_checkpoint(resume));
    std::ifstream old(log_path);
    std::string line;
    std::getline(old, line);
    while (std::getline(old, line) && kept_rows.size() < trainer.epoch()) kept_rows.push_back(line);
    out << "resumed at epoch " << trainer.epoch() << "\n";
  }
  std::ofstream log(log_path);
  if (!log) throw data::IoError("cannot write " + log_path.string());
  log << training::kLogHeader << "\n";
  for (const auto& r : kept_rows) log << r << "\n";
  log.flush();

  out << "parameters: " << net.num_parameters() << "\n";
  const auto pairs = cfg.to_pairs();
  trainer.fit(data.samples.train, data.samples.val, [&](const training::EpochLog& e) {
    log << training::log_row(e) << "\n";
    log.flush();
    const fs::path ckpt = out_dir / "checkpoints" / ckpt_name(e.epoch + 1);
    training::save_checkpoint(training::capture(trainer, pairs), ckpt);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "epoch %zu lr %.3g loss %.5f val iou %.2f%%\n", e.epoch, e.lr,
                  e.train_loss, 100.0 * e.val.iou);
    out << buf << std::flush;
  });
  out << "log: " << log_path.string() << "\n";
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest, double threshold,
             std::ostream& out) {
  const LoadedModel m = load_model(checkpoint);
  require_file(manifest, "manifest");
  const auto samples = data::load_dataset(manifest);
  if (samples.empty()) throw data::IoError("manifest lists no samples: " + manifest);
  const double t = threshold > 0.0 ? threshold : m.config.threshold;
  const auto counts = training::evaluate(*m.model, samples, t);
  out << metrics::kCsvHeader << "\n" << metrics::csv_row(metrics::report(counts)) << "\n";
  return kOk;
}

// Tiles larger images with half-tile overlap and averages the logits.
Tensor predict_logits(const model::Model& net, const data::Raster& image, std::size_t tile_size) {
  if (tile_size == 0 || (image.height <= tile_size && image.width <= tile_size)) {
    return net.forward(data::image_to_tensor(image));
  }
  const std::size_t t = std::min({tile_size, image.height, image.width});
  std::vector<double> acc(image.height * image.width, 0.0);
  std::vector<double> hits(image.height * image.width, 0.0);
  for (const auto& tile : data::tile(image, t, std::max<std::size_t>(1, t / 2))) {
    const Tensor logits = net.forward(data::image_to_tensor(tile.raster));
    const auto d = logits.data();
    for (std::size_t r = 0; r < t; ++r) {
      for (std::size_t c = 0; c < t; ++c) {
        const std::size_t i = (tile.row + r) * image.width + tile.col + c;
        acc[i] += d[r * t + c];
        hits[i] += 1.0;
      }
    }
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] /= hits[i];
  return Tensor::from_data({1, image.height, image.width}, std::move(acc));
}

int cmd_predict(const std::string& checkpoint, const std::string& image_path,
                const std::string& out_path, std::size_t tile_size, std::ostream& out) {
  const LoadedModel m = load_model(checkpoint);
  require_file(image_path, "image");
  const data::Raster image = data::load_image(image_path);
  if (image.channels != m.config.in_channels) {
    throw data::IoError(image_path + ": expected " + std::to_string(m.config.in_channels) +
                        " channel(s)");
  }
  const Tensor logits = predict_logits(*m.model, image, tile_size);
  data::Raster mask(image.width, image.height, 1);
  const auto d = logits.data();
  for (std::size_t i = 0; i < mask.pixels.size(); ++i) {
    if (!std::isfinite(d[i])) throw training::NumericError("non-finite logit in prediction");
    mask.pixels[i] = 1.0 / (1.0 + std::exp(-d[i])) >= m.config.threshold ? 1 : 0;
  }
  data::save_mask(mask, out_path);
  out << "wrote " << out_path << " (" << image.width << "x" << image.height << ")\n";
  return kOk;
}

int cmd_gradcheck(const std::string& config_path, double tolerance, std::size_t num_params,
                  std::uint64_t seed, const std::string& fault, std::ostream& out) {
  model::ModelConfig mc = model::ModelConfig::tiny();
  gradcheck::Options opt;
  opt.num_params = num_params;
  opt.seed = seed;
  if (!config_path.empty()) {
    require_file(config_path, "config");
    const RunConfig cfg = RunConfig::load(config_path);
    mc = cfg.model_config();
    opt.image_size = cfg.image_size;
  }
  if (num_params < 20) throw UsageError("--params must be at least 20");
  set_fault_injection(fault);
  gradcheck::Result r;
  try {
    r = gradcheck::check_model(mc, opt);
  } catch (...) {
    set_fault_injection("");
    throw;
  }
  set_fault_injection("");
  for (const auto& e : r.entries) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-48s [%6zu] analytic % .6e numeric % .6e rel %.3e\n",
                  e.param.c_str(), e.index, e.analytic, e.numeric, e.rel_err);
    out << buf;
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "max rel-err %.6e (tolerance %.3e) over %zu parameters\n",
                r.max_rel_err, tolerance, r.entries.size());
  out << buf;
  if (!(r.max_rel_err <= tolerance)) throw CheckFailed("gradient check failed");
  return kOk;
}

std::string architecture_name(std::size_t branches) {
  switch (branches) {
    case 1:
      return "Single-branch";
    case 2:
      return "Dual-branch";
    default:
      return "Triple-branch";
  }
}

int cmd_ablate(const std::string& config_path, const std::string& branch_spec,
               const std::string& out_csv, std::ostream& out) {
  require_file(config_path, "config");
  const RunConfig base = RunConfig::load(config_path);
  std::vector<std::vector<std::size_t>> variants;
  std::stringstream ss(branch_spec);
  std::string item;
  while (std::getline(ss, item, '|')) {
    try {
      variants.push_back(parse_size_list(item));
    } catch (const ConfigError& e) {
      throw UsageError(std::string("--branches: ") + e.what());
    }
  }
  if (variants.empty()) throw UsageError("--branches lists no configurations");
  std::vector<RunConfig> configs;
  for (const auto& v : variants) {
    RunConfig c = base;
    c.branches = v;
    c.validate();
    configs.push_back(c);
  }

  const fs::path out_dir = base.out_dir;
  fs::create_directories(out_dir);
  const Splits data = prepare_data(base, out_dir, out);
  const std::uint64_t hash = data::dataset_hash(data.samples.train);

  std::ofstream csv(out_csv);
  if (!csv) throw data::IoError("cannot write " + out_csv);
  csv << "architecture,patch_sizes," << metrics::kCsvHeader << ",param_count,data_hash\n";
  for (const auto& c : configs) {
    std::string sizes;
    for (std::size_t i = 0; i < c.branches.size(); ++i) {
      sizes += (i ? "," : "") + std::to_string(c.branches[i]);
    }
    const auto t0 = std::chrono::steady_clock::now();
    model::Model net(c.model_config());
    training::Trainer trainer(net, c.train);
    std::ofstream log(out_dir / ("ablate_" + std::to_string(c.branches.size()) + "_log.csv"));
    log << training::kLogHeader << "\n";
    trainer.fit(data.samples.train, data.samples.val, [&](const training::EpochLog& e) {
      log << training::log_row(e) << "\n";
      log.flush();
    });
    const auto rep = metrics::report(training::evaluate(net, data.samples.test, c.threshold));
    char hex[24];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(hash));
    csv << architecture_name(c.branches.size()) << ",\"" << sizes << "\","
        << metrics::csv_row(rep) << "," << model::param_count(c.model_config()) << "," << hex
        << "\n";
    csv.flush();
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s (%s): test iou %.2f%% in %.0f s\n",
                  architecture_name(c.branches.size()).c_str(), sizes.c_str(), 100.0 * rep.iou,
                  secs);
    out << buf << std::flush;
  }
  out << "wrote " << out_csv << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual-branch Swin Transformer road segmentation", "dbswin"};
  app.require_subcommand(1);
  app.footer(RunConfig::schema_help());

  std::string out_dir, config, checkpoint, data_path, image, out_path, resume, fault;
  std::string branches = "4|4,8|4,8,12";
  std::size_t count = 10, size = 64, channels = 1, tile_size = 0, num_params = 24;
  std::uint64_t seed = 0, gc_seed = 3;
  double tolerance = 1e-3, threshold = 0.0;

  auto* synth = app.add_subcommand("synth", "generate synthetic road scenes and a manifest");
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--count", count, "number of scenes")->capture_default_str();
  synth->add_option("--size", size, "scene side in pixels")->capture_default_str();
  synth->add_option("--seed", seed, "seed of the first scene")->capture_default_str();
  synth->add_option("--channels", channels, "1 or 3")->capture_default_str()->check(
      CLI::IsMember({1, 3}));

  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config, "run config file")->required();
  train->add_option("--resume", resume, "checkpoint to continue from");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--data", data_path, "manifest file")->required();
  eval->add_option("--threshold", threshold, "override the sigmoid threshold");

  auto* predict = app.add_subcommand("predict", "write a 0/255 road mask for one image");
  predict->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  predict->add_option("--image", image, "input PGM or .plan")->required();
  predict->add_option("--out", out_path, "output mask PGM")->required();
  predict->add_option("--tile", tile_size, "tile side for large images (0 = whole image)")
      ->capture_default_str();

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of model gradients");
  grad->add_option("--config", config, "run config (default: pinned tiny model)");
  grad->add_option("--tolerance", tolerance, "maximum relative error")->capture_default_str();
  grad->add_option("--params", num_params, "sampled parameter elements")->capture_default_str();
  grad->add_option("--seed", gc_seed, "sampling seed")->capture_default_str();
  grad->add_option("--fault-inject", fault)->group("");

  auto* ablate = app.add_subcommand("ablate", "train and test several branch configurations");
  ablate->add_option("--config", config, "run config file")->required();
  ablate->add_option("--branches", branches, "configurations, e.g. \"4|4,8|4,8,12\"")
      ->capture_default_str();
  ablate->add_option("--out", out_path, "output CSV")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(out_dir, count, size, seed, channels, out);
    if (train->parsed()) return cmd_train(config, resume, out);
    if (eval->parsed()) return cmd_eval(checkpoint, data_path, threshold, out);
    if (predict->parsed()) return cmd_predict(checkpoint, image, out_path, tile_size, out);
    if (grad->parsed()) return cmd_gradcheck(config, tolerance, num_params, gc_seed, fault, out);
    if (ablate->parsed()) return cmd_ablate(config, branches, out_path, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const training::NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumericFailure;
  } catch (const CheckFailed& e) {
    err << e.what() << "\n";
    return kNumericFailure;
  } catch (const ContractError& e) {
    err << "invalid configuration: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace dbswin::cli
