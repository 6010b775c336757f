#pragma once

// Loss, SGD with momentum, step learning-rate decay, the epoch loop and
// checkpoints that resume training bit for bit.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dbswin/data.hpp"
#include "dbswin/metrics.hpp"
#include "dbswin/model.hpp"
#include "dbswin/rng.hpp"
#include "dbswin/tensor.hpp"

namespace dbswin::training {

struct TrainConfig {
  double lr0 = 2e-4;
  double momentum = 0.9;
  double weight_decay = 2e-4;
  std::size_t batch_size = 4;
  std::size_t epochs = 100;
  std::size_t decay_every = 20;
  double decay_factor = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mean over elements of max(x, 0) - x y + log(1 + exp(-|x|)); mask must be {0, 1}.
Tensor bce_with_logits(const Tensor& logits, const Tensor& mask);

// lr0 * decay_factor ^ floor(epoch / decay_every)
double lr_at(std::size_t epoch, const TrainConfig& cfg);

// g = grad + weight_decay * param; buf = momentum * buf + g; param -= lr * buf.
void sgd_step(std::span<double> param, std::span<const double> grad, std::span<double> buf,
              double lr, double momentum, double weight_decay);

// Same update for every parameter; parameters flagged `decay = false` use zero
// weight decay. Parameters without a gradient count as a zero gradient.
void sgd_step(ParamList& params, std::vector<std::vector<double>>& buffers, double lr,
              double momentum, double weight_decay);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0;
  double train_loss = 0;
  metrics::Report val;
};

inline constexpr const char* kLogHeader =
    "epoch,lr,train_loss,val_precision,val_recall,val_f1,val_iou";
std::string log_row(const EpochLog& e);

// Pixel counts of the thresholded model output over every sample.
metrics::ConfusionCounts evaluate(const model::Model& model,
                                  const std::vector<data::Sample>& samples,
                                  double threshold = 0.5);

class Trainer {
 public:
  Trainer(model::Model& model, TrainConfig cfg);

  const TrainConfig& config() const { return cfg_; }
  model::Model& model() { return model_; }
  const model::Model& model() const { return model_; }
  // Number of completed epochs.
  std::size_t epoch() const { return epoch_; }
  const Rng& rng() const { return rng_; }
  const std::vector<std::vector<double>>& momentum() const { return momentum_; }

  // One forward/backward/update over `batch`; returns the batch mean loss.
  double step(const std::vector<const data::Sample*>& batch, double lr);

  // Shuffles `train` with the trainer's generator, steps through it in
  // batches, then evaluates on `val` (skipped when empty).
  EpochLog run_epoch(const std::vector<data::Sample>& train, const std::vector<data::Sample>& val);

  // Runs the remaining epochs up to cfg.epochs; `on_epoch` sees every log entry.
  std::vector<EpochLog> fit(const std::vector<data::Sample>& train,
                            const std::vector<data::Sample>& val,
                            const std::function<void(const EpochLog&)>& on_epoch = {});

  void restore(std::size_t epoch, std::vector<std::vector<double>> momentum,
               const Rng::State& rng_state);

 private:
  model::Model& model_;
  TrainConfig cfg_;
  std::size_t epoch_ = 0;
  Rng rng_;
  std::vector<std::vector<double>> momentum_;
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> data;
  bool operator==(const NamedArray&) const = default;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint64_t epoch = 0;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<NamedArray> params;
  std::vector<NamedArray> momentum;
  Rng::State rng{};
  bool operator==(const Checkpoint&) const = default;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint capture(const Trainer& trainer, std::vector<std::pair<std::string, std::string>> config);
// Copies parameters by name into `model`; every model parameter must be present with its shape.
void load_params(model::Model& model, const Checkpoint& ckpt);
// load_params plus optimizer buffers, epoch and generator state.
void restore(Trainer& trainer, const Checkpoint& ckpt);

}  // namespace dbswin::training
