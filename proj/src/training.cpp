#include "dbswin/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace dbswin::training {

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw std::invalid_argument("lr0 must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (decay_every == 0) throw std::invalid_argument("decay_every must be positive");
  if (!(decay_factor > 0.0 && decay_factor < 1.0)) {
    throw std::invalid_argument("decay_factor must be in (0, 1)");
  }
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& mask) {
  if (logits.shape() != mask.shape()) {
    throw ShapeError("bce_with_logits: logits " + shape_str(logits.shape()) + " vs mask " +
                     shape_str(mask.shape()));
  }
  const auto x = logits.data();
  const auto y = mask.data();
  const double inv_n = 1.0 / static_cast<double>(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (y[i] != 0.0 && y[i] != 1.0) {
      throw std::invalid_argument("bce_with_logits: mask value " + std::to_string(y[i]) +
                                  " at index " + std::to_string(i) + " is not 0 or 1");
    }
    total += std::max(x[i], 0.0) - x[i] * y[i] + std::log1p(std::exp(-std::abs(x[i])));
  }
  Tensor res = make_result({}, {total * inv_n}, {logits});
  record_op("bce", {logits}, res, [xi = logits.impl(), yi = mask.impl(), ri = res.impl(), inv_n] {
    auto gx = xi->ensure_grad();
    const double g = ri->grad[0] * inv_n;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = xi->data[i];
      const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      gx[i] += g * (s - yi->data[i]);
    }
  });
  return res;
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  const std::size_t k = epoch / cfg.decay_every;
  const double inv = 1.0 / cfg.decay_factor;
  double div = 1.0;
  for (std::size_t i = 0; i < k; ++i) div *= inv;
  return cfg.lr0 / div;
}

void sgd_step(std::span<double> param, std::span<const double> grad, std::span<double> buf,
              double lr, double momentum, double weight_decay) {
  if (param.size() != grad.size() || param.size() != buf.size()) {
    throw ShapeError("sgd_step: param/grad/buffer sizes " + std::to_string(param.size()) + "/" +
                     std::to_string(grad.size()) + "/" + std::to_string(buf.size()));
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + weight_decay * param[i];
    buf[i] = momentum * buf[i] + g;
    param[i] -= lr * buf[i];
  }
}

void sgd_step(ParamList& params, std::vector<std::vector<double>>& buffers, double lr,
              double momentum, double weight_decay) {
  if (buffers.size() != params.size()) throw ShapeError("sgd_step: one buffer per parameter");
  std::vector<double> zeros;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = params[p].tensor;
    std::span<const double> grad = t.grad();
    if (!t.has_grad()) {
      zeros.assign(t.numel(), 0.0);
      grad = zeros;
    }
    sgd_step(t.mutable_data(), grad, buffers[p], lr, momentum,
             params[p].decay ? weight_decay : 0.0);
  }
}

std::string log_row(const EpochLog& e) {
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.17g,%.6f,%.6f,%.6f,%.6f", e.epoch, e.lr, e.train_loss,
                e.val.precision, e.val.recall, e.val.f1, e.val.iou);
  return buf;
}

metrics::ConfusionCounts evaluate(const model::Model& model,
                                  const std::vector<data::Sample>& samples, double threshold) {
  metrics::ConfusionCounts total;
  for (const auto& s : samples) {
    const Tensor logits = model.forward(data::image_to_tensor(s.image));
    total += metrics::confusion(logits, data::mask_to_tensor(s.mask), threshold);
  }
  return total;
}

Trainer::Trainer(model::Model& model, TrainConfig cfg)
    : model_(model), cfg_(std::move(cfg)), rng_(cfg_.seed) {
  cfg_.validate();
  for (const auto& p : model_.params()) momentum_.emplace_back(p.tensor.numel(), 0.0);
}

double Trainer::step(const std::vector<const data::Sample*>& batch, double lr) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  Tape tape;
  double value = 0.0;
  {
    TapeScope scope(tape);
    Tensor total;
    for (const data::Sample* s : batch) {
      const Tensor logits = model_.forward(data::image_to_tensor(s->image));
      const Tensor l = bce_with_logits(logits, data::mask_to_tensor(s->mask));
      total = total.defined() ? add(total, l) : l;
    }
    const Tensor loss = scale(total, 1.0 / static_cast<double>(batch.size()));
    value = loss.item();
    if (!std::isfinite(value)) throw NumericError("non-finite loss " + std::to_string(value));
    tape.backward(loss);
  }
  sgd_step(model_.params(), momentum_, lr, cfg_.momentum, cfg_.weight_decay);
  for (auto& p : model_.params()) p.tensor.zero_grad();
  return value;
}

EpochLog Trainer::run_epoch(const std::vector<data::Sample>& train,
                            const std::vector<data::Sample>& val) {
  if (train.empty()) throw std::invalid_argument("training set is empty");
  const Rng::State shuffle_state = rng_.state();
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng_.below(i + 1)]);

  EpochLog log;
  log.epoch = epoch_;
  log.lr = lr_at(epoch_, cfg_);
  double loss_sum = 0.0;
  for (std::size_t start = 0, b = 0; start < order.size(); start += cfg_.batch_size, ++b) {
    std::vector<const data::Sample*> batch;
    const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
    for (std::size_t i = start; i < end; ++i) batch.push_back(&train[order[i]]);
    try {
      loss_sum += step(batch, log.lr) * static_cast<double>(batch.size());
    } catch (const NumericError& e) {
      std::ostringstream msg;
      msg << e.what() << " at epoch " << epoch_ << ", batch " << b << " (samples";
      for (std::size_t i = start; i < end; ++i) msg << ' ' << order[i];
      msg << "); epoch shuffle state";
      for (auto w : shuffle_state) msg << ' ' << w;
      throw NumericError(msg.str());
    }
  }
  log.train_loss = loss_sum / static_cast<double>(train.size());
  if (!val.empty()) log.val = metrics::report(evaluate(model_, val));
  ++epoch_;
  return log;
}

std::vector<EpochLog> Trainer::fit(const std::vector<data::Sample>& train,
                                   const std::vector<data::Sample>& val,
                                   const std::function<void(const EpochLog&)>& on_epoch) {
  std::vector<EpochLog> logs;
  while (epoch_ < cfg_.epochs) {
    logs.push_back(run_epoch(train, val));
    if (on_epoch) on_epoch(logs.back());
  }
  return logs;
}

void Trainer::restore(std::size_t epoch, std::vector<std::vector<double>> momentum,
                      const Rng::State& rng_state) {
  if (momentum.size() != momentum_.size()) {
    throw ShapeError("restore: expected " + std::to_string(momentum_.size()) + " momentum buffers");
  }
  for (std::size_t i = 0; i < momentum.size(); ++i) {
    if (momentum[i].size() != momentum_[i].size()) {
      throw ShapeError("restore: momentum buffer " + std::to_string(i) + " has wrong size");
    }
  }
  epoch_ = epoch;
  momentum_ = std::move(momentum);
  rng_.set_state(rng_state);
}

}  // namespace dbswin::training
