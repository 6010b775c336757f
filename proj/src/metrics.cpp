#include "dbswin/metrics.hpp"

#include <cmath>
#include <cstdio>

namespace dbswin::metrics {

namespace {

bool empty_agreement(const ConfusionCounts& c) { return c.tp == 0 && c.fp == 0 && c.fn == 0; }

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ConfusionCounts confusion(const Tensor& logits, const Tensor& mask, double threshold) {
  if (logits.shape() != mask.shape()) {
    throw ShapeError("confusion: logits " + shape_str(logits.shape()) + " vs mask " +
                     shape_str(mask.shape()));
  }
  ConfusionCounts c;
  const auto& x = logits.data();
  const auto& y = mask.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (y[i] != 0.0 && y[i] != 1.0) throw std::invalid_argument("confusion: mask must be binary");
    const bool pred = 1.0 / (1.0 + std::exp(-x[i])) >= threshold;
    const bool truth = y[i] == 1.0;
    if (pred && truth) {
      ++c.tp;
    } else if (pred) {
      ++c.fp;
    } else if (truth) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

ConfusionCounts confusion(const data::Raster& pred, const data::Raster& mask) {
  if (pred.width != mask.width || pred.height != mask.height || pred.channels != 1 ||
      mask.channels != 1) {
    throw ShapeError("confusion: raster extents differ");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
    const bool p = pred.pixels[i] != 0;
    const bool t = mask.pixels[i] != 0;
    c.tp += p && t;
    c.fp += p && !t;
    c.fn += !p && t;
    c.tn += !p && !t;
  }
  return c;
}

double precision(const ConfusionCounts& c) {
  return empty_agreement(c) ? 1.0 : ratio(c.tp, c.tp + c.fp);
}

double recall(const ConfusionCounts& c) {
  return empty_agreement(c) ? 1.0 : ratio(c.tp, c.tp + c.fn);
}

double f1(const ConfusionCounts& c) {
  if (empty_agreement(c)) return 1.0;
  const double p = precision(c);
  const double r = recall(c);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

double iou(const ConfusionCounts& c) {
  return empty_agreement(c) ? 1.0 : ratio(c.tp, c.tp + c.fp + c.fn);
}

Report report(const ConfusionCounts& c) { return {precision(c), recall(c), f1(c), iou(c)}; }

std::string csv_row(const Report& r) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.2f,%.2f,%.2f,%.2f", 100.0 * r.precision, 100.0 * r.recall,
                100.0 * r.f1, 100.0 * r.iou);
  return buf;
}

}  // namespace dbswin::metrics
