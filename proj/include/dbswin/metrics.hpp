#pragma once

// Pixel confusion counts and precision / recall / F1 / IoU.

#include <cstdint>
#include <string>

#include "dbswin/data.hpp"
#include "dbswin/tensor.hpp"

namespace dbswin::metrics {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }
  bool operator==(const ConfusionCounts&) const = default;
};

// A pixel is predicted positive when sigmoid(logit) >= threshold.
ConfusionCounts confusion(const Tensor& logits, const Tensor& mask, double threshold = 0.5);
// Binary prediction raster against a binary mask.
ConfusionCounts confusion(const data::Raster& pred, const data::Raster& mask);

// When tp = fp = fn = 0 every metric is 1; any other zero denominator gives 0.
double precision(const ConfusionCounts& c);
double recall(const ConfusionCounts& c);
double f1(const ConfusionCounts& c);
double iou(const ConfusionCounts& c);

struct Report {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double iou = 0;
};

Report report(const ConfusionCounts& c);

inline constexpr const char* kCsvHeader = "precision,recall,f1,iou";
// Percentages with two decimals, in header order.
std::string csv_row(const Report& r);

}  // namespace dbswin::metrics
