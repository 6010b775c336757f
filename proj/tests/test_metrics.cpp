#include <gtest/gtest.h>

#include "dbswin/metrics.hpp"
#include "dbswin/rng.hpp"

using namespace dbswin;
using namespace dbswin::metrics;

namespace {

// +-50 logits for a 0/1 prediction grid.
Tensor logits_from(const std::vector<int>& pred, Shape shape) {
  std::vector<double> v;
  for (int p : pred) v.push_back(p ? 50.0 : -50.0);
  return Tensor::from_data(std::move(shape), std::move(v));
}

Tensor mask_from(const std::vector<int>& m, Shape shape) {
  return Tensor::from_data(std::move(shape), std::vector<double>(m.begin(), m.end()));
}

}  // namespace

TEST(Confusion, HandCountedTwoByTwo) {
  const auto c = confusion(logits_from({1, 1, 0, 0}, {1, 2, 2}), mask_from({1, 0, 1, 0}, {1, 2, 2}));
  EXPECT_EQ(c, (ConfusionCounts{1, 1, 1, 1}));
}

TEST(Confusion, PerfectAndAllMissed) {
  const std::vector<int> m{1, 0, 1, 1, 0, 0};
  const auto perfect = confusion(logits_from(m, {1, 2, 3}), mask_from(m, {1, 2, 3}));
  EXPECT_EQ(perfect.fp, 0u);
  EXPECT_EQ(perfect.fn, 0u);
  const auto missed = confusion(logits_from({0, 0, 0, 0}, {4}), mask_from({1, 1, 1, 1}, {4}));
  EXPECT_EQ(missed.fn, 4u);
  EXPECT_EQ(missed.total(), 4u);
}

TEST(Confusion, ThresholdAppliesToSigmoid) {
  const Tensor logits = Tensor::from_data({3}, {0.0, -1e-9, 1.0});
  const Tensor mask = Tensor::from_data({3}, {1, 1, 1});
  EXPECT_EQ(confusion(logits, mask).tp, 2u);
  EXPECT_EQ(confusion(logits, mask, 0.75).tp, 0u);
  EXPECT_EQ(confusion(logits, mask, 0.7).tp, 1u);
}

TEST(Confusion, ShapeMismatchAndNonBinaryMask) {
  EXPECT_THROW(confusion(Tensor::zeros({2, 2}), Tensor::zeros({4})), ShapeError);
  EXPECT_THROW(confusion(Tensor::zeros({2}), Tensor::from_data({2}, {0, 0.5})),
               std::invalid_argument);
}

TEST(Metrics, HandArithmetic) {
  const ConfusionCounts c{1, 1, 1, 0};
  EXPECT_DOUBLE_EQ(precision(c), 0.5);
  EXPECT_DOUBLE_EQ(recall(c), 0.5);
  EXPECT_DOUBLE_EQ(f1(c), 0.5);
  EXPECT_DOUBLE_EQ(iou(c), 1.0 / 3.0);
  const ConfusionCounts d{3, 1, 2, 10};
  EXPECT_DOUBLE_EQ(precision(d), 0.75);
  EXPECT_DOUBLE_EQ(recall(d), 0.6);
  EXPECT_DOUBLE_EQ(f1(d), 2 * 0.75 * 0.6 / 1.35);
  EXPECT_DOUBLE_EQ(iou(d), 0.5);
}

TEST(Metrics, PerfectPredictionIsOne) {
  const ConfusionCounts c{10, 0, 0, 5};
  const Report r = report(c);
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_EQ(r.recall, 1.0);
  EXPECT_EQ(r.f1, 1.0);
  EXPECT_EQ(r.iou, 1.0);
}

TEST(Metrics, ZeroDenominatorPolicy) {
  const Report empty = report({0, 0, 0, 9});
  EXPECT_EQ(empty.precision, 1.0);
  EXPECT_EQ(empty.iou, 1.0);
  EXPECT_EQ(empty.f1, 1.0);
  const ConfusionCounts no_pred{0, 0, 4, 2};
  EXPECT_EQ(precision(no_pred), 0.0);
  EXPECT_EQ(recall(no_pred), 0.0);
  EXPECT_EQ(f1(no_pred), 0.0);
  EXPECT_EQ(iou(no_pred), 0.0);
  const ConfusionCounts no_truth{0, 3, 0, 2};
  EXPECT_EQ(recall(no_truth), 0.0);
  EXPECT_EQ(iou(no_truth), 0.0);
}

TEST(Metrics, IdentitiesOverRandomCounts) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const ConfusionCounts c{1 + rng.below(1000), rng.below(1000), rng.below(1000), rng.below(1000)};
    const double j = iou(c);
    EXPECT_NEAR(f1(c), 2 * j / (1 + j), 1e-12);
    EXPECT_LE(j, f1(c) + 1e-15);
    EXPECT_LE(f1(c), 0.5 * (precision(c) + recall(c)) + 1e-15);
  }
}

TEST(Metrics, PoolingEqualsConcatenation) {
  Rng rng(2);
  std::vector<double> la(30), lb(20), ma(30), mb(20);
  for (auto* v : {&la, &lb}) for (double& x : *v) x = rng.uniform(-3, 3);
  for (auto* v : {&ma, &mb}) for (double& x : *v) x = static_cast<double>(rng.below(2));
  const auto a = confusion(Tensor::from_data({30}, la), Tensor::from_data({30}, ma));
  const auto b = confusion(Tensor::from_data({20}, lb), Tensor::from_data({20}, mb));
  std::vector<double> lc = la, mc = ma;
  lc.insert(lc.end(), lb.begin(), lb.end());
  mc.insert(mc.end(), mb.begin(), mb.end());
  const auto cat = confusion(Tensor::from_data({50}, lc), Tensor::from_data({50}, mc));
  EXPECT_EQ(a + b, cat);
  EXPECT_EQ(iou(a + b), iou(cat));
  EXPECT_EQ(f1(a + b), f1(cat));
}

TEST(Metrics, CsvRowInPercent) {
  EXPECT_EQ(csv_row(report({1, 1, 1, 0})), "50.00,50.00,50.00,33.33");
  EXPECT_EQ(std::string(kCsvHeader), "precision,recall,f1,iou");
}

TEST(Metrics, RasterConfusion) {
  data::Raster p(2, 2, 1), m(2, 2, 1);
  p.pixels = {1, 1, 0, 0};
  m.pixels = {1, 0, 1, 0};
  EXPECT_EQ(confusion(p, m), (ConfusionCounts{1, 1, 1, 1}));
}
