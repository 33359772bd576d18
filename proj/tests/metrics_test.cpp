#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "c2ir/metrics.hpp"
#include "c2ir/rng.hpp"
#include "test_util.hpp"

using namespace c2ir;

// ---- exhaustive oracles, deliberately written as plain loops ----

namespace oracle {

double auroc(const Vec& id, const Vec& ood) {
  double s = 0.0;
  for (double o : ood)
    for (double i : id) s += o > i ? 1.0 : (o == i ? 0.5 : 0.0);
  return s / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

double tnr_at_tpr(const Vec& id, const Vec& ood, double tpr) {
  Vec cands = id;
  std::sort(cands.begin(), cands.end());
  double threshold = cands.back();
  for (double cand : cands) {
    int le = 0;
    for (double v : id)
      if (v <= cand) ++le;
    if (static_cast<double>(le) / static_cast<double>(id.size()) >= tpr) {
      threshold = cand;
      break;
    }
  }
  int above = 0;
  for (double v : ood)
    if (v > threshold) ++above;
  return static_cast<double>(above) / static_cast<double>(ood.size());
}

double detection_accuracy(const Vec& id, const Vec& ood) {
  Vec pooled = id;
  pooled.insert(pooled.end(), ood.begin(), ood.end());
  double best = 0.0;
  for (double thr : pooled) {
    int id_le = 0, ood_gt = 0;
    for (double v : id)
      if (v <= thr) ++id_le;
    for (double v : ood)
      if (v > thr) ++ood_gt;
    best = std::max(best, 0.5 * (static_cast<double>(id_le) / id.size() +
                                 static_cast<double>(ood_gt) / ood.size()));
  }
  return best;
}

double aupr_in(const Vec& id, const Vec& ood) {
  Vec pooled = id;
  pooled.insert(pooled.end(), ood.begin(), ood.end());
  std::sort(pooled.begin(), pooled.end());
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());
  double area = 0.0, prev_recall = 0.0;
  for (double thr : pooled) {
    int tp = 0, fp = 0;
    for (double v : id)
      if (v <= thr) ++tp;
    for (double v : ood)
      if (v <= thr) ++fp;
    if (tp + fp == 0) continue;
    const double recall = static_cast<double>(tp) / id.size();
    area += (recall - prev_recall) * (static_cast<double>(tp) / (tp + fp));
    prev_recall = recall;
  }
  return area;
}

}  // namespace oracle

TEST(Auroc, PinnedExamples) {
  EXPECT_DOUBLE_EQ(auroc({1, 2}, {3, 4}), 1.0);
  EXPECT_DOUBLE_EQ(auroc({1, 2, 3}, {1, 2, 3}), 0.5);
  EXPECT_DOUBLE_EQ(auroc({1, 3}, {2, 4}), 0.75);
}

TEST(TnrAtTpr, PinnedExamples) {
  Vec id(100);
  for (int i = 0; i < 100; ++i) id[static_cast<std::size_t>(i)] = i + 1;
  EXPECT_NEAR(tnr_at_tpr(id, {50, 96, 200}, 0.95), 2.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(tnr_at_tpr({1, 2}, {3, 4}, 0.95), 1.0);
  EXPECT_DOUBLE_EQ(tnr_at_tpr({5, 6}, {1, 2}, 0.95), 0.0);
}

TEST(DetectionAccuracy, PinnedExamples) {
  EXPECT_DOUBLE_EQ(detection_accuracy({1, 2}, {3, 4}), 1.0);
  EXPECT_DOUBLE_EQ(detection_accuracy({1, 2, 3}, {1, 2, 3}), 0.5);
  EXPECT_DOUBLE_EQ(detection_accuracy({1, 3}, {2, 4}), 0.75);
}

TEST(AuprIn, PinnedExamples) {
  EXPECT_DOUBLE_EQ(aupr_in({1, 2}, {3, 4}), 1.0);
  EXPECT_NEAR(aupr_in({1, 2, 3}, {1, 2, 3}), 0.5, 1e-12);
  EXPECT_NEAR(aupr_in({1, 3}, {2, 4}), oracle::aupr_in({1, 3}, {2, 4}), 1e-12);
}

TEST(Metrics, EmptyArraysThrow) {
  EXPECT_THROW(auroc({}, {1}), InputError);
  EXPECT_THROW(tnr_at_tpr({1}, {}), InputError);
  EXPECT_THROW(detection_accuracy({}, {}), InputError);
  EXPECT_THROW(aupr_in({}, {1}), InputError);
}

// Randomized small instances with deliberate ties against the oracles.
TEST(Metrics, OracleEquivalenceOnRandomInstances) {
  Rng rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const int n_id = rng.uniform_int(1, 12);
    const int n_ood = rng.uniform_int(1, 12);
    auto draw = [&](int n) {
      Vec v(static_cast<std::size_t>(n));
      for (auto& x : v) x = static_cast<double>(rng.uniform_int(0, 6)) * 0.5;
      return v;
    };
    const Vec id = draw(n_id), ood = draw(n_ood);
    EXPECT_NEAR(auroc(id, ood), oracle::auroc(id, ood), 1e-9);
    EXPECT_NEAR(tnr_at_tpr(id, ood, 0.95), oracle::tnr_at_tpr(id, ood, 0.95), 1e-9);
    EXPECT_NEAR(detection_accuracy(id, ood), oracle::detection_accuracy(id, ood), 1e-9);
    EXPECT_NEAR(aupr_in(id, ood), oracle::aupr_in(id, ood), 1e-9);
  }
}

TEST(Metrics, RankInvarianceUnderMonotoneTransform) {
  Rng rng(5);
  Vec id(40), ood(35);
  for (auto& x : id) x = rng.normal(0.0, 1.0);
  for (auto& x : ood) x = rng.normal(0.8, 1.2);
  auto transform = [](Vec v) {
    for (auto& x : v) x = std::exp(0.7 * x) + x * x * x * 0.01;
    return v;
  };
  const Vec tid = transform(id), tood = transform(ood);
  EXPECT_NEAR(auroc(id, ood), auroc(tid, tood), 1e-12);
  EXPECT_NEAR(tnr_at_tpr(id, ood, 0.95), tnr_at_tpr(tid, tood, 0.95), 1e-12);
  EXPECT_NEAR(detection_accuracy(id, ood), detection_accuracy(tid, tood), 1e-12);
}

TEST(Metrics, RangeAlwaysUnit) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    Vec id(static_cast<std::size_t>(rng.uniform_int(1, 30)));
    Vec ood(static_cast<std::size_t>(rng.uniform_int(1, 30)));
    for (auto& x : id) x = rng.normal(0, 3);
    for (auto& x : ood) x = rng.normal(0, 3);
    for (double m : {auroc(id, ood), tnr_at_tpr(id, ood, 0.95),
                     detection_accuracy(id, ood), aupr_in(id, ood)}) {
      EXPECT_GE(m, 0.0);
      EXPECT_LE(m, 1.0);
    }
  }
}
