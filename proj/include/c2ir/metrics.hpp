#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "c2ir/errors.hpp"
#include "c2ir/tensor.hpp"

namespace c2ir {

// Threshold-free detection metrics. Convention everywhere: higher score
// means more OOD; ID samples are the positives for AUPR.

namespace detail {

inline void require_nonempty(const Vec& id_scores, const Vec& ood_scores) {
  if (id_scores.empty() || ood_scores.empty())
    throw InputError("metrics need non-empty score arrays");
}

}  // namespace detail

// Probability that an OOD score exceeds an ID score, ties counted half.
// Computed via midranks (Mann-Whitney), single sort.
inline double auroc(const Vec& id_scores, const Vec& ood_scores) {
  detail::require_nonempty(id_scores, ood_scores);
  struct Item {
    double v;
    bool ood;
  };
  std::vector<Item> all;
  all.reserve(id_scores.size() + ood_scores.size());
  for (double v : id_scores) all.push_back({v, false});
  for (double v : ood_scores) all.push_back({v, true});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.v < b.v; });

  double rank_sum_ood = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].v == all[i].v) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (std::size_t k = i; k < j; ++k)
      if (all[k].ood) rank_sum_ood += midrank;
    i = j;
  }
  const auto n_ood = static_cast<double>(ood_scores.size());
  const auto n_id = static_cast<double>(id_scores.size());
  const double u = rank_sum_ood - n_ood * (n_ood + 1.0) / 2.0;
  return u / (n_id * n_ood);
}

// Smallest threshold admitting at least `tpr` of the ID scores, then the
// fraction of OOD scores strictly above it.
inline double tnr_at_tpr(const Vec& id_scores, const Vec& ood_scores, double tpr = 0.95) {
  detail::require_nonempty(id_scores, ood_scores);
  if (tpr <= 0.0 || tpr > 1.0) throw InputError("tpr must be in (0, 1]");
  Vec sorted = id_scores;
  std::sort(sorted.begin(), sorted.end());
  const auto k = static_cast<std::size_t>(
      std::ceil(tpr * static_cast<double>(sorted.size()) - 1e-12));
  const double threshold = sorted[k - 1];
  std::size_t above = 0;
  for (double v : ood_scores)
    if (v > threshold) ++above;
  return static_cast<double>(above) / static_cast<double>(ood_scores.size());
}

// Balanced detection accuracy: max over pooled candidate thresholds of
// 0.5 * (TPR + TNR), one sorted sweep.
inline double detection_accuracy(const Vec& id_scores, const Vec& ood_scores) {
  detail::require_nonempty(id_scores, ood_scores);
  Vec pooled = id_scores;
  pooled.insert(pooled.end(), ood_scores.begin(), ood_scores.end());
  std::sort(pooled.begin(), pooled.end());
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

  Vec id_sorted = id_scores, ood_sorted = ood_scores;
  std::sort(id_sorted.begin(), id_sorted.end());
  std::sort(ood_sorted.begin(), ood_sorted.end());

  const auto n_id = static_cast<double>(id_scores.size());
  const auto n_ood = static_cast<double>(ood_scores.size());
  double best = 0.0;
  for (double thr : pooled) {
    const auto id_le = static_cast<double>(
        std::upper_bound(id_sorted.begin(), id_sorted.end(), thr) - id_sorted.begin());
    const auto ood_le = static_cast<double>(
        std::upper_bound(ood_sorted.begin(), ood_sorted.end(), thr) - ood_sorted.begin());
    const double acc = 0.5 * (id_le / n_id + (n_ood - ood_le) / n_ood);
    best = std::max(best, acc);
  }
  return best;
}

// Area under the precision-recall curve with ID as the positive class,
// predicted positive when score <= threshold; step interpolation.
inline double aupr_in(const Vec& id_scores, const Vec& ood_scores) {
  detail::require_nonempty(id_scores, ood_scores);
  Vec pooled = id_scores;
  pooled.insert(pooled.end(), ood_scores.begin(), ood_scores.end());
  std::sort(pooled.begin(), pooled.end());
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

  Vec id_sorted = id_scores, ood_sorted = ood_scores;
  std::sort(id_sorted.begin(), id_sorted.end());
  std::sort(ood_sorted.begin(), ood_sorted.end());

  const auto n_id = static_cast<double>(id_scores.size());
  double area = 0.0;
  double prev_recall = 0.0;
  for (double thr : pooled) {
    const auto tp = static_cast<double>(
        std::upper_bound(id_sorted.begin(), id_sorted.end(), thr) - id_sorted.begin());
    const auto fp = static_cast<double>(
        std::upper_bound(ood_sorted.begin(), ood_sorted.end(), thr) - ood_sorted.begin());
    if (tp + fp == 0.0) continue;
    const double precision = tp / (tp + fp);
    const double recall = tp / n_id;
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

}  // namespace c2ir
