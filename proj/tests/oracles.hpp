#pragma once
// Brute-force reference implementations used as independent oracles.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "appa/core_types.hpp"
#include "appa/rng.hpp"

namespace oracle {

/// Intersection-over-union by explicit interval overlap.
inline double iou(const appa::BoundingBox& a, const appa::BoundingBox& b) {
  const double ox = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double oy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ox * oy;
  const double uni = a.width() * a.height() + b.width() * b.height() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

/// Repeatedly keeps the best remaining candidate and strikes every remaining
/// one that overlaps it by more than `thr`. O(n^2).
inline std::vector<int> nms(const std::vector<appa::BoundingBox>& boxes, const std::vector<double>& scores,
                            double thr) {
  std::vector<bool> alive(boxes.size(), true);
  std::vector<int> kept;
  for (;;) {
    int best = -1;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (alive[i] && (best < 0 || scores[i] > scores[best])) best = static_cast<int>(i);
    }
    if (best < 0) break;
    kept.push_back(best);
    alive[best] = false;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (alive[i] && oracle::iou(boxes[i], boxes[best]) > thr) alive[i] = false;
    }
  }
  return kept;
}

/// Greedy single-match rule evaluated from a full IOU table: detections in
/// the given order each claim the highest-IOU unclaimed truth at or above
/// `thr` (lowest truth index on ties).
inline std::vector<bool> match(const std::vector<appa::BoundingBox>& dets, const std::vector<appa::BoundingBox>& truths,
                               double thr) {
  std::vector<std::vector<double>> table(dets.size(), std::vector<double>(truths.size()));
  for (std::size_t d = 0; d < dets.size(); ++d) {
    for (std::size_t t = 0; t < truths.size(); ++t) table[d][t] = oracle::iou(dets[d], truths[t]);
  }
  std::vector<bool> claimed(truths.size(), false);
  std::vector<bool> tp(dets.size(), false);
  for (std::size_t d = 0; d < dets.size(); ++d) {
    std::optional<std::size_t> pick;
    for (std::size_t t = 0; t < truths.size(); ++t) {
      if (claimed[t] || table[d][t] < thr) continue;
      if (!pick || table[d][t] > table[d][*pick]) pick = t;
    }
    if (pick) {
      claimed[*pick] = true;
      tp[d] = true;
    }
  }
  return tp;
}

struct Labeled {
  double score;
  bool tp;
};

/// AP by enumerating every distinct score cutoff and recounting TP/FP from
/// scratch at each one.
inline std::optional<double> average_precision(const std::vector<Labeled>& labeled, int n_truths,
                                               bool eleven_point = false) {
  if (n_truths <= 0) return std::nullopt;
  std::vector<double> cutoffs;
  for (const auto& l : labeled) cutoffs.push_back(l.score);
  std::sort(cutoffs.begin(), cutoffs.end(), std::greater<>());
  cutoffs.erase(std::unique(cutoffs.begin(), cutoffs.end()), cutoffs.end());
  std::vector<int> tps;
  std::vector<double> precision;
  std::vector<double> recall;
  for (double c : cutoffs) {
    int tp = 0;
    int n = 0;
    for (const auto& l : labeled) {
      if (l.score >= c) {
        ++n;
        tp += l.tp ? 1 : 0;
      }
    }
    tps.push_back(tp);
    precision.push_back(double(tp) / double(n));
    recall.push_back(double(tp) / double(n_truths));
  }
  if (eleven_point) {
    double sum = 0;
    for (int t = 0; t <= 10; ++t) {
      double best = 0;
      for (std::size_t i = 0; i < cutoffs.size(); ++i) {
        if (recall[i] >= t / 10.0) best = std::max(best, precision[i]);
      }
      sum += best;
    }
    return sum / 11.0;
  }
  const int total_tp = tps.empty() ? 0 : tps.back();
  double sum = 0;
  for (int k = 1; k <= total_tp; ++k) {
    double best = 0;
    for (std::size_t i = 0; i < cutoffs.size(); ++i) {
      if (tps[i] >= k) best = std::max(best, precision[i]);
    }
    sum += best;
  }
  return sum / double(n_truths);
}

inline appa::BoundingBox random_box(appa::Rng& rng, double extent = 100.0, double min_side = 0.5) {
  const double x = rng.uniform(0, extent);
  const double y = rng.uniform(0, extent);
  return {x, y, x + rng.uniform(min_side, extent / 2), y + rng.uniform(min_side, extent / 2)};
}

}  // namespace oracle
