// Copyright 2026 The misalign-bench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "misbench/label_map.hpp"

namespace misbench::segscore {

using IouVector = std::array<std::optional<double>, kNumClasses>;

/// Rows are ground-truth classes; columns are predicted classes plus one
/// trailing column for pixels predicted as ignore (counted against the gt
/// class, never as a hit).
class ConfusionMatrix {
 public:
  static constexpr int kAbstainColumn = kNumClasses;

  std::uint64_t count(int gt, int pred) const { return counts_[gt][pred]; }
  std::uint64_t abstained(int gt) const { return counts_[gt][kAbstainColumn]; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& row : counts_)
      for (auto v : row) t += v;
    return t;
  }

  std::uint64_t trace() const {
    std::uint64_t t = 0;
    for (int c = 0; c < kNumClasses; ++c) t += counts_[c][c];
    return t;
  }

  std::uint64_t true_positives(int c) const { return counts_[c][c]; }

  std::uint64_t false_negatives(int c) const {
    std::uint64_t row = 0;
    for (auto v : counts_[c]) row += v;
    return row - counts_[c][c];
  }

  std::uint64_t false_positives(int c) const {
    std::uint64_t col = 0;
    for (int g = 0; g < kNumClasses; ++g) col += counts_[g][c];
    return col - counts_[c][c];
  }

  void add(int gt, int pred, std::uint64_t n = 1) {
    counts_[gt][pred == kIgnoreLabel ? kAbstainColumn : pred] += n;
  }

  /// Adds every pixel whose gt is not ignore. Dimensions must match.
  ConfusionMatrix& accumulate(const LabelMap& pred, const LabelMap& gt) {
    if (pred.width != gt.width || pred.height != gt.height) {
      throw std::invalid_argument("accumulate: prediction shape " + pred.shape() +
                                  " does not match ground-truth shape " + gt.shape());
    }
    for (std::size_t i = 0; i < gt.labels.size(); ++i) {
      const auto g = gt.labels[i];
      if (g == kIgnoreLabel) continue;
      add(g, pred.labels[i]);
    }
    return *this;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    for (int g = 0; g < kNumClasses; ++g)
      for (int p = 0; p <= kAbstainColumn; ++p) counts_[g][p] += other.counts_[g][p];
    return *this;
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::array<std::array<std::uint64_t, kNumClasses + 1>, kNumClasses> counts_{};
};

inline ConfusionMatrix accumulate(ConfusionMatrix cm, const LabelMap& pred, const LabelMap& gt) {
  cm.accumulate(pred, gt);
  return cm;
}

/// TP / (TP + FP + FN); nullopt when the class is absent from both gt and
/// predictions.
inline IouVector per_class_iou(const ConfusionMatrix& cm) {
  IouVector out;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto tp = cm.true_positives(c);
    const auto denom = tp + cm.false_positives(c) + cm.false_negatives(c);
    if (denom > 0) out[c] = static_cast<double>(tp) / static_cast<double>(denom);
  }
  return out;
}

/// Mean over defined classes only.
inline double miou(const IouVector& iou) {
  double sum = 0.0;
  int n = 0;
  for (const auto& v : iou) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) throw std::domain_error("miou: no class has a defined IoU (empty evaluation)");
  return sum / n;
}

inline double pixel_accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw std::domain_error("pixel_accuracy: empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

inline double delta_q(double q_clean, double q_deg) { return q_clean - q_deg; }

struct SegQuality {
  IouVector per_class_iou;
  double miou = 0.0;
  double pixel_accuracy = 0.0;
};

inline SegQuality evaluate(const ConfusionMatrix& cm) {
  SegQuality q;
  q.per_class_iou = per_class_iou(cm);
  q.miou = miou(q.per_class_iou);
  q.pixel_accuracy = pixel_accuracy(cm);
  return q;
}

}  // namespace misbench::segscore
