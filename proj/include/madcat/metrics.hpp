#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>

#include "madcat/errors.hpp"

namespace madcat {

/// Binary confusion counts with malicious as the positive class.
struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  void add(int truth, int predicted) {
    if (truth == 1)
      (predicted == 1 ? tp : fn)++;
    else
      (predicted == 1 ? fp : tn)++;
  }

  std::size_t total() const { return tp + fp + fn + tn; }

  Confusion& operator+=(const Confusion& o) {
    tp += o.tp, fp += o.fp, fn += o.fn, tn += o.tn;
    return *this;
  }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

/// F1 of the malicious class. nullopt when tp = fp = fn = 0 (no positives in
/// truth or prediction); 0 when tp = 0 but some positive exists.
inline std::optional<double> f1_score(std::size_t tp, std::size_t fp, std::size_t fn) {
  if (tp == 0) {
    if (fp + fn == 0) return std::nullopt;
    return 0.0;
  }
  const double p = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double r = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * p * r / (p + r);
}

inline std::optional<double> f1_score(const Confusion& c) { return f1_score(c.tp, c.fp, c.fn); }

inline std::optional<double> accuracy(const Confusion& c) {
  if (c.total() == 0) return std::nullopt;
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

struct ClassAccuracy {
  std::optional<double> benign;     // absent when no benign sample
  std::optional<double> malicious;  // absent when no malicious sample
};

inline ClassAccuracy per_class_accuracy(const Confusion& c) {
  ClassAccuracy a;
  if (c.tn + c.fp > 0) a.benign = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  if (c.tp + c.fn > 0) a.malicious = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return a;
}

/// Fraction correct within each true class.
inline ClassAccuracy per_class_accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw DataError("predictions and labels differ in length");
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) c.add(labels[i], predictions[i]);
  return per_class_accuracy(c);
}

}  // namespace madcat
