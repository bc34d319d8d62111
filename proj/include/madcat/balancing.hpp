#pragma once

// Class-balanced adaptation sets, either from ground-truth labels or from the
// frozen base model's pseudo-labels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "madcat/data.hpp"
#include "madcat/errors.hpp"
#include "madcat/model.hpp"
#include "madcat/rng.hpp"

namespace madcat {

enum class BalanceSource { ground_truth, pseudo_random, pseudo_top_n, pseudo_bucket, none };

inline const char* to_string(BalanceSource s) {
  switch (s) {
    case BalanceSource::ground_truth: return "ground_truth";
    case BalanceSource::pseudo_random: return "pseudo_random";
    case BalanceSource::pseudo_top_n: return "pseudo_top_n";
    case BalanceSource::pseudo_bucket: return "pseudo_bucket";
    case BalanceSource::none: return "none";
  }
  return "?";
}

inline BalanceSource balance_source_from_string(const std::string& s) {
  for (auto b : {BalanceSource::ground_truth, BalanceSource::pseudo_random, BalanceSource::pseudo_top_n,
                 BalanceSource::pseudo_bucket, BalanceSource::none})
    if (s == to_string(b)) return b;
  throw ConfigError("unknown balancer '" + s +
                    "' (expected ground_truth, pseudo_random, pseudo_top_n, pseudo_bucket or none)");
}

/// Raised when a class is missing; callers treat the month as "no-adapt".
struct EmptyClassError : DataError {
  explicit EmptyClassError(const std::string& what) : DataError(what) {}
};

struct PseudoLabeledSample {
  Sample sample;
  int pseudo_label = kBenign;
  double confidence = 0.5;
};

/// Equal-count subset. labels[i] is the class of samples[i] according to
/// `source` (ground truth or pseudo-label).
struct BalancedBatch {
  std::vector<Sample> samples;
  std::vector<int> labels;
  BalanceSource source = BalanceSource::none;
  std::size_t per_class_count = 0;
  std::vector<std::string> warnings;

  bool empty() const { return samples.empty(); }
};

namespace detail {

inline constexpr std::uint64_t kGroundTruthStream = 0x67740000;
inline constexpr std::uint64_t kRandomStream = 0x726e0000;
inline constexpr std::uint64_t kBucketStream = 0x626b0000;
inline constexpr std::uint64_t kFinalShuffleStream = 0x73680000;

/// k distinct positions of `items`, uniformly, in draw order.
template <class T>
std::vector<T> draw_without_replacement(std::vector<T> items, std::size_t k, Rng& rng) {
  for (std::size_t i = 0; i < k; ++i) std::swap(items[i], items[i + rng.below(items.size() - i)]);
  items.resize(k);
  return items;
}

inline const char* class_name(int label) { return label == kMalicious ? "malicious" : "benign"; }

}  // namespace detail

/// Minority class kept whole; the majority is downsampled uniformly without
/// replacement. Output order is a seeded shuffle.
inline BalancedBatch balance_ground_truth(const std::vector<Sample>& samples, std::uint64_t seed) {
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) by_class[static_cast<std::size_t>(require_label(samples[i]))].push_back(i);
  for (int c : {kBenign, kMalicious})
    if (by_class[static_cast<std::size_t>(c)].empty())
      throw EmptyClassError(std::string("ground-truth balancing: no ") + detail::class_name(c) + " samples");
  const std::size_t k = std::min(by_class[0].size(), by_class[1].size());
  Rng rng(seed, detail::kGroundTruthStream);
  std::vector<std::pair<std::size_t, int>> picked;
  for (int c : {kBenign, kMalicious})
    for (auto i : detail::draw_without_replacement(by_class[static_cast<std::size_t>(c)], k, rng)) picked.emplace_back(i, c);
  rng.shuffle(std::span<std::pair<std::size_t, int>>(picked));
  BalancedBatch out;
  out.source = BalanceSource::ground_truth;
  out.per_class_count = k;
  for (auto [i, c] : picked) {
    out.samples.push_back(samples[i]);
    out.labels.push_back(c);
  }
  return out;
}

/// Labels every sample with the base model's argmax class and max-softmax
/// confidence. Ground truth is never read.
inline std::vector<PseudoLabeledSample> pseudo_label(const std::vector<Sample>& samples, const ModelBundle& base_model) {
  if (!base_model.frozen.encoder || !base_model.frozen.head)
    throw ConfigError("pseudo-labeling requires a frozen base model");
  std::vector<PseudoLabeledSample> out;
  if (samples.empty()) return out;
  const auto preds =
      classify_batch(base_model, feature_matrix(samples, static_cast<std::size_t>(base_model.arch.input_dim)));
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) out.push_back({samples[i], preds[i].label, preds[i].confidence});
  return out;
}

namespace detail {

inline std::array<std::vector<std::size_t>, 2> split_pseudo(const std::vector<PseudoLabeledSample>& pseudo,
                                                            const char* strategy) {
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    const int l = pseudo[i].pseudo_label;
    if (l != kBenign && l != kMalicious) throw DataError("pseudo-label must be 0 or 1");
    by_class[static_cast<std::size_t>(l)].push_back(i);
  }
  for (int c : {kBenign, kMalicious})
    if (by_class[static_cast<std::size_t>(c)].empty())
      throw EmptyClassError(std::string(strategy) + ": pseudo-labels contain no " + class_name(c) + " samples");
  return by_class;
}

inline BalancedBatch assemble(const std::vector<PseudoLabeledSample>& pseudo,
                              const std::array<std::vector<std::size_t>, 2>& chosen, BalanceSource source,
                              std::uint64_t seed) {
  std::vector<std::size_t> order;
  for (const auto& c : chosen) order.insert(order.end(), c.begin(), c.end());
  Rng rng(seed, kFinalShuffleStream + static_cast<std::uint64_t>(source));
  rng.shuffle(std::span<std::size_t>(order));
  BalancedBatch out;
  out.source = source;
  out.per_class_count = chosen[0].size();
  for (auto i : order) {
    out.samples.push_back(pseudo[i].sample);
    out.labels.push_back(pseudo[i].pseudo_label);
  }
  return out;
}

}  // namespace detail

/// Uniform draw of min(class sizes) from each pseudo-class.
inline BalancedBatch balance_random(const std::vector<PseudoLabeledSample>& pseudo, std::uint64_t seed) {
  auto by_class = detail::split_pseudo(pseudo, "pseudo_random");
  const std::size_t k = std::min(by_class[0].size(), by_class[1].size());
  Rng rng(seed, detail::kRandomStream);
  for (auto& c : by_class) c = detail::draw_without_replacement(c, k, rng);
  return detail::assemble(pseudo, by_class, BalanceSource::pseudo_random, seed);
}

/// The n most confident samples of each pseudo-class; equal confidences are
/// ordered by sample id. n = 0 means min(class sizes); larger n is clamped
/// with a warning.
inline BalancedBatch balance_top_n(const std::vector<PseudoLabeledSample>& pseudo, std::size_t n,
                                   std::uint64_t seed = 0) {
  auto by_class = detail::split_pseudo(pseudo, "pseudo_top_n");
  const std::size_t limit = std::min(by_class[0].size(), by_class[1].size());
  std::vector<std::string> warnings;
  if (n == 0) {
    n = limit;
  } else if (n > limit) {
    warnings.push_back("top-N " + std::to_string(n) + " clamped to smallest pseudo-class size " +
                       std::to_string(limit));
    n = limit;
  }
  for (auto& c : by_class) {
    std::sort(c.begin(), c.end(), [&](std::size_t a, std::size_t b) {
      if (pseudo[a].confidence != pseudo[b].confidence) return pseudo[a].confidence > pseudo[b].confidence;
      return pseudo[a].sample.id < pseudo[b].sample.id;
    });
    c.resize(n);
  }
  auto out = detail::assemble(pseudo, by_class, BalanceSource::pseudo_top_n, seed);
  out.warnings = std::move(warnings);
  return out;
}

/// floor(confidence * 10), clamped to 9. Binary max-softmax confidences
/// only reach buckets 5-9.
inline int confidence_bucket(double confidence) {
  const int b = static_cast<int>(std::floor(confidence * 10.0 + 1e-12));
  return std::clamp(b, 0, 9);
}

/// Per class: equal draws from every non-empty confidence bucket (the size
/// of the smallest non-empty bucket), then both classes are cut down to the
/// smaller class total by a seeded uniform draw.
inline BalancedBatch balance_bucket(const std::vector<PseudoLabeledSample>& pseudo, std::uint64_t seed) {
  auto by_class = detail::split_pseudo(pseudo, "pseudo_bucket");
  Rng rng(seed, detail::kBucketStream);
  for (auto& c : by_class) {
    std::array<std::vector<std::size_t>, 10> buckets;
    for (auto i : c) buckets[static_cast<std::size_t>(confidence_bucket(pseudo[i].confidence))].push_back(i);
    std::size_t k = c.size();
    for (const auto& b : buckets)
      if (!b.empty()) k = std::min(k, b.size());
    std::vector<std::size_t> picked;
    for (auto& b : buckets) {
      if (b.empty()) continue;
      auto d = detail::draw_without_replacement(b, k, rng);
      picked.insert(picked.end(), d.begin(), d.end());
    }
    c = std::move(picked);
  }
  const std::size_t total = std::min(by_class[0].size(), by_class[1].size());
  for (auto& c : by_class)
    if (c.size() > total) c = detail::draw_without_replacement(c, total, rng);
  return detail::assemble(pseudo, by_class, BalanceSource::pseudo_bucket, seed);
}

/// Every sample, labels unread. Used by the unbalanced ablation arms.
inline BalancedBatch passthrough(const std::vector<Sample>& samples) {
  BalancedBatch out;
  out.source = BalanceSource::none;
  out.samples = samples;
  out.labels.assign(samples.size(), -1);
  return out;
}

}  // namespace madcat
