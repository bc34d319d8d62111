#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "madcat/errors.hpp"
#include "madcat/mask_spec.hpp"
#include "madcat/numerics.hpp"
#include "madcat/rng.hpp"

namespace madcat {

inline constexpr double kMaxMaskRatio = 0.9;

/// Value written into masked positions of a binary input.
enum class FillMode { half, zero, learned };

/// Which positions the reconstruction loss scores.
enum class LossScope { masked_only, all_positions };

inline const char* to_string(FillMode f) {
  switch (f) {
    case FillMode::half: return "half";
    case FillMode::zero: return "zero";
    case FillMode::learned: return "learned";
  }
  return "?";
}

inline FillMode fill_mode_from_string(const std::string& s) {
  if (s == "half") return FillMode::half;
  if (s == "zero") return FillMode::zero;
  if (s == "learned") return FillMode::learned;
  throw ConfigError("unknown fill mode '" + s + "' (expected half, zero or learned)");
}

inline const char* to_string(LossScope s) { return s == LossScope::masked_only ? "masked_only" : "all_positions"; }

inline LossScope loss_scope_from_string(const std::string& s) {
  if (s == "masked_only") return LossScope::masked_only;
  if (s == "all_positions") return LossScope::all_positions;
  throw ConfigError("unknown loss scope '" + s + "' (expected masked_only or all_positions)");
}

struct MaskingConfig {
  double ratio = 0.3;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(ratio >= 0.0 && ratio <= kMaxMaskRatio))
      throw ConfigError("masking.ratio must lie in [0.0, 0.9], got " + std::to_string(ratio));
  }

  friend bool operator==(const MaskingConfig&, const MaskingConfig&) = default;
};

/// floor(ratio * dim). The small offset absorbs representation error of
/// decimal ratios such as 0.7, whose product with dim should be exact.
inline std::size_t mask_count(double ratio, std::size_t dim) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(dim) + 1e-9));
}

/// Draws floor(ratio * dim) distinct indices, uniformly without replacement,
/// from the stream identified by (cfg.seed, draw_index).
inline MaskSpec sample_mask(std::size_t dim, const MaskingConfig& cfg, std::uint64_t draw_index) {
  cfg.validate();
  if (dim == 0) throw ConfigError("mask dim must be positive");
  const std::size_t k = mask_count(cfg.ratio, dim);
  MaskSpec mask{dim, {}};
  if (k == 0) return mask;
  std::vector<std::uint32_t> pool(dim);
  std::iota(pool.begin(), pool.end(), 0u);
  Rng rng(cfg.seed, draw_index);
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(dim - i)]);
  mask.indices.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(mask.indices.begin(), mask.indices.end());
  return mask;
}

/// Copy of `x` with masked positions replaced by `fill`.
inline nn::Vector apply_mask(const nn::Vector& x, const MaskSpec& mask, double fill = 0.5) {
  if (mask.dim != static_cast<std::size_t>(x.size()))
    throw DataError("mask dim " + std::to_string(mask.dim) + " does not match input length " +
                    std::to_string(x.size()));
  nn::Vector out = x;
  for (auto i : mask.indices) {
    if (i >= mask.dim) throw DataError("mask index out of range");
    out[i] = fill;
  }
  return out;
}

/// BCE between decoder probabilities and the clean input. With the default
/// scope only masked positions count and an empty mask is an error: a model
/// trained at ratio 0 has no reconstruction target.
inline double reconstruction_loss(const nn::Vector& decoder_probs, const nn::Vector& original, const MaskSpec& mask,
                                  LossScope scope = LossScope::masked_only) {
  if (scope == LossScope::all_positions)
    return nn::binary_cross_entropy_masked(decoder_probs, original, MaskSpec::full(mask.dim));
  return nn::binary_cross_entropy_masked(decoder_probs, original, mask);
}

inline nn::Vector reconstruction_loss_grad(const nn::Vector& decoder_probs, const nn::Vector& original,
                                           const MaskSpec& mask, LossScope scope, double scale = 1.0) {
  if (scope == LossScope::all_positions)
    return nn::binary_cross_entropy_masked_grad(decoder_probs, original, MaskSpec::full(mask.dim), scale);
  return nn::binary_cross_entropy_masked_grad(decoder_probs, original, mask, scale);
}

}  // namespace madcat
