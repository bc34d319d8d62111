#pragma once

// Initial training: masked-autoencoder pretraining, then the classification
// head on clean inputs through the frozen encoder. Also trains the baseline
// classifier end-to-end.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "madcat/data.hpp"
#include "madcat/errors.hpp"
#include "madcat/masking.hpp"
#include "madcat/metrics.hpp"
#include "madcat/model.hpp"
#include "madcat/numerics.hpp"

namespace madcat {

struct TrainConfig {
  double learning_rate = 0.003;
  int epochs = 800;
  MaskingConfig masking{0.3, 0};
  int batch_size = 128;
  std::uint64_t seed = 0;
  int head_epochs = 200;
  nn::OptimizerMethod optimizer = nn::OptimizerMethod::adam;
  LossScope loss_scope = LossScope::masked_only;
  FillMode fill_mode = FillMode::half;

  nn::OptimizerConfig optimizer_config() const {
    nn::OptimizerConfig c;
    c.method = optimizer;
    c.learning_rate = learning_rate;
    return c;
  }

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train.learning_rate must be positive");
    if (epochs <= 0) throw ConfigError("train.epochs must be positive");
    if (head_epochs <= 0) throw ConfigError("train.head_epochs must be positive");
    if (batch_size <= 0) throw ConfigError("train.batch_size must be positive");
    masking.validate();
  }
};

/// Per-epoch mean loss.
using LossTrace = std::vector<double>;

namespace detail {

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t stream) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed, stream);
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

inline nn::Matrix gather_columns(const nn::Matrix& m, std::span<const std::size_t> cols) {
  nn::Matrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(static_cast<Eigen::Index>(cols[i]));
  return out;
}

inline constexpr std::uint64_t kMaeStream = 0x6d6165;
inline constexpr std::uint64_t kHeadStream = 0x68656164;
inline constexpr std::uint64_t kBaselineStream = 0x62617365;

}  // namespace detail

struct ReconstructionStep {
  double loss = 0.0;
};

/// One gradient step of masked reconstruction on the columns of `clean`,
/// with masks[i] applied to column i. Gradients flow through the decoder
/// into the encoder; only the sub-networks flagged in update_* are stepped.
inline ReconstructionStep reconstruction_step(ModelBundle& b, const nn::Matrix& clean,
                                              const std::vector<MaskSpec>& masks, LossScope scope,
                                              bool update_encoder, bool update_decoder) {
  if (!b.has_decoder()) throw ConfigError("reconstruction requires a decoder");
  const auto batch = clean.cols();
  nn::Matrix corrupted = clean;
  const double fill = fill_value(b.fill_mode, b.mask_fill);
  for (Eigen::Index c = 0; c < batch; ++c)
    for (auto i : masks[static_cast<std::size_t>(c)].indices) corrupted(i, c) = fill;

  auto enc = nn::forward_batch(b.encoder, corrupted);
  auto dec = nn::forward_batch(b.decoder, enc.output);

  double loss = 0.0;
  nn::Matrix seed(dec.output.rows(), batch);
  const double scale = 1.0 / static_cast<double>(batch);
  for (Eigen::Index c = 0; c < batch; ++c) {
    const auto& mask = masks[static_cast<std::size_t>(c)];
    const nn::Vector p = dec.output.col(c);
    const nn::Vector t = clean.col(c);
    loss += reconstruction_loss(p, t, mask, scope) * scale;
    seed.col(c) = reconstruction_loss_grad(p, t, mask, scope, scale);
  }
  if (!std::isfinite(loss)) throw NumericError("non-finite reconstruction loss");

  auto dec_back = nn::backward(b.decoder, dec.tape, seed);
  if (update_encoder || b.fill_mode == FillMode::learned) {
    auto enc_back = nn::backward(b.encoder, enc.tape, dec_back.input_grad);
    if (update_encoder) nn::optimizer_step(b.encoder, enc_back.grads, b.encoder_opt);
    if (b.fill_mode == FillMode::learned && update_encoder) {
      double g = 0.0;
      for (Eigen::Index c = 0; c < batch; ++c)
        for (auto i : masks[static_cast<std::size_t>(c)].indices) g += enc_back.input_grad(i, c);
      if (!std::isfinite(g)) throw NumericError("non-finite fill-value gradient");
      b.mask_fill -= b.encoder_opt.config.learning_rate * g;
    }
  }
  if (update_decoder) nn::optimizer_step(b.decoder, dec_back.grads, b.decoder_opt);
  return {loss};
}

/// Masked-autoencoder pretraining over the columns of `features`. Takes
/// features only, so labels cannot influence it. A fresh mask is drawn per
/// sample per epoch from (cfg.masking.seed, epoch * n + sample index).
///
/// With ratio 0 and masked-only loss there is nothing to reconstruct: the
/// phase is a no-op and returns an empty trace.
inline LossTrace train_mae(ModelBundle& b, const nn::Matrix& features, const TrainConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(features.cols());
  if (n == 0) throw DataError("train_mae: empty training set");
  if (features.rows() != b.arch.input_dim) throw DataError("train_mae: feature dim does not match model");
  const std::size_t dim = static_cast<std::size_t>(features.rows());
  if (mask_count(cfg.masking.ratio, dim) == 0 && cfg.loss_scope == LossScope::masked_only) return {};

  LossTrace trace;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = detail::epoch_order(n, cfg.seed, detail::kMaeStream + static_cast<std::uint64_t>(epoch) * 4);
    double sum = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::span<const std::size_t> cols(order.data() + start, std::min(bs, n - start));
      std::vector<MaskSpec> masks;
      masks.reserve(cols.size());
      for (auto c : cols) masks.push_back(sample_mask(dim, cfg.masking, static_cast<std::uint64_t>(epoch) * n + c));
      const auto step = reconstruction_step(b, detail::gather_columns(features, cols), masks, cfg.loss_scope,
                                            !b.frozen.encoder, !b.frozen.decoder);
      sum += step.loss * static_cast<double>(cols.size());
    }
    trace.push_back(sum / static_cast<double>(n));
  }
  return trace;
}

/// Softmax cross-entropy minibatch training of `head` on fixed inputs.
inline LossTrace fit_head(nn::DenseNet& head, nn::OptimizerState& opt, const nn::Matrix& inputs,
                          const std::vector<int>& labels, int epochs, int batch_size, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(inputs.cols());
  LossTrace trace;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto order = detail::epoch_order(n, seed, detail::kHeadStream + static_cast<std::uint64_t>(epoch) * 4);
    double sum = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::span<const std::size_t> cols(order.data() + start, std::min(bs, n - start));
      auto fwd = nn::forward_batch(head, detail::gather_columns(inputs, cols));
      nn::Matrix seed_grad(2, static_cast<Eigen::Index>(cols.size()));
      const double scale = 1.0 / static_cast<double>(cols.size());
      for (std::size_t i = 0; i < cols.size(); ++i) {
        const nn::Vector logits = fwd.output.col(static_cast<Eigen::Index>(i));
        const int y = labels[cols[i]];
        sum += nn::softmax_cross_entropy(logits, y);
        seed_grad.col(static_cast<Eigen::Index>(i)) = nn::softmax_cross_entropy_grad(logits, y, scale);
      }
      auto back = nn::backward(head, fwd.tape, seed_grad);
      nn::optimizer_step(head, back.grads, opt);
    }
    const double mean = sum / static_cast<double>(n);
    if (!std::isfinite(mean)) throw NumericError("non-finite classification loss");
    trace.push_back(mean);
  }
  return trace;
}

inline std::vector<int> labels_of(const std::vector<Sample>& samples) {
  std::vector<int> y;
  y.reserve(samples.size());
  bool seen[2] = {false, false};
  for (const auto& s : samples) {
    y.push_back(require_label(s));
    seen[y.back()] = true;
  }
  if (!seen[0] || !seen[1])
    throw DataError(std::string("training set has no ") + (seen[0] ? "malicious" : "benign") +
                    " samples; the head cannot be trained on a single class");
  return y;
}

/// Trains the head on clean inputs through the encoder, which must be
/// frozen. Latents are computed once; the encoder is never written.
inline LossTrace train_head(ModelBundle& b, const std::vector<Sample>& train_set, const TrainConfig& cfg) {
  cfg.validate();
  if (!b.frozen.encoder) throw ConfigError("train_head requires a frozen encoder");
  if (b.frozen.head) throw ConfigError("train_head called on a frozen head");
  if (train_set.empty()) throw DataError("train_head: empty training set");
  const auto labels = labels_of(train_set);
  const nn::Matrix latent =
      nn::apply(b.encoder, feature_matrix(train_set, static_cast<std::size_t>(b.arch.input_dim)));
  return fit_head(b.head, b.head_opt, latent, labels, cfg.head_epochs, cfg.batch_size, cfg.seed);
}

struct ValidationMetrics {
  Confusion confusion;
  std::optional<double> f1;
  std::optional<double> accuracy;
};

inline ValidationMetrics validate_model(const ModelBundle& b, const std::vector<Sample>& samples) {
  ValidationMetrics m;
  if (samples.empty()) return m;
  const auto preds = classify_batch(b, feature_matrix(samples, static_cast<std::size_t>(b.arch.input_dim)));
  for (std::size_t i = 0; i < samples.size(); ++i) m.confusion.add(require_label(samples[i]), preds[i].label);
  m.f1 = f1_score(m.confusion);
  m.accuracy = accuracy(m.confusion);
  return m;
}

/// Line-delimited training log records (one JSON object per line).
struct TrainingLog {
  std::vector<nlohmann::ordered_json> records;

  void add(nlohmann::ordered_json r) { records.push_back(std::move(r)); }

  std::string str() const {
    std::string out;
    for (const auto& r : records) out += r.dump() + "\n";
    return out;
  }
};

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"mask_ratio", c.masking.ratio},
          {"mask_seed", c.masking.seed},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"head_epochs", c.head_epochs},
          {"optimizer", nn::to_string(c.optimizer)},
          {"loss_scope", to_string(c.loss_scope)},
          {"fill_mode", to_string(c.fill_mode)}};
}

struct InitialTrainingResult {
  ModelBundle bundle;
  std::size_t train_count = 0;
  std::size_t val_count = 0;
  ValidationMetrics validation;
  LossTrace mae_trace;
  LossTrace head_trace;
};

inline void log_traces(TrainingLog& log, const std::string& model, const LossTrace& trace, const char* phase) {
  for (std::size_t e = 0; e < trace.size(); ++e)
    log.add({{"model", model}, {"phase", phase}, {"epoch", e + 1}, {"loss", trace[e]}});
}

/// Pretrains the autoencoder on `train`, freezes the encoder, trains the
/// head, and scores `val`. The returned encoder is frozen for head purposes
/// only; test-time adaptation may still update it.
inline InitialTrainingResult train_madcat(const std::vector<Sample>& train, const std::vector<Sample>& val,
                                          const ArchConfig& arch, const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw DataError("initial training: empty training split");
  InitialTrainingResult r;
  r.bundle = build_madcat(arch, cfg.seed, cfg.optimizer_config(), cfg.fill_mode);
  const std::size_t dim = static_cast<std::size_t>(arch.input_dim);
  r.mae_trace = train_mae(r.bundle, feature_matrix(train, dim), cfg);
  r.bundle.frozen.encoder = true;
  r.head_trace = train_head(r.bundle, train, cfg);
  r.bundle.frozen.head = true;
  r.train_count = train.size();
  r.val_count = val.size();
  r.validation = validate_model(r.bundle, val);
  return r;
}

/// Splits `samples` 80/20 (seeded by cfg.seed and the sample order) and runs
/// train_madcat.
inline InitialTrainingResult initial_training(const std::vector<Sample>& samples, const ArchConfig& arch,
                                              const TrainConfig& cfg, double train_fraction = 0.8,
                                              SplitMode mode = SplitMode::random) {
  auto [train, val] = split_fraction(samples, train_fraction, cfg.seed, order_hash(samples), mode);
  return train_madcat(train, val, arch, cfg);
}

/// Baseline classifier trained end-to-end for cfg.epochs, then frozen.
inline InitialTrainingResult train_baseline(const std::vector<Sample>& train, const std::vector<Sample>& val,
                                            const ArchConfig& arch, const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw DataError("baseline training: empty training split");
  InitialTrainingResult r;
  r.bundle = build_baseline(arch, cfg.seed ^ detail::kBaselineStream, cfg.optimizer_config());
  auto& b = r.bundle;
  const auto labels = labels_of(train);
  const nn::Matrix x = feature_matrix(train, static_cast<std::size_t>(arch.input_dim));
  const auto n = train.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order =
        detail::epoch_order(n, cfg.seed, detail::kBaselineStream + static_cast<std::uint64_t>(epoch) * 4);
    double sum = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::span<const std::size_t> cols(order.data() + start, std::min(bs, n - start));
      auto trunk = nn::forward_batch(b.encoder, detail::gather_columns(x, cols));
      auto head = nn::forward_batch(b.head, trunk.output);
      nn::Matrix seed_grad(2, static_cast<Eigen::Index>(cols.size()));
      const double scale = 1.0 / static_cast<double>(cols.size());
      for (std::size_t i = 0; i < cols.size(); ++i) {
        const nn::Vector logits = head.output.col(static_cast<Eigen::Index>(i));
        sum += nn::softmax_cross_entropy(logits, labels[cols[i]]);
        seed_grad.col(static_cast<Eigen::Index>(i)) = nn::softmax_cross_entropy_grad(logits, labels[cols[i]], scale);
      }
      auto head_back = nn::backward(b.head, head.tape, seed_grad);
      auto trunk_back = nn::backward(b.encoder, trunk.tape, head_back.input_grad);
      nn::optimizer_step(b.head, head_back.grads, b.head_opt);
      nn::optimizer_step(b.encoder, trunk_back.grads, b.encoder_opt);
    }
    const double mean = sum / static_cast<double>(n);
    if (!std::isfinite(mean)) throw NumericError("non-finite baseline loss");
    r.head_trace.push_back(mean);
  }
  b.frozen = {true, true, true};
  r.train_count = train.size();
  r.val_count = val.size();
  r.validation = validate_model(b, val);
  return r;
}

}  // namespace madcat
