#pragma once

// Test-time training: per-sample masked-reconstruction updates of the
// encoder (and by default the decoder) on each month's balanced adaptation
// split, followed by classification of that month's evaluation split with
// the adapted encoder and the frozen head.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "madcat/balancing.hpp"
#include "madcat/data.hpp"
#include "madcat/errors.hpp"
#include "madcat/masking.hpp"
#include "madcat/metrics.hpp"
#include "madcat/model.hpp"
#include "madcat/training.hpp"

namespace madcat {

enum class ResetPolicy { cumulative, reset_each_month };
enum class UpdateScope { encoder_only, encoder_and_decoder };
/// online: batch-of-one steps, each sample visited once. month_epoch: one
/// pass over the month in minibatches of AdaptConfig::batch_size.
enum class StepMode { online, month_epoch };

inline const char* to_string(ResetPolicy p) { return p == ResetPolicy::cumulative ? "cumulative" : "reset_each_month"; }
inline const char* to_string(UpdateScope s) { return s == UpdateScope::encoder_only ? "encoder_only" : "encoder_and_decoder"; }
inline const char* to_string(StepMode m) { return m == StepMode::online ? "online" : "month_epoch"; }

inline ResetPolicy reset_policy_from_string(const std::string& s) {
  if (s == "cumulative") return ResetPolicy::cumulative;
  if (s == "reset_each_month") return ResetPolicy::reset_each_month;
  throw ConfigError("unknown reset policy '" + s + "' (expected cumulative or reset_each_month)");
}

inline UpdateScope update_scope_from_string(const std::string& s) {
  if (s == "encoder_only") return UpdateScope::encoder_only;
  if (s == "encoder_and_decoder") return UpdateScope::encoder_and_decoder;
  throw ConfigError("unknown update scope '" + s + "' (expected encoder_only or encoder_and_decoder)");
}

inline StepMode step_mode_from_string(const std::string& s) {
  if (s == "online") return StepMode::online;
  if (s == "month_epoch") return StepMode::month_epoch;
  throw ConfigError("unknown step mode '" + s + "' (expected online or month_epoch)");
}

struct AdaptConfig {
  int steps_per_sample = 1;
  double learning_rate = 0.003;
  MaskingConfig masking{0.3, 0};
  ResetPolicy reset_policy = ResetPolicy::cumulative;
  UpdateScope update_scope = UpdateScope::encoder_and_decoder;
  StepMode step_mode = StepMode::online;
  int batch_size = 128;
  nn::OptimizerMethod optimizer = nn::OptimizerMethod::adam;
  LossScope loss_scope = LossScope::masked_only;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps_per_sample <= 0) throw ConfigError("adapt.steps_per_sample must be positive");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("adapt.learning_rate must be positive");
    if (batch_size <= 0) throw ConfigError("adapt.batch_size must be positive");
    masking.validate();
  }

  nn::OptimizerConfig optimizer_config() const {
    nn::OptimizerConfig c;
    c.method = optimizer;
    c.learning_rate = learning_rate;
    return c;
  }
};

/// Fresh encoder/decoder optimizer state at the adaptation learning rate.
inline void begin_adaptation(ModelBundle& b, const AdaptConfig& cfg) {
  b.encoder_opt = nn::OptimizerState::for_net(b.encoder, cfg.optimizer_config());
  if (b.has_decoder()) b.decoder_opt = nn::OptimizerState::for_net(b.decoder, cfg.optimizer_config());
}

struct TttOutcome {
  int steps = 0;
  int skipped = 0;
};

inline void require_frozen_head(const ModelBundle& b) {
  if (b.kind != ModelKind::madcat) throw ConfigError("test-time training needs a detector with a decoder");
  if (!b.frozen.head) throw ConfigError("test-time training requires a frozen head");
}

/// cfg.steps_per_sample reconstruction steps on one sample. Masks come from
/// (cfg.masking.seed, draw_index * steps_per_sample + k). A non-finite loss
/// skips that step; a zero-ratio mask is an error, as in reconstruction_loss.
inline TttOutcome ttt_step(ModelBundle& b, const Sample& sample, const AdaptConfig& cfg, std::uint64_t draw_index) {
  cfg.validate();
  require_frozen_head(b);
  const auto dim = static_cast<std::size_t>(b.arch.input_dim);
  sample.validate(dim);
  const nn::Matrix x = nn::Matrix(densify(sample, dim));
  const bool update_decoder = cfg.update_scope == UpdateScope::encoder_and_decoder;
  TttOutcome out;
  for (int k = 0; k < cfg.steps_per_sample; ++k) {
    const auto draw = draw_index * static_cast<std::uint64_t>(cfg.steps_per_sample) + static_cast<std::uint64_t>(k);
    std::vector<MaskSpec> masks{sample_mask(dim, cfg.masking, draw)};
    if (cfg.loss_scope == LossScope::masked_only && masks[0].empty())
      throw DataError("empty mask: masking ratio " + std::to_string(cfg.masking.ratio) +
                      " hides no feature, so there is no reconstruction target");
    try {
      reconstruction_step(b, x, masks, cfg.loss_scope, true, update_decoder);
      ++out.steps;
    } catch (const NumericError&) {
      ++out.skipped;
    }
  }
  return out;
}

struct AdaptOutcome {
  std::size_t sample_count = 0;
  std::size_t steps = 0;
  std::size_t skipped_steps = 0;
  bool no_adapt = false;
};

/// Restores the adaptable parts of `b` from `checkpoint` and resets the
/// adaptation optimizer state.
inline void reset_to_checkpoint(ModelBundle& b, const ModelBundle& checkpoint, const AdaptConfig& cfg) {
  b.encoder = checkpoint.encoder;
  b.decoder = checkpoint.decoder;
  b.mask_fill = checkpoint.mask_fill;
  begin_adaptation(b, cfg);
}

/// Adapts on every sample of the split in a seeded shuffled order. `month`
/// seeds the order and mask streams. Labels in the batch are never read.
inline AdaptOutcome adapt_month(ModelBundle& b, const BalancedBatch& split, const AdaptConfig& cfg, YearMonth month,
                                const ModelBundle* checkpoint = nullptr) {
  cfg.validate();
  require_frozen_head(b);
  if (cfg.reset_policy == ResetPolicy::reset_each_month) {
    if (!checkpoint) throw ConfigError("reset_each_month needs the initial checkpoint");
    reset_to_checkpoint(b, *checkpoint, cfg);
  }
  AdaptOutcome out;
  if (split.samples.empty()) {
    out.no_adapt = true;
    return out;
  }
  const auto n = split.samples.size();
  const auto month_stream = static_cast<std::uint64_t>(month.index());
  const auto order = detail::epoch_order(n, cfg.seed, derive_seed(month_stream, 0x74747400));
  const std::uint64_t draw_base = month_stream << 24;
  if (cfg.step_mode == StepMode::online) {
    for (std::size_t pos = 0; pos < n; ++pos) {
      const auto r = ttt_step(b, split.samples[order[pos]], cfg, draw_base + pos);
      out.steps += static_cast<std::size_t>(r.steps);
      out.skipped_steps += static_cast<std::size_t>(r.skipped);
    }
  } else {
    const auto dim = static_cast<std::size_t>(b.arch.input_dim);
    const nn::Matrix x = feature_matrix(split.samples, dim);
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (int k = 0; k < cfg.steps_per_sample; ++k) {
      for (std::size_t start = 0; start < n; start += bs) {
        const std::span<const std::size_t> cols(order.data() + start, std::min(bs, n - start));
        std::vector<MaskSpec> masks;
        for (std::size_t i = 0; i < cols.size(); ++i) {
          masks.push_back(sample_mask(dim, cfg.masking, draw_base + (static_cast<std::uint64_t>(k) * n + start + i)));
          if (cfg.loss_scope == LossScope::masked_only && masks.back().empty())
            throw DataError("empty mask: masking ratio hides no feature, so there is no reconstruction target");
        }
        try {
          reconstruction_step(b, detail::gather_columns(x, cols), masks, cfg.loss_scope, true,
                              cfg.update_scope == UpdateScope::encoder_and_decoder);
          ++out.steps;
        } catch (const NumericError&) {
          ++out.skipped_steps;
        }
      }
    }
  }
  out.sample_count = n;
  return out;
}

struct PredictionRecord {
  std::string id;
  int truth = kBenign;
  Prediction prediction;
};

struct MonthMetrics {
  Confusion confusion;
  std::optional<double> f1;
  std::optional<double> accuracy;
  std::optional<double> benign_accuracy;
  std::optional<double> malicious_accuracy;
};

inline MonthMetrics metrics_from_confusion(const Confusion& c) {
  MonthMetrics m;
  m.confusion = c;
  m.f1 = f1_score(c);
  m.accuracy = accuracy(c);
  const auto pc = per_class_accuracy(c);
  m.benign_accuracy = pc.benign;
  m.malicious_accuracy = pc.malicious;
  return m;
}

struct MonthResult {
  YearMonth month;
  std::vector<PredictionRecord> predictions;
  MonthMetrics metrics;
  std::size_t adaptation_sample_count = 0;
  std::size_t skipped_steps = 0;
  bool eval_skipped = false;  // empty evaluation split
  bool no_adapt = false;      // nothing was adapted this month
  std::string note;           // reason for no_adapt / errors
  std::uint64_t eval_hash = 0;
};

/// Classifies the clean evaluation split and scores it against ground truth.
inline MonthResult evaluate_month(const ModelBundle& b, const std::vector<Sample>& eval_split, YearMonth month) {
  MonthResult r;
  r.month = month;
  r.eval_hash = order_hash(eval_split);
  if (eval_split.empty()) {
    r.eval_skipped = true;
    return r;
  }
  const auto preds = classify_batch(b, feature_matrix(eval_split, static_cast<std::size_t>(b.arch.input_dim)));
  Confusion c;
  for (std::size_t i = 0; i < eval_split.size(); ++i) {
    const int truth = require_label(eval_split[i]);
    c.add(truth, preds[i].label);
    r.predictions.push_back({eval_split[i].id, truth, preds[i]});
  }
  r.metrics = metrics_from_confusion(c);
  return r;
}

/// Produces the month's adaptation set from its adaptation split.
struct Balancer {
  BalanceSource source = BalanceSource::ground_truth;
  std::function<BalancedBatch(const std::vector<Sample>&, YearMonth)> fn;
  bool reads_ground_truth = false;
};

inline Balancer make_balancer(BalanceSource source, const ModelBundle* base_model, std::uint64_t seed,
                              std::size_t top_n = 0) {
  Balancer b;
  b.source = source;
  auto month_seed = [seed](YearMonth m) { return derive_seed(seed, static_cast<std::uint64_t>(m.index())); };
  if (source != BalanceSource::ground_truth && source != BalanceSource::none && !base_model)
    throw ConfigError(std::string("balancer ") + to_string(source) + " needs a base model");
  switch (source) {
    case BalanceSource::ground_truth:
      b.reads_ground_truth = true;
      b.fn = [=](const std::vector<Sample>& s, YearMonth m) { return balance_ground_truth(s, month_seed(m)); };
      break;
    case BalanceSource::pseudo_random:
      b.fn = [=](const std::vector<Sample>& s, YearMonth m) {
        return balance_random(pseudo_label(s, *base_model), month_seed(m));
      };
      break;
    case BalanceSource::pseudo_top_n:
      b.fn = [=](const std::vector<Sample>& s, YearMonth m) {
        return balance_top_n(pseudo_label(s, *base_model), top_n, month_seed(m));
      };
      break;
    case BalanceSource::pseudo_bucket:
      b.fn = [=](const std::vector<Sample>& s, YearMonth m) {
        return balance_bucket(pseudo_label(s, *base_model), month_seed(m));
      };
      break;
    case BalanceSource::none:
      b.fn = [](const std::vector<Sample>& s, YearMonth) { return passthrough(s); };
      break;
  }
  return b;
}

inline std::vector<Sample> strip_labels(const std::vector<Sample>& samples) {
  std::vector<Sample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.without_label());
  return out;
}

/// For each month in order: balance, adapt, evaluate. `checkpoint` is the
/// post-initial-training bundle used by reset_each_month. Failures in the
/// balance/adapt phase mark the month no_adapt and evaluation proceeds with
/// the incoming bundle.
inline std::vector<MonthResult> run_stream(ModelBundle& b, const std::vector<MonthSplit>& months,
                                           const Balancer& balancer, const AdaptConfig& cfg) {
  cfg.validate();
  require_frozen_head(b);
  for (std::size_t i = 1; i < months.size(); ++i)
    if (!(months[i - 1].month < months[i].month)) throw DataError("stream months must be strictly increasing");
  const ModelBundle checkpoint = b;
  begin_adaptation(b, cfg);
  std::vector<MonthResult> results;
  for (const auto& m : months) {
    AdaptOutcome adapt;
    std::string note;
    try {
      const auto input = balancer.reads_ground_truth ? m.adapt : strip_labels(m.adapt);
      BalancedBatch batch;
      if (!input.empty()) batch = balancer.fn(input, m.month);
      batch.samples = strip_labels(batch.samples);
      for (const auto& w : batch.warnings) note += (note.empty() ? "" : "; ") + w;
      adapt = adapt_month(b, batch, cfg, m.month, &checkpoint);
      if (adapt.no_adapt) note += (note.empty() ? "" : "; ") + std::string("empty adaptation split");
    } catch (const Error& e) {
      adapt.no_adapt = true;
      note += (note.empty() ? "" : "; ") + std::string(e.what());
    }
    MonthResult r = evaluate_month(b, m.eval, m.month);
    r.adaptation_sample_count = adapt.sample_count;
    r.skipped_steps = adapt.skipped_steps;
    r.no_adapt = adapt.no_adapt;
    r.note = note;
    results.push_back(std::move(r));
  }
  return results;
}

/// Evaluation-only pass for a frozen comparator (the baseline).
inline std::vector<MonthResult> evaluate_stream(const ModelBundle& b, const std::vector<MonthSplit>& months) {
  std::vector<MonthResult> results;
  for (const auto& m : months) {
    auto r = evaluate_month(b, m.eval, m.month);
    r.no_adapt = true;
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace madcat
