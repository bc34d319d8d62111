#pragma once

// End-to-end experiment orchestration: run configuration, initial training
// of the detector and the baseline, streamed adaptation/evaluation, and the
// ablation sweeps.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "madcat/adaptation.hpp"
#include "madcat/balancing.hpp"
#include "madcat/data.hpp"
#include "madcat/evaluation.hpp"
#include "madcat/model.hpp"
#include "madcat/training.hpp"

namespace madcat {

enum class AblationAxis { masking_ratio, balancing_mode };

inline const char* to_string(AblationAxis a) {
  return a == AblationAxis::masking_ratio ? "masking_ratio" : "balancing_mode";
}

inline AblationAxis ablation_axis_from_string(const std::string& s) {
  if (s == "masking_ratio") return AblationAxis::masking_ratio;
  if (s == "balancing_mode") return AblationAxis::balancing_mode;
  throw ConfigError("unknown ablation axis '" + s + "' (expected masking_ratio or balancing_mode)");
}

/// Arms of the balancing ablation, both run on the unbalanced stream.
enum class BalancingArm { initial_only, ttt_only };

inline const char* to_string(BalancingArm a) {
  return a == BalancingArm::initial_only ? "balance-initial-only" : "balance-ttt-only";
}

struct RunConfig {
  std::uint64_t seed = 0;
  std::string dataset;
  std::string out;
  ArchConfig arch;
  TrainConfig train;
  AdaptConfig adapt;
  BalanceSource balancer = BalanceSource::ground_truth;
  std::size_t top_n = 0;  // 0: min(pseudo-class sizes)
  bool balance_initial = true;
  SplitConfig split;
  DriftConfig drift;
  std::vector<double> ablation_ratios{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<BalancingArm> ablation_balancing{BalancingArm::initial_only, BalancingArm::ttt_only};

  void set_mask_ratio(double r) {
    train.masking.ratio = r;
    adapt.masking.ratio = r;
  }

  /// Sub-seeds are functions of the master seed so one number reproduces a run.
  void resolve_seeds() {
    train.seed = derive_seed(seed, 1);
    train.masking.seed = derive_seed(seed, 2);
    adapt.seed = derive_seed(seed, 3);
    adapt.masking.seed = derive_seed(seed, 4);
  }

  std::uint64_t balancer_seed() const { return derive_seed(seed, 5); }

  void validate() const {
    arch.validate();
    train.validate();
    adapt.validate();
    split.validate();
    for (double r : ablation_ratios) MaskingConfig{r, 0}.validate();
  }
};

/// The full-size configuration: 1159 features, 800 epochs, lr 0.003, ratio 0.3.
inline RunConfig default_run_config() { return RunConfig{}; }

/// Desk-scale configuration for the synthetic drift stream.
inline RunConfig synthetic_run_config() {
  RunConfig c;
  c.arch.input_dim = 256;
  c.arch.encoder_hidden = {128};
  c.arch.latent = 64;
  c.arch.decoder_hidden = {128};
  c.arch.head_hidden = {32};
  c.train.epochs = 60;
  c.train.head_epochs = 60;
  c.split.initial_begin = {2014, 1};
  c.split.initial_end = {2014, 12};
  c.split.stream_begin = {2015, 1};
  c.split.stream_end = {2017, 12};
  return c;
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["dataset"] = c.dataset;
  j["out"] = c.out;
  j["arch"] = to_json(c.arch);
  auto t = to_json(c.train);
  j["train"] = t;
  j["adapt"] = {{"steps_per_sample", c.adapt.steps_per_sample},
                {"learning_rate", c.adapt.learning_rate},
                {"mask_ratio", c.adapt.masking.ratio},
                {"mask_seed", c.adapt.masking.seed},
                {"reset_policy", to_string(c.adapt.reset_policy)},
                {"update_scope", to_string(c.adapt.update_scope)},
                {"step_mode", to_string(c.adapt.step_mode)},
                {"batch_size", c.adapt.batch_size},
                {"optimizer", nn::to_string(c.adapt.optimizer)},
                {"loss_scope", to_string(c.adapt.loss_scope)},
                {"seed", c.adapt.seed}};
  j["balancer"] = to_string(c.balancer);
  j["top_n"] = c.top_n;
  j["balance_initial"] = c.balance_initial;
  j["split"] = {{"initial_begin", c.split.initial_begin.str()},
                {"initial_end", c.split.initial_end.str()},
                {"stream_begin", c.split.stream_begin.str()},
                {"stream_end", c.split.stream_end.str()},
                {"initial_train_fraction", c.split.initial_train_fraction},
                {"adapt_fraction", c.split.adapt_fraction},
                {"mode", to_string(c.split.mode)}};
  j["drift"] = to_json(c.drift);
  auto arms = nlohmann::ordered_json::array();
  for (auto a : c.ablation_balancing) arms.push_back(to_string(a));
  j["ablation"] = {{"masking_ratio", c.ablation_ratios}, {"balancing_mode", arms}};
  return j;
}

namespace detail {

template <class F>
void for_each_key(const nlohmann::json& j, const char* section, F&& f) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) f(it.key(), it.value());
}

[[noreturn]] inline void unknown_key(const char* section, const std::string& k) {
  throw ConfigError("unknown key '" + k + "' in " + section);
}

}  // namespace detail

/// Overlays the keys present in `j` on `c`. Unknown keys are errors.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c = default_run_config()) {
  try {
    detail::for_each_key(j, "config", [&](const std::string& k, const nlohmann::json& v) {
      if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "dataset") c.dataset = v.get<std::string>();
      else if (k == "out") c.out = v.get<std::string>();
      else if (k == "mask_ratio") c.set_mask_ratio(v.get<double>());
      else if (k == "arch") c.arch = arch_from_json(v, c.arch);
      else if (k == "balancer") c.balancer = balance_source_from_string(v.get<std::string>());
      else if (k == "top_n") c.top_n = v.get<std::size_t>();
      else if (k == "balance_initial") c.balance_initial = v.get<bool>();
      else if (k == "drift") c.drift = drift_config_from_json(v, c.drift);
      else if (k == "train") {
        detail::for_each_key(v, "train", [&](const std::string& tk, const nlohmann::json& tv) {
          auto& t = c.train;
          if (tk == "learning_rate") t.learning_rate = tv.get<double>();
          else if (tk == "epochs") t.epochs = tv.get<int>();
          else if (tk == "mask_ratio") t.masking.ratio = tv.get<double>();
          else if (tk == "mask_seed" || tk == "seed") {}  // derived from the master seed
          else if (tk == "batch_size") t.batch_size = tv.get<int>();
          else if (tk == "head_epochs") t.head_epochs = tv.get<int>();
          else if (tk == "optimizer") t.optimizer = nn::optimizer_from_string(tv.get<std::string>());
          else if (tk == "loss_scope") t.loss_scope = loss_scope_from_string(tv.get<std::string>());
          else if (tk == "fill_mode") t.fill_mode = fill_mode_from_string(tv.get<std::string>());
          else detail::unknown_key("train", tk);
        });
      } else if (k == "adapt") {
        detail::for_each_key(v, "adapt", [&](const std::string& ak, const nlohmann::json& av) {
          auto& a = c.adapt;
          if (ak == "steps_per_sample") a.steps_per_sample = av.get<int>();
          else if (ak == "learning_rate") a.learning_rate = av.get<double>();
          else if (ak == "mask_ratio") a.masking.ratio = av.get<double>();
          else if (ak == "mask_seed" || ak == "seed") {}
          else if (ak == "reset_policy") a.reset_policy = reset_policy_from_string(av.get<std::string>());
          else if (ak == "update_scope") a.update_scope = update_scope_from_string(av.get<std::string>());
          else if (ak == "step_mode") a.step_mode = step_mode_from_string(av.get<std::string>());
          else if (ak == "batch_size") a.batch_size = av.get<int>();
          else if (ak == "optimizer") a.optimizer = nn::optimizer_from_string(av.get<std::string>());
          else if (ak == "loss_scope") a.loss_scope = loss_scope_from_string(av.get<std::string>());
          else detail::unknown_key("adapt", ak);
        });
      } else if (k == "split") {
        detail::for_each_key(v, "split", [&](const std::string& sk, const nlohmann::json& sv) {
          auto& s = c.split;
          auto month = [&] {
            try {
              return YearMonth::parse(sv.get<std::string>());
            } catch (const DataError& e) {
              throw ConfigError("split." + sk + ": " + e.what());
            }
          };
          if (sk == "initial_begin") s.initial_begin = month();
          else if (sk == "initial_end") s.initial_end = month();
          else if (sk == "stream_begin") s.stream_begin = month();
          else if (sk == "stream_end") s.stream_end = month();
          else if (sk == "initial_train_fraction") s.initial_train_fraction = sv.get<double>();
          else if (sk == "adapt_fraction") s.adapt_fraction = sv.get<double>();
          else if (sk == "mode") s.mode = split_mode_from_string(sv.get<std::string>());
          else detail::unknown_key("split", sk);
        });
      } else if (k == "ablation") {
        detail::for_each_key(v, "ablation", [&](const std::string& ak, const nlohmann::json& av) {
          if (ak == "masking_ratio") c.ablation_ratios = av.get<std::vector<double>>();
          else if (ak == "balancing_mode") {
            c.ablation_balancing.clear();
            for (const auto& s : av) {
              const auto name = s.get<std::string>();
              if (name == to_string(BalancingArm::initial_only)) c.ablation_balancing.push_back(BalancingArm::initial_only);
              else if (name == to_string(BalancingArm::ttt_only)) c.ablation_balancing.push_back(BalancingArm::ttt_only);
              else throw ConfigError("unknown balancing arm '" + name + "'");
            }
          } else detail::unknown_key("ablation", ak);
        });
      } else if (k == "preset") {
        // handled by the caller before overlaying
      } else detail::unknown_key("config", k);
    });
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

/// Initial-window data after optional ground-truth balancing.
struct InitialData {
  std::vector<Sample> train;
  std::vector<Sample> val;
};

inline InitialData initial_data(const TemporalSplit& split, bool balance, std::uint64_t seed) {
  if (!balance) return {split.initial_train, split.initial_val};
  return {balance_ground_truth(split.initial_train, derive_seed(seed, 11)).samples,
          balance_ground_truth(split.initial_val, derive_seed(seed, 12)).samples};
}

/// Models produced by the initial training phase.
struct TrainedModels {
  InitialTrainingResult madcat;
  InitialTrainingResult baseline;
  TrainingLog log;
};

inline TrainedModels train_models(const TemporalSplit& split, const RunConfig& cfg) {
  TrainedModels m;
  // The baseline is always trained on the balanced initial window so that
  // every arm shares one comparator.
  const auto balanced = initial_data(split, true, cfg.seed);
  const auto madcat_data = cfg.balance_initial ? balanced : initial_data(split, false, cfg.seed);
  m.log.add({{"record", "config"},
             {"learning_rate", cfg.train.learning_rate},
             {"epochs", cfg.train.epochs},
             {"mask_ratio", cfg.train.masking.ratio},
             {"head_epochs", cfg.train.head_epochs},
             {"batch_size", cfg.train.batch_size},
             {"seed", cfg.seed}});
  m.baseline = train_baseline(balanced.train, balanced.val, cfg.arch, cfg.train);
  m.madcat = train_madcat(madcat_data.train, madcat_data.val, cfg.arch, cfg.train);
  log_traces(m.log, "baseline", m.baseline.head_trace, "classifier");
  log_traces(m.log, "madcat", m.madcat.mae_trace, "mae");
  log_traces(m.log, "madcat", m.madcat.head_trace, "head");
  for (const auto* r : {&m.baseline, &m.madcat}) {
    m.log.add({{"record", "validation"},
               {"model", r == &m.baseline ? "baseline" : "madcat"},
               {"train_count", r->train_count},
               {"val_count", r->val_count},
               {"f1", detail::opt_json(r->validation.f1)},
               {"accuracy", detail::opt_json(r->validation.accuracy)}});
  }
  return m;
}

inline std::string method_name(BalanceSource s) { return std::string("madcat-") + to_string(s); }

struct StreamRun {
  std::vector<MonthResult> madcat;
  ModelBundle adapted;
};

/// Adapts a copy of `madcat` over the stream with the configured balancer.
inline StreamRun run_madcat_stream(const ModelBundle& madcat, const ModelBundle& baseline,
                                   const std::vector<MonthSplit>& months, const RunConfig& cfg,
                                   BalanceSource source) {
  StreamRun r{{}, madcat};
  const auto balancer = make_balancer(source, &baseline, cfg.balancer_seed(), cfg.top_n);
  r.madcat = run_stream(r.adapted, months, balancer, cfg.adapt);
  return r;
}

struct ExperimentOutcome {
  ExperimentReport report;
  std::vector<std::pair<std::string, std::vector<MonthResult>>> results;
};

/// Baseline plus one MADCAT arm per entry of `sources`, all on the same
/// evaluation splits.
inline ExperimentOutcome run_experiment(const TemporalSplit& split, const ModelBundle& madcat,
                                        const ModelBundle& baseline, const RunConfig& cfg,
                                        const std::vector<BalanceSource>& sources) {
  ExperimentOutcome out;
  out.results.emplace_back("baseline", evaluate_stream(baseline, split.months));
  for (auto s : sources)
    out.results.emplace_back(method_name(s), run_madcat_stream(madcat, baseline, split.months, cfg, s).madcat);
  out.report = assemble_report(out.results, to_json(cfg), cfg.seed);
  return out;
}

struct AblationArm {
  std::string name;
  ExperimentReport report;
  std::optional<std::string> error;
};

/// One full pipeline run per value of `axis`, sharing the evaluation splits
/// and the baseline. Failing arms are reported with their error.
inline std::vector<AblationArm> run_ablation(const Dataset& ds, RunConfig base, AblationAxis axis) {
  base.resolve_seeds();
  base.validate();
  const auto split = split_temporal(ds, base.split, base.seed);
  const auto balanced = initial_data(split, true, base.seed);
  const auto baseline = train_baseline(balanced.train, balanced.val, base.arch, base.train).bundle;
  const auto baseline_results = evaluate_stream(baseline, split.months);

  std::vector<AblationArm> arms;
  auto run_arm = [&](const std::string& name, RunConfig cfg, bool balance_initial, BalanceSource ttt_source) {
    AblationArm arm;
    arm.name = name;
    try {
      const auto data = balance_initial ? balanced : initial_data(split, false, cfg.seed);
      const auto madcat = train_madcat(data.train, data.val, cfg.arch, cfg.train).bundle;
      auto stream = run_madcat_stream(madcat, baseline, split.months, cfg, ttt_source);
      arm.report = assemble_report({{"baseline", baseline_results}, {name, stream.madcat}}, to_json(cfg), cfg.seed);
    } catch (const Error& e) {
      arm.error = e.what();
    }
    arms.push_back(std::move(arm));
  };

  if (axis == AblationAxis::masking_ratio) {
    for (double r : base.ablation_ratios) {
      RunConfig cfg = base;
      cfg.set_mask_ratio(r);
      char name[32];
      std::snprintf(name, sizeof name, "madcat-ratio-%.1f", r);
      run_arm(name, cfg, cfg.balance_initial, cfg.balancer);
    }
  } else {
    for (auto a : base.ablation_balancing) {
      RunConfig cfg = base;
      const bool initial = a == BalancingArm::initial_only;
      cfg.balance_initial = initial;
      run_arm(to_string(a), cfg, initial, initial ? BalanceSource::none : BalanceSource::ground_truth);
    }
  }
  return arms;
}

/// One row per arm: name, mean F1, pooled accuracy, baseline mean F1.
inline std::string ablation_table_csv(const std::vector<AblationArm>& arms) {
  std::string out = "arm,mean_f1,overall_accuracy,baseline_mean_f1,error\n";
  for (const auto& a : arms) {
    if (a.error) {
      std::string e = *a.error;
      for (auto& ch : e)
        if (ch == ',' || ch == '\n') ch = ';';
      out += a.name + ",,,," + e + "\n";
      continue;
    }
    const auto& m = a.report.methods.back();
    out += a.name + "," + detail::fmt6(m.mean_f1) + "," + detail::fmt6(m.overall_accuracy) + "," +
           detail::fmt6(a.report.method("baseline").mean_f1) + ",\n";
  }
  return out;
}

}  // namespace madcat
