// madcat: generate / train / run / ablate.
//
// Config precedence: built-in preset < --config file < command-line flags.
// The effective configuration is printed and written next to the outputs.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "madcat/experiment.hpp"

namespace fs = std::filesystem;
using namespace madcat;

namespace {

enum Exit { kOk = 0, kUnexpected = 1, kUsage = 2, kConfig = 3, kIo = 4, kData = 5, kNumeric = 6 };

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::config: return kConfig;
    case ErrorKind::io: return kIo;
    case ErrorKind::data: return kData;
    case ErrorKind::numeric: return kNumeric;
  }
  return kUnexpected;
}

struct Flags {
  std::string config_path;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string dataset;
  std::string balancer;
  std::optional<double> mask_ratio;
  std::string reset_policy;
  std::string out;
  std::optional<int> epochs;
  std::string checkpoints;
  std::string output_file;
  std::string axis;
};

RunConfig preset_config(const std::string& name) {
  if (name.empty() || name == "default") return default_run_config();
  if (name == "synthetic") return synthetic_run_config();
  throw ConfigError("unknown preset '" + name + "' (expected default or synthetic)");
}

RunConfig effective_config(const Flags& f) {
  nlohmann::json file;
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw IoError("cannot open config '" + f.config_path + "'");
    try {
      file = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config '" + f.config_path + "': " + e.what());
    }
  }
  std::string preset = f.preset;
  if (preset.empty() && file.is_object() && file.contains("preset")) {
    if (!file["preset"].is_string()) throw ConfigError("config key 'preset' must be a string");
    preset = file["preset"].get<std::string>();
  }
  RunConfig c = preset_config(preset);
  if (!file.is_null()) c = run_config_from_json(file, c);

  if (f.seed) c.seed = *f.seed;
  if (!f.dataset.empty()) c.dataset = f.dataset;
  if (!f.balancer.empty() && f.balancer != "all") c.balancer = balance_source_from_string(f.balancer);
  if (f.mask_ratio) c.set_mask_ratio(*f.mask_ratio);
  if (!f.reset_policy.empty()) c.adapt.reset_policy = reset_policy_from_string(f.reset_policy);
  if (!f.out.empty()) c.out = f.out;
  if (f.epochs) c.train.epochs = c.train.head_epochs = *f.epochs;
  if (c.out.empty()) {
    const char* env = std::getenv("MADCAT_OUT");
    c.out = env && *env ? env : "madcat-out";
  }
  c.resolve_seeds();
  c.validate();
  return c;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
}

std::string in_out(const RunConfig& c, const std::string& name) { return (fs::path(c.out) / name).string(); }

void echo_config(const RunConfig& c, const char* command) {
  ensure_dir(c.out);
  const auto text = to_json(c).dump(2) + "\n";
  std::cout << "effective config (" << command << "):\n" << text;
  detail::write_all(in_out(c, std::string("config.") + command + ".json"), text);
}

Dataset require_dataset(const RunConfig& c) {
  if (c.dataset.empty()) throw ConfigError("no dataset given (use --dataset or the config key 'dataset')");
  auto ds = load_dataset(c.dataset);
  ds.validate();
  if (ds.dim != static_cast<std::size_t>(c.arch.input_dim))
    throw ConfigError("dataset dim " + std::to_string(ds.dim) + " does not match arch.input_dim " +
                      std::to_string(c.arch.input_dim));
  return ds;
}

int cmd_generate(const Flags& f) {
  RunConfig c = effective_config(f);
  if (f.seed) c.drift.seed = *f.seed;
  c.drift.validate();
  echo_config(c, "generate");
  const auto path = f.output_file.empty() ? in_out(c, "dataset.madcat.gz") : f.output_file;
  const auto ds = generate_synthetic_drift(c.drift);
  save_dataset(ds, path);
  std::cerr << "wrote " << ds.samples.size() << " samples (dim " << ds.dim << ", config hash " << ds.config_hash
            << ") to " << path << "\n";
  return kOk;
}

int cmd_train(const Flags& f) {
  const RunConfig c = effective_config(f);
  echo_config(c, "train");
  const auto ds = require_dataset(c);
  const auto split = split_temporal(ds, c.split, c.seed);
  std::cerr << "initial window: " << split.initial_train.size() << " train / " << split.initial_val.size()
            << " validation samples\n";
  const auto models = train_models(split, c);
  save_checkpoint(models.madcat.bundle, in_out(c, "madcat.ckpt.json"));
  save_checkpoint(models.baseline.bundle, in_out(c, "baseline.ckpt.json"));
  detail::write_all(in_out(c, "training_log.jsonl"), models.log.str());
  for (const auto* r : {&models.madcat, &models.baseline})
    std::cerr << (r == &models.madcat ? "madcat" : "baseline") << " validation F1 "
              << detail::fmt6(r->validation.f1) << ", accuracy " << detail::fmt6(r->validation.accuracy) << "\n";
  return kOk;
}

int cmd_run(const Flags& f) {
  const RunConfig c = effective_config(f);
  echo_config(c, "run");
  const auto ds = require_dataset(c);
  const std::string dir = f.checkpoints.empty() ? c.out : f.checkpoints;
  const auto madcat = load_checkpoint((fs::path(dir) / "madcat.ckpt.json").string());
  const auto baseline = load_checkpoint((fs::path(dir) / "baseline.ckpt.json").string());
  if (madcat.kind != ModelKind::madcat || baseline.kind != ModelKind::baseline)
    throw DataError("checkpoint kinds do not match madcat/baseline");
  if (madcat.arch.input_dim != static_cast<int>(ds.dim)) throw DataError("checkpoint input dim does not match dataset");
  const auto split = split_temporal(ds, c.split, c.seed);
  std::vector<BalanceSource> sources{c.balancer};
  if (f.balancer == "all")
    sources = {BalanceSource::ground_truth, BalanceSource::pseudo_random, BalanceSource::pseudo_top_n,
               BalanceSource::pseudo_bucket};
  const auto out = run_experiment(split, madcat, baseline, c, sources);
  detail::write_all(in_out(c, "report.json"), report_json(out.report).dump(2) + "\n");
  detail::write_all(in_out(c, "report.csv"), report_csv(out.report));
  std::string dump;
  for (const auto& [name, results] : out.results) dump += prediction_dump(name, results);
  detail::write_all(in_out(c, "predictions.jsonl"), dump);
  for (const auto& m : out.report.methods)
    std::cerr << m.name << ": mean F1 " << detail::fmt6(m.mean_f1) << ", overall accuracy "
              << detail::fmt6(m.overall_accuracy) << " over " << m.months.size() << " months\n";
  for (const auto& [name, results] : out.results)
    for (const auto& r : results)
      if (!r.note.empty()) std::cerr << name << " " << r.month.str() << ": " << r.note << "\n";
  return kOk;
}

int cmd_ablate(const Flags& f) {
  const RunConfig c = effective_config(f);
  echo_config(c, "ablate");
  const auto axis = ablation_axis_from_string(f.axis);
  const auto ds = require_dataset(c);
  const auto arms = run_ablation(ds, c, axis);
  const auto dir = (fs::path(c.out) / (std::string("ablation_") + to_string(axis))).string();
  ensure_dir(dir);
  detail::write_all((fs::path(dir) / "summary.csv").string(), ablation_table_csv(arms));
  for (const auto& a : arms) {
    if (a.error) {
      std::cerr << a.name << ": failed: " << *a.error << "\n";
      continue;
    }
    detail::write_all((fs::path(dir) / (a.name + ".json")).string(), report_json(a.report).dump(2) + "\n");
    detail::write_all((fs::path(dir) / (a.name + ".csv")).string(), report_csv(a.report));
    std::cerr << a.name << ": mean F1 " << detail::fmt6(a.report.methods.back().mean_f1) << "\n";
  }
  return kOk;
}

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config_path, "JSON config file");
  cmd->add_option("--preset", f.preset, "Built-in base config")->check(CLI::IsMember({"default", "synthetic"}));
  cmd->add_option("--seed", f.seed, "Master seed");
  cmd->add_option("--out", f.out, "Output directory (default: $MADCAT_OUT or ./madcat-out)");
  cmd->add_option("--mask-ratio", f.mask_ratio, "Masking ratio for training and adaptation");
  cmd->add_option("--epochs", f.epochs, "Training and head epochs");
}

void add_data(CLI::App* cmd, Flags& f) {
  cmd->add_option("--dataset", f.dataset, "Dataset file (plain or gzip)");
  cmd->add_option("--reset-policy", f.reset_policy, "cumulative or reset_each_month")
      ->check(CLI::IsMember({"cumulative", "reset_each_month"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked-autoencoder test-time training for malware detection under drift"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("generate", "Write a synthetic drift dataset");
  add_common(gen, f);
  gen->add_option("--output", f.output_file, "Dataset path (default: <out>/dataset.madcat.gz)");

  auto* train = app.add_subcommand("train", "Initial training of the detector and the baseline");
  add_common(train, f);
  add_data(train, f);

  auto* run = app.add_subcommand("run", "Stream adaptation and evaluation; writes reports");
  add_common(run, f);
  add_data(run, f);
  run->add_option("--balancer", f.balancer, "Adaptation balancer, or 'all' for the four strategies")
      ->check(CLI::IsMember({"ground_truth", "pseudo_random", "pseudo_top_n", "pseudo_bucket", "none", "all"}));
  run->add_option("--checkpoints", f.checkpoints, "Directory holding the checkpoints (default: --out)");

  auto* ablate = app.add_subcommand("ablate", "Masking-ratio or balancing ablation");
  add_common(ablate, f);
  add_data(ablate, f);
  ablate->add_option("--axis", f.axis, "masking_ratio or balancing_mode")
      ->required()
      ->check(CLI::IsMember({"masking_ratio", "balancing_mode"}));
  ablate->add_option("--balancer", f.balancer, "Adaptation balancer for the masking arms")
      ->check(CLI::IsMember({"ground_truth", "pseudo_random", "pseudo_top_n", "pseudo_bucket", "none"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) return cmd_generate(f);
    if (train->parsed()) return cmd_train(f);
    if (run->parsed()) return cmd_run(f);
    if (ablate->parsed()) return cmd_ablate(f);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUnexpected;
  }
  return kUsage;
}
