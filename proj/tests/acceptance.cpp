// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails.

#include <chrono>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "madcat/experiment.hpp"
#include "test_support.hpp"

using namespace madcat;
using namespace madcat::testing;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

void report(int id, const char* title, bool ok, const std::string& detail, Clock::time_point start) {
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  std::printf("%s criterion %d (%s): %s [%.1f s]\n", ok ? "PASS" : "FAIL", id, title, detail.c_str(), secs);
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1 -------------------------------------------------------------------------

void gradient_correctness() {
  const auto start = Clock::now();
  Rng rng(20240601);
  double worst = 0.0;
  std::size_t params = 0;
  const int instances = 200;
  for (int i = 0; i < instances; ++i) {
    const auto r = check_gradients(random_instance(rng));
    worst = std::max(worst, r.max_rel_error);
    params += r.parameters_checked;
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  report(1, "gradient correctness", worst < 1e-4 && secs < 60.0,
         fmt("%d random nets, %zu parameters, max relative error %.3g (< 1e-4)", instances, params, worst), start);
}

// 2 -------------------------------------------------------------------------

void masking_properties() {
  const auto start = Clock::now();
  bool counts_ok = true;
  for (int tenths = 0; tenths <= 9 && counts_ok; ++tenths)
    for (std::size_t dim = 1; dim <= 2000 && counts_ok; ++dim) {
      const MaskingConfig cfg{tenths / 10.0, dim};
      const auto m = sample_mask(dim, cfg, dim);
      counts_ok = m.size() == tenths * dim / 10 && std::is_sorted(m.indices.begin(), m.indices.end()) &&
                  std::adjacent_find(m.indices.begin(), m.indices.end()) == m.indices.end() &&
                  (m.empty() || m.indices.back() < dim);
    }

  bool indifferent = true;
  Rng rng(5);
  for (int trial = 0; trial < 500 && indifferent; ++trial) {
    const std::size_t dim = 1 + rng.below(200);
    const auto mask = sample_mask(dim, {0.1 * static_cast<double>(1 + rng.below(9)), 3}, static_cast<std::uint64_t>(trial));
    if (mask.empty()) continue;
    nn::Vector p(static_cast<Eigen::Index>(dim)), t(static_cast<Eigen::Index>(dim));
    for (std::size_t j = 0; j < dim; ++j) {
      p[static_cast<Eigen::Index>(j)] = rng.uniform(0.01, 0.99);
      t[static_cast<Eigen::Index>(j)] = static_cast<double>(rng.below(2));
    }
    const double before = reconstruction_loss(p, t, mask);
    std::set<std::uint32_t> masked(mask.indices.begin(), mask.indices.end());
    for (std::uint32_t j = 0; j < dim; ++j)
      if (!masked.count(j)) p[j] = rng.uniform(0.0, 1.0);
    indifferent = reconstruction_loss(p, t, mask) == before;
  }

  std::vector<int> hits(20, 0);
  for (std::uint64_t draw = 0; draw < 10000; ++draw)
    for (auto i : sample_mask(20, {0.5, 42}, draw).indices) ++hits[i];
  double lo = 1.0, hi = 0.0;
  for (int h : hits) {
    lo = std::min(lo, h / 10000.0);
    hi = std::max(hi, h / 10000.0);
  }
  const bool uniform = lo >= 0.45 && hi <= 0.55;
  report(2, "masking properties", counts_ok && indifferent && uniform,
         fmt("counts exact for dim<=2000 x 10 ratios: %s; unmasked perturbation invariance: %s; "
             "inclusion frequency range [%.4f, %.4f]",
             counts_ok ? "yes" : "no", indifferent ? "yes" : "no", lo, hi),
         start);
}

// 3 -------------------------------------------------------------------------

void freeze_invariants() {
  const auto start = Clock::now();
  auto cfg = small_run(1, 20);
  const auto split = split_temporal(generate_synthetic_drift(cfg.drift), cfg.split, cfg.seed);
  const auto data = initial_data(split, true, cfg.seed);

  auto b = build_madcat(cfg.arch, cfg.train.seed, cfg.train.optimizer_config());
  train_mae(b, feature_matrix(data.train, static_cast<std::size_t>(cfg.arch.input_dim)), cfg.train);
  b.frozen.encoder = true;
  const auto encoder_before = b.encoder;
  train_head(b, data.train, cfg.train);
  b.frozen.head = true;
  const bool encoder_same = b.encoder == encoder_before;

  const auto baseline = train_baseline(data.train, data.val, cfg.arch, cfg.train).bundle;
  const auto head = b.head;
  const std::vector<MonthSplit> months(split.months.begin(), split.months.begin() + 12);
  bool head_same = true;
  for (auto src : {BalanceSource::ground_truth, BalanceSource::pseudo_bucket}) {
    auto adapted = b;
    const auto balancer = make_balancer(src, &baseline, cfg.balancer_seed());
    // Month by month so the head is checked at every boundary.
    for (const auto& m : months) {
      run_stream(adapted, {m}, balancer, cfg.adapt);
      head_same = head_same && adapted.head == head;
    }
    auto full = b;
    run_stream(full, months, balancer, cfg.adapt);
    head_same = head_same && full.head == head && !(full.encoder == b.encoder);
  }
  report(3, "freeze invariants", encoder_same && head_same,
         fmt("encoder bit-identical through head training: %s; head bit-identical at each of 12 month "
             "boundaries (ground_truth and pseudo_bucket streams): %s",
             encoder_same ? "yes" : "no", head_same ? "yes" : "no"),
         start);
}

// 4 -------------------------------------------------------------------------

void protocol_fidelity() {
  const auto start = Clock::now();
  const auto d = default_run_config();
  const bool defaults = d.train.learning_rate == 0.003 && d.train.epochs == 800 && d.train.masking.ratio == 0.3 &&
                        d.adapt.masking.ratio == 0.3 && d.adapt.learning_rate == 0.003 &&
                        d.adapt.steps_per_sample == 1 && d.split.initial_train_fraction == 0.8 &&
                        d.split.adapt_fraction == 0.7;

  bool floors = true;
  for (std::size_t n : {1u, 7u, 10u, 99u, 100u, 101u, 997u}) {
    Dataset ds;
    ds.dim = 4;
    for (int y : {2014, 2015})
      for (std::size_t i = 0; i < n; ++i)
        ds.samples.emplace_back(std::to_string(y) + "-" + std::to_string(i), YearMonth{y, 3},
                                std::vector<std::uint32_t>{}, static_cast<int>(i % 2));
    const auto s = split_temporal(ds, {}, 1);
    floors = floors && s.initial_train.size() == 8 * n / 10 && s.initial_val.size() == n - 8 * n / 10 &&
             s.months.size() == 3 && s.months[2].adapt.size() == 7 * n / 10 &&
             s.months[2].eval.size() == n - 7 * n / 10;
  }

  auto cfg = small_run(2, 10);
  const auto split = split_temporal(generate_synthetic_drift(cfg.drift), cfg.split, cfg.seed);
  const auto models = train_models(split, cfg);
  const auto before = serialize_checkpoint(models.baseline.bundle);
  run_experiment(split, models.madcat.bundle, models.baseline.bundle, cfg,
                 {BalanceSource::ground_truth, BalanceSource::pseudo_random, BalanceSource::pseudo_top_n,
                  BalanceSource::pseudo_bucket});
  const bool frozen = serialize_checkpoint(models.baseline.bundle) == before;
  report(4, "protocol fidelity", defaults && floors && frozen,
         fmt("defaults lr %.3f / %d epochs / ratio %.1f: %s; 80/20 and 70/30 floor splits: %s; baseline "
             "bit-frozen across a %zu-month stream with all balancers: %s",
             d.train.learning_rate, d.train.epochs, d.train.masking.ratio, defaults ? "yes" : "no",
             floors ? "yes" : "no", split.months.size(), frozen ? "yes" : "no"),
         start);
}

// 5 -------------------------------------------------------------------------

bool batch_ok(const BalancedBatch& b) {
  std::size_t count[2] = {0, 0};
  std::set<std::string> ids;
  for (std::size_t i = 0; i < b.samples.size(); ++i) {
    ++count[b.labels[i]];
    if (!ids.insert(b.samples[i].id).second) return false;
  }
  return count[0] == b.per_class_count && count[1] == b.per_class_count && b.per_class_count > 0;
}

std::vector<std::string> ids(const BalancedBatch& b) {
  std::vector<std::string> out;
  for (const auto& s : b.samples) out.push_back(s.id);
  return out;
}

void balancing() {
  const auto start = Clock::now();
  const auto fixture = year_count_fixture({kApiGraphYearlyCounts[0]});
  const auto gt = balance_ground_truth(fixture.samples, 1);
  std::size_t mal = 0, ben = 0;
  for (const auto& s : gt.samples) (*s.truth() == kMalicious ? mal : ben)++;
  const bool table = mal == 3061 && ben == 3061 && batch_ok(gt);

  bool exact = true, deterministic = true;
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Sample> samples;
    std::vector<PseudoLabeledSample> pseudo;
    const auto n = 2 + rng.below(300);
    for (std::size_t i = 0; i < n; ++i) {
      char id[16];
      std::snprintf(id, sizeof id, "a%05zu", i);
      const int truth = static_cast<int>(i < 1 + rng.below(n - 1));
      samples.emplace_back(id, YearMonth{2015, 1}, std::vector<std::uint32_t>{}, truth);
      pseudo.push_back({samples.back().without_label(), static_cast<int>(rng.below(2)), rng.uniform(0.5, 1.0)});
    }
    bool both = false;
    for (const auto& p : pseudo) both = both || p.pseudo_label != pseudo[0].pseudo_label;
    const auto seed = static_cast<std::uint64_t>(trial);
    const auto g = balance_ground_truth(samples, seed);
    exact = exact && batch_ok(g);
    deterministic = deterministic && ids(g) == ids(balance_ground_truth(samples, seed));
    if (!both) continue;
    const BalancedBatch outs[] = {balance_random(pseudo, seed), balance_top_n(pseudo, 0, seed), balance_bucket(pseudo, seed)};
    const BalancedBatch again[] = {balance_random(pseudo, seed), balance_top_n(pseudo, 0, seed), balance_bucket(pseudo, seed)};
    for (int k = 0; k < 3; ++k) {
      exact = exact && batch_ok(outs[k]);
      deterministic = deterministic && ids(outs[k]) == ids(again[k]);
    }
  }

  bool bucket = confidence_bucket(0.87) == 8 && confidence_bucket(0.90) == 9 && confidence_bucket(1.0) == 9;
  {
    std::vector<PseudoLabeledSample> p;
    int k = 0;
    auto add = [&](int label, double conf, int count) {
      for (int i = 0; i < count; ++i) p.push_back({Sample("b" + std::to_string(k++), YearMonth{2015, 1}, {}), label, conf});
    };
    add(kBenign, 0.55, 4);
    add(kBenign, 0.75, 2);
    add(kBenign, 0.95, 6);
    add(kMalicious, 0.99, 30);
    const auto b = balance_bucket(p, 3);
    std::map<int, int> per_bucket;
    for (std::size_t i = 0; i < b.samples.size(); ++i)
      if (b.labels[i] == kBenign)
        for (const auto& x : p)
          if (x.sample.id == b.samples[i].id) ++per_bucket[confidence_bucket(x.confidence)];
    bucket = bucket && per_bucket == std::map<int, int>{{5, 2}, {7, 2}, {9, 2}};
  }
  report(5, "balancing", table && exact && deterministic && bucket,
         fmt("2012 fixture -> %zu + %zu; exact balance over 100 fixtures x 4 strategies: %s; determinism: %s; "
             "bucket rule and (4,2,6) fixture: %s",
             mal, ben, exact ? "yes" : "no", deterministic ? "yes" : "no", bucket ? "yes" : "no"),
         start);
}

// 6-8 -----------------------------------------------------------------------

struct SeedRun {
  std::uint64_t seed;
  MethodSeries baseline, gt, random, top_n, bucket;
  std::map<double, double> ratio_mean_f1;
};

RunConfig acceptance_config(std::uint64_t seed) {
  RunConfig cfg = small_run(seed, 60);
  cfg.drift.seed = seed * 7 + 1;
  return cfg;
}

SeedRun run_seed(std::uint64_t seed) {
  SeedRun r;
  r.seed = seed;
  auto cfg = acceptance_config(seed);
  const auto ds = generate_synthetic_drift(cfg.drift);
  const auto split = split_temporal(ds, cfg.split, cfg.seed);
  const auto models = train_models(split, cfg);
  const auto out = run_experiment(split, models.madcat.bundle, models.baseline.bundle, cfg,
                                  {BalanceSource::ground_truth, BalanceSource::pseudo_random,
                                   BalanceSource::pseudo_top_n, BalanceSource::pseudo_bucket});
  r.baseline = out.report.method("baseline");
  r.gt = out.report.method("madcat-ground_truth");
  r.random = out.report.method("madcat-pseudo_random");
  r.top_n = out.report.method("madcat-pseudo_top_n");
  r.bucket = out.report.method("madcat-pseudo_bucket");
  r.ratio_mean_f1[0.3] = r.gt.mean_f1.value_or(0.0);

  cfg.ablation_ratios = {0.0, 0.1, 0.2, 0.4, 0.5, 0.6};
  for (const auto& arm : run_ablation(ds, cfg, AblationAxis::masking_ratio)) {
    const double ratio = std::stod(arm.name.substr(arm.name.rfind('-') + 1));
    r.ratio_mean_f1[ratio] = arm.error ? -1.0 : arm.report.methods.back().mean_f1.value_or(0.0);
  }
  return r;
}

double mean(const MethodSeries& s) { return s.mean_f1.value_or(0.0); }

void drift_criteria() {
  auto start = Clock::now();
  std::vector<SeedRun> runs;
  for (std::uint64_t seed : {1, 2, 3}) runs.push_back(run_seed(seed));
  const auto stream_done = Clock::now();

  // 6
  int holds = 0;
  std::string detail;
  for (const auto& r : runs) {
    const auto& b = r.baseline;
    const double drop = b.f1.front().value_or(0.0) - b.f1.back().value_or(0.0);
    std::size_t ge = 0;
    for (std::size_t i = 0; i < b.months.size(); ++i) ge += r.gt.f1[i].value_or(0.0) >= b.f1[i].value_or(0.0);
    const double frac = static_cast<double>(ge) / static_cast<double>(b.months.size());
    const bool ok = drop >= 0.1 && mean(r.gt) > mean(b) && frac >= 0.8;
    holds += ok;
    detail += fmt("seed %llu: %zu months, baseline drop %.3f, mean F1 madcat %.4f vs baseline %.4f, madcat>=baseline "
                  "in %.0f%% of months (%s); ",
                  static_cast<unsigned long long>(r.seed), b.months.size(), drop, mean(r.gt), mean(b), 100.0 * frac,
                  ok ? "holds" : "fails");
  }
  report(6, "synthetic drift reproduction", holds >= 2, detail + fmt("%d of 3 seeds", holds), start);

  // 7
  start = stream_done;
  double base = 0.0, gt = 0.0, pr = 0.0, pt = 0.0, pb = 0.0;
  for (const auto& r : runs) {
    base += mean(r.baseline) / 3.0;
    gt += mean(r.gt) / 3.0;
    pr += mean(r.random) / 3.0;
    pt += mean(r.top_n) / 3.0;
    pb += mean(r.bucket) / 3.0;
  }
  bool ok7 = true;
  for (double p : {pr, pt, pb}) ok7 = ok7 && p > base && p <= gt + 0.02;
  report(7, "pseudo-label synergy", ok7,
         fmt("3-seed mean F1: baseline %.4f, ground_truth %.4f, pseudo_random %.4f, pseudo_top_n %.4f, "
             "pseudo_bucket %.4f (each must exceed baseline and stay <= ground_truth + 0.02)",
             base, gt, pr, pt, pb),
         start);

  // 8
  holds = 0;
  detail.clear();
  for (const auto& r : runs) {
    const double zero = r.ratio_mean_f1.at(0.0);
    bool ok = true;
    double lowest = 1.0;
    for (const auto& [ratio, f1] : r.ratio_mean_f1)
      if (ratio > 0.05) {
        ok = ok && zero < f1;
        lowest = std::min(lowest, f1);
      }
    holds += ok;
    detail += fmt("seed %llu: ratio 0.0 mean F1 %.4f, lowest of 0.1-0.6 %.4f (%s); ",
                  static_cast<unsigned long long>(r.seed), zero, lowest, ok ? "holds" : "fails");
  }
  report(8, "masking-ratio ablation", holds >= 2, detail + fmt("%d of 3 seeds", holds), start);
}

}  // namespace

int main() {
  gradient_correctness();
  masking_properties();
  freeze_invariants();
  protocol_fidelity();
  balancing();
  drift_criteria();
  std::printf("%s: %d criteria failed\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
