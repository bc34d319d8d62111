#include <gtest/gtest.h>

#include <cstdio>

#include "madcat/adaptation.hpp"
#include "madcat/evaluation.hpp"

namespace madcat {
namespace {

ArchConfig arch32() { return ArchConfig{32, {16}, 8, {16}, {4}}; }

ModelBundle frozen_detector(std::uint64_t seed = 1) {
  auto b = build_madcat(arch32(), seed);
  b.frozen.encoder = true;
  b.frozen.head = true;
  return b;
}

Sample sample_with(std::vector<std::uint32_t> f, std::optional<int> label = {}) {
  return Sample("t", YearMonth{2015, 1}, std::move(f), label);
}

TemporalSplit small_stream(int stream_months, std::size_t per_month = 60) {
  DriftConfig d;
  d.dim = 32;
  d.months = 12 + stream_months;
  d.samples_per_month = per_month;
  d.imbalance = 2.0;
  d.drift_rate = 0.05;
  SplitConfig s;
  s.initial_begin = {2014, 1};
  s.initial_end = {2014, 12};
  s.stream_begin = {2015, 1};
  s.stream_end = {2018, 12};
  return split_temporal(generate_synthetic_drift(d), s, 3);
}

TEST(AdaptConfig, DefaultsToOneOnlineStepPerSample) {
  const AdaptConfig c;
  EXPECT_EQ(c.steps_per_sample, 1);
  EXPECT_EQ(c.learning_rate, 0.003);
  EXPECT_EQ(c.reset_policy, ResetPolicy::cumulative);
  EXPECT_EQ(c.update_scope, UpdateScope::encoder_and_decoder);
  EXPECT_EQ(c.step_mode, StepMode::online);
}

TEST(TttStep, SingleStepAdvancesCounterByOne) {
  auto b = frozen_detector();
  AdaptConfig cfg;
  begin_adaptation(b, cfg);
  const auto r = ttt_step(b, sample_with({1, 4, 9, 20}), cfg, 0);
  EXPECT_EQ(r.steps, 1);
  EXPECT_EQ(b.encoder_opt.step, 1u);
  EXPECT_EQ(b.decoder_opt.step, 1u);
  cfg.steps_per_sample = 3;
  ttt_step(b, sample_with({2}), cfg, 1);
  EXPECT_EQ(b.encoder_opt.step, 4u);
}

TEST(TttStep, ZeroRatioIsAnError) {
  auto b = frozen_detector();
  AdaptConfig cfg;
  cfg.masking.ratio = 0.0;
  EXPECT_THROW(ttt_step(b, sample_with({1}), cfg, 0), DataError);
  EXPECT_EQ(b.encoder_opt.step, 0u);
}

TEST(TttStep, OnlyUpdateScopeChanges) {
  auto b = frozen_detector();
  const auto before = b;
  AdaptConfig cfg;
  cfg.update_scope = UpdateScope::encoder_only;
  for (std::uint64_t i = 0; i < 20; ++i) ttt_step(b, sample_with({static_cast<std::uint32_t>(i), 25}), cfg, i);
  EXPECT_FALSE(b.encoder == before.encoder);
  EXPECT_EQ(b.decoder, before.decoder);
  EXPECT_EQ(b.head, before.head);
  cfg.update_scope = UpdateScope::encoder_and_decoder;
  ttt_step(b, sample_with({3}), cfg, 99);
  EXPECT_FALSE(b.decoder == before.decoder);
  EXPECT_EQ(b.head, before.head);
}

TEST(TttStep, RequiresFrozenHeadAndDecoder) {
  auto b = build_madcat(arch32(), 1);
  EXPECT_THROW(ttt_step(b, sample_with({1}), {}, 0), ConfigError);
  auto base = build_baseline(arch32(), 1);
  base.frozen = {true, true, true};
  EXPECT_THROW(ttt_step(base, sample_with({1}), {}, 0), ConfigError);
  auto ok = frozen_detector();
  EXPECT_THROW(ttt_step(ok, sample_with({40}), {}, 0), DataError);
}

TEST(TttStep, NonFiniteLossIsSkippedAndCounted) {
  auto b = frozen_detector();
  b.encoder.layers()[0].weight(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const auto head = b.head;
  const auto r = ttt_step(b, sample_with({0, 1, 2, 3, 4, 5, 6, 7}), {}, 0);
  EXPECT_EQ(r.steps + r.skipped, 1);
  EXPECT_EQ(b.head, head);
}

BalancedBatch batch_of(const std::vector<Sample>& s) { return passthrough(strip_labels(s)); }

TEST(AdaptMonth, KSamplesAdvanceCounterByK) {
  auto b = frozen_detector();
  AdaptConfig cfg;
  begin_adaptation(b, cfg);
  const auto months = small_stream(1);
  const auto r = adapt_month(b, batch_of(months.months[0].adapt), cfg, months.months[0].month);
  EXPECT_EQ(r.sample_count, 42u);
  EXPECT_EQ(b.encoder_opt.step, 42u);
  EXPECT_EQ(r.steps, 42u);
}

TEST(AdaptMonth, MonthEpochModeStepsPerMinibatch) {
  auto b = frozen_detector();
  AdaptConfig cfg;
  cfg.step_mode = StepMode::month_epoch;
  cfg.batch_size = 10;
  begin_adaptation(b, cfg);
  const auto months = small_stream(1);
  adapt_month(b, batch_of(months.months[0].adapt), cfg, months.months[0].month);
  EXPECT_EQ(b.encoder_opt.step, 5u);
}

TEST(AdaptMonth, EmptySplitMarksNoAdapt) {
  auto b = frozen_detector();
  const auto before = b;
  const auto r = adapt_month(b, BalancedBatch{}, {}, YearMonth{2015, 1});
  EXPECT_TRUE(r.no_adapt);
  EXPECT_TRUE(b == before);
}

TEST(AdaptMonth, DoesNotReadLabels) {
  auto b = frozen_detector();
  const auto months = small_stream(1);
  BalancedBatch batch;
  batch.samples = months.months[0].adapt;  // labels still attached
  const auto reads = LabelAudit::reads();
  adapt_month(b, batch, {}, months.months[0].month);
  EXPECT_EQ(LabelAudit::reads(), reads);
}

TEST(AdaptMonth, ResetPolicyRestoresCheckpoint) {
  const auto months = small_stream(2);
  auto b = frozen_detector();
  const auto checkpoint = b;
  AdaptConfig cfg;
  cfg.reset_policy = ResetPolicy::reset_each_month;
  adapt_month(b, batch_of(months.months[0].adapt), cfg, months.months[0].month, &checkpoint);
  EXPECT_FALSE(b.encoder == checkpoint.encoder);
  // Month 2 after reset must match a fresh run on month 2 alone.
  auto fresh = checkpoint;
  adapt_month(b, batch_of(months.months[1].adapt), cfg, months.months[1].month, &checkpoint);
  adapt_month(fresh, batch_of(months.months[1].adapt), cfg, months.months[1].month, &checkpoint);
  EXPECT_EQ(b.encoder, fresh.encoder);
  EXPECT_THROW(adapt_month(b, batch_of(months.months[1].adapt), cfg, months.months[1].month), ConfigError);
}

TEST(AdaptMonth, CumulativeCarriesState) {
  const auto months = small_stream(2);
  auto b = frozen_detector();
  AdaptConfig cfg;
  begin_adaptation(b, cfg);
  adapt_month(b, batch_of(months.months[0].adapt), cfg, months.months[0].month);
  const auto end_of_first = b;
  // Adapting month 2 from the end-of-month-1 state equals a continuous run.
  auto continued = end_of_first;
  adapt_month(b, batch_of(months.months[1].adapt), cfg, months.months[1].month);
  adapt_month(continued, batch_of(months.months[1].adapt), cfg, months.months[1].month);
  EXPECT_TRUE(b == continued);
  EXPECT_EQ(b.encoder_opt.step, 84u);
}

TEST(EvaluateMonth, PerfectAndFormulaCases) {
  Confusion c;
  for (int i = 0; i < 5; ++i) c.add(kMalicious, kMalicious);
  for (int i = 0; i < 7; ++i) c.add(kBenign, kBenign);
  const auto perfect = metrics_from_confusion(c);
  EXPECT_EQ(*perfect.f1, 1.0);
  EXPECT_EQ(*perfect.benign_accuracy, 1.0);
  EXPECT_EQ(*perfect.malicious_accuracy, 1.0);
  const auto m = metrics_from_confusion(Confusion{2, 2, 0, 0});
  EXPECT_NEAR(*m.f1, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(*m.accuracy, 0.5);
}

TEST(EvaluateMonth, EmptyEvalSplitIsSkipped) {
  const auto r = evaluate_month(frozen_detector(), {}, YearMonth{2015, 3});
  EXPECT_TRUE(r.eval_skipped);
  EXPECT_FALSE(r.metrics.f1.has_value());
}

TEST(EvaluateMonth, MetricsComeFromPredictions) {
  const auto months = small_stream(1);
  const auto r = evaluate_month(frozen_detector(), months.months[0].eval, months.months[0].month);
  Confusion c;
  for (const auto& p : r.predictions) c.add(p.truth, p.prediction.label);
  EXPECT_EQ(c.tp, r.metrics.confusion.tp);
  EXPECT_EQ(c.tn, r.metrics.confusion.tn);
  EXPECT_EQ(r.predictions.size(), months.months[0].eval.size());
}

TEST(RunStream, FortyEightMonthsInOrderWithFrozenHeadAndBaseline) {
  const auto split = small_stream(48, 30);
  ASSERT_EQ(split.months.size(), 48u);
  auto b = frozen_detector();
  const auto head = b.head;
  auto base = build_baseline(arch32(), 2);
  base.frozen = {true, true, true};
  const auto base_text = serialize_checkpoint(base);
  const auto results = run_stream(b, split.months, make_balancer(BalanceSource::pseudo_random, &base, 1), {});
  ASSERT_EQ(results.size(), 48u);
  for (std::size_t i = 0; i < 48; ++i) EXPECT_EQ(results[i].month, YearMonth(2015, 1).plus(static_cast<int>(i)));
  EXPECT_EQ(b.head, head);
  const auto base_results = evaluate_stream(base, split.months);
  EXPECT_EQ(serialize_checkpoint(base), base_text);
  for (std::size_t i = 0; i < 48; ++i) EXPECT_EQ(base_results[i].eval_hash, results[i].eval_hash);
}

TEST(RunStream, HeadBitIdenticalAtEveryMonthBoundary) {
  const auto split = small_stream(6);
  auto b = frozen_detector();
  const auto head = b.head;
  AdaptConfig cfg;
  for (const auto& m : split.months) {
    run_stream(b, {m}, make_balancer(BalanceSource::ground_truth, nullptr, 1), cfg);
    ASSERT_EQ(b.head, head) << m.month.str();
  }
}

TEST(RunStream, PseudoBalancersNeverReadStreamLabels) {
  const auto split = small_stream(3);
  auto base = build_baseline(arch32(), 2);
  base.frozen = {true, true, true};
  for (auto src : {BalanceSource::pseudo_random, BalanceSource::pseudo_top_n, BalanceSource::pseudo_bucket,
                   BalanceSource::none}) {
    auto b = frozen_detector();
    // Stream with labels stripped from the eval splits too, so any read
    // during balancing or adaptation would show up in the counter.
    auto months = split.months;
    for (auto& m : months) m.eval.clear();
    const auto reads = LabelAudit::reads();
    run_stream(b, months, make_balancer(src, &base, 1), {});
    EXPECT_EQ(LabelAudit::reads(), reads) << to_string(src);
  }
}

TEST(RunStream, BalancerChoiceNeverChangesEvalSplits) {
  const auto split = small_stream(4);
  auto base = build_baseline(arch32(), 2);
  base.frozen = {true, true, true};
  auto a = frozen_detector(), b = frozen_detector();
  const auto ra = run_stream(a, split.months, make_balancer(BalanceSource::ground_truth, nullptr, 1), {});
  const auto rb = run_stream(b, split.months, make_balancer(BalanceSource::pseudo_bucket, &base, 1), {});
  for (std::size_t i = 0; i < ra.size(); ++i) {
    EXPECT_EQ(ra[i].eval_hash, rb[i].eval_hash);
    ASSERT_EQ(ra[i].predictions.size(), rb[i].predictions.size());
    for (std::size_t j = 0; j < ra[i].predictions.size(); ++j)
      EXPECT_EQ(ra[i].predictions[j].id, rb[i].predictions[j].id);
  }
}

TEST(RunStream, DeterministicSeries) {
  const auto split = small_stream(4);
  auto a = frozen_detector(), b = frozen_detector();
  const auto ra = run_stream(a, split.months, make_balancer(BalanceSource::ground_truth, nullptr, 1), {});
  const auto rb = run_stream(b, split.months, make_balancer(BalanceSource::ground_truth, nullptr, 1), {});
  for (std::size_t i = 0; i < ra.size(); ++i) {
    EXPECT_EQ(ra[i].metrics.f1, rb[i].metrics.f1);
    for (std::size_t j = 0; j < ra[i].predictions.size(); ++j)
      EXPECT_EQ(ra[i].predictions[j].prediction.probabilities[1], rb[i].predictions[j].prediction.probabilities[1]);
  }
  EXPECT_TRUE(a == b);
}

TEST(RunStream, EmptyMonthsAndSingleClassMonthsContinue) {
  auto split = small_stream(3);
  split.months[1].adapt.clear();
  split.months[1].eval.clear();
  split.months[1].empty = true;
  // Month 3 adaptation has only benign samples: ground-truth balancing fails.
  std::vector<Sample> benign;
  for (const auto& s : split.months[2].adapt)
    if (*s.truth() == kBenign) benign.push_back(s);
  split.months[2].adapt = benign;
  auto b = frozen_detector();
  const auto r = run_stream(b, split.months, make_balancer(BalanceSource::ground_truth, nullptr, 1), {});
  ASSERT_EQ(r.size(), 3u);
  EXPECT_FALSE(r[0].no_adapt);
  EXPECT_TRUE(r[1].no_adapt);
  EXPECT_TRUE(r[1].eval_skipped);
  EXPECT_TRUE(r[2].no_adapt);
  EXPECT_NE(r[2].note.find("malicious"), std::string::npos);
  EXPECT_FALSE(r[2].eval_skipped);
}

TEST(RunStream, ZeroRatioMonthsAreNoAdapt) {
  const auto split = small_stream(2);
  auto b = frozen_detector();
  const auto before = b;
  AdaptConfig cfg;
  cfg.masking.ratio = 0.0;
  const auto r = run_stream(b, split.months, make_balancer(BalanceSource::ground_truth, nullptr, 1), cfg);
  for (const auto& m : r) EXPECT_TRUE(m.no_adapt);
  EXPECT_EQ(b.encoder, before.encoder);
}

TEST(RunStream, RejectsUnorderedMonths) {
  auto split = small_stream(2);
  std::swap(split.months[0], split.months[1]);
  auto b = frozen_detector();
  EXPECT_THROW(run_stream(b, split.months, make_balancer(BalanceSource::ground_truth, nullptr, 1), {}), DataError);
}

TEST(RunStream, OrderSensitivityIsReported) {
  // Different adaptation seeds change the within-month order; the delta is
  // recorded, not asserted.
  const auto split = small_stream(6);
  double means[2];
  for (int k = 0; k < 2; ++k) {
    auto b = frozen_detector();
    AdaptConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(k);
    const auto series = make_series("m", run_stream(b, split.months, make_balancer(BalanceSource::ground_truth, nullptr, 1), cfg));
    means[k] = series.mean_f1.value_or(0.0);
  }
  RecordProperty("order_sensitivity_mean_f1_delta", std::to_string(means[1] - means[0]));
  std::printf("order sensitivity: mean F1 delta %.6f\n", means[1] - means[0]);
}

}  // namespace
}  // namespace madcat
