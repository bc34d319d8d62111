#pragma once

// Per-method monthly series, aggregates, and the JSON/CSV report formats.

#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "madcat/adaptation.hpp"
#include "madcat/errors.hpp"
#include "madcat/metrics.hpp"

namespace madcat {

struct MethodSeries {
  std::string name;
  std::vector<YearMonth> months;
  std::vector<std::optional<double>> f1;
  std::vector<std::optional<double>> accuracy;
  std::vector<std::optional<double>> benign_accuracy;
  std::vector<std::optional<double>> malicious_accuracy;
  std::vector<bool> no_adapt;
  std::optional<double> mean_f1;                // over months with a defined F1
  std::optional<double> overall_accuracy;       // pooled over every eval sample
  std::optional<double> mean_monthly_accuracy;  // unweighted month average
  Confusion pooled;
  std::size_t skipped_months = 0;
};

struct ExperimentReport {
  std::vector<MethodSeries> methods;
  nlohmann::ordered_json config;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> eval_hashes;  // per month, shared by all methods

  const MethodSeries& method(const std::string& name) const {
    for (const auto& m : methods)
      if (m.name == name) return m;
    throw DataError("report has no method '" + name + "'");
  }
};

inline std::optional<double> mean_of(const std::vector<std::optional<double>>& xs) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& x : xs)
    if (x) sum += *x, ++n;
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

inline MethodSeries make_series(const std::string& name, const std::vector<MonthResult>& results) {
  MethodSeries s;
  s.name = name;
  for (const auto& r : results) {
    s.months.push_back(r.month);
    s.f1.push_back(r.metrics.f1);
    s.accuracy.push_back(r.metrics.accuracy);
    s.benign_accuracy.push_back(r.metrics.benign_accuracy);
    s.malicious_accuracy.push_back(r.metrics.malicious_accuracy);
    s.no_adapt.push_back(r.no_adapt);
    s.pooled += r.metrics.confusion;
    if (!r.metrics.f1) ++s.skipped_months;
  }
  s.mean_f1 = mean_of(s.f1);
  s.overall_accuracy = accuracy(s.pooled);
  s.mean_monthly_accuracy = mean_of(s.accuracy);
  return s;
}

/// Aligns per-method results on a shared month axis. Methods must have been
/// evaluated on identical evaluation splits.
inline ExperimentReport assemble_report(const std::vector<std::pair<std::string, std::vector<MonthResult>>>& per_method,
                                        nlohmann::ordered_json config, std::uint64_t seed) {
  ExperimentReport rep;
  rep.config = std::move(config);
  rep.seed = seed;
  for (std::size_t k = 0; k < per_method.size(); ++k) {
    const auto& [name, results] = per_method[k];
    if (k == 0) {
      for (const auto& r : results) rep.eval_hashes.push_back(r.eval_hash);
    } else {
      const auto& first = per_method[0].second;
      if (results.size() != first.size())
        throw DataError("month axis mismatch: '" + name + "' has " + std::to_string(results.size()) +
                        " months, '" + per_method[0].first + "' has " + std::to_string(first.size()));
      for (std::size_t i = 0; i < results.size(); ++i) {
        if (!(results[i].month == first[i].month))
          throw DataError("month axis mismatch for '" + name + "' at " + results[i].month.str());
        if (results[i].eval_hash != first[i].eval_hash)
          throw DataError("'" + name + "' was evaluated on a different split in " + results[i].month.str());
      }
    }
    rep.methods.push_back(make_series(name, results));
  }
  return rep;
}

namespace detail {

inline std::string fmt6(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

inline nlohmann::ordered_json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json series_json(const std::vector<std::optional<double>>& xs) {
  auto a = nlohmann::ordered_json::array();
  for (const auto& x : xs) a.push_back(opt_json(x));
  return a;
}

}  // namespace detail

inline constexpr const char* kCsvHeader = "method,month,f1,accuracy,benign_acc,malicious_acc";

/// One row per (method, month); six-decimal fixed values, empty when a
/// metric is undefined for that month.
inline std::string report_csv(const ExperimentReport& rep) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& m : rep.methods)
    for (std::size_t i = 0; i < m.months.size(); ++i)
      out += m.name + "," + m.months[i].str() + "," + detail::fmt6(m.f1[i]) + "," + detail::fmt6(m.accuracy[i]) + "," +
             detail::fmt6(m.benign_accuracy[i]) + "," + detail::fmt6(m.malicious_accuracy[i]) + "\n";
  return out;
}

inline nlohmann::ordered_json report_json(const ExperimentReport& rep) {
  nlohmann::ordered_json j;
  j["format"] = "madcat-report";
  j["version"] = 1;
  j["seed"] = rep.seed;
  j["config"] = rep.config;
  auto months = nlohmann::ordered_json::array();
  if (!rep.methods.empty())
    for (const auto& m : rep.methods.front().months) months.push_back(m.str());
  j["months"] = months;
  auto methods = nlohmann::ordered_json::array();
  for (const auto& m : rep.methods) {
    nlohmann::ordered_json mj;
    mj["name"] = m.name;
    mj["mean_f1"] = detail::opt_json(m.mean_f1);
    mj["overall_accuracy"] = detail::opt_json(m.overall_accuracy);
    mj["mean_monthly_accuracy"] = detail::opt_json(m.mean_monthly_accuracy);
    mj["skipped_months"] = m.skipped_months;
    mj["confusion"] = {{"tp", m.pooled.tp}, {"fp", m.pooled.fp}, {"fn", m.pooled.fn}, {"tn", m.pooled.tn}};
    mj["f1"] = detail::series_json(m.f1);
    mj["accuracy"] = detail::series_json(m.accuracy);
    mj["benign_acc"] = detail::series_json(m.benign_accuracy);
    mj["malicious_acc"] = detail::series_json(m.malicious_accuracy);
    auto na = nlohmann::ordered_json::array();
    for (bool b : m.no_adapt) na.push_back(b);
    mj["no_adapt"] = na;
    methods.push_back(mj);
  }
  j["methods"] = methods;
  return j;
}

/// Line-delimited prediction records for offline analysis.
inline std::string prediction_dump(const std::string& method, const std::vector<MonthResult>& results) {
  std::string out;
  for (const auto& r : results)
    for (const auto& p : r.predictions) {
      nlohmann::ordered_json j;
      j["method"] = method;
      j["month"] = r.month.str();
      j["id"] = p.id;
      j["truth"] = p.truth;
      j["predicted"] = p.prediction.label;
      j["confidence"] = p.prediction.confidence;
      out += j.dump() + "\n";
    }
  return out;
}

}  // namespace madcat
