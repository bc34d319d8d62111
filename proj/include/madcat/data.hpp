#pragma once

// Sample/dataset schema, the line-delimited dataset file format, temporal
// splitting and the synthetic drift generator.

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <compare>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "madcat/errors.hpp"
#include "madcat/numerics.hpp"
#include "madcat/rng.hpp"

namespace madcat {

inline constexpr int kBenign = 0;
inline constexpr int kMalicious = 1;

/// Calendar month. Ordered by (year, month).
struct YearMonth {
  int year = 2012;
  int month = 1;  // 1..12

  int index() const { return year * 12 + (month - 1); }
  static YearMonth from_index(int i) { return {i / 12, i % 12 + 1}; }
  YearMonth plus(int months) const { return from_index(index() + months); }

  bool valid() const { return month >= 1 && month <= 12 && year >= 1900 && year <= 9999; }

  std::string str() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02d", year, month);
    return buf;
  }

  static YearMonth parse(std::string_view s) {
    YearMonth ym{0, 0};
    if (s.size() != 7 || s[4] != '-') throw DataError("month tag '" + std::string(s) + "' is not YYYY-MM");
    auto r1 = std::from_chars(s.data(), s.data() + 4, ym.year);
    auto r2 = std::from_chars(s.data() + 5, s.data() + 7, ym.month);
    if (r1.ec != std::errc{} || r2.ec != std::errc{} || r1.ptr != s.data() + 4 || r2.ptr != s.data() + 7 ||
        !ym.valid())
      throw DataError("month tag '" + std::string(s) + "' is not YYYY-MM");
    return ym;
  }

  friend auto operator<=>(const YearMonth& a, const YearMonth& b) { return a.index() <=> b.index(); }
  friend bool operator==(const YearMonth& a, const YearMonth& b) { return a.index() == b.index(); }
};

/// Counts ground-truth label reads. Adaptation and pseudo-labeling code
/// paths are audited by comparing the counter before and after.
class LabelAudit {
public:
  static std::uint64_t reads() noexcept { return counter(); }
  static void record() noexcept { ++counter(); }

private:
  static std::uint64_t& counter() noexcept {
    static thread_local std::uint64_t n = 0;
    return n;
  }
};

/// One program: sparse binary features (indices of set bits), an optional
/// ground-truth label and the month it was collected.
class Sample {
public:
  Sample() = default;
  Sample(std::string id, YearMonth month, std::vector<std::uint32_t> features, std::optional<int> label = {})
      : id(std::move(id)), month(month), features(std::move(features)), label_(label) {}

  std::string id;
  YearMonth month;
  std::vector<std::uint32_t> features;

  /// Ground truth; every call is counted by LabelAudit.
  std::optional<int> truth() const {
    LabelAudit::record();
    return label_;
  }
  bool has_label() const noexcept { return label_.has_value(); }
  void set_label(std::optional<int> label) { label_ = label; }

  Sample without_label() const {
    Sample s = *this;
    s.label_.reset();
    return s;
  }

  void validate(std::size_t dim) const {
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (features[i] >= dim)
        throw DataError("sample '" + id + "': feature index " + std::to_string(features[i]) + " >= dim " +
                        std::to_string(dim));
      if (i > 0 && features[i] <= features[i - 1])
        throw DataError("sample '" + id + "': feature indices not strictly increasing");
    }
    if (label_ && *label_ != kBenign && *label_ != kMalicious)
      throw DataError("sample '" + id + "': label must be 0 or 1");
    if (!month.valid()) throw DataError("sample '" + id + "': invalid month");
  }

  friend bool operator==(const Sample& a, const Sample& b) {
    return a.id == b.id && a.month == b.month && a.features == b.features && a.label_ == b.label_;
  }

private:
  std::optional<int> label_;
};

/// Ground-truth label of a sample that must carry one.
inline int require_label(const Sample& s) {
  auto l = s.truth();
  if (!l) throw DataError("sample '" + s.id + "' has no ground-truth label");
  return *l;
}

inline nn::Vector densify(const Sample& s, std::size_t dim) {
  nn::Vector x = nn::Vector::Zero(static_cast<Eigen::Index>(dim));
  for (auto i : s.features) {
    if (i >= dim) throw DataError("feature index " + std::to_string(i) + " >= dim " + std::to_string(dim));
    x[i] = 1.0;
  }
  return x;
}

/// Indices of entries equal to 1; any other non-zero value is rejected.
inline std::vector<std::uint32_t> sparsify(const nn::Vector& x) {
  std::vector<std::uint32_t> idx;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] == 1.0)
      idx.push_back(static_cast<std::uint32_t>(i));
    else if (x[i] != 0.0)
      throw DataError("non-binary feature value at index " + std::to_string(i));
  }
  return idx;
}

/// Columns are samples.
inline nn::Matrix feature_matrix(const std::vector<Sample>& samples, std::size_t dim) {
  nn::Matrix m = nn::Matrix::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(samples.size()));
  for (std::size_t c = 0; c < samples.size(); ++c)
    for (auto i : samples[c].features) {
      if (i >= dim) throw DataError("feature index " + std::to_string(i) + " >= dim " + std::to_string(dim));
      m(i, static_cast<Eigen::Index>(c)) = 1.0;
    }
  return m;
}

enum class Provenance { real, synthetic };

struct Dataset {
  std::size_t dim = 0;
  std::vector<Sample> samples;  // month-ordered
  Provenance provenance = Provenance::real;
  std::string config_hash;  // generator config hash for synthetic data

  void validate() const {
    if (dim == 0) throw DataError("dataset dim must be positive");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      samples[i].validate(dim);
      if (i > 0 && samples[i].month < samples[i - 1].month)
        throw DataError("samples are not month-ordered at '" + samples[i].id + "'");
    }
  }
};

// ---------------------------------------------------------------------------
// File format
//
//   line 1:  {"format":"madcat-dataset","version":1,"dim":D,...}
//   line k:  id,YYYY-MM,label,i0 i1 i2 ...
//
// label is 0, 1 or empty (unlabeled); the index list is strictly increasing
// and may be empty. Files ending in .gz are gzip-compressed; the loader
// accepts either encoding regardless of name.

inline constexpr int kDatasetFormatVersion = 1;

namespace detail {

inline std::string read_all(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open '" + path + "'");
  std::string out;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw IoError("read error in '" + path + "'");
  return out;
}

inline void write_all(const std::string& path, const std::string& content) {
  const bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
  if (gz) {
    gzFile f = gzopen(path.c_str(), "wb9");
    if (!f) throw IoError("cannot write '" + path + "'");
    const int written = content.empty() ? 0 : gzwrite(f, content.data(), static_cast<unsigned>(content.size()));
    gzclose(f);
    if (written != static_cast<int>(content.size())) throw IoError("short write to '" + path + "'");
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << content;
  if (!out) throw IoError("short write to '" + path + "'");
}

}  // namespace detail

inline std::string serialize_dataset(const Dataset& ds) {
  nlohmann::ordered_json header;
  header["format"] = "madcat-dataset";
  header["version"] = kDatasetFormatVersion;
  header["dim"] = ds.dim;
  header["provenance"] = ds.provenance == Provenance::real ? "real" : "synthetic";
  header["config_hash"] = ds.config_hash;
  std::string out = header.dump() + "\n";
  for (const auto& s : ds.samples) {
    if (s.id.find_first_of(",\n\r") != std::string::npos)
      throw DataError("sample id '" + s.id + "' contains a separator");
    out += s.id;
    out += ',';
    out += s.month.str();
    out += ',';
    if (auto l = s.truth()) out += static_cast<char>('0' + *l);
    out += ',';
    for (std::size_t i = 0; i < s.features.size(); ++i) {
      if (i) out += ' ';
      out += std::to_string(s.features[i]);
    }
    out += '\n';
  }
  return out;
}

inline Dataset parse_dataset(std::string_view text) {
  auto next_line = [&](std::size_t& pos, std::string_view& line) {
    if (pos >= text.size()) return false;
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    return true;
  };

  std::size_t pos = 0;
  std::string_view line;
  if (!next_line(pos, line)) throw DataError("line 1: missing header");
  Dataset ds;
  try {
    auto header = nlohmann::json::parse(line);
    if (header.value("format", "") != "madcat-dataset") throw DataError("line 1: not a madcat dataset header");
    if (!header.contains("version")) throw DataError("line 1: header has no version");
    const int version = header.at("version").get<int>();
    if (version != kDatasetFormatVersion)
      throw DataError("line 1: unknown dataset version " + std::to_string(version));
    if (!header.contains("dim")) throw DataError("line 1: header has no dim");
    const auto dim = header.at("dim").get<std::int64_t>();
    if (dim <= 0) throw DataError("line 1: dim must be positive");
    ds.dim = static_cast<std::size_t>(dim);
    ds.provenance = header.value("provenance", "real") == "synthetic" ? Provenance::synthetic : Provenance::real;
    ds.config_hash = header.value("config_hash", "");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("line 1: bad header: ") + e.what());
  }

  std::size_t lineno = 1;
  while (next_line(pos, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    std::string_view fields[4];
    std::size_t start = 0;
    for (int f = 0; f < 3; ++f) {
      auto comma = line.find(',', start);
      if (comma == std::string_view::npos) throw DataError(where + "expected 4 comma-separated fields");
      fields[f] = line.substr(start, comma - start);
      start = comma + 1;
    }
    fields[3] = line.substr(start);
    if (fields[3].find(',') != std::string_view::npos) throw DataError(where + "too many fields");
    if (fields[0].empty()) throw DataError(where + "empty sample id");
    if (fields[1].empty()) throw DataError(where + "missing month");

    Sample s;
    s.id = std::string(fields[0]);
    try {
      s.month = YearMonth::parse(fields[1]);
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
    if (fields[2] == "0")
      s.set_label(kBenign);
    else if (fields[2] == "1")
      s.set_label(kMalicious);
    else if (!fields[2].empty())
      throw DataError(where + "label must be 0, 1 or empty");

    std::string_view idx = fields[3];
    std::size_t p = 0;
    while (p < idx.size()) {
      while (p < idx.size() && idx[p] == ' ') ++p;
      if (p >= idx.size()) break;
      std::uint64_t v = 0;
      auto r = std::from_chars(idx.data() + p, idx.data() + idx.size(), v);
      if (r.ec != std::errc{}) throw DataError(where + "bad feature index");
      if (v >= ds.dim)
        throw DataError(where + "feature index " + std::to_string(v) + " >= dim " + std::to_string(ds.dim));
      if (!s.features.empty() && v <= s.features.back())
        throw DataError(where + "feature indices must be strictly increasing");
      s.features.push_back(static_cast<std::uint32_t>(v));
      p = static_cast<std::size_t>(r.ptr - idx.data());
      if (p < idx.size() && idx[p] != ' ') throw DataError(where + "bad feature index");
    }
    if (!ds.samples.empty() && s.month < ds.samples.back().month)
      throw DataError(where + "samples must be month-ordered");
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

inline Dataset load_dataset(const std::string& path) { return parse_dataset(detail::read_all(path)); }

inline void save_dataset(const Dataset& ds, const std::string& path) {
  ds.validate();
  detail::write_all(path, serialize_dataset(ds));
}

// ---------------------------------------------------------------------------
// Splits

enum class SplitMode { random, chronological };

inline const char* to_string(SplitMode m) { return m == SplitMode::random ? "random" : "chronological"; }

inline SplitMode split_mode_from_string(const std::string& s) {
  if (s == "random") return SplitMode::random;
  if (s == "chronological") return SplitMode::chronological;
  throw ConfigError("unknown split mode '" + s + "' (expected random or chronological)");
}

inline std::size_t floor_fraction(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

/// Order-sensitive hash of sample ids.
inline std::uint64_t order_hash(const std::vector<Sample>& samples) {
  std::uint64_t h = fnv1a("");
  for (const auto& s : samples) h = fnv1a(s.id, h ^ 0xFFu);
  return h;
}

/// First part holds floor(fraction * n) samples. Random mode permutes with
/// the (seed, stream) generator; chronological mode keeps input order.
inline std::pair<std::vector<Sample>, std::vector<Sample>> split_fraction(std::vector<Sample> samples,
                                                                          double fraction, std::uint64_t seed,
                                                                          std::uint64_t stream, SplitMode mode) {
  const std::size_t k = floor_fraction(fraction, samples.size());
  if (mode == SplitMode::random) {
    Rng rng(seed, stream);
    rng.shuffle(std::span<Sample>(samples));
  }
  std::vector<Sample> rest(std::make_move_iterator(samples.begin() + static_cast<std::ptrdiff_t>(k)),
                           std::make_move_iterator(samples.end()));
  samples.resize(k);
  return {std::move(samples), std::move(rest)};
}

struct SplitConfig {
  YearMonth initial_begin{2012, 1};
  YearMonth initial_end{2014, 12};
  YearMonth stream_begin{2015, 1};
  YearMonth stream_end{2018, 12};
  double initial_train_fraction = 0.8;
  double adapt_fraction = 0.7;
  SplitMode mode = SplitMode::random;

  void validate() const {
    if (initial_end < initial_begin) throw ConfigError("split.initial_end precedes split.initial_begin");
    if (stream_end < stream_begin) throw ConfigError("split.stream_end precedes split.stream_begin");
    if (!(initial_end < stream_begin)) throw ConfigError("split: initial window must end before the stream starts");
    for (double f : {initial_train_fraction, adapt_fraction})
      if (!(f > 0.0 && f < 1.0)) throw ConfigError("split fractions must lie in (0, 1)");
  }
};

struct MonthSplit {
  YearMonth month;
  std::vector<Sample> adapt;
  std::vector<Sample> eval;
  bool empty = false;  // no samples were collected in this month
};

struct TemporalSplit {
  std::vector<Sample> initial_train;
  std::vector<Sample> initial_val;
  std::vector<MonthSplit> months;
};

/// Initial window -> train/val; every stream month up to the last month
/// present in the data -> adapt/eval. Months without data are emitted with
/// the `empty` marker.
inline TemporalSplit split_temporal(const Dataset& ds, const SplitConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  TemporalSplit out;
  std::vector<Sample> initial;
  std::vector<std::vector<Sample>> stream;
  YearMonth last = cfg.stream_begin;
  for (const auto& s : ds.samples)
    if (s.month >= cfg.stream_begin && s.month <= cfg.stream_end && s.month > last) last = s.month;
  const int n_months = last.index() - cfg.stream_begin.index() + 1;
  stream.resize(static_cast<std::size_t>(n_months));
  for (const auto& s : ds.samples) {
    if (s.month >= cfg.initial_begin && s.month <= cfg.initial_end)
      initial.push_back(s);
    else if (s.month >= cfg.stream_begin && s.month <= last)
      stream[static_cast<std::size_t>(s.month.index() - cfg.stream_begin.index())].push_back(s);
  }
  const std::uint64_t initial_stream = order_hash(initial);
  std::tie(out.initial_train, out.initial_val) =
      split_fraction(std::move(initial), cfg.initial_train_fraction, seed, initial_stream, cfg.mode);
  for (int m = 0; m < n_months; ++m) {
    MonthSplit ms;
    ms.month = cfg.stream_begin.plus(m);
    auto& bucket = stream[static_cast<std::size_t>(m)];
    ms.empty = bucket.empty();
    const std::uint64_t stream_id = derive_seed(static_cast<std::uint64_t>(ms.month.index()), order_hash(bucket));
    std::tie(ms.adapt, ms.eval) = split_fraction(std::move(bucket), cfg.adapt_fraction, seed, stream_id, cfg.mode);
    out.months.push_back(std::move(ms));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Published yearly class counts of the 2012-2018 Android corpus.

struct YearCount {
  int year;
  std::size_t malicious;
  std::size_t benign;
  std::size_t total() const { return malicious + benign; }
};

inline constexpr YearCount kApiGraphYearlyCounts[] = {
    {2012, 3061, 27472}, {2013, 4854, 43714}, {2014, 5809, 52676}, {2015, 5508, 51944},
    {2016, 5324, 50712}, {2017, 2465, 24847}, {2018, 3783, 38146},
};

/// Parses "year,malicious,benign[,total]" rows (header line allowed).
inline std::vector<YearCount> parse_year_counts(std::string_view text) {
  std::vector<YearCount> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#' || line.rfind("year", 0) == 0) continue;
    YearCount c{};
    std::size_t total = 0;
    char comma;
    std::istringstream row(line);
    char comma2;
    if (!(row >> c.year >> comma >> c.malicious >> comma2 >> c.benign) || comma != ',' || comma2 != ',')
      throw DataError("line " + std::to_string(lineno) + ": expected year,malicious,benign[,total]");
    if (row >> comma && comma == ',' && row >> total && total != c.total())
      throw DataError("line " + std::to_string(lineno) + ": total does not equal malicious + benign");
    out.push_back(c);
  }
  return out;
}

/// Label-only dataset (no features) reproducing yearly class counts; the
/// samples of each year are spread round-robin over its twelve months.
inline Dataset year_count_fixture(const std::vector<YearCount>& counts, std::size_t dim = 1159) {
  Dataset ds;
  ds.dim = dim;
  for (const auto& c : counts) {
    std::vector<std::vector<Sample>> by_month(12);
    std::size_t k = 0;
    auto emit = [&](int label, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i, ++k) {
        const int m = static_cast<int>(k % 12);
        by_month[static_cast<std::size_t>(m)].emplace_back(
            std::to_string(c.year) + (label ? "-m" : "-b") + std::to_string(i), YearMonth{c.year, m + 1},
            std::vector<std::uint32_t>{}, label);
      }
    };
    emit(kMalicious, c.malicious);
    emit(kBenign, c.benign);
    for (auto& month : by_month)
      for (auto& s : month) ds.samples.push_back(std::move(s));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic drift generator

/// Benign samples come from a stationary prototype. The malicious prototype's
/// active features (probability >= 0.5) slide along the feature axis by
/// floor(m * drift_rate * |active|) positions in month m, so after 1/drift_rate
/// months the month-0 active set has been fully replaced.
struct DriftConfig {
  std::size_t dim = 256;
  int months = 48;
  YearMonth start{2014, 1};
  std::size_t samples_per_month = 1000;
  double drift_rate = 0.03;
  double imbalance = 9.0;  // benign : malicious
  double noise = 0.01;     // per-feature flip probability
  // Empty means "derive from seed" with the block layout described in
  // default_prototypes().
  std::vector<double> benign_prototype;
  std::vector<double> malicious_prototype;
  std::uint64_t seed = 7;

  void validate() const {
    if (dim == 0) throw ConfigError("drift.dim must be positive");
    if (months <= 0) throw ConfigError("drift.months must be positive");
    if (samples_per_month == 0) throw ConfigError("drift.samples_per_month must be positive");
    if (!(drift_rate >= 0.0 && drift_rate <= 1.0)) throw ConfigError("drift.drift_rate must lie in [0, 1]");
    if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("drift.noise must lie in [0, 1]");
    if (!(imbalance >= 1.0) || !std::isfinite(imbalance)) throw ConfigError("drift.imbalance must be >= 1");
    if (!start.valid()) throw ConfigError("drift.start is not a valid month");
    for (const auto* proto : {&benign_prototype, &malicious_prototype}) {
      if (proto->empty()) continue;
      if (proto->size() != dim) throw ConfigError("drift prototypes must have dim entries");
      bool any = false;
      for (double p : *proto) {
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("drift prototype entries must lie in [0, 1]");
        any = any || p > 0.0;
      }
      if (!any) throw ConfigError("drift prototype is all-zero (degenerate)");
    }
    if (benign_prototype.empty() != malicious_prototype.empty())
      throw ConfigError("drift prototypes must be given together or not at all");
  }
};

inline nlohmann::ordered_json to_json(const DriftConfig& c) {
  nlohmann::ordered_json j;
  j["dim"] = c.dim;
  j["months"] = c.months;
  j["start"] = c.start.str();
  j["samples_per_month"] = c.samples_per_month;
  j["drift_rate"] = c.drift_rate;
  j["imbalance"] = c.imbalance;
  j["noise"] = c.noise;
  j["benign_prototype"] = c.benign_prototype;
  j["malicious_prototype"] = c.malicious_prototype;
  j["seed"] = c.seed;
  return j;
}

/// Reads known keys over `base`; unknown keys are rejected.
inline DriftConfig drift_config_from_json(const nlohmann::json& j, DriftConfig base = {}) {
  if (!j.is_object()) throw ConfigError("drift config must be an object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      const auto& v = it.value();
      if (k == "dim") base.dim = v.get<std::size_t>();
      else if (k == "months") base.months = v.get<int>();
      else if (k == "start") base.start = YearMonth::parse(v.get<std::string>());
      else if (k == "samples_per_month") base.samples_per_month = v.get<std::size_t>();
      else if (k == "drift_rate") base.drift_rate = v.get<double>();
      else if (k == "imbalance") base.imbalance = v.get<double>();
      else if (k == "noise") base.noise = v.get<double>();
      else if (k == "benign_prototype") base.benign_prototype = v.get<std::vector<double>>();
      else if (k == "malicious_prototype") base.malicious_prototype = v.get<std::vector<double>>();
      else if (k == "seed") base.seed = v.get<std::uint64_t>();
      else throw ConfigError("unknown drift config key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("drift config: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(std::string("drift config: ") + e.what());
  }
  return base;
}

inline std::string config_hash(const DriftConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json(c).dump())));
  return buf;
}

struct Prototypes {
  std::vector<double> benign;
  std::vector<double> malicious;
};

/// Block layout over [0, dim):
///   [0, d/4)          benign markers    benign 0.3-0.7, malicious 0.1-0.2
///   [d/4, d/2)        shared            both classes 0.1-0.5 (identical)
///   [d/2, d/2 + d/8)  malicious markers malicious 0.5-0.8, benign 0.02
///   remainder         dormant           0.02 for both; drift target
inline Prototypes default_prototypes(std::size_t dim, std::uint64_t seed) {
  Prototypes p{std::vector<double>(dim, 0.02), std::vector<double>(dim, 0.02)};
  Rng rng(seed, 0x70726f746fULL);
  const std::size_t q = dim / 4, h = dim / 2, e = std::max<std::size_t>(dim / 8, 1);
  for (std::size_t j = 0; j < q; ++j) {
    p.benign[j] = rng.uniform(0.3, 0.7);
    p.malicious[j] = rng.uniform(0.1, 0.2);
  }
  for (std::size_t j = q; j < h; ++j) p.benign[j] = p.malicious[j] = rng.uniform(0.1, 0.5);
  for (std::size_t j = h; j < std::min(dim, h + e); ++j) p.malicious[j] = rng.uniform(0.5, 0.8);
  return p;
}

/// Malicious prototype for month `m` (0-based from cfg.start).
inline std::vector<double> drifted_prototype(const std::vector<double>& malicious, double drift_rate, int m,
                                             double dormant_level = 0.02) {
  std::vector<std::size_t> active;
  for (std::size_t j = 0; j < malicious.size(); ++j)
    if (malicious[j] >= 0.5) active.push_back(j);
  const auto shift = static_cast<std::size_t>(
      std::floor(static_cast<double>(m) * drift_rate * static_cast<double>(active.size()) + 1e-9));
  if (shift == 0 || active.empty()) return malicious;
  std::vector<double> out = malicious;
  for (auto j : active) out[j] = dormant_level;
  for (auto j : active) out[(j + shift) % malicious.size()] = malicious[j];
  return out;
}

inline Dataset generate_synthetic_drift(const DriftConfig& cfg) {
  cfg.validate();
  Prototypes proto = cfg.benign_prototype.empty() ? default_prototypes(cfg.dim, cfg.seed)
                                                  : Prototypes{cfg.benign_prototype, cfg.malicious_prototype};
  Dataset ds;
  ds.dim = cfg.dim;
  ds.provenance = Provenance::synthetic;
  ds.config_hash = config_hash(cfg);
  const auto n_mal = static_cast<std::size_t>(
      std::llround(static_cast<double>(cfg.samples_per_month) / (1.0 + cfg.imbalance)));
  const std::size_t n_ben = cfg.samples_per_month - n_mal;
  for (int m = 0; m < cfg.months; ++m) {
    const YearMonth ym = cfg.start.plus(m);
    const auto mal = drifted_prototype(proto.malicious, cfg.drift_rate, m);
    Rng rng(cfg.seed, static_cast<std::uint64_t>(m) + 1);
    // Interleave classes deterministically so file order carries no label.
    std::vector<int> labels(n_ben, kBenign);
    labels.insert(labels.end(), n_mal, kMalicious);
    rng.shuffle(std::span<int>(labels));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto& p = labels[i] == kMalicious ? mal : proto.benign;
      std::vector<std::uint32_t> features;
      for (std::size_t j = 0; j < cfg.dim; ++j) {
        bool bit = rng.bernoulli(p[j]);
        if (cfg.noise > 0.0 && rng.bernoulli(cfg.noise)) bit = !bit;
        if (bit) features.push_back(static_cast<std::uint32_t>(j));
      }
      char id[32];
      std::snprintf(id, sizeof id, "s%s-%05zu", ym.str().c_str(), i);
      ds.samples.emplace_back(id, ym, std::move(features), labels[i]);
    }
  }
  return ds;
}

}  // namespace madcat
