#pragma once

#include "cvgan/common.hpp"
#include "cvgan/io.hpp"
#include "cvgan/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace cvgan::dataset {

inline constexpr int kSnapshotPoints = 2560;  // 0.1 s at 25.6 kHz
inline constexpr int kHiClasses = 32;
inline constexpr double kSamplePeriodS = 10.0;

enum class HiMode { Linear, Piecewise };

/// Raw two-channel acceleration frames as ingested, before any scaling.
struct RawRecording {
  std::string bearing_id;
  int condition = 1;
  std::vector<Matrix> snapshots;  // each 2 x kSnapshotPoints (row 0 horizontal, row 1 vertical)
  double sample_period_s = kSamplePeriodS;
};

/// Per-channel global min/max used for [0,1] scaling.
struct NormStats {
  std::array<double, 2> min{0.0, 0.0};
  std::array<double, 2> max{1.0, 1.0};

  double scale(int channel, double v, bool clamp) const {
    double y = (v - min[static_cast<std::size_t>(channel)]) /
               (max[static_cast<std::size_t>(channel)] - min[static_cast<std::size_t>(channel)]);
    if (clamp) y = std::clamp(y, 0.0, 1.0);
    return y;
  }
};

struct BearingLifecycle {
  std::string bearing_id;
  std::vector<Matrix> series;  // each 2 x n_feature, values in [0,1]
  int fpt_index = 0;
  std::vector<double> hi;
  std::vector<int> hi_class;
  NormStats norm_stats;
  bool synthetic = false;
  io::json provenance = io::json::object();

  int n() const { return static_cast<int>(series.size()); }
  int n_feature() const { return series.empty() ? 0 : static_cast<int>(series.front().cols()); }

  void validate() const {
    require(series.size() == hi.size() && hi.size() == hi_class.size(), ErrorKind::Contract,
            "lifecycle: series/hi/hi_class length mismatch");
    require(!series.empty(), ErrorKind::Contract, "lifecycle: empty series");
    require(fpt_index >= 0 && fpt_index < n(), ErrorKind::Contract, "lifecycle: fpt_index out of range");
    for (std::size_t i = 0; i < hi.size(); ++i) {
      require(hi[i] >= 0.0 && hi[i] <= 1.0, ErrorKind::Contract, "lifecycle: hi out of [0,1]");
      if (i > 0) require(hi[i] <= hi[i - 1], ErrorKind::Contract, "lifecycle: hi not non-increasing");
    }
  }
};

/// Training unit: references its lifecycle instead of copying the window.
class WindowSample {
 public:
  WindowSample(std::shared_ptr<const BearingLifecycle> lc, int t, int k)
      : lifecycle_(std::move(lc)), t_(t), k_(k) {}

  const Matrix& x() const { return lifecycle_->series[static_cast<std::size_t>(t_)]; }
  const Matrix& x2_row(int i) const {
    require(i >= 0 && i < k_, ErrorKind::Contract, "window: history row out of range");
    return lifecycle_->series[static_cast<std::size_t>(t_ - k_ + i)];
  }

  /// History stacked as channels: (2k, n_feature), rows [2i, 2i+1] = step i.
  Matrix x2() const {
    Matrix out(2 * k_, x().cols());
    for (int i = 0; i < k_; ++i) out.middleRows(2 * i, 2) = x2_row(i);
    return out;
  }

  double hi() const { return lifecycle_->hi[static_cast<std::size_t>(t_)]; }
  int hi_class() const { return lifecycle_->hi_class[static_cast<std::size_t>(t_)]; }
  int k() const { return k_; }
  int position() const { return t_; }
  const std::string& bearing_id() const { return lifecycle_->bearing_id; }
  const BearingLifecycle& lifecycle() const { return *lifecycle_; }

  std::uint64_t fingerprint() const { return fnv1a(x(), fnv1a(bearing_id())); }

 private:
  std::shared_ptr<const BearingLifecycle> lifecycle_;
  int t_;
  int k_;
};

/// Desk-scale data oracle: Gaussian noise whose amplitude grows after the
/// FPT, then min-max scaled like real data.
struct SyntheticSpec {
  std::string bearing_id = "synthetic";
  int n = 200;
  int fpt_index = 60;
  std::array<double, 2> base_mean{0.5, 0.4};
  double noise_scale = 1.0;
  double growth_exponent = 1.0;
  int n_feature = 512;
  std::uint64_t seed = 0;

  void validate() const {
    require(n >= 2, ErrorKind::Config, "synthetic spec: n must be >= 2");
    require(fpt_index > 0 && fpt_index < n, ErrorKind::Config, "synthetic spec: fpt_index out of (0, n)");
    require(noise_scale > 0.0, ErrorKind::Config, "synthetic spec: noise_scale must be > 0");
    require(n_feature >= 1, ErrorKind::Config, "synthetic spec: n_feature must be >= 1");
  }
};

// ---- operations ----

/// Average pooling into equal non-overlapping bins; channels independent.
inline Matrix pool_features(const Matrix& frame, int n_feature) {
  require(n_feature >= 1 && frame.cols() % n_feature == 0, ErrorKind::Config,
          "pool_features: frame length " + std::to_string(frame.cols()) + " not divisible by n_feature " +
              std::to_string(n_feature));
  const long bin = frame.cols() / n_feature;
  Matrix out(frame.rows(), n_feature);
  for (int i = 0; i < n_feature; ++i) out.col(i) = frame.middleCols(static_cast<long>(i) * bin, bin).rowwise().mean();
  return out;
}

inline std::vector<double> compute_hi(int n, int fpt_index, HiMode mode) {
  require(n >= 2, ErrorKind::Config, "compute_hi: n must be >= 2");
  std::vector<double> hi(static_cast<std::size_t>(n));
  if (mode == HiMode::Linear) {
    for (int t = 0; t < n; ++t) hi[static_cast<std::size_t>(t)] = 1.0 - static_cast<double>(t) / (n - 1);
  } else {
    require(fpt_index >= 0 && fpt_index < n - 1, ErrorKind::Config,
            "compute_hi: piecewise mode requires 0 <= fpt_index < n-1");
    for (int t = 0; t < n; ++t) {
      hi[static_cast<std::size_t>(t)] =
          t <= fpt_index ? 1.0 : 1.0 - static_cast<double>(t - fpt_index) / (n - 1 - fpt_index);
    }
  }
  hi.front() = 1.0;
  hi.back() = 0.0;
  return hi;
}

inline int quantize_hi(double hi) {
  require(hi >= 0.0 && hi <= 1.0, ErrorKind::Contract, "quantize_hi: value outside [0,1]");
  return std::min(kHiClasses - 1, static_cast<int>(std::floor(hi * kHiClasses)));
}

inline NormStats compute_norm_stats(const std::vector<RawRecording>& recordings) {
  require(!recordings.empty(), ErrorKind::Data, "normalize: no recordings");
  NormStats stats;
  for (int c = 0; c < 2; ++c) {
    stats.min[static_cast<std::size_t>(c)] = std::numeric_limits<double>::infinity();
    stats.max[static_cast<std::size_t>(c)] = -std::numeric_limits<double>::infinity();
  }
  for (const auto& rec : recordings)
    for (const auto& frame : rec.snapshots)
      for (int c = 0; c < 2; ++c) {
        stats.min[static_cast<std::size_t>(c)] = std::min(stats.min[static_cast<std::size_t>(c)], frame.row(c).minCoeff());
        stats.max[static_cast<std::size_t>(c)] = std::max(stats.max[static_cast<std::size_t>(c)], frame.row(c).maxCoeff());
      }
  for (int c = 0; c < 2; ++c) {
    require(stats.max[static_cast<std::size_t>(c)] > stats.min[static_cast<std::size_t>(c)], ErrorKind::Data,
            "normalize: degenerate scale on channel " + std::to_string(c));
  }
  return stats;
}

inline RawRecording apply_normalization(const RawRecording& rec, const NormStats& stats, bool clamp) {
  RawRecording out = rec;
  for (auto& frame : out.snapshots)
    for (int c = 0; c < 2; ++c)
      for (long i = 0; i < frame.cols(); ++i) frame(c, i) = stats.scale(c, frame(c, i), clamp);
  return out;
}

/// Global per-channel min-max scaling over all training recordings.
inline std::pair<std::vector<RawRecording>, NormStats> normalize(const std::vector<RawRecording>& recordings) {
  NormStats stats = compute_norm_stats(recordings);
  std::vector<RawRecording> out;
  out.reserve(recordings.size());
  for (const auto& rec : recordings) out.push_back(apply_normalization(rec, stats, false));
  return {std::move(out), stats};
}

inline std::vector<WindowSample> build_windows(std::shared_ptr<const BearingLifecycle> lifecycle, int k) {
  require(k >= 1, ErrorKind::Config, "build_windows: k must be >= 1");
  const int n = lifecycle->n();
  require(n > k, ErrorKind::Data,
          "build_windows: need n > k, got n=" + std::to_string(n) + " k=" + std::to_string(k));
  std::vector<WindowSample> out;
  out.reserve(static_cast<std::size_t>(n - k));
  for (int t = k; t < n; ++t) out.emplace_back(lifecycle, t, k);
  return out;
}

/// Degradation envelope: 0 through the FPT, then a power-law rise to 1.
inline double synthetic_amplitude(const SyntheticSpec& spec, int t) {
  if (t <= spec.fpt_index) return 0.0;
  return std::pow(static_cast<double>(t - spec.fpt_index) / (spec.n - 1 - spec.fpt_index),
                  spec.growth_exponent);
}

/// The raw construction before [0,1] scaling:
/// value = base_mean + noise_scale * xi * (1 + amp(t)).
inline std::vector<Matrix> synthesize_raw_series(const SyntheticSpec& spec) {
  spec.validate();
  rng::Stream stream(rng::derive(spec.seed, "synthesize"));
  std::vector<Matrix> series;
  series.reserve(static_cast<std::size_t>(spec.n));
  for (int t = 0; t < spec.n; ++t) {
    const double amp = synthetic_amplitude(spec, t);
    Matrix frame(2, spec.n_feature);
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < spec.n_feature; ++i)
        frame(c, i) = spec.base_mean[static_cast<std::size_t>(c)] + spec.noise_scale * stream.normal() * (1.0 + amp);
    series.push_back(std::move(frame));
  }
  return series;
}

inline BearingLifecycle synthesize_lifecycle(const SyntheticSpec& spec) {
  spec.validate();
  BearingLifecycle lc;
  lc.bearing_id = spec.bearing_id;
  lc.fpt_index = spec.fpt_index;
  lc.synthetic = true;
  lc.provenance = {{"kind", "synthetic"},
                   {"n", spec.n},
                   {"fpt_index", spec.fpt_index},
                   {"base_mean", {spec.base_mean[0], spec.base_mean[1]}},
                   {"noise_scale", spec.noise_scale},
                   {"growth_exponent", spec.growth_exponent},
                   {"n_feature", spec.n_feature},
                   {"seed", spec.seed}};
  lc.series = synthesize_raw_series(spec);
  // Scale into [0,1] like real data; the stats it produces are the lifecycle's norm_stats.
  for (int c = 0; c < 2; ++c) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& f : lc.series) {
      lo = std::min(lo, f.row(c).minCoeff());
      hi = std::max(hi, f.row(c).maxCoeff());
    }
    require(hi > lo, ErrorKind::Data, "synthesize: degenerate channel range");
    lc.norm_stats.min[static_cast<std::size_t>(c)] = lo;
    lc.norm_stats.max[static_cast<std::size_t>(c)] = hi;
    for (auto& f : lc.series)
      for (long i = 0; i < f.cols(); ++i) f(c, i) = (f(c, i) - lo) / (hi - lo);
  }
  lc.hi = compute_hi(spec.n, spec.fpt_index, HiMode::Piecewise);
  lc.hi_class.reserve(lc.hi.size());
  for (double h : lc.hi) lc.hi_class.push_back(quantize_hi(h));
  lc.validate();
  return lc;
}

/// Synthesize a corpus of lifecycles under ONE global min-max scaling,
/// mirroring the real pipeline where normalization stats are computed over
/// all training recordings. Per-bearing level differences survive.
inline std::vector<std::shared_ptr<BearingLifecycle>> synthesize_corpus(
    const std::vector<SyntheticSpec>& specs) {
  require(!specs.empty(), ErrorKind::Config, "synthesize_corpus: no specs");
  std::vector<std::vector<Matrix>> raw;
  raw.reserve(specs.size());
  NormStats stats;
  for (int c = 0; c < 2; ++c) {
    stats.min[static_cast<std::size_t>(c)] = std::numeric_limits<double>::infinity();
    stats.max[static_cast<std::size_t>(c)] = -std::numeric_limits<double>::infinity();
  }
  for (const auto& spec : specs) {
    raw.push_back(synthesize_raw_series(spec));
    for (const auto& f : raw.back())
      for (int c = 0; c < 2; ++c) {
        stats.min[static_cast<std::size_t>(c)] = std::min(stats.min[static_cast<std::size_t>(c)], f.row(c).minCoeff());
        stats.max[static_cast<std::size_t>(c)] = std::max(stats.max[static_cast<std::size_t>(c)], f.row(c).maxCoeff());
      }
  }
  for (int c = 0; c < 2; ++c)
    require(stats.max[static_cast<std::size_t>(c)] > stats.min[static_cast<std::size_t>(c)], ErrorKind::Data,
            "synthesize_corpus: degenerate channel range");
  std::vector<std::shared_ptr<BearingLifecycle>> out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& spec = specs[i];
    auto lc = std::make_shared<BearingLifecycle>();
    lc->bearing_id = spec.bearing_id;
    lc->fpt_index = spec.fpt_index;
    lc->synthetic = true;
    lc->norm_stats = stats;
    lc->provenance = {{"kind", "synthetic"},  {"n", spec.n},
                      {"fpt_index", spec.fpt_index}, {"base_mean", {spec.base_mean[0], spec.base_mean[1]}},
                      {"noise_scale", spec.noise_scale}, {"growth_exponent", spec.growth_exponent},
                      {"n_feature", spec.n_feature}, {"seed", spec.seed},
                      {"normalization", "corpus-global"}};
    lc->series = std::move(raw[i]);
    for (auto& f : lc->series)
      for (int c = 0; c < 2; ++c)
        for (long j = 0; j < f.cols(); ++j) f(c, j) = stats.scale(c, f(c, j), false);
    lc->hi = compute_hi(spec.n, spec.fpt_index, HiMode::Piecewise);
    for (double h : lc->hi) lc->hi_class.push_back(quantize_hi(h));
    lc->validate();
    out.push_back(std::move(lc));
  }
  return out;
}

// ---- ingestion of PHM-2012-style directory trees ----

namespace detail {

inline std::optional<long> filename_index(const std::filesystem::path& p) {
  const std::string stem = p.stem().string();
  // Take the trailing digit run, e.g. acc_00123 -> 123.
  long end = static_cast<long>(stem.size());
  while (end > 0 && !std::isdigit(static_cast<unsigned char>(stem[static_cast<std::size_t>(end - 1)]))) --end;
  long begin = end;
  while (begin > 0 && std::isdigit(static_cast<unsigned char>(stem[static_cast<std::size_t>(begin - 1)]))) --begin;
  if (begin == end) return std::nullopt;
  return std::stol(stem.substr(static_cast<std::size_t>(begin), static_cast<std::size_t>(end - begin)));
}

inline Matrix parse_snapshot(const std::filesystem::path& file) {
  std::ifstream f(file);
  require(f.good(), ErrorKind::Data, "cannot open snapshot file: " + file.string());
  Matrix frame(2, kSnapshotPoints);
  std::string line;
  int row = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    require(row < kSnapshotPoints, ErrorKind::Data,
            "malformed frame (too many rows) in " + file.string());
    for (char& ch : line)
      if (ch == ',' || ch == ';' || ch == '\t') ch = ' ';
    std::istringstream ss(line);
    std::vector<double> fields;
    std::string tok;
    while (ss >> tok) {
      try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        require(used == tok.size(), ErrorKind::Data, "bad token");
        fields.push_back(v);
      } catch (const std::exception&) {
        throw Error(ErrorKind::Data,
                    "non-numeric cell '" + tok + "' at row " + std::to_string(row) + " of " + file.string());
      }
    }
    require(fields.size() >= 2, ErrorKind::Data,
            "row " + std::to_string(row) + " of " + file.string() + " has fewer than 2 columns");
    // The last two columns are horizontal and vertical acceleration.
    frame(0, row) = fields[fields.size() - 2];
    frame(1, row) = fields[fields.size() - 1];
    ++row;
  }
  require(row == kSnapshotPoints, ErrorKind::Data,
          "malformed frame: " + file.string() + " has " + std::to_string(row) + " rows, expected " +
              std::to_string(kSnapshotPoints));
  return frame;
}

}  // namespace detail

/// Reads one bearing directory of snapshot files, ordered by the numeric
/// index embedded in each filename.
inline RawRecording ingest_bearing(const std::filesystem::path& directory, const std::string& bearing_id) {
  require(std::filesystem::is_directory(directory), ErrorKind::Data,
          "missing directory: " + directory.string());
  std::vector<std::pair<long, std::filesystem::path>> files;
  for (const auto& entry : std::filesystem::directory_iterator(directory)) {
    if (!entry.is_regular_file()) continue;
    if (auto idx = detail::filename_index(entry.path())) files.emplace_back(*idx, entry.path());
  }
  require(!files.empty(), ErrorKind::Data, "no snapshot files in " + directory.string());
  std::sort(files.begin(), files.end());
  RawRecording rec;
  rec.bearing_id = bearing_id;
  rec.snapshots.reserve(files.size());
  for (const auto& [idx, path] : files) rec.snapshots.push_back(detail::parse_snapshot(path));
  return rec;
}

/// FPT and full-life schedule for condition-1 bearings of the PHM 2012
/// data (seconds), used directly in place of online FPT detection.
struct LifeSchedule {
  double fpt_s;
  double life_s;
  int fpt_index() const { return static_cast<int>(fpt_s / kSamplePeriodS); }
  int n() const { return static_cast<int>(life_s / kSamplePeriodS); }
};

inline const std::map<std::string, LifeSchedule>& phm_condition1_schedule() {
  static const std::map<std::string, LifeSchedule> table = {
      {"Bearing1-1", {11420, 28030}}, {"Bearing1-2", {8220, 8710}},   {"Bearing1-3", {9600, 23750}},
      {"Bearing1-4", {10180, 14280}}, {"Bearing1-5", {24070, 24630}}, {"Bearing1-6", {16270, 24480}},
      {"Bearing1-7", {22040, 22590}},
  };
  return table;
}

/// Pool + label a normalized recording into a lifecycle.
inline BearingLifecycle build_lifecycle(const RawRecording& normalized, int n_feature, int fpt_index,
                                        HiMode mode, const NormStats& stats) {
  BearingLifecycle lc;
  lc.bearing_id = normalized.bearing_id;
  lc.fpt_index = fpt_index;
  lc.norm_stats = stats;
  lc.provenance = {{"kind", "ingested"}, {"bearing_id", normalized.bearing_id}};
  lc.series.reserve(normalized.snapshots.size());
  for (const auto& frame : normalized.snapshots) lc.series.push_back(pool_features(frame, n_feature));
  const int n = lc.n();
  lc.hi = compute_hi(n, fpt_index, mode);
  lc.hi_class.reserve(lc.hi.size());
  for (double h : lc.hi) lc.hi_class.push_back(quantize_hi(h));
  lc.validate();
  return lc;
}

/// Windows pooled across lifecycles, keeping the source lifecycles alive
/// (autoregressive training needs the per-lifecycle structure).
struct WindowSet {
  std::vector<WindowSample> windows;
  std::vector<std::shared_ptr<const BearingLifecycle>> lifecycles;
  int k = 0;
  int n_feature = 0;

  std::size_t size() const { return windows.size(); }
};

inline WindowSet build_window_set(const std::vector<std::shared_ptr<const BearingLifecycle>>& lifecycles,
                                  int k) {
  require(!lifecycles.empty(), ErrorKind::Data, "build_window_set: no lifecycles");
  WindowSet set;
  set.k = k;
  set.n_feature = lifecycles.front()->n_feature();
  for (const auto& lc : lifecycles) {
    require(lc->n_feature() == set.n_feature, ErrorKind::Data, "build_window_set: mixed n_feature");
    auto w = build_windows(lc, k);
    set.windows.insert(set.windows.end(), w.begin(), w.end());
    set.lifecycles.push_back(lc);
  }
  return set;
}

// ---- on-disk container ----

inline constexpr const char* kDatasetMagic = "CVDS";

struct LifecycleContainer {
  std::vector<std::shared_ptr<BearingLifecycle>> lifecycles;
  io::json provenance = io::json::object();

  std::string serialize() const {
    io::json meta;
    meta["kind"] = "lifecycle-dataset";
    meta["provenance"] = provenance;
    meta["bearings"] = io::json::array();
    io::BlobWriter w(kDatasetMagic);
    for (const auto& lc : lifecycles) {
      io::json b;
      b["id"] = lc->bearing_id;
      b["n"] = lc->n();
      b["n_feature"] = lc->n_feature();
      b["fpt_index"] = lc->fpt_index;
      b["synthetic"] = lc->synthetic;
      b["provenance"] = lc->provenance;
      b["norm_min"] = {lc->norm_stats.min[0], lc->norm_stats.min[1]};
      b["norm_max"] = {lc->norm_stats.max[0], lc->norm_stats.max[1]};
      meta["bearings"].push_back(b);
      Matrix series(2, static_cast<long>(lc->n()) * lc->n_feature());
      for (int t = 0; t < lc->n(); ++t)
        series.middleCols(static_cast<long>(t) * lc->n_feature(), lc->n_feature()) =
            lc->series[static_cast<std::size_t>(t)];
      w.add_matrix(lc->bearing_id + "/series", series);
      w.add_doubles(lc->bearing_id + "/hi", lc->hi);
      std::vector<std::int32_t> cls(lc->hi_class.begin(), lc->hi_class.end());
      w.add_ints(lc->bearing_id + "/hi_class", cls);
    }
    w.meta() = meta;
    return w.serialize();
  }

  std::uint64_t save(const std::filesystem::path& path) const {
    const std::string bytes = serialize();
    io::write_bytes(path, bytes);
    return fnv1a(bytes.data(), bytes.size());
  }

  static LifecycleContainer load(const std::filesystem::path& path) {
    io::BlobReader r = io::BlobReader::from_file(path, kDatasetMagic);
    LifecycleContainer c;
    c.provenance = r.meta().value("provenance", io::json::object());
    for (const auto& b : r.meta().at("bearings")) {
      auto lc = std::make_shared<BearingLifecycle>();
      lc->bearing_id = b.at("id").get<std::string>();
      lc->fpt_index = b.at("fpt_index").get<int>();
      lc->synthetic = b.at("synthetic").get<bool>();
      lc->provenance = b.value("provenance", io::json::object());
      lc->norm_stats.min = {b.at("norm_min")[0].get<double>(), b.at("norm_min")[1].get<double>()};
      lc->norm_stats.max = {b.at("norm_max")[0].get<double>(), b.at("norm_max")[1].get<double>()};
      const int n = b.at("n").get<int>();
      const int nf = b.at("n_feature").get<int>();
      Matrix series = r.matrix(lc->bearing_id + "/series");
      require(series.rows() == 2 && series.cols() == static_cast<long>(n) * nf, ErrorKind::Data,
              "dataset container: series shape mismatch for " + lc->bearing_id);
      lc->series.reserve(static_cast<std::size_t>(n));
      for (int t = 0; t < n; ++t) lc->series.push_back(series.middleCols(static_cast<long>(t) * nf, nf));
      lc->hi = r.doubles(lc->bearing_id + "/hi");
      for (std::int32_t v : r.ints(lc->bearing_id + "/hi_class")) lc->hi_class.push_back(v);
      lc->validate();
      c.lifecycles.push_back(std::move(lc));
    }
    return c;
  }

  std::uint64_t fingerprint() const {
    const std::string bytes = serialize();
    return fnv1a(bytes.data(), bytes.size());
  }
};

}  // namespace cvgan::dataset
