#pragma once

#include "cvgan/dataset.hpp"
#include "cvgan/nets.hpp"
#include "cvgan/optim.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace cvgan::metrics {

/// A set of generated or real signals; each frame is (2, n_feature).
struct SignalSet {
  std::vector<Matrix> frames;

  long count() const { return static_cast<long>(frames.size()); }
  int n_feature() const { return frames.empty() ? 0 : static_cast<int>(frames.front().cols()); }

  /// One channel as columns: (n_feature, count).
  Matrix channel(int c) const {
    Matrix out(n_feature(), count());
    for (long i = 0; i < count(); ++i) out.col(i) = frames[static_cast<std::size_t>(i)].row(c).transpose();
    return out;
  }

  static SignalSet from_windows(const dataset::WindowSet& set) {
    SignalSet s;
    s.frames.reserve(set.windows.size());
    for (const auto& w : set.windows) s.frames.push_back(w.x());
    return s;
  }

  static SignalSet from_series(const std::vector<Matrix>& series) {
    SignalSet s;
    s.frames = series;
    return s;
  }
};

// ---- PCA projection ----

struct PcaProjector {
  Vector mean;  // (D)
  Matrix axes;  // (D, dims), orthonormal columns, descending variance
  std::uint64_t fingerprint = 0;

  int dims() const { return static_cast<int>(axes.cols()); }

  Matrix project(const Matrix& samples) const {
    require(samples.rows() == mean.size(), ErrorKind::Contract, "pca: dimension mismatch");
    return axes.transpose() * (samples.colwise() - mean);
  }
};

/// Standard PCA on centered samples (columns). Requires at least `dims`
/// samples so the covariance has sufficient rank.
inline PcaProjector fit_pca(const Matrix& samples, int dims = 64) {
  const long N = samples.cols();
  const long D = samples.rows();
  require(dims >= 1 && dims <= D, ErrorKind::Config, "fit_pca: dims out of range");
  require(N >= dims, ErrorKind::Data,
          "fit_pca: need at least " + std::to_string(dims) + " samples, got " + std::to_string(N));
  PcaProjector p;
  p.mean = samples.rowwise().mean();
  Matrix centered = samples.colwise() - p.mean;
  Matrix cov = centered * centered.transpose() / static_cast<double>(N > 1 ? N - 1 : 1);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  require(eig.info() == Eigen::Success, ErrorKind::Numeric, "fit_pca: eigendecomposition failed");
  // Eigen returns ascending eigenvalues; keep the top `dims`, descending.
  p.axes.resize(D, dims);
  for (int i = 0; i < dims; ++i) p.axes.col(i) = eig.eigenvectors().col(D - 1 - i);
  p.fingerprint = fnv1a(p.axes, fnv1a(Matrix(p.mean)));
  return p;
}

inline PcaProjector fit_pca(const SignalSet& real, int channel, int dims = 64) {
  return fit_pca(real.channel(channel), dims);
}

// ---- MMD ----

namespace detail {

inline double kernel_mean(const Matrix& a, const Matrix& b, double bandwidth) {
  // Gram trick: |x-y|^2 = |x|^2 + |y|^2 - 2 x.y
  Vector an = a.colwise().squaredNorm();
  Vector bn = b.colwise().squaredNorm();
  Matrix cross = a.transpose() * b;
  double total = 0.0;
  for (long j = 0; j < b.cols(); ++j)
    for (long i = 0; i < a.cols(); ++i)
      total += std::exp(-(an[i] + bn[j] - 2.0 * cross(i, j)) / bandwidth);
  return total / static_cast<double>(a.cols() * b.cols());
}

}  // namespace detail

/// V-statistic MMD with the Gaussian kernel K(x,y)=exp(-|x-y|^2/bandwidth)
/// on already-projected samples (columns).
inline double mmd_projected(const Matrix& gen, const Matrix& real, double bandwidth = 1.0) {
  require(gen.cols() > 0 && real.cols() > 0, ErrorKind::Data, "mmd: empty sample set");
  require(gen.rows() == real.rows(), ErrorKind::Contract, "mmd: dimension mismatch");
  return detail::kernel_mean(gen, gen, bandwidth) - 2.0 * detail::kernel_mean(gen, real, bandwidth) +
         detail::kernel_mean(real, real, bandwidth);
}

/// Per-channel MMD: both sets go through the projector fitted on real data.
inline double mmd(const SignalSet& gen, const SignalSet& real, int channel, const PcaProjector& projector,
                  double bandwidth = 1.0) {
  require(gen.count() > 0 && real.count() > 0, ErrorKind::Data, "mmd: empty sample set");
  return mmd_projected(projector.project(gen.channel(channel)), projector.project(real.channel(channel)),
                       bandwidth);
}

// ---- the FID feature extractor (unconditional classifier) ----

struct ExtractorPlan {
  int epochs = 30;
  int patience = 10;
  int batch_size = 256;
  double lr = 2e-4;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
};

/// Stand-in for the inception network: a classifier trained to map a raw
/// two-channel signal to its HI class; FID uses its pooled features.
class FeatureExtractor {
 public:
  struct Config {
    int n_feature = 512;
    int n_classes = 32;
    double channel_scale = 1.0;
    double leaky_slope = 0.2;
    double dropout_rate = 0.5;
    std::uint64_t seed = 0;
  };

  FeatureExtractor() = default;
  explicit FeatureExtractor(const Config& cfg) : cfg_(cfg) {
    nets::ModelConfig mc;
    mc.variant = nets::Variant::GAN;  // only scaled()/slope/dropout are read
    mc.k = 1;
    mc.n_feature = cfg.n_feature;
    mc.channel_scale = cfg.channel_scale;
    mc.leaky_slope = cfg.leaky_slope;
    mc.dropout_rate = cfg.dropout_rate;
    rng::Stream s(rng::derive(cfg.seed, "extractor-init"));
    critic_.emplace("extractor", mc, 2, 256, cfg.n_classes, s);
  }

  FeatureExtractor(const FeatureExtractor&) = delete;
  FeatureExtractor& operator=(const FeatureExtractor&) = delete;
  FeatureExtractor(FeatureExtractor&&) = default;
  FeatureExtractor& operator=(FeatureExtractor&&) = default;

  const Config& config() const { return cfg_; }
  int feature_dim() const { return critic_->feature_dim(); }

  /// Pooled pre-head features, deterministic (evaluation mode): (m, count).
  Matrix features(const SignalSet& set, int chunk = 256) const {
    require(set.count() > 0, ErrorKind::Data, "extractor: empty set");
    require(set.n_feature() == cfg_.n_feature, ErrorKind::Contract, "extractor: n_feature mismatch");
    nn::Mode eval;
    Matrix out(feature_dim(), set.count());
    for (long start = 0; start < set.count(); start += chunk) {
      const long stop = std::min(set.count(), start + chunk);
      const int B = static_cast<int>(stop - start);
      Matrix x(2, static_cast<long>(B) * cfg_.n_feature);
      for (int b = 0; b < B; ++b)
        x.middleCols(static_cast<long>(b) * cfg_.n_feature, cfg_.n_feature) =
            set.frames[static_cast<std::size_t>(start + b)];
      nn::Feat xf{ad::Var::leaf(std::move(x), false), B, cfg_.n_feature};
      auto o = const_cast<nets::Critic&>(*critic_).forward(xf, eval);
      out.middleCols(start, B) = o.features.value();
    }
    return out;
  }

  nets::Critic& critic() { return *critic_; }

  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (auto* p : const_cast<nets::Critic&>(*critic_).params()) {
      h = fnv1a(p->name, h);
      h = fnv1a(p->var.value(), h);
    }
    return h;
  }

  static constexpr const char* kMagic = "CVFX";

  std::uint64_t save(const std::filesystem::path& path) const {
    io::json meta;
    meta["kind"] = "feature-extractor";
    meta["n_feature"] = cfg_.n_feature;
    meta["n_classes"] = cfg_.n_classes;
    meta["channel_scale"] = cfg_.channel_scale;
    meta["leaky_slope"] = cfg_.leaky_slope;
    meta["dropout_rate"] = cfg_.dropout_rate;
    meta["seed"] = cfg_.seed;
    io::BlobWriter w(kMagic, meta);
    auto& critic = const_cast<nets::Critic&>(*critic_);
    for (auto* p : critic.params()) w.add_matrix(p->name, p->var.value());
    int i = 0;
    for (auto& blk : critic.backbone().blocks()) {
      w.add_matrix("extractor.block" + std::to_string(i) + ".bn.running_mean", blk.bn.running_mean());
      w.add_matrix("extractor.block" + std::to_string(i) + ".bn.running_var", blk.bn.running_var());
      ++i;
    }
    const std::string bytes = w.serialize();
    io::write_bytes(path, bytes);
    return fnv1a(bytes.data(), bytes.size());
  }

  static FeatureExtractor load(const std::filesystem::path& path) {
    io::BlobReader r = io::BlobReader::from_file(path, kMagic);
    Config cfg;
    cfg.n_feature = r.meta().at("n_feature").get<int>();
    cfg.n_classes = r.meta().at("n_classes").get<int>();
    cfg.channel_scale = r.meta().at("channel_scale").get<double>();
    cfg.leaky_slope = r.meta().at("leaky_slope").get<double>();
    cfg.dropout_rate = r.meta().at("dropout_rate").get<double>();
    cfg.seed = r.meta().at("seed").get<std::uint64_t>();
    FeatureExtractor fx(cfg);
    for (auto* p : fx.critic_->params()) {
      Matrix v = r.matrix(p->name);
      require(v.rows() == p->var.rows() && v.cols() == p->var.cols(), ErrorKind::Data,
              "extractor checkpoint: shape mismatch for " + p->name);
      p->var.mutable_value() = v;
    }
    int i = 0;
    for (auto& blk : fx.critic_->backbone().blocks()) {
      blk.bn.running_mean() = r.matrix("extractor.block" + std::to_string(i) + ".bn.running_mean");
      blk.bn.running_var() = r.matrix("extractor.block" + std::to_string(i) + ".bn.running_var");
      ++i;
    }
    return fx;
  }

 private:
  Config cfg_;
  std::optional<nets::Critic> critic_;
};

/// Supervised training of the extractor on real windows (signal -> class).
inline FeatureExtractor train_feature_extractor(const dataset::WindowSet& windows, const ExtractorPlan& plan,
                                                double channel_scale = 1.0) {
  require(!windows.windows.empty(), ErrorKind::Data, "train_feature_extractor: empty window set");
  FeatureExtractor::Config cfg;
  cfg.n_feature = windows.n_feature;
  cfg.channel_scale = channel_scale;
  cfg.seed = plan.seed;
  FeatureExtractor fx(cfg);
  optim::AdamW opt(fx.critic().params(), {plan.lr, 0.9, 0.999, 1e-8, 0.01, 0.0});

  std::vector<std::size_t> order(windows.windows.size());
  std::iota(order.begin(), order.end(), 0);
  rng::Stream split(rng::derive(plan.seed, "extractor-split"));
  split.shuffle(order.begin(), order.end());
  std::size_t n_val = static_cast<std::size_t>(std::lround(plan.val_fraction * static_cast<double>(order.size())));
  if (order.size() > 1 && n_val == 0) n_val = 1;
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<long>(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<long>(n_val), order.end());

  auto forward_ce = [&](const std::vector<std::size_t>& idx, const nn::Mode& mode) {
    const int B = static_cast<int>(idx.size());
    Matrix x(2, static_cast<long>(B) * windows.n_feature);
    std::vector<int> labels;
    labels.reserve(idx.size());
    for (int b = 0; b < B; ++b) {
      const auto& w = windows.windows[idx[static_cast<std::size_t>(b)]];
      x.middleCols(static_cast<long>(b) * windows.n_feature, windows.n_feature) = w.x();
      labels.push_back(w.hi_class());
    }
    nn::Feat xf{ad::Var::leaf(std::move(x), false), B, windows.n_feature};
    auto out = fx.critic().forward(xf, mode);
    return ad::softmax_cross_entropy(out.logits, labels);
  };

  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  std::vector<Matrix> best;
  auto snapshot = [&]() {
    std::vector<Matrix> s;
    for (auto* p : fx.critic().params()) s.push_back(p->var.value());
    for (auto& blk : fx.critic().backbone().blocks()) {
      s.push_back(blk.bn.running_mean());
      s.push_back(blk.bn.running_var());
    }
    return s;
  };
  auto restore = [&](const std::vector<Matrix>& s) {
    std::size_t i = 0;
    for (auto* p : fx.critic().params()) p->var.mutable_value() = s[i++];
    for (auto& blk : fx.critic().backbone().blocks()) {
      blk.bn.running_mean() = s[i++];
      blk.bn.running_var() = s[i++];
    }
  };

  for (int epoch = 0; epoch < plan.epochs; ++epoch) {
    rng::Stream shuffle(rng::derive(plan.seed, "extractor-shuffle", static_cast<std::uint64_t>(epoch)));
    rng::Stream noise(rng::derive(plan.seed, "extractor-noise", static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> idx = train_idx;
    shuffle.shuffle(idx.begin(), idx.end());
    nn::Mode train_mode{true, &noise};
    for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(plan.batch_size)) {
      const std::size_t stop = std::min(idx.size(), start + static_cast<std::size_t>(plan.batch_size));
      std::vector<std::size_t> part(idx.begin() + static_cast<long>(start), idx.begin() + static_cast<long>(stop));
      ad::Var loss = forward_ce(part, train_mode);
      require(std::isfinite(loss.value()(0, 0)), ErrorKind::Numeric, "extractor: non-finite loss");
      opt.zero_grad();
      ad::backward(loss);
      opt.step();
      opt.zero_grad();
    }
    nn::Mode eval;
    const double val = val_idx.empty() ? 0.0 : forward_ce(val_idx, eval).value()(0, 0);
    if (val < best_val) {
      best_val = val;
      best_epoch = epoch;
      best = snapshot();
    }
    if (epoch - best_epoch >= plan.patience) break;
  }
  if (best_epoch >= 0) restore(best);
  return fx;
}

// ---- FID ----

namespace detail {

inline Matrix sqrtm_psd(const Matrix& m, const std::string& what) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(Matrix((m + m.transpose()) / 2.0));
  require(eig.info() == Eigen::Success, ErrorKind::Numeric, "fid: eigendecomposition failed for " + what);
  Vector lam = eig.eigenvalues();
  for (long i = 0; i < lam.size(); ++i) {
    require(lam[i] > -1e-6, ErrorKind::Numeric, "fid: " + what + " has a significant negative eigenvalue");
    lam[i] = std::sqrt(std::max(0.0, lam[i]));
  }
  return eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace detail

/// Frechet distance between Gaussian moment fits.
inline double fid_from_moments(const Vector& mu_g, const Matrix& cov_g, const Vector& mu_r,
                               const Matrix& cov_r) {
  require(mu_g.size() == mu_r.size() && cov_g.rows() == cov_r.rows(), ErrorKind::Contract,
          "fid: dimension mismatch");
  Matrix a = detail::sqrtm_psd(cov_g, "cov_g");
  Matrix inner = a * cov_r * a;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(Matrix((inner + inner.transpose()) / 2.0));
  require(eig.info() == Eigen::Success, ErrorKind::Numeric, "fid: inner eigendecomposition failed");
  double tr_sqrt = 0.0;
  for (long i = 0; i < eig.eigenvalues().size(); ++i) {
    const double lam = eig.eigenvalues()[i];
    require(lam > -1e-6, ErrorKind::Numeric, "fid: matrix square root has a significant negative eigenvalue");
    tr_sqrt += std::sqrt(std::max(0.0, lam));
  }
  return (mu_g - mu_r).squaredNorm() + cov_g.trace() + cov_r.trace() - 2.0 * tr_sqrt;
}

inline std::pair<Vector, Matrix> feature_moments(const Matrix& features) {
  const long N = features.cols();
  require(N >= 2, ErrorKind::Data, "fid: need at least 2 samples for covariance");
  Vector mu = features.rowwise().mean();
  Matrix centered = features.colwise() - mu;
  Matrix cov = centered * centered.transpose() / static_cast<double>(N - 1);
  return {mu, cov};
}

inline double fid(const SignalSet& gen, const SignalSet& real, const FeatureExtractor& extractor) {
  auto [mu_g, cov_g] = feature_moments(extractor.features(gen));
  auto [mu_r, cov_r] = feature_moments(extractor.features(real));
  return fid_from_moments(mu_g, cov_g, mu_r, cov_r);
}

// ---- scalar statistics (Table of auxiliary metrics) ----

/// Mean absolute difference of per-sample means over the masked (pre-FPT)
/// positions; pairs sample i of gen with sample i of real.
inline std::array<double, 2> mad(const SignalSet& gen, const SignalSet& real,
                                 const std::vector<char>& normal_phase_mask) {
  require(gen.count() == real.count(), ErrorKind::Contract, "mad: sample counts differ");
  require(static_cast<long>(normal_phase_mask.size()) == gen.count(), ErrorKind::Contract,
          "mad: mask length mismatch");
  long selected = 0;
  for (char m : normal_phase_mask)
    if (m) ++selected;
  require(selected > 0, ErrorKind::Data, "mad: empty normal-phase mask");
  std::array<double, 2> out{0.0, 0.0};
  for (int c = 0; c < 2; ++c) {
    double sum = 0.0;
    for (long i = 0; i < gen.count(); ++i) {
      if (!normal_phase_mask[static_cast<std::size_t>(i)]) continue;
      sum += std::abs(gen.frames[static_cast<std::size_t>(i)].row(c).mean() -
                      real.frames[static_cast<std::size_t>(i)].row(c).mean());
    }
    out[static_cast<std::size_t>(c)] = sum / static_cast<double>(selected);
  }
  return out;
}

inline double mse_rul(const std::vector<double>& predictions, const std::vector<double>& labels) {
  require(predictions.size() == labels.size() && !predictions.empty(), ErrorKind::Contract,
          "mse: length mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double d = labels[i] - predictions[i];
    sum += d * d;
  }
  return sum / static_cast<double>(predictions.size());
}

/// Mean absolute difference of adjacent points.
inline double mtd(const std::vector<double>& predictions) {
  require(predictions.size() >= 2, ErrorKind::Contract, "mtd: need at least 2 points");
  double sum = 0.0;
  for (std::size_t i = 1; i < predictions.size(); ++i) sum += std::abs(predictions[i] - predictions[i - 1]);
  return sum / static_cast<double>(predictions.size() - 1);
}

/// Mean of within-window population variances over all length-k windows.
/// Deviations are taken against the window's first element before
/// centering, so a constant window yields exactly zero.
inline double mv(const std::vector<double>& predictions, int k) {
  require(k >= 1 && predictions.size() >= static_cast<std::size_t>(k), ErrorKind::Contract,
          "mv: need at least k points");
  const std::size_t windows = predictions.size() - static_cast<std::size_t>(k) + 1;
  double total = 0.0;
  for (std::size_t i = 0; i < windows; ++i) {
    const double shift = predictions[i];
    double mean = 0.0;
    for (int j = 0; j < k; ++j) mean += predictions[i + static_cast<std::size_t>(j)] - shift;
    mean /= k;
    double var = 0.0;
    for (int j = 0; j < k; ++j) {
      const double d = predictions[i + static_cast<std::size_t>(j)] - shift - mean;
      var += d * d;
    }
    total += var / k;
  }
  return total / static_cast<double>(windows);
}

struct PsnrResult {
  std::optional<double> db;  // undefined at zero error
  double max_value = 0.0;
  double error = 0.0;
};

/// PSNR over paired sets; MAX_I is the max over the union of both sets.
inline PsnrResult psnr(const SignalSet& gen, const SignalSet& real) {
  require(gen.count() == real.count() && gen.count() > 0, ErrorKind::Contract, "psnr: sample counts differ");
  double err = 0.0;
  double max_value = -std::numeric_limits<double>::infinity();
  long total = 0;
  for (long i = 0; i < gen.count(); ++i) {
    const Matrix& g = gen.frames[static_cast<std::size_t>(i)];
    const Matrix& r = real.frames[static_cast<std::size_t>(i)];
    err += (g - r).array().square().sum();
    total += g.size();
    max_value = std::max({max_value, g.maxCoeff(), r.maxCoeff()});
  }
  PsnrResult out;
  out.error = err / static_cast<double>(total);
  out.max_value = max_value;
  if (out.error > 0.0) out.db = 10.0 * std::log10(max_value * max_value / out.error);
  return out;
}

struct RulScores {
  double rmse = 0.0;
  double mae = 0.0;
  double score = 0.0;
};

/// RMSE, MAE and the asymmetric penalty score. E_i = truth - prediction;
/// late predictions (E_i > 0) are penalized on the /10 branch.
inline RulScores rul_scores(const std::vector<double>& predictions, const std::vector<double>& truth) {
  require(predictions.size() == truth.size() && !predictions.empty(), ErrorKind::Contract,
          "rul_scores: length mismatch");
  RulScores out;
  double sq = 0.0, ab = 0.0, score = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double e = truth[i] - predictions[i];
    sq += e * e;
    ab += std::abs(e);
    score += e <= 0.0 ? std::exp(-e / 13.0) - 1.0 : std::exp(e / 10.0) - 1.0;
  }
  out.rmse = std::sqrt(sq / static_cast<double>(predictions.size()));
  out.mae = ab / static_cast<double>(predictions.size());
  out.score = score;
  return out;
}

// ---- report ----

struct MetricReport {
  std::optional<double> horizontal_mmd, vertical_mmd, fid_value;
  std::optional<double> mad_h, mad_v;
  std::optional<double> mse, mtd_value, mv_value, psnr_db;
  long gen_count = 0, real_count = 0;
  std::string projector_fingerprint_h, projector_fingerprint_v, extractor_fingerprint;
  io::json provenance = io::json::object();

  io::json to_json() const {
    io::json j;
    auto put = [&j](const char* key, const std::optional<double>& v) {
      if (v)
        j[key] = *v;
      else
        j[key] = nullptr;
    };
    put("horizontal_mmd", horizontal_mmd);
    put("vertical_mmd", vertical_mmd);
    put("fid", fid_value);
    put("mad_h", mad_h);
    put("mad_v", mad_v);
    put("mse", mse);
    put("mtd", mtd_value);
    put("mv", mv_value);
    put("psnr", psnr_db);
    j["gen_count"] = gen_count;
    j["real_count"] = real_count;
    j["projector_fingerprint_h"] = projector_fingerprint_h;
    j["projector_fingerprint_v"] = projector_fingerprint_v;
    j["extractor_fingerprint"] = extractor_fingerprint;
    j["provenance"] = provenance;
    return j;
  }

  static std::string tsv_header() {
    return "label\thorizontal_mmd\tvertical_mmd\tfid\tmad_h\tmad_v\tmse\tmtd\tmv\tpsnr\tgen_count\treal_count";
  }

  std::string tsv_row(const std::string& label) const {
    auto cell = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("undefined"); };
    return label + "\t" + cell(horizontal_mmd) + "\t" + cell(vertical_mmd) + "\t" + cell(fid_value) + "\t" +
           cell(mad_h) + "\t" + cell(mad_v) + "\t" + cell(mse) + "\t" + cell(mtd_value) + "\t" +
           cell(mv_value) + "\t" + cell(psnr_db) + "\t" + std::to_string(gen_count) + "\t" +
           std::to_string(real_count);
  }
};

struct CompareOptions {
  double bandwidth = 1.0;
  const std::vector<char>* normal_phase_mask = nullptr;  // enables MAD + PSNR pairing
  bool paired = false;                                   // gen[i] corresponds to real[i]
};

/// MMD per channel plus FID, and the paired statistics when applicable.
inline MetricReport compare_sets(const SignalSet& gen, const SignalSet& real,
                                 const PcaProjector& projector_h, const PcaProjector& projector_v,
                                 const FeatureExtractor* extractor, const CompareOptions& opts = {}) {
  MetricReport report;
  report.gen_count = gen.count();
  report.real_count = real.count();
  report.horizontal_mmd = mmd(gen, real, 0, projector_h, opts.bandwidth);
  report.vertical_mmd = mmd(gen, real, 1, projector_v, opts.bandwidth);
  report.projector_fingerprint_h = hex64(projector_h.fingerprint);
  report.projector_fingerprint_v = hex64(projector_v.fingerprint);
  if (extractor != nullptr) {
    report.fid_value = fid(gen, real, *extractor);
    report.extractor_fingerprint = hex64(extractor->fingerprint());
  }
  if (opts.paired && gen.count() == real.count()) {
    if (opts.normal_phase_mask != nullptr) {
      bool any = false;
      for (char m : *opts.normal_phase_mask)
        if (m) any = true;
      if (any) {  // no normal-phase samples: MAD stays undefined
        auto m = mad(gen, real, *opts.normal_phase_mask);
        report.mad_h = m[0];
        report.mad_v = m[1];
      }
    }
    PsnrResult p = psnr(gen, real);
    report.psnr_db = p.db;  // stays undefined at zero error
  }
  return report;
}

}  // namespace cvgan::metrics
