#pragma once

#include "cvgan/dataset.hpp"
#include "cvgan/metrics.hpp"
#include "cvgan/nets.hpp"
#include "cvgan/optim.hpp"

#include <algorithm>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

namespace cvgan::rul {

enum class PredictorKind { SCNN, GRU };

inline std::string to_string(PredictorKind k) { return k == PredictorKind::SCNN ? "SCNN" : "GRU"; }

inline PredictorKind predictor_from_string(const std::string& s) {
  if (s == "SCNN") return PredictorKind::SCNN;
  if (s == "GRU") return PredictorKind::GRU;
  throw Error::config("unknown predictor kind: " + s);
}

/// HI regressors. SCNN stacks the window (history + current signal) as
/// 2(k+1) channels; the GRU consumes the k history rows as a sequence.
/// Both end in a sigmoid head so outputs stay in [0,1].
class Predictor {
 public:
  Predictor(PredictorKind kind, int k, int n_feature, std::uint64_t seed)
      : kind_(kind), k_(k), n_feature_(n_feature) {
    rng::Stream s(rng::derive(seed, "predictor-init"));
    if (kind == PredictorKind::SCNN) {
      const int in_ch = 2 * (k + 1);
      int cin = in_ch;
      const std::array<int, 3> channels{16, 32, 64};
      for (int i = 0; i < 3; ++i) {
        blocks_.emplace_back("scnn.block" + std::to_string(i), cin, channels[static_cast<std::size_t>(i)], 2,
                             0.2, s);
        cin = channels[static_cast<std::size_t>(i)];
      }
      head_ = nn::Linear("scnn.head", 64, 1, s);
    } else {
      gru1_ = nn::GruLayer("gru.layer0", 2 * n_feature, 64, s);
      gru2_ = nn::GruLayer("gru.layer1", 64, 64, s);
      head_ = nn::Linear("gru.head", 64, 1, s);
    }
  }

  Predictor(const Predictor&) = delete;
  Predictor& operator=(const Predictor&) = delete;
  Predictor(Predictor&&) = default;
  Predictor& operator=(Predictor&&) = default;

  PredictorKind kind() const { return kind_; }

  /// Batch forward: (1, B) predictions in [0,1].
  ad::Var forward(const dataset::WindowSet& set, const std::vector<std::size_t>& idx, const nn::Mode& mode) {
    const int B = static_cast<int>(idx.size());
    const int N = set.n_feature;
    require(N == n_feature_, ErrorKind::Contract, "predictor: n_feature mismatch");
    if (kind_ == PredictorKind::SCNN) {
      require(set.k == k_, ErrorKind::Contract, "SCNN predictor: window k mismatch");
      Matrix x(2 * (k_ + 1), static_cast<long>(B) * N);
      for (int b = 0; b < B; ++b) {
        const auto& w = set.windows[idx[static_cast<std::size_t>(b)]];
        for (int i = 0; i < k_; ++i)
          x.block(2 * i, static_cast<long>(b) * N, 2, N) = w.x2_row(i);
        x.block(2 * k_, static_cast<long>(b) * N, 2, N) = w.x();
      }
      nn::Feat f{ad::Var::leaf(std::move(x), false), B, N};
      for (auto& blk : blocks_) f = blk.forward(f, mode);
      return ad::sigmoid(head_.forward(nn::global_avg_pool(f)));
    }
    // GRU: sequence of k row-flattened steps; the recurrence is
    // length-agnostic, so any window size works.
    const int k = set.k;
    std::vector<ad::Var> seq;
    seq.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
      Matrix step(2 * N, B);
      for (int b = 0; b < B; ++b) {
        const auto& w = set.windows[idx[static_cast<std::size_t>(b)]];
        const Matrix& row = w.x2_row(i);
        step.col(b).head(N) = row.row(0).transpose();
        step.col(b).tail(N) = row.row(1).transpose();
      }
      seq.push_back(ad::Var::leaf(std::move(step), false));
    }
    ad::Var last = gru2_->forward(gru1_->forward(seq)).back();
    return ad::sigmoid(head_.forward(last));
  }

  std::vector<double> predict(const dataset::WindowSet& set, int chunk = 512) {
    nn::Mode eval;
    std::vector<double> out;
    out.reserve(set.windows.size());
    for (std::size_t start = 0; start < set.windows.size(); start += static_cast<std::size_t>(chunk)) {
      const std::size_t stop = std::min(set.windows.size(), start + static_cast<std::size_t>(chunk));
      std::vector<std::size_t> idx(stop - start);
      std::iota(idx.begin(), idx.end(), start);
      ad::Var pred = forward(set, idx, eval);
      for (long j = 0; j < pred.cols(); ++j) out.push_back(pred.value()(0, j));
    }
    return out;
  }

  std::vector<nn::Param*> params() {
    std::vector<nn::Param*> p;
    for (auto& b : blocks_)
      for (auto* q : b.params()) p.push_back(q);
    if (gru1_)
      for (auto* q : gru1_->params()) p.push_back(q);
    if (gru2_)
      for (auto* q : gru2_->params()) p.push_back(q);
    for (auto* q : head_.params()) p.push_back(q);
    return p;
  }

 private:
  PredictorKind kind_;
  int k_;
  int n_feature_;
  std::vector<nets::ConvBlock> blocks_;
  std::optional<nn::GruLayer> gru1_, gru2_;
  nn::Linear head_;
};

struct PredictorSpec {
  PredictorKind kind = PredictorKind::SCNN;
  int k = 15;
  int n_feature = 512;
  std::uint64_t seed = 0;
};

inline Predictor build_predictor(const PredictorSpec& spec) {
  require(spec.k >= 1 && spec.n_feature >= 1, ErrorKind::Config, "build_predictor: invalid spec");
  return Predictor(spec.kind, spec.k, spec.n_feature, spec.seed);
}

struct PredictorPlan {
  int epochs = 150;
  int patience = 20;
  int batch_size = 2048;
  double lr = 8e-4;
  double weight_decay = 0.01;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct PredictorTrace {
  int epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct PredictorManifest {
  std::vector<PredictorTrace> traces;
  int best_epoch = -1;
  double best_val = 0.0;

  io::json to_json() const {
    io::json j;
    j["traces"] = io::json::array();
    for (const auto& t : traces)
      j["traces"].push_back({{"epoch", t.epoch}, {"train_mse", t.train_mse}, {"val_mse", t.val_mse}});
    j["best_epoch"] = best_epoch;
    j["best_val"] = best_val;
    return j;
  }
};

/// MSE regression to the HI labels with early stopping on validation MSE.
inline PredictorManifest train_predictor(Predictor& predictor, const dataset::WindowSet& windows,
                                         const PredictorPlan& plan) {
  require(!windows.windows.empty(), ErrorKind::Data, "train_predictor: empty window set");
  optim::AdamW opt(predictor.params(), {plan.lr, 0.9, 0.999, 1e-8, plan.weight_decay, 0.0});

  std::vector<std::size_t> order(windows.windows.size());
  std::iota(order.begin(), order.end(), 0);
  rng::Stream split(rng::derive(plan.seed, "predictor-split"));
  split.shuffle(order.begin(), order.end());
  std::size_t n_val = static_cast<std::size_t>(std::lround(plan.val_fraction * static_cast<double>(order.size())));
  if (order.size() > 1 && n_val == 0) n_val = 1;
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<long>(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<long>(n_val), order.end());

  auto batch_mse = [&](const std::vector<std::size_t>& idx, const nn::Mode& mode) {
    ad::Var pred = predictor.forward(windows, idx, mode);
    Matrix targets(1, static_cast<long>(idx.size()));
    for (std::size_t b = 0; b < idx.size(); ++b) targets(0, static_cast<long>(b)) = windows.windows[idx[b]].hi();
    return ad::mean(ad::square(ad::sub(pred, ad::Var::leaf(std::move(targets), false))));
  };

  PredictorManifest manifest;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Matrix> best;
  auto snapshot = [&] {
    std::vector<Matrix> s;
    for (auto* p : predictor.params()) s.push_back(p->var.value());
    return s;
  };

  for (int epoch = 0; epoch < plan.epochs; ++epoch) {
    rng::Stream shuffle(rng::derive(plan.seed, "predictor-shuffle", static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> idx = train_idx;
    shuffle.shuffle(idx.begin(), idx.end());
    nn::Mode train_mode{true, nullptr};
    double train_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(plan.batch_size)) {
      const std::size_t stop = std::min(idx.size(), start + static_cast<std::size_t>(plan.batch_size));
      std::vector<std::size_t> part(idx.begin() + static_cast<long>(start), idx.begin() + static_cast<long>(stop));
      ad::Var loss = batch_mse(part, train_mode);
      require(std::isfinite(loss.value()(0, 0)), ErrorKind::Numeric, "train_predictor: non-finite loss");
      train_sum += loss.value()(0, 0);
      ++batches;
      opt.zero_grad();
      ad::backward(loss);
      opt.step();
      opt.zero_grad();
    }
    nn::Mode eval;
    const double val = val_idx.empty() ? train_sum / static_cast<double>(batches)
                                       : batch_mse(val_idx, eval).value()(0, 0);
    manifest.traces.push_back({epoch, train_sum / static_cast<double>(batches), val});
    if (val < best_val) {
      best_val = val;
      manifest.best_epoch = epoch;
      best = snapshot();
    }
    if (epoch - manifest.best_epoch >= plan.patience) break;
  }
  if (manifest.best_epoch >= 0) {
    std::size_t i = 0;
    for (auto* p : predictor.params()) p->var.mutable_value() = best[i++];
    manifest.best_val = best_val;
  }
  return manifest;
}

// ---- the augmentation experiment ----

struct ExperimentPlan {
  std::vector<std::shared_ptr<const dataset::BearingLifecycle>> bearings;  // all real bearings
  std::string test_bearing;
  std::vector<std::shared_ptr<const dataset::BearingLifecycle>> generated;  // empty = "no extra data"
  PredictorKind kind = PredictorKind::SCNN;
  int k = 15;
  PredictorPlan train;
  std::vector<std::uint64_t> seeds = {15, 25, 35, 45, 55};
};

struct ExperimentReport {
  struct SeedResult {
    std::uint64_t seed = 0;
    std::optional<metrics::RulScores> scores;
    std::string error;
  };
  std::vector<SeedResult> per_seed;
  std::optional<metrics::RulScores> mean;  // only when every seed succeeded
  bool partial = false;
  long train_window_count = 0;
  long generated_window_count = 0;
  long test_window_count = 0;
  std::string predictor;
  std::string test_bearing;
  std::string augmentation;

  io::json to_json() const {
    io::json j;
    j["predictor"] = predictor;
    j["test_bearing"] = test_bearing;
    j["augmentation"] = augmentation;
    j["train_window_count"] = train_window_count;
    j["generated_window_count"] = generated_window_count;
    j["test_window_count"] = test_window_count;
    j["per_seed"] = io::json::array();
    for (const auto& r : per_seed) {
      io::json e{{"seed", r.seed}};
      if (r.scores) {
        e["mae"] = r.scores->mae;
        e["rmse"] = r.scores->rmse;
        e["score"] = r.scores->score;
      }
      if (!r.error.empty()) e["error"] = r.error;
      j["per_seed"].push_back(e);
    }
    if (mean) {
      j["mean"] = {{"mae", mean->mae}, {"rmse", mean->rmse}, {"score", mean->score}};
    }
    j["partial"] = partial;
    return j;
  }

  static std::string tsv_header() {
    return "predictor\ttest_bearing\taugmentation\tmae\trmse\tscore\tseeds\tpartial";
  }

  std::string tsv_row() const {
    auto cell = [](const std::optional<metrics::RulScores>& s, int field) {
      if (!s) return std::string("undefined");
      return std::to_string(field == 0 ? s->mae : field == 1 ? s->rmse : s->score);
    };
    return predictor + "\t" + test_bearing + "\t" + augmentation + "\t" + cell(mean, 0) + "\t" +
           cell(mean, 1) + "\t" + cell(mean, 2) + "\t" + std::to_string(per_seed.size()) + "\t" +
           (partial ? "yes" : "no");
  }
};

/// Train on all bearings but the held-out one (plus generated lifecycles
/// when augmenting), evaluate on the held-out bearing. A fingerprint scan
/// guarantees no test window can reach a training batch.
inline ExperimentReport augmentation_experiment(const ExperimentPlan& plan) {
  std::shared_ptr<const dataset::BearingLifecycle> test;
  std::vector<std::shared_ptr<const dataset::BearingLifecycle>> train_bearings;
  for (const auto& lc : plan.bearings) {
    if (lc->bearing_id == plan.test_bearing)
      test = lc;
    else
      train_bearings.push_back(lc);
  }
  require(test != nullptr, ErrorKind::Config, "augmentation_experiment: unknown test bearing " + plan.test_bearing);
  require(!train_bearings.empty(), ErrorKind::Data, "augmentation_experiment: no training bearings");

  std::vector<std::shared_ptr<const dataset::BearingLifecycle>> train_all = train_bearings;
  long generated_windows = 0;
  for (const auto& g : plan.generated) {
    require(g->n() > plan.k, ErrorKind::Data, "augmentation_experiment: generated lifecycle shorter than k");
    generated_windows += g->n() - plan.k;
    train_all.push_back(g);
  }

  dataset::WindowSet train_set = dataset::build_window_set(train_all, plan.k);
  dataset::WindowSet test_set = dataset::build_window_set({test}, plan.k);

  // Leakage check: no test-window fingerprint may appear in training data.
  std::unordered_set<std::uint64_t> test_fps;
  for (const auto& w : test_set.windows) test_fps.insert(w.fingerprint());
  for (const auto& w : train_set.windows) {
    require(!test_fps.count(w.fingerprint()), ErrorKind::Data,
            "augmentation_experiment: test-bearing window leaked into the training set");
  }

  ExperimentReport report;
  report.predictor = to_string(plan.kind);
  report.test_bearing = plan.test_bearing;
  report.augmentation = plan.generated.empty() ? "none" : "generated x" + std::to_string(plan.generated.size());
  report.train_window_count = static_cast<long>(train_set.windows.size());
  report.generated_window_count = generated_windows;
  report.test_window_count = static_cast<long>(test_set.windows.size());

  std::vector<double> truth;
  truth.reserve(test_set.windows.size());
  for (const auto& w : test_set.windows) truth.push_back(w.hi());

  metrics::RulScores sum;
  for (std::uint64_t seed : plan.seeds) {
    ExperimentReport::SeedResult r;
    r.seed = seed;
    try {
      PredictorSpec spec{plan.kind, plan.k, train_set.n_feature, seed};
      Predictor predictor = build_predictor(spec);
      PredictorPlan p = plan.train;
      p.seed = seed;
      train_predictor(predictor, train_set, p);
      std::vector<double> pred = predictor.predict(test_set);
      r.scores = metrics::rul_scores(pred, truth);
      sum.mae += r.scores->mae;
      sum.rmse += r.scores->rmse;
      sum.score += r.scores->score;
    } catch (const std::exception& e) {
      r.error = e.what();
      report.partial = true;
    }
    report.per_seed.push_back(std::move(r));
  }
  if (!report.partial && !report.per_seed.empty()) {
    const double n = static_cast<double>(report.per_seed.size());
    report.mean = metrics::RulScores{sum.rmse / n, sum.mae / n, sum.score / n};
  }
  return report;
}

}  // namespace cvgan::rul
