#pragma once

#include "cvgan/dataset.hpp"
#include "cvgan/losses.hpp"
#include "cvgan/nets.hpp"
#include "cvgan/optim.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace cvgan::trainer {

enum class TrainMode { NonAr, Ar, ArFinetuneFull, ArFinetuneNoC, ArFinetuneNoDC };

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::NonAr: return "non_ar";
    case TrainMode::Ar: return "ar";
    case TrainMode::ArFinetuneFull: return "ar_finetune_full";
    case TrainMode::ArFinetuneNoC: return "ar_finetune_no_C";
    case TrainMode::ArFinetuneNoDC: return "ar_finetune_no_DC";
  }
  return "?";
}

inline TrainMode train_mode_from_string(const std::string& s) {
  if (s == "non_ar") return TrainMode::NonAr;
  if (s == "ar") return TrainMode::Ar;
  if (s == "ar_finetune_full") return TrainMode::ArFinetuneFull;
  if (s == "ar_finetune_no_C") return TrainMode::ArFinetuneNoC;
  if (s == "ar_finetune_no_DC") return TrainMode::ArFinetuneNoDC;
  throw Error::config("unknown training mode: " + s);
}

struct TrainPlan {
  TrainMode mode = TrainMode::NonAr;
  int epochs = 100;
  int early_stop_patience = 30;
  int batch_size = 1024;
  double lr_gen = 6e-4;
  double lr_dc = 2e-4;
  std::uint64_t seed = 0;
  int finetune_epochs = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double clip_norm = 0.0;  // off by default
  double val_fraction = 0.1;
  double center_decay = 0.9;

  io::json to_json() const {
    return {{"mode", to_string(mode)},
            {"epochs", epochs},
            {"early_stop_patience", early_stop_patience},
            {"batch_size", batch_size},
            {"lr_gen", lr_gen},
            {"lr_dc", lr_dc},
            {"seed", seed},
            {"finetune_epochs", finetune_epochs},
            {"beta1", beta1},
            {"beta2", beta2},
            {"weight_decay", weight_decay},
            {"clip_norm", clip_norm},
            {"val_fraction", val_fraction},
            {"center_decay", center_decay}};
  }
};

struct EpochTrace {
  std::string phase;  // "main" or "finetune"
  int epoch = 0;
  double vae_loss = 0.0;
  double disc_loss = 0.0;
  double classifier_loss = 0.0;
  double val_loss = 0.0;
};

struct RunManifest {
  io::json plan;
  std::string loss_config_name;
  io::json resolved_loss_config;
  std::string dataset_fingerprint;
  std::vector<EpochTrace> traces;
  int best_epoch = -1;
  double best_val = 0.0;
  int stopped_epoch = -1;
  bool aborted = false;
  std::string abort_reason;
  double wall_clock_s = 0.0;
  std::string checkpoint_path;
  std::map<std::string, std::string> fingerprints;  // "<phase>.<component>" -> hex

  io::json to_json() const {
    io::json j;
    j["plan"] = plan;
    j["loss_config"] = loss_config_name;
    j["resolved_loss_config"] = resolved_loss_config;
    j["dataset_fingerprint"] = dataset_fingerprint;
    j["traces"] = io::json::array();
    for (const auto& t : traces)
      j["traces"].push_back({{"phase", t.phase},
                             {"epoch", t.epoch},
                             {"vae_loss", t.vae_loss},
                             {"disc_loss", t.disc_loss},
                             {"classifier_loss", t.classifier_loss},
                             {"val_loss", t.val_loss}});
    j["best_epoch"] = best_epoch;
    j["best_val"] = best_val;
    j["stopped_epoch"] = stopped_epoch;
    j["aborted"] = aborted;
    j["abort_reason"] = abort_reason;
    j["wall_clock_s"] = wall_clock_s;
    j["checkpoint_path"] = checkpoint_path;
    j["fingerprints"] = fingerprints;
    return j;
  }

  /// Loss traces as delimited text for plotting.
  std::string traces_tsv() const {
    std::string out = "phase\tepoch\tvae_loss\tdisc_loss\tclassifier_loss\tval_loss\n";
    for (const auto& t : traces) {
      out += t.phase + "\t" + std::to_string(t.epoch) + "\t" + std::to_string(t.vae_loss) + "\t" +
             std::to_string(t.disc_loss) + "\t" + std::to_string(t.classifier_loss) + "\t" +
             std::to_string(t.val_loss) + "\n";
    }
    return out;
  }
};

/// Terms a given variant can actually compute; the resolved list is what
/// runs and what the manifest echoes.
inline losses::LossConfig resolve_config_for_variant(const losses::LossConfig& cfg,
                                                     const nets::ModelConfig& model) {
  using losses::TermId;
  auto supported = [&](TermId id) {
    switch (id) {
      case TermId::Recon:
      case TermId::KL: return model.has_encoder();
      case TermId::Feature:
      case TermId::Bin: return model.has_discriminator() && model.has_classifier();
      case TermId::he:
      case TermId::hp: return model.with_history();
      case TermId::mf:
      case TermId::L1:
      case TermId::d: return model.has_discriminator();
      case TermId::mc:
      case TermId::C: return model.has_classifier();
    }
    return false;
  };
  losses::LossConfig out;
  out.name = cfg.name;
  for (const auto& t : cfg.vae_terms)
    if (supported(t.id)) out.vae_terms.push_back(t);
  for (const auto& t : cfg.disc_terms)
    if (supported(t.id)) out.disc_terms.push_back(t);
  out.classifier_term_enabled = cfg.classifier_term_enabled && model.has_classifier();
  return out;
}

// ---- batch assembly ----

struct Batch {
  nn::Feat x;  // (io_channels, B*N)
  std::optional<nn::Feat> history;
  std::vector<int> labels;
  Matrix hist_mean;  // (io_channels, B*N), only filled when history is present
  int size = 0;
};

/// Histories substituted per lifecycle during autoregressive training.
using GeneratedSeries = std::unordered_map<const dataset::BearingLifecycle*, std::vector<Matrix>>;

inline Batch assemble_batch(const dataset::WindowSet& set, const std::vector<std::size_t>& idx,
                            bool with_history, const GeneratedSeries* ar_series = nullptr) {
  require(!idx.empty(), ErrorKind::Contract, "assemble_batch: empty index list");
  const int B = static_cast<int>(idx.size());
  const int N = set.n_feature;
  const int k = set.k;
  const long io_ch = set.windows[idx.front()].x().rows();
  Batch batch;
  batch.size = B;
  Matrix x(io_ch, static_cast<long>(B) * N);
  Matrix hist;
  if (with_history) {
    hist.resize(2 * k, static_cast<long>(B) * N);
    batch.hist_mean = Matrix::Zero(2, static_cast<long>(B) * N);
  }
  batch.labels.reserve(idx.size());
  for (int b = 0; b < B; ++b) {
    const auto& w = set.windows[idx[static_cast<std::size_t>(b)]];
    x.middleCols(static_cast<long>(b) * N, N) = w.x();
    batch.labels.push_back(w.hi_class());
    if (with_history) {
      for (int i = 0; i < k; ++i) {
        Matrix row;
        if (ar_series != nullptr) {
          auto it = ar_series->find(&w.lifecycle());
          require(it != ar_series->end(), ErrorKind::Contract, "ar batch: missing generated series");
          row = it->second[static_cast<std::size_t>(w.position() - k + i)];
        } else {
          row = w.x2_row(i);
        }
        hist.block(2 * i, static_cast<long>(b) * N, 2, N) = row;
        batch.hist_mean.middleCols(static_cast<long>(b) * N, N) += row;
      }
      batch.hist_mean.middleCols(static_cast<long>(b) * N, N) /= static_cast<double>(k);
    }
  }
  batch.x = nn::Feat{ad::Var::leaf(std::move(x), false), B, N};
  if (with_history) batch.history = nn::Feat{ad::Var::leaf(std::move(hist), false), B, N};
  return batch;
}

// ---- the trainer ----

class Trainer {
 public:
  Trainer(nets::ModelBundle& model, const dataset::WindowSet& windows, const losses::LossConfig& config,
          const TrainPlan& plan)
      : model_(model), windows_(windows), plan_(plan) {
    require(!windows.windows.empty(), ErrorKind::Data, "train: empty window set");
    const auto& mc = model_.config();
    require(windows.k == mc.k, ErrorKind::Config, "train: window k does not match model k");
    require(windows.n_feature == mc.n_feature, ErrorKind::Config,
            "train: window n_feature does not match model");
    if (plan.mode != TrainMode::NonAr) {
      require(mc.with_history(), ErrorKind::Config,
              "train: mode " + to_string(plan.mode) + " requires a history-conditional variant");
    }
    resolved_ = resolve_config_for_variant(config, mc);
    manifest_.plan = plan.to_json();
    manifest_.loss_config_name = config.name;
    manifest_.resolved_loss_config = resolved_.serialize();

    // 90/10 train/validation split, seeded.
    std::vector<std::size_t> order(windows.windows.size());
    std::iota(order.begin(), order.end(), 0);
    rng::Stream split_stream(rng::derive(plan.seed, "split"));
    split_stream.shuffle(order.begin(), order.end());
    std::size_t n_val = static_cast<std::size_t>(std::lround(plan.val_fraction * static_cast<double>(order.size())));
    if (order.size() > 1 && n_val == 0) n_val = 1;
    if (n_val >= order.size()) n_val = order.size() - 1;
    val_idx_.assign(order.begin(), order.begin() + static_cast<long>(n_val));
    train_idx_.assign(order.begin() + static_cast<long>(n_val), order.end());

    optim::AdamW::Options gen_opts{plan.lr_gen, plan.beta1, plan.beta2, 1e-8, plan.weight_decay, plan.clip_norm};
    optim::AdamW::Options dc_opts{plan.lr_dc, plan.beta1, plan.beta2, 1e-8, plan.weight_decay, plan.clip_norm};
    gen_opt_ = optim::AdamW(model_.generator_group(), gen_opts);
    if (model_.has_discriminator()) disc_opt_ = optim::AdamW(model_.discriminator_group(), dc_opts);
    if (model_.has_classifier()) {
      cls_opt_ = optim::AdamW(model_.classifier_group(), dc_opts);
      centers_ = losses::ClassCenterState(mc.n_classes, model_.classifier_feature_dim(), plan.center_decay);
    }
  }

  struct StepOptions {
    bool update_d = true;
    bool update_c = true;
    bool update_g = true;
    bool ar_histories = false;
  };

  struct StepLosses {
    double vae = 0.0;
    double disc = 0.0;
    double classifier = 0.0;
  };

  /// One optimization step over the given window indices: D update, C
  /// update, then the generator/encoder update consuming the refreshed
  /// critics.
  StepLosses step_once(const std::vector<std::size_t>& idx, const StepOptions& opts, rng::Stream& noise) {
    const auto& mc = model_.config();
    Batch batch = assemble_batch(windows_, idx, mc.with_history(), opts.ar_histories ? &ar_series_ : nullptr);
    nn::Mode train_mode{true, &noise};
    StepLosses out;

    nets::ConditionBatch cond;
    const nets::ConditionBatch* cp = nullptr;
    if (mc.conditional()) {
      cond.classes = batch.labels;
      if (mc.with_history()) cond.history = batch.history;
      cp = &cond;
    }

    // Generator-side forwards, shared by all three sub-steps.
    ad::Var mu, logvar, x_hat_v, x_gen_v;
    nn::Feat x_hat_feat, x_gen_feat;
    if (model_.has_encoder()) {
      auto enc = model_.encode_batch(batch.x, cp, train_mode);
      mu = enc.first;
      logvar = enc.second;
      Matrix eps(mc.latent_dim, batch.size);
      for (long j = 0; j < eps.cols(); ++j)
        for (long i = 0; i < eps.rows(); ++i) eps(i, j) = noise.normal();
      ad::Var z = nets::reparameterize(mu, logvar, ad::Var::leaf(std::move(eps), false));
      x_hat_feat = model_.generate_batch(z, cp, train_mode);
      x_hat_v = x_hat_feat.v;
    }
    {
      Matrix zp(mc.latent_dim, batch.size);
      for (long j = 0; j < zp.cols(); ++j)
        for (long i = 0; i < zp.rows(); ++i) zp(i, j) = noise.normal();
      x_gen_feat = model_.generate_batch(ad::Var::leaf(std::move(zp), false), cp, train_mode);
      x_gen_v = x_gen_feat.v;
    }
    if (!model_.has_encoder()) {
      // Without an encoder the "reconstruction" role is played by the
      // prior sample, as in a plain conditional GAN.
      x_hat_feat = x_gen_feat;
      x_hat_v = x_gen_v;
    }
    check_finite(x_gen_v.value(), "generator output");

    // --- discriminator step ---
    if (model_.has_discriminator() && opts.update_d) {
      nn::Feat fake{ad::stop_grad(x_gen_v), batch.size, mc.n_feature};
      auto d_real = model_.discriminate_batch(batch.x, cp, train_mode);
      auto d_fake = model_.discriminate_batch(fake, cp, train_mode);
      losses::TermInputs in;
      in.d_logit_real = &d_real.logits;
      in.d_logit_gen = &d_fake.logits;
      ad::Var d_hat_logits;
      if (has_disc_term(losses::TermId::L1)) {
        nn::Feat hat{ad::stop_grad(x_hat_v), batch.size, mc.n_feature};
        d_hat_logits = model_.discriminate_batch(hat, cp, train_mode).logits;
        in.d_logit_hat = &d_hat_logits;
      }
      ad::Var disc_loss = ad::Var::leaf(Matrix::Zero(1, 1), false);
      for (const auto& t : resolved_.disc_terms)
        disc_loss = ad::add(disc_loss, ad::scale(losses::loss_term(t.id, in), t.weight));
      out.disc = disc_loss.value()(0, 0);
      check_finite_scalar(out.disc, "discriminator loss");
      zero_all();
      ad::backward(disc_loss);
      disc_opt_->step();
      zero_all();
    }

    // --- classifier step ---
    if (model_.has_classifier() && opts.update_c) {
      auto c_real = model_.classify_batch(batch.x, cp, train_mode);
      losses::TermInputs in;
      in.c_logits_real = &c_real.logits;
      in.labels = &batch.labels;
      if (resolved_.classifier_term_enabled) {
        ad::Var c_loss = losses::loss_term(losses::TermId::C, in);
        out.classifier = c_loss.value()(0, 0);
        check_finite_scalar(out.classifier, "classifier loss");
        zero_all();
        ad::backward(c_loss);
        cls_opt_->step();
        zero_all();
      }
    }

    // --- generator / encoder step ---
    if (opts.update_g) {
      losses::TermInputs in;
      ad::Var hist_mean_v;
      if (mc.with_history()) {
        hist_mean_v = ad::Var::leaf(batch.hist_mean, false);
        in.hist_mean = &hist_mean_v;
      }
      in.x = &batch.x.v;
      if (model_.has_encoder()) {
        in.x_hat = &x_hat_v;
        in.mu = &mu;
        in.logvar = &logvar;
      } else {
        in.x_hat = &x_gen_v;
      }
      in.x_gen = &x_gen_v;
      in.labels = &batch.labels;

      ad::Var d_real_f, d_hat_logits, d_hat_f, d_gen_logits, d_gen_f;
      ad::Var c_real_f, c_hat_logits, c_hat_f, c_gen_f;
      if (model_.has_discriminator() && needs_d_on_g_side()) {
        auto d_real = model_.discriminate_batch(batch.x, cp, train_mode);
        d_real_f = ad::stop_grad(d_real.features);
        in.fD_real = &d_real_f;
        auto d_hat = model_.discriminate_batch(x_hat_feat, cp, train_mode);
        d_hat_logits = d_hat.logits;
        d_hat_f = d_hat.features;
        in.d_logit_hat = &d_hat_logits;
        in.fD_hat = &d_hat_f;
        if (model_.has_encoder()) {
          auto d_gen = model_.discriminate_batch(x_gen_feat, cp, train_mode);
          d_gen_logits = d_gen.logits;
          d_gen_f = d_gen.features;
        } else {
          d_gen_logits = d_hat_logits;
          d_gen_f = d_hat_f;
        }
        in.d_logit_gen = &d_gen_logits;
        in.fD_gen = &d_gen_f;
      }
      if (model_.has_classifier() && needs_c_on_g_side()) {
        auto c_real = model_.classify_batch(batch.x, cp, train_mode);
        c_real_f = ad::stop_grad(c_real.features);
        in.fC_real = &c_real_f;
        // Keep the EMA class centers tracking the current classifier.
        if (centers_) *centers_ = losses::update_class_centers(*centers_, c_real_f.value(), batch.labels);
        auto c_hat = model_.classify_batch(x_hat_feat, cp, train_mode);
        c_hat_logits = c_hat.logits;
        c_hat_f = c_hat.features;
        in.c_logits_hat = &c_hat_logits;
        in.fC_hat = &c_hat_f;
        if (model_.has_encoder()) {
          auto c_gen = model_.classify_batch(x_gen_feat, cp, train_mode);
          c_gen_f = c_gen.features;
        } else {
          c_gen_f = c_hat_f;
        }
        in.fC_gen = &c_gen_f;
        if (centers_) in.centers = &*centers_;
      }

      ad::Var vae_loss = ad::Var::leaf(Matrix::Zero(1, 1), false);
      for (const auto& t : resolved_.vae_terms)
        vae_loss = ad::add(vae_loss, ad::scale(losses::loss_term(t.id, in), t.weight));
      out.vae = vae_loss.value()(0, 0);
      check_finite_scalar(out.vae, "generator loss");
      zero_all();
      ad::backward(vae_loss);
      gen_opt_.step();
      zero_all();
    }
    return out;
  }

  /// Validation monitor: the VAE-side loss on the held-out split in
  /// evaluation mode with a fixed noise stream, so epochs are comparable.
  double validation_loss() {
    if (val_idx_.empty()) return 0.0;
    const auto& mc = model_.config();
    nn::Mode eval;
    double total = 0.0;
    std::size_t count = 0;
    rng::Stream noise(rng::derive(plan_.seed, "val-noise"));
    for (std::size_t start = 0; start < val_idx_.size(); start += static_cast<std::size_t>(plan_.batch_size)) {
      const std::size_t stop = std::min(val_idx_.size(), start + static_cast<std::size_t>(plan_.batch_size));
      std::vector<std::size_t> idx(val_idx_.begin() + static_cast<long>(start),
                                   val_idx_.begin() + static_cast<long>(stop));
      Batch batch = assemble_batch(windows_, idx, mc.with_history());
      nets::ConditionBatch cond;
      const nets::ConditionBatch* cp = nullptr;
      if (mc.conditional()) {
        cond.classes = batch.labels;
        if (mc.with_history()) cond.history = batch.history;
        cp = &cond;
      }
      losses::TermInputs in;
      ad::Var mu, logvar, x_hat_v, x_gen_v, hist_mean_v;
      nn::Feat x_hat_feat, x_gen_feat;
      if (mc.with_history()) {
        hist_mean_v = ad::Var::leaf(batch.hist_mean, false);
        in.hist_mean = &hist_mean_v;
      }
      if (model_.has_encoder()) {
        auto enc = model_.encode_batch(batch.x, cp, eval);
        mu = enc.first;
        logvar = enc.second;
        Matrix eps(mc.latent_dim, batch.size);
        for (long j = 0; j < eps.cols(); ++j)
          for (long i = 0; i < eps.rows(); ++i) eps(i, j) = noise.normal();
        ad::Var z = nets::reparameterize(mu, logvar, ad::Var::leaf(std::move(eps), false));
        x_hat_feat = model_.generate_batch(z, cp, eval);
        x_hat_v = x_hat_feat.v;
        in.mu = &mu;
        in.logvar = &logvar;
        in.x_hat = &x_hat_v;
      }
      Matrix zp(mc.latent_dim, batch.size);
      for (long j = 0; j < zp.cols(); ++j)
        for (long i = 0; i < zp.rows(); ++i) zp(i, j) = noise.normal();
      x_gen_feat = model_.generate_batch(ad::Var::leaf(std::move(zp), false), cp, eval);
      x_gen_v = x_gen_feat.v;
      if (!model_.has_encoder()) {
        x_hat_feat = x_gen_feat;
        x_hat_v = x_gen_v;
        in.x_hat = &x_hat_v;
      }
      in.x = &batch.x.v;
      in.x_gen = &x_gen_v;
      in.labels = &batch.labels;
      ad::Var d_hat_logits, d_hat_f, d_real_f, d_gen_logits, d_gen_f;
      ad::Var c_real_f, c_hat_logits, c_hat_f, c_gen_f;
      if (model_.has_discriminator() && needs_d_on_g_side()) {
        auto d_real = model_.discriminate_batch(batch.x, cp, eval);
        d_real_f = d_real.features;
        in.fD_real = &d_real_f;
        auto d_hat = model_.discriminate_batch(x_hat_feat, cp, eval);
        d_hat_logits = d_hat.logits;
        d_hat_f = d_hat.features;
        in.d_logit_hat = &d_hat_logits;
        in.fD_hat = &d_hat_f;
        if (model_.has_encoder()) {
          auto d_gen = model_.discriminate_batch(x_gen_feat, cp, eval);
          d_gen_logits = d_gen.logits;
          d_gen_f = d_gen.features;
        } else {
          d_gen_logits = d_hat_logits;
          d_gen_f = d_hat_f;
        }
        in.d_logit_gen = &d_gen_logits;
        in.fD_gen = &d_gen_f;
      }
      if (model_.has_classifier() && needs_c_on_g_side()) {
        auto c_real = model_.classify_batch(batch.x, cp, eval);
        c_real_f = c_real.features;
        in.fC_real = &c_real_f;
        auto c_hat = model_.classify_batch(x_hat_feat, cp, eval);
        c_hat_logits = c_hat.logits;
        c_hat_f = c_hat.features;
        in.c_logits_hat = &c_hat_logits;
        in.fC_hat = &c_hat_f;
        if (model_.has_encoder()) {
          c_gen_f = model_.classify_batch(x_gen_feat, cp, eval).features;
        } else {
          c_gen_f = c_hat_f;
        }
        in.fC_gen = &c_gen_f;
        if (centers_) in.centers = &*centers_;
      }
      ad::Var vae_loss = ad::Var::leaf(Matrix::Zero(1, 1), false);
      for (const auto& t : resolved_.vae_terms)
        vae_loss = ad::add(vae_loss, ad::scale(losses::loss_term(t.id, in), t.weight));
      total += vae_loss.value()(0, 0) * static_cast<double>(idx.size());
      count += idx.size();
    }
    return total / static_cast<double>(count);
  }

  /// Rebuild per-lifecycle histories from the model's own generations
  /// (evaluation mode, fresh each epoch). The first k rows stay real.
  void rebuild_ar_series(int epoch) {
    const auto& mc = model_.config();
    ar_series_.clear();
    nn::Mode eval;
    for (const auto& lc : windows_.lifecycles) {
      std::vector<Matrix> series(lc->series.begin(), lc->series.end());
      rng::CounterNormal z_stream(rng::derive(plan_.seed, "ar-roll", static_cast<std::uint64_t>(epoch)) ^
                                  fnv1a(lc->bearing_id));
      Matrix hist(2 * mc.k, mc.n_feature);
      for (int i = 0; i < mc.k; ++i) hist.middleRows(2 * i, 2) = series[static_cast<std::size_t>(i)];
      for (int t = mc.k; t < lc->n(); ++t) {
        nets::ConditionBatch cond;
        cond.classes = {lc->hi_class[static_cast<std::size_t>(t)]};
        cond.history = nn::Feat{ad::Var::leaf(hist, false), 1, mc.n_feature};
        Vector z = z_stream.draw(static_cast<std::uint64_t>(t), mc.latent_dim);
        Matrix gen = model_.generate_batch(ad::Var::leaf(z, false), &cond, eval).v.value();
        series[static_cast<std::size_t>(t)] = gen;
        Matrix next(2 * mc.k, mc.n_feature);
        next.topRows(2 * (mc.k - 1)) = hist.bottomRows(2 * (mc.k - 1));
        next.bottomRows(2) = gen;
        hist = std::move(next);
      }
      ar_series_.emplace(lc.get(), std::move(series));
    }
  }

  /// Full training protocol per the plan; returns the manifest. On a
  /// non-finite loss the run stops and the manifest carries diagnostics.
  RunManifest run() {
    const auto start_time = std::chrono::steady_clock::now();
    manifest_.fingerprints["initial.discriminator"] = hex64(model_.discriminator_fingerprint());
    manifest_.fingerprints["initial.classifier"] = hex64(model_.classifier_fingerprint());
    try {
      const bool main_is_ar = plan_.mode == TrainMode::Ar;
      run_phase("main", plan_.epochs, main_is_ar, StepOptions{true, true, true, main_is_ar},
                /*early_stop=*/true);
      manifest_.fingerprints["after_main.discriminator"] = hex64(model_.discriminator_fingerprint());
      manifest_.fingerprints["after_main.classifier"] = hex64(model_.classifier_fingerprint());
      if (plan_.mode == TrainMode::ArFinetuneFull || plan_.mode == TrainMode::ArFinetuneNoC ||
          plan_.mode == TrainMode::ArFinetuneNoDC) {
        StepOptions opts;
        opts.ar_histories = true;
        opts.update_c = plan_.mode == TrainMode::ArFinetuneFull;
        opts.update_d = plan_.mode != TrainMode::ArFinetuneNoDC;
        run_phase("finetune", plan_.finetune_epochs, true, opts, /*early_stop=*/false);
      }
      manifest_.fingerprints["final.discriminator"] = hex64(model_.discriminator_fingerprint());
      manifest_.fingerprints["final.classifier"] = hex64(model_.classifier_fingerprint());
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Numeric) throw;
      manifest_.aborted = true;
      manifest_.abort_reason = e.what();
    }
    manifest_.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
    return manifest_;
  }

  losses::ClassCenterState* centers() { return centers_ ? &*centers_ : nullptr; }
  const losses::LossConfig& resolved_config() const { return resolved_; }
  const std::vector<std::size_t>& train_indices() const { return train_idx_; }

 private:
  void run_phase(const std::string& phase, int epochs, bool ar, const StepOptions& opts, bool early_stop) {
    std::vector<Matrix> best_snapshot;
    int best_epoch = -1;
    double best_val = std::numeric_limits<double>::infinity();
    for (int epoch = 0; epoch < epochs; ++epoch) {
      if (ar) rebuild_ar_series(global_epoch_);
      rng::Stream shuffle_stream(rng::derive(plan_.seed, "shuffle", static_cast<std::uint64_t>(global_epoch_)));
      rng::Stream noise(rng::derive(plan_.seed, "noise", static_cast<std::uint64_t>(global_epoch_)));
      std::vector<std::size_t> order = train_idx_;
      shuffle_stream.shuffle(order.begin(), order.end());
      double vae_sum = 0.0, disc_sum = 0.0, cls_sum = 0.0;
      std::size_t batches = 0;
      for (std::size_t startp = 0; startp < order.size(); startp += static_cast<std::size_t>(plan_.batch_size)) {
        const std::size_t stop = std::min(order.size(), startp + static_cast<std::size_t>(plan_.batch_size));
        std::vector<std::size_t> idx(order.begin() + static_cast<long>(startp),
                                     order.begin() + static_cast<long>(stop));
        StepLosses l = step_once(idx, opts, noise);
        vae_sum += l.vae;
        disc_sum += l.disc;
        cls_sum += l.classifier;
        ++batches;
      }
      const double val = validation_loss();
      check_finite_scalar(val, "validation loss");
      EpochTrace t;
      t.phase = phase;
      t.epoch = global_epoch_;
      t.vae_loss = vae_sum / static_cast<double>(batches);
      t.disc_loss = disc_sum / static_cast<double>(batches);
      t.classifier_loss = cls_sum / static_cast<double>(batches);
      t.val_loss = val;
      manifest_.traces.push_back(t);
      ++global_epoch_;
      if (early_stop) {
        if (val < best_val) {
          best_val = val;
          best_epoch = epoch;
          best_snapshot = model_.snapshot_values();
        }
        if (epoch - best_epoch >= plan_.early_stop_patience) break;
      }
    }
    if (early_stop && best_epoch >= 0) {
      model_.restore_values(best_snapshot);
      manifest_.best_epoch = best_epoch;
      manifest_.best_val = best_val;
      manifest_.stopped_epoch = global_epoch_ - 1;
    }
  }

  bool has_disc_term(losses::TermId id) const {
    for (const auto& t : resolved_.disc_terms)
      if (t.id == id) return true;
    return false;
  }

  bool needs_d_on_g_side() const {
    using losses::TermId;
    return resolved_.vae_has(TermId::Feature) || resolved_.vae_has(TermId::mf) ||
           resolved_.vae_has(TermId::Bin);
  }

  bool needs_c_on_g_side() const {
    using losses::TermId;
    return resolved_.vae_has(TermId::Feature) || resolved_.vae_has(TermId::mc) ||
           resolved_.vae_has(TermId::Bin);
  }

  void zero_all() {
    gen_opt_.zero_grad();
    if (disc_opt_) disc_opt_->zero_grad();
    if (cls_opt_) cls_opt_->zero_grad();
  }

  static void check_finite(const Matrix& m, const std::string& what) {
    require(m.allFinite(), ErrorKind::Numeric, "non-finite " + what);
  }
  static void check_finite_scalar(double v, const std::string& what) {
    require(std::isfinite(v), ErrorKind::Numeric, "non-finite " + what);
  }

  nets::ModelBundle& model_;
  const dataset::WindowSet& windows_;
  TrainPlan plan_;
  losses::LossConfig resolved_;
  RunManifest manifest_;
  std::vector<std::size_t> train_idx_, val_idx_;
  optim::AdamW gen_opt_;
  std::optional<optim::AdamW> disc_opt_, cls_opt_;
  std::optional<losses::ClassCenterState> centers_;
  GeneratedSeries ar_series_;
  int global_epoch_ = 0;
};

inline RunManifest train(nets::ModelBundle& model, const dataset::WindowSet& windows,
                         const losses::LossConfig& config, const TrainPlan& plan) {
  Trainer t(model, windows, config, plan);
  return t.run();
}

// ---- the initial generator ----

/// Unconditional VAE over whole k-step windows drawn from the pre-FPT
/// region; its samples bootstrap autoregressive rollouts.
inline nets::ModelBundle train_initial_generator(
    const std::vector<std::shared_ptr<const dataset::BearingLifecycle>>& lifecycles, int k,
    const TrainPlan& plan, double scale_multiplier = 1.0) {
  require(!lifecycles.empty(), ErrorKind::Data, "train_initial_generator: no lifecycles");
  const int n_feature = lifecycles.front()->n_feature();

  // Build standalone single-step "lifecycles" whose signal is the whole
  // 2k-channel window, so the generic trainer machinery applies.
  auto windows_lc = std::make_shared<dataset::BearingLifecycle>();
  windows_lc->bearing_id = "initial-generator-windows";
  windows_lc->synthetic = true;
  std::vector<Matrix> window_frames;
  for (const auto& lc : lifecycles) {
    for (int s = 0; s + k <= lc->fpt_index + 1; ++s) {
      Matrix w(2 * k, n_feature);
      for (int i = 0; i < k; ++i) w.middleRows(2 * i, 2) = lc->series[static_cast<std::size_t>(s + i)];
      window_frames.push_back(std::move(w));
    }
  }
  require(!window_frames.empty(), ErrorKind::Data,
          "train_initial_generator: no pre-FPT segment of length >= k");

  nets::BuildOptions opts;
  opts.io_channels = 2 * k;
  opts.scale_multiplier = scale_multiplier;
  opts.seed = plan.seed;
  nets::ModelBundle model = nets::build_model(nets::Variant::VAE, k, n_feature, opts);

  // Wrap the window frames as a flat window set (k=1 history unused).
  auto holder = std::make_shared<dataset::BearingLifecycle>();
  holder->bearing_id = "pre-fpt-windows";
  holder->synthetic = true;
  holder->fpt_index = 0;
  holder->series = window_frames;  // frames are (2k, n_feature)
  holder->hi.assign(window_frames.size(), 1.0);
  holder->hi.back() = 0.0;  // satisfy endpoint invariants of the container type
  holder->hi_class.assign(window_frames.size(), 31);
  holder->hi_class.back() = 0;

  dataset::WindowSet set;
  set.k = k;  // matches the model's k for config validation
  set.n_feature = n_feature;
  for (std::size_t i = 0; i < window_frames.size(); ++i)
    set.windows.emplace_back(holder, static_cast<int>(i), 0);
  set.lifecycles.push_back(holder);

  losses::LossConfig cfg;
  cfg.name = "initial-generator";
  cfg.vae_terms = {{losses::TermId::Recon, 1.0}, {losses::TermId::KL, 1.0}};
  cfg.disc_terms = {};
  cfg.classifier_term_enabled = false;

  Trainer trainer(model, set, cfg, plan);
  RunManifest manifest = trainer.run();
  require(!manifest.aborted, ErrorKind::Numeric,
          "train_initial_generator: aborted: " + manifest.abort_reason);
  return model;
}

// ---- seeded repetition ----

struct SeedRun {
  std::uint64_t seed = 0;
  std::optional<double> value;
  std::string error;
};

struct SeedReport {
  std::vector<SeedRun> runs;
  std::optional<double> mean;  // set only when every seed succeeded
  bool partial = false;

  io::json to_json() const {
    io::json j;
    j["runs"] = io::json::array();
    for (const auto& r : runs) {
      io::json e{{"seed", r.seed}};
      if (r.value) e["value"] = *r.value;
      if (!r.error.empty()) e["error"] = r.error;
      j["runs"].push_back(e);
    }
    if (mean) j["mean"] = *mean;
    j["partial"] = partial;
    return j;
  }
};

inline const std::vector<std::uint64_t>& default_seeds() {
  static const std::vector<std::uint64_t> seeds = {15, 25, 35, 45, 55};
  return seeds;
}

/// Run a task once per seed. A failing seed marks the aggregate partial;
/// partial aggregates carry no mean.
inline SeedReport run_seeds(const std::function<double(std::uint64_t)>& task,
                            const std::vector<std::uint64_t>& seeds = default_seeds()) {
  SeedReport report;
  double sum = 0.0;
  for (std::uint64_t seed : seeds) {
    SeedRun run;
    run.seed = seed;
    try {
      run.value = task(seed);
      sum += *run.value;
    } catch (const std::exception& e) {
      run.error = e.what();
      report.partial = true;
    }
    report.runs.push_back(std::move(run));
  }
  if (!report.partial && !report.runs.empty()) report.mean = sum / static_cast<double>(report.runs.size());
  return report;
}

}  // namespace cvgan::trainer
