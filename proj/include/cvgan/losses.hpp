#pragma once

#include "cvgan/ad.hpp"
#include "cvgan/io.hpp"

#include <map>
#include <string>
#include <vector>

namespace cvgan::losses {

/// Loss-item ledger ids. Short names follow the configuration tables the
/// CLI accepts ("Recon", "KL", "Feature", "he", "hp", "mf", "mc", "L1",
/// "C", "d", "Bin").
enum class TermId { Recon, KL, Feature, he, hp, mf, mc, L1, C, d, Bin };

inline std::string to_string(TermId id) {
  switch (id) {
    case TermId::Recon: return "Recon";
    case TermId::KL: return "KL";
    case TermId::Feature: return "Feature";
    case TermId::he: return "he";
    case TermId::hp: return "hp";
    case TermId::mf: return "mf";
    case TermId::mc: return "mc";
    case TermId::L1: return "L1";
    case TermId::C: return "C";
    case TermId::d: return "d";
    case TermId::Bin: return "Bin";
  }
  return "?";
}

inline TermId term_from_string(const std::string& s) {
  static const std::map<std::string, TermId> table = {
      {"Recon", TermId::Recon}, {"KL", TermId::KL}, {"Feature", TermId::Feature}, {"he", TermId::he},
      {"hp", TermId::hp},       {"mf", TermId::mf}, {"mc", TermId::mc},           {"L1", TermId::L1},
      {"C", TermId::C},         {"d", TermId::d},   {"Bin", TermId::Bin}};
  auto it = table.find(s);
  require(it != table.end(), ErrorKind::Config, "unknown loss term: " + s);
  return it->second;
}

struct LossTerm {
  TermId id;
  double weight = 1.0;
};

struct LossConfig {
  std::string name;
  std::vector<LossTerm> vae_terms;   // resolved: always starts with Recon, KL
  std::vector<LossTerm> disc_terms;  // resolved: always contains d
  bool classifier_term_enabled = true;

  bool vae_has(TermId id) const {
    for (const auto& t : vae_terms)
      if (t.id == id) return true;
    return false;
  }

  io::json serialize() const {
    io::json j;
    j["name"] = name;
    j["vae_terms"] = io::json::array();
    for (const auto& t : vae_terms) j["vae_terms"].push_back({{"id", to_string(t.id)}, {"weight", t.weight}});
    j["disc_terms"] = io::json::array();
    for (const auto& t : disc_terms) j["disc_terms"].push_back({{"id", to_string(t.id)}, {"weight", t.weight}});
    j["classifier_term_enabled"] = classifier_term_enabled;
    return j;
  }

  static LossConfig parse(const io::json& j) {
    LossConfig c;
    c.name = j.at("name").get<std::string>();
    for (const auto& t : j.at("vae_terms"))
      c.vae_terms.push_back({term_from_string(t.at("id").get<std::string>()), t.at("weight").get<double>()});
    for (const auto& t : j.at("disc_terms"))
      c.disc_terms.push_back({term_from_string(t.at("id").get<std::string>()), t.at("weight").get<double>()});
    c.classifier_term_enabled = j.at("classifier_term_enabled").get<bool>();
    return c;
  }
};

/// Exponential-moving-average feature centers of real samples per class.
struct ClassCenterState {
  Matrix centers;  // (n_classes, m)
  std::vector<long> counts;
  double decay = 0.9;

  ClassCenterState() = default;
  ClassCenterState(int n_classes, int feature_dim, double decay_ = 0.9)
      : centers(Matrix::Zero(n_classes, feature_dim)), counts(static_cast<std::size_t>(n_classes), 0), decay(decay_) {}

  int n_classes() const { return static_cast<int>(centers.rows()); }
  int feature_dim() const { return static_cast<int>(centers.cols()); }
};

/// EMA update from one batch of real features (m, B). Classes absent from
/// the batch are untouched; a first observation initializes the center.
inline ClassCenterState update_class_centers(const ClassCenterState& state, const Matrix& features,
                                             const std::vector<int>& labels) {
  require(features.cols() == static_cast<long>(labels.size()), ErrorKind::Contract,
          "update_class_centers: label count mismatch");
  require(features.rows() == state.centers.cols(), ErrorKind::Contract,
          "update_class_centers: feature width mismatch");
  ClassCenterState out = state;
  for (int c = 0; c < state.n_classes(); ++c) {
    Vector sum = Vector::Zero(features.rows());
    long count = 0;
    for (long b = 0; b < features.cols(); ++b) {
      if (labels[static_cast<std::size_t>(b)] == c) {
        sum += features.col(b);
        ++count;
      }
    }
    if (count == 0) continue;
    const Vector batch_mean = sum / static_cast<double>(count);
    if (out.counts[static_cast<std::size_t>(c)] == 0) {
      out.centers.row(c) = batch_mean.transpose();
    } else {
      out.centers.row(c) = state.decay * out.centers.row(c) + (1.0 - state.decay) * batch_mean.transpose();
    }
    out.counts[static_cast<std::size_t>(c)] += count;
  }
  return out;
}

/// Tensor handles a term may need. The trainer populates only the fields
/// the enabled configuration requires.
struct TermInputs {
  const ad::Var* x = nullptr;          // real signal (C, B*N)
  const ad::Var* x_hat = nullptr;      // reconstruction
  const ad::Var* x_gen = nullptr;      // generation from the prior
  const ad::Var* mu = nullptr;         // (latent, B)
  const ad::Var* logvar = nullptr;
  const ad::Var* hist_mean = nullptr;  // mean over the k history rows, (C, B*N)
  const ad::Var* fD_real = nullptr;
  const ad::Var* fD_hat = nullptr;
  const ad::Var* fD_gen = nullptr;
  const ad::Var* fC_real = nullptr;
  const ad::Var* fC_hat = nullptr;
  const ad::Var* fC_gen = nullptr;
  const ad::Var* d_logit_real = nullptr;  // (1, B)
  const ad::Var* d_logit_hat = nullptr;
  const ad::Var* d_logit_gen = nullptr;
  const ad::Var* c_logits_real = nullptr;  // (32, B)
  const ad::Var* c_logits_hat = nullptr;
  const std::vector<int>* labels = nullptr;
  const ClassCenterState* centers = nullptr;
};

namespace detail {

inline const ad::Var& need(const ad::Var* v, TermId id, const char* what) {
  require(v != nullptr && v->valid(), ErrorKind::Contract,
          "loss term " + to_string(id) + " requires " + what);
  return *v;
}

// -E[log sigma(a)] in the saturation-safe softplus form.
inline ad::Var nll_real(const ad::Var& logit) { return ad::mean(ad::softplus(ad::scale(logit, -1.0))); }
// -E[log (1 - sigma(a))]
inline ad::Var nll_fake(const ad::Var& logit) { return ad::mean(ad::softplus(logit)); }

}  // namespace detail

/// Scalar value of one ledger term as an autodiff node.
inline ad::Var loss_term(TermId id, const TermInputs& in) {
  using detail::need;
  switch (id) {
    case TermId::Recon:
      return ad::mean(ad::square(ad::sub(need(in.x, id, "x"), need(in.x_hat, id, "x_hat"))));
    case TermId::KL: {
      const ad::Var& mu = need(in.mu, id, "mu");
      const ad::Var& lv = need(in.logvar, id, "logvar");
      ad::Var inner = ad::add(ad::add(ad::square(mu), ad::exp(lv)), ad::add_scalar(ad::scale(lv, -1.0), -1.0));
      return ad::mean(ad::scale(ad::colsum(inner), 0.5));
    }
    case TermId::Feature: {
      ad::Var c = ad::mean(ad::square(ad::sub(need(in.fC_real, id, "fC(x)"), need(in.fC_hat, id, "fC(x_hat)"))));
      ad::Var d = ad::mean(ad::square(ad::sub(need(in.fD_real, id, "fD(x)"), need(in.fD_hat, id, "fD(x_hat)"))));
      return ad::add(c, d);
    }
    case TermId::he:
      return ad::scale(
          ad::mean(ad::square(ad::sub(need(in.hist_mean, id, "history mean"), need(in.x_hat, id, "x_hat")))), 0.5);
    case TermId::hp:
      return ad::scale(
          ad::mean(ad::square(ad::sub(need(in.hist_mean, id, "history mean"), need(in.x_gen, id, "G(z|y)")))), 0.5);
    case TermId::mf: {
      ad::Var diff = ad::sub(ad::rowmean(need(in.fD_real, id, "fD(x)")), ad::rowmean(need(in.fD_gen, id, "fD(G(z|y))")));
      return ad::scale(ad::sum(ad::square(diff)), 0.5);
    }
    case TermId::mc: {
      const ad::Var& feats = need(in.fC_gen, id, "fC(G(z|y))");
      const auto* labels = in.labels;
      require(labels != nullptr, ErrorKind::Contract, "loss term mc requires labels");
      require(in.centers != nullptr, ErrorKind::Contract, "loss term mc requires class centers");
      const ClassCenterState& st = *in.centers;
      require(st.feature_dim() == feats.rows(), ErrorKind::Contract, "mc: center width mismatch");
      ad::Var total = ad::Var::leaf(Matrix::Zero(1, 1), false);
      for (int c = 0; c < st.n_classes(); ++c) {
        if (st.counts[static_cast<std::size_t>(c)] == 0) continue;  // uninitialized center contributes 0
        std::vector<char> mask(labels->size(), 0);
        bool present = false;
        for (std::size_t b = 0; b < labels->size(); ++b)
          if ((*labels)[b] == c) mask[b] = 1, present = true;
        if (!present) continue;
        ad::Var fake_mean = ad::masked_colmean(feats, mask);
        ad::Var center = ad::Var::leaf(st.centers.row(c).transpose(), false);
        total = ad::add(total, ad::scale(ad::sum(ad::square(ad::sub(center, fake_mean))), 0.5));
      }
      return total;
    }
    case TermId::L1:
      return detail::nll_fake(need(in.d_logit_hat, id, "D(x_hat|y)"));
    case TermId::C: {
      require(in.labels != nullptr, ErrorKind::Contract, "loss term C requires labels");
      return ad::softmax_cross_entropy(need(in.c_logits_real, id, "C(x|y)"), *in.labels);
    }
    case TermId::d:
      return ad::add(detail::nll_real(need(in.d_logit_real, id, "D(x|y)")),
                     detail::nll_fake(need(in.d_logit_gen, id, "D(G(z|y)|y)")));
    case TermId::Bin: {
      require(in.labels != nullptr, ErrorKind::Contract, "loss term Bin requires labels");
      ad::Var d_part = detail::nll_real(need(in.d_logit_hat, id, "D(x_hat|y)"));
      ad::Var c_part = ad::softmax_cross_entropy(need(in.c_logits_hat, id, "C(x_hat|y)"), *in.labels);
      return ad::add(d_part, c_part);
    }
  }
  throw Error::contract("loss_term: unknown id");
}

/// Named configurations conf1..conf14. The VAE side always carries Recon
/// and KL in front of the listed extras; the discriminator side always
/// carries d.
inline LossConfig compose_config(const std::string& name) {
  static const std::map<std::string, std::pair<std::vector<TermId>, std::vector<TermId>>> table = {
      {"conf1", {{TermId::Bin}, {}}},
      {"conf2", {{TermId::Feature, TermId::mc, TermId::hp}, {}}},
      {"conf3", {{TermId::Bin}, {TermId::L1}}},
      {"conf4", {{TermId::Feature, TermId::mc, TermId::hp, TermId::he}, {}}},
      {"conf5", {{TermId::Bin, TermId::mc}, {TermId::L1}}},
      {"conf6", {{TermId::Bin, TermId::mc, TermId::mf, TermId::he}, {}}},
      {"conf7", {{TermId::Bin, TermId::mc, TermId::mf}, {TermId::L1}}},
      {"conf8", {{TermId::Feature, TermId::mc, TermId::mf}, {TermId::L1}}},
      {"conf9", {{TermId::Feature}, {}}},
      {"conf10", {{TermId::Bin, TermId::mc, TermId::mf}, {}}},
      {"conf11", {{TermId::Bin, TermId::mc, TermId::mf, TermId::hp}, {}}},
      {"conf12", {{TermId::Bin, TermId::mc}, {}}},
      {"conf13", {{TermId::Bin, TermId::mc, TermId::hp}, {}}},
      {"conf14", {{TermId::Feature, TermId::mc}, {}}},
  };
  auto it = table.find(name);
  require(it != table.end(), ErrorKind::Config, "unknown loss configuration: " + name);
  LossConfig cfg;
  cfg.name = name;
  cfg.vae_terms.push_back({TermId::Recon, 1.0});
  cfg.vae_terms.push_back({TermId::KL, 1.0});
  for (TermId id : it->second.first) cfg.vae_terms.push_back({id, 1.0});
  cfg.disc_terms.push_back({TermId::d, 1.0});
  for (TermId id : it->second.second) cfg.disc_terms.push_back({id, 1.0});
  cfg.classifier_term_enabled = true;
  return cfg;
}

inline const std::vector<std::string>& config_names() {
  static const std::vector<std::string> names = {"conf1", "conf2",  "conf3",  "conf4",  "conf5",
                                                 "conf6", "conf7",  "conf8",  "conf9",  "conf10",
                                                 "conf11", "conf12", "conf13", "conf14"};
  return names;
}

struct TotalLosses {
  ad::Var vae;
  ad::Var disc;
  ad::Var classifier;  // invalid Var when no classifier exists
};

struct TotalOptions {
  bool include_recon_kl = true;  // false for variants without an encoder
  bool has_discriminator = true;
  bool has_classifier = true;
};

/// Weighted per-component sums. The classifier loss is the cross-entropy
/// on real data whenever a classifier exists and the config enables it.
inline TotalLosses total_losses(const LossConfig& cfg, const TermInputs& in, const TotalOptions& opts) {
  TotalLosses out;
  out.vae = ad::Var::leaf(Matrix::Zero(1, 1), false);
  for (const auto& t : cfg.vae_terms) {
    if (!opts.include_recon_kl && (t.id == TermId::Recon || t.id == TermId::KL)) continue;
    out.vae = ad::add(out.vae, ad::scale(loss_term(t.id, in), t.weight));
  }
  if (opts.has_discriminator) {
    out.disc = ad::Var::leaf(Matrix::Zero(1, 1), false);
    for (const auto& t : cfg.disc_terms) out.disc = ad::add(out.disc, ad::scale(loss_term(t.id, in), t.weight));
  }
  if (opts.has_classifier && cfg.classifier_term_enabled) {
    out.classifier = loss_term(TermId::C, in);
  }
  return out;
}

}  // namespace cvgan::losses
