#pragma once

#include "cvgan/io.hpp"
#include "cvgan/nn.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cvgan::nets {

enum class Variant { CVGAN, CVAE, CGAN, GAN, VAE, VGAN, CVGAN_no_H };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::CVGAN: return "CVGAN";
    case Variant::CVAE: return "CVAE";
    case Variant::CGAN: return "CGAN";
    case Variant::GAN: return "GAN";
    case Variant::VAE: return "VAE";
    case Variant::VGAN: return "VGAN";
    case Variant::CVGAN_no_H: return "CVGAN_no_H";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "CVGAN") return Variant::CVGAN;
  if (s == "CVAE") return Variant::CVAE;
  if (s == "CGAN") return Variant::CGAN;
  if (s == "GAN") return Variant::GAN;
  if (s == "VAE") return Variant::VAE;
  if (s == "VGAN") return Variant::VGAN;
  if (s == "CVGAN_no_H") return Variant::CVGAN_no_H;
  throw Error::config("unknown model variant: " + s);
}

struct ModelConfig {
  Variant variant = Variant::CVGAN;
  int k = 15;
  int n_feature = 512;
  int latent_dim = 32;
  int n_classes = 32;
  int io_channels = 2;  // generated/encoded signal channels (2k for the window generator)
  double channel_scale = 1.0;
  double leaky_slope = 0.2;
  double dropout_rate = 0.5;
  std::uint64_t seed = 0;

  bool conditional() const {
    return variant == Variant::CVGAN || variant == Variant::CVAE || variant == Variant::CGAN ||
           variant == Variant::CVGAN_no_H;
  }
  bool with_history() const { return conditional() && variant != Variant::CVGAN_no_H; }
  bool has_encoder() const { return variant != Variant::CGAN && variant != Variant::GAN; }
  bool has_discriminator() const { return variant != Variant::CVAE && variant != Variant::VAE; }
  bool has_classifier() const { return has_discriminator(); }

  /// The backbone downsamples by 16; the generator starts that short.
  int gen_input_len() const { return n_feature / 16; }
  int z_channels() const { return latent_dim / gen_input_len(); }

  void validate() const {
    require(k >= 1, ErrorKind::Config, "model: k must be >= 1");
    require(n_feature >= 16 && n_feature % 16 == 0, ErrorKind::Config,
            "model: n_feature must be a positive multiple of 16");
    require(latent_dim % gen_input_len() == 0, ErrorKind::Config,
            "model: latent_dim must be divisible by n_feature/16");
    require(channel_scale > 0.0, ErrorKind::Config, "model: channel_scale must be > 0");
    require(io_channels >= 1, ErrorKind::Config, "model: io_channels must be >= 1");
  }

  int scaled(int channels) const { return std::max(1, static_cast<int>(std::lround(channels * channel_scale))); }
};

/// Condition input for a batch: per-sample class plus optional history
/// stacked as 2k channels of length n_feature.
struct ConditionBatch {
  std::vector<int> classes;
  std::optional<nn::Feat> history;
};

/// Single-sample condition, mirroring the batch form.
struct ConditionBundle {
  int hi_class = 0;
  std::optional<Matrix> history;  // (2k, n_feature)
};

struct LatentCode {
  Vector mu;
  Vector logvar;
  Vector z;
};

struct NetOutputs {
  double disc_logit = 0.0;
  Vector disc_features;
  Vector class_logits;
  Vector class_features;
};

inline ad::Var reparameterize(const ad::Var& mu, const ad::Var& logvar, const ad::Var& noise) {
  require(mu.rows() == logvar.rows() && mu.cols() == logvar.cols() && mu.rows() == noise.rows() &&
              mu.cols() == noise.cols(),
          ErrorKind::Contract, "reparameterize: shape mismatch");
  return ad::add(mu, ad::mul(ad::exp(ad::scale(logvar, 0.5)), noise));
}

inline Vector reparameterize(const Vector& mu, const Vector& logvar, const Vector& noise) {
  require(mu.size() == logvar.size() && mu.size() == noise.size(), ErrorKind::Contract,
          "reparameterize: shape mismatch");
  return mu.array() + (logvar.array() * 0.5).exp() * noise.array();
}

// ---- building blocks ----

struct ConvBlock {
  nn::Conv1d conv;
  nn::BatchNorm1d bn;
  double slope = 0.2;

  ConvBlock() = default;
  ConvBlock(const std::string& name, int in_ch, int out_ch, int stride, double slope_, rng::Stream& s)
      : conv(name + ".conv", in_ch, out_ch, 3, stride, 1, s), bn(name + ".bn", out_ch), slope(slope_) {}

  nn::Feat forward(const nn::Feat& x, const nn::Mode& mode) {
    nn::Feat y = bn.forward(conv.forward(x), mode);
    return {ad::leaky_relu(y.v, slope), y.batch, y.len};
  }

  std::vector<nn::Param*> params() {
    auto p = conv.params();
    for (auto* q : bn.params()) p.push_back(q);
    return p;
  }
};

struct TConvBlock {
  nn::ConvTranspose1d tconv;
  std::optional<nn::BatchNorm1d> bn;
  double slope = 0.2;
  bool output_sigmoid = false;

  TConvBlock() = default;
  TConvBlock(const std::string& name, int in_ch, int out_ch, int stride, int out_pad, double slope_,
             bool final, rng::Stream& s)
      : tconv(name + ".tconv", in_ch, out_ch, 3, stride, 1, out_pad, s), slope(slope_), output_sigmoid(final) {
    if (!final) bn.emplace(name + ".bn", out_ch);
  }

  nn::Feat forward(const nn::Feat& x, const nn::Mode& mode) {
    nn::Feat y = tconv.forward(x);
    if (output_sigmoid) return {ad::sigmoid(y.v), y.batch, y.len};
    y = bn->forward(y, mode);
    return {ad::leaky_relu(y.v, slope), y.batch, y.len};
  }

  std::vector<nn::Param*> params() {
    auto p = tconv.params();
    if (bn)
      for (auto* q : bn->params()) p.push_back(q);
    return p;
  }
};

/// Five-block strided stack (stride 2,2,2,2,1) shared by the encoder,
/// discriminator and classifier backbones.
class Backbone {
 public:
  Backbone() = default;
  Backbone(const std::string& name, int in_ch, const std::array<int, 5>& channels, double slope,
           rng::Stream& s) {
    static constexpr std::array<int, 5> strides{2, 2, 2, 2, 1};
    int cin = in_ch;
    for (int i = 0; i < 5; ++i) {
      blocks_.emplace_back(name + ".block" + std::to_string(i), cin, channels[static_cast<std::size_t>(i)],
                           strides[static_cast<std::size_t>(i)], slope, s);
      cin = channels[static_cast<std::size_t>(i)];
    }
  }

  nn::Feat forward(nn::Feat x, const nn::Mode& mode) {
    for (auto& b : blocks_) x = b.forward(x, mode);
    return x;
  }

  std::vector<nn::Param*> params() {
    std::vector<nn::Param*> p;
    for (auto& b : blocks_)
      for (auto* q : b.params()) p.push_back(q);
    return p;
  }

  std::vector<ConvBlock>& blocks() { return blocks_; }

 private:
  std::vector<ConvBlock> blocks_;
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(const ModelConfig& cfg, int in_ch, rng::Stream& s)
      : backbone_("encoder", in_ch,
                  {cfg.scaled(16), cfg.scaled(32), cfg.scaled(64), cfg.scaled(128), cfg.scaled(32)},
                  cfg.leaky_slope, s),
        out_len_(cfg.n_feature / 16), out_ch_(cfg.scaled(32)) {
    const int flat = out_ch_ * out_len_;
    mu_head_ = nn::Linear("encoder.mu", flat, cfg.latent_dim, s);
    logvar_head_ = nn::Linear("encoder.logvar", flat, cfg.latent_dim, s);
  }

  /// Input: concatenated (signal + conditions) map. Output: (mu, logvar), each (latent, B).
  std::pair<ad::Var, ad::Var> forward(const nn::Feat& x, const nn::Mode& mode) {
    nn::Feat h = backbone_.forward(x, mode);
    h = {ad::sigmoid(h.v), h.batch, h.len};
    ad::Var flat = ad::map_to_columns(h.v, h.batch, h.len);
    return {mu_head_.forward(flat), logvar_head_.forward(flat)};
  }

  std::vector<nn::Param*> params() {
    auto p = backbone_.params();
    for (auto* q : mu_head_.params()) p.push_back(q);
    for (auto* q : logvar_head_.params()) p.push_back(q);
    return p;
  }

  Backbone& backbone() { return backbone_; }

 private:
  Backbone backbone_;
  int out_len_ = 0, out_ch_ = 0;
  nn::Linear mu_head_, logvar_head_;
};

class Generator {
 public:
  Generator() = default;
  Generator(const ModelConfig& cfg, int in_ch, rng::Stream& s) {
    // Five upsampling-side blocks then a stride-1 block emitting the signal
    // channels through a sigmoid, so outputs live in [0,1].
    const std::array<int, 6> out_ch{cfg.scaled(256), cfg.scaled(128), cfg.scaled(64),
                                    cfg.scaled(32),  cfg.scaled(16),  cfg.io_channels};
    static constexpr std::array<int, 6> strides{2, 2, 2, 2, 1, 1};
    static constexpr std::array<int, 6> out_pad{1, 1, 1, 1, 0, 0};
    int cin = in_ch;
    for (int i = 0; i < 6; ++i) {
      blocks_.emplace_back("generator.block" + std::to_string(i), cin, out_ch[static_cast<std::size_t>(i)],
                           strides[static_cast<std::size_t>(i)], out_pad[static_cast<std::size_t>(i)],
                           cfg.leaky_slope, i == 5, s);
      cin = out_ch[static_cast<std::size_t>(i)];
    }
  }

  nn::Feat forward(nn::Feat x, const nn::Mode& mode) {
    for (auto& b : blocks_) x = b.forward(x, mode);
    return x;
  }

  std::vector<nn::Param*> params() {
    std::vector<nn::Param*> p;
    for (auto& b : blocks_)
      for (auto* q : b.params()) p.push_back(q);
    return p;
  }

  std::vector<TConvBlock>& blocks() { return blocks_; }

 private:
  std::vector<TConvBlock> blocks_;
};

/// Discriminator/classifier: backbone, global average pooling, dropout,
/// linear head. Features are the pooled pre-head vector.
class Critic {
 public:
  Critic() = default;
  Critic(const std::string& name, const ModelConfig& cfg, int in_ch, int last_channels, int out_dim,
         rng::Stream& s)
      : backbone_(name, in_ch,
                  {cfg.scaled(16), cfg.scaled(32), cfg.scaled(64), cfg.scaled(128), cfg.scaled(last_channels)},
                  cfg.leaky_slope, s),
        dropout_(cfg.dropout_rate),
        head_(name + ".head", cfg.scaled(last_channels), out_dim, s),
        feature_dim_(cfg.scaled(last_channels)) {}

  struct Out {
    ad::Var logits;    // (out_dim, B)
    ad::Var features;  // (m, B)
  };

  Out forward(const nn::Feat& x, const nn::Mode& mode) {
    nn::Feat h = backbone_.forward(x, mode);
    ad::Var pooled = nn::global_avg_pool(h);
    ad::Var logits = head_.forward(dropout_.forward(pooled, mode));
    return {logits, pooled};
  }

  int feature_dim() const { return feature_dim_; }

  std::vector<nn::Param*> params() {
    auto p = backbone_.params();
    for (auto* q : head_.params()) p.push_back(q);
    return p;
  }

  Backbone& backbone() { return backbone_; }

 private:
  Backbone backbone_;
  nn::Dropout dropout_;
  nn::Linear head_;
  int feature_dim_ = 0;
};

// ---- the bundle ----

class ModelBundle {
 public:
  ModelBundle() = default;
  // Copying would alias parameter tensors between two "independent" models.
  ModelBundle(const ModelBundle&) = delete;
  ModelBundle& operator=(const ModelBundle&) = delete;
  ModelBundle(ModelBundle&&) = default;
  ModelBundle& operator=(ModelBundle&&) = default;

  explicit ModelBundle(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    rng::Stream s(rng::derive(cfg.seed, "model-init/" + to_string(cfg.variant)));
    if (cfg_.conditional()) {
      emb_full_.emplace("adapter.full", cfg.n_classes, cfg.n_feature, s);
      emb_small_.emplace("adapter.small", cfg.n_classes, cfg.gen_input_len(), s);
    }
    const int cond_ch = condition_channels();
    if (cfg_.has_encoder()) encoder_.emplace(cfg_, cfg_.io_channels + cond_ch, s);
    generator_.emplace(cfg_, cfg_.z_channels() + small_condition_channels(), s);
    if (cfg_.has_discriminator())
      discriminator_.emplace("discriminator", cfg_, cfg_.io_channels + cond_ch, 32, 1, s);
    if (cfg_.has_classifier())
      classifier_.emplace("classifier", cfg_, cfg_.io_channels + cond_ch, 256, cfg_.n_classes, s);
  }

  const ModelConfig& config() const { return cfg_; }

  // Condition channels at full length (history + class embedding).
  int condition_channels() const {
    if (!cfg_.conditional()) return 0;
    return (cfg_.with_history() ? 2 * cfg_.k : 0) + 1;
  }
  int small_condition_channels() const { return condition_channels(); }

  /// Learned class-row lookup. target_len selects the full-length or the
  /// generator-side table.
  Eigen::RowVectorXd adapter_embed(int hi_class, int target_len) const {
    require(cfg_.conditional(), ErrorKind::Contract, "adapter_embed: variant has no condition adapters");
    if (target_len == cfg_.n_feature) return emb_full_->row(hi_class);
    if (target_len == cfg_.gen_input_len()) return emb_small_->row(hi_class);
    throw Error::contract("adapter_embed: unsupported target length " + std::to_string(target_len));
  }

  // ---- batch forward passes (autodiff) ----

  /// Concatenate signal + full-length conditions for encoder/critic input.
  nn::Feat assemble_full_input(const nn::Feat& x, const ConditionBatch* cond) const {
    check_condition(cond, x.batch);
    std::vector<ad::Var> parts{x.v};
    if (cfg_.with_history()) {
      require(cond->history.has_value(), ErrorKind::Contract, "conditions: history required");
      require(cond->history->channels() == 2 * cfg_.k && cond->history->len == cfg_.n_feature,
              ErrorKind::Contract, "conditions: history must be 2k channels of n_feature");
      require(cond->history->batch == x.batch, ErrorKind::Contract, "conditions: history batch mismatch");
      parts.push_back(cond->history->v);
    }
    if (cfg_.conditional()) parts.push_back(emb_full_->forward(cond->classes).v);
    return {ad::concat_rows(parts), x.batch, x.len};
  }

  std::pair<ad::Var, ad::Var> encode_batch(const nn::Feat& x, const ConditionBatch* cond, const nn::Mode& mode) {
    require(cfg_.has_encoder(), ErrorKind::Contract,
            "variant " + to_string(cfg_.variant) + " has no encoder");
    require(x.channels() == cfg_.io_channels && x.len == cfg_.n_feature, ErrorKind::Contract,
            "encode: signal must be io_channels x n_feature");
    return encoder_->forward(assemble_full_input(x, cond), mode);
  }

  /// z is (latent_dim, B); conditions are pooled/embedded to the short length.
  nn::Feat generate_batch(const ad::Var& z, const ConditionBatch* cond, const nn::Mode& mode) {
    const int B = static_cast<int>(z.cols());
    require(z.rows() == cfg_.latent_dim, ErrorKind::Contract, "generate: z must have latent_dim rows");
    check_condition(cond, B);
    const int L0 = cfg_.gen_input_len();
    std::vector<ad::Var> parts;
    if (cfg_.with_history()) {
      require(cond->history.has_value(), ErrorKind::Contract, "conditions: history required");
      nn::Feat pooled = nn::avg_pool(*cond->history, 16);
      parts.push_back(pooled.v);
    }
    if (cfg_.conditional()) parts.push_back(emb_small_->forward(cond->classes).v);
    parts.push_back(ad::columns_to_map(z, cfg_.z_channels(), L0));
    nn::Feat in{ad::concat_rows(parts), B, L0};
    nn::Feat out = generator_->forward(in, mode);
    require(out.len == cfg_.n_feature && out.channels() == cfg_.io_channels, ErrorKind::Contract,
            "generate: unexpected output shape");
    return out;
  }

  Critic::Out discriminate_batch(const nn::Feat& x, const ConditionBatch* cond, const nn::Mode& mode) {
    require(cfg_.has_discriminator(), ErrorKind::Contract,
            "variant " + to_string(cfg_.variant) + " has no discriminator");
    return discriminator_->forward(assemble_full_input(x, cond), mode);
  }

  Critic::Out classify_batch(const nn::Feat& x, const ConditionBatch* cond, const nn::Mode& mode) {
    require(cfg_.has_classifier(), ErrorKind::Contract,
            "variant " + to_string(cfg_.variant) + " has no classifier");
    return classifier_->forward(assemble_full_input(x, cond), mode);
  }

  // ---- single-sample evaluation-mode wrappers ----

  LatentCode encode(const Matrix& x, const ConditionBundle* bundle, const Vector* noise = nullptr) {
    nn::Mode eval;
    ConditionBatch cond;
    const ConditionBatch* cp = lift(bundle, cond);
    nn::Feat xf{ad::Var::leaf(x, false), 1, static_cast<int>(x.cols())};
    auto [mu, logvar] = encode_batch(xf, cp, eval);
    LatentCode code;
    code.mu = mu.value().col(0);
    code.logvar = logvar.value().col(0);
    if (noise != nullptr) code.z = reparameterize(code.mu, code.logvar, *noise);
    return code;
  }

  Matrix generate(const Vector& z, const ConditionBundle* bundle) {
    nn::Mode eval;
    ConditionBatch cond;
    const ConditionBatch* cp = lift(bundle, cond);
    ad::Var zv = ad::Var::leaf(z, false);
    return generate_batch(zv, cp, eval).v.value();
  }

  std::pair<double, Vector> discriminate(const Matrix& x, const ConditionBundle* bundle) {
    nn::Mode eval;
    ConditionBatch cond;
    const ConditionBatch* cp = lift(bundle, cond);
    nn::Feat xf{ad::Var::leaf(x, false), 1, static_cast<int>(x.cols())};
    auto out = discriminate_batch(xf, cp, eval);
    return {out.logits.value()(0, 0), out.features.value().col(0)};
  }

  std::pair<Vector, Vector> classify(const Matrix& x, const ConditionBundle* bundle) {
    nn::Mode eval;
    ConditionBatch cond;
    const ConditionBatch* cp = lift(bundle, cond);
    nn::Feat xf{ad::Var::leaf(x, false), 1, static_cast<int>(x.cols())};
    auto out = classify_batch(xf, cp, eval);
    return {out.logits.value().col(0), out.features.value().col(0)};
  }

  // ---- parameter groups ----

  std::vector<nn::Param*> generator_group() {
    std::vector<nn::Param*> p = generator_->params();
    if (encoder_)
      for (auto* q : encoder_->params()) p.push_back(q);
    if (emb_full_)
      for (auto* q : emb_full_->params()) p.push_back(q);
    if (emb_small_)
      for (auto* q : emb_small_->params()) p.push_back(q);
    return p;
  }

  std::vector<nn::Param*> discriminator_group() {
    return discriminator_ ? discriminator_->params() : std::vector<nn::Param*>{};
  }

  std::vector<nn::Param*> classifier_group() {
    return classifier_ ? classifier_->params() : std::vector<nn::Param*>{};
  }

  std::vector<nn::Param*> all_params() {
    auto p = generator_group();
    for (auto* q : discriminator_group()) p.push_back(q);
    for (auto* q : classifier_group()) p.push_back(q);
    return p;
  }

  std::uint64_t fingerprint(std::vector<nn::Param*> group) const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto* p : group) {
      h = fnv1a(p->name, h);
      h = fnv1a(p->var.value(), h);
    }
    return h;
  }

  std::uint64_t fingerprint() { return fingerprint(all_params()); }
  std::uint64_t discriminator_fingerprint() { return fingerprint(discriminator_group()); }
  std::uint64_t classifier_fingerprint() { return fingerprint(classifier_group()); }

  bool has_encoder() const { return encoder_.has_value(); }
  bool has_discriminator() const { return discriminator_.has_value(); }
  bool has_classifier() const { return classifier_.has_value(); }
  int discriminator_feature_dim() const { return discriminator_->feature_dim(); }
  int classifier_feature_dim() const { return classifier_->feature_dim(); }

  // ---- batch-norm running statistics (saved with checkpoints) ----

  std::vector<std::pair<std::string, Matrix*>> state_tensors() {
    std::vector<std::pair<std::string, Matrix*>> out;
    auto collect_backbone = [&out](const std::string& prefix, Backbone& b) {
      int i = 0;
      for (auto& blk : b.blocks()) {
        out.emplace_back(prefix + ".block" + std::to_string(i) + ".bn.running_mean", &blk.bn.running_mean());
        out.emplace_back(prefix + ".block" + std::to_string(i) + ".bn.running_var", &blk.bn.running_var());
        ++i;
      }
    };
    if (encoder_) collect_backbone("encoder", encoder_->backbone());
    if (discriminator_) collect_backbone("discriminator", discriminator_->backbone());
    if (classifier_) collect_backbone("classifier", classifier_->backbone());
    int i = 0;
    for (auto& blk : generator_->blocks()) {
      if (blk.bn) {
        out.emplace_back("generator.block" + std::to_string(i) + ".bn.running_mean", &blk.bn->running_mean());
        out.emplace_back("generator.block" + std::to_string(i) + ".bn.running_var", &blk.bn->running_var());
      }
      ++i;
    }
    return out;
  }

  // ---- checkpoints ----

  static constexpr const char* kMagic = "CVCK";

  std::string serialize_checkpoint(const io::json& extra_meta = io::json::object()) {
    io::json meta;
    meta["kind"] = "model-checkpoint";
    meta["variant"] = to_string(cfg_.variant);
    meta["k"] = cfg_.k;
    meta["n_feature"] = cfg_.n_feature;
    meta["latent_dim"] = cfg_.latent_dim;
    meta["n_classes"] = cfg_.n_classes;
    meta["io_channels"] = cfg_.io_channels;
    meta["channel_scale"] = cfg_.channel_scale;
    meta["leaky_slope"] = cfg_.leaky_slope;
    meta["dropout_rate"] = cfg_.dropout_rate;
    meta["seed"] = cfg_.seed;
    meta["extra"] = extra_meta;
    io::BlobWriter w(kMagic, meta);
    for (auto* p : all_params()) w.add_matrix(p->name, p->var.value());
    for (auto& [name, m] : state_tensors()) w.add_matrix(name, *m);
    w.meta() = meta;
    return w.serialize();
  }

  std::uint64_t save(const std::filesystem::path& path, const io::json& extra_meta = io::json::object()) {
    const std::string bytes = serialize_checkpoint(extra_meta);
    io::write_bytes(path, bytes);
    return fnv1a(bytes.data(), bytes.size());
  }

  /// Load a checkpoint. When `expect` is given, any hyperparameter
  /// mismatch is an error rather than a silent reshape.
  static ModelBundle load(const std::filesystem::path& path, const ModelConfig* expect = nullptr) {
    io::BlobReader r = io::BlobReader::from_file(path, kMagic);
    const auto& m = r.meta();
    ModelConfig cfg;
    cfg.variant = variant_from_string(m.at("variant").get<std::string>());
    cfg.k = m.at("k").get<int>();
    cfg.n_feature = m.at("n_feature").get<int>();
    cfg.latent_dim = m.at("latent_dim").get<int>();
    cfg.n_classes = m.at("n_classes").get<int>();
    cfg.io_channels = m.at("io_channels").get<int>();
    cfg.channel_scale = m.at("channel_scale").get<double>();
    cfg.leaky_slope = m.at("leaky_slope").get<double>();
    cfg.dropout_rate = m.at("dropout_rate").get<double>();
    cfg.seed = m.at("seed").get<std::uint64_t>();
    if (expect != nullptr) {
      require(expect->variant == cfg.variant, ErrorKind::Config,
              "checkpoint variant " + to_string(cfg.variant) + " does not match expected " +
                  to_string(expect->variant));
      require(expect->k == cfg.k && expect->n_feature == cfg.n_feature &&
                  expect->latent_dim == cfg.latent_dim && expect->channel_scale == cfg.channel_scale,
              ErrorKind::Config, "checkpoint hyperparameters do not match the requested configuration");
    }
    ModelBundle bundle(cfg);
    for (auto* p : bundle.all_params()) {
      Matrix v = r.matrix(p->name);
      require(v.rows() == p->var.rows() && v.cols() == p->var.cols(), ErrorKind::Data,
              "checkpoint: tensor shape mismatch for " + p->name);
      p->var.mutable_value() = v;
    }
    for (auto& [name, mat] : bundle.state_tensors()) {
      Matrix v = r.matrix(name);
      require(v.rows() == mat->rows() && v.cols() == mat->cols(), ErrorKind::Data,
              "checkpoint: state shape mismatch for " + name);
      *mat = v;
    }
    return bundle;
  }

  /// Deep snapshot/restore for early stopping.
  std::vector<Matrix> snapshot_values() {
    std::vector<Matrix> out;
    for (auto* p : all_params()) out.push_back(p->var.value());
    for (auto& [name, m] : state_tensors()) out.push_back(*m);
    return out;
  }

  void restore_values(const std::vector<Matrix>& snap) {
    std::size_t i = 0;
    for (auto* p : all_params()) p->var.mutable_value() = snap.at(i++);
    for (auto& [name, m] : state_tensors()) *m = snap.at(i++);
  }

 private:
  void check_condition(const ConditionBatch* cond, int batch) const {
    if (cfg_.conditional()) {
      require(cond != nullptr, ErrorKind::Contract,
              "variant " + to_string(cfg_.variant) + " requires conditions");
      require(static_cast<int>(cond->classes.size()) == batch, ErrorKind::Contract,
              "conditions: class count must match batch");
    } else {
      require(cond == nullptr, ErrorKind::Contract,
              "variant " + to_string(cfg_.variant) + " does not accept conditions");
    }
  }

  const ConditionBatch* lift(const ConditionBundle* bundle, ConditionBatch& storage) const {
    if (bundle == nullptr) return nullptr;
    storage.classes = {bundle->hi_class};
    if (bundle->history.has_value()) {
      require(bundle->history->rows() == 2 * cfg_.k, ErrorKind::Contract,
              "condition history must have exactly k rows of 2 channels");
      if (cfg_.with_history()) {
        storage.history = nn::Feat{ad::Var::leaf(*bundle->history, false), 1,
                                   static_cast<int>(bundle->history->cols())};
      }
      // CVGAN_no_H ignores history by construction.
    }
    return &storage;
  }

  ModelConfig cfg_;
  std::optional<nn::Embedding> emb_full_, emb_small_;
  std::optional<Encoder> encoder_;
  std::optional<Generator> generator_;
  std::optional<Critic> discriminator_, classifier_;
};

struct BuildOptions {
  int latent_dim = 32;
  int io_channels = 2;
  double scale_multiplier = 1.0;  // global knob for desk-scale runs
  double leaky_slope = 0.2;
  double dropout_rate = 0.5;
  std::uint64_t seed = 0;
};

/// Construct exactly the sub-networks a variant requires. Unconditional
/// variants run at half the channel budget.
inline ModelBundle build_model(Variant variant, int k, int n_feature, const BuildOptions& opts = {}) {
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.k = k;
  cfg.n_feature = n_feature;
  cfg.latent_dim = opts.latent_dim;
  cfg.io_channels = opts.io_channels;
  cfg.leaky_slope = opts.leaky_slope;
  cfg.dropout_rate = opts.dropout_rate;
  cfg.seed = opts.seed;
  const bool unconditional =
      variant == Variant::GAN || variant == Variant::VAE || variant == Variant::VGAN;
  cfg.channel_scale = (unconditional ? 0.5 : 1.0) * opts.scale_multiplier;
  return ModelBundle(cfg);
}

}  // namespace cvgan::nets
