#pragma once

#include "cvgan/dataset.hpp"
#include "cvgan/losses.hpp"
#include "cvgan/nets.hpp"
#include "cvgan/rulpred.hpp"
#include "cvgan/trainer.hpp"

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace cvgan::cli {

using io::json;

namespace detail {

inline void check_keys(const json& obj, const std::string& section, const std::set<std::string>& allowed) {
  require(obj.is_object(), ErrorKind::Config, "config section '" + section + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    require(allowed.count(key) == 1, ErrorKind::Config,
            "unknown key '" + key + "' in config section '" + section + "'");
  }
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  return obj.at(key).get<T>();
}

}  // namespace detail

struct SyntheticSection {
  int count = 8;
  double base_jitter = 0.0;  // deterministic per-bearing level offsets
  dataset::SyntheticSpec spec;

  static SyntheticSection parse(const json& j) {
    detail::check_keys(j, "dataset.synthetic",
                       {"count", "n", "fpt_index", "base_mean", "noise_scale", "growth_exponent", "seed",
                        "base_jitter"});
    SyntheticSection s;
    s.count = detail::get_or(j, "count", 8);
    s.spec.n = detail::get_or(j, "n", 200);
    s.spec.fpt_index = detail::get_or(j, "fpt_index", 60);
    if (j.contains("base_mean")) {
      s.spec.base_mean = {j.at("base_mean")[0].get<double>(), j.at("base_mean")[1].get<double>()};
    }
    s.base_jitter = detail::get_or(j, "base_jitter", 0.0);
    s.spec.noise_scale = detail::get_or(j, "noise_scale", 0.05);
    s.spec.growth_exponent = detail::get_or(j, "growth_exponent", 1.0);
    s.spec.seed = detail::get_or<std::uint64_t>(j, "seed", 7);
    return s;
  }
};

struct DatasetSection {
  std::optional<std::string> path;                 // PHM-style directory tree
  std::vector<std::string> bearings;               // subdirectories to ingest
  std::optional<SyntheticSection> synthetic;
  int k = 15;
  int n_feature = 512;
  dataset::HiMode hi_mode = dataset::HiMode::Piecewise;
  std::string container = "dataset.cvds";

  static DatasetSection parse(const json& j) {
    detail::check_keys(j, "dataset", {"path", "bearings", "synthetic", "k", "n_feature", "hi_mode", "container"});
    DatasetSection d;
    if (j.contains("path")) d.path = j.at("path").get<std::string>();
    if (j.contains("bearings")) d.bearings = j.at("bearings").get<std::vector<std::string>>();
    if (j.contains("synthetic")) d.synthetic = SyntheticSection::parse(j.at("synthetic"));
    d.k = detail::get_or(j, "k", 15);
    d.n_feature = detail::get_or(j, "n_feature", 512);
    const std::string mode = detail::get_or<std::string>(j, "hi_mode", "piecewise");
    if (mode == "linear")
      d.hi_mode = dataset::HiMode::Linear;
    else if (mode == "piecewise")
      d.hi_mode = dataset::HiMode::Piecewise;
    else
      throw Error::config("dataset.hi_mode must be 'linear' or 'piecewise'");
    d.container = detail::get_or<std::string>(j, "container", "dataset.cvds");
    require(d.path.has_value() != d.synthetic.has_value(), ErrorKind::Config,
            "dataset needs exactly one of 'path' or 'synthetic'");
    return d;
  }
};

struct ModelSection {
  nets::Variant variant = nets::Variant::CVGAN;
  double scale_multiplier = 1.0;
  int latent_dim = 32;
  double leaky_slope = 0.2;
  double dropout_rate = 0.5;

  static ModelSection parse(const json& j) {
    detail::check_keys(j, "model", {"variant", "scale_multiplier", "latent_dim", "leaky_slope", "dropout_rate"});
    ModelSection m;
    m.variant = nets::variant_from_string(detail::get_or<std::string>(j, "variant", "CVGAN"));
    m.scale_multiplier = detail::get_or(j, "scale_multiplier", 1.0);
    m.latent_dim = detail::get_or(j, "latent_dim", 32);
    m.leaky_slope = detail::get_or(j, "leaky_slope", 0.2);
    m.dropout_rate = detail::get_or(j, "dropout_rate", 0.5);
    return m;
  }

  nets::BuildOptions build_options(std::uint64_t seed) const {
    nets::BuildOptions o;
    o.latent_dim = latent_dim;
    o.scale_multiplier = scale_multiplier;
    o.leaky_slope = leaky_slope;
    o.dropout_rate = dropout_rate;
    o.seed = seed;
    return o;
  }
};

struct LossSection {
  losses::LossConfig config = losses::compose_config("conf9");  // reported best configuration

  static LossSection parse(const json& j) {
    detail::check_keys(j, "loss", {"config", "terms"});
    LossSection l;
    if (j.contains("terms")) {
      require(!j.contains("config"), ErrorKind::Config, "loss: give either 'config' or 'terms', not both");
      l.config = losses::LossConfig::parse(j.at("terms"));
    } else if (j.contains("config")) {
      l.config = losses::compose_config(j.at("config").get<std::string>());
    }
    return l;
  }
};

struct TrainSection {
  trainer::TrainPlan plan;
  std::string checkpoint = "model.cvck";

  static TrainSection parse(const json& j) {
    detail::check_keys(j, "train",
                       {"mode", "epochs", "early_stop_patience", "batch_size", "lr_gen", "lr_dc", "seed",
                        "finetune_epochs", "weight_decay", "clip_norm", "val_fraction", "center_decay",
                        "checkpoint"});
    TrainSection t;
    t.plan.mode = trainer::train_mode_from_string(detail::get_or<std::string>(j, "mode", "non_ar"));
    t.plan.epochs = detail::get_or(j, "epochs", 100);
    t.plan.early_stop_patience = detail::get_or(j, "early_stop_patience", 30);
    t.plan.batch_size = detail::get_or(j, "batch_size", 1024);
    t.plan.lr_gen = detail::get_or(j, "lr_gen", 6e-4);
    t.plan.lr_dc = detail::get_or(j, "lr_dc", 2e-4);
    t.plan.seed = detail::get_or<std::uint64_t>(j, "seed", 15);
    t.plan.finetune_epochs = detail::get_or(j, "finetune_epochs", 1);
    t.plan.weight_decay = detail::get_or(j, "weight_decay", 0.01);
    t.plan.clip_norm = detail::get_or(j, "clip_norm", 0.0);
    t.plan.val_fraction = detail::get_or(j, "val_fraction", 0.1);
    t.plan.center_decay = detail::get_or(j, "center_decay", 0.9);
    t.checkpoint = detail::get_or<std::string>(j, "checkpoint", "model.cvck");
    return t;
  }
};

struct TrainInitSection {
  trainer::TrainPlan plan;
  double scale_multiplier = 1.0;
  std::string checkpoint = "initial_generator.cvck";

  static TrainInitSection parse(const json& j) {
    detail::check_keys(j, "train_init",
                       {"epochs", "early_stop_patience", "batch_size", "lr", "seed", "scale_multiplier",
                        "checkpoint"});
    TrainInitSection t;
    t.plan.mode = trainer::TrainMode::NonAr;
    t.plan.epochs = detail::get_or(j, "epochs", 100);
    t.plan.early_stop_patience = detail::get_or(j, "early_stop_patience", 30);
    t.plan.batch_size = detail::get_or(j, "batch_size", 1024);
    t.plan.lr_gen = detail::get_or(j, "lr", 6e-4);
    t.plan.seed = detail::get_or<std::uint64_t>(j, "seed", 15);
    t.scale_multiplier = detail::get_or(j, "scale_multiplier", 1.0);
    t.checkpoint = detail::get_or<std::string>(j, "checkpoint", "initial_generator.cvck");
    return t;
  }
};

struct GenerateSection {
  int length = 1000;
  int fpt_step = 300;
  std::vector<std::uint64_t> seeds = {15};
  std::string checkpoint = "model.cvck";
  std::optional<std::string> initial_checkpoint;
  std::string output = "generated.cvds";

  static GenerateSection parse(const json& j) {
    detail::check_keys(j, "generate", {"length", "fpt_step", "seeds", "checkpoint", "initial_checkpoint", "output"});
    GenerateSection g;
    g.length = detail::get_or(j, "length", 1000);
    g.fpt_step = detail::get_or(j, "fpt_step", 300);
    if (j.contains("seeds")) g.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    g.checkpoint = detail::get_or<std::string>(j, "checkpoint", "model.cvck");
    if (j.contains("initial_checkpoint")) g.initial_checkpoint = j.at("initial_checkpoint").get<std::string>();
    g.output = detail::get_or<std::string>(j, "output", "generated.cvds");
    return g;
  }
};

struct EvaluateModelEntry {
  std::string label;
  std::string checkpoint;
  std::optional<std::string> initial_checkpoint;

  static EvaluateModelEntry parse(const json& j) {
    detail::check_keys(j, "evaluate.models[]", {"label", "checkpoint", "initial_checkpoint"});
    EvaluateModelEntry e;
    e.checkpoint = j.at("checkpoint").get<std::string>();
    e.label = detail::get_or<std::string>(j, "label", e.checkpoint);
    if (j.contains("initial_checkpoint")) e.initial_checkpoint = j.at("initial_checkpoint").get<std::string>();
    return e;
  }
};

struct EvaluatePredictorSection {
  rul::PredictorKind kind = rul::PredictorKind::SCNN;
  int epochs = 30;
  int batch_size = 256;
  std::uint64_t seed = 15;

  static EvaluatePredictorSection parse(const json& j) {
    detail::check_keys(j, "evaluate.predictor", {"kind", "epochs", "batch_size", "seed"});
    EvaluatePredictorSection p;
    p.kind = rul::predictor_from_string(detail::get_or<std::string>(j, "kind", "SCNN"));
    p.epochs = detail::get_or(j, "epochs", 30);
    p.batch_size = detail::get_or(j, "batch_size", 256);
    p.seed = detail::get_or<std::uint64_t>(j, "seed", 15);
    return p;
  }
};

struct EvaluateSection {
  int pca_dims = 64;
  double bandwidth = 1.0;
  std::uint64_t seed = 15;
  std::optional<std::string> extractor_path;
  int extractor_epochs = 30;
  double extractor_scale = 1.0;
  std::vector<EvaluateModelEntry> models;
  std::optional<std::string> generated;  // direct container-vs-container comparison
  std::optional<EvaluatePredictorSection> predictor;

  static EvaluateSection parse(const json& j) {
    detail::check_keys(j, "evaluate",
                       {"pca_dims", "bandwidth", "seed", "extractor", "models", "generated", "predictor"});
    EvaluateSection e;
    e.pca_dims = detail::get_or(j, "pca_dims", 64);
    e.bandwidth = detail::get_or(j, "bandwidth", 1.0);
    e.seed = detail::get_or<std::uint64_t>(j, "seed", 15);
    if (j.contains("extractor")) {
      const json& x = j.at("extractor");
      detail::check_keys(x, "evaluate.extractor", {"path", "epochs", "scale_multiplier"});
      if (x.contains("path")) e.extractor_path = x.at("path").get<std::string>();
      e.extractor_epochs = detail::get_or(x, "epochs", 30);
      e.extractor_scale = detail::get_or(x, "scale_multiplier", 1.0);
    }
    if (j.contains("models"))
      for (const auto& m : j.at("models")) e.models.push_back(EvaluateModelEntry::parse(m));
    if (j.contains("generated")) e.generated = j.at("generated").get<std::string>();
    if (j.contains("predictor")) e.predictor = EvaluatePredictorSection::parse(j.at("predictor"));
    return e;
  }
};

struct RulSection {
  std::string test_bearing;
  rul::PredictorKind predictor = rul::PredictorKind::SCNN;
  std::optional<std::string> augmentation;  // container of generated lifecycles
  rul::PredictorPlan plan;
  std::vector<std::uint64_t> seeds = {15, 25, 35, 45, 55};

  static RulSection parse(const json& j) {
    detail::check_keys(j, "rul",
                       {"test_bearing", "predictor", "augmentation", "epochs", "patience", "batch_size", "lr",
                        "seeds"});
    RulSection r;
    r.test_bearing = detail::get_or<std::string>(j, "test_bearing", "");
    r.predictor = rul::predictor_from_string(detail::get_or<std::string>(j, "predictor", "SCNN"));
    if (j.contains("augmentation")) {
      const std::string a = j.at("augmentation").get<std::string>();
      if (a != "none") r.augmentation = a;
    }
    r.plan.epochs = detail::get_or(j, "epochs", 150);
    r.plan.patience = detail::get_or(j, "patience", 20);
    r.plan.batch_size = detail::get_or(j, "batch_size", 2048);
    r.plan.lr = detail::get_or(j, "lr", 8e-4);
    if (j.contains("seeds")) r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    return r;
  }
};

/// One structured document per run; unknown keys are rejected and the
/// resolved form is echoed into every manifest.
struct RunConfig {
  json raw;
  DatasetSection dataset;
  ModelSection model;
  LossSection loss;
  TrainSection train;
  TrainInitSection train_init;
  GenerateSection generate;
  EvaluateSection evaluate;
  RulSection rul;

  static RunConfig parse(const json& j) {
    detail::check_keys(j, "<root>",
                       {"dataset", "model", "loss", "train", "train_init", "generate", "evaluate", "rul"});
    RunConfig c;
    c.raw = j;
    require(j.contains("dataset"), ErrorKind::Config, "config needs a 'dataset' section");
    c.dataset = DatasetSection::parse(j.at("dataset"));
    if (j.contains("model")) c.model = ModelSection::parse(j.at("model"));
    if (j.contains("loss")) c.loss = LossSection::parse(j.at("loss"));
    if (j.contains("train")) c.train = TrainSection::parse(j.at("train"));
    if (j.contains("train_init")) c.train_init = TrainInitSection::parse(j.at("train_init"));
    if (j.contains("generate")) c.generate = GenerateSection::parse(j.at("generate"));
    if (j.contains("evaluate")) c.evaluate = EvaluateSection::parse(j.at("evaluate"));
    if (j.contains("rul")) c.rul = RulSection::parse(j.at("rul"));
    return c;
  }

  static RunConfig load(const std::filesystem::path& path) {
    json j;
    try {
      j = json::parse(io::read_text_file(path));
    } catch (const json::exception& e) {
      throw Error::config("cannot parse config " + path.string() + ": " + e.what());
    }
    return parse(j);
  }
};

/// Build (or load) the dataset container the config describes.
inline dataset::LifecycleContainer build_dataset(const RunConfig& cfg) {
  dataset::LifecycleContainer out;
  const DatasetSection& d = cfg.dataset;
  if (d.synthetic) {
    out.provenance = {{"source", "synthetic"},
                      {"count", d.synthetic->count},
                      {"n", d.synthetic->spec.n},
                      {"seed", d.synthetic->spec.seed}};
    std::vector<dataset::SyntheticSpec> specs;
    for (int i = 0; i < d.synthetic->count; ++i) {
      dataset::SyntheticSpec spec = d.synthetic->spec;
      spec.bearing_id = "S" + std::to_string(i + 1);
      spec.n_feature = d.n_feature;
      spec.seed = rng::derive(d.synthetic->spec.seed, "bearing", static_cast<std::uint64_t>(i));
      if (d.synthetic->base_jitter > 0.0) {
        // per-bearing level offsets, deterministic in the corpus seed
        const double u0 = 2.0 * (rng::splitmix64(spec.seed ^ 0x1111) >> 11) * 0x1.0p-53 - 1.0;
        const double u1 = 2.0 * (rng::splitmix64(spec.seed ^ 0x2222) >> 11) * 0x1.0p-53 - 1.0;
        spec.base_mean[0] += d.synthetic->base_jitter * u0;
        spec.base_mean[1] += d.synthetic->base_jitter * u1;
      }
      specs.push_back(spec);
    }
    for (auto& lc : dataset::synthesize_corpus(specs)) out.lifecycles.push_back(std::move(lc));
    return out;
  }
  require(!d.bearings.empty(), ErrorKind::Config, "dataset.bearings must list the directories to ingest");
  std::vector<dataset::RawRecording> recordings;
  for (const auto& id : d.bearings)
    recordings.push_back(dataset::ingest_bearing(std::filesystem::path(*d.path) / id, id));
  auto [normed, stats] = dataset::normalize(recordings);
  out.provenance = {{"source", *d.path}};
  for (const auto& rec : normed) {
    const auto& table = dataset::phm_condition1_schedule();
    auto it = table.find(rec.bearing_id);
    require(it != table.end(), ErrorKind::Config,
            "no life schedule known for bearing '" + rec.bearing_id + "'");
    const int fpt = it->second.fpt_index();
    out.lifecycles.push_back(std::make_shared<dataset::BearingLifecycle>(
        dataset::build_lifecycle(rec, d.n_feature, fpt, d.hi_mode, stats)));
  }
  return out;
}

}  // namespace cvgan::cli
