// Command-line orchestration for the vibration-lifecycle generation
// pipeline: dataset preparation, CVGAN-family training, autoregressive
// generation, metric evaluation, and the RUL augmentation experiment.

#include <CLI11.hpp>

#include "cvgan/argen.hpp"
#include "cvgan/metrics.hpp"
#include "cvgan/report.hpp"
#include "cvgan/rulpred.hpp"
#include "cvgan/runconfig.hpp"
#include "cvgan/trainer.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace cvgan;
using cli::RunConfig;
using io::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitContract = 5;

struct GlobalArgs {
  std::string config_path;
  std::string out_dir = "runs";
  std::optional<std::uint64_t> seed;
};

fs::path resolve(const GlobalArgs& g, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : fs::path(g.out_dir) / path;
}

/// Advisory lock: concurrent commands must target distinct run directories.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : lock_(dir / ".lock") {
    fs::create_directories(dir);
    require(!fs::exists(lock_), ErrorKind::Contract,
            "run directory " + dir.string() + " is locked by another command (stale? remove " +
                lock_.string() + ")");
    std::ofstream f(lock_);
    f << "locked\n";
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(lock_, ec);
  }

 private:
  fs::path lock_;
};

RunConfig load_config(GlobalArgs& g) {
  require(!g.config_path.empty(), ErrorKind::Config, "--config is required");
  RunConfig cfg = RunConfig::load(g.config_path);
  if (g.seed) {
    cfg.train.plan.seed = *g.seed;
    cfg.train_init.plan.seed = *g.seed;
    cfg.generate.seeds = {*g.seed};
    cfg.evaluate.seed = *g.seed;
    cfg.rul.seeds = {*g.seed};
  }
  return cfg;
}

dataset::LifecycleContainer load_container(const GlobalArgs& g, const std::string& name) {
  return dataset::LifecycleContainer::load(resolve(g, name));
}

std::vector<std::shared_ptr<const dataset::BearingLifecycle>> as_const(
    const dataset::LifecycleContainer& c) {
  return {c.lifecycles.begin(), c.lifecycles.end()};
}

void write_manifest(const fs::path& dir, const trainer::RunManifest& manifest, const RunConfig& cfg) {
  json j = manifest.to_json();
  j["config"] = cfg.raw;  // resolved config echoed verbatim
  io::write_text_file(dir / "manifest.json", j.dump(2) + "\n");
  io::write_text_file(dir / "traces.tsv", manifest.traces_tsv());
}

// ---- prepare ----

int cmd_prepare(GlobalArgs& g) {
  RunConfig cfg = load_config(g);
  dataset::LifecycleContainer container = cli::build_dataset(cfg);
  const fs::path path = resolve(g, cfg.dataset.container);
  const auto fp = container.save(path);
  for (const auto& lc : container.lifecycles) {
    const int windows = lc->n() > cfg.dataset.k ? lc->n() - cfg.dataset.k : 0;
    std::cout << "bearing " << lc->bearing_id << ": n=" << lc->n() << " fpt=" << lc->fpt_index
              << " windows(k=" << cfg.dataset.k << ")=" << windows << "\n";
  }
  std::cout << "container " << path.string() << " fingerprint " << hex64(fp) << "\n";
  return 0;
}

// ---- train ----

int cmd_train(GlobalArgs& g) {
  RunConfig cfg = load_config(g);
  dataset::LifecycleContainer container = load_container(g, cfg.dataset.container);
  auto windows = dataset::build_window_set(as_const(container), cfg.dataset.k);

  nets::ModelBundle model = nets::build_model(cfg.model.variant, cfg.dataset.k, cfg.dataset.n_feature,
                                              cfg.model.build_options(cfg.train.plan.seed));
  const std::string run_name = nets::to_string(cfg.model.variant) + "-" + cfg.loss.config.name + "-" +
                               trainer::to_string(cfg.train.plan.mode) + "-s" +
                               std::to_string(cfg.train.plan.seed);
  const fs::path run_dir = fs::path(g.out_dir) / run_name;
  RunLock lock(run_dir);

  trainer::RunManifest manifest = trainer::train(model, windows, cfg.loss.config, cfg.train.plan);
  manifest.dataset_fingerprint = hex64(container.fingerprint());
  manifest.checkpoint_path = (run_dir / cfg.train.checkpoint).string();
  write_manifest(run_dir, manifest, cfg);
  if (manifest.aborted) {
    std::cerr << "error: numeric: training aborted: " << manifest.abort_reason << "\n";
    return kExitNumeric;
  }
  model.save(run_dir / cfg.train.checkpoint, {{"loss_config", cfg.loss.config.name}});
  std::cout << "run " << run_dir.string() << " epochs=" << manifest.traces.size()
            << " best_epoch=" << manifest.best_epoch << " checkpoint=" << cfg.train.checkpoint << "\n";
  return 0;
}

int cmd_train_init(GlobalArgs& g) {
  RunConfig cfg = load_config(g);
  dataset::LifecycleContainer container = load_container(g, cfg.dataset.container);
  nets::ModelBundle model = trainer::train_initial_generator(as_const(container), cfg.dataset.k,
                                                             cfg.train_init.plan, cfg.train_init.scale_multiplier);
  const fs::path path = resolve(g, cfg.train_init.checkpoint);
  const auto fp = model.save(path, {{"role", "initial-generator"}});
  std::cout << "initial generator " << path.string() << " fingerprint " << hex64(fp) << "\n";
  return 0;
}

// ---- generate ----

int cmd_generate(GlobalArgs& g) {
  RunConfig cfg = load_config(g);
  nets::ModelBundle model = nets::ModelBundle::load(resolve(g, cfg.generate.checkpoint));
  std::optional<nets::ModelBundle> initial;
  if (cfg.generate.initial_checkpoint)
    initial = nets::ModelBundle::load(resolve(g, *cfg.generate.initial_checkpoint));
  require(!model.config().with_history() || initial.has_value(), ErrorKind::Config,
          "generate: a history-conditional variant needs generate.initial_checkpoint");

  argen::HiSchedule schedule = argen::plan_hi_schedule(cfg.generate.length, cfg.generate.fpt_step);
  dataset::LifecycleContainer out;
  out.provenance = {{"source", "ar-generate"}, {"checkpoint", cfg.generate.checkpoint}};
  for (std::uint64_t seed : cfg.generate.seeds) {
    argen::GeneratedLifecycle life =
        argen::ar_generate(model, initial ? &*initial : nullptr, schedule, seed);
    life.provenance["checkpoint"] = cfg.generate.checkpoint;
    out.lifecycles.push_back(life.to_lifecycle("gen-s" + std::to_string(seed)));
    std::cout << "generated gen-s" << seed << ": " << life.series.size() << " steps\n";
  }
  const fs::path path = resolve(g, cfg.generate.output);
  const auto fp = out.save(path);
  std::cout << "container " << path.string() << " fingerprint " << hex64(fp) << "\n";
  return 0;
}

// ---- evaluate ----

struct EvalRow {
  std::string label;
  metrics::MetricReport report;
};

metrics::FeatureExtractor obtain_extractor(const GlobalArgs& g, const RunConfig& cfg,
                                           const dataset::WindowSet& windows) {
  if (cfg.evaluate.extractor_path)
    return metrics::FeatureExtractor::load(resolve(g, *cfg.evaluate.extractor_path));
  metrics::ExtractorPlan plan;
  plan.epochs = cfg.evaluate.extractor_epochs;
  plan.seed = cfg.evaluate.seed;
  metrics::FeatureExtractor fx = metrics::train_feature_extractor(windows, plan, cfg.evaluate.extractor_scale);
  fx.save(fs::path(g.out_dir) / "extractor.cvfx");
  return fx;
}

int cmd_evaluate(GlobalArgs& g) {
  RunConfig cfg = load_config(g);
  dataset::LifecycleContainer container = load_container(g, cfg.dataset.container);
  auto windows = dataset::build_window_set(as_const(container), cfg.dataset.k);
  metrics::SignalSet real = metrics::SignalSet::from_windows(windows);
  std::vector<char> normal_mask;
  normal_mask.reserve(windows.windows.size());
  for (const auto& w : windows.windows) normal_mask.push_back(w.hi() >= 1.0 ? 1 : 0);

  metrics::PcaProjector ph = metrics::fit_pca(real, 0, cfg.evaluate.pca_dims);
  metrics::PcaProjector pv = metrics::fit_pca(real, 1, cfg.evaluate.pca_dims);
  metrics::FeatureExtractor fx = obtain_extractor(g, cfg, windows);

  metrics::CompareOptions paired_opts;
  paired_opts.bandwidth = cfg.evaluate.bandwidth;
  paired_opts.paired = true;
  paired_opts.normal_phase_mask = &normal_mask;

  // Optional predictor for the prediction-based statistics on AR rollouts.
  std::optional<rul::Predictor> predictor;
  if (cfg.evaluate.predictor) {
    predictor = rul::build_predictor(
        {cfg.evaluate.predictor->kind, cfg.dataset.k, cfg.dataset.n_feature, cfg.evaluate.predictor->seed});
    rul::PredictorPlan pplan;
    pplan.epochs = cfg.evaluate.predictor->epochs;
    pplan.batch_size = cfg.evaluate.predictor->batch_size;
    pplan.seed = cfg.evaluate.predictor->seed;
    rul::train_predictor(*predictor, windows, pplan);
  }

  std::vector<EvalRow> rows;

  if (cfg.evaluate.generated) {
    dataset::LifecycleContainer gen_container = load_container(g, *cfg.evaluate.generated);
    metrics::SignalSet gen;
    metrics::SignalSet base;
    for (const auto& lc : gen_container.lifecycles)
      for (const auto& f : lc->series) gen.frames.push_back(f);
    for (const auto& lc : container.lifecycles)
      for (const auto& f : lc->series) base.frames.push_back(f);
    metrics::CompareOptions opts = paired_opts;
    std::vector<char> frame_mask;
    for (const auto& lc : container.lifecycles)
      for (double h : lc->hi) frame_mask.push_back(h >= 1.0 ? 1 : 0);
    opts.paired = gen.count() == base.count();
    opts.normal_phase_mask = opts.paired ? &frame_mask : nullptr;
    EvalRow row;
    row.label = "container";
    row.report = metrics::compare_sets(gen, base, ph, pv, &fx, opts);
    row.report.provenance = {{"generated", *cfg.evaluate.generated}};
    rows.push_back(std::move(row));
  }

  for (const auto& entry : cfg.evaluate.models) {
    nets::ModelBundle model = nets::ModelBundle::load(resolve(g, entry.checkpoint));
    require(model.config().k == cfg.dataset.k && model.config().n_feature == cfg.dataset.n_feature,
            ErrorKind::Config, "evaluate: checkpoint " + entry.checkpoint + " does not match the dataset");
    std::optional<nets::ModelBundle> initial;
    if (entry.initial_checkpoint)
      initial = nets::ModelBundle::load(resolve(g, *entry.initial_checkpoint));
    require(!model.config().with_history() || initial.has_value(), ErrorKind::Config,
            "evaluate: model " + entry.label + " needs initial_checkpoint for AR rollouts");

    // NAR block: real histories and classes condition each window.
    {
      metrics::SignalSet gen;
      gen.frames = argen::nar_generate(model, windows, cfg.evaluate.seed);
      EvalRow row;
      row.label = entry.label + "/NAR";
      row.report = metrics::compare_sets(gen, real, ph, pv, &fx, paired_opts);
      row.report.provenance = {{"checkpoint", entry.checkpoint}, {"mode", "NAR"}};
      rows.push_back(std::move(row));
    }

    // AR block: one rollout per lifecycle along its own schedule.
    {
      metrics::SignalSet gen;
      std::vector<double> mse_parts;
      std::vector<double> mtd_parts, mv_parts;
      for (std::size_t li = 0; li < container.lifecycles.size(); ++li) {
        const auto& lc = container.lifecycles[li];
        argen::HiSchedule sched = argen::schedule_from_lifecycle(*lc, cfg.dataset.k);
        const std::uint64_t seed = rng::derive(cfg.evaluate.seed, entry.label, li);
        argen::GeneratedLifecycle life =
            argen::ar_generate(model, initial ? &*initial : nullptr, sched, seed);
        for (const auto& f : life.series) gen.frames.push_back(f);
        if (predictor) {
          auto gen_lc = life.to_lifecycle(lc->bearing_id + "-ar");
          auto gen_windows = dataset::build_window_set({gen_lc}, cfg.dataset.k);
          std::vector<double> preds = predictor->predict(gen_windows);
          std::vector<double> labels;
          for (const auto& w : gen_windows.windows) labels.push_back(w.hi());
          mse_parts.push_back(metrics::mse_rul(preds, labels));
          mtd_parts.push_back(metrics::mtd(preds));
          if (preds.size() >= static_cast<std::size_t>(cfg.dataset.k))
            mv_parts.push_back(metrics::mv(preds, cfg.dataset.k));
        }
      }
      EvalRow row;
      row.label = entry.label + "/AR";
      row.report = metrics::compare_sets(gen, real, ph, pv, &fx, paired_opts);
      auto mean_of = [](const std::vector<double>& v) -> std::optional<double> {
        if (v.empty()) return std::nullopt;
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
      };
      row.report.mse = mean_of(mse_parts);
      row.report.mtd_value = mean_of(mtd_parts);
      row.report.mv_value = mean_of(mv_parts);
      row.report.provenance = {{"checkpoint", entry.checkpoint}, {"mode", "AR"}};
      rows.push_back(std::move(row));
    }
  }

  require(!rows.empty(), ErrorKind::Config, "evaluate: nothing to evaluate (no models, no generated container)");

  json out;
  out["projector_fingerprint_h"] = hex64(ph.fingerprint);
  out["projector_fingerprint_v"] = hex64(pv.fingerprint);
  out["extractor_fingerprint"] = hex64(fx.fingerprint());
  out["dataset_fingerprint"] = hex64(container.fingerprint());
  out["config"] = cfg.raw;
  out["rows"] = json::array();
  std::string tsv = metrics::MetricReport::tsv_header() + "\n";
  for (const auto& row : rows) {
    json r = row.report.to_json();
    r["label"] = row.label;
    out["rows"].push_back(r);
    tsv += row.report.tsv_row(row.label) + "\n";
  }
  io::write_text_file(fs::path(g.out_dir) / "report.json", out.dump(2) + "\n");
  io::write_text_file(fs::path(g.out_dir) / "report.tsv", tsv);
  std::cout << tsv;
  return 0;
}

// ---- rul ----

int cmd_rul(GlobalArgs& g) {
  RunConfig cfg = load_config(g);
  dataset::LifecycleContainer container = load_container(g, cfg.dataset.container);
  rul::ExperimentPlan plan;
  plan.bearings = as_const(container);
  plan.test_bearing = cfg.rul.test_bearing;
  plan.kind = cfg.rul.predictor;
  plan.k = cfg.dataset.k;
  plan.train = cfg.rul.plan;
  plan.seeds = cfg.rul.seeds;
  if (cfg.rul.augmentation) {
    dataset::LifecycleContainer aug = load_container(g, *cfg.rul.augmentation);
    plan.generated.assign(aug.lifecycles.begin(), aug.lifecycles.end());
  }
  rul::ExperimentReport report = rul::augmentation_experiment(plan);
  json j = report.to_json();
  j["config"] = cfg.raw;
  j["dataset_fingerprint"] = hex64(container.fingerprint());
  io::write_text_file(fs::path(g.out_dir) / "rul_report.json", j.dump(2) + "\n");
  io::write_text_file(fs::path(g.out_dir) / "rul_report.tsv",
                      rul::ExperimentReport::tsv_header() + "\n" + report.tsv_row() + "\n");
  std::cout << rul::ExperimentReport::tsv_header() << "\n" << report.tsv_row() << "\n";
  if (report.partial) {
    std::cerr << "error: numeric: one or more seed runs failed; report marked partial\n";
    return kExitNumeric;
  }
  return 0;
}

// ---- report ----

int cmd_report(GlobalArgs& g, const std::vector<std::string>& run_dirs, bool plots) {
  require(!run_dirs.empty(), ErrorKind::Config, "report: need at least one run directory");
  std::string merged = metrics::MetricReport::tsv_header() + "\n";
  std::string rul_merged = rul::ExperimentReport::tsv_header() + "\n";
  bool have_metric_rows = false, have_rul_rows = false;
  std::string proj_h, proj_v, extractor;
  for (const auto& dir : run_dirs) {
    const fs::path rp = fs::path(dir) / "report.json";
    if (fs::exists(rp)) {
      json j = json::parse(io::read_text_file(rp));
      const std::string h = j.at("projector_fingerprint_h").get<std::string>();
      const std::string v = j.at("projector_fingerprint_v").get<std::string>();
      const std::string x = j.at("extractor_fingerprint").get<std::string>();
      if (proj_h.empty()) {
        proj_h = h;
        proj_v = v;
        extractor = x;
      } else {
        require(proj_h == h && proj_v == v && extractor == x, ErrorKind::Data,
                "report: incompatible evaluator provenance; refusing to merge MMD/FID columns "
                "(projectors " + proj_h + " vs " + h + ", extractors " + extractor + " vs " + x + ")");
      }
      auto [header, rows] = report::parse_tsv(io::read_text_file(fs::path(dir) / "report.tsv"));
      for (const auto& row : rows) {
        std::string line;
        for (std::size_t i = 0; i < row.size(); ++i) line += (i ? "\t" : "") + row[i];
        merged += line + "\n";
        have_metric_rows = true;
      }
    }
    const fs::path rr = fs::path(dir) / "rul_report.tsv";
    if (fs::exists(rr)) {
      auto [header, rows] = report::parse_tsv(io::read_text_file(rr));
      for (const auto& row : rows) {
        std::string line;
        for (std::size_t i = 0; i < row.size(); ++i) line += (i ? "\t" : "") + row[i];
        rul_merged += line + "\n";
        have_rul_rows = true;
      }
    }
    if (plots) {
      const fs::path traces = fs::path(dir) / "traces.tsv";
      if (fs::exists(traces)) {
        auto [header, rows] = report::parse_tsv(io::read_text_file(traces));
        std::vector<double> vae, disc, val;
        for (const auto& row : rows) {
          vae.push_back(std::stod(row.at(2)));
          disc.push_back(std::stod(row.at(3)));
          val.push_back(std::stod(row.at(5)));
        }
        io::write_text_file(fs::path(dir) / "traces.svg",
                            report::svg_line_plot({{"vae", vae}, {"disc", disc}, {"val", val}},
                                                  "loss traces: " + dir));
      }
      for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".cvds") {
          dataset::LifecycleContainer c = dataset::LifecycleContainer::load(entry.path());
          std::vector<std::pair<std::string, std::vector<double>>> series;
          for (const auto& lc : c.lifecycles) {
            Matrix rms = argen::rms_profile(lc->series);
            std::vector<double> h(static_cast<std::size_t>(rms.cols()));
            std::vector<double> v(static_cast<std::size_t>(rms.cols()));
            for (long t = 0; t < rms.cols(); ++t) {
              h[static_cast<std::size_t>(t)] = rms(0, t);
              v[static_cast<std::size_t>(t)] = rms(1, t);
            }
            series.emplace_back(lc->bearing_id + "/h", std::move(h));
            series.emplace_back(lc->bearing_id + "/v", std::move(v));
          }
          io::write_text_file(entry.path().parent_path() / (entry.path().stem().string() + "_rms.svg"),
                              report::svg_line_plot(series, "per-step RMS"));
        }
      }
    }
  }
  fs::create_directories(g.out_dir);
  if (have_metric_rows) {
    io::write_text_file(fs::path(g.out_dir) / "merged_report.tsv", merged);
    std::cout << merged;
  }
  if (have_rul_rows) {
    io::write_text_file(fs::path(g.out_dir) / "merged_rul_report.tsv", rul_merged);
    std::cout << rul_merged;
  }
  require(have_metric_rows || have_rul_rows, ErrorKind::Data,
          "report: no reports found in the given directories");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conditional generative modeling of run-to-failure bearing vibration data"};
  app.require_subcommand(1);

  GlobalArgs g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "override every section seed");
  app.add_option("--out", g.out_dir, "output root directory (default: runs)");
  app.add_option("--config", g.config_path, "path to the run configuration document");

  auto* prepare = app.add_subcommand("prepare", "build the dataset container");
  auto* train = app.add_subcommand("train", "train a generative model variant");
  auto* train_init = app.add_subcommand("train-init", "train the initial history-window generator");
  auto* generate = app.add_subcommand("generate", "autoregressively generate full lifecycles");
  auto* evaluate = app.add_subcommand("evaluate", "score generation quality (AR and NAR rows)");
  auto* rul_cmd = app.add_subcommand("rul", "run the RUL augmentation experiment");
  auto* report_cmd = app.add_subcommand("report", "consolidate run reports into merged tables");
  std::vector<std::string> run_dirs;
  bool plots = false;
  report_cmd->add_option("dirs", run_dirs, "run directories to merge");
  report_cmd->add_flag("--plots", plots, "emit SVG plots (loss traces, RMS profiles)");

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    if (prepare->parsed()) return cmd_prepare(g);
    if (train->parsed()) return cmd_train(g);
    if (train_init->parsed()) return cmd_train_init(g);
    if (generate->parsed()) return cmd_generate(g);
    if (evaluate->parsed()) return cmd_evaluate(g);
    if (rul_cmd->parsed()) return cmd_rul(g);
    if (report_cmd->parsed()) return cmd_report(g, run_dirs, plots);
  } catch (const Error& e) {
    const char* kind = "internal";
    int code = 1;
    switch (e.kind()) {
      case ErrorKind::Config: kind = "config"; code = kExitConfig; break;
      case ErrorKind::Data: kind = "data"; code = kExitData; break;
      case ErrorKind::Numeric: kind = "numeric"; code = kExitNumeric; break;
      case ErrorKind::Contract: kind = "contract"; code = kExitContract; break;
    }
    std::cerr << "error: " << kind << ": " << e.what() << "\n";
    return code;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
