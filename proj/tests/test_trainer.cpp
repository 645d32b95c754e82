#include <doctest.h>

#include "cvgan/trainer.hpp"

#include <filesystem>

using namespace cvgan;
using namespace cvgan::trainer;

namespace {

std::vector<std::shared_ptr<const dataset::BearingLifecycle>> make_corpus(int count, int n, int fpt,
                                                                          int n_feature, std::uint64_t seed) {
  std::vector<std::shared_ptr<const dataset::BearingLifecycle>> out;
  for (int i = 0; i < count; ++i) {
    dataset::SyntheticSpec spec;
    spec.bearing_id = "S" + std::to_string(i + 1);
    spec.n = n;
    spec.fpt_index = fpt;
    spec.n_feature = n_feature;
    spec.noise_scale = 0.05;
    spec.seed = rng::derive(seed, "corpus", static_cast<std::uint64_t>(i));
    out.push_back(std::make_shared<dataset::BearingLifecycle>(dataset::synthesize_lifecycle(spec)));
  }
  return out;
}

nets::ModelBundle tiny_model(nets::Variant variant, int k, int n_feature, std::uint64_t seed) {
  nets::BuildOptions o;
  o.scale_multiplier = 0.25;
  o.seed = seed;
  return nets::build_model(variant, k, n_feature, o);
}

TrainPlan tiny_plan(TrainMode mode, int epochs, std::uint64_t seed) {
  TrainPlan p;
  p.mode = mode;
  p.epochs = epochs;
  p.batch_size = 64;
  p.seed = seed;
  p.early_stop_patience = 30;
  return p;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("identical plan and seed give bitwise-identical loss traces") {
    auto corpus = make_corpus(2, 133, 40, 32, 7);
    auto windows = dataset::build_window_set(corpus, 5);
    CHECK(windows.windows.size() == 256);
    losses::LossConfig cfg = losses::compose_config("conf9");
    TrainPlan plan = tiny_plan(TrainMode::NonAr, 2, 15);

    nets::ModelBundle m1 = tiny_model(nets::Variant::CVGAN, 5, 32, 15);
    RunManifest r1 = train(m1, windows, cfg, plan);
    nets::ModelBundle m2 = tiny_model(nets::Variant::CVGAN, 5, 32, 15);
    RunManifest r2 = train(m2, windows, cfg, plan);

    REQUIRE(r1.traces.size() == 2);
    REQUIRE(r2.traces.size() == 2);
    for (std::size_t i = 0; i < r1.traces.size(); ++i) {
      CHECK(r1.traces[i].vae_loss == r2.traces[i].vae_loss);
      CHECK(r1.traces[i].disc_loss == r2.traces[i].disc_loss);
      CHECK(r1.traces[i].classifier_loss == r2.traces[i].classifier_loss);
      CHECK(r1.traces[i].val_loss == r2.traces[i].val_loss);
      CHECK(std::isfinite(r1.traces[i].vae_loss));
      CHECK(std::isfinite(r1.traces[i].disc_loss));
    }
    CHECK(m1.fingerprint() == m2.fingerprint());
    CHECK_FALSE(r1.aborted);

    // Different seeds give different initial parameter draws.
    nets::ModelBundle m3 = tiny_model(nets::Variant::CVGAN, 5, 32, 16);
    CHECK(m3.fingerprint() != m2.fingerprint());
  }

  TEST_CASE("smoke run writes a loadable checkpoint and resolved config") {
    auto corpus = make_corpus(1, 70, 20, 32, 8);
    auto windows = dataset::build_window_set(corpus, 5);
    losses::LossConfig cfg = losses::compose_config("conf1");
    TrainPlan plan = tiny_plan(TrainMode::NonAr, 2, 25);
    nets::ModelBundle m = tiny_model(nets::Variant::CVGAN, 5, 32, 25);
    RunManifest r = train(m, windows, cfg, plan);
    CHECK(r.traces.size() == 2);
    CHECK(r.loss_config_name == "conf1");
    CHECK(r.resolved_loss_config.at("vae_terms").size() == 3);  // Recon, KL, Bin
    auto dir = std::filesystem::temp_directory_path() / "cvgan_trainer_smoke";
    std::filesystem::create_directories(dir);
    m.save(dir / "m.cvck");
    nets::ModelBundle back = nets::ModelBundle::load(dir / "m.cvck");
    CHECK(back.fingerprint() == m.fingerprint());
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("resolve_config_for_variant drops unsupported terms") {
    losses::LossConfig conf9 = losses::compose_config("conf9");
    nets::ModelBundle cvae = tiny_model(nets::Variant::CVAE, 5, 32, 1);
    losses::LossConfig r = resolve_config_for_variant(conf9, cvae.config());
    CHECK(r.vae_terms.size() == 2);  // Feature needs D and C
    CHECK_FALSE(r.classifier_term_enabled);
    CHECK(r.disc_terms.empty());

    nets::ModelBundle cgan = tiny_model(nets::Variant::CGAN, 5, 32, 1);
    losses::LossConfig rc = resolve_config_for_variant(losses::compose_config("conf3"), cgan.config());
    CHECK(rc.vae_terms.size() == 1);  // Bin survives; Recon/KL need an encoder
    CHECK(rc.disc_terms.size() == 2);  // d + L1
  }

  TEST_CASE("ar finetune freeze contracts hold bitwise") {
    auto corpus = make_corpus(2, 40, 12, 32, 9);
    auto windows = dataset::build_window_set(corpus, 5);
    losses::LossConfig cfg = losses::compose_config("conf9");

    TrainPlan plan = tiny_plan(TrainMode::ArFinetuneNoDC, 2, 35);
    plan.finetune_epochs = 1;
    nets::ModelBundle m = tiny_model(nets::Variant::CVGAN, 5, 32, 35);
    RunManifest r = train(m, windows, cfg, plan);
    CHECK_FALSE(r.aborted);
    CHECK(r.fingerprints.at("after_main.discriminator") == r.fingerprints.at("final.discriminator"));
    CHECK(r.fingerprints.at("after_main.classifier") == r.fingerprints.at("final.classifier"));
    // The main phase itself trained them.
    CHECK(r.fingerprints.at("initial.discriminator") != r.fingerprints.at("after_main.discriminator"));

    TrainPlan plan_no_c = tiny_plan(TrainMode::ArFinetuneNoC, 2, 36);
    nets::ModelBundle m2 = tiny_model(nets::Variant::CVGAN, 5, 32, 36);
    RunManifest r2 = train(m2, windows, cfg, plan_no_c);
    CHECK(r2.fingerprints.at("after_main.classifier") == r2.fingerprints.at("final.classifier"));
    CHECK(r2.fingerprints.at("after_main.discriminator") != r2.fingerprints.at("final.discriminator"));
  }

  TEST_CASE("early stopping respects patience and restores the best value") {
    auto corpus = make_corpus(1, 70, 20, 32, 10);
    auto windows = dataset::build_window_set(corpus, 5);
    losses::LossConfig cfg = losses::compose_config("conf9");
    TrainPlan plan = tiny_plan(TrainMode::NonAr, 60, 45);
    plan.early_stop_patience = 3;
    nets::ModelBundle m = tiny_model(nets::Variant::CVAE, 5, 32, 45);
    RunManifest r = train(m, windows, cfg, plan);
    REQUIRE(r.best_epoch >= 0);
    const int last_epoch = r.traces.back().epoch;
    CHECK(last_epoch - r.best_epoch <= plan.early_stop_patience);

    // The restored parameters achieve the recorded best monitored value.
    Trainer probe(m, windows, cfg, plan);
    CHECK(probe.validation_loss() == r.best_val);
  }

  TEST_CASE("update partition: each optimizer step touches only its group") {
    auto corpus = make_corpus(1, 40, 12, 32, 11);
    auto windows = dataset::build_window_set(corpus, 5);
    losses::LossConfig cfg = losses::compose_config("conf9");
    TrainPlan plan = tiny_plan(TrainMode::NonAr, 1, 55);
    nets::ModelBundle m = tiny_model(nets::Variant::CVGAN, 5, 32, 55);
    Trainer t(m, windows, cfg, plan);
    std::vector<std::size_t> idx(windows.windows.size());
    std::iota(idx.begin(), idx.end(), 0);

    rng::Stream noise(1);
    const auto gen_before = m.fingerprint(m.generator_group());
    const auto d_before = m.discriminator_fingerprint();
    const auto c_before = m.classifier_fingerprint();
    t.step_once(idx, {true, false, false, false}, noise);
    CHECK(m.fingerprint(m.generator_group()) == gen_before);
    CHECK(m.discriminator_fingerprint() != d_before);
    CHECK(m.classifier_fingerprint() == c_before);

    const auto d_mid = m.discriminator_fingerprint();
    t.step_once(idx, {false, true, false, false}, noise);
    CHECK(m.fingerprint(m.generator_group()) == gen_before);
    CHECK(m.discriminator_fingerprint() == d_mid);
    CHECK(m.classifier_fingerprint() != c_before);

    const auto c_mid = m.classifier_fingerprint();
    t.step_once(idx, {false, false, true, false}, noise);
    CHECK(m.fingerprint(m.generator_group()) != gen_before);
    CHECK(m.discriminator_fingerprint() == d_mid);
    CHECK(m.classifier_fingerprint() == c_mid);
  }

  TEST_CASE("ar mode requires a history-conditional variant") {
    auto corpus = make_corpus(1, 40, 12, 32, 12);
    auto windows = dataset::build_window_set(corpus, 5);
    losses::LossConfig cfg = losses::compose_config("conf9");
    TrainPlan plan = tiny_plan(TrainMode::Ar, 1, 1);
    nets::ModelBundle no_h = tiny_model(nets::Variant::CVGAN_no_H, 5, 32, 1);
    CHECK_THROWS_AS(Trainer(no_h, windows, cfg, plan), Error);

    // AR training itself runs for a conditional variant.
    nets::ModelBundle m = tiny_model(nets::Variant::CVGAN, 5, 32, 2);
    RunManifest r = train(m, windows, cfg, plan);
    CHECK_FALSE(r.aborted);
    CHECK(r.traces.size() == 1);
  }

  TEST_CASE("non-finite losses abort with a diagnostic manifest") {
    auto corpus = make_corpus(1, 40, 12, 32, 13);
    auto windows = dataset::build_window_set(corpus, 5);
    losses::LossConfig cfg = losses::compose_config("conf9");
    TrainPlan plan = tiny_plan(TrainMode::NonAr, 2, 3);
    nets::ModelBundle m = tiny_model(nets::Variant::CVGAN, 5, 32, 3);
    for (auto* p : m.all_params()) {
      if (p->name == "encoder.logvar.b") p->var.mutable_value().setConstant(2000.0);  // exp overflow
    }
    RunManifest r = train(m, windows, cfg, plan);
    CHECK(r.aborted);
    CHECK(r.abort_reason.find("non-finite") != std::string::npos);
  }

  TEST_CASE("initial generator samples pre-FPT windows of the right shape") {
    auto corpus = make_corpus(2, 60, 30, 32, 14);
    TrainPlan plan = tiny_plan(TrainMode::NonAr, 2, 65);
    nets::ModelBundle g = train_initial_generator(corpus, 5, plan, 0.25);
    CHECK(g.config().io_channels == 10);

    rng::CounterNormal noise(rng::derive(65, "sample"));
    Vector z1 = noise.draw(0, g.config().latent_dim);
    Vector z2 = noise.draw(1, g.config().latent_dim);
    Matrix w1 = g.generate(z1, nullptr);
    Matrix w2 = g.generate(z2, nullptr);
    CHECK(w1.rows() == 10);  // k x 2 channels
    CHECK(w1.cols() == 32);
    CHECK((w1 - w2).cwiseAbs().maxCoeff() > 0.0);       // different draws differ
    Matrix w1_again = g.generate(z1, nullptr);
    CHECK((w1 - w1_again).cwiseAbs().maxCoeff() == 0.0);  // fixed seed reproducible

    // No pre-FPT data: error.
    auto late = make_corpus(1, 40, 2, 32, 15);
    CHECK_THROWS_AS(train_initial_generator(late, 5, plan, 0.25), Error);
  }

  TEST_CASE("run_seeds aggregates and reports failures as partial") {
    SeedReport constant = run_seeds([](std::uint64_t) { return 1.0; });
    REQUIRE(constant.runs.size() == 5);
    CHECK(constant.mean == doctest::Approx(1.0));
    CHECK_FALSE(constant.partial);

    SeedReport identity = run_seeds([](std::uint64_t s) { return static_cast<double>(s); });
    CHECK(identity.mean == doctest::Approx(35.0));

    SeedReport partial = run_seeds([](std::uint64_t s) -> double {
      if (s == 45) throw Error::numeric("synthetic failure");
      return static_cast<double>(s);
    });
    CHECK(partial.partial);
    CHECK_FALSE(partial.mean.has_value());
    int ok = 0;
    for (const auto& r : partial.runs)
      if (r.value) ++ok;
    CHECK(ok == 4);
    bool found_error = false;
    for (const auto& r : partial.runs)
      if (r.seed == 45 && !r.error.empty()) found_error = true;
    CHECK(found_error);
  }
}
