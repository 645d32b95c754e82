#include <doctest.h>

#include "cvgan/losses.hpp"
#include "cvgan/rng.hpp"

#include <map>

using namespace cvgan;
using namespace cvgan::losses;

namespace {

Matrix random_matrix(rng::Stream& s, long rows, long cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (long j = 0; j < cols; ++j)
    for (long i = 0; i < rows; ++i) m(i, j) = s.normal() * scale;
  return m;
}

/// Random full input bundle (batch 4) with every tensor populated.
struct Bundle {
  ad::Var x, x_hat, x_gen, mu, logvar, hist_mean;
  ad::Var fD_real, fD_hat, fD_gen, fC_real, fC_hat, fC_gen;
  ad::Var d_logit_real, d_logit_hat, d_logit_gen, c_logits_real, c_logits_hat;
  std::vector<int> labels{1, 7, 1, 30};
  ClassCenterState centers;

  explicit Bundle(std::uint64_t seed) : centers(32, 6, 0.9) {
    rng::Stream s(seed);
    const int B = 4, N = 10, m = 6;
    x = ad::Var::leaf(random_matrix(s, 2, B * N), true);
    x_hat = ad::Var::leaf(random_matrix(s, 2, B * N), true);
    x_gen = ad::Var::leaf(random_matrix(s, 2, B * N), true);
    mu = ad::Var::leaf(random_matrix(s, 32, B, 0.5), true);
    logvar = ad::Var::leaf(random_matrix(s, 32, B, 0.3), true);
    hist_mean = ad::Var::leaf(random_matrix(s, 2, B * N), true);
    fD_real = ad::Var::leaf(random_matrix(s, m, B), true);
    fD_hat = ad::Var::leaf(random_matrix(s, m, B), true);
    fD_gen = ad::Var::leaf(random_matrix(s, m, B), true);
    fC_real = ad::Var::leaf(random_matrix(s, m, B), true);
    fC_hat = ad::Var::leaf(random_matrix(s, m, B), true);
    fC_gen = ad::Var::leaf(random_matrix(s, m, B), true);
    d_logit_real = ad::Var::leaf(random_matrix(s, 1, B), true);
    d_logit_hat = ad::Var::leaf(random_matrix(s, 1, B), true);
    d_logit_gen = ad::Var::leaf(random_matrix(s, 1, B), true);
    c_logits_real = ad::Var::leaf(random_matrix(s, 32, B), true);
    c_logits_hat = ad::Var::leaf(random_matrix(s, 32, B), true);
    centers.centers = random_matrix(s, 32, m, 0.5);
    for (auto& c : centers.counts) c = 1;
  }

  TermInputs inputs() const {
    TermInputs in;
    in.x = &x;
    in.x_hat = &x_hat;
    in.x_gen = &x_gen;
    in.mu = &mu;
    in.logvar = &logvar;
    in.hist_mean = &hist_mean;
    in.fD_real = &fD_real;
    in.fD_hat = &fD_hat;
    in.fD_gen = &fD_gen;
    in.fC_real = &fC_real;
    in.fC_hat = &fC_hat;
    in.fC_gen = &fC_gen;
    in.d_logit_real = &d_logit_real;
    in.d_logit_hat = &d_logit_hat;
    in.d_logit_gen = &d_logit_gen;
    in.c_logits_real = &c_logits_real;
    in.c_logits_hat = &c_logits_hat;
    in.labels = &labels;
    in.centers = &centers;
    return in;
  }

  std::vector<ad::Var*> differentiable() {
    return {&x,       &x_hat,   &x_gen,   &mu,      &logvar,       &hist_mean,   &fD_real,
            &fD_hat,  &fD_gen,  &fC_real, &fC_hat,  &fC_gen,       &d_logit_real, &d_logit_hat,
            &d_logit_gen, &c_logits_real, &c_logits_hat};
  }
};

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("reconstruction and KL spot values") {
    rng::Stream s(1);
    Matrix x = random_matrix(s, 2, 12);
    ad::Var xv = ad::Var::leaf(x, false);
    TermInputs in;
    in.x = &xv;
    in.x_hat = &xv;
    CHECK(loss_term(TermId::Recon, in).value()(0, 0) == 0.0);

    ad::Var mu0 = ad::Var::leaf(Matrix::Zero(32, 1), false);
    ad::Var lv0 = ad::Var::leaf(Matrix::Zero(32, 1), false);
    TermInputs kin;
    kin.mu = &mu0;
    kin.logvar = &lv0;
    CHECK(loss_term(TermId::KL, kin).value()(0, 0) == doctest::Approx(0.0).epsilon(1e-12));

    Matrix e1 = Matrix::Zero(32, 1);
    e1(0, 0) = 1.0;
    ad::Var mu1 = ad::Var::leaf(e1, false);
    kin.mu = &mu1;
    CHECK(loss_term(TermId::KL, kin).value()(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  }

  TEST_CASE("history-alignment and feature-mean terms") {
    rng::Stream s(2);
    Matrix xh = random_matrix(s, 2, 8);
    ad::Var x_hat = ad::Var::leaf(xh, false);
    ad::Var hist_mean = ad::Var::leaf(xh, false);  // constant history rows equal to x_hat
    TermInputs in;
    in.hist_mean = &hist_mean;
    in.x_hat = &x_hat;
    CHECK(loss_term(TermId::he, in).value()(0, 0) == 0.0);

    // mf: identical batch means -> 0; means differing by d -> 0.5*|d|^2,
    // verified against brute-force batch averaging.
    const int m = 5, B = 7;
    Matrix fr = random_matrix(s, m, B);
    Matrix shift = random_matrix(s, m, 1);
    Matrix ff = fr;
    for (int b = 0; b < B; ++b) ff.col(b) += shift.col(0);
    ad::Var frv = ad::Var::leaf(fr, false);
    ad::Var ffv = ad::Var::leaf(ff, false);
    TermInputs min;
    min.fD_real = &frv;
    min.fD_gen = &frv;
    CHECK(loss_term(TermId::mf, min).value()(0, 0) == doctest::Approx(0.0).epsilon(1e-15));
    min.fD_gen = &ffv;
    Vector mean_r = Vector::Zero(m), mean_f = Vector::Zero(m);
    for (int b = 0; b < B; ++b) {
      mean_r += fr.col(b);
      mean_f += ff.col(b);
    }
    mean_r /= B;
    mean_f /= B;
    const double oracle = 0.5 * (mean_r - mean_f).squaredNorm();
    CHECK(loss_term(TermId::mf, min).value()(0, 0) == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(loss_term(TermId::mf, min).value()(0, 0) == doctest::Approx(0.5 * shift.squaredNorm()).epsilon(1e-9));
  }

  TEST_CASE("adversarial terms match the sigmoid formulas") {
    Matrix lr(1, 2), lg(1, 2);
    lr << 0.7, -1.3;
    lg << 0.2, 2.0;
    ad::Var logit_real = ad::Var::leaf(lr, false);
    ad::Var logit_gen = ad::Var::leaf(lg, false);
    TermInputs in;
    in.d_logit_real = &logit_real;
    in.d_logit_gen = &logit_gen;
    auto sigma = [](double a) { return 1.0 / (1.0 + std::exp(-a)); };
    double expect = 0.0;
    for (int i = 0; i < 2; ++i) expect += -std::log(sigma(lr(0, i))) / 2.0 - std::log(1.0 - sigma(lg(0, i))) / 2.0;
    CHECK(loss_term(TermId::d, in).value()(0, 0) == doctest::Approx(expect).epsilon(1e-12));

    in.d_logit_hat = &logit_gen;
    double l1_expect = 0.0;
    for (int i = 0; i < 2; ++i) l1_expect += -std::log(1.0 - sigma(lg(0, i))) / 2.0;
    CHECK(loss_term(TermId::L1, in).value()(0, 0) == doctest::Approx(l1_expect).epsilon(1e-12));
  }

  TEST_CASE("class-center EMA updates") {
    ClassCenterState st(32, 3, 0.9);
    Matrix features(3, 4);
    features << 1, 1, 1, 5, 1, 1, 1, 5, 1, 1, 1, 5;
    std::vector<int> labels{2, 2, 2, 9};
    ClassCenterState first = update_class_centers(st, features, labels);
    CHECK(first.centers(2, 0) == doctest::Approx(1.0));  // first observation: batch mean
    CHECK(first.centers(9, 0) == doctest::Approx(5.0));
    CHECK(first.centers(7, 0) == 0.0);  // absent class untouched

    Matrix zeros = Matrix::Zero(3, 2);
    ClassCenterState second = update_class_centers(first, zeros, {2, 2});
    CHECK(second.centers(2, 0) == doctest::Approx(0.9));  // 0.9*1 + 0.1*0
    CHECK(second.centers(9, 0) == doctest::Approx(5.0));
    CHECK_THROWS_AS(update_class_centers(first, Matrix::Zero(4, 2), std::vector<int>{0, 1}), Error);
  }

  TEST_CASE("compose_config matches the frozen table transcription") {
    // Transcribed once from the loss-configuration table, then frozen here.
    const std::map<std::string, std::pair<std::vector<std::string>, std::vector<std::string>>> frozen = {
        {"conf1", {{"Bin"}, {}}},
        {"conf2", {{"Feature", "mc", "hp"}, {}}},
        {"conf3", {{"Bin"}, {"L1"}}},
        {"conf4", {{"Feature", "mc", "hp", "he"}, {}}},
        {"conf5", {{"Bin", "mc"}, {"L1"}}},
        {"conf6", {{"Bin", "mc", "mf", "he"}, {}}},
        {"conf7", {{"Bin", "mc", "mf"}, {"L1"}}},
        {"conf8", {{"Feature", "mc", "mf"}, {"L1"}}},
        {"conf9", {{"Feature"}, {}}},
        {"conf10", {{"Bin", "mc", "mf"}, {}}},
        {"conf11", {{"Bin", "mc", "mf", "hp"}, {}}},
        {"conf12", {{"Bin", "mc"}, {}}},
        {"conf13", {{"Bin", "mc", "hp"}, {}}},
        {"conf14", {{"Feature", "mc"}, {}}},
    };
    for (const auto& [name, sets] : frozen) {
      LossConfig cfg = compose_config(name);
      // VAE side always opens with Recon, KL.
      REQUIRE(cfg.vae_terms.size() == 2 + sets.first.size());
      CHECK(to_string(cfg.vae_terms[0].id) == "Recon");
      CHECK(to_string(cfg.vae_terms[1].id) == "KL");
      for (std::size_t i = 0; i < sets.first.size(); ++i)
        CHECK(to_string(cfg.vae_terms[2 + i].id) == sets.first[i]);
      // Discriminator side always opens with d.
      REQUIRE(cfg.disc_terms.size() == 1 + sets.second.size());
      CHECK(to_string(cfg.disc_terms[0].id) == "d");
      for (std::size_t i = 0; i < sets.second.size(); ++i)
        CHECK(to_string(cfg.disc_terms[1 + i].id) == sets.second[i]);
      CHECK(cfg.classifier_term_enabled);

      // Serialization round-trip.
      LossConfig back = LossConfig::parse(cfg.serialize());
      CHECK(back.serialize() == cfg.serialize());
    }
    CHECK_THROWS_AS(compose_config("conf15"), Error);
  }

  TEST_CASE("total_losses vanishes on perfect reconstruction under conf9") {
    rng::Stream s(5);
    Matrix x = random_matrix(s, 2, 8);
    Matrix f = random_matrix(s, 6, 4);
    ad::Var xv = ad::Var::leaf(x, false);
    ad::Var fv = ad::Var::leaf(f, false);
    ad::Var mu = ad::Var::leaf(Matrix::Zero(32, 4), false);
    ad::Var lv = ad::Var::leaf(Matrix::Zero(32, 4), false);
    ad::Var lr = ad::Var::leaf(Matrix::Zero(1, 4), false);
    std::vector<int> labels{0, 1, 2, 3};
    TermInputs in;
    in.x = &xv;
    in.x_hat = &xv;
    in.mu = &mu;
    in.logvar = &lv;
    in.fD_real = &fv;
    in.fD_hat = &fv;
    in.fC_real = &fv;
    in.fC_hat = &fv;
    in.d_logit_real = &lr;
    in.d_logit_gen = &lr;
    in.labels = &labels;
    TotalLosses t = total_losses(compose_config("conf9"), in, {true, true, false});
    CHECK(t.vae.value()(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(t.disc.value()(0, 0) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  }

  TEST_CASE("weighted sums are linear and additive") {
    Bundle b(6);
    TermInputs in = b.inputs();

    LossConfig conf9 = compose_config("conf9");
    LossConfig conf14 = compose_config("conf14");
    TotalOptions opts{true, true, true};
    const double vae9 = total_losses(conf9, in, opts).vae.value()(0, 0);
    const double vae14 = total_losses(conf14, in, opts).vae.value()(0, 0);
    const double mc_val = loss_term(TermId::mc, in).value()(0, 0);
    CHECK(vae14 == doctest::Approx(vae9 + mc_val).epsilon(1e-9));

    // Doubling a term's weight doubles its contribution exactly.
    LossConfig doubled = conf9;
    for (auto& t : doubled.vae_terms)
      if (t.id == TermId::Feature) t.weight = 2.0;
    const double feature_val = loss_term(TermId::Feature, in).value()(0, 0);
    const double vae_doubled = total_losses(doubled, in, opts).vae.value()(0, 0);
    CHECK(vae_doubled - vae9 == doctest::Approx(feature_val).epsilon(1e-9));

    // Additivity: the total equals the sum of enabled term values.
    double manual = 0.0;
    for (const auto& t : conf14.vae_terms) manual += t.weight * loss_term(t.id, in).value()(0, 0);
    CHECK(vae14 == doctest::Approx(manual).epsilon(1e-9));
  }

  TEST_CASE("non-negative terms stay non-negative on random inputs") {
    for (std::uint64_t seed : {11u, 12u, 13u}) {
      Bundle b(seed);
      TermInputs in = b.inputs();
      for (TermId id : {TermId::Recon, TermId::KL, TermId::Feature, TermId::he, TermId::hp, TermId::mf,
                        TermId::mc}) {
        CHECK(loss_term(id, in).value()(0, 0) >= 0.0);
      }
      CHECK(loss_term(TermId::KL, in).value()(0, 0) > 0.0);  // KL=0 iff mu=0 and logvar=0
    }
  }

  TEST_CASE("every term's gradient matches central finite differences") {
    const std::vector<TermId> all = {TermId::Recon, TermId::KL, TermId::Feature, TermId::he,
                                     TermId::hp,    TermId::mf, TermId::mc,      TermId::L1,
                                     TermId::C,     TermId::d,  TermId::Bin};
    rng::Stream pick(99);
    for (TermId id : all) {
      Bundle b(100 + static_cast<std::uint64_t>(id));
      auto build = [&] { return loss_term(id, b.inputs()); };
      ad::Var loss = build();
      for (auto* v : b.differentiable()) v->zero_grad();
      ad::backward(loss);
      // Five random points across the differentiable inputs that actually
      // received gradient signal.
      int checked = 0;
      int guard = 0;
      while (checked < 5 && guard < 200) {
        ++guard;
        auto* v = b.differentiable()[pick.next_u64() % b.differentiable().size()];
        const long i = static_cast<long>(pick.next_u64() % static_cast<std::uint64_t>(v->rows()));
        const long j = static_cast<long>(pick.next_u64() % static_cast<std::uint64_t>(v->cols()));
        const double an = v->grad()(i, j);
        if (an == 0.0) continue;  // input not consumed by this term
        const double h = 1e-5;
        const double orig = v->value()(i, j);
        v->mutable_value()(i, j) = orig + h;
        const double up = build().value()(0, 0);
        v->mutable_value()(i, j) = orig - h;
        const double down = build().value()(0, 0);
        v->mutable_value()(i, j) = orig;
        const double fd = (up - down) / (2 * h);
        INFO("term ", to_string(id), " coord (", i, ",", j, ") analytic=", an, " fd=", fd);
        CHECK(std::abs(an - fd) <= 1e-8 + 1e-3 * std::max(std::abs(an), std::abs(fd)));
        ++checked;
      }
      CHECK(checked == 5);
    }
  }

  TEST_CASE("missing inputs raise contract errors naming the term") {
    TermInputs empty;
    for (TermId id : {TermId::Recon, TermId::KL, TermId::mf, TermId::d, TermId::C, TermId::Bin}) {
      CHECK_THROWS_AS(loss_term(id, empty), Error);
    }
  }
}
