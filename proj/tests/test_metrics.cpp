#include <doctest.h>

#include "cvgan/metrics.hpp"

#include <filesystem>

using namespace cvgan;
using namespace cvgan::metrics;

namespace {

Matrix random_matrix(rng::Stream& s, long rows, long cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (long j = 0; j < cols; ++j)
    for (long i = 0; i < rows; ++i) m(i, j) = s.normal() * scale;
  return m;
}

// O(n^2) direct-sum evaluation of the V-statistic with K(x,y)=exp(-|x-y|^2/bw).
double mmd_oracle(const Matrix& gen, const Matrix& real, double bw = 1.0) {
  auto block = [bw](const Matrix& a, const Matrix& b) {
    double sum = 0.0;
    for (long i = 0; i < a.cols(); ++i)
      for (long j = 0; j < b.cols(); ++j) sum += std::exp(-(a.col(i) - b.col(j)).squaredNorm() / bw);
    return sum / static_cast<double>(a.cols() * b.cols());
  };
  return block(gen, gen) - 2.0 * block(gen, real) + block(real, real);
}

SignalSet random_set(rng::Stream& s, int count, int n_feature, double base = 0.5, double scale = 0.1) {
  SignalSet out;
  for (int i = 0; i < count; ++i) {
    Matrix f(2, n_feature);
    for (long j = 0; j < f.cols(); ++j)
      for (long r = 0; r < 2; ++r) f(r, j) = base + scale * s.normal();
    out.frames.push_back(std::move(f));
  }
  return out;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("fit_pca recovers exact low-rank structure and orders variance") {
    rng::Stream s(1);
    // Data confined to a 2-D subspace of an 8-dim space.
    Matrix basis = random_matrix(s, 8, 2);
    Matrix coeff = random_matrix(s, 2, 40);
    Matrix data = basis * coeff;
    PcaProjector p = fit_pca(data, 2);
    Matrix projected = p.project(data);
    Matrix restored = (p.axes * projected).colwise() + p.mean;
    CHECK((restored - data).cwiseAbs().maxCoeff() < 1e-8);

    // Orthonormal axes.
    Matrix gram = p.axes.transpose() * p.axes;
    CHECK((gram - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-6);

    // Variance along axes is non-increasing.
    Matrix full_data = random_matrix(s, 6, 60);
    full_data.row(0) *= 5.0;
    PcaProjector q = fit_pca(full_data, 6);
    Matrix proj = q.project(full_data);
    double prev = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 6; ++i) {
      const double var = proj.row(i).array().square().mean();
      CHECK(var <= prev + 1e-12);
      prev = var;
    }

    CHECK_THROWS_AS(fit_pca(random_matrix(s, 70, 50), 64), Error);  // rank bound
  }

  TEST_CASE("mmd: identical sets, kernel limits, and the direct-sum oracle") {
    rng::Stream s(2);
    Matrix a = random_matrix(s, 4, 12);
    CHECK(std::abs(mmd_projected(a, a)) <= 1e-9);

    // Far-apart constant sets: K(a,a)=1, cross-kernels vanish -> MMD -> 2.
    Matrix ca = Matrix::Constant(4, 6, 0.0);
    Matrix cb = Matrix::Constant(4, 6, 100.0);
    CHECK(mmd_projected(ca, cb) == doctest::Approx(2.0).epsilon(1e-9));

    for (std::uint64_t seed : {3u, 4u, 5u}) {
      rng::Stream t(seed);
      Matrix g = random_matrix(t, 5, 9, 0.7);
      Matrix r = random_matrix(t, 5, 14, 0.7);
      CHECK(std::abs(mmd_projected(g, r) - mmd_oracle(g, r)) < 1e-10);
      CHECK(std::abs(mmd_projected(g, r) - mmd_projected(r, g)) < 1e-12);  // symmetry
      CHECK(mmd_projected(g, r) >= -1e-12);                                // positivity
    }
  }

  TEST_CASE("mmd grows with noise scale (rank check over 5 levels)") {
    rng::Stream s(6);
    SignalSet real = random_set(s, 80, 16);
    PcaProjector p = fit_pca(real, 0, 8);
    std::vector<double> values;
    for (double level : {0.0, 0.05, 0.1, 0.2, 0.4}) {
      rng::Stream t(7);
      SignalSet noisy;
      for (const auto& f : real.frames) {
        Matrix g = f;
        for (long j = 0; j < g.cols(); ++j)
          for (long i = 0; i < g.rows(); ++i) g(i, j) += level * t.normal();
        noisy.frames.push_back(std::move(g));
      }
      values.push_back(mmd(noisy, real, 0, p));
    }
    int ordered = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
      if (values[i] >= values[i - 1]) ++ordered;
    CHECK(ordered >= 4);
  }

  TEST_CASE("fid: identical sets, mean shift, and the diagonal closed form") {
    rng::Stream s(8);
    Matrix features = random_matrix(s, 6, 30);
    auto [mu, cov] = feature_moments(features);
    CHECK(std::abs(fid_from_moments(mu, cov, mu, cov)) <= 1e-6);

    Vector d = Vector::LinSpaced(6, -0.5, 1.5);
    CHECK(fid_from_moments(mu, cov, Vector(mu + d), cov) == doctest::Approx(d.squaredNorm()).epsilon(1e-8));

    // Diagonal covariances with equal means: sum of squared sqrt gaps.
    Vector a = Vector::LinSpaced(5, 0.5, 3.0);
    Vector b = Vector::LinSpaced(5, 2.0, 0.25);
    Matrix ca = a.asDiagonal();
    Matrix cb = b.asDiagonal();
    Vector zero = Vector::Zero(5);
    double expect = 0.0;
    for (int i = 0; i < 5; ++i) expect += std::pow(std::sqrt(a[i]) - std::sqrt(b[i]), 2.0);
    CHECK(fid_from_moments(zero, ca, zero, cb) == doctest::Approx(expect).epsilon(1e-10));

    // Symmetry within 1e-6 on random moment pairs.
    Matrix f2 = random_matrix(s, 6, 25);
    auto [mu2, cov2] = feature_moments(f2);
    CHECK(std::abs(fid_from_moments(mu, cov, mu2, cov2) - fid_from_moments(mu2, cov2, mu, cov)) < 1e-6);
  }

  TEST_CASE("feature extractor trains, is deterministic, and round-trips") {
    dataset::SyntheticSpec spec;
    spec.n = 80;
    spec.fpt_index = 20;
    spec.n_feature = 32;
    spec.seed = 9;
    auto lc = std::make_shared<dataset::BearingLifecycle>(dataset::synthesize_lifecycle(spec));
    auto windows = dataset::build_window_set({lc}, 1);
    ExtractorPlan plan;
    plan.epochs = 3;
    plan.batch_size = 32;
    plan.seed = 10;
    FeatureExtractor fx = train_feature_extractor(windows, plan, 0.25);

    SignalSet set = SignalSet::from_windows(windows);
    Matrix f1 = fx.features(set);
    Matrix f2 = fx.features(set);
    CHECK((f1 - f2).cwiseAbs().maxCoeff() == 0.0);
    CHECK(f1.rows() == fx.feature_dim());
    CHECK(f1.cols() == set.count());

    CHECK(fid(set, set, fx) <= 1e-6);  // identical sets

    auto dir = std::filesystem::temp_directory_path() / "cvgan_test_fx";
    std::filesystem::create_directories(dir);
    fx.save(dir / "fx.cvfx");
    FeatureExtractor back = FeatureExtractor::load(dir / "fx.cvfx");
    CHECK(back.fingerprint() == fx.fingerprint());
    CHECK((back.features(set) - f1).cwiseAbs().maxCoeff() == 0.0);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("mad: zero, constant offset, and the direct two-loop oracle") {
    rng::Stream s(11);
    SignalSet real = random_set(s, 20, 8);
    std::vector<char> mask(20, 1);
    auto zero = mad(real, real, mask);
    CHECK(zero[0] == 0.0);
    CHECK(zero[1] == 0.0);

    SignalSet shifted;
    for (const auto& f : real.frames) shifted.frames.push_back(f.array() + 0.1);
    auto off = mad(shifted, real, mask);
    CHECK(off[0] == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(off[1] == doctest::Approx(0.1).epsilon(1e-12));

    SignalSet gen = random_set(s, 20, 8);
    std::vector<char> partial(20, 0);
    for (int i = 0; i < 12; ++i) partial[static_cast<std::size_t>(i)] = 1;
    auto got = mad(gen, real, partial);
    for (int c = 0; c < 2; ++c) {
      double sum = 0.0;
      for (int i = 0; i < 12; ++i)
        sum += std::abs(gen.frames[static_cast<std::size_t>(i)].row(c).mean() -
                        real.frames[static_cast<std::size_t>(i)].row(c).mean());
      CHECK(got[static_cast<std::size_t>(c)] == doctest::Approx(sum / 12.0).epsilon(1e-12));
    }
    std::vector<char> empty(20, 0);
    CHECK_THROWS_AS(mad(gen, real, empty), Error);
  }

  TEST_CASE("mtd, mv, mse and psnr spot values") {
    CHECK(mtd({1.0, 1.0, 1.0, 1.0}) == 0.0);
    CHECK(mtd({0.0, 1.0, 0.0, 1.0, 0.0}) == doctest::Approx(1.0));
    CHECK(mv({2.0, 2.0, 2.0, 2.0, 2.0}, 3) == 0.0);
    CHECK(mse_rul({1.0, 2.0}, {1.0, 2.0}) == 0.0);
    CHECK(mse_rul({0.0, 0.0}, {1.0, 3.0}) == doctest::Approx(5.0));

    // PSNR: error equal to MAX^2 gives exactly 0 dB.
    SignalSet gen, real;
    gen.frames.push_back(Matrix::Constant(2, 4, 2.0));
    real.frames.push_back(Matrix::Constant(2, 4, 0.0));
    PsnrResult p = psnr(gen, real);
    REQUIRE(p.db.has_value());
    CHECK(*p.db == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(p.max_value == 2.0);

    PsnrResult undef = psnr(gen, gen);
    CHECK_FALSE(undef.db.has_value());  // zero error: undefined, not infinite
  }

  TEST_CASE("rul scores: zero error, exponential branches, asymmetry") {
    RulScores zero = rul_scores({0.2, 0.5}, {0.2, 0.5});
    CHECK(zero.rmse == 0.0);
    CHECK(zero.mae == 0.0);
    CHECK(zero.score == doctest::Approx(0.0).epsilon(1e-12));

    // E = truth - pred = 10 -> exp(1)-1; E = -13 -> exp(1)-1.
    RulScores late = rul_scores({0.0}, {10.0});
    CHECK(late.score == doctest::Approx(std::exp(1.0) - 1.0).epsilon(1e-9));
    RulScores early = rul_scores({13.0}, {0.0});
    CHECK(early.score == doctest::Approx(std::exp(1.0) - 1.0).epsilon(1e-9));

    // Late predictions (positive E) hurt more than early ones, pointwise.
    for (double e : {0.5, 2.0, 7.0, 20.0}) {
      const double late_pen = rul_scores({0.0}, {e}).score;
      const double early_pen = rul_scores({e}, {0.0}).score;
      CHECK(late_pen > early_pen);
    }

    CHECK_THROWS_AS(rul_scores({1.0}, {1.0, 2.0}), Error);
  }

  TEST_CASE("compare_sets assembles a report with provenance") {
    rng::Stream s(12);
    SignalSet real = random_set(s, 40, 16);
    SignalSet gen = random_set(s, 40, 16);
    PcaProjector ph = fit_pca(real, 0, 8);
    PcaProjector pv = fit_pca(real, 1, 8);
    std::vector<char> mask(40, 1);
    CompareOptions opts;
    opts.normal_phase_mask = &mask;
    opts.paired = true;
    MetricReport rep = compare_sets(gen, real, ph, pv, nullptr, opts);
    CHECK(rep.horizontal_mmd.has_value());
    CHECK(rep.vertical_mmd.has_value());
    CHECK(rep.mad_h.has_value());
    CHECK(rep.psnr_db.has_value());
    CHECK_FALSE(rep.fid_value.has_value());  // no extractor provided
    CHECK(rep.projector_fingerprint_h != rep.projector_fingerprint_v);
    CHECK(rep.gen_count == 40);
    const std::string tsv = rep.tsv_row("self");
    CHECK(tsv.find("undefined") != std::string::npos);  // fid column

    // No normal-phase samples at all: MAD reported undefined, not an error.
    std::vector<char> none(40, 0);
    opts.normal_phase_mask = &none;
    MetricReport rep2 = compare_sets(gen, real, ph, pv, nullptr, opts);
    CHECK_FALSE(rep2.mad_h.has_value());
    CHECK(rep2.psnr_db.has_value());
  }
}
