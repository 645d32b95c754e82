#include <doctest.h>

#include "cvgan/argen.hpp"

#include <numeric>

using namespace cvgan;
using namespace cvgan::argen;

namespace {

nets::ModelBundle tiny_model(nets::Variant variant, int k, int n_feature, std::uint64_t seed,
                             int io_channels = 2) {
  nets::BuildOptions o;
  o.scale_multiplier = 0.125;
  o.seed = seed;
  o.io_channels = io_channels;
  return nets::build_model(variant, k, n_feature, o);
}

std::shared_ptr<dataset::BearingLifecycle> synthetic(int n, int fpt, int n_feature, std::uint64_t seed) {
  dataset::SyntheticSpec spec;
  spec.n = n;
  spec.fpt_index = fpt;
  spec.n_feature = n_feature;
  spec.noise_scale = 0.05;
  spec.seed = seed;
  return std::make_shared<dataset::BearingLifecycle>(dataset::synthesize_lifecycle(spec));
}

}  // namespace

TEST_SUITE("argen") {
  TEST_CASE("plan_hi_schedule endpoints and quantization") {
    HiSchedule s = plan_hi_schedule(1000, 300);
    CHECK(s.length == 1000);
    for (int t = 0; t < 300; ++t) CHECK(s.classes[static_cast<std::size_t>(t)] == 31);
    CHECK(s.classes[999] == 0);
    CHECK(s.hi[999] == 0.0);

    HiSchedule tiny = plan_hi_schedule(4, 1);
    CHECK(tiny.hi[0] == doctest::Approx(1.0));
    CHECK(tiny.hi[1] == doctest::Approx(2.0 / 3.0));
    CHECK(tiny.hi[2] == doctest::Approx(1.0 / 3.0));
    CHECK(tiny.hi[3] == doctest::Approx(0.0));
    CHECK(tiny.classes == std::vector<int>{31, 21, 10, 0});

    CHECK_THROWS_AS(plan_hi_schedule(10, 10), Error);
    CHECK_THROWS_AS(plan_hi_schedule(10, 0), Error);
  }

  TEST_CASE("init_history samples a k-frame buffer in range") {
    nets::ModelBundle initial = tiny_model(nets::Variant::VAE, 15, 32, 3, 30);
    HistoryBuffer buf = init_history(initial, 77);
    CHECK(buf.k() == 15);
    CHECK(buf.data().rows() == 30);
    CHECK(buf.data().cols() == 32);
    CHECK(buf.data().minCoeff() >= 0.0);
    CHECK(buf.data().maxCoeff() <= 1.0);

    HistoryBuffer again = init_history(initial, 77);
    CHECK((buf.data() - again.data()).cwiseAbs().maxCoeff() == 0.0);
    HistoryBuffer other = init_history(initial, 78);
    CHECK((buf.data() - other.data()).cwiseAbs().maxCoeff() > 0.0);
  }

  TEST_CASE("ar_generate rollout: length, buffer FIFO, determinism, truncation") {
    const int k = 5, N = 32;
    nets::ModelBundle gen = tiny_model(nets::Variant::CVGAN, k, N, 4);
    nets::ModelBundle initial = tiny_model(nets::Variant::VAE, k, N, 5, 2 * k);
    HiSchedule sched = plan_hi_schedule(60, 20);

    std::vector<Matrix> seen;
    long buffer_rows_bad = 0;
    GeneratedLifecycle life = ar_generate(gen, &initial, sched, 99,
                                          [&](int t, const HistoryBuffer* buf, const Matrix& frame) {
                                            REQUIRE(buf != nullptr);
                                            if (buf->data().rows() != 2 * k) ++buffer_rows_bad;
                                            // after the push, the newest frame is the last buffer row pair
                                            CHECK((buf->frame(k - 1) - frame).cwiseAbs().maxCoeff() == 0.0);
                                            seen.push_back(frame);
                                            (void)t;
                                          });
    CHECK(life.series.size() == 60);
    CHECK(buffer_rows_bad == 0);
    for (const auto& f : life.series) {
      CHECK(f.rows() == 2);
      CHECK(f.cols() == N);
    }

    // FIFO: after step t the buffer holds series[t-k+1..t].
    GeneratedLifecycle relife = ar_generate(gen, &initial, sched, 99,
                                            [&](int t, const HistoryBuffer* buf, const Matrix&) {
                                              if (t >= k - 1) {
                                                for (int i = 0; i < k; ++i) {
                                                  const auto& expect = seen[static_cast<std::size_t>(t - k + 1 + i)];
                                                  CHECK((buf->frame(i) - expect).cwiseAbs().maxCoeff() == 0.0);
                                                }
                                              }
                                            });

    // Identical seeds: identical lifecycles.
    for (std::size_t t = 0; t < life.series.size(); ++t)
      CHECK((life.series[t] - relife.series[t]).cwiseAbs().maxCoeff() == 0.0);

    // Prefix truncation: a shorter schedule with the same seed reproduces the prefix.
    HiSchedule sched25 = plan_hi_schedule(60, 20);
    sched25.length = 25;
    sched25.hi.resize(25);
    sched25.classes.resize(25);
    sched25.classes.back() = 0;  // keep the schedule invariant satisfied
    sched25.hi.back() = 0.0;
    GeneratedLifecycle prefix = ar_generate(gen, &initial, sched25, 99);
    for (std::size_t t = 0; t + 1 < prefix.series.size(); ++t)  // last step differs by class
      CHECK((prefix.series[t] - life.series[t]).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("nar_generate yields one signal per window, reproducibly") {
    auto lc = synthetic(100, 30, 32, 6);
    auto windows = dataset::build_window_set({lc}, 15);
    CHECK(windows.windows.size() == 85);
    nets::ModelBundle gen = tiny_model(nets::Variant::CVGAN, 15, 32, 7);
    auto out1 = nar_generate(gen, windows, 42);
    CHECK(out1.size() == 85);
    auto out2 = nar_generate(gen, windows, 42);
    for (std::size_t i = 0; i < out1.size(); ++i)
      CHECK((out1[i] - out2[i]).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("history-free variant: AR equals NAR bitwise on the same class sequence") {
    const int k = 5, N = 32;
    auto lc = synthetic(60, 20, N, 8);
    auto windows = dataset::build_window_set({lc}, k);
    nets::ModelBundle no_h = tiny_model(nets::Variant::CVGAN_no_H, k, N, 9);

    HiSchedule sched = schedule_from_lifecycle(*lc, k);
    CHECK(sched.length == static_cast<int>(windows.windows.size()));
    for (std::size_t i = 0; i < windows.windows.size(); ++i)
      CHECK(sched.classes[i] == windows.windows[i].hi_class());

    GeneratedLifecycle ar = ar_generate(no_h, nullptr, sched, 1234);
    std::vector<Matrix> nar = nar_generate(no_h, windows, 1234);
    REQUIRE(ar.series.size() == nar.size());
    for (std::size_t i = 0; i < nar.size(); ++i)
      CHECK((ar.series[i] - nar[i]).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("unconditional variant: AR equals NAR bitwise as well") {
    const int k = 5, N = 32;
    auto lc = synthetic(60, 20, N, 21);
    auto windows = dataset::build_window_set({lc}, k);
    nets::ModelBundle gan = tiny_model(nets::Variant::GAN, k, N, 22);
    HiSchedule sched = schedule_from_lifecycle(*lc, k);
    GeneratedLifecycle ar = ar_generate(gan, nullptr, sched, 77);
    std::vector<Matrix> nar = nar_generate(gan, windows, 77);
    REQUIRE(ar.series.size() == nar.size());
    for (std::size_t i = 0; i < nar.size(); ++i)
      CHECK((ar.series[i] - nar[i]).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("generated lifecycles re-enter the dataset container as synthetic") {
    const int k = 5, N = 32;
    nets::ModelBundle gen = tiny_model(nets::Variant::CVGAN, k, N, 10);
    nets::ModelBundle initial = tiny_model(nets::Variant::VAE, k, N, 11, 2 * k);
    GeneratedLifecycle life = ar_generate(gen, &initial, plan_hi_schedule(40, 10), 5);
    auto lc = life.to_lifecycle("gen-1");
    CHECK(lc->synthetic);
    CHECK(lc->n() == 40);
    CHECK(lc->fpt_index == 9);
    CHECK(lc->provenance.at("kind") == "generated");
    auto windows = dataset::build_window_set({lc}, k);
    CHECK(windows.windows.size() == 35);
  }

  TEST_CASE("rms_profile values and the post-FPT trend oracle") {
    std::vector<Matrix> constant{Matrix::Constant(2, 8, -0.5), Matrix::Constant(2, 8, -0.5)};
    Matrix rms = rms_profile(constant);
    CHECK(rms.rows() == 2);
    CHECK(rms.cols() == 2);
    CHECK(rms(0, 0) == doctest::Approx(0.5));
    std::vector<Matrix> zero{Matrix::Zero(2, 8)};
    CHECK(rms_profile(zero)(0, 0) == 0.0);

    // Monte-Carlo oracle over 200 seeds: rank correlation of the post-FPT
    // per-step mean RMS with time is positive.
    const int n = 40, fpt = 10;
    std::vector<double> mean_rms(n, 0.0);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      auto lc = synthetic(n, fpt, 16, seed);
      Matrix r = rms_profile(lc->series);
      for (int t = 0; t < n; ++t) mean_rms[static_cast<std::size_t>(t)] += r(0, t);
    }
    std::vector<std::size_t> order(static_cast<std::size_t>(n - fpt - 1));
    std::iota(order.begin(), order.end(), 0);
    double concordant = 0.0, total = 0.0;
    for (std::size_t a = 0; a < order.size(); ++a)
      for (std::size_t b = a + 1; b < order.size(); ++b) {
        total += 1.0;
        if (mean_rms[fpt + 1 + b] > mean_rms[fpt + 1 + a]) concordant += 1.0;
      }
    const double kendall = 2.0 * concordant / total - 1.0;
    CHECK(kendall > 0.0);
  }
}
