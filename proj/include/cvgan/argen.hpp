#pragma once

#include "cvgan/dataset.hpp"
#include "cvgan/nets.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace cvgan::argen {

/// Per-step health-indicator plan driving a rollout.
struct HiSchedule {
  int length = 1000;
  int fpt_step = 300;
  std::vector<double> hi;
  std::vector<int> classes;

  void validate() const {
    require(length >= 2 && static_cast<int>(classes.size()) == length && hi.size() == classes.size(),
            ErrorKind::Contract, "schedule: length mismatch");
    for (int t = 0; t < fpt_step && t < length; ++t)
      require(classes[static_cast<std::size_t>(t)] == dataset::kHiClasses - 1, ErrorKind::Contract,
              "schedule: classes must be 31 before the FPT step");
    for (std::size_t t = 1; t < classes.size(); ++t)
      require(classes[t] <= classes[t - 1], ErrorKind::Contract, "schedule: classes must be non-increasing");
    require(classes.back() == 0, ErrorKind::Contract, "schedule: final class must be 0");
  }
};

/// Healthy plateau through fpt_step-1, then linear decay to 0 at the end.
inline HiSchedule plan_hi_schedule(int length = 1000, int fpt_step = 300) {
  require(fpt_step > 0 && fpt_step < length, ErrorKind::Config,
          "plan_hi_schedule: need 0 < fpt_step < length");
  HiSchedule s;
  s.length = length;
  s.fpt_step = fpt_step;
  s.hi.resize(static_cast<std::size_t>(length));
  s.classes.resize(static_cast<std::size_t>(length));
  for (int t = 0; t < length; ++t) {
    double h = t <= fpt_step - 1
                   ? 1.0
                   : 1.0 - static_cast<double>(t - fpt_step + 1) / static_cast<double>(length - fpt_step);
    if (t == length - 1) h = 0.0;
    s.hi[static_cast<std::size_t>(t)] = h;
    s.classes[static_cast<std::size_t>(t)] = dataset::quantize_hi(h);
  }
  s.validate();
  return s;
}

/// Schedule matching a real lifecycle's labeled region (positions k..n-1),
/// so AR and NAR rollouts see the same class sequence.
inline HiSchedule schedule_from_lifecycle(const dataset::BearingLifecycle& lc, int k) {
  require(lc.n() > k, ErrorKind::Config, "schedule_from_lifecycle: lifecycle shorter than k");
  require(lc.fpt_index >= k, ErrorKind::Config,
          "schedule_from_lifecycle: FPT must lie at or after the first labeled position");
  HiSchedule s;
  s.length = lc.n() - k;
  s.fpt_step = lc.fpt_index + 1 - k;
  s.hi.assign(lc.hi.begin() + k, lc.hi.end());
  s.classes.assign(lc.hi_class.begin() + k, lc.hi_class.end());
  s.validate();
  return s;
}

/// FIFO window of the last k generated frames, stored as 2k channels.
class HistoryBuffer {
 public:
  HistoryBuffer(int k, int n_feature) : k_(k), n_feature_(n_feature), rows_(Matrix::Zero(2 * k, n_feature)) {}

  static HistoryBuffer from_window(const Matrix& window, int k) {
    require(window.rows() == 2 * k, ErrorKind::Contract, "history buffer: window must have 2k rows");
    HistoryBuffer b(k, static_cast<int>(window.cols()));
    b.rows_ = window;
    return b;
  }

  /// Drop the oldest frame, append the new one.
  void push(const Matrix& frame) {
    require(frame.rows() == 2 && frame.cols() == n_feature_, ErrorKind::Contract,
            "history buffer: frame must be 2 x n_feature");
    Matrix next(2 * k_, n_feature_);
    next.topRows(2 * (k_ - 1)) = rows_.bottomRows(2 * (k_ - 1));
    next.bottomRows(2) = frame;
    rows_ = std::move(next);
    ++discarded_;
  }

  const Matrix& data() const { return rows_; }
  Matrix frame(int i) const { return rows_.middleRows(2 * i, 2); }
  int k() const { return k_; }
  long total_discarded() const { return discarded_; }

 private:
  int k_;
  int n_feature_;
  Matrix rows_;
  long discarded_ = 0;
};

struct GeneratedLifecycle {
  std::vector<Matrix> series;  // each 2 x n_feature
  HiSchedule schedule;
  io::json provenance = io::json::object();

  /// View as a dataset lifecycle (synthetic, full provenance) so every
  /// downstream consumer treats generated and real data alike.
  std::shared_ptr<dataset::BearingLifecycle> to_lifecycle(const std::string& id) const {
    auto lc = std::make_shared<dataset::BearingLifecycle>();
    lc->bearing_id = id;
    lc->series = series;
    lc->fpt_index = schedule.fpt_step - 1;
    lc->hi = schedule.hi;
    lc->hi_class = schedule.classes;
    lc->synthetic = true;
    lc->provenance = provenance;
    lc->provenance["kind"] = "generated";
    lc->validate();
    return lc;
  }
};

/// Sample the bootstrap history window from the initial generator.
inline HistoryBuffer init_history(nets::ModelBundle& initial_generator, std::uint64_t seed) {
  const auto& cfg = initial_generator.config();
  require(cfg.io_channels % 2 == 0 && cfg.io_channels >= 2, ErrorKind::Contract,
          "init_history: initial generator must emit 2k channels");
  const int k = cfg.io_channels / 2;
  rng::CounterNormal noise(rng::derive(seed, "init-history"));
  Vector z = noise.draw(0, cfg.latent_dim);
  Matrix window = initial_generator.generate(z, nullptr);
  require(window.minCoeff() >= 0.0 && window.maxCoeff() <= 1.0, ErrorKind::Contract,
          "init_history: generated window violates the [0,1] output contract");
  return HistoryBuffer::from_window(window, k);
}

using StepObserver = std::function<void(int step, const HistoryBuffer* buffer, const Matrix& frame)>;

/// Autoregressive rollout. Only the generator (and the initial generator
/// for the seed window) is invoked; step t consumes the schedule class and
/// the buffer of the model's own last k frames.
inline GeneratedLifecycle ar_generate(nets::ModelBundle& generator, nets::ModelBundle* initial_generator,
                                      const HiSchedule& schedule, std::uint64_t seed,
                                      const StepObserver& observer = nullptr) {
  schedule.validate();
  const auto& cfg = generator.config();
  std::optional<HistoryBuffer> buffer;
  if (cfg.with_history()) {
    require(initial_generator != nullptr, ErrorKind::Contract,
            "ar_generate: history-conditional variant needs an initial generator");
    buffer = init_history(*initial_generator, seed);
    require(buffer->k() == cfg.k, ErrorKind::Contract, "ar_generate: initial window k mismatch");
  }
  rng::CounterNormal noise(rng::derive(seed, "rollout"));
  GeneratedLifecycle out;
  out.schedule = schedule;
  out.provenance = {{"seed", seed}, {"variant", nets::to_string(cfg.variant)}};
  out.series.reserve(static_cast<std::size_t>(schedule.length));
  for (int t = 0; t < schedule.length; ++t) {
    Vector z = noise.draw(static_cast<std::uint64_t>(t), cfg.latent_dim);
    Matrix frame;
    if (cfg.conditional()) {
      nets::ConditionBundle cond;
      cond.hi_class = schedule.classes[static_cast<std::size_t>(t)];
      if (buffer) cond.history = buffer->data();
      frame = generator.generate(z, &cond);
    } else {
      frame = generator.generate(z, nullptr);
    }
    require(frame.allFinite(), ErrorKind::Numeric,
            "ar_generate: non-finite output at step " + std::to_string(t));
    if (buffer) buffer->push(frame);
    if (observer) observer(t, buffer ? &*buffer : nullptr, frame);
    out.series.push_back(std::move(frame));
  }
  return out;
}

/// Non-autoregressive generation: one signal per window, conditioned on
/// the real history and real class. Noise indexing matches ar_generate so
/// history-free variants produce identical outputs for identical class
/// sequences.
inline std::vector<Matrix> nar_generate(nets::ModelBundle& generator, const dataset::WindowSet& windows,
                                        std::uint64_t seed) {
  const auto& cfg = generator.config();
  rng::CounterNormal noise(rng::derive(seed, "rollout"));
  std::vector<Matrix> out;
  out.reserve(windows.windows.size());
  for (std::size_t i = 0; i < windows.windows.size(); ++i) {
    const auto& w = windows.windows[i];
    Vector z = noise.draw(i, cfg.latent_dim);
    Matrix frame;
    if (cfg.conditional()) {
      nets::ConditionBundle cond;
      cond.hi_class = w.hi_class();
      if (cfg.with_history()) cond.history = w.x2();
      frame = generator.generate(z, &cond);
    } else {
      frame = generator.generate(z, nullptr);
    }
    require(frame.allFinite(), ErrorKind::Numeric,
            "nar_generate: non-finite output for window " + std::to_string(i));
    out.push_back(std::move(frame));
  }
  return out;
}

/// Per-step per-channel RMS of a series; rows = channels, cols = steps.
inline Matrix rms_profile(const std::vector<Matrix>& series) {
  require(!series.empty(), ErrorKind::Contract, "rms_profile: empty series");
  const long channels = series.front().rows();
  Matrix out(channels, static_cast<long>(series.size()));
  for (std::size_t t = 0; t < series.size(); ++t)
    for (long c = 0; c < channels; ++c)
      out(c, static_cast<long>(t)) = std::sqrt(series[t].row(c).array().square().mean());
  return out;
}

}  // namespace cvgan::argen
