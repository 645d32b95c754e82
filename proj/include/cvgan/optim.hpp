#pragma once

#include "cvgan/nn.hpp"

#include <cmath>
#include <vector>

namespace cvgan::optim {

/// AdamW with decoupled weight decay. One instance per parameter group so
/// generator/encoder and critic learning rates stay independent.
class AdamW {
 public:
  struct Options {
    double lr = 6e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 0.0;  // 0 disables gradient clipping
  };

  AdamW() = default;
  AdamW(std::vector<nn::Param*> params, Options opts) : params_(std::move(params)), opts_(opts) {}

  void zero_grad() {
    for (auto* p : params_) p->var.zero_grad();
  }

  void step() {
    ++t_;
    if (opts_.clip_norm > 0.0) {
      double sq = 0.0;
      for (auto* p : params_) sq += p->var.grad().squaredNorm();
      const double norm = std::sqrt(sq);
      if (norm > opts_.clip_norm) {
        const double s = opts_.clip_norm / norm;
        for (auto* p : params_) const_cast<Matrix&>(p->var.grad()) *= s;
      }
    }
    const double bc1 = 1.0 - std::pow(opts_.beta1, t_);
    const double bc2 = 1.0 - std::pow(opts_.beta2, t_);
    for (auto* p : params_) {
      const Matrix& g = p->var.grad();
      p->m = opts_.beta1 * p->m + (1.0 - opts_.beta1) * g;
      p->v = opts_.beta2 * p->v + (1.0 - opts_.beta2) * Matrix(g.cwiseProduct(g));
      Matrix mhat = p->m / bc1;
      Matrix vhat = p->v / bc2;
      p->value() -= opts_.lr * Matrix(mhat.array() / (vhat.array().sqrt() + opts_.eps)).matrix();
      if (opts_.weight_decay > 0.0) p->value() -= opts_.lr * opts_.weight_decay * p->value();
    }
  }

  const std::vector<nn::Param*>& params() const { return params_; }

 private:
  std::vector<nn::Param*> params_;
  Options opts_;
  long t_ = 0;
};

}  // namespace cvgan::optim
