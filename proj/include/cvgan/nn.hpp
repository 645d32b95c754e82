#pragma once

#include "cvgan/ad.hpp"
#include "cvgan/rng.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace cvgan::nn {

/// Trainable tensor: an autodiff leaf plus AdamW state.
struct Param {
  ad::Var var;
  Matrix m, v;  // first/second moment estimates
  std::string name;

  Param() = default;
  Param(std::string n, Matrix init) : var(ad::Var::leaf(std::move(init), true)), name(std::move(n)) {
    m = Matrix::Zero(var.rows(), var.cols());
    v = Matrix::Zero(var.rows(), var.cols());
  }

  const Matrix& value() const { return var.value(); }
  Matrix& value() { return var.mutable_value(); }
};

/// Forward-pass context: training toggles batch-norm statistics and dropout.
struct Mode {
  bool training = false;
  rng::Stream* stream = nullptr;  // required when training layers with dropout
};

/// A batch of 1-D multichannel maps laid out as (channels, batch*len),
/// column index b*len + l.
struct Feat {
  ad::Var v;
  int batch = 0;
  int len = 0;

  long channels() const { return v.rows(); }
};

inline Matrix he_normal(rng::Stream& s, long rows, long cols, double fan_in) {
  const double std = std::sqrt(2.0 / fan_in);
  Matrix w(rows, cols);
  for (long j = 0; j < cols; ++j)
    for (long i = 0; i < rows; ++i) w(i, j) = s.normal() * std;
  return w;
}

// ---- convolution ----

class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(const std::string& name, int in_ch, int out_ch, int kernel, int stride, int pad, rng::Stream& s)
      : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride), pad_(pad) {
    w_ = Param(name + ".w", he_normal(s, out_ch, static_cast<long>(in_ch) * kernel, in_ch * kernel));
    b_ = Param(name + ".b", Matrix::Zero(out_ch, 1));
  }

  Feat forward(const Feat& x) const {
    require(x.channels() == in_ch_, ErrorKind::Contract, "conv1d: channel mismatch");
    const int B = x.batch, Lin = x.len;
    const int Lout = (Lin + 2 * pad_ - kernel_) / stride_ + 1;
    require(Lout >= 1, ErrorKind::Contract, "conv1d: output length < 1");
    Matrix cols = Matrix::Zero(static_cast<long>(in_ch_) * kernel_, static_cast<long>(B) * Lout);
    const Matrix& xv = x.v.value();
    for (int b = 0; b < B; ++b)
      for (int lo = 0; lo < Lout; ++lo)
        for (int k = 0; k < kernel_; ++k) {
          const int li = lo * stride_ - pad_ + k;
          if (li < 0 || li >= Lin) continue;
          for (int c = 0; c < in_ch_; ++c)
            cols(static_cast<long>(c) * kernel_ + k, static_cast<long>(b) * Lout + lo) =
                xv(c, static_cast<long>(b) * Lin + li);
        }
    Matrix out = (w_.value() * cols).colwise() + Eigen::VectorXd(b_.value().col(0));
    auto px = x.v.node();
    auto pw = w_.var.node();
    auto pb = b_.var.node();
    const int in_ch = in_ch_, kernel = kernel_, stride = stride_, pad = pad_;
    ad::Var y = ad::detail::make_op(
        std::move(out), {px, pw, pb}, [px, pw, pb, cols, B, Lin, Lout, in_ch, kernel, stride, pad](ad::Node& n) {
          if (pw->needs_grad) ad::detail::accum(pw, n.grad * cols.transpose());
          if (pb->needs_grad) ad::detail::accum(pb, n.grad.rowwise().sum());
          if (px->needs_grad) {
            Matrix dcols = pw->val.transpose() * n.grad;
            px->ensure_grad();
            for (int b = 0; b < B; ++b)
              for (int lo = 0; lo < Lout; ++lo)
                for (int k = 0; k < kernel; ++k) {
                  const int li = lo * stride - pad + k;
                  if (li < 0 || li >= Lin) continue;
                  for (int c = 0; c < in_ch; ++c)
                    px->grad(c, static_cast<long>(b) * Lin + li) +=
                        dcols(static_cast<long>(c) * kernel + k, static_cast<long>(b) * Lout + lo);
                }
          }
        });
    return {y, B, Lout};
  }

  std::vector<Param*> params() { return {&w_, &b_}; }

 private:
  int in_ch_ = 0, out_ch_ = 0, kernel_ = 0, stride_ = 0, pad_ = 0;
  Param w_, b_;
};

class ConvTranspose1d {
 public:
  ConvTranspose1d() = default;
  ConvTranspose1d(const std::string& name, int in_ch, int out_ch, int kernel, int stride, int pad,
                  int out_pad, rng::Stream& s)
      : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride), pad_(pad), out_pad_(out_pad) {
    w_ = Param(name + ".w", he_normal(s, in_ch, static_cast<long>(out_ch) * kernel, in_ch * kernel));
    b_ = Param(name + ".b", Matrix::Zero(out_ch, 1));
  }

  Feat forward(const Feat& x) const {
    require(x.channels() == in_ch_, ErrorKind::Contract, "tconv1d: channel mismatch");
    const int B = x.batch, Lin = x.len;
    const int Lout = (Lin - 1) * stride_ - 2 * pad_ + kernel_ + out_pad_;
    require(Lout >= 1, ErrorKind::Contract, "tconv1d: output length < 1");
    Matrix cols = w_.value().transpose() * x.v.value();  // (out_ch*K, B*Lin)
    Matrix out = Matrix::Zero(out_ch_, static_cast<long>(B) * Lout);
    for (int b = 0; b < B; ++b)
      for (int li = 0; li < Lin; ++li)
        for (int k = 0; k < kernel_; ++k) {
          const int lo = li * stride_ - pad_ + k;
          if (lo < 0 || lo >= Lout) continue;
          for (int o = 0; o < out_ch_; ++o)
            out(o, static_cast<long>(b) * Lout + lo) +=
                cols(static_cast<long>(o) * kernel_ + k, static_cast<long>(b) * Lin + li);
        }
    out.colwise() += Eigen::VectorXd(b_.value().col(0));
    auto px = x.v.node();
    auto pw = w_.var.node();
    auto pb = b_.var.node();
    const int out_ch = out_ch_, kernel = kernel_, stride = stride_, pad = pad_;
    ad::Var y = ad::detail::make_op(
        std::move(out), {px, pw, pb}, [px, pw, pb, B, Lin, Lout, out_ch, kernel, stride, pad](ad::Node& n) {
          // Gather the output grad back into column space shared by dW and dX.
          Matrix dcols = Matrix::Zero(static_cast<long>(out_ch) * kernel, static_cast<long>(B) * Lin);
          for (int b = 0; b < B; ++b)
            for (int li = 0; li < Lin; ++li)
              for (int k = 0; k < kernel; ++k) {
                const int lo = li * stride - pad + k;
                if (lo < 0 || lo >= Lout) continue;
                for (int o = 0; o < out_ch; ++o)
                  dcols(static_cast<long>(o) * kernel + k, static_cast<long>(b) * Lin + li) =
                      n.grad(o, static_cast<long>(b) * Lout + lo);
              }
          if (pw->needs_grad) ad::detail::accum(pw, px->val * dcols.transpose());
          if (pb->needs_grad) ad::detail::accum(pb, n.grad.rowwise().sum());
          if (px->needs_grad) ad::detail::accum(px, pw->val * dcols);
        });
    return {y, B, Lout};
  }

  std::vector<Param*> params() { return {&w_, &b_}; }

 private:
  int in_ch_ = 0, out_ch_ = 0, kernel_ = 0, stride_ = 0, pad_ = 0, out_pad_ = 0;
  Param w_, b_;
};

// ---- batch normalization over (batch, length) per channel ----

class BatchNorm1d {
 public:
  BatchNorm1d() = default;
  BatchNorm1d(const std::string& name, int channels, double eps = 1e-5, double momentum = 0.1)
      : channels_(channels), eps_(eps), momentum_(momentum) {
    gamma_ = Param(name + ".gamma", Matrix::Ones(channels, 1));
    beta_ = Param(name + ".beta", Matrix::Zero(channels, 1));
    running_mean_ = Matrix::Zero(channels, 1);
    running_var_ = Matrix::Ones(channels, 1);
  }

  Feat forward(const Feat& x, const Mode& mode) {
    require(x.channels() == channels_, ErrorKind::Contract, "batchnorm: channel mismatch");
    const long N = x.v.cols();
    Eigen::VectorXd mu(channels_), var(channels_);
    if (mode.training) {
      mu = x.v.value().rowwise().mean();
      var = (x.v.value().colwise() - mu).array().square().rowwise().mean();
      running_mean_ = (1.0 - momentum_) * running_mean_ + momentum_ * Matrix(mu);
      const double unbias = N > 1 ? static_cast<double>(N) / static_cast<double>(N - 1) : 1.0;
      running_var_ = (1.0 - momentum_) * running_var_ + momentum_ * Matrix(var * unbias);
    } else {
      mu = running_mean_.col(0);
      var = running_var_.col(0);
    }
    Eigen::VectorXd inv_std = (var.array() + eps_).rsqrt();
    Matrix xhat = (x.v.value().colwise() - mu).array().colwise() * inv_std.array();
    Matrix out = (xhat.array().colwise() * gamma_.value().col(0).array()).colwise() +
                 beta_.value().col(0).array();
    auto px = x.v.node();
    auto pg = gamma_.var.node();
    auto pb = beta_.var.node();
    const bool training = mode.training;
    ad::Var y = ad::detail::make_op(std::move(out), {px, pg, pb}, [px, pg, pb, xhat, inv_std, training](ad::Node& n) {
      if (pg->needs_grad) ad::detail::accum(pg, n.grad.cwiseProduct(xhat).rowwise().sum());
      if (pb->needs_grad) ad::detail::accum(pb, n.grad.rowwise().sum());
      if (px->needs_grad) {
        Matrix dxhat = n.grad.array().colwise() * pg->val.col(0).array();
        Matrix dx;
        if (training) {
          Eigen::VectorXd mean_d = dxhat.rowwise().mean();
          Eigen::VectorXd mean_dx = dxhat.cwiseProduct(xhat).rowwise().mean();
          dx = ((dxhat.colwise() - mean_d) - (xhat.array().colwise() * mean_dx.array()).matrix()).array().colwise() *
               inv_std.array();
        } else {
          dx = dxhat.array().colwise() * inv_std.array();
        }
        ad::detail::accum(px, dx);
      }
    });
    return {y, x.batch, x.len};
  }

  std::vector<Param*> params() { return {&gamma_, &beta_}; }
  Matrix& running_mean() { return running_mean_; }
  Matrix& running_var() { return running_var_; }

 private:
  int channels_ = 0;
  double eps_ = 1e-5, momentum_ = 0.1;
  Param gamma_, beta_;
  Matrix running_mean_, running_var_;
};

// ---- misc layers ----

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, rng::Stream& s) {
    w_ = Param(name + ".w", he_normal(s, out, in, in));
    b_ = Param(name + ".b", Matrix::Zero(out, 1));
  }

  ad::Var forward(const ad::Var& x) const { return ad::add_colvec(ad::matmul(w_.var, x), b_.var); }

  std::vector<Param*> params() { return {&w_, &b_}; }

 private:
  Param w_, b_;
};

/// One trainable row per class; forward emits a single-channel map of the
/// row for each sample in the batch.
class Embedding {
 public:
  Embedding() = default;
  Embedding(const std::string& name, int classes, int len, rng::Stream& s) : classes_(classes), len_(len) {
    Matrix t(classes, len);
    for (long j = 0; j < t.cols(); ++j)
      for (long i = 0; i < t.rows(); ++i) t(i, j) = s.normal();
    table_ = Param(name + ".table", std::move(t));
  }

  Feat forward(const std::vector<int>& labels) const {
    const int B = static_cast<int>(labels.size());
    Matrix out(1, static_cast<long>(B) * len_);
    for (int b = 0; b < B; ++b) {
      const int y = labels[static_cast<std::size_t>(b)];
      require(y >= 0 && y < classes_, ErrorKind::Contract, "embedding: class out of range");
      out.block(0, static_cast<long>(b) * len_, 1, len_) = table_.value().row(y);
    }
    auto pt = table_.var.node();
    const int len = len_;
    ad::Var y = ad::detail::make_op(std::move(out), {pt}, [pt, labels, len](ad::Node& n) {
      if (!pt->needs_grad) return;
      pt->ensure_grad();
      for (std::size_t b = 0; b < labels.size(); ++b)
        pt->grad.row(labels[b]) += n.grad.block(0, static_cast<long>(b) * len, 1, len);
    });
    return {y, B, len_};
  }

  /// Direct row access for single-class lookups.
  Eigen::RowVectorXd row(int cls) const {
    require(cls >= 0 && cls < classes_, ErrorKind::Contract, "embedding: class out of range");
    return table_.value().row(cls);
  }

  int length() const { return len_; }
  std::vector<Param*> params() { return {&table_}; }

 private:
  int classes_ = 0, len_ = 0;
  Param table_;
};

class Dropout {
 public:
  Dropout() = default;
  explicit Dropout(double rate) : rate_(rate) {}

  ad::Var forward(const ad::Var& x, const Mode& mode) const {
    if (!mode.training || rate_ <= 0.0) return x;
    require(mode.stream != nullptr, ErrorKind::Contract, "dropout: training mode needs an rng stream");
    const double keep = 1.0 - rate_;
    Matrix mask(x.rows(), x.cols());
    for (long j = 0; j < mask.cols(); ++j)
      for (long i = 0; i < mask.rows(); ++i)
        mask(i, j) = (mode.stream->uniform() < keep) ? 1.0 / keep : 0.0;
    auto px = x.node();
    return ad::detail::make_op(x.value().cwiseProduct(mask), {px}, [px, mask](ad::Node& n) {
      ad::detail::accum(px, n.grad.cwiseProduct(mask));
    });
  }

  double rate() const { return rate_; }

 private:
  double rate_ = 0.5;
};

// ---- pooling ----

/// Non-overlapping average pooling along the length axis.
inline Feat avg_pool(const Feat& x, int factor) {
  require(factor >= 1 && x.len % factor == 0, ErrorKind::Contract, "avg_pool: length not divisible by factor");
  const int B = x.batch, Lin = x.len, Lout = Lin / factor;
  const long C = x.channels();
  Matrix out = Matrix::Zero(C, static_cast<long>(B) * Lout);
  for (int b = 0; b < B; ++b)
    for (int lo = 0; lo < Lout; ++lo)
      for (int k = 0; k < factor; ++k)
        out.col(static_cast<long>(b) * Lout + lo) += x.v.value().col(static_cast<long>(b) * Lin + lo * factor + k);
  out /= static_cast<double>(factor);
  auto px = x.v.node();
  ad::Var y = ad::detail::make_op(std::move(out), {px}, [px, B, Lin, Lout, factor](ad::Node& n) {
    if (!px->needs_grad) return;
    px->ensure_grad();
    const double inv = 1.0 / factor;
    for (int b = 0; b < B; ++b)
      for (int lo = 0; lo < Lout; ++lo)
        for (int k = 0; k < factor; ++k)
          px->grad.col(static_cast<long>(b) * Lin + lo * factor + k) +=
              n.grad.col(static_cast<long>(b) * Lout + lo) * inv;
  });
  return {y, B, Lout};
}

/// Pool the whole length axis away: (C, B*L) -> (C, B).
inline ad::Var global_avg_pool(const Feat& x) {
  const int B = x.batch, L = x.len;
  const long C = x.channels();
  Matrix out = Matrix::Zero(C, B);
  for (int b = 0; b < B; ++b)
    out.col(b) = x.v.value().middleCols(static_cast<long>(b) * L, L).rowwise().mean();
  auto px = x.v.node();
  return ad::detail::make_op(std::move(out), {px}, [px, B, L](ad::Node& n) {
    if (!px->needs_grad) return;
    px->ensure_grad();
    const double inv = 1.0 / L;
    for (int b = 0; b < B; ++b)
      px->grad.middleCols(static_cast<long>(b) * L, L).colwise() += Eigen::VectorXd(n.grad.col(b) * inv);
  });
}

// ---- recurrent cell ----

/// Single GRU layer; forward consumes a sequence of (input, B) columns and
/// returns the final hidden state.
class GruLayer {
 public:
  GruLayer() = default;
  GruLayer(const std::string& name, int input, int hidden, rng::Stream& s) : hidden_(hidden) {
    wr_ = Param(name + ".wr", he_normal(s, hidden, input, input));
    wz_ = Param(name + ".wz", he_normal(s, hidden, input, input));
    wn_ = Param(name + ".wn", he_normal(s, hidden, input, input));
    ur_ = Param(name + ".ur", he_normal(s, hidden, hidden, hidden));
    uz_ = Param(name + ".uz", he_normal(s, hidden, hidden, hidden));
    un_ = Param(name + ".un", he_normal(s, hidden, hidden, hidden));
    br_ = Param(name + ".br", Matrix::Zero(hidden, 1));
    bz_ = Param(name + ".bz", Matrix::Zero(hidden, 1));
    bn_ = Param(name + ".bn", Matrix::Zero(hidden, 1));
  }

  std::vector<ad::Var> forward(const std::vector<ad::Var>& seq) const {
    require(!seq.empty(), ErrorKind::Contract, "gru: empty sequence");
    const long B = seq[0].cols();
    ad::Var h = ad::Var::leaf(Matrix::Zero(hidden_, B), false);
    std::vector<ad::Var> outs;
    outs.reserve(seq.size());
    for (const auto& x : seq) {
      ad::Var r = ad::sigmoid(ad::add(ad::add_colvec(ad::matmul(wr_.var, x), br_.var), ad::matmul(ur_.var, h)));
      ad::Var z = ad::sigmoid(ad::add(ad::add_colvec(ad::matmul(wz_.var, x), bz_.var), ad::matmul(uz_.var, h)));
      ad::Var n = ad::tanh(ad::add(ad::add_colvec(ad::matmul(wn_.var, x), bn_.var),
                                   ad::mul(r, ad::matmul(un_.var, h))));
      ad::Var one_minus_z = ad::add_scalar(ad::scale(z, -1.0), 1.0);
      h = ad::add(ad::mul(one_minus_z, n), ad::mul(z, h));
      outs.push_back(h);
    }
    return outs;
  }

  std::vector<Param*> params() {
    return {&wr_, &wz_, &wn_, &ur_, &uz_, &un_, &br_, &bz_, &bn_};
  }

 private:
  int hidden_ = 0;
  Param wr_, wz_, wn_, ur_, uz_, un_, br_, bz_, bn_;
};

}  // namespace cvgan::nn
