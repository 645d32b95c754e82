#include <doctest.h>

#include "cvgan/ad.hpp"
#include "cvgan/nn.hpp"

#include <cmath>
#include <functional>

using namespace cvgan;

namespace {

Matrix random_matrix(rng::Stream& s, long rows, long cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (long j = 0; j < cols; ++j)
    for (long i = 0; i < rows; ++i) m(i, j) = s.normal() * scale;
  return m;
}

// Central finite differences against the analytic gradient for a scalar
// graph rebuilt by `build` from the leaf values in `inputs`.
void check_gradients(std::vector<ad::Var>& inputs, const std::function<ad::Var()>& build,
                     double h = 1e-5, double rtol = 1e-3, int coords_per_input = 6) {
  ad::Var loss = build();
  REQUIRE(loss.rows() == 1);
  REQUIRE(loss.cols() == 1);
  for (auto& in : inputs) in.zero_grad();
  ad::backward(loss);
  rng::Stream pick(12345);
  for (auto& in : inputs) {
    Matrix grad = in.grad();
    for (int c = 0; c < coords_per_input; ++c) {
      const long i = static_cast<long>(pick.next_u64() % static_cast<std::uint64_t>(in.rows()));
      const long j = static_cast<long>(pick.next_u64() % static_cast<std::uint64_t>(in.cols()));
      const double orig = in.value()(i, j);
      in.mutable_value()(i, j) = orig + h;
      const double up = build().value()(0, 0);
      in.mutable_value()(i, j) = orig - h;
      const double down = build().value()(0, 0);
      in.mutable_value()(i, j) = orig;
      const double fd = (up - down) / (2.0 * h);
      const double an = grad(i, j);
      const double tol = 1e-8 + rtol * std::max({std::abs(fd), std::abs(an)});
      INFO("coord (", i, ",", j, ") analytic=", an, " fd=", fd);
      CHECK(std::abs(an - fd) <= tol);
    }
  }
}

}  // namespace

TEST_SUITE("ad") {
  TEST_CASE("elementwise chain gradients match finite differences") {
    rng::Stream s(7);
    ad::Var a = ad::Var::leaf(random_matrix(s, 4, 5), true);
    ad::Var b = ad::Var::leaf(random_matrix(s, 4, 5), true);
    std::vector<ad::Var> inputs{a, b};
    check_gradients(inputs, [&] {
      ad::Var t = ad::mul(ad::sigmoid(a), ad::tanh(b));
      t = ad::add(t, ad::leaky_relu(ad::sub(a, b), 0.2));
      t = ad::add(t, ad::softplus(ad::scale(a, 0.7)));
      t = ad::add(t, ad::exp(ad::scale(b, 0.3)));
      return ad::mean(ad::square(t));
    });
  }

  TEST_CASE("matmul and reductions") {
    rng::Stream s(11);
    ad::Var a = ad::Var::leaf(random_matrix(s, 3, 4), true);
    ad::Var b = ad::Var::leaf(random_matrix(s, 4, 6), true);
    ad::Var bias = ad::Var::leaf(random_matrix(s, 3, 1), true);
    std::vector<ad::Var> inputs{a, b, bias};
    check_gradients(inputs, [&] {
      ad::Var y = ad::add_colvec(ad::matmul(a, b), bias);
      ad::Var r = ad::add(ad::sum(ad::square(ad::rowmean(y))), ad::mean(ad::colsum(y)));
      return ad::add(r, ad::mean(ad::log(ad::add_scalar(ad::square(y), 1.0))));
    });
  }

  TEST_CASE("structural ops round-trip and differentiate") {
    rng::Stream s(13);
    ad::Var a = ad::Var::leaf(random_matrix(s, 6, 8), true);  // 6 channels, B=2, L=4
    std::vector<ad::Var> inputs{a};
    check_gradients(inputs, [&] {
      ad::Var cols = ad::map_to_columns(a, 2, 4);
      ad::Var back = ad::columns_to_map(cols, 6, 4);
      ad::Var top = ad::slice_rows(a, 0, 3);
      ad::Var bottom = ad::slice_rows(a, 3, 3);
      ad::Var cat = ad::concat_rows({top, bottom});
      return ad::mean(ad::square(ad::add(back, cat)));
    });

    // Bitwise round-trip.
    ad::Var cols = ad::map_to_columns(a, 2, 4);
    ad::Var back = ad::columns_to_map(cols, 6, 4);
    CHECK((back.value() - a.value()).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("masked column mean") {
    rng::Stream s(17);
    ad::Var a = ad::Var::leaf(random_matrix(s, 3, 5), true);
    std::vector<char> mask{1, 0, 1, 0, 1};
    std::vector<ad::Var> inputs{a};
    check_gradients(inputs, [&] { return ad::sum(ad::square(ad::masked_colmean(a, mask))); });
    Matrix expect = (a.value().col(0) + a.value().col(2) + a.value().col(4)) / 3.0;
    CHECK((ad::masked_colmean(a, mask).value() - expect).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("softmax cross-entropy value and gradient") {
    rng::Stream s(19);
    ad::Var logits = ad::Var::leaf(random_matrix(s, 5, 4), true);
    std::vector<int> labels{0, 3, 2, 4};
    std::vector<ad::Var> inputs{logits};
    check_gradients(inputs, [&] { return ad::softmax_cross_entropy(logits, labels); });

    // Uniform logits: CE = log(K).
    ad::Var uniform = ad::Var::leaf(Matrix::Zero(5, 4), false);
    CHECK(ad::softmax_cross_entropy(uniform, labels).value()(0, 0) == doctest::Approx(std::log(5.0)));
  }

  TEST_CASE("conv1d gradients") {
    rng::Stream s(23);
    nn::Conv1d conv("c", 3, 4, 3, 2, 1, s);
    ad::Var x = ad::Var::leaf(random_matrix(s, 3, 2 * 8), true);  // B=2, L=8
    std::vector<ad::Var> inputs{x, conv.params()[0]->var, conv.params()[1]->var};
    check_gradients(inputs, [&] {
      nn::Feat f{x, 2, 8};
      return ad::mean(ad::square(conv.forward(f).v));
    });
  }

  TEST_CASE("conv transpose doubles length and differentiates") {
    rng::Stream s(29);
    nn::ConvTranspose1d up("t", 4, 3, 3, 2, 1, 1, s);
    ad::Var x = ad::Var::leaf(random_matrix(s, 4, 2 * 6), true);  // B=2, L=6
    nn::Feat out = up.forward({x, 2, 6});
    CHECK(out.len == 12);
    CHECK(out.channels() == 3);
    std::vector<ad::Var> inputs{x, up.params()[0]->var, up.params()[1]->var};
    check_gradients(inputs, [&] { return ad::mean(ad::square(up.forward({x, 2, 6}).v)); });
  }

  TEST_CASE("batchnorm train mode normalizes and differentiates") {
    rng::Stream s(31);
    nn::BatchNorm1d bn("bn", 3);
    ad::Var x = ad::Var::leaf(random_matrix(s, 3, 10, 2.0), true);
    nn::Mode train{true, nullptr};
    nn::Feat y = bn.forward({x, 2, 5}, train);
    CHECK(y.v.value().row(0).mean() == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(y.v.value().row(1).array().square().mean() == doctest::Approx(1.0).epsilon(1e-3));

    std::vector<ad::Var> inputs{x, bn.params()[0]->var, bn.params()[1]->var};
    check_gradients(inputs, [&] {
      nn::Mode m{true, nullptr};
      nn::Feat f = bn.forward({x, 2, 5}, m);
      return ad::mean(ad::mul(f.v, f.v));
    });

    nn::Mode eval;
    check_gradients(inputs, [&] {
      nn::Feat f = bn.forward({x, 2, 5}, eval);
      return ad::mean(ad::mul(f.v, f.v));
    });
  }

  TEST_CASE("pooling ops") {
    rng::Stream s(37);
    ad::Var x = ad::Var::leaf(random_matrix(s, 2, 2 * 8), true);
    std::vector<ad::Var> inputs{x};
    check_gradients(inputs, [&] {
      nn::Feat pooled = nn::avg_pool({x, 2, 8}, 4);
      return ad::mean(ad::square(pooled.v));
    });
    check_gradients(inputs, [&] { return ad::mean(ad::square(nn::global_avg_pool({x, 2, 8}))); });

    // avg_pool of a constant map stays constant.
    ad::Var c = ad::Var::leaf(Matrix::Constant(2, 8, 3.5), false);
    CHECK((nn::avg_pool({c, 1, 8}, 2).v.value().array() - 3.5).abs().maxCoeff() < 1e-15);
  }

  TEST_CASE("embedding lookup routes gradients to the selected rows") {
    rng::Stream s(41);
    nn::Embedding emb("e", 4, 6, s);
    std::vector<int> labels{2, 0, 2};
    std::vector<ad::Var> inputs{emb.params()[0]->var};
    check_gradients(inputs, [&] { return ad::mean(ad::square(emb.forward(labels).v)); });

    nn::Feat out = emb.forward(labels);
    CHECK(out.batch == 3);
    CHECK(out.len == 6);
    CHECK((out.v.value().block(0, 0, 1, 6) - emb.row(2)).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(emb.forward({5}), Error);
  }

  TEST_CASE("dropout scales by keep probability and masks gradients") {
    rng::Stream s(43);
    nn::Dropout drop(0.5);
    ad::Var x = ad::Var::leaf(Matrix::Ones(4, 10), true);
    rng::Stream mask_stream(99);
    nn::Mode train{true, &mask_stream};
    ad::Var y = drop.forward(x, train);
    for (long j = 0; j < y.cols(); ++j)
      for (long i = 0; i < y.rows(); ++i) {
        const double v = y.value()(i, j);
        CHECK((v == 0.0 || v == doctest::Approx(2.0)));
      }
    nn::Mode eval;
    CHECK((drop.forward(x, eval).value() - x.value()).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("gru layer differentiates through time") {
    rng::Stream s(47);
    nn::GruLayer gru("g", 3, 4, s);
    ad::Var x0 = ad::Var::leaf(random_matrix(s, 3, 2), true);
    ad::Var x1 = ad::Var::leaf(random_matrix(s, 3, 2), true);
    std::vector<ad::Var> inputs{x0, x1};
    for (auto* p : gru.params()) inputs.push_back(p->var);
    check_gradients(
        inputs, [&] { return ad::mean(ad::square(gru.forward({x0, x1}).back())); }, 1e-5, 2e-3, 3);
  }

  TEST_CASE("stop_grad blocks the backward path") {
    ad::Var x = ad::Var::leaf(Matrix::Ones(2, 2), true);
    ad::Var y = ad::mean(ad::square(ad::stop_grad(x)));
    x.zero_grad();
    ad::backward(y);
    CHECK(x.grad().cwiseAbs().maxCoeff() == 0.0);
  }
}
