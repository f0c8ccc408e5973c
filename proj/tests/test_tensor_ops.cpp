// Copyright (c) 2026 The dinat-ir authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "dinat/ops.hpp"

using namespace dinat;

namespace {

// direct six-nested-loop convolution, the reference for conv2d
Tensor<double> conv2d_loop_oracle(const Tensor<double>& x, const Tensor<double>& w, int pad,
                                  int stride = 1, int groups = 1) {
  const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = w.dim(0), cig = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int64_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  const int64_t cog = Cout / groups;
  Tensor<double> out({B, Cout, Ho, Wo});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t oc = 0; oc < Cout; ++oc)
      for (int64_t oy = 0; oy < Ho; ++oy)
        for (int64_t ox = 0; ox < Wo; ++ox) {
          double acc = 0;
          for (int64_t ic = 0; ic < cig; ++ic)
            for (int64_t ky = 0; ky < kh; ++ky)
              for (int64_t kx = 0; kx < kw; ++kx) {
                const int64_t iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x.at(b, (oc / cog) * cig + ic, iy, ix) * w.at(oc, ic, ky, kx);
              }
          out.at(b, oc, oy, ox) = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("rng streams replay exactly and respect bounds") {
  Rng a(42), b(42), c(43);
  bool all_same = true, any_diff = false;
  for (int i = 0; i < 1000; ++i) {
    const double u1 = a.uniform(), u2 = b.uniform();
    all_same = all_same && (u1 == u2);
    any_diff = any_diff || (u1 != c.uniform());
    CHECK(u1 >= 0.0);
    CHECK(u1 < 1.0);
  }
  CHECK(all_same);
  CHECK(any_diff);

  Rng d(7);
  for (int i = 0; i < 1000; ++i) {
    const int64_t v = d.uniform_int(-3, 5);
    CHECK(v >= -3);
    CHECK(v <= 5);
  }
  CHECK(d.uniform_int(9, 9) == 9);

  // normal draws have roughly the right first two moments
  Rng e(1);
  double sum = 0, sq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double v = e.normal();
    sum += v;
    sq += v * v;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("tensor basics") {
  Tensor<float> t({2, 3}, 1.5f);
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.at(1, 2) == 1.5f);
  CHECK_THROWS_AS(Tensor<float>({0, 2}), DimensionError);
  CHECK_THROWS_AS(t.at(2, 0), DimensionError);
  CHECK_FALSE(t.requires_grad());
  t.set_requires_grad(true);
  CHECK(t.grad() != nullptr);
  CHECK(t.grad()[0] == 0.0f);

  Tensor<float> view = t;  // shared handle
  view.data()[0] = 7.0f;
  CHECK(t.data()[0] == 7.0f);
  Tensor<float> deep = t.clone();
  deep.data()[0] = 9.0f;
  CHECK(t.data()[0] == 7.0f);
}

TEST_CASE("conv2d identity kernel") {
  Tensor<double> x = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  Tensor<double> w = Tensor<double>::from({1, 1, 3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0});
  Tensor<double> y = conv2d<double>(nullptr, x, w, nullptr, 1, 1);
  REQUIRE(y.shape() == std::vector<int64_t>{1, 1, 3, 3});
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("conv2d sum of ones") {
  Tensor<double> x = Tensor<double>::full({1, 1, 2, 2}, 1.0);
  Tensor<double> w = Tensor<double>::full({1, 1, 2, 2}, 1.0);
  Tensor<double> y = conv2d<double>(nullptr, x, w, nullptr, 1, 0);
  REQUIRE(y.numel() == 1);
  CHECK(y.data()[0] == 4.0);
}

TEST_CASE("conv2d random vs loop oracle") {
  Rng rng(11);
  Tensor<double> x({1, 2, 5, 5});
  Tensor<double> w({3, 2, 3, 3});
  fill_uniform(x, rng, -1, 1);
  fill_uniform(w, rng, -1, 1);
  for (int pad : {0, 1, 2}) {
    Tensor<double> got = conv2d<double>(nullptr, x, w, nullptr, 1, pad);
    Tensor<double> want = conv2d_loop_oracle(x, w, pad);
    REQUIRE(got.shape() == want.shape());
    for (int64_t i = 0; i < got.numel(); ++i)
      CHECK(std::abs(got.data()[i] - want.data()[i]) < 1e-12);
  }
}

TEST_CASE("conv2d strided and grouped vs loop oracle") {
  Rng rng(12);
  Tensor<double> x({2, 4, 7, 6});
  Tensor<double> w({6, 2, 3, 3});  // groups 2
  fill_uniform(x, rng, -1, 1);
  fill_uniform(w, rng, -1, 1);
  for (int stride : {1, 2})
    for (int pad : {0, 1}) {
      Tensor<double> got = conv2d<double>(nullptr, x, w, nullptr, stride, pad, 2);
      Tensor<double> want = conv2d_loop_oracle(x, w, pad, stride, 2);
      REQUIRE(got.shape() == want.shape());
      for (int64_t i = 0; i < got.numel(); ++i)
        CHECK(std::abs(got.data()[i] - want.data()[i]) < 1e-12);
    }
}

TEST_CASE("conv2d geometry and shape errors") {
  Tensor<double> x({1, 2, 3, 3});
  Tensor<double> w({1, 3, 3, 3});
  CHECK_THROWS_AS(conv2d<double>(nullptr, x, w, nullptr, 1, 0), DimensionError);
  Tensor<double> w2({1, 2, 5, 5});
  CHECK_THROWS_AS(conv2d<double>(nullptr, x, w2, nullptr, 1, 0), GeometryError);
}

TEST_CASE("conv1d examples") {
  Tensor<double> x = Tensor<double>::from({1, 1, 3}, {1, 2, 3});
  Tensor<double> ident = Tensor<double>::from({1, 1, 3}, {0, 1, 0});
  Tensor<double> y = conv1d<double>(nullptr, x, ident, nullptr, 1);
  CHECK(y.at(0, 0, 0) == 1.0);
  CHECK(y.at(0, 0, 1) == 2.0);
  CHECK(y.at(0, 0, 2) == 3.0);

  Tensor<double> box = Tensor<double>::from({1, 1, 3}, {1, 1, 1});
  Tensor<double> z = conv1d<double>(nullptr, x, box, nullptr, 1);
  CHECK(z.at(0, 0, 0) == 3.0);
  CHECK(z.at(0, 0, 1) == 6.0);
  CHECK(z.at(0, 0, 2) == 5.0);
}

TEST_CASE("conv1d random vs loop oracle") {
  Rng rng(5);
  Tensor<double> x({1, 1, 16});
  Tensor<double> w({1, 1, 3});
  fill_uniform(x, rng, -1, 1);
  fill_uniform(w, rng, -1, 1);
  Tensor<double> y = conv1d<double>(nullptr, x, w, nullptr, 1);
  for (int64_t o = 0; o < 16; ++o) {
    double acc = 0;
    for (int64_t k = 0; k < 3; ++k) {
      const int64_t i = o - 1 + k;
      if (i < 0 || i >= 16) continue;
      acc += x.at(0, 0, i) * w.at(0, 0, k);
    }
    CHECK(std::abs(y.at(0, 0, o) - acc) < 1e-12);
  }
}

TEST_CASE("layer_norm examples") {
  Tensor<double> g = Tensor<double>::full({4}, 1.0);
  Tensor<double> b({4});
  Tensor<double> x = Tensor<double>::full({1, 4, 2, 2}, 3.25);
  Tensor<double> y = layer_norm<double>(nullptr, x, g, b, 1e-5);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y.data()[i]) < 1e-9);

  Tensor<double> g2 = Tensor<double>::full({2}, 1.0);
  Tensor<double> b2({2});
  Tensor<double> x2 = Tensor<double>::from({1, 2, 1, 1}, {1, 3});
  Tensor<double> y2 = layer_norm<double>(nullptr, x2, g2, b2, 1e-12);
  CHECK(y2.at(0, 0, 0, 0) == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(y2.at(0, 1, 0, 0) == doctest::Approx(1.0).epsilon(1e-9));

  CHECK_THROWS_AS(layer_norm<double>(nullptr, x, g2, b2, 1e-5), DimensionError);
}

TEST_CASE("layer_norm per-position statistics") {
  Rng rng(3);
  Tensor<float> x({2, 8, 4, 4});
  fill_uniform(x, rng, -2, 2);
  Tensor<float> g = Tensor<float>::full({8}, 1.0f);
  Tensor<float> b({8});
  Tensor<float> y = layer_norm<float>(nullptr, x, g, b, 1e-8);
  for (int64_t bb = 0; bb < 2; ++bb)
    for (int64_t i = 0; i < 16; ++i) {
      double mu = 0, var = 0;
      for (int64_t c = 0; c < 8; ++c) mu += y.data()[((bb * 8 + c) * 16) + i];
      mu /= 8;
      for (int64_t c = 0; c < 8; ++c) {
        const double d = y.data()[((bb * 8 + c) * 16) + i] - mu;
        var += d * d;
      }
      var /= 8;
      CHECK(std::abs(mu) < 1e-6);
      CHECK(std::abs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("softmax examples and stability") {
  Tensor<double> x = Tensor<double>::from({3}, {0, 0, 0});
  Tensor<double> y = softmax<double>(nullptr, x, 0);
  for (int i = 0; i < 3; ++i) CHECK(y.data()[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor<double> big = Tensor<double>::from({2}, {1000, 0});
  Tensor<double> yb = softmax<double>(nullptr, big, 0);
  CHECK(yb.data()[0] == doctest::Approx(1.0));
  CHECK(yb.data()[1] == doctest::Approx(0.0));
  CHECK(std::isfinite(yb.data()[0]));

  Rng rng(7);
  Tensor<double> r({4, 9});
  fill_uniform(r, rng, -50, 50);
  Tensor<double> yr = softmax<double>(nullptr, r, 1);
  for (int64_t o = 0; o < 4; ++o) {
    double sum = 0;
    for (int64_t j = 0; j < 9; ++j) {
      const double v = yr.at(o, j);
      CHECK(v > 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("softmax f32 slices sum to one and stay finite") {
  Rng rng(13);
  Tensor<float> r({3, 17, 2});
  fill_uniform(r, rng, -80, 80);
  Tensor<float> y = softmax<float>(nullptr, r, 1);
  for (int64_t o = 0; o < 3; ++o)
    for (int64_t i = 0; i < 2; ++i) {
      float sum = 0;
      for (int64_t j = 0; j < 17; ++j) {
        const float v = y.at(o, j, i);
        CHECK(std::isfinite(v));
        sum += v;
      }
      CHECK(std::abs(sum - 1.0f) < 1e-6f);
    }
}

TEST_CASE("activation examples") {
  Tensor<double> zero = Tensor<double>::from({1}, {0.0});
  CHECK(activation<double>(nullptr, zero, Act::sigmoid).data()[0] == 0.5);
  CHECK(activation<double>(nullptr, zero, Act::gelu).data()[0] == 0.0);

  Rng rng(9);
  Tensor<double> x({64});
  fill_uniform(x, rng, -6, 6);
  Tensor<double> neg = ew<double>(nullptr, x, -1.0, EwKind::mul);
  Tensor<double> s1 = activation<double>(nullptr, x, Act::sigmoid);
  Tensor<double> s2 = activation<double>(nullptr, neg, Act::sigmoid);
  for (int64_t i = 0; i < 64; ++i) CHECK(std::abs(s1.data()[i] + s2.data()[i] - 1.0) < 1e-12);
}

TEST_CASE("gap2d examples") {
  Tensor<double> c = Tensor<double>::full({2, 3, 4, 4}, 0.7);
  Tensor<double> y = gap2d<double>(nullptr, c);
  REQUIRE(y.shape() == std::vector<int64_t>{2, 3, 1, 1});
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(0.7).epsilon(1e-15));

  Tensor<double> x = Tensor<double>::from({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(gap2d<double>(nullptr, x).data()[0] == 2.5);

  Rng rng(21);
  Tensor<double> r({1, 2, 5, 3});
  fill_uniform(r, rng, -1, 1);
  Tensor<double> g = gap2d<double>(nullptr, r);
  for (int64_t ch = 0; ch < 2; ++ch) {
    double acc = 0;
    for (int64_t i = 0; i < 15; ++i) acc += r.data()[ch * 15 + i];
    CHECK(std::abs(g.data()[ch] - acc / 15.0) < 1e-12);
  }
}

TEST_CASE("pixel shuffle round trip and layout") {
  Tensor<float> four = Tensor<float>::from({1, 4, 1, 1}, {10, 20, 30, 40});
  Tensor<float> sh = pixel_shuffle<float>(nullptr, four, 2);
  REQUIRE(sh.shape() == std::vector<int64_t>{1, 1, 2, 2});
  CHECK(sh.at(0, 0, 0, 0) == 10.0f);
  CHECK(sh.at(0, 0, 0, 1) == 20.0f);
  CHECK(sh.at(0, 0, 1, 0) == 30.0f);
  CHECK(sh.at(0, 0, 1, 1) == 40.0f);

  Rng rng(2);
  Tensor<float> x({2, 12, 3, 5});
  fill_uniform(x, rng, -1, 1);
  Tensor<float> rt = pixel_unshuffle<float>(nullptr, pixel_shuffle<float>(nullptr, x, 2), 2);
  REQUIRE(rt.shape() == x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(rt.data()[i] == x.data()[i]);  // bitwise

  CHECK_THROWS_AS(pixel_shuffle<float>(nullptr, Tensor<float>({1, 3, 2, 2}), 2), DimensionError);
  CHECK_THROWS_AS(pixel_unshuffle<float>(nullptr, Tensor<float>({1, 3, 3, 2}), 2), DimensionError);
}

TEST_CASE("ew identities and broadcast gradient") {
  Rng rng(4);
  Tensor<double> x({2, 3, 4, 4});
  fill_uniform(x, rng, -1, 1);
  Tensor<double> ones = Tensor<double>::full(x.shape(), 1.0);
  Tensor<double> y = ew<double>(nullptr, x, ones, EwKind::mul);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
  Tensor<double> z = ew<double>(nullptr, x, 0.0, EwKind::add);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(z.data()[i] == x.data()[i]);

  // d/dy sum(x * y) with y (1,C,1,1) equals the batch+spatial sum of x
  Tensor<double> g({1, 3, 1, 1});
  fill_uniform(g, rng, 0.5, 1.5);
  g.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> prod = ew<double>(&tape, x, g, EwKind::mul);
  Tensor<double> loss = sum_all(&tape, prod);
  tape.backward(loss);
  for (int64_t c = 0; c < 3; ++c) {
    double want = 0;
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t i = 0; i < 16; ++i) want += x.data()[(b * 3 + c) * 16 + i];
    CHECK(g.grad()[c] == doctest::Approx(want).epsilon(1e-12));
  }

  CHECK_THROWS_AS(ew<double>(nullptr, x, Tensor<double>({2, 3, 4, 5}), EwKind::add), DimensionError);
}

TEST_CASE("backward basics") {
  Rng rng(6);
  Tensor<double> x({3, 4});
  fill_uniform(x, rng, -2, 2);
  x.set_requires_grad(true);

  {
    Tape<double> tape;
    Tensor<double> loss = sum_all(&tape, x);
    tape.backward(loss);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 1.0);
  }
  x.zero_grad();
  {
    Tape<double> tape;
    Tensor<double> sq = ew<double>(&tape, x, x, EwKind::mul);  // aliased operands
    Tensor<double> loss = sum_all(&tape, sq);
    tape.backward(loss);
    for (int64_t i = 0; i < x.numel(); ++i)
      CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor<double> x({2, 2});
  x.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> y = ew<double>(&tape, x, 2.0, EwKind::mul);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("gradients accumulate across backward calls") {
  Tensor<double> x = Tensor<double>::from({2}, {1.0, 2.0});
  x.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> loss = sum_all(&tape, x);
  tape.backward(loss);
  tape.backward(loss);
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 2.0);
}

TEST_CASE("shared subexpression accumulates like a duplicated graph") {
  Rng rng(8);
  Tensor<double> x({5});
  fill_uniform(x, rng, -1, 1);

  // shared: u = sigmoid(x); L = sum(u * u)
  Tensor<double> xs = x.clone();
  xs.set_requires_grad(true);
  Tape<double> t1;
  Tensor<double> u = activation(&t1, xs, Act::sigmoid);
  Tensor<double> l1 = sum_all(&t1, ew(&t1, u, u, EwKind::mul));
  t1.backward(l1);

  // duplicated-subgraph oracle: two independent copies, grads summed
  Tensor<double> xa = x.clone(), xb = x.clone();
  xa.set_requires_grad(true);
  xb.set_requires_grad(true);
  Tape<double> t2;
  Tensor<double> ua = activation(&t2, xa, Act::sigmoid);
  Tensor<double> ub = activation(&t2, xb, Act::sigmoid);
  Tensor<double> l2 = sum_all(&t2, ew(&t2, ua, ub, EwKind::mul));
  t2.backward(l2);

  for (int64_t i = 0; i < 5; ++i)
    CHECK(xs.grad()[i] == doctest::Approx(xa.grad()[i] + xb.grad()[i]).epsilon(1e-12));
}

TEST_CASE("narrow, concat, reshape, heads round trips") {
  Rng rng(10);
  Tensor<double> x({2, 6, 3, 3});
  fill_uniform(x, rng, -1, 1);
  Tensor<double> a = narrow<double>(nullptr, x, 1, 0, 3);
  Tensor<double> b = narrow<double>(nullptr, x, 1, 3, 3);
  Tensor<double> cat = concat<double>(nullptr, {a, b}, 1);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(cat.data()[i] == x.data()[i]);

  Tensor<double> h = split_heads<double>(nullptr, x, 3);
  REQUIRE(h.shape() == std::vector<int64_t>{2, 3, 3, 3, 2});
  Tensor<double> m = merge_heads<double>(nullptr, h);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(m.data()[i] == x.data()[i]);

  Tensor<double> r = reshape<double>(nullptr, x, {6, 18});
  CHECK(r.numel() == x.numel());
  CHECK_THROWS_AS(reshape<double>(nullptr, x, {5, 5}), DimensionError);
}
