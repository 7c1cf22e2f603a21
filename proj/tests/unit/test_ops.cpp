#include <doctest.h>

#include <cmath>

#include "csegnet/autograd.hpp"
#include "csegnet/ops.hpp"
#include "helpers.hpp"
#include "../oracles/oracles.hpp"

using namespace csegnet;
using testutil::Rng;

namespace {

Tensor run_conv(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b, const Conv2dSpec& spec) {
  Tape<float> tape;
  std::optional<Var<float>> bias;
  if (b) bias = tape.constant(*b);
  return conv2d<float>(tape.constant(x), tape.constant(w), bias, spec).value();
}

}  // namespace

TEST_SUITE("conv") {
  TEST_CASE("identity kernel reproduces the input") {
    Rng rng(1);
    auto x = testutil::random_tensor({1, 1, 5, 6}, rng);
    Tensor w({1, 1, 3, 3}, 0.0f);
    w[4] = 1.0f;
    auto y = run_conv(x, w, std::nullopt, Conv2dSpec::make(1));
    CHECK(y.vec() == x.vec());
  }

  TEST_CASE("dilated valid 3x3 over 5x5 ones sums nine ones") {
    auto y = run_conv(Tensor({1, 1, 5, 5}, 1.0f), Tensor({1, 1, 3, 3}, 1.0f), std::nullopt,
                      Conv2dSpec::make(1, 2, Padding::Valid));
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y[0] == 9.0f);
  }

  TEST_CASE("output extents") {
    CHECK(conv_axis(7, 3, 2, 1, Padding::Same).out == 4);
    CHECK(conv_axis(8, 3, 2, 1, Padding::Same).out == 4);
    CHECK(conv_axis(7, 3, 2, 2, Padding::Valid).out == 2);
    CHECK_THROWS_AS(conv_axis(4, 3, 1, 2, Padding::Valid), Error);
  }

  TEST_CASE("channel mismatch is typed") {
    try {
      run_conv(Tensor({1, 2, 4, 4}), Tensor({1, 3, 3, 3}), std::nullopt, Conv2dSpec::make(1));
      FAIL("expected ChannelMismatch");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ChannelMismatch);
    }
  }

  TEST_CASE("matches the naive direct-loop oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 60; ++trial) {
      oracle::ConvCase c{};
      c.B = 1 + static_cast<int>(rng() % 2);
      c.C = 1 + static_cast<int>(rng() % 4);
      c.H = 5 + static_cast<int>(rng() % 6);
      c.W = 5 + static_cast<int>(rng() % 6);
      c.k = rng() % 3 == 0 ? 1 : 3;
      c.stride = 1 + static_cast<int>(rng() % 2);
      c.dilation = 1 + static_cast<int>(rng() % 2);
      c.same = trial % 2 == 0;
      c.groups = trial % 3 == 0 ? c.C : 1;
      c.O = c.groups == 1 ? 1 + static_cast<int>(rng() % 4) : c.C * (1 + static_cast<int>(rng() % 2));
      auto x = testutil::random_tensor({c.B, c.C, c.H, c.W}, rng);
      auto w = testutil::random_tensor({c.O, c.C / c.groups, c.k, c.k}, rng);
      auto b = testutil::random_tensor({c.O}, rng);
      auto y = run_conv(x, w, b, Conv2dSpec::make(c.stride, c.dilation, c.same ? Padding::Same : Padding::Valid,
                                                   c.groups));
      auto ref = oracle::conv2d(c, testutil::to_double(x), testutil::to_double(w), testutil::to_double(b));
      REQUIRE(static_cast<std::size_t>(y.numel()) == ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y.vec()[i] - ref[i]) < 1e-5);
    }
  }

  TEST_CASE("dilation sets the touched input extent") {
    for (int d : {1, 2}) {
      Tensor x({1, 1, 9, 9}, 0.0f);
      x.at(0, 0, 4, 4) = 1.0f;
      auto y = run_conv(x, Tensor({1, 1, 3, 3}, 1.0f), std::nullopt, Conv2dSpec::make(1, d));
      int lo = 9, hi = -1;
      for (int c = 0; c < 9; ++c)
        if (y.at(0, 0, 4, c) != 0.0f) {
          lo = std::min(lo, c);
          hi = std::max(hi, c);
        }
      CHECK(hi - lo + 1 == 2 * d + 1);
    }
  }

  TEST_CASE("separable equals the composition of two convs and counts parameters") {
    Rng rng(3);
    auto x = testutil::random_tensor({2, 8, 6, 6}, rng);
    auto dw = testutil::random_tensor({8, 1, 3, 3}, rng);
    auto pw = testutil::random_tensor({16, 8, 1, 1}, rng);
    Tape<float> tape;
    auto sep = separable_conv2d<float>(tape.constant(x), tape.constant(dw), tape.constant(pw)).value();
    auto mid = run_conv(x, dw, std::nullopt, Conv2dSpec::make(1, 1, Padding::Same, 8));
    auto ref = run_conv(mid, pw, std::nullopt, Conv2dSpec::make(1));
    CHECK(sep.vec() == ref.vec());
    CHECK(dw.numel() + pw.numel() == 200);
  }
}

TEST_SUITE("resample") {
  TEST_CASE("average pooling") {
    Tape<float> tape;
    CHECK(avg_pool2d<float>(tape.constant(Tensor({1, 1, 6, 6}, 1.0f))).value().vec() == std::vector<float>(4, 1.0f));
    auto x = Tensor({1, 1, 3, 3}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8, 9});
    CHECK(avg_pool2d<float>(tape.constant(x)).value()[0] == 5.0f);
    // partial windows divide by the real pixel count
    auto y = avg_pool2d<float>(tape.constant(Tensor({1, 1, 4, 4}, 2.0f))).value();
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    for (auto v : y.data()) CHECK(v == doctest::Approx(2.0f));
    try {
      avg_pool2d<float>(tape.constant(Tensor({1, 1, 2, 5})));
      FAIL("expected InputTooSmall");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InputTooSmall);
    }
  }

  TEST_CASE("bilinear: identity, constants and the scalar oracle") {
    Tape<double> tape;
    Rng rng(5);
    auto x = testutil::random_tensor<double>({1, 2, 5, 4}, rng);
    CHECK(bit_equal(bilinear_resize<double>(tape.constant(x), 5, 4).value(), x));
    auto c = bilinear_resize<double>(tape.constant(Tensor64({1, 1, 3, 3}, 0.7)), 7, 5).value();
    for (auto v : c.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));

    auto small = Tensor64({1, 1, 2, 2}, std::vector<double>{0, 1, 2, 3});
    auto up = bilinear_resize<double>(tape.constant(small), 4, 4).value();
    auto ref = oracle::bilinear({0, 1, 2, 3}, 2, 2, 4, 4);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(up.vec()[i] - ref[i]) < 1e-6);

    for (int trial = 0; trial < 10; ++trial) {
      const int h = 2 + static_cast<int>(rng() % 6), w = 2 + static_cast<int>(rng() % 6);
      const int oh = 1 + static_cast<int>(rng() % 9), ow = 1 + static_cast<int>(rng() % 9);
      auto img = testutil::random_tensor<double>({1, 1, h, w}, rng);
      auto out = bilinear_resize<double>(tape.constant(img), oh, ow).value();
      auto r = oracle::bilinear(img.vec(), h, w, oh, ow);
      for (std::size_t i = 0; i < r.size(); ++i) CHECK(std::abs(out.vec()[i] - r[i]) < 1e-9);
    }
  }

  TEST_CASE("resize round trip keeps a constant image exact") {
    Tape<float> tape;
    auto x = tape.constant(Tensor({1, 1, 8, 8}, 0.25f));
    auto back = bilinear_resize<float>(bilinear_resize<float>(x, 3, 5), 8, 8).value();
    for (auto v : back.data()) CHECK(v == 0.25f);
  }

  TEST_CASE("concat preserves block order and splits gradients") {
    Tape<double> tape;
    auto a = tape.leaf(Tensor64({1, 2, 2, 2}, 1.0), true);
    auto b = tape.leaf(Tensor64({1, 3, 2, 2}, 2.0), true);
    auto c = concat_channels<double>({a, b});
    CHECK(c.value().shape() == Shape{1, 5, 2, 2});
    CHECK(c.value().at(0, 1, 1, 1) == 1.0);
    CHECK(c.value().at(0, 2, 0, 0) == 2.0);
    auto single = concat_channels<double>({a});
    CHECK(single.value() == a.value());
    tape.backward(sum_all(mul(c, c)));
    CHECK(tape.grad(a).shape() == a.value().shape());
    CHECK(tape.grad(b)[0] == 4.0);
    auto odd = tape.constant(Tensor64({1, 1, 3, 2}));
    CHECK_THROWS_AS(concat_channels<double>({a, odd}), Error);
  }
}

TEST_SUITE("normalization") {
  TEST_CASE("training batch norm standardizes each channel") {
    Rng rng(11);
    auto x = testutil::random_tensor<double>({4, 3, 5, 5}, rng, -3, 5);
    Tape<double> tape;
    BatchNormUpdate<double> upd;
    auto y = batch_norm<double>(tape.constant(x), tape.constant(Tensor64({3}, 1.0)), tape.constant(Tensor64({3}, 0.0)),
                                Tensor64({3}, 0.0), Tensor64({3}, 1.0), true, &upd)
                 .value();
    for (int c = 0; c < 3; ++c) {
      double mean = 0, var = 0;
      for (int b = 0; b < 4; ++b)
        for (int i = 0; i < 5; ++i)
          for (int j = 0; j < 5; ++j) mean += y.at(b, c, i, j);
      mean /= 100;
      for (int b = 0; b < 4; ++b)
        for (int i = 0; i < 5; ++i)
          for (int j = 0; j < 5; ++j) var += (y.at(b, c, i, j) - mean) * (y.at(b, c, i, j) - mean);
      var /= 100;
      CHECK(std::abs(mean) < 1e-4);
      CHECK(std::abs(var - 1.0) < 1e-4);
      CHECK(upd.running_var[c] >= 0.0);
    }
  }

  TEST_CASE("gamma zero outputs beta; eval uses running statistics") {
    Tape<double> tape;
    Rng rng(2);
    auto x = tape.constant(testutil::random_tensor<double>({2, 2, 3, 3}, rng));
    auto beta = Tensor64({2}, std::vector<double>{0.5, -1.0});
    auto y = batch_norm<double>(x, tape.constant(Tensor64({2}, 0.0)), tape.constant(beta), Tensor64({2}, 0.0),
                                Tensor64({2}, 1.0), true)
                 .value();
    CHECK(y.at(1, 0, 2, 2) == 0.5);
    CHECK(y.at(0, 1, 0, 1) == -1.0);
    auto e = batch_norm<double>(tape.constant(Tensor64({1, 1, 1, 1}, 3.0)), tape.constant(Tensor64({1}, 2.0)),
                                tape.constant(Tensor64({1}, 1.0)), Tensor64({1}, 1.0), Tensor64({1}, 4.0), false)
                 .value();
    CHECK(e[0] == doctest::Approx(2.0 * (3.0 - 1.0) / std::sqrt(4.0 + kBatchNormEpsilon) + 1.0));
  }

  TEST_CASE("relu and softmax") {
    Tape<double> tape;
    CHECK(relu<double>(tape.constant(Tensor64::from({-1, 0, 2}))).value().vec() == std::vector<double>{0, 0, 2});
    auto s = softmax_channels<double>(tape.constant(Tensor64({1, 4, 2, 2}, 3.0))).value();
    for (auto v : s.data()) CHECK(v == doctest::Approx(0.25));

    Rng rng(4);
    auto logits = testutil::random_tensor<double>({2, 4, 3, 3}, rng, -20, 20);
    auto p = softmax_channels<double>(tape.constant(logits)).value();
    auto shifted = logits;
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          const double k = 100.0 * (b + i - j);
          for (int c = 0; c < 4; ++c) shifted.at(b, c, i, j) += k;
        }
    auto q = softmax_channels<double>(tape.constant(shifted)).value();
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          double sum = 0;
          for (int c = 0; c < 4; ++c) {
            sum += p.at(b, c, i, j);
            CHECK(std::abs(p.at(b, c, i, j) - q.at(b, c, i, j)) < 1e-6);
          }
          CHECK(std::abs(sum - 1.0) < 1e-5);
        }
  }
}
