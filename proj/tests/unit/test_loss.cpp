#include <doctest.h>

#include <cmath>

#include "csegnet/loss.hpp"
#include "csegnet/ops.hpp"
#include "helpers.hpp"
#include "../oracles/oracles.hpp"

using namespace csegnet;
using testutil::Rng;

namespace {

Tensor64 random_simplex(Rng& rng, int B, int N, int H, int W) {
  auto p = testutil::random_tensor<double>({B, N, H, W}, rng, 0.01, 1.0);
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        double s = 0;
        for (int n = 0; n < N; ++n) s += p.at(b, n, h, w);
        for (int n = 0; n < N; ++n) p.at(b, n, h, w) /= s;
      }
  return p;
}

double gdl_value(const Tensor64& p, const Tensor64& r, const GdlOptions& opt = {}) {
  Tape<double> tape;
  return gdl<double>(tape.constant(p), r, opt).value()[0];
}

}  // namespace

TEST_SUITE("gdl") {
  TEST_CASE("perfect agreement is exactly zero, total disagreement exactly one") {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
      const int B = 2, N = 4, H = 5, W = 6;
      auto labels = testutil::random_labels(rng, B * H * W, N);
      auto r = one_hot<double>(labels, B, H, W, N);
      CHECK(gdl_value(r, r) == 0.0);
      std::vector<std::uint8_t> wrong(labels.size());
      for (std::size_t i = 0; i < labels.size(); ++i) wrong[i] = static_cast<std::uint8_t>((labels[i] + 1) % N);
      CHECK(gdl_value(one_hot<double>(wrong, B, H, W, N), r) == 1.0);
    }
  }

  TEST_CASE("two-class 2x2 worked instance") {
    // class-1 target on pixel (0,0); pred 0.8 toward class 1 there, 0.2 elsewhere
    auto r = one_hot<double>({1, 0, 0, 0}, 1, 2, 2, 2);
    Tensor64 p({1, 2, 2, 2}, 0.0);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        const bool on = i == 0 && j == 0;
        p.at(0, 1, i, j) = on ? 0.8 : 0.2;
        p.at(0, 0, i, j) = on ? 0.2 : 0.8;
      }
    const double ref = oracle::gdl(p.vec(), r.vec(), 1, 2, 4);
    CHECK(std::abs(gdl_value(p, r) - ref) < 1e-6);
  }

  TEST_CASE("random instances stay in [0,1] and match the scalar oracle") {
    Rng rng(9);
    for (int trial = 0; trial < 1000; ++trial) {
      const int B = 1 + static_cast<int>(rng() % 2), N = 2 + static_cast<int>(rng() % 3);
      const int H = 2 + static_cast<int>(rng() % 4), W = 2 + static_cast<int>(rng() % 4);
      auto p = random_simplex(rng, B, N, H, W);
      auto r = one_hot<double>(testutil::random_labels(rng, B * H * W, N), B, H, W, N);
      const double v = gdl_value(p, r);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      CHECK(std::abs(v - oracle::gdl(p.vec(), r.vec(), B, N, H * W)) < 1e-6);
    }
  }

  TEST_CASE("class weights favour rarer classes and stay finite") {
    auto r = one_hot<double>({0, 0, 0, 1, 1, 2}, 1, 2, 3, 4);
    auto w = gdl_class_weights(r);
    CHECK(w[2] > w[1]);
    CHECK(w[1] > w[0]);
    CHECK(std::isfinite(w[3]));
    CHECK(w[3] == doctest::Approx(1.0 / (kAbsentClassEpsilon * kAbsentClassEpsilon)));
  }

  TEST_CASE("input validation") {
    auto r = one_hot<double>({0, 1, 1, 0}, 1, 2, 2, 2);
    Tensor64 bad({1, 2, 2, 2}, 0.3);
    try {
      gdl_value(bad, r);
      FAIL("expected NotNormalized");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::NotNormalized);
    }
    Tensor64 not_onehot({1, 2, 2, 2}, 0.5);
    try {
      gdl_value(r, not_onehot);
      FAIL("expected NotOneHot");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::NotOneHot);
    }
  }
}

TEST_SUITE("combined_loss") {
  TEST_CASE("zero aux weights reduce to the main term; manual weighted sum") {
    Rng rng(3);
    const int B = 2, N = 4, H = 8;
    LabelBatch lb{testutil::random_labels(rng, B * H * H, N), B, H, H};
    auto main = testutil::random_tensor<double>({B, N, H, H}, rng, -3, 3);
    auto a1 = testutil::random_tensor<double>({B, N, H / 2, H / 2}, rng, -3, 3);
    auto a2 = testutil::random_tensor<double>({B, N, H / 4, H / 4}, rng, -3, 3);
    Tape<double> t;
    auto vm = t.constant(main), v1 = t.constant(a1), v2 = t.constant(a2);
    const double only_main = combined_loss<double>(vm, {v1, v2}, lb, {1.0, 0.0, 0.0}).value()[0];
    const double g_main = gdl<double>(softmax_channels(vm), one_hot<double>(lb.labels, B, H, H, N)).value()[0];
    CHECK(only_main == doctest::Approx(g_main).epsilon(1e-12));

    auto l1 = downsample_labels(lb.labels, B, H, H, 2), l2 = downsample_labels(lb.labels, B, H, H, 4);
    const double g1 = gdl<double>(softmax_channels(v1), one_hot<double>(l1, B, H / 2, H / 2, N)).value()[0];
    const double g2 = gdl<double>(softmax_channels(v2), one_hot<double>(l2, B, H / 4, H / 4, N)).value()[0];
    const double total = combined_loss<double>(vm, {v1, v2}, lb, {1.0, 0.4, 0.2}).value()[0];
    CHECK(std::abs(total - (g_main + 0.4 * g1 + 0.2 * g2)) < 1e-6);
  }

  TEST_CASE("weight count must match the heads") {
    Tape<double> t;
    LabelBatch lb{std::vector<std::uint8_t>(16, 0), 1, 4, 4};
    auto m = t.constant(Tensor64({1, 4, 4, 4}));
    try {
      combined_loss<double>(m, {}, lb, {1.0, 0.4});
      FAIL("expected WeightLengthMismatch");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::WeightLengthMismatch);
    }
  }

  TEST_CASE("confident correct heads give a near-zero loss") {
    const int B = 1, N = 4, H = 4;
    std::vector<std::uint8_t> labels{0, 1, 2, 3, 3, 2, 1, 0, 0, 0, 1, 1, 2, 2, 3, 3};
    auto logits = one_hot<double>(labels, B, H, H, N);
    for (auto& v : logits.data()) v *= 60.0;
    Tape<double> t;
    const double v = combined_loss<double>(t.constant(logits), {}, LabelBatch{labels, B, H, H}, {1.0}).value()[0];
    CHECK(v < 1e-12);
  }
}
