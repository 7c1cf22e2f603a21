#include <doctest.h>

#include <cmath>
#include <set>

#include "csegnet/loss.hpp"
#include "csegnet/model.hpp"
#include "csegnet/ops.hpp"
#include "helpers.hpp"
#include "../oracles/oracles.hpp"

using namespace csegnet;
using testutil::Rng;

namespace {

ModelConfig small_config(Variant v = Variant::CSegNet) {
  ModelConfig c;
  c.stages = 3;
  c.base_channels = 4;
  c.input_height = c.input_width = 24;
  c.variant = v;
  return c;
}

ForwardOutput<float> run(const ModelConfig& cfg, const ParamSet& params, const Tensor& x, bool training,
                         Tape<float>& tape, VarMap<float>& vars) {
  vars = bind_params(tape, params, training);
  ForwardContext<float> ctx{&cfg, &vars, training, nullptr, nullptr};
  return forward(ctx, tape.constant(x));
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("config validation names the violated invariant") {
    auto c = ModelConfig::desk();
    c.input_height = 100;  // not divisible by 8
    CHECK_THROWS_AS(c.validate(), Error);
    c = ModelConfig::desk();
    c.stages = 1;
    CHECK_THROWS_AS(c.validate(), Error);
    c = ModelConfig::desk();
    c.num_classes = 3;
    CHECK_THROWS_AS(c.validate(), Error);
    CHECK_NOTHROW(ModelConfig::full().validate());
  }

  TEST_CASE("channel ladder caps at 16 * base") {
    ModelConfig c;
    c.base_channels = 2;
    c.stages = 6;
    CHECK(c.channels(0) == 2);
    CHECK(c.channels(4) == 32);
    CHECK(c.channels(5) == 32);
  }

  TEST_CASE("parameter count equals the per-layer audit") {
    for (auto v : {Variant::CSegNet, Variant::UNetBaseline}) {
      for (auto cfg : {ModelConfig::desk(), ModelConfig::full(), small_config()}) {
        cfg.variant = v;
        const auto params = build(cfg, 0);
        const auto expect = oracle::audit_parameter_count(cfg.stages, cfg.base_channels,
                                                          static_cast<int>(cfg.stem_strides.size()), cfg.num_classes,
                                                          v == Variant::CSegNet);
        CHECK(count_parameters(params) == expect);
      }
    }
    CHECK(count_parameters(build(ModelConfig::desk(), 0)) == 202384);
  }

  TEST_CASE("build is deterministic and seed dependent") {
    const auto cfg = small_config();
    const auto a = build(cfg, 3), b = build(cfg, 3), c = build(cfg, 4);
    for (const auto& [name, t] : a) CHECK(bit_equal(t, b.at(name)));
    CHECK_FALSE(bit_equal(a.at("head.main.weight"), c.at("head.main.weight")));
  }

  TEST_CASE("baseline has no DPP parameters") {
    for (const auto& [name, t] : build(small_config(Variant::UNetBaseline), 0)) CHECK(name.rfind("dpp.", 0) != 0);
  }

  TEST_CASE("forward shape ladder for both variants") {
    for (auto v : {Variant::CSegNet, Variant::UNetBaseline}) {
      auto cfg = ModelConfig::desk();
      cfg.variant = v;
      const auto params = build(cfg, 1);
      Rng rng(1);
      Tape<float> tape;
      VarMap<float> vars;
      auto out = run(cfg, params, testutil::random_tensor({2, 1, 128, 128}, rng), false, tape, vars);
      CHECK(out.main.shape() == Shape{2, 4, 128, 128});
      REQUIRE(out.aux.size() == 3);
      CHECK(out.aux[0].shape() == Shape{2, 4, 64, 64});
      CHECK(out.aux[1].shape() == Shape{2, 4, 32, 32});
      CHECK(out.aux[2].shape() == Shape{2, 4, 16, 16});
    }
  }

  TEST_CASE("wrong input size is a ShapeMismatch") {
    const auto cfg = small_config();
    const auto params = build(cfg, 0);
    Tape<float> tape;
    VarMap<float> vars;
    try {
      run(cfg, params, Tensor({1, 1, 16, 24}), false, tape, vars);
      FAIL("expected ShapeMismatch");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ShapeMismatch);
    }
  }

  TEST_CASE("eval forward is deterministic and probabilities are normalized") {
    const auto cfg = small_config();
    const auto params = build(cfg, 2);
    Rng rng(2);
    const auto x = testutil::random_tensor({2, 1, 24, 24}, rng);
    const auto p1 = predict_probabilities(cfg, params, x), p2 = predict_probabilities(cfg, params, x);
    CHECK(bit_equal(p1, p2));
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < 24; ++i)
        for (int j = 0; j < 24; ++j) {
          double s = 0;
          for (int c = 0; c < 4; ++c) s += p1.at(b, c, i, j);
          CHECK(std::abs(s - 1.0) < 1e-5);
        }
  }

  TEST_CASE("stem keeps the spatial size and reaches beyond a single 3x3 kernel") {
    // A lone 3x3 kernel reaches 3 px; the stride-4 branch, upsampled
    // bilinearly, spreads one coarse cell over more than two cells' width.
    auto cfg = small_config();
    auto params = build(cfg, 5);
    Tape<double> tape;
    const auto p64 = cast_params<double>(params);
    auto vars = bind_params(tape, p64, false);
    ForwardContext<double> ctx{&cfg, &vars, false, nullptr, nullptr};
    Tensor64 x({1, 1, 24, 24}, 0.0);
    auto base = stem(ctx, tape.constant(x)).value();
    CHECK(base.shape() == Shape{1, cfg.channels(0), 24, 24});
    std::set<std::pair<int, int>> touched;
    for (double amp : {1.0, -1.0}) {  // relu hides one sign of each response
      x.at(0, 0, 12, 12) = amp;
      auto probe = stem(ctx, tape.constant(x)).value();
      for (int r = 0; r < 24; ++r)
        for (int c = 0; c < 24; ++c)
          for (int ch = 0; ch < cfg.channels(0); ++ch)
            if (probe.at(0, ch, r, c) != base.at(0, ch, r, c)) touched.insert({r, c});
    }
    int lo = 24, hi = -1;
    for (auto [r, c] : touched)
      if (r == 12) {
        lo = std::min(lo, c);
        hi = std::max(hi, c);
      }
    CHECK(touched.size() >= 9);
    CHECK(hi - lo + 1 >= 9);
  }

  TEST_CASE("dpp block: five equal-width branches, shape preserved, zero weights give the fuse bias") {
    auto cfg = small_config();
    auto params = build(cfg, 6);
    for (int s = 0; s < cfg.stages; ++s) {
      const int c = cfg.channels(s);
      CHECK(params.at("dpp." + std::to_string(s) + ".fuse.weight").shape() == Shape{c, 5 * c, 1, 1});
    }
    Rng rng(6);
    Tape<float> tape;
    auto vars = bind_params(tape, params, false);
    ForwardContext<float> ctx{&cfg, &vars, false, nullptr, nullptr};
    const auto f = tape.constant(testutil::random_tensor({2, cfg.channels(1), 12, 12}, rng));
    DppBranches<float> br;
    auto y = dpp_block(ctx, 1, f, &br);
    CHECK(y.shape() == f.shape());
    REQUIRE(br.outputs.size() == 5);
    for (const auto& o : br.outputs) CHECK(o.shape() == f.shape());

    for (auto& [name, t] : params)
      if (name.rfind("dpp.1.", 0) == 0 && name.find("weight") != std::string::npos) t.fill(0.0f);
    params.at("dpp.1.fuse.bias").fill(0.375f);
    Tape<float> tape2;
    auto vars2 = bind_params(tape2, params, false);
    ForwardContext<float> ctx2{&cfg, &vars2, false, nullptr, nullptr};
    auto z = dpp_block<float>(ctx2, 1, tape2.constant(f.value())).value();
    for (auto v : z.data()) CHECK(v == 0.375f);

    Tape<float> tape3;
    auto tiny = tape3.constant(Tensor({1, cfg.channels(1), 2, 5}));
    auto vars3 = bind_params(tape3, params, false);
    ForwardContext<float> ctx3{&cfg, &vars3, false, nullptr, nullptr};
    try {
      dpp_block<float>(ctx3, 1, tiny);
      FAIL("expected InputTooSmall");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InputTooSmall);
    }
  }

  TEST_CASE("dilation-2 branch reaches 5 pixels, dilation-1 branch 3") {
    auto cfg = small_config();
    auto params = build(cfg, 8);
    Tape<double> tape;
    const auto p64 = cast_params<double>(params);
    auto vars = bind_params(tape, p64, false);
    ForwardContext<double> ctx{&cfg, &vars, false, nullptr, nullptr};
    const int c = cfg.channels(0);
    Tensor64 x({1, c, 15, 15}, 0.0);
    DppBranches<double> base;
    dpp_block(ctx, 0, tape.constant(x), &base);
    x.at(0, 0, 7, 7) = 5.0;
    DppBranches<double> probe;
    dpp_block(ctx, 0, tape.constant(x), &probe);
    auto extent = [&](int branch) {
      int lo = 15, hi = -1;
      for (int col = 0; col < 15; ++col) {
        bool changed = false;
        for (int ch = 0; ch < c; ++ch)
          changed |= probe.outputs[branch].value().at(0, ch, 7, col) != base.outputs[branch].value().at(0, ch, 7, col);
        if (changed) {
          lo = std::min(lo, col);
          hi = std::max(hi, col);
        }
      }
      return hi - lo + 1;
    };
    CHECK(extent(2) <= 3);
    CHECK(extent(3) <= 5);
    CHECK(extent(3) > 3);
  }

  TEST_CASE("every parameter reachable from the main head receives a finite nonzero gradient") {
    const auto cfg = small_config();
    const auto params = build(cfg, 9);
    Rng rng(9);
    Tape<float> tape;
    VarMap<float> vars;
    auto out = run(cfg, params, testutil::random_tensor({2, 1, 24, 24}, rng), true, tape, vars);
    LabelBatch lb{testutil::random_labels(rng, 2 * 24 * 24, 4), 2, 24, 24};
    auto loss = combined_loss<float>(out.main, {}, lb, {1.0});
    tape.backward(loss);
    for (const auto& [name, v] : vars) {
      if (is_buffer_name(name) || name.rfind("head.aux", 0) == 0) continue;
      REQUIRE_MESSAGE(tape.has_grad(v), name);
      const auto g = tape.grad(v);
      double norm = 0;
      for (auto e : g.data()) norm += double(e) * e;
      CHECK_MESSAGE(std::isfinite(norm), name);
      CHECK_MESSAGE(norm > 0, name);
    }
  }

  TEST_CASE("architecture summary lists every layer") {
    const auto cfg = ModelConfig::desk();
    const auto s = architecture_summary(cfg, build(cfg, 0));
    CHECK(s.find("202384") != std::string::npos);
    CHECK(s.find("dpp.3") != std::string::npos);
  }
}
