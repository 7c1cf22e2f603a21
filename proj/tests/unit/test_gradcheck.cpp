#include <doctest.h>

#include <set>

#include "csegnet/gradcheck.hpp"
#include "csegnet/gradsuite.hpp"
#include "csegnet/loss.hpp"
#include "csegnet/model.hpp"
#include "csegnet/ops.hpp"
#include "helpers.hpp"

using namespace csegnet;

TEST_SUITE("gradcheck") {
  TEST_CASE("detects a wrong backward rule") {
    // y = x^2 recorded with a deliberately wrong derivative 3x
    ScalarFn f = [](Tape<double>& t, Var<double> x) {
      auto y = t.record(
          Tensor64({1}, x.value()[0] * x.value()[0]), {x.id},
          [x](Tape<double>& tp, const Tensor64& g) { tp.accumulate(x.id, Tensor64({1}, 3.0 * x.value()[0] * g[0])); });
      return sum_all(y);
    };
    CHECK(grad_check(f, Tensor64::from({1.5})) > 0.1);
  }

  TEST_CASE("counts probes straddling a relu kink") {
    ScalarFn f = [](Tape<double>&, Var<double> x) { return sum_all(relu(x)); };
    CHECK(kink_crossings(f, Tensor64::from({0.5, -0.0005, 2.0}), 1e-3) == 1);
    CHECK(kink_crossings(f, Tensor64::from({0.5, -0.5}), 1e-3) == 0);
  }

  TEST_CASE("non-finite evaluations are reported") {
    ScalarFn f = [](Tape<double>& t, Var<double> x) {
      return sum_all(div(t.constant(Tensor64::from({1.0})), x));
    };
    CHECK_THROWS_AS(grad_check(f, Tensor64::from({1e-300})), Error);
  }

  TEST_CASE("full model in training mode at a small step") {
    ModelConfig cfg;
    cfg.stages = 3;
    cfg.base_channels = 2;
    cfg.input_height = cfg.input_width = 12;
    const auto params = cast_params<double>(build(cfg, 21));
    testutil::Rng rng(21);
    const auto x = testutil::random_tensor<double>({2, 1, 12, 12}, rng);
    const LabelBatch lb{testutil::random_labels(rng, 2 * 144, 4), 2, 12, 12};
    for (const std::string target : {"input", "dpp.1.b3x3_d2.weight", "dec.0.sep1.pw.weight"}) {
      ScalarFn f = [&](Tape<double>& t, Var<double> v) {
        VarMap<double> vars;
        for (const auto& [name, value] : params) vars.emplace(name, t.constant(value));
        if (target != "input") vars.at(target) = v;
        ForwardContext<double> ctx{&cfg, &vars, true, nullptr, nullptr};
        auto out = forward(ctx, target == "input" ? v : t.constant(x));
        return combined_loss(out.main, out.aux, lb, cfg.loss_weights());
      };
      CHECK_MESSAGE(grad_check(f, target == "input" ? x : params.at(target), 1e-5) < 1e-4, target);
    }
  }

  TEST_CASE("the suite covers every op") {
    GradSuiteOptions opt;
    opt.shapes_per_op = 1;
    std::set<std::string> ops;
    for (const auto& e : run_gradient_suite(opt)) {
      ops.insert(e.op);
      CHECK_MESSAGE(e.max_rel_error < 1e-4, e.op << " " << e.detail);
    }
    for (const char* op : {"conv2d", "separable_conv2d", "avg_pool2d", "bilinear_resize", "batch_norm", "relu",
                           "softmax", "gdl", "combined_loss", "model_forward"})
      CHECK_MESSAGE(ops.count(op) == 1, op);
  }
}
