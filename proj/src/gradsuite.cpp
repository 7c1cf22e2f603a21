#include "csegnet/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "csegnet/gradcheck.hpp"
#include "csegnet/loss.hpp"
#include "csegnet/model.hpp"
#include "csegnet/ops.hpp"

namespace csegnet {
namespace {

using Rng = std::mt19937_64;
using V = Var<double>;

Tensor64 random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor64 t(shape, 0.0);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

int pick(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

/// sum(y * R) with a fixed pseudo-random R, so every output coordinate matters.
V project(Tape<double>& t, V y, std::uint64_t seed) {
  Rng rng(seed);
  return sum_all(mul(y, t.constant(random_tensor(y.shape(), rng))));
}

std::string dims(const Shape& s) { return shape_str(s); }

struct Suite {
  GradSuiteOptions opt;
  Rng rng;
  std::vector<GradSuiteEntry> out;

  void check(const std::string& op, const std::string& detail, const ScalarFn& f, const Tensor64& x) {
    out.push_back({op, detail, grad_check(f, x, opt.h)});
  }
  std::uint64_t seed() { return rng(); }
};

void conv_probes(Suite& s) {
  for (int i = 0; i < s.opt.shapes_per_op; ++i) {
    const int B = pick(s.rng, 1, 2), C = pick(s.rng, 1, 3), H = pick(s.rng, 4, 7), W = pick(s.rng, 4, 7);
    const int k = pick(s.rng, 0, 1) ? 3 : 1, stride = pick(s.rng, 1, 2), dil = pick(s.rng, 1, 2);
    const bool depthwise = i % 2 == 1;
    const int groups = depthwise ? C : 1;
    const int O = depthwise ? C * pick(s.rng, 1, 2) : pick(s.rng, 1, 3);
    const Padding pad = (i % 3 == 2 && (k - 1) * dil + 1 <= std::min(H, W)) ? Padding::Valid : Padding::Same;
    const auto spec = Conv2dSpec{stride, stride, dil, dil, pad, groups};
    const auto x = random_tensor({B, C, H, W}, s.rng);
    const auto w = random_tensor({O, C / groups, k, k}, s.rng);
    const auto b = random_tensor({O}, s.rng);
    const auto ps = s.seed();
    const std::string detail = "x" + dims(x.shape()) + " w" + dims(w.shape()) + " s" + std::to_string(stride) + " d" +
                               std::to_string(dil) + (pad == Padding::Same ? " same" : " valid") + " g" +
                               std::to_string(groups);
    s.check("conv2d", detail + " wrt x",
            [&](Tape<double>& t, V v) { return project(t, conv2d<double>(v, t.constant(w), t.constant(b), spec), ps); }, x);
    s.check("conv2d", detail + " wrt w",
            [&](Tape<double>& t, V v) { return project(t, conv2d<double>(t.constant(x), v, t.constant(b), spec), ps); }, w);
    s.check("conv2d", detail + " wrt bias",
            [&](Tape<double>& t, V v) { return project(t, conv2d<double>(t.constant(x), t.constant(w), v, spec), ps); }, b);
  }
}

void separable_probes(Suite& s) {
  for (int i = 0; i < s.opt.shapes_per_op; ++i) {
    const int B = pick(s.rng, 1, 2), C = pick(s.rng, 1, 3), O = pick(s.rng, 1, 3);
    const int H = pick(s.rng, 4, 7), W = pick(s.rng, 4, 7), stride = pick(s.rng, 1, 2), dil = pick(s.rng, 1, 2);
    const auto x = random_tensor({B, C, H, W}, s.rng);
    const auto dw = random_tensor({C, 1, 3, 3}, s.rng);
    const auto pw = random_tensor({O, C, 1, 1}, s.rng);
    const auto ps = s.seed();
    const std::string detail = "x" + dims(x.shape()) + " out " + std::to_string(O) + " s" + std::to_string(stride) +
                               " d" + std::to_string(dil);
    auto run = [=](Tape<double>& t, V a, V b, V c) { return project(t, separable_conv2d(a, b, c, stride, dil), ps); };
    s.check("separable_conv2d", detail + " wrt x",
            [&](Tape<double>& t, V v) { return run(t, v, t.constant(dw), t.constant(pw)); }, x);
    s.check("separable_conv2d", detail + " wrt depthwise",
            [&](Tape<double>& t, V v) { return run(t, t.constant(x), v, t.constant(pw)); }, dw);
    s.check("separable_conv2d", detail + " wrt pointwise",
            [&](Tape<double>& t, V v) { return run(t, t.constant(x), t.constant(dw), v); }, pw);
  }
}

void pool_probes(Suite& s) {
  for (int i = 0; i < s.opt.shapes_per_op; ++i) {
    const int window = i == 0 ? 3 : pick(s.rng, 2, 3), stride = i == 0 ? 3 : pick(s.rng, 1, 3);
    const auto x = random_tensor({pick(s.rng, 1, 2), pick(s.rng, 1, 3), pick(s.rng, 3, 8), pick(s.rng, 3, 8)}, s.rng);
    const auto ps = s.seed();
    s.check("avg_pool2d",
            "x" + dims(x.shape()) + " window " + std::to_string(window) + " stride " + std::to_string(stride),
            [&](Tape<double>& t, V v) { return project(t, avg_pool2d(v, window, stride), ps); }, x);
  }
}

void resize_probes(Suite& s) {
  for (int i = 0; i < s.opt.shapes_per_op; ++i) {
    const auto x = random_tensor({pick(s.rng, 1, 2), pick(s.rng, 1, 2), pick(s.rng, 2, 6), pick(s.rng, 2, 6)}, s.rng);
    const int oh = pick(s.rng, 1, 9), ow = pick(s.rng, 1, 9);
    const auto ps = s.seed();
    s.check("bilinear_resize", "x" + dims(x.shape()) + " -> " + std::to_string(oh) + "x" + std::to_string(ow),
            [&](Tape<double>& t, V v) { return project(t, bilinear_resize(v, oh, ow), ps); }, x);
  }
}

void batch_norm_probes(Suite& s) {
  for (int i = 0; i < s.opt.shapes_per_op; ++i) {
    const int C = pick(s.rng, 1, 3);
    const auto x = random_tensor({pick(s.rng, 1, 3), C, pick(s.rng, 2, 4), pick(s.rng, 2, 4)}, s.rng);
    const auto gamma = random_tensor({C}, s.rng, 0.5, 1.5);
    const auto beta = random_tensor({C}, s.rng);
    const auto rm = random_tensor({C}, s.rng);
    const auto rv = random_tensor({C}, s.rng, 0.5, 2.0);
    const auto ps = s.seed();
    const bool training = i != s.opt.shapes_per_op - 1;  // last probe covers eval mode
    const std::string detail = "x" + dims(x.shape()) + (training ? " train" : " eval");
    auto run = [&, training](Tape<double>& t, V a, V g, V b) {
      return project(t, batch_norm(a, g, b, rm, rv, training), ps);
    };
    s.check("batch_norm", detail + " wrt x",
            [&](Tape<double>& t, V v) { return run(t, v, t.constant(gamma), t.constant(beta)); }, x);
    s.check("batch_norm", detail + " wrt gamma",
            [&](Tape<double>& t, V v) { return run(t, t.constant(x), v, t.constant(beta)); }, gamma);
    s.check("batch_norm", detail + " wrt beta",
            [&](Tape<double>& t, V v) { return run(t, t.constant(x), t.constant(gamma), v); }, beta);
  }
}

void relu_probes(Suite& s) {
  for (int i = 0; i < s.opt.shapes_per_op; ++i) {
    auto x = random_tensor({pick(s.rng, 1, 2), pick(s.rng, 1, 3), pick(s.rng, 2, 5), pick(s.rng, 2, 5)}, s.rng, 0.05, 1.0);
    for (auto& v : x.data())
      if (s.rng() & 1) v = -v;  // keep every entry at least 0.05 away from the kink
    const auto ps = s.seed();
    s.check("relu", "x" + dims(x.shape()), [&](Tape<double>& t, V v) { return project(t, relu(v), ps); }, x);
  }
}

void softmax_probes(Suite& s) {
  for (int i = 0; i < s.opt.shapes_per_op; ++i) {
    const auto x = random_tensor({pick(s.rng, 1, 2), pick(s.rng, 2, 4), pick(s.rng, 1, 4), pick(s.rng, 1, 4)}, s.rng, -3, 3);
    const auto ps = s.seed();
    s.check("softmax", "x" + dims(x.shape()), [&](Tape<double>& t, V v) { return project(t, softmax_channels(v), ps); },
            x);
  }
}

std::vector<std::uint8_t> random_labels(Rng& rng, std::size_t n, int classes) {
  std::vector<std::uint8_t> l(n);
  for (auto& v : l) v = static_cast<std::uint8_t>(rng() % static_cast<std::uint64_t>(classes));
  return l;
}

void gdl_probes(Suite& s) {
  for (int i = 0; i < s.opt.shapes_per_op; ++i) {
    const int B = pick(s.rng, 1, 2), N = pick(s.rng, 2, 4), H = pick(s.rng, 2, 5), W = pick(s.rng, 2, 5);
    auto p = random_tensor({B, N, H, W}, s.rng, 0.05, 1.0);
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          double sum = 0;
          for (int n = 0; n < N; ++n) sum += p.at(b, n, h, w);
          for (int n = 0; n < N; ++n) p.at(b, n, h, w) /= sum;
        }
    const auto target =
        one_hot<double>(random_labels(s.rng, static_cast<std::size_t>(B * H * W), N), B, H, W, N);
    GdlOptions unchecked;
    unchecked.validate = false;  // +/-h probes leave the simplex
    s.check("gdl", "p" + dims(p.shape()), [&](Tape<double>&, V v) { return gdl(v, target, unchecked); }, p);
  }
}

void combined_loss_probes(Suite& s) {
  for (int i = 0; i < s.opt.shapes_per_op; ++i) {
    const int B = pick(s.rng, 1, 2), N = pick(s.rng, 2, 4), H = 4 * pick(s.rng, 1, 2);
    const LabelBatch labels{random_labels(s.rng, static_cast<std::size_t>(B * H * H), N), B, H, H};
    const auto main = random_tensor({B, N, H, H}, s.rng, -2, 2);
    const auto aux1 = random_tensor({B, N, H / 2, H / 2}, s.rng, -2, 2);
    const auto aux2 = random_tensor({B, N, H / 4, H / 4}, s.rng, -2, 2);
    const std::vector<double> weights{1.0, 0.4, 0.2};
    const std::string detail = "main" + dims(main.shape()) + " + 2 aux";
    s.check("combined_loss", detail + " wrt main",
            [&](Tape<double>& t, V v) {
              return combined_loss(v, {t.constant(aux1), t.constant(aux2)}, labels, weights);
            },
            main);
    s.check("combined_loss", detail + " wrt aux",
            [&](Tape<double>& t, V v) {
              return combined_loss(t.constant(main), {v, t.constant(aux2)}, labels, weights);
            },
            aux1);
  }
}

// Central differences are only an oracle where f is smooth on [x-h, x+h]; a
// relu input changing sign inside that interval gives O(1) errors. Instances
// are redrawn until none of the probed coordinates straddles a kink and the
// gradient is not identically zero.
constexpr int kMaxModelAttempts = 25;

void model_probes(Suite& s) {
  struct Mini {
    int batch, size, stages, base;
  };
  const std::vector<Mini> minis{{1, 8, 2, 1}, {2, 8, 2, 1}, {1, 12, 3, 1}, {1, 12, 2, 1}, {1, 8, 2, 2}};
  const std::vector<std::string> targets{"input", "head.main.weight", "dpp.0.fuse.weight", "enc.1.sep1.dw.weight",
                                         "stem.b1.weight"};
  for (int i = 0; i < s.opt.shapes_per_op; ++i) {
    const auto m = minis[static_cast<std::size_t>(i) % minis.size()];
    ModelConfig cfg;
    cfg.stages = m.stages;
    cfg.base_channels = m.base;
    cfg.input_height = cfg.input_width = m.size;
    const auto weights = cfg.loss_weights();
    const std::string detail = "x" + dims(Shape{m.batch, 1, m.size, m.size}) + " stages " +
                               std::to_string(m.stages) + " base " + std::to_string(m.base);
    const bool training = i % 2 == 0;

    for (const auto& target : targets) {
      GradSuiteEntry entry{"model_forward", detail + (training ? " train" : " eval") + " wrt " + target,
                           std::numeric_limits<double>::infinity()};
      for (int attempt = 1; attempt <= kMaxModelAttempts; ++attempt) {
        const auto params = cast_params<double>(build(cfg, s.seed()));
        const auto x = random_tensor({m.batch, 1, m.size, m.size}, s.rng, -2, 2);
        const LabelBatch labels{
            random_labels(s.rng, static_cast<std::size_t>(m.batch * m.size * m.size), cfg.num_classes), m.batch,
            m.size, m.size};
        ScalarFn f = [&](Tape<double>& t, V v) {
          VarMap<double> vars;
          for (const auto& [name, value] : params) vars.emplace(name, t.constant(value));
          V input = target == "input" ? v : t.constant(x);
          if (target != "input") vars.at(target) = v;
          ForwardContext<double> ctx{&cfg, &vars, training, nullptr, nullptr};
          auto out = forward(ctx, input);
          return combined_loss(out.main, out.aux, labels, weights);
        };
        const Tensor64& probe = target == "input" ? x : params.at(target);
        if (kink_crossings(f, probe, s.opt.h) != 0) continue;
        // an identically-zero gradient (every path through a dead relu) checks nothing
        const auto g = analytic_gradient(f, probe);
        if (std::none_of(g.data().begin(), g.data().end(), [](double v) { return std::abs(v) > 1e-9; })) continue;
        entry.max_rel_error = grad_check(f, probe, s.opt.h);
        entry.detail += " (instance " + std::to_string(attempt) + ")";
        break;
      }
      if (!std::isfinite(entry.max_rel_error)) entry.detail += " (no kink-free instance found)";
      s.out.push_back(std::move(entry));
    }
  }
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(const GradSuiteOptions& options) {
  Suite s{options, Rng(options.seed), {}};
  conv_probes(s);
  separable_probes(s);
  pool_probes(s);
  resize_probes(s);
  batch_norm_probes(s);
  relu_probes(s);
  softmax_probes(s);
  gdl_probes(s);
  combined_loss_probes(s);
  model_probes(s);
  return s.out;
}

}  // namespace csegnet
