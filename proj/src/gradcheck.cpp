#include "csegnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace csegnet {
namespace {

double evaluate(const ScalarFn& f, const Tensor64& x) {
  Tape<double> tape;
  auto root = f(tape, tape.constant(x));
  const auto& v = root.value();
  require(v.numel() == 1, ErrorKind::NonScalarRoot, "grad_check function must return a scalar");
  const double y = v[0];
  if (!std::isfinite(y)) fail(ErrorKind::NonFiniteEvaluation, "function is not finite at a probe point");
  return y;
}

std::vector<bool> relu_pattern(const ScalarFn& f, const Tensor64& x) {
  Tape<double> tape;
  f(tape, tape.constant(x));
  std::vector<bool> bits;
  for (std::size_t id = 0; id < tape.size(); ++id) {
    if (tape.op_at(id) != "relu") continue;
    for (double v : tape.value_at(tape.inputs_at(id).front()).data()) bits.push_back(v > 0.0);
  }
  return bits;
}

}  // namespace

std::int64_t kink_crossings(const ScalarFn& f, const Tensor64& x, double h) {
  const auto base = relu_pattern(f, x);
  std::int64_t crossings = 0;
  Tensor64 probe = x;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    bool crossed = relu_pattern(f, probe) != base;
    probe[i] = orig - h;
    crossed = crossed || relu_pattern(f, probe) != base;
    probe[i] = orig;
    crossings += crossed;
  }
  return crossings;
}

Tensor64 analytic_gradient(const ScalarFn& f, const Tensor64& x) {
  Tape<double> tape;
  auto xv = tape.leaf(x, true);
  auto root = f(tape, xv);
  require(root.value().numel() == 1, ErrorKind::NonScalarRoot, "grad_check function must return a scalar");
  if (!std::isfinite(root.value()[0])) fail(ErrorKind::NonFiniteEvaluation, "function is not finite at x");
  tape.backward(root);
  return tape.grad(xv);
}

double grad_check(const ScalarFn& f, const Tensor64& x, double h) {
  const Tensor64 analytic = analytic_gradient(f, x);
  double worst = 0.0;
  Tensor64 probe = x;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = evaluate(f, probe);
    probe[i] = orig - h;
    const double down = evaluate(f, probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[i];
    worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
  }
  return worst;
}

}  // namespace csegnet
