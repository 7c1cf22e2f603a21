#pragma once

#include <cstdint>
#include <functional>

#include "csegnet/autograd.hpp"

namespace csegnet {

/// A scalar-valued function built on a 64-bit tape.
using ScalarFn = std::function<Var<double>(Tape<double>&, Var<double>)>;

/// Reverse-mode gradient of f at x.
Tensor64 analytic_gradient(const ScalarFn& f, const Tensor64& x);

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
/// Throws NonFiniteEvaluation if f is not finite at x or any +/-h perturbation.
double grad_check(const ScalarFn& f, const Tensor64& x, double h = 1e-3);

/// Number of coordinates i for which some relu input changes sign between
/// x - h*e_i, x and x + h*e_i. Central differences are not a valid derivative
/// oracle across such a kink, so probe instances should have none.
std::int64_t kink_crossings(const ScalarFn& f, const Tensor64& x, double h = 1e-3);

}  // namespace csegnet
