#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace csegnet {

struct GradSuiteEntry {
  std::string op;
  std::string detail;  // shapes / options of this probe
  double max_rel_error = 0.0;
};

struct GradSuiteOptions {
  int shapes_per_op = 5;
  double h = 1e-3;
  std::uint64_t seed = 0;
};

/// Finite-difference probes of every differentiable op and of a miniature full
/// model, each on `shapes_per_op` random small shapes, evaluated in 64-bit.
std::vector<GradSuiteEntry> run_gradient_suite(const GradSuiteOptions& options = {});

}  // namespace csegnet
