#pragma once

// Finite-difference verification of taped gradients (64-bit).
//
// For every checked coordinate of every leaf the central difference
// (L(x+h) - L(x-h)) / 2h is compared with the taped gradient. The error of a
// leaf is ||g_tape - g_fd|| / max(||g_tape||, ||g_fd||, 1e-8) over the
// checked coordinates; a case reports the worst leaf. Coordinates where the
// central difference changes with the step size (a kink such as leaky-ReLU
// at zero lies inside the stencil) are excluded and counted.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tracewarp/tensor.hpp"

namespace tracewarp {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t skipped = 0;  // coordinates whose stencil straddles a kink
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Coordinates sampled per leaf; 0 checks all of them.
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 0;
};

// `loss` rebuilds the scalar loss from the current leaf values each call.
GradCheckResult check_gradients(const std::string& name, const std::vector<Tensor<double>>& leaves,
                                const std::function<Tensor<double>()>& loss,
                                const GradCheckOptions& options = {});

struct GradCheckCase {
  std::string name;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

// Every primitive op plus the composite objectives used in training.
std::vector<GradCheckCase> gradcheck_cases();
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed);

}  // namespace tracewarp
