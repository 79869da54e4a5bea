#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tracewarp/model.hpp"

namespace tracewarp {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moments are stored per parameter tensor, in the order of the parameter
// list the state was created for.
struct AdamState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::uint64_t step = 0;

  static AdamState for_params(const std::vector<NamedParam<float>>& params);
};

// One bias-corrected Adam step on a single tensor; `step` is the 1-based
// step number after incrementing.
void adam_update(std::span<float> param, std::span<const float> grad, std::span<float> m,
                 std::span<float> v, std::uint64_t step, const AdamOptions& opt);

// Increments state.step and updates every parameter (missing gradients count
// as zero).
void adam_update(const std::vector<NamedParam<float>>& params, AdamState& state, const AdamOptions& opt);

}  // namespace tracewarp
