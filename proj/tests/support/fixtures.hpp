#pragma once

// Hand-set model parameters with known outputs.

#include "tracewarp/data.hpp"
#include "tracewarp/model.hpp"
#include "tracewarp/ops.hpp"

namespace tracewarp::fixture {

// Zero every parameter of a decoder, then route the input image through the
// full-resolution layer as +x and -x so the head reproduces s*x before tanh.
inline void pass_through(DecoderParams<float>& d, float s) {
  for (auto& c : d.up) {
    c.weight = Tensor<float>::zeros(c.weight.shape());
    c.bias = Tensor<float>::zeros(c.bias.shape());
  }
  auto& full = d.full;
  const std::size_t in = full.weight.dim(1);
  std::vector<float> fw(full.weight.numel(), 0.0f);
  fw[0 * in * 9 + (in - 1) * 9 + 4] = 1.0f;
  fw[1 * in * 9 + (in - 1) * 9 + 4] = -1.0f;
  full.weight = Tensor<float>::from(full.weight.shape(), fw);
  full.bias = Tensor<float>::zeros(full.bias.shape());
  std::vector<float> hw(d.head.weight.numel(), 0.0f);
  hw[0 * 9 + 4] = s / float(1 + kLeakySlope);
  hw[1 * 9 + 4] = -s / float(1 + kLeakySlope);
  d.head.weight = Tensor<float>::from(d.head.weight.shape(), hw);
  d.head.bias = Tensor<float>::zeros(d.head.bias.shape());
}

inline void zero_head(Conv<float>& head) {
  head.weight = Tensor<float>::zeros(head.weight.shape());
  head.bias = Tensor<float>::zeros(head.bias.shape());
}

// A pair whose source and reference are the same two-level image: the
// feature region at 0.6, everything else at -0.4.
inline ImagePair two_level_pair(std::size_t index, std::size_t size = 64) {
  SynthConfig cfg;
  cfg.image_size = size;
  cfg.deform_amplitude = 0.0;
  cfg.seed = 5;
  auto pair = generate_pair(cfg, pair_id(index));
  const auto region = feature_region(pair.feature, size, size);
  std::vector<float> v(size * size);
  for (std::size_t p = 0; p < v.size(); ++p) v[p] = region[p] ? 0.6f : -0.4f;
  pair.source = Tensor<float>::from({1, 1, size, size}, v);
  pair.reference = Tensor<float>::from({1, 1, size, size}, v);
  return pair;
}

}  // namespace tracewarp::fixture
