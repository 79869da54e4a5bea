#pragma once

// Dual-stream generator (shared encoder, translation decoder, velocity
// decoder) and the two conditional patch discriminators.
//
// Layer conventions: 3x3 stride-2 convolutions going down, nearest 2x
// upsampling followed by a 3x3 convolution going up, U-Net skips from every
// encoder stage (and the input image at full resolution), leaky-ReLU(0.2)
// activations, tanh translation head, linear zero-initialised velocity head.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tracewarp/deformation.hpp"
#include "tracewarp/tensor.hpp"

namespace tracewarp {

struct ModelConfig {
  std::size_t image_size = 64;
  std::size_t channels = 1;
  double width_factor = 0.125;
  std::array<std::size_t, 5> encoder_channels{64, 128, 256, 512, 512};
  std::array<std::size_t, 3> discriminator_channels{64, 128, 256};
  // false gives each decoder its own encoder (two independent networks).
  bool shared_encoder = true;

  void validate() const;
  std::array<std::size_t, 5> scaled_encoder() const;
  std::array<std::size_t, 3> scaled_discriminator() const;
};

inline constexpr double kLeakySlope = 0.2;

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct Conv {
  Tensor<T> weight;
  Tensor<T> bias;
  std::size_t stride = 1;
  std::size_t padding = 1;

  Tensor<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
struct EncoderParams {
  std::array<Conv<T>, 5> down;
};

template <typename T>
struct DecoderParams {
  std::array<Conv<T>, 4> up;  // 2->4, 4->8, 8->16, 16->32 (at 64x64)
  Conv<T> full;               // full resolution, sees the input image too
  Conv<T> head;
};

template <typename T>
struct GeneratorParams {
  EncoderParams<T> encoder;
  EncoderParams<T> encoder_f;  // only populated when the encoder is not shared
  DecoderParams<T> decoder_g;
  DecoderParams<T> decoder_f;
  bool shared_encoder = true;
};

template <typename T>
struct DiscriminatorParams {
  std::array<Conv<T>, 3> down;
  Conv<T> head;
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  GeneratorParams<T> generator;
  DiscriminatorParams<T> d_trans;
  DiscriminatorParams<T> d_warp;

  // Deterministic initialisation; the same seed yields the same values in
  // either precision (drawn in double, then rounded).
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

  std::vector<NamedParam<T>> generator_parameters() const;
  std::vector<NamedParam<T>> discriminator_parameters() const;
  std::vector<NamedParam<T>> all_parameters() const;
  std::size_t parameter_count() const;

  template <typename U>
  ModelParams<U> cast() const;
};

template <typename T>
struct FeaturePyramid {
  Tensor<T> input;
  std::array<Tensor<T>, 5> stages;  // H/2 ... H/32
};

template <typename T>
struct GeneratorOutput {
  Tensor<T> y_trans;
  Tensor<T> y_warp;
  VelocityField<T> v;
  DisplacementField<T> u;
  DeformationField<T> phi;
};

template <typename T>
FeaturePyramid<T> encode(const Tensor<T>& x, const EncoderParams<T>& p);
template <typename T>
Tensor<T> decode_translate(const FeaturePyramid<T>& feats, const GeneratorParams<T>& p);
template <typename T>
VelocityField<T> decode_velocity(const FeaturePyramid<T>& feats, const GeneratorParams<T>& p);
template <typename T>
GeneratorOutput<T> forward(const Tensor<T>& x, const GeneratorParams<T>& p,
                           int steps = kDefaultIntegrationSteps);
// Patch score map [N,1,H/8,W/8] for the condition/candidate channel stack.
template <typename T>
Tensor<T> discriminate(const Tensor<T>& x_cond, const Tensor<T>& candidate,
                       const DiscriminatorParams<T>& d);

template <typename T>
void set_requires_grad(const std::vector<NamedParam<T>>& params, bool on);
template <typename T>
void zero_grad(const std::vector<NamedParam<T>>& params);

}  // namespace tracewarp
