#pragma once

// Stationary-velocity deformation model.
//
// Coordinate convention, used everywhere in the library: fields are
// [N,2,H,W] tensors in pixel units, channel 0 is the row component and
// channel 1 the column component, origin at the top-left pixel centre.
// Sampling outside [0,H-1]x[0,W-1] clamps to the border.

#include "tracewarp/tensor.hpp"

namespace tracewarp {

// v: pixels per unit time, integrated over T = 1.
template <typename T>
struct VelocityField {
  Tensor<T> grid;
};

// u: pixel offsets.
template <typename T>
struct DisplacementField {
  Tensor<T> grid;
};

// phi = Id + u in absolute pixel coordinates. The displacement it was built
// from is kept alongside so that phi - Id is recovered without rounding.
template <typename T>
struct DeformationField {
  Tensor<T> grid;
  Tensor<T> displacement;
};

inline constexpr int kDefaultIntegrationSteps = 7;

// Pixel coordinates of every grid point, shape [N,2,H,W].
template <typename T>
Tensor<T> identity_grid(std::size_t n, std::size_t h, std::size_t w);

// Scaling and squaring: u = v / 2^steps, then `steps` self-compositions
// u <- u o (Id + u) + u, each sampled with the bilinear warp.
template <typename T>
DisplacementField<T> integrate_velocity(const VelocityField<T>& v,
                                        int steps = kDefaultIntegrationSteps);

template <typename T>
DeformationField<T> to_deformation(const DisplacementField<T>& u);
template <typename T>
DisplacementField<T> to_displacement(const DeformationField<T>& phi);
// Wraps an absolute coordinate grid (e.g. read from disk).
template <typename T>
DeformationField<T> deformation_from_grid(const Tensor<T>& grid);

// Bilinear resampling m o phi with border clamping; differentiable in both.
template <typename T>
Tensor<T> warp(const Tensor<T>& image, const DeformationField<T>& phi);
// Same kernel, driven by a raw absolute-coordinate tensor.
template <typename T>
Tensor<T> warp(const Tensor<T>& image, const Tensor<T>& coords);

// Forward-difference Jacobian determinant, shape [N,1,H-1,W-1]. Not taped.
template <typename T>
Tensor<T> jacobian_determinant(const DeformationField<T>& phi);
// Fraction of non-positive entries of a determinant map.
template <typename T>
double fold_fraction(const Tensor<T>& determinants);

// Mean over pixels (and batch) of squared forward differences of both
// channels in both directions.
template <typename T>
Tensor<T> smoothness_loss(const VelocityField<T>& v);

}  // namespace tracewarp
