#pragma once

// Differentiable primitives. Shapes must match exactly; the only implicit
// broadcasts are the per-channel conv bias and scalar-tensor arithmetic.

#include "tracewarp/tensor.hpp"

namespace tracewarp {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T offset);

template <typename T> Tensor<T> abs(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& a, T slope);

// Reductions to a shape-[1] tensor.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

template <typename T> Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, std::size_t axis);

// Cross-correlation (no kernel flip), zero padding. input [N,C,H,W],
// weight [O,C,kh,kw], bias [O]. Kernel extents must be odd.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding);

// [N,C,H,W] -> [N,C,2H,2W], each pixel copied into a 2x2 block.
template <typename T> Tensor<T> upsample_nearest2x(const Tensor<T>& input);

}  // namespace tracewarp
