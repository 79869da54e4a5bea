#include "tracewarp/ops.hpp"

#include <Eigen/Core>
#include <cmath>

namespace tracewarp {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

// Elementwise unary op with a pointwise derivative computed from the input
// value x and the output value y.
template <typename T, typename F, typename D>
Tensor<T> unary(const char* op, const Tensor<T>& a, F f, D dfdx) {
  const auto& in = a.node()->value;
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_result<T>(op, a.shape(), std::move(out), {a.node()}, [dfdx](Node<T>& self) {
    auto& x = *self.inputs[0];
    if (!x.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      x.grad[i] += self.grad[i] * dfdx(x.value[i], self.value[i]);
  });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  const auto& x = a.node()->value;
  const auto& y = b.node()->value;
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return make_result<T>("add", a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (auto& in : self.inputs)
      if (in->requires_grad)
        for (std::size_t i = 0; i < self.grad.size(); ++i) in->grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a, b);
  const auto& x = a.node()->value;
  const auto& y = b.node()->value;
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& l = *self.inputs[0];
    auto& r = *self.inputs[1];
    if (l.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) l.grad[i] += self.grad[i];
    if (r.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) r.grad[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  const auto& x = a.node()->value;
  const auto& y = b.node()->value;
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& l = *self.inputs[0];
    auto& r = *self.inputs[1];
    if (l.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) l.grad[i] += self.grad[i] * r.value[i];
    if (r.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) r.grad[i] += self.grad[i] * l.value[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary<T>(
      "scale", a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset) {
  return unary<T>(
      "add_scalar", a, [offset](T x) { return x + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return unary<T>(
      "abs", a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary<T>(
      "square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary<T>(
      "tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  return unary<T>(
      "leaky_relu", a, [slope](T x) { return x > T(0) ? x : slope * x; },
      [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.node()->value) total += v;
  return make_result<T>("sum", {1}, {total}, {a.node()}, [](Node<T>& self) {
    auto& x = *self.inputs[0];
    for (auto& g : x.grad) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.node()->value) total += v;
  const T inv = T(1) / static_cast<T>(a.numel());
  return make_result<T>("mean", {1}, {total * inv}, {a.node()}, [inv](Node<T>& self) {
    auto& x = *self.inputs[0];
    const T g = self.grad[0] * inv;
    for (auto& gx : x.grad) gx += g;
  });
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, std::size_t axis) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != sb.size() || axis >= sa.size())
    throw ShapeError("concat: rank mismatch or bad axis for " + shape_str(sa) + " and " +
                     shape_str(sb));
  for (std::size_t i = 0; i < sa.size(); ++i)
    if (i != axis && sa[i] != sb[i])
      throw ShapeError("concat: off-axis shape mismatch " + shape_str(sa) + " vs " + shape_str(sb));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= sa[i];
  for (std::size_t i = axis + 1; i < sa.size(); ++i) inner *= sa[i];
  const std::size_t ca = sa[axis] * inner, cb = sb[axis] * inner;
  Shape out_shape = sa;
  out_shape[axis] += sb[axis];
  std::vector<T> out(outer * (ca + cb));
  const auto& x = a.node()->value;
  const auto& y = b.node()->value;
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.begin() + o * ca, ca, out.begin() + o * (ca + cb));
    std::copy_n(y.begin() + o * cb, cb, out.begin() + o * (ca + cb) + ca);
  }
  return make_result<T>("concat", out_shape, std::move(out), {a.node(), b.node()},
                        [outer, ca, cb](Node<T>& self) {
                          auto& l = *self.inputs[0];
                          auto& r = *self.inputs[1];
                          for (std::size_t o = 0; o < outer; ++o) {
                            const T* g = self.grad.data() + o * (ca + cb);
                            if (l.requires_grad)
                              for (std::size_t i = 0; i < ca; ++i) l.grad[o * ca + i] += g[i];
                            if (r.requires_grad)
                              for (std::size_t i = 0; i < cb; ++i) r.grad[o * cb + i] += g[ca + i];
                          }
                        });
}

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w, o, kh, kw, stride, pad, ho, wo;
  std::size_t k() const { return c * kh * kw; }
  std::size_t p() const { return ho * wo; }
};

// Unrolls one image into a [C*kh*kw, Ho*Wo] patch matrix.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((ch * g.kh + ki) * g.kw + kj) * g.p();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill_n(dst, g.wo, T(0));
            continue;
          }
          const T* src = img + (ch * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T(0) : src[ix];
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* img) {
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((ch * g.kh + ki) * g.kw + kj) * g.p();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* dst = img + (ch * g.h + static_cast<std::size_t>(iy)) * g.w;
          const T* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding) {
  const auto& si = input.shape();
  const auto& sw = weight.shape();
  if (si.size() != 4 || sw.size() != 4)
    throw ShapeError("conv2d: expected 4-d input and weight, got " + shape_str(si) + " and " +
                     shape_str(sw));
  if (si[1] != sw[1])
    throw ShapeError("conv2d: input has " + std::to_string(si[1]) + " channels but weight expects " +
                     std::to_string(sw[1]) + " (input " + shape_str(si) + ", weight " +
                     shape_str(sw) + ")");
  if (sw[2] % 2 == 0 || sw[3] % 2 == 0)
    throw ShapeError("conv2d: kernel extents must be odd, got " + shape_str(sw));
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (bias.shape() != Shape{sw[0]})
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(sw[0]) + " output channels");
  if (si[2] + 2 * padding < sw[2] || si[3] + 2 * padding < sw[3])
    throw ShapeError("conv2d: kernel larger than padded input");

  ConvGeometry g{si[0], si[1], si[2], si[3], sw[0], sw[2], sw[3], stride, padding, 0, 0};
  g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
  g.wo = (g.w + 2 * padding - g.kw) / stride + 1;

  // Products run on Eigen-owned (aligned) matrices: with mapped buffers the
  // vectorised kernels peel by address, and rounding would vary between runs.
  std::vector<T> out(g.n * g.o * g.p());
  RowMat<T> col(g.k(), g.p());
  const RowMat<T> wmat = CMapMat<T>(weight.node()->value.data(), g.o, g.k());
  RowMat<T> omat(g.o, g.p());
  const auto& b = bias.node()->value;
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(input.node()->value.data() + n * g.c * g.h * g.w, g, col.data());
    omat.noalias() = wmat * col;
    T* dst = out.data() + n * g.o * g.p();
    for (std::size_t o = 0; o < g.o; ++o)
      for (std::size_t q = 0; q < g.p(); ++q) dst[o * g.p() + q] = omat(o, q) + b[o];
  }

  return make_result<T>(
      "conv2d", {g.n, g.o, g.ho, g.wo}, std::move(out),
      {input.node(), weight.node(), bias.node()}, [g](Node<T>& self) {
        auto& in = *self.inputs[0];
        auto& wt = *self.inputs[1];
        auto& bs = *self.inputs[2];
        RowMat<T> col(g.k(), g.p()), prod;
        const RowMat<T> wmat = CMapMat<T>(wt.value.data(), g.o, g.k());
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* gsrc = self.grad.data() + n * g.o * g.p();
          if (bs.requires_grad)
            for (std::size_t o = 0; o < g.o; ++o) {
              T sum = T(0);
              for (std::size_t q = 0; q < g.p(); ++q) sum += gsrc[o * g.p() + q];
              bs.grad[o] += sum;
            }
          if (!wt.requires_grad && !in.requires_grad) continue;
          const RowMat<T> gout = CMapMat<T>(gsrc, g.o, g.p());
          if (wt.requires_grad) {
            im2col(in.value.data() + n * g.c * g.h * g.w, g, col.data());
            prod.noalias() = gout * col.transpose();
            for (std::size_t i = 0; i < g.o * g.k(); ++i) wt.grad[i] += prod.data()[i];
          }
          if (in.requires_grad) {
            col.noalias() = wmat.transpose() * gout;
            col2im_add(col.data(), g, in.grad.data() + n * g.c * g.h * g.w);
          }
        }
      });
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& input) {
  const auto& s = input.shape();
  if (s.size() != 4) throw ShapeError("upsample_nearest2x: expected 4-d input, got " + shape_str(s));
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  std::vector<T> out(planes * 4 * h * w);
  const auto& x = input.node()->value;
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < 2 * h; ++i) {
      const T* src = x.data() + (p * h + i / 2) * w;
      T* dst = out.data() + (p * 2 * h + i) * 2 * w;
      for (std::size_t j = 0; j < 2 * w; ++j) dst[j] = src[j / 2];
    }
  return make_result<T>("upsample_nearest2x", {s[0], s[1], 2 * h, 2 * w}, std::move(out),
                        {input.node()}, [planes, h, w](Node<T>& self) {
                          auto& in = *self.inputs[0];
                          for (std::size_t p = 0; p < planes; ++p)
                            for (std::size_t i = 0; i < 2 * h; ++i) {
                              const T* g = self.grad.data() + (p * 2 * h + i) * 2 * w;
                              T* dst = in.grad.data() + (p * h + i / 2) * w;
                              for (std::size_t j = 0; j < 2 * w; ++j) dst[j / 2] += g[j];
                            }
                        });
}

#define TRACEWARP_INSTANTIATE_OPS(T)                                                           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                               \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                          \
  template Tensor<T> abs(const Tensor<T>&);                                                    \
  template Tensor<T> square(const Tensor<T>&);                                                 \
  template Tensor<T> tanh(const Tensor<T>&);                                                   \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                          \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&);                                                   \
  template Tensor<T> concat(const Tensor<T>&, const Tensor<T>&, std::size_t);                  \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, \
                            std::size_t);                                                      \
  template Tensor<T> upsample_nearest2x(const Tensor<T>&);

TRACEWARP_INSTANTIATE_OPS(float)
TRACEWARP_INSTANTIATE_OPS(double)

}  // namespace tracewarp
