#include "tracewarp/deformation.hpp"

#include <algorithm>
#include <cmath>

#include "tracewarp/ops.hpp"

namespace tracewarp {

namespace {

template <typename T>
void require_field(const char* op, const Tensor<T>& t) {
  if (t.rank() != 4 || t.dim(1) != 2)
    throw ShapeError(std::string(op) + ": expected field of shape [N,2,H,W], got " +
                     shape_str(t.shape()));
}

// Bilinear stencil for one sample position along one axis.
template <typename T>
struct Axis {
  std::size_t lo;
  T frac;
  bool inside;  // false when the coordinate was clamped
};

template <typename T>
Axis<T> locate(T coord, std::size_t extent) {
  const T hi = static_cast<T>(extent - 1);
  Axis<T> a{};
  a.inside = coord >= T(0) && coord <= hi;
  const T c = std::clamp(coord, T(0), hi);
  const auto lo = std::min(static_cast<std::size_t>(std::floor(c)), extent - 2);
  a.lo = lo;
  a.frac = c - static_cast<T>(lo);
  return a;
}

}  // namespace

template <typename T>
Tensor<T> identity_grid(std::size_t n, std::size_t h, std::size_t w) {
  std::vector<T> values(n * 2 * h * w);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        values[((b * 2 + 0) * h + i) * w + j] = static_cast<T>(i);
        values[((b * 2 + 1) * h + i) * w + j] = static_cast<T>(j);
      }
  return Tensor<T>::from({n, 2, h, w}, std::move(values));
}

template <typename T>
Tensor<T> warp(const Tensor<T>& image, const Tensor<T>& coords) {
  require_field("warp", coords);
  if (image.rank() != 4 || image.dim(0) != coords.dim(0) || image.dim(2) != coords.dim(2) ||
      image.dim(3) != coords.dim(3))
    throw ShapeError("warp: image " + shape_str(image.shape()) + " and field " +
                     shape_str(coords.shape()) + " disagree on batch or spatial size");
  const std::size_t n = image.dim(0), c = image.dim(1), h = image.dim(2), w = image.dim(3);
  if (h < 2 || w < 2) throw ShapeError("warp: spatial extents must be at least 2");
  const std::size_t hw = h * w;
  const auto& m = image.node()->value;
  const auto& phi = coords.node()->value;
  std::vector<T> out(m.size());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < hw; ++p) {
      const auto ay = locate(phi[(b * 2) * hw + p], h);
      const auto ax = locate(phi[(b * 2 + 1) * hw + p], w);
      const T w00 = (T(1) - ay.frac) * (T(1) - ax.frac), w01 = (T(1) - ay.frac) * ax.frac;
      const T w10 = ay.frac * (T(1) - ax.frac), w11 = ay.frac * ax.frac;
      const std::size_t q = ay.lo * w + ax.lo;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* src = m.data() + (b * c + ch) * hw;
        out[(b * c + ch) * hw + p] =
            src[q] * w00 + src[q + 1] * w01 + src[q + w] * w10 + src[q + w + 1] * w11;
      }
    }

  return make_result<T>(
      "warp", image.shape(), std::move(out), {image.node(), coords.node()},
      [n, c, h, w, hw](Node<T>& self) {
        auto& img = *self.inputs[0];
        auto& crd = *self.inputs[1];
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t p = 0; p < hw; ++p) {
            const auto ay = locate(crd.value[(b * 2) * hw + p], h);
            const auto ax = locate(crd.value[(b * 2 + 1) * hw + p], w);
            const std::size_t q = ay.lo * w + ax.lo;
            T gy = 0, gx = 0;
            for (std::size_t ch = 0; ch < c; ++ch) {
              const T g = self.grad[(b * c + ch) * hw + p];
              if (g == T(0)) continue;
              if (img.requires_grad) {
                T* dst = img.grad.data() + (b * c + ch) * hw;
                dst[q] += g * (T(1) - ay.frac) * (T(1) - ax.frac);
                dst[q + 1] += g * (T(1) - ay.frac) * ax.frac;
                dst[q + w] += g * ay.frac * (T(1) - ax.frac);
                dst[q + w + 1] += g * ay.frac * ax.frac;
              }
              if (crd.requires_grad) {
                const T* src = img.value.data() + (b * c + ch) * hw;
                gy += g * ((src[q + w] - src[q]) * (T(1) - ax.frac) +
                           (src[q + w + 1] - src[q + 1]) * ax.frac);
                gx += g * ((src[q + 1] - src[q]) * (T(1) - ay.frac) +
                           (src[q + w + 1] - src[q + w]) * ay.frac);
              }
            }
            if (crd.requires_grad) {
              if (ay.inside) crd.grad[(b * 2) * hw + p] += gy;
              if (ax.inside) crd.grad[(b * 2 + 1) * hw + p] += gx;
            }
          }
      });
}

template <typename T>
Tensor<T> warp(const Tensor<T>& image, const DeformationField<T>& phi) {
  return warp(image, phi.grid);
}

template <typename T>
DeformationField<T> to_deformation(const DisplacementField<T>& u) {
  require_field("to_deformation", u.grid);
  const auto& s = u.grid.shape();
  return {add(u.grid, identity_grid<T>(s[0], s[2], s[3])), u.grid};
}

template <typename T>
DisplacementField<T> to_displacement(const DeformationField<T>& phi) {
  if (phi.displacement.defined()) return {phi.displacement};
  const auto& s = phi.grid.shape();
  return {sub(phi.grid, identity_grid<T>(s[0], s[2], s[3]))};
}

template <typename T>
DeformationField<T> deformation_from_grid(const Tensor<T>& grid) {
  require_field("deformation_from_grid", grid);
  const auto& s = grid.shape();
  return {grid, sub(grid, identity_grid<T>(s[0], s[2], s[3]))};
}

template <typename T>
DisplacementField<T> integrate_velocity(const VelocityField<T>& v, int steps) {
  require_field("integrate_velocity", v.grid);
  if (steps < 1) throw std::invalid_argument("integrate_velocity: steps must be >= 1");
  for (T x : v.grid.data())
    if (!std::isfinite(x)) throw std::domain_error("integrate_velocity: non-finite velocity");
  const auto& s = v.grid.shape();
  const auto id = identity_grid<T>(s[0], s[2], s[3]);
  Tensor<T> u = scale(v.grid, std::ldexp(T(1), -steps));
  for (int k = 0; k < steps; ++k) u = add(warp(u, add(u, id)), u);
  return {u};
}

template <typename T>
Tensor<T> jacobian_determinant(const DeformationField<T>& phi) {
  const auto& g = phi.grid;
  require_field("jacobian_determinant", g);
  const std::size_t n = g.dim(0), h = g.dim(2), w = g.dim(3);
  if (h < 2 || w < 2) throw ShapeError("jacobian_determinant: spatial extents must be >= 2");
  const std::size_t hw = h * w;
  const auto v = g.data();
  std::vector<T> det(n * (h - 1) * (w - 1));
  for (std::size_t b = 0; b < n; ++b) {
    const T* r = v.data() + (b * 2) * hw;
    const T* c = v.data() + (b * 2 + 1) * hw;
    for (std::size_t i = 0; i + 1 < h; ++i)
      for (std::size_t j = 0; j + 1 < w; ++j) {
        const std::size_t p = i * w + j;
        const T drdi = r[p + w] - r[p], drdj = r[p + 1] - r[p];
        const T dcdi = c[p + w] - c[p], dcdj = c[p + 1] - c[p];
        det[(b * (h - 1) + i) * (w - 1) + j] = drdi * dcdj - drdj * dcdi;
      }
  }
  return Tensor<T>::from({n, 1, h - 1, w - 1}, std::move(det));
}

template <typename T>
double fold_fraction(const Tensor<T>& determinants) {
  std::size_t folds = 0;
  for (T d : determinants.data()) folds += d <= T(0);
  return static_cast<double>(folds) / static_cast<double>(determinants.numel());
}

template <typename T>
Tensor<T> smoothness_loss(const VelocityField<T>& v) {
  const auto& f = v.grid;
  require_field("smoothness_loss", f);
  const std::size_t n = f.dim(0), h = f.dim(2), w = f.dim(3), planes = n * 2;
  const T inv = T(1) / static_cast<T>(n * h * w);
  const auto x = f.data();
  T total = 0;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* a = x.data() + pl * h * w;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t p = i * w + j;
        if (i + 1 < h) total += (a[p + w] - a[p]) * (a[p + w] - a[p]);
        if (j + 1 < w) total += (a[p + 1] - a[p]) * (a[p + 1] - a[p]);
      }
  }
  return make_result<T>("smoothness", {1}, {total * inv}, {f.node()},
                        [planes, h, w, inv](Node<T>& self) {
                          auto& in = *self.inputs[0];
                          const T g = self.grad[0] * inv * T(2);
                          for (std::size_t pl = 0; pl < planes; ++pl) {
                            const T* a = in.value.data() + pl * h * w;
                            T* ga = in.grad.data() + pl * h * w;
                            for (std::size_t i = 0; i < h; ++i)
                              for (std::size_t j = 0; j < w; ++j) {
                                const std::size_t p = i * w + j;
                                if (i + 1 < h) {
                                  const T d = g * (a[p + w] - a[p]);
                                  ga[p + w] += d;
                                  ga[p] -= d;
                                }
                                if (j + 1 < w) {
                                  const T d = g * (a[p + 1] - a[p]);
                                  ga[p + 1] += d;
                                  ga[p] -= d;
                                }
                              }
                          }
                        });
}

#define TRACEWARP_INSTANTIATE_DEFORMATION(T)                                              \
  template Tensor<T> identity_grid<T>(std::size_t, std::size_t, std::size_t);             \
  template DisplacementField<T> integrate_velocity(const VelocityField<T>&, int);         \
  template DeformationField<T> to_deformation(const DisplacementField<T>&);               \
  template DisplacementField<T> to_displacement(const DeformationField<T>&);              \
  template DeformationField<T> deformation_from_grid(const Tensor<T>&);                   \
  template Tensor<T> warp(const Tensor<T>&, const DeformationField<T>&);                  \
  template Tensor<T> warp(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> jacobian_determinant(const DeformationField<T>&);                    \
  template double fold_fraction(const Tensor<T>&);                                        \
  template Tensor<T> smoothness_loss(const VelocityField<T>&);

TRACEWARP_INSTANTIATE_DEFORMATION(float)
TRACEWARP_INSTANTIATE_DEFORMATION(double)

}  // namespace tracewarp
