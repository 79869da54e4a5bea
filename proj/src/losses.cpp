#include "tracewarp/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tracewarp/ops.hpp"

namespace tracewarp {

void LossWeights::validate() const {
  if (!std::isfinite(alpha) || alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("alpha must lie in [0,1]");
  if (!std::isfinite(gamma) || gamma < 0.0) throw std::invalid_argument("gamma must be >= 0");
  if (!std::isfinite(lambda_adv) || lambda_adv < 0.0)
    throw std::invalid_argument("lambda_adv must be >= 0");
  if (!std::isfinite(lambda_smooth) || lambda_smooth < 0.0)
    throw std::invalid_argument("lambda_smooth must be >= 0");
}

void DnmiConfig::validate() const {
  if (bins < 2) throw std::invalid_argument("DNMI needs at least 2 bins");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("DNMI sigma must be > 0");
  if (!(value_range.second > value_range.first))
    throw std::invalid_argument("DNMI value range is degenerate");
}

namespace {

constexpr double kEntropyFloor = 1e-10;

// Parzen weights of one sample over the bins it reaches.
template <typename T>
struct Stencil {
  int first = 0;
  int count = 0;
  T weight[8];
  T slope[8];  // d weight / d sample value
};

template <typename T>
class ParzenKernel {
 public:
  explicit ParzenKernel(const DnmiConfig& cfg)
      : bins_(cfg.bins),
        lo_(static_cast<T>(cfg.value_range.first)),
        hi_(static_cast<T>(cfg.value_range.second)),
        inv_two_var_(static_cast<T>(0.5 / (cfg.sigma * cfg.sigma))),
        inv_var_(static_cast<T>(1.0 / (cfg.sigma * cfg.sigma))),
        radius_(static_cast<T>(3.0 * cfg.sigma)),
        floor_(static_cast<T>(std::exp(-4.5))),
        edge_curve_(static_cast<T>(-std::exp(-4.5) / (2.0 * cfg.sigma * cfg.sigma))),
        to_bins_(static_cast<T>(cfg.bins) / (hi_ - lo_)) {
    if (2.0 * 3.0 * cfg.sigma + 1.0 > 8.0)
      throw std::invalid_argument("DNMI sigma too wide for the kernel stencil (max 7/6 bins)");
  }

  Stencil<T> operator()(T x) const {
    Stencil<T> st;
    const bool inside = x > lo_ && x < hi_;
    const T s = (std::clamp(x, lo_, hi_) - lo_) * to_bins_ - T(0.5);
    const int kmin = std::max(0, static_cast<int>(std::ceil(s - radius_)));
    const int kmax = std::min(bins_ - 1, static_cast<int>(std::floor(s + radius_)));
    for (int k = kmin; k <= kmax; ++k) {
      const T d = s - static_cast<T>(k);
      if (std::abs(d) >= radius_) continue;
      const T g = std::exp(-d * d * inv_two_var_);
      // Subtract an even quadratic matching the Gaussian's value and slope at
      // the cut-off, so both reach zero there without a kink at the centre.
      const T w = g - floor_ - edge_curve_ * (d * d - radius_ * radius_);
      const T dw = inside ? (-d * inv_var_ * g - T(2) * edge_curve_ * d) * to_bins_ : T(0);
      if (st.count == 0) st.first = k;
      st.weight[st.count] = w;
      st.slope[st.count] = dw;
      ++st.count;
    }
    return st;
  }

 private:
  int bins_;
  T lo_, hi_, inv_two_var_, inv_var_, radius_, floor_, edge_curve_, to_bins_;
};

template <typename T>
T entropy_term(T p) {
  return -p * std::log(p + static_cast<T>(kEntropyFloor));
}

template <typename T>
T entropy_slope(T p) {
  const T e = static_cast<T>(kEntropyFloor);
  return -(std::log(p + e) + p / (p + e));
}

}  // namespace

template <typename T>
Tensor<T> dnmi(const Tensor<T>& a, const Tensor<T>& b, const DnmiConfig& cfg) {
  cfg.validate();
  if (a.shape() != b.shape())
    throw ShapeError("dnmi: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.numel() == 0) throw ShapeError("dnmi: empty image");
  const std::size_t batch = a.rank() >= 4 ? a.dim(0) : 1;
  const std::size_t per = a.numel() / batch;
  const int nb = cfg.bins;
  const ParzenKernel<T> kernel(cfg);
  const auto& xa = a.node()->value;
  const auto& xb = b.node()->value;

  // d(mean DNMI)/d(raw joint histogram), one B x B block per batch item.
  std::vector<T> joint_grad(batch * nb * nb);
  T total = 0;
  std::vector<T> joint(nb * nb), pa(nb), pb(nb);
  for (std::size_t n = 0; n < batch; ++n) {
    std::fill(joint.begin(), joint.end(), T(0));
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
      const auto sa = kernel(xa[i]);
      const auto sb = kernel(xb[i]);
      for (int u = 0; u < sa.count; ++u) {
        T* row = joint.data() + (sa.first + u) * nb + sb.first;
        for (int v = 0; v < sb.count; ++v) row[v] += sa.weight[u] * sb.weight[v];
      }
    }
    T mass = 0;
    for (T j : joint) mass += j;
    if (!(mass > T(0))) throw std::domain_error("dnmi: empty soft histogram (sigma too small)");
    std::fill(pa.begin(), pa.end(), T(0));
    std::fill(pb.begin(), pb.end(), T(0));
    T h_ab = 0;
    for (int k = 0; k < nb; ++k)
      for (int l = 0; l < nb; ++l) {
        const T p = joint[k * nb + l] / mass;
        pa[k] += p;
        pb[l] += p;
        h_ab += entropy_term(p);
      }
    T h_a = 0, h_b = 0;
    for (int k = 0; k < nb; ++k) {
      h_a += entropy_term(pa[k]);
      h_b += entropy_term(pb[k]);
    }
    T* gj = joint_grad.data() + n * nb * nb;
    // Both images constant inside one bin: perfectly predictable, no slope.
    if (h_ab < static_cast<T>(1e-8)) {
      total += T(2);
      continue;
    }
    const T nmi = (h_a + h_b) / h_ab;
    total += nmi;

    T centre = 0;
    for (int k = 0; k < nb; ++k)
      for (int l = 0; l < nb; ++l) {
        const T p = joint[k * nb + l] / mass;
        const T g = (entropy_slope(pa[k]) + entropy_slope(pb[l]) - nmi * entropy_slope(p)) / h_ab;
        gj[k * nb + l] = g;
        centre += g * p;
      }
    const T inv_batch = T(1) / static_cast<T>(batch);
    for (int q = 0; q < nb * nb; ++q) gj[q] = (gj[q] - centre) / mass * inv_batch;
  }

  return make_result<T>(
      "dnmi", {1}, {total / static_cast<T>(batch)}, {a.node(), b.node()},
      [kernel, joint_grad = std::move(joint_grad), batch, per, nb](Node<T>& self) {
        auto& na = *self.inputs[0];
        auto& nbn = *self.inputs[1];
        const T up = self.grad[0];
        for (std::size_t n = 0; n < batch; ++n) {
          const T* gj = joint_grad.data() + n * nb * nb;
          for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
            const auto sa = kernel(na.value[i]);
            const auto sb = kernel(nbn.value[i]);
            T ga = 0, gb = 0;
            for (int u = 0; u < sa.count; ++u) {
              const T* row = gj + (sa.first + u) * nb + sb.first;
              for (int v = 0; v < sb.count; ++v) {
                ga += row[v] * sa.slope[u] * sb.weight[v];
                gb += row[v] * sa.weight[u] * sb.slope[v];
              }
            }
            if (na.requires_grad) na.grad[i] += up * ga;
            if (nbn.requires_grad) nbn.grad[i] += up * gb;
          }
        }
      });
}

template <typename T>
Tensor<T> dnmi_loss(const Tensor<T>& a, const Tensor<T>& b, const DnmiConfig& cfg) {
  return scale(dnmi(a, b, cfg), T(-1));
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& prediction, const Tensor<T>& target) {
  return mean(abs(sub(prediction, target)));
}

template <typename T>
AlignTerms<T> content_alignment_terms(const Tensor<T>& y_trans, const Tensor<T>& y_warp,
                                      const Tensor<T>& y, const LossWeights& w,
                                      const DnmiConfig& cfg_warp, const DnmiConfig& cfg_cross) {
  w.validate();
  AlignTerms<T> t;
  t.l1_trans = l1_loss(y_trans, y);
  t.dnmi_warp = dnmi_loss(y_warp, y, cfg_warp);
  t.dnmi_cross = dnmi_loss(y_trans, y_warp, cfg_cross);
  const T alpha = static_cast<T>(w.alpha);
  const T cross = static_cast<T>(std::min(w.alpha, 1.0 - w.alpha) * w.gamma);
  t.total = add(add(scale(t.l1_trans, alpha), scale(t.dnmi_warp, T(1) - alpha)),
                scale(t.dnmi_cross, cross));
  return t;
}

template <typename T>
Tensor<T> content_alignment_loss(const Tensor<T>& y_trans, const Tensor<T>& y_warp,
                                 const Tensor<T>& y, const LossWeights& w,
                                 const DnmiConfig& cfg_warp, const DnmiConfig& cfg_cross) {
  return content_alignment_terms(y_trans, y_warp, y, w, cfg_warp, cfg_cross).total;
}

template <typename T>
Tensor<T> adv_g_loss(const Tensor<T>& d_out) {
  return mean(square(add_scalar(d_out, T(-1))));
}

template <typename T>
Tensor<T> adv_d_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake) {
  return scale(add(mean(square(add_scalar(d_real, T(-1)))), mean(square(d_fake))), T(0.5));
}

template <typename T>
Tensor<T> total_generator_loss(const Tensor<T>& align, const Tensor<T>& adv_g_trans,
                               const Tensor<T>& adv_g_warp, const Tensor<T>& smooth,
                               const LossWeights& w) {
  w.validate();
  const T alpha = static_cast<T>(w.alpha);
  const T adv = static_cast<T>(w.lambda_adv);
  const auto adversarial =
      add(scale(adv_g_trans, adv * alpha), scale(adv_g_warp, adv * (T(1) - alpha)));
  return add(add(align, adversarial),
             scale(smooth, (T(1) - alpha) * static_cast<T>(w.lambda_smooth)));
}

template <typename T>
Tensor<T> total_discriminator_loss(const Tensor<T>& adv_d_trans, const Tensor<T>& adv_d_warp,
                                   const LossWeights& w) {
  w.validate();
  const T alpha = static_cast<T>(w.alpha);
  const T adv = static_cast<T>(w.lambda_adv);
  return add(scale(adv_d_trans, adv * alpha), scale(adv_d_warp, adv * (T(1) - alpha)));
}

#define TRACEWARP_INSTANTIATE_LOSSES(T)                                                           \
  template Tensor<T> dnmi(const Tensor<T>&, const Tensor<T>&, const DnmiConfig&);                 \
  template Tensor<T> dnmi_loss(const Tensor<T>&, const Tensor<T>&, const DnmiConfig&);            \
  template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&);                                 \
  template AlignTerms<T> content_alignment_terms(const Tensor<T>&, const Tensor<T>&,              \
                                                 const Tensor<T>&, const LossWeights&,            \
                                                 const DnmiConfig&, const DnmiConfig&);           \
  template Tensor<T> content_alignment_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                            const LossWeights&, const DnmiConfig&,                \
                                            const DnmiConfig&);                                   \
  template Tensor<T> adv_g_loss(const Tensor<T>&);                                                \
  template Tensor<T> adv_d_loss(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> total_generator_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                          const Tensor<T>&, const LossWeights&);                  \
  template Tensor<T> total_discriminator_loss(const Tensor<T>&, const Tensor<T>&,                 \
                                              const LossWeights&);

TRACEWARP_INSTANTIATE_LOSSES(float)
TRACEWARP_INSTANTIATE_LOSSES(double)

}  // namespace tracewarp
