#pragma once

// Training objectives: soft-histogram normalized mutual information, L1,
// the content alignment combination, least-squares adversarial losses and
// the overall generator / discriminator objectives.

#include <utility>

#include "tracewarp/tensor.hpp"

namespace tracewarp {

struct LossWeights {
  double alpha = 0.5;   // share of the translation stream
  double gamma = 1.0;   // cross-domain constraint strength
  double lambda_adv = 0.01;
  double lambda_smooth = 0.2;

  void validate() const;
};

// Parzen-window histogram settings. sigma is in bin widths; the Gaussian is
// truncated at 3 sigma, minus an even quadratic chosen so that the weight and
// its slope both vanish at the cut-off.
struct DnmiConfig {
  int bins = 16;
  double sigma = 0.5;
  std::pair<double, double> value_range{-1.0, 1.0};

  void validate() const;
};

// (H(A) + H(B)) / H(A,B) from soft joint histograms, computed per batch item
// over all channels and averaged over the batch. Values outside the range
// are clamped (zero gradient there).
template <typename T>
Tensor<T> dnmi(const Tensor<T>& a, const Tensor<T>& b, const DnmiConfig& cfg);

template <typename T>
Tensor<T> dnmi_loss(const Tensor<T>& a, const Tensor<T>& b, const DnmiConfig& cfg);

// Mean absolute difference.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& prediction, const Tensor<T>& target);

template <typename T>
struct AlignTerms {
  Tensor<T> l1_trans;
  Tensor<T> dnmi_warp;   // -DNMI(y_warp, y)
  Tensor<T> dnmi_cross;  // -DNMI(y_trans, y_warp)
  Tensor<T> total;
};

// alpha*L1 + (1-alpha)*L_dnmi^warp + min(alpha,1-alpha)*gamma*L_dnmi^cross
template <typename T>
AlignTerms<T> content_alignment_terms(const Tensor<T>& y_trans, const Tensor<T>& y_warp,
                                      const Tensor<T>& y, const LossWeights& w,
                                      const DnmiConfig& cfg_warp, const DnmiConfig& cfg_cross);
template <typename T>
Tensor<T> content_alignment_loss(const Tensor<T>& y_trans, const Tensor<T>& y_warp,
                                 const Tensor<T>& y, const LossWeights& w,
                                 const DnmiConfig& cfg_warp, const DnmiConfig& cfg_cross);

// Least-squares GAN losses averaged over patch scores.
template <typename T>
Tensor<T> adv_g_loss(const Tensor<T>& d_out);
template <typename T>
Tensor<T> adv_d_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake);

// L_align + lambda_adv*(alpha*advG_trans + (1-alpha)*advG_warp)
//         + (1-alpha)*lambda_smooth*L_smooth
template <typename T>
Tensor<T> total_generator_loss(const Tensor<T>& align, const Tensor<T>& adv_g_trans,
                               const Tensor<T>& adv_g_warp, const Tensor<T>& smooth,
                               const LossWeights& w);
// lambda_adv*(alpha*advD_trans + (1-alpha)*advD_warp)
template <typename T>
Tensor<T> total_discriminator_loss(const Tensor<T>& adv_d_trans, const Tensor<T>& adv_d_warp,
                                   const LossWeights& w);

}  // namespace tracewarp
