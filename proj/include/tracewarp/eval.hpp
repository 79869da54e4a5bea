#pragma once

// Image metrics (64-bit, on the 0..255 scale) and the evaluation protocols
// run on a trained model: standard fidelity, edge correspondence, and
// traceability through the predicted deformation.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tracewarp/data.hpp"
#include "tracewarp/model.hpp"

namespace tracewarp {

struct Image {
  std::size_t h = 0, w = 0;
  std::vector<double> px;
};

// Item `index`, channel 0, mapped from [-1,1] to [0,255].
Image to_image(const Tensor<float>& t, std::size_t index = 0);

// Mean SSIM over valid 11x11 Gaussian (sigma 1.5) windows, in [-1,1].
double ssim(const Image& a, const Image& b, double dynamic_range = 255.0, double k1 = 0.01, double k2 = 0.03);
// +infinity for identical images.
double psnr(const Image& a, const Image& b, double peak = 255.0);
double mae(const Image& a, const Image& b);
// Hard-binned (H(A)+H(B))/H(A,B) over [0,256); 2 when both are constant.
double nmi_hard(const Image& a, const Image& b, int bins = 64);

struct EdgeMap {
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> on;
  double threshold = 0.0;
};

// 3x3 Sobel magnitude (replicated border); an edge is a pixel whose
// magnitude is positive and at least the given quantile of all magnitudes.
EdgeMap sobel_edges(const Image& img, double threshold_quantile = 0.9);
// 2|A and B| / (|A| + |B|) over the mask; 1 when both are empty.
double dice(const EdgeMap& a, const EdgeMap& b, const std::vector<std::uint8_t>* mask = nullptr);
Image edge_image(const EdgeMap& e);  // 0 / 255

enum class Protocol { standard, correspondence, traceability };
Protocol parse_protocol(const std::string& name);
std::string protocol_name(Protocol p);

struct MetricReport {
  std::string protocol;
  std::vector<std::string> columns;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;  // rows[pair][column]

  struct Summary {
    double mean = 0.0, std = 0.0, min = 0.0, max = 0.0;
    std::size_t excluded = 0;  // non-finite values left out
  };
  // Sample standard deviation over the finite values of a column.
  Summary summary(std::size_t column) const;
  Summary summary(const std::string& column) const;
  // Per-pair rows, then mean, std and excluded rows.
  std::string to_csv() const;
};

struct EvalOptions {
  int integration_steps = 7;
  double edge_quantile = 0.9;
  int nmi_bins = 64;
};

MetricReport evaluate(const ModelParams<float>& params, const std::vector<ImagePair>& pairs, Protocol protocol,
                      const EvalOptions& options = {});

// Column sets, fixed per protocol.
const std::vector<std::string>& protocol_columns(Protocol p);

}  // namespace tracewarp
