#include "tracewarp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "tracewarp/deformation.hpp"
#include "tracewarp/ops.hpp"

namespace tracewarp {

namespace {

void require_same(const Image& a, const Image& b, const char* what) {
  if (a.h != b.h || a.w != b.w || a.px.size() != a.h * a.w || b.px.size() != b.h * b.w)
    throw std::invalid_argument(std::string(what) + ": image shapes disagree");
}

double entropy(const std::vector<double>& counts, double total) {
  double h = 0.0;
  for (double c : counts)
    if (c > 0) {
      const double p = c / total;
      h -= p * std::log(p);
    }
  return h;
}

}  // namespace

Image to_image(const Tensor<float>& t, std::size_t index) {
  if (t.rank() != 4) throw ShapeError("to_image: expected [N,C,H,W], got " + shape_str(t.shape()));
  Image img{t.dim(2), t.dim(3), {}};
  const std::size_t hw = img.h * img.w;
  const float* src = t.data().data() + index * t.dim(1) * hw;
  img.px.resize(hw);
  for (std::size_t p = 0; p < hw; ++p) img.px[p] = (double(src[p]) + 1.0) * 127.5;
  return img;
}

double ssim(const Image& a, const Image& b, double dynamic_range, double k1, double k2) {
  require_same(a, b, "ssim");
  constexpr int kSize = 11;
  if (a.h < kSize || a.w < kSize) throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  double win[kSize];
  double total = 0.0;
  for (int t = 0; t < kSize; ++t) total += win[t] = std::exp(-0.5 * (t - 5) * (t - 5) / (1.5 * 1.5));
  for (double& x : win) x /= total;
  const double c1 = std::pow(k1 * dynamic_range, 2), c2 = std::pow(k2 * dynamic_range, 2);
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i + kSize <= a.h; ++i)
    for (std::size_t j = 0; j + kSize <= a.w; ++j) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int u = 0; u < kSize; ++u)
        for (int v = 0; v < kSize; ++v) {
          const double wt = win[u] * win[v];
          const double x = a.px[(i + u) * a.w + j + v], y = b.px[(i + u) * b.w + j + v];
          ma += wt * x;
          mb += wt * y;
          saa += wt * x * x;
          sbb += wt * y * y;
          sab += wt * x * y;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return acc / double(count);
}

double psnr(const Image& a, const Image& b, double peak) {
  require_same(a, b, "psnr");
  double mse = 0.0;
  for (std::size_t p = 0; p < a.px.size(); ++p) mse += (a.px[p] - b.px[p]) * (a.px[p] - b.px[p]);
  mse /= double(a.px.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double mae(const Image& a, const Image& b) {
  require_same(a, b, "mae");
  double s = 0.0;
  for (std::size_t p = 0; p < a.px.size(); ++p) s += std::abs(a.px[p] - b.px[p]);
  return s / double(a.px.size());
}

double nmi_hard(const Image& a, const Image& b, int bins) {
  require_same(a, b, "nmi_hard");
  if (bins < 2) throw std::invalid_argument("nmi_hard: bins must be >= 2");
  std::vector<double> ja(bins, 0.0), jb(bins, 0.0), joint(std::size_t(bins) * bins, 0.0);
  auto bin = [bins](double x) { return std::clamp(static_cast<int>(std::floor(x * bins / 256.0)), 0, bins - 1); };
  for (std::size_t p = 0; p < a.px.size(); ++p) {
    const int ia = bin(a.px[p]), ib = bin(b.px[p]);
    ja[ia] += 1;
    jb[ib] += 1;
    joint[std::size_t(ia) * bins + ib] += 1;
  }
  const double n = double(a.px.size());
  const double hab = entropy(joint, n);
  if (hab == 0.0) return 2.0;
  return (entropy(ja, n) + entropy(jb, n)) / hab;
}

EdgeMap sobel_edges(const Image& img, double q) {
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("sobel_edges: quantile must be in [0,1]");
  const long h = long(img.h), w = long(img.w);
  auto at = [&](long i, long j) { return img.px[std::clamp(i, 0L, h - 1) * w + std::clamp(j, 0L, w - 1)]; };
  std::vector<double> mag(img.px.size());
  for (long i = 0; i < h; ++i)
    for (long j = 0; j < w; ++j) {
      const double gx = (at(i - 1, j + 1) + 2 * at(i, j + 1) + at(i + 1, j + 1)) -
                        (at(i - 1, j - 1) + 2 * at(i, j - 1) + at(i + 1, j - 1));
      const double gy = (at(i + 1, j - 1) + 2 * at(i + 1, j) + at(i + 1, j + 1)) -
                        (at(i - 1, j - 1) + 2 * at(i - 1, j) + at(i - 1, j + 1));
      mag[i * w + j] = std::hypot(gx, gy);
    }
  std::vector<double> sorted = mag;
  std::sort(sorted.begin(), sorted.end());
  EdgeMap e{img.h, img.w, std::vector<std::uint8_t>(mag.size()), 0.0};
  e.threshold = sorted[static_cast<std::size_t>(std::floor(q * double(sorted.size() - 1)))];
  for (std::size_t p = 0; p < mag.size(); ++p) e.on[p] = mag[p] > 0.0 && mag[p] >= e.threshold;
  return e;
}

double dice(const EdgeMap& a, const EdgeMap& b, const std::vector<std::uint8_t>* mask) {
  if (a.h != b.h || a.w != b.w) throw std::invalid_argument("dice: edge maps disagree in shape");
  if (mask && mask->size() != a.on.size()) throw std::invalid_argument("dice: mask shape mismatch");
  double both = 0, na = 0, nb = 0;
  for (std::size_t p = 0; p < a.on.size(); ++p) {
    if (mask && !(*mask)[p]) continue;
    na += a.on[p];
    nb += b.on[p];
    both += a.on[p] && b.on[p];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * both / (na + nb);
}

Image edge_image(const EdgeMap& e) {
  Image img{e.h, e.w, std::vector<double>(e.on.size())};
  for (std::size_t p = 0; p < e.on.size(); ++p) img.px[p] = e.on[p] ? 255.0 : 0.0;
  return img;
}

Protocol parse_protocol(const std::string& name) {
  if (name == "standard") return Protocol::standard;
  if (name == "correspondence") return Protocol::correspondence;
  if (name == "traceability") return Protocol::traceability;
  throw std::invalid_argument("unknown protocol '" + name + "' (standard|correspondence|traceability)");
}

std::string protocol_name(Protocol p) {
  switch (p) {
    case Protocol::standard: return "standard";
    case Protocol::correspondence: return "correspondence";
    case Protocol::traceability: return "traceability";
  }
  return "";
}

const std::vector<std::string>& protocol_columns(Protocol p) {
  static const std::vector<std::string> standard{"ssim", "mae", "psnr", "nmi"};
  static const std::vector<std::string> correspondence{"edge_ssim", "edge_psnr", "edge_nmi", "edge_dice",
                                                       "masked_edge_dice"};
  static const std::vector<std::string> traceability{"trace_mae",   "ssim_trans_warp", "masked_edge_dice",
                                                     "epe",         "epe_zero_field",  "fold_fraction"};
  switch (p) {
    case Protocol::standard: return standard;
    case Protocol::correspondence: return correspondence;
    case Protocol::traceability: return traceability;
  }
  return standard;
}

MetricReport::Summary MetricReport::summary(std::size_t column) const {
  Summary s;
  std::vector<double> v;
  for (const auto& r : rows) {
    if (std::isfinite(r.at(column))) v.push_back(r[column]);
    else ++s.excluded;
  }
  if (v.empty()) {
    s.mean = s.std = s.min = s.max = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  for (double x : v) s.mean += x;
  s.mean /= double(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = v.size() > 1 ? std::sqrt(ss / double(v.size() - 1)) : 0.0;
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  // Rounding can put the mean of equal values a hair outside [min, max].
  s.mean = std::clamp(s.mean, s.min, s.max);
  return s;
}

MetricReport::Summary MetricReport::summary(const std::string& column) const {
  const auto it = std::find(columns.begin(), columns.end(), column);
  if (it == columns.end()) throw std::invalid_argument("no column " + column + " in " + protocol + " report");
  return summary(static_cast<std::size_t>(it - columns.begin()));
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string MetricReport::to_csv() const {
  std::string out = "id";
  for (const auto& c : columns) out += "," + c;
  out += "\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out += ids[r];
    for (double v : rows[r]) out += "," + fmt(v);
    out += "\n";
  }
  std::string mean = "mean", sd = "std", excluded = "excluded";
  for (std::size_t c = 0; c < columns.size(); ++c) {
    const auto s = summary(c);
    mean += "," + fmt(s.mean);
    sd += "," + fmt(s.std);
    excluded += "," + std::to_string(s.excluded);
  }
  return out + mean + "\n" + sd + "\n" + excluded + "\n";
}

namespace {

// Switches parameters to plain forward evaluation for its lifetime.
struct NoGrad {
  std::vector<NamedParam<float>> params;
  explicit NoGrad(const ModelParams<float>& m) : params(m.all_parameters()) { set_requires_grad(params, false); }
  ~NoGrad() { set_requires_grad(params, true); }
};

double endpoint_error(const Tensor<float>& predicted, std::size_t index, const Tensor<float>& truth) {
  const std::size_t hw = truth.dim(2) * truth.dim(3);
  const float* p = predicted.data().data() + index * 2 * hw;
  const float* t = truth.data().data();
  double s = 0.0;
  for (std::size_t q = 0; q < hw; ++q) s += std::hypot(double(p[q]) - t[q], double(p[hw + q]) - t[hw + q]);
  return s / double(hw);
}

double mean_magnitude(const Tensor<float>& u) {
  const std::size_t hw = u.dim(2) * u.dim(3);
  double s = 0.0;
  for (std::size_t q = 0; q < hw; ++q) s += std::hypot(double(u.data()[q]), double(u.data()[hw + q]));
  return s / double(hw);
}

Tensor<float> item(const Tensor<float>& t, std::size_t index) {
  const std::size_t per = t.numel() / t.dim(0);
  Shape s = t.shape();
  s[0] = 1;
  const float* src = t.data().data() + index * per;
  return Tensor<float>::from(s, std::vector<float>(src, src + per));
}

}  // namespace

MetricReport evaluate(const ModelParams<float>& params, const std::vector<ImagePair>& pairs, Protocol protocol,
                      const EvalOptions& options) {
  MetricReport report;
  report.protocol = protocol_name(protocol);
  report.columns = protocol_columns(protocol);
  NoGrad guard(params);
  constexpr std::size_t kChunk = 8;
  for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
    const std::size_t end = std::min(pairs.size(), start + kChunk);
    std::vector<float> xs;
    for (std::size_t i = start; i < end; ++i) xs.insert(xs.end(), pairs[i].source.data().begin(), pairs[i].source.data().end());
    Shape shape = pairs[start].source.shape();
    shape[0] = end - start;
    const auto out = forward(Tensor<float>::from(shape, std::move(xs)), params.generator, options.integration_steps);
    for (std::size_t i = start; i < end; ++i) {
      const auto& pair = pairs[i];
      const std::size_t k = i - start;
      const Image y = to_image(pair.reference), y_trans = to_image(out.y_trans, k), y_warp = to_image(out.y_warp, k);
      const auto region = feature_region(pair.feature, y.h, y.w);
      std::vector<double> row;
      switch (protocol) {
        case Protocol::standard:
          row = {100.0 * ssim(y_trans, y), mae(y_trans, y), psnr(y_trans, y), nmi_hard(y_trans, y, options.nmi_bins)};
          break;
        case Protocol::correspondence: {
          const auto ew = sobel_edges(y_warp, options.edge_quantile), et = sobel_edges(y_trans, options.edge_quantile);
          const Image iw = edge_image(ew), it = edge_image(et);
          row = {100.0 * ssim(iw, it), psnr(iw, it), nmi_hard(iw, it, options.nmi_bins), 100.0 * dice(ew, et),
                 100.0 * dice(ew, et, &region)};
          break;
        }
        case Protocol::traceability: {
          const auto ew = sobel_edges(y_warp, options.edge_quantile), et = sobel_edges(y_trans, options.edge_quantile);
          const double nan = std::numeric_limits<double>::quiet_NaN();
          const bool gt = pair.gt_displacement.has_value();
          const auto phi = deformation_from_grid(item(out.phi.grid, k));
          row = {mae(y_warp, y_trans),
                 100.0 * ssim(y_trans, y_warp),
                 100.0 * dice(ew, et, &region),
                 gt ? endpoint_error(out.u.grid, k, *pair.gt_displacement) : nan,
                 gt ? mean_magnitude(*pair.gt_displacement) : nan,
                 fold_fraction(jacobian_determinant(phi))};
          break;
        }
      }
      report.ids.push_back(pair.id);
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

}  // namespace tracewarp
