#include "tracewarp/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>

#include "tracewarp/deformation.hpp"
#include "tracewarp/io.hpp"
#include "tracewarp/random.hpp"

namespace tracewarp {

namespace fs = std::filesystem;
using nlohmann::json;

void SynthConfig::validate() const {
  if (image_size == 0 || image_size % 32 != 0)
    throw std::invalid_argument("image_size must be a positive multiple of 32, got " +
                                std::to_string(image_size));
  if (n_pairs == 0) throw std::invalid_argument("n_pairs must be positive");
  if (!(deform_amplitude >= 0.0) || !std::isfinite(deform_amplitude))
    throw std::invalid_argument("deform_amplitude must be >= 0");
  if (!(deform_smoothness > 0.0)) throw std::invalid_argument("deform_smoothness must be > 0");
  if (!(random_fraction >= 0.0 && random_fraction <= 1.0))
    throw std::invalid_argument("random_fraction must be in [0,1]");
  if (!std::isfinite(intensity_shift)) throw std::invalid_argument("intensity_shift must be finite");
}

json to_json(const SynthConfig& c) {
  return {{"image_size", c.image_size},         {"n_pairs", c.n_pairs},
          {"deform_amplitude", c.deform_amplitude}, {"deform_smoothness", c.deform_smoothness},
          {"random_fraction", c.random_fraction}, {"intensity_shift", c.intensity_shift},
          {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("synth config must be an object");
  SynthConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "image_size") c.image_size = value.get<std::size_t>();
    else if (key == "n_pairs") c.n_pairs = value.get<std::size_t>();
    else if (key == "deform_amplitude") c.deform_amplitude = value.get<double>();
    else if (key == "deform_smoothness") c.deform_smoothness = value.get<double>();
    else if (key == "random_fraction") c.random_fraction = value.get<double>();
    else if (key == "intensity_shift") c.intensity_shift = value.get<double>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else throw std::invalid_argument("unknown synth config key: " + key);
  }
  c.validate();
  return c;
}

std::string pair_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "pair_%04zu", index);
  return buf;
}

namespace {

// Ellipse-normalised radius: 1 on the boundary.
double ellipse_radius(const Ellipse& e, double i, double j) {
  const double dy = i - e.center[0], dx = j - e.center[1];
  const double c = std::cos(e.angle), s = std::sin(e.angle);
  const double u = (c * dy + s * dx) / e.radii[0], v = (-s * dy + c * dx) / e.radii[1];
  return std::sqrt(u * u + v * v);
}

double smoothstep(double edge0, double edge1, double x) {
  const double t = std::clamp((x - edge0) / (edge1 - edge0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

void gaussian_blur(std::vector<double>& img, std::size_t h, std::size_t w, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int t = -radius; t <= radius; ++t) total += k[t + radius] = std::exp(-0.5 * t * t / (sigma * sigma));
  for (auto& x : k) x /= total;
  auto clampi = [](long v, long hi) { return std::clamp(v, 0L, hi); };
  std::vector<double> tmp(img.size());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t)
        acc += k[t + radius] * img[i * w + clampi(long(j) + t, long(w) - 1)];
      tmp[i * w + j] = acc;
    }
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t)
        acc += k[t + radius] * tmp[clampi(long(i) + t, long(h) - 1) * w + j];
      img[i * w + j] = acc;
    }
}

std::vector<double> render_source(Rng& rng, std::size_t n, const Ellipse& feature, double feature_value) {
  std::vector<double> img(n * n);
  const double base = rng.uniform(-0.6, -0.2);
  const double gy = rng.uniform(-0.3, 0.3), gx = rng.uniform(-0.3, 0.3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) img[i * n + j] = base + gy * i / n + gx * j / n;

  const int blobs = 2 + static_cast<int>(rng.below(3));
  for (int b = 0; b < blobs; ++b) {
    Ellipse e;
    e.center = {rng.uniform(0.15, 0.85) * n, rng.uniform(0.15, 0.85) * n};
    e.radii = {rng.uniform(0.08, 0.2) * n, rng.uniform(0.08, 0.2) * n};
    e.angle = rng.uniform(0.0, std::numbers::pi);
    const double amp = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 0.5);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double r = ellipse_radius(e, double(i), double(j));
        img[i * n + j] += amp * std::exp(-0.5 * r * r);
      }
  }
  const auto mask = ellipse_mask(feature, n, n);
  for (std::size_t p = 0; p < img.size(); ++p)
    img[p] = std::clamp(img[p] * (1.0 - mask[p]) + feature_value * mask[p], -1.0, 1.0);
  return img;
}

// Contraction towards the feature centre, peaking at `strength` pixels.
std::vector<double> contraction(const Ellipse& e, std::size_t n, double strength) {
  std::vector<double> u(2 * n * n, 0.0);
  if (strength == 0.0) return u;
  const double reach = 1.5 * 0.5 * (e.radii[0] + e.radii[1]);
  const double peak = std::exp(-0.5);  // max of (r/R) exp(-r^2 / 2R^2)
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double dy = i - e.center[0], dx = j - e.center[1];
      const double g = std::exp(-0.5 * (dy * dy + dx * dx) / (reach * reach)) / peak;
      u[i * n + j] = strength * dy / reach * g;
      u[n * n + i * n + j] = strength * dx / reach * g;
    }
  return u;
}

std::vector<double> random_field(Rng& rng, std::size_t n, double sigma, double magnitude) {
  std::vector<double> u(2 * n * n, 0.0);
  if (magnitude == 0.0) return u;
  for (std::size_t c = 0; c < 2; ++c) {
    std::vector<double> ch(n * n);
    for (auto& x : ch) x = rng.normal();
    gaussian_blur(ch, n, n, sigma);
    std::copy(ch.begin(), ch.end(), u.begin() + c * n * n);
  }
  double peak = 0.0;
  for (std::size_t p = 0; p < n * n; ++p) peak = std::max(peak, std::hypot(u[p], u[n * n + p]));
  if (peak > 0)
    for (auto& x : u) x *= magnitude / peak;
  return u;
}

Tensor<float> to_float(const std::vector<double>& v, Shape shape) {
  return Tensor<float>::from(std::move(shape), std::vector<float>(v.begin(), v.end()));
}

}  // namespace

std::vector<double> ellipse_mask(const Ellipse& e, std::size_t h, std::size_t w, double scale) {
  std::vector<double> m(h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double r = ellipse_radius(e, double(i), double(j)) / scale;
      m[i * w + j] = 1.0 - smoothstep(0.85, 1.0, r);
    }
  return m;
}

std::vector<std::uint8_t> feature_region(const Ellipse& e, std::size_t h, std::size_t w) {
  const auto m = ellipse_mask(e, h, w, 1.5);
  std::vector<std::uint8_t> out(m.size());
  for (std::size_t p = 0; p < m.size(); ++p) out[p] = m[p] > 0.0;
  return out;
}

ImagePair generate_pair(const SynthConfig& cfg, const std::string& id) {
  cfg.validate();
  const std::size_t n = cfg.image_size;
  Rng rng = Rng::derive(cfg.seed, id);

  Ellipse feature;
  feature.center = {rng.uniform(0.35, 0.65) * n, rng.uniform(0.35, 0.65) * n};
  feature.radii = {rng.uniform(0.1, 0.18) * n, rng.uniform(0.1, 0.18) * n};
  feature.angle = rng.uniform(0.0, std::numbers::pi);
  const double feature_value = rng.uniform(0.55, 0.85);
  const auto src = render_source(rng, n, feature, feature_value);

  // Larger features contract more; the source shows how large it is.
  const double size_ratio = 0.5 * (feature.radii[0] + feature.radii[1]) / (0.18 * n);
  const auto structured =
      contraction(feature, n, (1.0 - cfg.random_fraction) * cfg.deform_amplitude * size_ratio);

  auto source = Tensor<double>::from({1, 1, n, n}, src);
  const auto mask = Tensor<double>::from({1, 1, n, n}, ellipse_mask(feature, n, n));
  Tensor<double> u;
  for (int attempt = 0;; ++attempt) {
    Rng field_rng = Rng::derive(rng.next(), "field");
    auto noise = random_field(field_rng, n, cfg.deform_smoothness, cfg.random_fraction * cfg.deform_amplitude);
    for (std::size_t p = 0; p < noise.size(); ++p) noise[p] += structured[p];
    u = Tensor<double>::from({1, 2, n, n}, std::move(noise));
    const auto phi = to_deformation(DisplacementField<double>{u});
    if (fold_fraction(jacobian_determinant(phi)) == 0.0) break;
    if (attempt == 100) throw std::runtime_error("could not draw a fold-free field for " + id);
  }
  const auto phi = to_deformation(DisplacementField<double>{u});
  const auto warped = warp(source, phi);
  const auto moved_mask = warp(mask, phi);
  std::vector<double> ref(n * n);
  for (std::size_t p = 0; p < ref.size(); ++p)
    ref[p] = std::clamp(warped.data()[p] + cfg.intensity_shift * moved_mask.data()[p], -1.0, 1.0);

  ImagePair pair;
  pair.id = id;
  pair.source = to_float(src, {1, 1, n, n});
  pair.reference = to_float(ref, {1, 1, n, n});
  pair.gt_displacement = to_float(std::vector<double>(u.data().begin(), u.data().end()), {1, 2, n, n});
  pair.feature = feature;
  return pair;
}

std::vector<ImagePair> generate_pairs(const SynthConfig& cfg) {
  std::vector<ImagePair> out;
  for (std::size_t i = 0; i < cfg.n_pairs; ++i) out.push_back(generate_pair(cfg, pair_id(i)));
  return out;
}

namespace {

json ellipse_json(const Ellipse& e) {
  return {{"center", e.center}, {"radii", e.radii}, {"angle", e.angle}};
}

Ellipse ellipse_from_json(const json& j) {
  Ellipse e;
  e.center = j.at("center").get<std::array<double, 2>>();
  e.radii = j.at("radii").get<std::array<double, 2>>();
  e.angle = j.at("angle").get<double>();
  return e;
}

}  // namespace

std::string write_dataset(const std::vector<ImagePair>& input, const SynthConfig& cfg, const fs::path& dir) {
  auto pairs = input;
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  fs::create_directories(dir / "pairs");
  json entries = json::array();
  std::string all;
  for (const auto& p : pairs) {
    const std::string src = "pairs/" + p.id + "_src.png", ref = "pairs/" + p.id + "_ref.png";
    save_png(denormalize(p.source), dir / src);
    save_png(denormalize(p.reference), dir / ref);
    json entry = {{"id", p.id}, {"source", src}, {"reference", ref}, {"feature", ellipse_json(p.feature)}};
    json sums = {{"source", file_checksum(dir / src)}, {"reference", file_checksum(dir / ref)}};
    if (p.gt_displacement) {
      const std::string gtu = "pairs/" + p.id + "_gtu.twf";
      write_field(*p.gt_displacement, dir / gtu);
      entry["gt_displacement"] = gtu;
      sums["gt_displacement"] = file_checksum(dir / gtu);
    }
    for (const auto& [k, v] : sums.items()) all += v.get<std::string>();
    entry["checksums"] = sums;
    entries.push_back(entry);
  }
  const std::string total = checksum(std::vector<std::uint8_t>(all.begin(), all.end()));
  json manifest = {{"format", "tracewarp-pairs"}, {"version", 1}, {"config", to_json(cfg)},
                   {"pairs", entries},            {"checksum", total}};
  write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  return total;
}

Dataset load_dataset(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!fs::is_regular_file(manifest_path)) throw IoError("no manifest.json in " + dir.string());
  json manifest;
  try {
    const auto bytes = read_bytes(manifest_path);
    manifest = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  Dataset ds;
  try {
    ds.config = manifest.at("config");
    std::set<std::string> seen;
    for (const auto& entry : manifest.at("pairs")) {
      ImagePair p;
      p.id = entry.at("id").get<std::string>();
      if (!seen.insert(p.id).second) throw IoError("duplicate pair id " + p.id);
      const auto& sums = entry.at("checksums");
      auto verified = [&](const char* key) {
        const fs::path path = dir / entry.at(key).get<std::string>();
        if (file_checksum(path) != sums.at(key).get<std::string>())
          throw IoError("checksum mismatch for " + path.string());
        return path;
      };
      p.source = normalize(load_png(verified("source")));
      p.reference = normalize(load_png(verified("reference")));
      if (p.source.shape() != p.reference.shape())
        throw IoError("source and reference sizes differ for " + p.id);
      if (entry.contains("gt_displacement")) p.gt_displacement = read_field(verified("gt_displacement"));
      p.feature = ellipse_from_json(entry.at("feature"));
      ds.pairs.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  std::sort(ds.pairs.begin(), ds.pairs.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return ds;
}

Split split(std::size_t n, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0))
    throw std::invalid_argument("train_fraction must be in [0,1]");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::derive(seed, "split");
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * double(n)));
  Split s;
  s.train.assign(order.begin(), order.begin() + n_train);
  s.test.assign(order.begin() + n_train, order.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

}  // namespace tracewarp
