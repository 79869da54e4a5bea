#pragma once

// Synthetic paired data with known ground-truth deformations.
//
// A source image is a smooth background with a few soft blobs and one
// high-contrast elliptical "feature". The reference is the source resampled
// through Id + u*, where u* is a contraction centred on the feature (its
// strength follows the feature size, so it is predictable from the source)
// plus a blurred random component, followed by an intensity shift inside the
// displaced feature.
//
// On disk: <dir>/manifest.json and <dir>/pairs/<id>_{src,ref}.png plus
// <id>_gtu.twf. Pairs are listed in lexicographic id order.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tracewarp/tensor.hpp"

namespace tracewarp {

struct SynthConfig {
  std::size_t image_size = 64;
  std::size_t n_pairs = 64;
  double deform_amplitude = 3.0;   // max displacement, pixels
  double deform_smoothness = 6.0;  // Gaussian blur sigma of the random component, pixels
  double random_fraction = 0.25;   // share of the amplitude given to the random component
  double intensity_shift = 0.4;    // added inside the feature, [-1,1] units
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SynthConfig& cfg);
// Unknown keys are rejected.
SynthConfig synth_config_from_json(const nlohmann::json& j);

struct Ellipse {
  std::array<double, 2> center{};  // row, col
  std::array<double, 2> radii{};
  double angle = 0.0;
};

struct ImagePair {
  std::string id;
  Tensor<float> source;     // [1,1,H,W] in [-1,1]
  Tensor<float> reference;  // [1,1,H,W] in [-1,1]
  std::optional<Tensor<float>> gt_displacement;  // [1,2,H,W]
  Ellipse feature;
};

std::string pair_id(std::size_t index);

// Deterministic in (cfg, id).
ImagePair generate_pair(const SynthConfig& cfg, const std::string& id);
std::vector<ImagePair> generate_pairs(const SynthConfig& cfg);

// Soft-edged feature mask in [0,1], zero outside `scale` times the radii.
std::vector<double> ellipse_mask(const Ellipse& e, std::size_t h, std::size_t w, double scale = 1.0);
// Binary mask of the region used for masked edge scores.
std::vector<std::uint8_t> feature_region(const Ellipse& e, std::size_t h, std::size_t w);

struct Dataset {
  nlohmann::json config;
  std::vector<ImagePair> pairs;
};

// Writes PNGs, fields and the manifest; returns a checksum over all files.
std::string write_dataset(const std::vector<ImagePair>& pairs, const SynthConfig& cfg,
                          const std::filesystem::path& dir);
// Reads and checksum-verifies a dataset (values quantised to 8 bits).
Dataset load_dataset(const std::filesystem::path& dir);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Deterministic shuffled split of indices [0, n); round(n * fraction) train.
Split split(std::size_t n, double train_fraction, std::uint64_t seed);

}  // namespace tracewarp
