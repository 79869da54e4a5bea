#pragma once

// Training configuration and its file formats. JSON and a flat TOML subset
// (key = value lines, '#' comments, an optional [train] table header) map 1:1
// onto TrainConfig; unknown keys are errors.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "tracewarp/losses.hpp"
#include "tracewarp/model.hpp"

namespace tracewarp {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  double alpha = 0.5;
  double gamma = 1.0;
  double lambda_adv = 0.01;
  double lambda_smooth = 0.2;
  double lr = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 8;
  std::size_t epochs = 300;
  int integration_steps = 7;
  int dnmi_bins_warp = 16;
  int dnmi_bins_cross = 32;
  double dnmi_sigma = 0.5;
  std::uint64_t seed = 0;
  double width_factor = 0.125;
  std::size_t image_size = 64;
  bool shared_encoder = true;
  double train_fraction = 0.7;
  std::size_t checkpoint_every = 10;  // epochs; 0 disables periodic checkpoints

  void validate() const;
  LossWeights weights() const;
  DnmiConfig dnmi_warp() const;
  DnmiConfig dnmi_cross() const;
  ModelConfig model() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Flat TOML subset to JSON: strings, booleans, integers and floats.
nlohmann::json parse_flat_toml(const std::string& text);

// Picks the parser from the extension (.toml, otherwise JSON).
nlohmann::json read_config_file(const std::filesystem::path& path);
TrainConfig load_train_config(const std::filesystem::path& path);

}  // namespace tracewarp
