#pragma once

// Alternating adversarial training: per step one discriminator update on
// detached candidates, then one generator update against the refreshed
// discriminators.

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tracewarp/config.hpp"
#include "tracewarp/data.hpp"
#include "tracewarp/model.hpp"
#include "tracewarp/optim.hpp"

namespace tracewarp {

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Loss components of one step (or their mean over an epoch). dnmi_* hold the
// loss terms, i.e. negated DNMI.
struct StepRecord {
  double loss_g = 0, loss_d = 0;
  double l1_trans = 0, dnmi_warp = 0, dnmi_cross = 0, align = 0;
  double adv_g_trans = 0, adv_g_warp = 0, adv_d_trans = 0, adv_d_warp = 0;
  double smooth = 0;
  double train_mae = 0;  // |y_trans - y| on the 0-255 scale
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  StepRecord mean;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  static const std::vector<std::string>& columns();
  std::string to_csv() const;
  nlohmann::json to_json() const;
  static TrainLog from_json(const nlohmann::json& j);
};

struct Batch {
  Tensor<float> x;  // [B,1,H,W]
  Tensor<float> y;
};

Batch make_batch(const std::vector<ImagePair>& pairs, const std::vector<std::size_t>& indices);

struct TrainState {
  ModelParams<float> params;
  AdamState opt_g;
  AdamState opt_d;
  std::size_t epoch = 0;  // completed epochs
  TrainLog log;

  static TrainState fresh(const TrainConfig& cfg);
};

StepRecord train_step(const Batch& batch, ModelParams<float>& params, AdamState& opt_g, AdamState& opt_d,
                      const TrainConfig& cfg);

// Batches for one epoch: a shuffle keyed by (seed, epoch), so resumed runs
// see the same order as uninterrupted ones.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch);

struct FitOptions {
  // When set: latest.ttck every cfg.checkpoint_every epochs, final.ttck,
  // train_log.csv and timing.csv.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const EpochRecord&, double seconds)> on_epoch;
};

// Trains from `state` (fresh or resumed) until cfg.epochs are complete.
TrainState fit(const std::vector<ImagePair>& train_pairs, const TrainConfig& cfg, TrainState state,
               const FitOptions& options = {});

}  // namespace tracewarp
