#pragma once

// Checkpoint file: "TTCK", u32 format version, u64 header length, a JSON
// header (train config, completed epochs, optimiser steps, training log and
// a tensor manifest of name/shape/offset), then every tensor as little-endian
// float32 in manifest order. Offsets count floats from the start of the data.

#include <filesystem>

#include "tracewarp/io.hpp"
#include "tracewarp/trainer.hpp"

namespace tracewarp {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointError : IoError {
  using IoError::IoError;
};

struct Checkpoint {
  TrainConfig config;
  TrainState state;
};

void save_checkpoint(const TrainConfig& config, const TrainState& state, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tracewarp
