#pragma once

// Mechanism ablation: the same data and seed trained three ways (translation
// stream only; both streams without the cross-domain term; the full model),
// each evaluated under every protocol.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tracewarp/config.hpp"
#include "tracewarp/data.hpp"
#include "tracewarp/eval.hpp"

namespace tracewarp {

struct AblationPreset {
  std::string name;
  double alpha;
  double gamma;
  bool trans_stream, deform_stream, cross_constraint;
};

// trans_only, two_stream_gamma0, full; the row order of the output.
const std::vector<AblationPreset>& ablation_presets();

struct AblationRow {
  AblationPreset preset;
  std::vector<double> values;  // means, in AblationResult::columns order
};

struct AblationResult {
  std::vector<std::string> columns;
  std::vector<AblationRow> rows;

  double value(const std::string& preset, const std::string& column) const;
  std::string to_csv() const;
};

// Metric columns: edge correspondence first, then fidelity, then the
// traceability extras.
const std::vector<std::string>& ablation_columns();

struct AblationOptions {
  // Per-preset checkpoints, logs and per-pair reports go under
  // <out_dir>/<preset>/ when set.
  std::optional<std::filesystem::path> out_dir;
  // Concurrent trainings; 0 reads TRACEWARP_THREADS (default: hardware).
  unsigned threads = 0;
  EvalOptions eval;
};

AblationResult run_ablation(const std::vector<ImagePair>& train_pairs, const std::vector<ImagePair>& test_pairs,
                            const TrainConfig& base, const AblationOptions& options = {});

// TRACEWARP_THREADS if set and positive, else the hardware concurrency.
unsigned thread_budget();

}  // namespace tracewarp
