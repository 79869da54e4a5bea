#include "tracewarp/ablate.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <thread>

#include "tracewarp/io.hpp"
#include "tracewarp/trainer.hpp"

namespace tracewarp {

const std::vector<AblationPreset>& ablation_presets() {
  static const std::vector<AblationPreset> presets{
      {"trans_only", 1.0, 0.0, true, false, false},
      {"two_stream_gamma0", 0.5, 0.0, true, true, false},
      {"full", 0.5, 1.0, true, true, true},
  };
  return presets;
}

const std::vector<std::string>& ablation_columns() {
  static const std::vector<std::string> columns{
      "edge_ssim", "edge_psnr", "edge_nmi", "edge_dice", "masked_edge_dice",
      "mae",       "ssim",      "psnr",     "nmi",
      "trace_mae", "ssim_trans_warp", "epe", "fold_fraction"};
  return columns;
}

double AblationResult::value(const std::string& preset, const std::string& column) const {
  const auto c = std::find(columns.begin(), columns.end(), column);
  if (c == columns.end()) throw std::invalid_argument("no ablation column " + column);
  for (const auto& r : rows)
    if (r.preset.name == preset) return r.values[static_cast<std::size_t>(c - columns.begin())];
  throw std::invalid_argument("no ablation preset " + preset);
}

std::string AblationResult::to_csv() const {
  std::string out = "config,trans_stream,deform_stream,cross_constraint";
  for (const auto& c : columns) out += "," + c;
  out += "\n";
  char buf[48];
  for (const auto& r : rows) {
    out += r.preset.name + "," + (r.preset.trans_stream ? "1" : "0") + "," + (r.preset.deform_stream ? "1" : "0") +
           "," + (r.preset.cross_constraint ? "1" : "0");
    for (double v : r.values) {
      std::snprintf(buf, sizeof buf, ",%.6f", v);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

unsigned thread_budget() {
  if (const char* env = std::getenv("TRACEWARP_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

AblationRow run_preset(const AblationPreset& preset, const std::vector<ImagePair>& train_pairs,
                       const std::vector<ImagePair>& test_pairs, const TrainConfig& base,
                       const AblationOptions& options) {
  TrainConfig cfg = base;
  cfg.alpha = preset.alpha;
  cfg.gamma = preset.gamma;
  std::optional<std::filesystem::path> dir;
  if (options.out_dir) dir = *options.out_dir / preset.name;
  const auto state = fit(train_pairs, cfg, TrainState::fresh(cfg), {dir, {}});

  std::vector<std::pair<std::string, double>> means;
  for (auto p : {Protocol::correspondence, Protocol::standard, Protocol::traceability}) {
    const auto report = evaluate(state.params, test_pairs, p, options.eval);
    if (dir) write_text_atomic(*dir / ("eval_" + protocol_name(p) + ".csv"), report.to_csv());
    for (std::size_t c = 0; c < report.columns.size(); ++c) means.emplace_back(report.columns[c], report.summary(c).mean);
  }
  AblationRow row{preset, {}};
  for (const auto& col : ablation_columns()) {
    const auto it = std::find_if(means.begin(), means.end(), [&](const auto& m) { return m.first == col; });
    row.values.push_back(it->second);
  }
  return row;
}

}  // namespace

AblationResult run_ablation(const std::vector<ImagePair>& train_pairs, const std::vector<ImagePair>& test_pairs,
                            const TrainConfig& base, const AblationOptions& options) {
  base.validate();
  if (test_pairs.empty()) throw std::invalid_argument("ablation needs a non-empty test split");
  const auto& presets = ablation_presets();
  AblationResult result;
  result.columns = ablation_columns();
  result.rows.resize(presets.size());
  std::vector<std::exception_ptr> errors(presets.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < presets.size();) {
      try {
        result.rows[i] = run_preset(presets[i], train_pairs, test_pairs, base, options);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned n = std::min<unsigned>(options.threads ? options.threads : thread_budget(), presets.size());
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  if (options.out_dir) write_text_atomic(*options.out_dir / "ablation.csv", result.to_csv());
  return result;
}

}  // namespace tracewarp
