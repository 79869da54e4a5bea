// tracewarp command-line tool: synth, train, infer, eval, gradcheck, ablate.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 data or
// checkpoint error, 4 numerical failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "tracewarp/ablate.hpp"
#include "tracewarp/checkpoint.hpp"
#include "tracewarp/config.hpp"
#include "tracewarp/data.hpp"
#include "tracewarp/eval.hpp"
#include "tracewarp/gradcheck.hpp"
#include "tracewarp/io.hpp"
#include "tracewarp/trainer.hpp"

#ifndef TRACEWARP_VERSION
#define TRACEWARP_VERSION "dev"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tracewarp;

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

void write_run_json(const fs::path& dir, const std::string& command, json args, json resolved) {
  fs::create_directories(dir);
  json run = {{"tool", "tracewarp"}, {"version", TRACEWARP_VERSION}, {"command", command}, {"args", std::move(args)}};
  for (auto& [k, v] : resolved.items()) run[k] = v;
  write_text_atomic(dir / "run.json", run.dump(2) + "\n");
}

void require_dir(const fs::path& p, const char* what) {
  if (!fs::is_directory(p)) throw UsageError(std::string(what) + " directory does not exist: " + p.string());
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw UsageError(std::string(what) + " does not exist: " + p.string());
}

TrainConfig train_config_or_default(const std::string& path) {
  if (path.empty()) return TrainConfig{};
  require_file(path, "config file");
  return load_train_config(path);
}

struct SplitPairs {
  std::vector<ImagePair> train, test;
};

SplitPairs split_pairs(const std::vector<ImagePair>& pairs, const TrainConfig& cfg) {
  const auto s = split(pairs.size(), cfg.train_fraction, cfg.seed);
  SplitPairs out;
  for (auto i : s.train) out.train.push_back(pairs[i]);
  for (auto i : s.test) out.test.push_back(pairs[i]);
  return out;
}

std::string dataset_checksum(const fs::path& dir) { return file_checksum(dir / "manifest.json"); }

json train_config_without(const TrainConfig& cfg, std::initializer_list<const char*> keys) {
  json j = to_json(cfg);
  for (const char* k : keys) j.erase(k);
  return j;
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string config, out;
};

int cmd_synth(const SynthArgs& a) {
  SynthConfig cfg;
  if (!a.config.empty()) {
    require_file(a.config, "config file");
    cfg = synth_config_from_json(read_config_file(a.config));
  }
  cfg.validate();
  const auto sum = write_dataset(generate_pairs(cfg), cfg, a.out);
  write_run_json(a.out, "synth", {{"config", a.config}, {"out", a.out}},
                 {{"config", to_json(cfg)}, {"seed", cfg.seed}, {"checksum", sum}});
  std::printf("pairs: %zu\nchecksum: %s\n", cfg.n_pairs, sum.c_str());
  return 0;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, resume;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  require_dir(a.data, "data");
  TrainConfig cfg = train_config_or_default(a.config);
  const auto ds = load_dataset(a.data);
  const auto parts = split_pairs(ds.pairs, cfg);
  if (parts.train.empty()) throw UsageError("training split is empty");

  TrainState state = TrainState::fresh(cfg);
  if (!a.resume.empty()) {
    require_file(a.resume, "checkpoint");
    auto ck = load_checkpoint(a.resume);
    if (train_config_without(ck.config, {"epochs", "checkpoint_every"}) !=
        train_config_without(cfg, {"epochs", "checkpoint_every"}))
      throw UsageError("checkpoint " + a.resume + " was trained with a different configuration");
    if (ck.state.epoch > cfg.epochs)
      throw UsageError("checkpoint is at epoch " + std::to_string(ck.state.epoch) + ", past epochs = " +
                       std::to_string(cfg.epochs));
    state = std::move(ck.state);
  }
  write_run_json(a.out, "train", {{"config", a.config}, {"data", a.data}, {"out", a.out}, {"resume", a.resume}},
                 {{"config", to_json(cfg)},
                  {"seed", cfg.seed},
                  {"data_checksum", dataset_checksum(a.data)},
                  {"train_pairs", parts.train.size()},
                  {"test_pairs", parts.test.size()},
                  {"start_epoch", state.epoch}});
  FitOptions options;
  options.out_dir = fs::path(a.out);
  if (!a.quiet)
    options.on_epoch = [&](const EpochRecord& r, double seconds) {
      std::printf("epoch %zu/%zu  loss_g %.4f  loss_d %.4f  l1 %.4f  mae %.2f  (%.1fs)\n", r.epoch, cfg.epochs,
                  r.mean.loss_g, r.mean.loss_d, r.mean.l1_trans, r.mean.train_mae, seconds);
      std::fflush(stdout);
    };
  fit(parts.train, cfg, std::move(state), options);
  std::printf("checkpoint: %s\n", (fs::path(a.out) / "final.ttck").string().c_str());
  return 0;
}

// --- infer -----------------------------------------------------------------

struct InferArgs {
  std::string ckpt, input, out;
};

int cmd_infer(const InferArgs& a) {
  require_file(a.ckpt, "checkpoint");
  require_file(a.input, "input image");
  const auto ck = load_checkpoint(a.ckpt);
  const auto x = normalize(load_png(a.input));
  if (x.dim(2) != ck.config.image_size || x.dim(3) != ck.config.image_size)
    throw UsageError("input is " + std::to_string(x.dim(3)) + "x" + std::to_string(x.dim(2)) +
                     " but the model expects " + std::to_string(ck.config.image_size) + "x" +
                     std::to_string(ck.config.image_size));
  const auto params = ck.state.params.all_parameters();
  set_requires_grad(params, false);
  const auto out = forward(x, ck.state.params.generator, ck.config.integration_steps);

  const fs::path dir = a.out;
  fs::create_directories(dir);
  save_png(denormalize(out.y_trans), dir / "y_trans.png");
  save_png(denormalize(out.y_warp), dir / "y_warp.png");
  write_field(out.u.grid, dir / "field.twf");
  save_rgb_png(flow_to_rgb(out.u.grid), x.dim(2), x.dim(3), dir / "flow.png");

  // Edges of the warped source drawn in red over the translated image.
  const auto edges = sobel_edges(to_image(out.y_warp));
  const auto base = to_image(out.y_trans);
  std::vector<std::uint8_t> rgb(base.px.size() * 3);
  for (std::size_t p = 0; p < base.px.size(); ++p) {
    const auto g = static_cast<std::uint8_t>(std::clamp(std::lround(base.px[p]), 0L, 255L));
    rgb[3 * p] = edges.on[p] ? 255 : g;
    rgb[3 * p + 1] = edges.on[p] ? 0 : g;
    rgb[3 * p + 2] = edges.on[p] ? 0 : g;
  }
  save_rgb_png(rgb, base.h, base.w, dir / "overlay.png");

  const auto det = jacobian_determinant(out.phi);
  write_run_json(dir, "infer", {{"ckpt", a.ckpt}, {"input", a.input}, {"out", a.out}},
                 {{"config", to_json(ck.config)},
                  {"seed", ck.config.seed},
                  {"checkpoint_checksum", file_checksum(a.ckpt)},
                  {"fold_fraction", fold_fraction(det)}});
  std::printf("wrote y_trans.png y_warp.png field.twf flow.png overlay.png to %s\n", dir.string().c_str());
  return 0;
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, data, out, protocol = "standard", split = "test";
};

int cmd_eval(const EvalArgs& a) {
  require_file(a.ckpt, "checkpoint");
  require_dir(a.data, "data");
  const auto protocol = parse_protocol(a.protocol);
  if (a.split != "test" && a.split != "all") throw UsageError("--split must be test or all");
  const auto ck = load_checkpoint(a.ckpt);
  const auto ds = load_dataset(a.data);
  const auto pairs = a.split == "all" ? ds.pairs : split_pairs(ds.pairs, ck.config).test;
  if (pairs.empty()) throw UsageError("no pairs to evaluate");
  EvalOptions options;
  options.integration_steps = ck.config.integration_steps;
  const auto report = evaluate(ck.state.params, pairs, protocol, options);

  const fs::path out = a.out;
  const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
  fs::create_directories(dir);
  write_text_atomic(out, report.to_csv());
  write_run_json(dir, "eval",
                 {{"ckpt", a.ckpt}, {"data", a.data}, {"out", a.out}, {"protocol", a.protocol}, {"split", a.split}},
                 {{"config", to_json(ck.config)},
                  {"seed", ck.config.seed},
                  {"checkpoint_checksum", file_checksum(a.ckpt)},
                  {"data_checksum", dataset_checksum(a.data)},
                  {"pairs", pairs.size()}});
  std::printf("%s protocol, %zu pairs\n", report.protocol.c_str(), pairs.size());
  for (std::size_t c = 0; c < report.columns.size(); ++c) {
    const auto s = report.summary(c);
    std::printf("  %-18s %10.4f +- %.4f", report.columns[c].c_str(), s.mean, s.std);
    if (s.excluded) std::printf("  (%zu non-finite excluded)", s.excluded);
    std::printf("\n");
  }
  if (protocol == Protocol::traceability)
    std::printf("  (epe uses synthetic ground-truth displacements; epe_zero_field is the identity baseline)\n");
  return 0;
}

// --- gradcheck -------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const auto results = run_gradcheck_suite(a.seed);
  std::string csv = "case,max_rel_error,coordinates,skipped,passed\n";
  std::printf("%-28s %14s %8s %8s  %s\n", "case", "max_rel_error", "coords", "skipped", "result");
  bool all = true;
  char buf[160];
  for (const auto& r : results) {
    std::printf("%-28s %14.3e %8zu %8zu  %s\n", r.name.c_str(), r.max_rel_error, r.coordinates, r.skipped,
                r.passed ? "PASS" : "FAIL");
    std::snprintf(buf, sizeof buf, "%s,%.6e,%zu,%zu,%d\n", r.name.c_str(), r.max_rel_error, r.coordinates, r.skipped,
                  int(r.passed));
    csv += buf;
    all = all && r.passed;
  }
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text_atomic(fs::path(a.out) / "gradcheck.csv", csv);
    write_run_json(a.out, "gradcheck", {{"seed", a.seed}, {"out", a.out}},
                   {{"seed", a.seed}, {"cases", results.size()}, {"passed", all}});
  }
  std::printf("%s: %zu cases\n", all ? "all passed" : "FAILURES", results.size());
  return all ? 0 : 4;
}

// --- ablate ----------------------------------------------------------------

struct AblateArgs {
  std::string config, data, out;
};

int cmd_ablate(const AblateArgs& a) {
  require_dir(a.data, "data");
  const TrainConfig cfg = train_config_or_default(a.config);
  const auto ds = load_dataset(a.data);
  const auto parts = split_pairs(ds.pairs, cfg);
  if (parts.train.empty() || parts.test.empty()) throw UsageError("ablation needs non-empty train and test splits");
  write_run_json(a.out, "ablate", {{"config", a.config}, {"data", a.data}, {"out", a.out}},
                 {{"config", to_json(cfg)},
                  {"seed", cfg.seed},
                  {"data_checksum", dataset_checksum(a.data)},
                  {"presets", json::array({"trans_only", "two_stream_gamma0", "full"})}});
  AblationOptions options;
  options.out_dir = fs::path(a.out);
  options.eval.integration_steps = cfg.integration_steps;
  const auto result = run_ablation(parts.train, parts.test, cfg, options);
  std::cout << result.to_csv();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tracewarp: dual-stream image translation with traceable deformations"};
  app.set_version_flag("--version", TRACEWARP_VERSION);
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic paired dataset");
  s->add_option("--config", synth.config, "Synthetic data config (JSON or TOML)");
  s->add_option("--out", synth.out, "Output dataset directory")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", train.config, "Training config (JSON or TOML); defaults when omitted");
  t->add_option("--data", train.data, "Dataset directory")->required();
  t->add_option("--out", train.out, "Output directory")->required();
  t->add_option("--resume", train.resume, "Checkpoint to continue from");
  t->add_flag("--quiet", train.quiet, "No per-epoch progress");

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "Translate and warp one image");
  i->add_option("--ckpt", infer.ckpt, "Checkpoint")->required();
  i->add_option("--input", infer.input, "Grayscale PNG")->required();
  i->add_option("--out", infer.out, "Output directory")->required();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  e->add_option("--ckpt", eval.ckpt, "Checkpoint")->required();
  e->add_option("--data", eval.data, "Dataset directory")->required();
  e->add_option("--out", eval.out, "Output CSV")->required();
  e->add_option("--protocol", eval.protocol, "standard | correspondence | traceability")
      ->check(CLI::IsMember({"standard", "correspondence", "traceability"}));
  e->add_option("--split", eval.split, "test (the checkpoint's held-out split) | all")
      ->check(CLI::IsMember({"test", "all"}));

  GradcheckArgs grad;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of every op and loss");
  g->add_option("--seed", grad.seed, "Seed for the random probes");
  g->add_option("--out", grad.out, "Directory for gradcheck.csv and run.json");

  AblateArgs ablate;
  auto* a = app.add_subcommand("ablate", "Train and compare the three ablation presets");
  a->add_option("--config", ablate.config, "Base training config; defaults when omitted");
  a->add_option("--data", ablate.data, "Dataset directory")->required();
  a->add_option("--out", ablate.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*t) return cmd_train(train);
    if (*i) return cmd_infer(infer);
    if (*e) return cmd_eval(eval);
    if (*g) return cmd_gradcheck(grad);
    if (*a) return cmd_ablate(ablate);
  } catch (const NumericalError& err) {
    std::cerr << "numerical failure: " << err.what() << "\n";
    return 4;
  } catch (const IoError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 2;
}
