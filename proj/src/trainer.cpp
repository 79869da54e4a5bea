#include "tracewarp/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "tracewarp/checkpoint.hpp"
#include "tracewarp/deformation.hpp"
#include "tracewarp/io.hpp"
#include "tracewarp/losses.hpp"
#include "tracewarp/ops.hpp"
#include "tracewarp/random.hpp"

namespace tracewarp {

using nlohmann::json;

namespace {

struct Field {
  const char* name;
  double StepRecord::*member;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> f{
      {"loss_g", &StepRecord::loss_g},           {"loss_d", &StepRecord::loss_d},
      {"l1_trans", &StepRecord::l1_trans},       {"dnmi_warp", &StepRecord::dnmi_warp},
      {"dnmi_cross", &StepRecord::dnmi_cross},   {"align", &StepRecord::align},
      {"adv_g_trans", &StepRecord::adv_g_trans}, {"adv_g_warp", &StepRecord::adv_g_warp},
      {"adv_d_trans", &StepRecord::adv_d_trans}, {"adv_d_warp", &StepRecord::adv_d_warp},
      {"smooth", &StepRecord::smooth},           {"train_mae", &StepRecord::train_mae}};
  return f;
}

}  // namespace

const std::vector<std::string>& TrainLog::columns() {
  static const std::vector<std::string> c = [] {
    std::vector<std::string> out{"epoch"};
    for (const auto& f : fields()) out.push_back(f.name);
    return out;
  }();
  return c;
}

std::string TrainLog::to_csv() const {
  std::string out;
  for (std::size_t i = 0; i < columns().size(); ++i) out += (i ? "," : "") + columns()[i];
  out += "\n";
  char buf[64];
  for (const auto& e : epochs) {
    out += std::to_string(e.epoch);
    for (const auto& f : fields()) {
      std::snprintf(buf, sizeof buf, ",%.9g", e.mean.*(f.member));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

json TrainLog::to_json() const {
  json rows = json::array();
  for (const auto& e : epochs) {
    json row = {{"epoch", e.epoch}};
    for (const auto& f : fields()) row[f.name] = e.mean.*(f.member);
    rows.push_back(row);
  }
  return rows;
}

TrainLog TrainLog::from_json(const json& j) {
  TrainLog log;
  for (const auto& row : j) {
    EpochRecord e;
    e.epoch = row.at("epoch").get<std::size_t>();
    for (const auto& f : fields()) e.mean.*(f.member) = row.at(f.name).get<double>();
    log.epochs.push_back(e);
  }
  return log;
}

Batch make_batch(const std::vector<ImagePair>& pairs, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("empty batch");
  const Shape one = pairs.at(indices[0]).source.shape();
  std::vector<float> x, y;
  for (auto i : indices) {
    const auto& p = pairs.at(i);
    if (p.source.shape() != one || p.reference.shape() != one)
      throw ShapeError("batch items disagree in shape: " + p.id);
    x.insert(x.end(), p.source.data().begin(), p.source.data().end());
    y.insert(y.end(), p.reference.data().begin(), p.reference.data().end());
  }
  Shape shape = one;
  shape[0] = indices.size();
  return {Tensor<float>::from(shape, std::move(x)), Tensor<float>::from(shape, std::move(y))};
}

TrainState TrainState::fresh(const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.params = ModelParams<float>::init(cfg.model(), cfg.seed);
  s.opt_g = AdamState::for_params(s.params.generator_parameters());
  s.opt_d = AdamState::for_params(s.params.discriminator_parameters());
  return s;
}

namespace {

void require_finite(const StepRecord& r, const TrainConfig& cfg, std::uint64_t step) {
  for (const auto& f : fields()) {
    const double v = r.*(f.member);
    if (!std::isfinite(v)) {
      json dump = {{"step", step}, {"term", f.name}, {"value", std::to_string(v)}, {"config", to_json(cfg)}};
      throw NumericalError("non-finite loss term " + std::string(f.name) + " at step " +
                           std::to_string(step) + ": " + dump.dump());
    }
  }
}

}  // namespace

StepRecord train_step(const Batch& batch, ModelParams<float>& params, AdamState& opt_g, AdamState& opt_d,
                      const TrainConfig& cfg) {
  const auto w = cfg.weights();
  const auto cfg_warp = cfg.dnmi_warp(), cfg_cross = cfg.dnmi_cross();
  const AdamOptions adam{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  const auto gen = params.generator_parameters();
  const auto disc = params.discriminator_parameters();
  StepRecord r;

  auto out = forward(batch.x, params.generator, cfg.integration_steps);

  // Discriminator step on detached candidates.
  {
    const auto fake_t = out.y_trans.detach(), fake_w = out.y_warp.detach();
    auto d_t = adv_d_loss(discriminate(batch.x, batch.y, params.d_trans), discriminate(batch.x, fake_t, params.d_trans));
    auto d_w = adv_d_loss(discriminate(batch.x, batch.y, params.d_warp), discriminate(batch.x, fake_w, params.d_warp));
    auto loss_d = total_discriminator_loss(d_t, d_w, w);
    r.adv_d_trans = d_t.item();
    r.adv_d_warp = d_w.item();
    r.loss_d = loss_d.item();
    zero_grad(disc);
    backward(loss_d);
    adam_update(disc, opt_d, adam);
  }

  // Generator step against the updated discriminators, which stay frozen.
  set_requires_grad(disc, false);
  auto terms = content_alignment_terms(out.y_trans, out.y_warp, batch.y, w, cfg_warp, cfg_cross);
  auto g_t = adv_g_loss(discriminate(batch.x, out.y_trans, params.d_trans));
  auto g_w = adv_g_loss(discriminate(batch.x, out.y_warp, params.d_warp));
  auto smooth = smoothness_loss(out.v);
  auto loss_g = total_generator_loss(terms.total, g_t, g_w, smooth, w);
  r.l1_trans = terms.l1_trans.item();
  r.dnmi_warp = terms.dnmi_warp.item();
  r.dnmi_cross = terms.dnmi_cross.item();
  r.align = terms.total.item();
  r.adv_g_trans = g_t.item();
  r.adv_g_warp = g_w.item();
  r.smooth = smooth.item();
  r.loss_g = loss_g.item();
  r.train_mae = r.l1_trans * 127.5;
  try {
    require_finite(r, cfg, opt_g.step + 1);
  } catch (...) {
    set_requires_grad(disc, true);
    throw;
  }
  zero_grad(gen);
  backward(loss_g);
  adam_update(gen, opt_g, adam);
  set_requires_grad(disc, true);
  return r;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::derive(seed, "epoch-" + std::to_string(epoch));
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; s += batch_size)
    out.emplace_back(order.begin() + s, order.begin() + std::min(n, s + batch_size));
  return out;
}

TrainState fit(const std::vector<ImagePair>& train_pairs, const TrainConfig& cfg, TrainState state,
               const FitOptions& options) {
  cfg.validate();
  if (train_pairs.empty()) throw std::invalid_argument("fit: no training pairs");
  for (const auto& p : train_pairs)
    if (p.source.dim(2) != cfg.image_size || p.source.dim(3) != cfg.image_size)
      throw ShapeError("pair " + p.id + " is " + shape_str(p.source.shape()) + " but image_size is " +
                       std::to_string(cfg.image_size));
  std::string timing = "epoch,seconds\n";
  if (options.out_dir) std::filesystem::create_directories(*options.out_dir);

  while (state.epoch < cfg.epochs) {
    const std::size_t epoch = state.epoch + 1;
    const auto start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t count = 0;
    for (const auto& idx : epoch_batches(train_pairs.size(), cfg.batch_size, cfg.seed, epoch)) {
      const auto r = train_step(make_batch(train_pairs, idx), state.params, state.opt_g, state.opt_d, cfg);
      // Weighted by batch size so the mean is per pair.
      for (const auto& f : fields()) rec.mean.*(f.member) += r.*(f.member) * double(idx.size());
      count += idx.size();
    }
    for (const auto& f : fields()) rec.mean.*(f.member) /= double(count);
    state.log.epochs.push_back(rec);
    state.epoch = epoch;
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (options.on_epoch) options.on_epoch(rec, seconds);
    if (options.out_dir) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%zu,%.3f\n", epoch, seconds);
      timing += buf;
      if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch < cfg.epochs)
        save_checkpoint(cfg, state, *options.out_dir / "latest.ttck");
    }
  }
  if (options.out_dir) {
    save_checkpoint(cfg, state, *options.out_dir / "final.ttck");
    write_text_atomic(*options.out_dir / "train_log.csv", state.log.to_csv());
    write_text_atomic(*options.out_dir / "timing.csv", timing);
  }
  return state;
}

}  // namespace tracewarp
