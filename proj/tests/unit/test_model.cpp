#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "tracewarp/model.hpp"
#include "tracewarp/ops.hpp"
#include "tracewarp/random.hpp"

using namespace tracewarp;

namespace {

Tensor<float> image(Rng& rng, std::size_t n, std::size_t size = 64) {
  std::vector<float> v(n * size * size);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return Tensor<float>::from({n, 1, size, size}, std::move(v));
}

bool all_zero(const Tensor<float>& t) {
  if (!t.has_grad()) return true;
  const auto g = t.grad();
  return std::all_of(g.begin(), g.end(), [](float v) { return v == 0.0f; });
}

bool any_nonzero(const Tensor<float>& t) { return !all_zero(t); }

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

void randomize_head(Conv<float>& head, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& w : head.weight.mutable_data()) w = static_cast<float>(rng.normal() * 0.05);
}

std::vector<float> values(const Tensor<float>& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("config validation and channel scaling") {
  ModelConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.scaled_encoder() == std::array<std::size_t, 5>{8, 16, 32, 64, 64});
  CHECK(cfg.scaled_discriminator() == std::array<std::size_t, 3>{8, 16, 32});
  cfg.image_size = 48;
  CHECK_THROWS(cfg.validate());
  cfg = ModelConfig{};
  cfg.width_factor = 1.0;
  CHECK(cfg.scaled_encoder() == std::array<std::size_t, 5>{64, 128, 256, 512, 512});
}

TEST_CASE("encoder pyramid sizes at desk scale") {
  auto m = ModelParams<float>::init(ModelConfig{}, 1);
  Rng rng(1);
  auto f = encode(image(rng, 2), m.generator.encoder);
  const std::size_t sizes[] = {32, 16, 8, 4, 2}, chans[] = {8, 16, 32, 64, 64};
  for (std::size_t i = 0; i < 5; ++i) CHECK(f.stages[i].shape() == Shape{2, chans[i], sizes[i], sizes[i]});
  CHECK_THROWS_AS(encode(Tensor<float>::zeros({1, 1, 48, 48}), m.generator.encoder), ShapeError);
}

TEST_CASE("zero input with zero biases gives zero features") {
  auto m = ModelParams<float>::init(ModelConfig{}, 2);
  auto f = encode(Tensor<float>::zeros({1, 1, 64, 64}), m.generator.encoder);
  for (const auto& s : f.stages)
    for (float x : s.data()) CHECK(x == 0.0f);
}

TEST_CASE("initialisation and encoding are deterministic") {
  auto a = ModelParams<float>::init(ModelConfig{}, 5);
  auto b = ModelParams<float>::init(ModelConfig{}, 5);
  auto c = ModelParams<float>::init(ModelConfig{}, 6);
  const auto pa = a.all_parameters(), pb = b.all_parameters(), pc = c.all_parameters();
  REQUIRE(pa.size() == pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(values(pa[i].tensor) == values(pb[i].tensor));
    differs = differs || values(pa[i].tensor) != values(pc[i].tensor);
  }
  CHECK(differs);
  Rng r1(3), r2(3);
  auto fa = encode(image(r1, 1), a.generator.encoder);
  auto fb = encode(image(r2, 1), b.generator.encoder);
  for (std::size_t i = 0; i < 5; ++i) CHECK(values(fa.stages[i]) == values(fb.stages[i]));

  // Both precisions come from the same double draws.
  auto d = ModelParams<double>::init(ModelConfig{}, 5);
  const auto pd = d.all_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t k = 0; k < pa[i].tensor.numel(); ++k)
      CHECK(pa[i].tensor.data()[k] == static_cast<float>(pd[i].tensor.data()[k]));
}

TEST_CASE("parameter count at desk scale") {
  ModelConfig cfg;
  auto m = ModelParams<float>::init(cfg, 0);
  // Count from the layer list: 3x3 kernels plus biases.
  auto conv = [](std::size_t in, std::size_t out) { return in * out * 9 + out; };
  const std::size_t e[] = {8, 16, 32, 64, 64};
  std::size_t expected = conv(1, 8) + conv(8, 16) + conv(16, 32) + conv(32, 64) + conv(64, 64);
  for (std::size_t out : {std::size_t{1}, std::size_t{2}}) {
    expected += conv(e[4] + e[3], e[3]) + conv(e[3] + e[2], e[2]) + conv(e[2] + e[1], e[1]) +
                conv(e[1] + e[0], e[0]) + conv(e[0] + 1, e[0]) + conv(e[0], out);
  }
  expected += 2 * (conv(2, 8) + conv(8, 16) + conv(16, 32) + conv(32, 1));
  CHECK(m.parameter_count() == expected);
  CHECK(m.parameter_count() == 295613);
  CHECK(ModelParams<float>::init(cfg, 1).parameter_count() == 295613);

  cfg.shared_encoder = false;
  CHECK(ModelParams<float>::init(cfg, 0).parameter_count() == 295613 + 61312);
}

TEST_CASE("parameter names are unique and discriminators are separate") {
  auto m = ModelParams<float>::init(ModelConfig{}, 0);
  auto all = m.all_parameters();
  std::vector<std::string> names;
  for (const auto& p : all) names.push_back(p.name);
  std::sort(names.begin(), names.end());
  CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());
  CHECK(m.d_trans.head.weight.node() != m.d_warp.head.weight.node());
  CHECK(values(m.d_trans.down[0].weight) != values(m.d_warp.down[0].weight));
}

TEST_CASE("translation output is bounded and full size") {
  auto m = ModelParams<float>::init(ModelConfig{}, 3);
  Rng rng(4);
  auto x = image(rng, 2);
  auto y = decode_translate(encode(x, m.generator.encoder), m.generator);
  CHECK(y.shape() == x.shape());
  for (float v : y.data()) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("velocity head starts at zero so the warp starts at identity") {
  auto m = ModelParams<float>::init(ModelConfig{}, 3);
  Rng rng(5);
  auto x = image(rng, 2);
  auto out = forward(x, m.generator);
  CHECK(out.v.grid.shape() == Shape{2, 2, 64, 64});
  float vmax = 0.0f;
  for (float v : out.v.grid.data()) vmax = std::max(vmax, std::abs(v));
  CHECK(vmax < 1e-3f);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::abs(out.y_warp.data()[i] - x.data()[i]) <= 1e-6f);
}

TEST_CASE("forward outputs are finite and the streams are independent") {
  auto m = ModelParams<float>::init(ModelConfig{}, 8);
  randomize_head(m.generator.decoder_f.head, 1);
  Rng rng(6);
  auto x = image(rng, 2);
  auto out = forward(x, m.generator);
  for (const auto* t : {&out.y_trans, &out.y_warp, &out.v.grid, &out.u.grid, &out.phi.grid})
    for (float v : t->data()) CHECK(std::isfinite(v));

  auto zeroed = m;  // shares tensors; replace f's params with fresh zeros
  for (auto& c : zeroed.generator.decoder_f.up) {
    c.weight = Tensor<float>::zeros(c.weight.shape());
    c.bias = Tensor<float>::zeros(c.bias.shape());
  }
  zeroed.generator.decoder_f.head.weight = Tensor<float>::zeros(m.generator.decoder_f.head.weight.shape());
  auto again = forward(x, zeroed.generator);
  CHECK(values(again.y_trans) == values(out.y_trans));
}

TEST_CASE("each stream's loss reaches the shared encoder and only its own decoder") {
  auto m = ModelParams<float>::init(ModelConfig{}, 9);
  randomize_head(m.generator.decoder_f.head, 2);
  Rng rng(7);
  auto x = image(rng, 2);
  auto r = image(rng, 2);
  const auto params = m.generator_parameters();

  SUBCASE("translation stream") {
    auto out = forward(x, m.generator);
    backward(mean(mul(out.y_trans, r)));
    for (const auto& p : params) {
      INFO(p.name);
      if (starts_with(p.name, "gen.decoder_f")) CHECK(all_zero(p.tensor));
      if (starts_with(p.name, "gen.encoder") || starts_with(p.name, "gen.decoder_g"))
        CHECK(any_nonzero(p.tensor));
    }
  }
  SUBCASE("warp stream") {
    auto out = forward(x, m.generator);
    backward(mean(mul(out.y_warp, r)));
    for (const auto& p : params) {
      INFO(p.name);
      if (starts_with(p.name, "gen.decoder_g")) CHECK(all_zero(p.tensor));
      if (starts_with(p.name, "gen.encoder") || starts_with(p.name, "gen.decoder_f"))
        CHECK(any_nonzero(p.tensor));
    }
  }
}

TEST_CASE("separate encoders isolate the streams completely") {
  ModelConfig cfg;
  cfg.shared_encoder = false;
  auto m = ModelParams<float>::init(cfg, 10);
  randomize_head(m.generator.decoder_f.head, 3);
  Rng rng(8);
  auto x = image(rng, 1);
  auto r = image(rng, 1);
  auto out = forward(x, m.generator);
  backward(mean(mul(out.y_warp, r)));
  for (const auto& p : m.generator_parameters()) {
    INFO(p.name);
    if (starts_with(p.name, "gen.encoder.") || starts_with(p.name, "gen.decoder_g"))
      CHECK(all_zero(p.tensor));
    if (starts_with(p.name, "gen.encoder_f.")) CHECK(any_nonzero(p.tensor));
  }
}

TEST_CASE("discriminator patch map") {
  auto m = ModelParams<float>::init(ModelConfig{}, 11);
  Rng rng(9);
  auto x = image(rng, 3);
  auto y = image(rng, 3);
  auto d = discriminate(x, y, m.d_trans);
  CHECK(d.shape() == Shape{3, 1, 8, 8});
  for (float v : d.data()) CHECK(std::isfinite(v));

  // Swapping batch items swaps the score maps.
  auto swap_batch = [](const Tensor<float>& t) {
    std::vector<float> v(t.data().begin(), t.data().end());
    const std::size_t per = t.numel() / t.dim(0);
    std::swap_ranges(v.begin(), v.begin() + per, v.begin() + 2 * per);
    return Tensor<float>::from(t.shape(), std::move(v));
  };
  auto swapped = discriminate(swap_batch(x), swap_batch(y), m.d_trans);
  CHECK(values(swapped) == values(swap_batch(d)));
  CHECK_THROWS_AS(discriminate(x, image(rng, 2), m.d_trans), ShapeError);
}

TEST_CASE("requires_grad toggling freezes a parameter group") {
  auto m = ModelParams<float>::init(ModelConfig{}, 12);
  Rng rng(10);
  auto x = image(rng, 1);
  const auto disc = m.discriminator_parameters();
  set_requires_grad(disc, false);
  auto out = forward(x, m.generator);
  backward(mean(discriminate(x, out.y_trans, m.d_trans)));
  for (const auto& p : disc) CHECK(all_zero(p.tensor));
  bool any = false;
  for (const auto& p : m.generator_parameters()) any = any || any_nonzero(p.tensor);
  CHECK(any);
  set_requires_grad(disc, true);
  zero_grad(m.all_parameters());
  backward(mean(discriminate(x, out.y_trans.detach(), m.d_trans)));
  for (const auto& p : m.generator_parameters()) CHECK(all_zero(p.tensor));
  CHECK(any_nonzero(m.d_trans.head.weight));
}
