#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "tracewarp/gradcheck.hpp"
#include "tracewarp/losses.hpp"
#include "tracewarp/ops.hpp"
#include "tracewarp/random.hpp"

using namespace tracewarp;

namespace {

Tensor<double> noise(Rng& rng, Shape shape, bool requires_grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor<double>::from(std::move(shape), std::move(v), requires_grad);
}

// Intensity ramp with a bright blob and a dark square, spanning [-1, 1].
Tensor<double> structured(std::size_t h, std::size_t w) {
  std::vector<double> v(h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double x = -1.0 + 2.0 * (0.6 * i / (h - 1.0) + 0.4 * j / (w - 1.0));
      const double r2 = std::pow(i - h * 0.4, 2) + std::pow(j - w * 0.6, 2);
      x += 0.8 * std::exp(-r2 / (0.02 * h * w));
      if (i > h / 2 && i < 3 * h / 4 && j > w / 5 && j < w / 2) x = -0.9;
      v[i * w + j] = std::clamp(x, -1.0, 1.0);
    }
  return Tensor<double>::from({1, 1, h, w}, std::move(v));
}

// Plain counting NMI with hard bins over [-1, 1].
double counting_nmi(const Tensor<double>& a, const Tensor<double>& b, int bins) {
  std::vector<double> joint(bins * bins, 0.0), pa(bins, 0.0), pb(bins, 0.0);
  const auto n = a.numel();
  auto bin = [bins](double x) {
    return std::clamp(static_cast<int>((x + 1.0) / 2.0 * bins), 0, bins - 1);
  };
  for (std::size_t i = 0; i < n; ++i) {
    const int ia = bin(a.data()[i]), ib = bin(b.data()[i]);
    joint[ia * bins + ib] += 1.0 / n;
    pa[ia] += 1.0 / n;
    pb[ib] += 1.0 / n;
  }
  auto entropy = [](const std::vector<double>& p) {
    double h = 0.0;
    for (double q : p)
      if (q > 0) h -= q * std::log(q);
    return h;
  };
  return (entropy(pa) + entropy(pb)) / entropy(joint);
}

const DnmiConfig kWarp{16, 0.5, {-1.0, 1.0}};
const DnmiConfig kCross{32, 0.5, {-1.0, 1.0}};

}  // namespace

TEST_CASE("configs validate their ranges") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.alpha = 1.5;
  CHECK_THROWS(w.validate());
  w = LossWeights{};
  w.gamma = -1;
  CHECK_THROWS(w.validate());
  DnmiConfig c;
  c.bins = 1;
  CHECK_THROWS(c.validate());
  c = DnmiConfig{};
  c.value_range = {1.0, 1.0};
  CHECK_THROWS(c.validate());
}

TEST_CASE("dnmi with a narrow kernel matches the counting oracle") {
  // Two and three intensity levels placed on bin centres.
  DnmiConfig narrow{16, 0.1, {-1.0, 1.0}};
  const double centre = -1.0 + 2.0 * (3 + 0.5) / 16, other = -1.0 + 2.0 * (12 + 0.5) / 16;
  std::vector<double> two(64), three(64);
  for (std::size_t i = 0; i < 64; ++i) {
    two[i] = i < 24 ? centre : other;
    three[i] = i < 20 ? centre : (i < 40 ? other : 0.0625);
  }
  for (const auto& values : {two, three}) {
    auto a = Tensor<double>::from({1, 1, 8, 8}, values);
    const double soft = dnmi(a, a, narrow).item();
    const double hard = counting_nmi(a, a, 16);
    CHECK(hard == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(std::abs(soft - hard) < 0.05);
  }
}

TEST_CASE("dnmi of identical structured images is close to 2") {
  auto a = structured(32, 32);
  CHECK(dnmi_loss(a, a, kCross).item() <= -1.5);
  // Kernel spread over 16 bins caps self-similarity near 1.49 even for a
  // uniform intensity histogram.
  CHECK(dnmi_loss(a, a, kWarp).item() <= -1.45);
}

TEST_CASE("dnmi of independent noise is close to 1") {
  Rng rng(17);
  auto a = noise(rng, {1, 1, 100, 100});
  auto b = noise(rng, {1, 1, 100, 100});
  const double v = dnmi(a, b, kWarp).item();
  CHECK(std::abs(v - 1.0) < 0.05);
  CHECK(std::abs(dnmi_loss(a, b, kWarp).item() + 1.0) < 0.05);
  CHECK(std::abs(counting_nmi(a, b, 16) - 1.0) < 0.05);
}

TEST_CASE("dnmi is symmetric and bounded") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    auto a = noise(rng, {2, 1, 12, 12});
    auto b = add(scale(a, 0.5), scale(noise(rng, {2, 1, 12, 12}), 0.4));
    for (const auto& cfg : {kWarp, kCross}) {
      const double ab = dnmi(a, b, cfg).item(), ba = dnmi(b, a, cfg).item();
      CHECK(std::abs(ab - ba) < 1e-10);
      CHECK(ab >= 1.0 - 0.02);
      CHECK(ab <= 2.0 + 0.02);
    }
  }
}

TEST_CASE("dnmi is unchanged by a joint remap that realigns bins") {
  // Shifting both images by a whole number of bins keeps every kernel weight.
  Rng rng(8);
  auto a = scale(noise(rng, {1, 1, 16, 16}), 0.5);
  auto b = scale(add(a, scale(noise(rng, {1, 1, 16, 16}), 0.3)), 0.6);
  DnmiConfig wide{16, 0.5, {-2.0, 2.0}};
  const double base = dnmi(a, b, wide).item();
  const double shift = 4.0 / 16.0 * 3;  // three bins
  const double moved = dnmi(add_scalar(a, shift), add_scalar(b, shift), wide).item();
  CHECK(std::abs(base - moved) < 1e-9);
}

TEST_CASE("dnmi rejects empty or mismatched input") {
  CHECK_THROWS(dnmi(Tensor<double>::zeros({0}), Tensor<double>::zeros({0}), kWarp));
  CHECK_THROWS(dnmi(Tensor<double>::zeros({1, 1, 4, 4}), Tensor<double>::zeros({1, 1, 4, 5}), kWarp));
}

TEST_CASE("gradient descent on dnmi loss drives a noise image toward the target") {
  auto target = structured(16, 16);
  Rng rng(5);
  auto b = scale(noise(rng, {1, 1, 16, 16}), 0.9).detach();
  b.set_requires_grad(true);
  std::vector<double> history;
  for (int step = 0; step < 200; ++step) {
    auto loss = dnmi_loss(target, b, kWarp);
    history.push_back(loss.item());
    b.zero_grad();
    backward(loss);
    auto values = b.mutable_data();
    const auto& g = b.grad();
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] = std::clamp(values[i] - 3.0 * g[i], -1.0, 1.0);
  }
  // Means over consecutive windows of 20 steps.
  std::vector<double> smoothed;
  for (std::size_t s = 0; s + 20 <= history.size(); s += 20) {
    double acc = 0.0;
    for (std::size_t k = s; k < s + 20; ++k) acc += history[k];
    smoothed.push_back(acc / 20);
  }
  for (std::size_t i = 1; i < smoothed.size(); ++i) CHECK(smoothed[i] < smoothed[i - 1]);
  CHECK(history.back() < history.front() - 0.1);
}

TEST_CASE("l1 loss") {
  Rng rng(1);
  auto y = noise(rng, {2, 1, 4, 4});
  CHECK(l1_loss(y, y).item() == 0.0);
  CHECK(l1_loss(add_scalar(y, 0.5), y).item() == doctest::Approx(0.5).epsilon(1e-14));
  auto p = noise(rng, {2, 1, 4, 4}, true);
  backward(l1_loss(p, y));
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double sign = p.data()[i] > y.data()[i] ? 1.0 : -1.0;
    CHECK(p.grad()[i] == doctest::Approx(sign / 32.0).epsilon(1e-14));
  }
}

TEST_CASE("content alignment assembles its three terms") {
  Rng rng(12);
  auto yt = noise(rng, {2, 1, 8, 8});
  auto yw = noise(rng, {2, 1, 8, 8});
  auto y = noise(rng, {2, 1, 8, 8});
  const double l1 = l1_loss(yt, y).item();
  const double lw = dnmi_loss(yw, y, kWarp).item();
  const double lc = dnmi_loss(yt, yw, kCross).item();

  LossWeights w;
  w.alpha = 1.0;
  CHECK(content_alignment_loss(yt, yw, y, w, kWarp, kCross).item() == l1);
  w.alpha = 0.0;
  CHECK(content_alignment_loss(yt, yw, y, w, kWarp, kCross).item() == lw);
  w.alpha = 0.5;
  w.gamma = 1.0;
  CHECK(std::abs(content_alignment_loss(yt, yw, y, w, kWarp, kCross).item() -
                 (0.5 * l1 + 0.5 * lw + 0.5 * lc)) < 1e-10);
  for (double alpha : {0.2, 0.7}) {
    w.alpha = alpha;
    w.gamma = 0.3;
    const auto t = content_alignment_terms(yt, yw, y, w, kWarp, kCross);
    CHECK(t.l1_trans.item() == l1);
    CHECK(t.dnmi_warp.item() == lw);
    CHECK(t.dnmi_cross.item() == lc);
    const double expected = alpha * l1 + (1 - alpha) * lw + std::min(alpha, 1 - alpha) * 0.3 * lc;
    CHECK(std::abs(t.total.item() - expected) < 1e-10);
  }
}

TEST_CASE("least-squares adversarial losses") {
  CHECK(adv_g_loss(Tensor<double>::full({2, 1, 4, 4}, 1.0)).item() == 0.0);
  CHECK(adv_d_loss(Tensor<double>::full({2, 1, 4, 4}, 1.0), Tensor<double>::zeros({2, 1, 4, 4})).item() == 0.0);
  CHECK(adv_d_loss(Tensor<double>::full({1, 1, 2, 2}, 0.5), Tensor<double>::full({1, 1, 2, 2}, 0.5)).item() ==
        doctest::Approx(0.25).epsilon(1e-15));
  CHECK(adv_g_loss(Tensor<double>::full({1, 1, 2, 2}, 0.0)).item() == 1.0);
}

TEST_CASE("overall objectives use the configured coefficients") {
  auto s = [](double v) { return Tensor<double>::scalar(v); };
  const double align = 0.37, gt = 0.8, gw = 0.6, smooth = 0.05, dt = 0.3, dw = 0.45;
  LossWeights w;  // alpha 0.5, gamma 1, lambda_adv 0.01, lambda_smooth 0.2
  CHECK(w.alpha == 0.5);
  CHECK(w.gamma == 1.0);
  CHECK(w.lambda_adv == 0.01);
  CHECK(w.lambda_smooth == 0.2);
  CHECK(std::abs(total_generator_loss(s(align), s(gt), s(gw), s(smooth), w).item() -
                 (align + 0.01 * (0.5 * gt + 0.5 * gw) + 0.5 * 0.2 * smooth)) < 1e-10);
  CHECK(std::abs(total_discriminator_loss(s(dt), s(dw), w).item() - 0.01 * (0.5 * dt + 0.5 * dw)) < 1e-10);

  w.alpha = 1.0;
  CHECK(std::abs(total_generator_loss(s(align), s(gt), s(gw), s(smooth), w).item() -
                 (align + 0.01 * gt)) < 1e-10);
  CHECK(std::abs(total_discriminator_loss(s(dt), s(dw), w).item() - 0.01 * dt) < 1e-10);

  w = LossWeights{};
  w.lambda_adv = 0.0;
  w.lambda_smooth = 0.0;
  CHECK(total_generator_loss(s(align), s(gt), s(gw), s(smooth), w).item() == align);
}

TEST_CASE("alpha = 1 leaves the warp stream without gradient") {
  Rng rng(2);
  auto yt = noise(rng, {1, 1, 8, 8}, true);
  auto yw = noise(rng, {1, 1, 8, 8}, true);
  auto y = noise(rng, {1, 1, 8, 8});
  auto v = noise(rng, {1, 2, 8, 8}, true);
  LossWeights w;
  w.alpha = 1.0;
  auto align = content_alignment_loss(yt, yw, y, w, kWarp, kCross);
  auto total = total_generator_loss(align, adv_g_loss(yt), adv_g_loss(yw), mean(square(v)), w);
  backward(total);
  for (double g : yw.grad()) CHECK(g == 0.0);
  for (double g : v.grad()) CHECK(g == 0.0);
  bool any = false;
  for (double g : yt.grad()) any = any || g != 0.0;
  CHECK(any);
}

TEST_CASE("finite gradients and finite-difference agreement for every loss") {
  for (const auto& c : gradcheck_cases()) {
    if (c.name.rfind("dnmi", 0) != 0 && c.name.rfind("content_alignment", 0) != 0 &&
        c.name != "l1_loss" && c.name != "adversarial")
      continue;
    for (std::uint64_t seed : {0, 1, 2, 3, 4}) {
      const auto r = c.run(seed);
      INFO(c.name << " seed " << seed << " error " << r.max_rel_error);
      CHECK(r.passed);
    }
  }
}
