#include "tracewarp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tracewarp/deformation.hpp"
#include "tracewarp/losses.hpp"
#include "tracewarp/model.hpp"
#include "tracewarp/ops.hpp"
#include "tracewarp/random.hpp"

namespace tracewarp {

GradCheckResult check_gradients(const std::string& name, const std::vector<Tensor<double>>& leaves,
                                const std::function<Tensor<double>()>& loss,
                                const GradCheckOptions& options) {
  for (const auto& leaf : leaves) {
    auto t = leaf;
    t.zero_grad();
  }
  backward(loss());

  Rng rng = Rng::derive(options.seed, name);
  GradCheckResult result;
  result.name = name;
  for (const auto& leaf_ref : leaves) {
    auto leaf = leaf_ref;
    const auto taped = leaf.grad();
    std::vector<std::size_t> coords(leaf.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coordinates && coords.size() > options.max_coordinates) {
      rng.shuffle(coords);
      coords.resize(options.max_coordinates);
    }
    double diff2 = 0, tape2 = 0, fd2 = 0;
    auto values = leaf.mutable_data();
    auto central = [&](std::size_t idx, double h) {
      const double saved = values[idx];
      values[idx] = saved + h;
      const double plus = loss().item();
      values[idx] = saved - h;
      const double minus = loss().item();
      values[idx] = saved;
      return (plus - minus) / (2.0 * h);
    };
    std::size_t used = 0;
    for (std::size_t idx : coords) {
      const double fd = central(idx, options.step);
      // A kink inside the stencil shows up as step-size dependence; such
      // coordinates sit at a non-differentiable point and are skipped.
      const double fine = central(idx, 0.1 * options.step);
      if (std::abs(fd - fine) > 1e-5 * (std::abs(fd) + std::abs(fine)) + 1e-9) {
        ++result.skipped;
        continue;
      }
      ++used;
      diff2 += (taped[idx] - fd) * (taped[idx] - fd);
      tape2 += taped[idx] * taped[idx];
      fd2 += fd * fd;
    }
    const double denom = std::max({std::sqrt(tape2), std::sqrt(fd2), 1e-8});
    result.max_rel_error = std::max(result.max_rel_error, std::sqrt(diff2) / denom);
    result.coordinates += used;
    leaf.zero_grad();
  }
  result.passed = std::isfinite(result.max_rel_error) && result.max_rel_error < options.tolerance;
  return result;
}

namespace {

using D = double;

// Uniform in [-1,1]; with `gap` > 0 magnitudes stay in [gap, 1] so that
// kinks at zero are never straddled by the finite-difference step.
Tensor<D> random_tensor(Rng& rng, Shape shape, double gap = 0.0) {
  std::vector<D> v(shape_numel(shape));
  for (auto& x : v) {
    const double mag = gap + (1.0 - gap) * rng.uniform();
    x = rng.uniform() < 0.5 ? -mag : mag;
  }
  return Tensor<D>::from(std::move(shape), std::move(v), true);
}

Tensor<D> random_const(Rng& rng, Shape shape) {
  auto t = random_tensor(rng, std::move(shape));
  t.set_requires_grad(false);
  return t;
}

// Scalar probe sum(out * r) with fixed random r.
Tensor<D> probe(const Tensor<D>& out, const Tensor<D>& r) { return sum(mul(out, r)); }

GradCheckCase unary_case(std::string name, std::function<Tensor<D>(const Tensor<D>&)> op,
                         double gap = 0.0) {
  return {name, [name, op, gap](std::uint64_t seed) {
            Rng rng = Rng::derive(seed, name);
            auto x = random_tensor(rng, {2, 3, 4, 5}, gap);
            auto r = random_const(rng, op(x).shape());
            return check_gradients(name, {x}, [&] { return probe(op(x), r); }, {.seed = seed});
          }};
}

GradCheckCase binary_case(std::string name,
                          std::function<Tensor<D>(const Tensor<D>&, const Tensor<D>&)> op) {
  return {name, [name, op](std::uint64_t seed) {
            Rng rng = Rng::derive(seed, name);
            auto a = random_tensor(rng, {3, 4, 5});
            auto b = random_tensor(rng, {3, 4, 5});
            auto r = random_const(rng, op(a, b).shape());
            return check_gradients(name, {a, b}, [&] { return probe(op(a, b), r); },
                                   {.seed = seed});
          }};
}

// Absolute sample coordinates kept at least `gap` from integers, optionally
// spilling past the border to exercise clamping.
Tensor<D> random_coords(Rng& rng, std::size_t n, std::size_t h, std::size_t w, double spill) {
  std::vector<D> v(n * 2 * h * w);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < 2; ++c) {
      const double extent = static_cast<double>(c == 0 ? h : w) - 1.0;
      for (std::size_t p = 0; p < h * w; ++p) {
        double x = rng.uniform(-spill, extent + spill);
        const double frac = x - std::floor(x);
        if (frac < 0.05) x += 0.05;
        if (frac > 0.95) x -= 0.05;
        if (std::abs(x) < 0.05 || std::abs(x - extent) < 0.05) x += 0.1;
        v[(b * 2 + c) * h * w + p] = x;
      }
    }
  return Tensor<D>::from({n, 2, h, w}, std::move(v), true);
}

// Pixel values on [-1,1] away from the DNMI kernel cut-offs and from ties.
Tensor<D> random_image(Rng& rng, Shape shape) {
  auto t = random_tensor(rng, std::move(shape));
  for (auto& x : t.mutable_data()) x *= 0.95;
  return t;
}

GeneratorParams<D> gradcheck_generator(ModelParams<D>& m, Rng& rng) {
  // Give the velocity head non-zero weights so the deformation branch
  // carries gradient to the rest of the network.
  for (auto& x : m.generator.decoder_f.head.weight.mutable_data()) x = 0.3 * rng.normal();
  for (auto& x : m.generator.decoder_f.head.bias.mutable_data()) x = 0.3 * rng.normal();
  return m.generator;
}

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.image_size = 32;
  cfg.width_factor = 1.0 / 32.0;
  return cfg;
}

std::vector<Tensor<D>> tensors_of(const std::vector<NamedParam<D>>& params) {
  std::vector<Tensor<D>> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

}  // namespace

std::vector<GradCheckCase> gradcheck_cases() {
  std::vector<GradCheckCase> cases;
  cases.push_back(binary_case("add", [](auto& a, auto& b) { return add(a, b); }));
  cases.push_back(binary_case("sub", [](auto& a, auto& b) { return sub(a, b); }));
  cases.push_back(binary_case("mul", [](auto& a, auto& b) { return mul(a, b); }));
  cases.push_back(binary_case("concat", [](auto& a, auto& b) {
    return concat(concat(a, b, 0), concat(a, b, 0), 2);
  }));
  cases.push_back(unary_case("scale", [](auto& x) { return scale(x, 0.7); }));
  cases.push_back(unary_case("add_scalar", [](auto& x) { return add_scalar(x, -0.3); }));
  cases.push_back(unary_case("abs", [](auto& x) { return abs(x); }, 0.1));
  cases.push_back(unary_case("square", [](auto& x) { return square(x); }));
  cases.push_back(unary_case("tanh", [](auto& x) { return tanh(scale(x, 2.0)); }));
  cases.push_back(unary_case("leaky_relu", [](auto& x) { return leaky_relu(x, 0.2); }, 0.1));
  cases.push_back(unary_case("upsample_nearest2x", [](auto& x) { return upsample_nearest2x(x); }));
  cases.push_back({"sum", [](std::uint64_t seed) {
                     Rng rng = Rng::derive(seed, "sum");
                     auto x = random_tensor(rng, {4, 25});
                     return check_gradients("sum", {x}, [&] { return square(sum(x)); },
                                            {.seed = seed});
                   }});
  cases.push_back({"mean", [](std::uint64_t seed) {
                     Rng rng = Rng::derive(seed, "mean");
                     auto x = random_tensor(rng, {4, 25});
                     return check_gradients("mean", {x}, [&] { return square(mean(x)); },
                                            {.seed = seed});
                   }});
  for (std::size_t stride : {1, 2}) {
    const std::string name = "conv2d_stride" + std::to_string(stride);
    cases.push_back({name, [name, stride](std::uint64_t seed) {
                       Rng rng = Rng::derive(seed, name);
                       auto x = random_tensor(rng, {1, 2, 6, 6});
                       auto w = random_tensor(rng, {3, 2, 3, 3});
                       auto b = random_tensor(rng, {3});
                       const std::size_t out = stride == 1 ? 6 : 3;
                       auto r = random_const(rng, {1, 3, out, out});
                       return check_gradients(
                           name, {x, w, b}, [&] { return probe(conv2d(x, w, b, stride, 1), r); },
                           {.seed = seed});
                     }});
  }
  cases.push_back({"warp", [](std::uint64_t seed) {
                     Rng rng = Rng::derive(seed, "warp");
                     auto m = random_tensor(rng, {1, 2, 6, 7});
                     auto phi = random_coords(rng, 1, 6, 7, 0.0);
                     auto r = random_const(rng, {1, 2, 6, 7});
                     return check_gradients("warp", {m, phi},
                                            [&] { return probe(warp(m, phi), r); }, {.seed = seed});
                   }});
  cases.push_back({"warp_border", [](std::uint64_t seed) {
                     Rng rng = Rng::derive(seed, "warp_border");
                     auto m = random_tensor(rng, {1, 1, 6, 6});
                     auto phi = random_coords(rng, 1, 6, 6, 1.5);
                     auto r = random_const(rng, {1, 1, 6, 6});
                     return check_gradients("warp_border", {m, phi},
                                            [&] { return probe(warp(m, phi), r); }, {.seed = seed});
                   }});
  cases.push_back({"integrate_velocity", [](std::uint64_t seed) {
                     Rng rng = Rng::derive(seed, "integrate_velocity");
                     auto v = random_tensor(rng, {1, 2, 8, 8}, 0.2);
                     for (auto& x : v.mutable_data()) x *= 1.5;
                     auto r = random_const(rng, {1, 2, 8, 8});
                     return check_gradients("integrate_velocity", {v}, [&] {
                       return probe(integrate_velocity(VelocityField<D>{v}, 7).grid, r);
                     }, {.seed = seed});
                   }});
  cases.push_back({"smoothness", [](std::uint64_t seed) {
                     Rng rng = Rng::derive(seed, "smoothness");
                     auto v = random_tensor(rng, {2, 2, 5, 5});
                     return check_gradients("smoothness", {v},
                                            [&] { return smoothness_loss(VelocityField<D>{v}); },
                                            {.seed = seed});
                   }});
  cases.push_back({"dnmi", [](std::uint64_t seed) {
                     Rng rng = Rng::derive(seed, "dnmi");
                     auto a = random_image(rng, {1, 1, 10, 10});
                     auto b = random_image(rng, {1, 1, 10, 10});
                     // Correlate b with a so the joint histogram has structure.
                     for (std::size_t i = 0; i < 100; ++i)
                       b.mutable_data()[i] = 0.6 * a.data()[i] + 0.35 * b.data()[i];
                     return check_gradients("dnmi", {a, b}, [&] { return dnmi(a, b, DnmiConfig{}); },
                                            {.seed = seed});
                   }});
  cases.push_back({"l1_loss", [](std::uint64_t seed) {
                     Rng rng = Rng::derive(seed, "l1_loss");
                     auto a = random_tensor(rng, {1, 1, 8, 8});
                     auto b = random_const(rng, {1, 1, 8, 8});
                     for (std::size_t i = 0; i < 64; ++i)
                       if (std::abs(a.data()[i] - b.data()[i]) < 0.05) a.mutable_data()[i] += 0.1;
                     return check_gradients("l1_loss", {a}, [&] { return l1_loss(a, b); },
                                            {.seed = seed});
                   }});
  cases.push_back({"adversarial", [](std::uint64_t seed) {
                     Rng rng = Rng::derive(seed, "adversarial");
                     auto real = random_tensor(rng, {2, 1, 4, 4});
                     auto fake = random_tensor(rng, {2, 1, 4, 4});
                     return check_gradients("adversarial", {real, fake}, [&] {
                       return add(adv_d_loss(real, fake), scale(adv_g_loss(fake), 0.3));
                     }, {.seed = seed});
                   }});
  for (double alpha : {0.0, 0.5, 1.0}) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "content_alignment_a%.1f", alpha);
    const std::string name = buf;
    cases.push_back({name, [name, alpha](std::uint64_t seed) {
                       Rng rng = Rng::derive(seed, name);
                       auto yt = random_image(rng, {1, 1, 8, 8});
                       auto yw = random_image(rng, {1, 1, 8, 8});
                       auto y = random_image(rng, {1, 1, 8, 8});
                       y.set_requires_grad(false);
                       for (std::size_t i = 0; i < 64; ++i) {
                         yw.mutable_data()[i] = 0.5 * y.data()[i] + 0.45 * yw.data()[i];
                         yt.mutable_data()[i] = 0.5 * yw.data()[i] + 0.45 * yt.data()[i];
                         if (std::abs(yt.data()[i] - y.data()[i]) < 0.02) yt.mutable_data()[i] += 0.03;
                       }
                       LossWeights w;
                       w.alpha = alpha;
                       DnmiConfig warp_cfg{16, 0.5, {-1.0, 1.0}};
                       DnmiConfig cross_cfg{32, 0.5, {-1.0, 1.0}};
                       return check_gradients(name, {yt, yw}, [&] {
                         return content_alignment_loss(yt, yw, y, w, warp_cfg, cross_cfg);
                       }, {.seed = seed});
                     }});
  }
  cases.push_back({"generator_loss", [](std::uint64_t seed) {
                     Rng rng = Rng::derive(seed, "generator_loss");
                     auto model = ModelParams<D>::init(tiny_model(), seed);
                     auto gen = gradcheck_generator(model, rng);
                     auto x = random_image(rng, {1, 1, 32, 32});
                     auto y = random_image(rng, {1, 1, 32, 32});
                     x.set_requires_grad(false);
                     y.set_requires_grad(false);
                     set_requires_grad(model.discriminator_parameters(), false);
                     LossWeights w;
                     DnmiConfig warp_cfg{16, 0.5, {-1.0, 1.0}};
                     DnmiConfig cross_cfg{32, 0.5, {-1.0, 1.0}};
                     auto loss = [&] {
                       auto out = forward(x, gen, 7);
                       auto align = content_alignment_loss(out.y_trans, out.y_warp, y, w, warp_cfg,
                                                           cross_cfg);
                       return total_generator_loss(
                           align, adv_g_loss(discriminate(x, out.y_trans, model.d_trans)),
                           adv_g_loss(discriminate(x, out.y_warp, model.d_warp)),
                           smoothness_loss(out.v), w);
                     };
                     return check_gradients("generator_loss",
                                            tensors_of(model.generator_parameters()), loss,
                                            {.max_coordinates = 4, .seed = seed});
                   }});
  cases.push_back({"discriminator_loss", [](std::uint64_t seed) {
                     Rng rng = Rng::derive(seed, "discriminator_loss");
                     auto model = ModelParams<D>::init(tiny_model(), seed);
                     auto x = random_image(rng, {2, 1, 32, 32});
                     auto y = random_image(rng, {2, 1, 32, 32});
                     auto fake_t = random_image(rng, {2, 1, 32, 32});
                     auto fake_w = random_image(rng, {2, 1, 32, 32});
                     for (auto* t : {&x, &y, &fake_t, &fake_w}) t->set_requires_grad(false);
                     LossWeights w;
                     auto loss = [&] {
                       return total_discriminator_loss(
                           adv_d_loss(discriminate(x, y, model.d_trans),
                                      discriminate(x, fake_t, model.d_trans)),
                           adv_d_loss(discriminate(x, y, model.d_warp),
                                      discriminate(x, fake_w, model.d_warp)),
                           w);
                     };
                     return check_gradients("discriminator_loss",
                                            tensors_of(model.discriminator_parameters()), loss,
                                            {.max_coordinates = 6, .seed = seed});
                   }});
  return cases;
}

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<GradCheckResult> results;
  for (const auto& c : gradcheck_cases()) results.push_back(c.run(seed));
  return results;
}

}  // namespace tracewarp
