#include "tracewarp/model.hpp"

#include <cmath>
#include <stdexcept>

#include "tracewarp/ops.hpp"
#include "tracewarp/random.hpp"

namespace tracewarp {

void ModelConfig::validate() const {
  if (image_size == 0 || image_size % 32 != 0)
    throw std::invalid_argument("image_size must be a positive multiple of 32 (five halvings), got " +
                                std::to_string(image_size));
  if (channels == 0) throw std::invalid_argument("channels must be positive");
  if (!(width_factor > 0.0) || !std::isfinite(width_factor))
    throw std::invalid_argument("width_factor must be > 0");
}

namespace {

std::size_t scale_width(std::size_t c, double factor) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(c * factor)));
}

}  // namespace

std::array<std::size_t, 5> ModelConfig::scaled_encoder() const {
  std::array<std::size_t, 5> out{};
  for (std::size_t i = 0; i < 5; ++i) out[i] = scale_width(encoder_channels[i], width_factor);
  return out;
}

std::array<std::size_t, 3> ModelConfig::scaled_discriminator() const {
  std::array<std::size_t, 3> out{};
  for (std::size_t i = 0; i < 3; ++i) out[i] = scale_width(discriminator_channels[i], width_factor);
  return out;
}

template <typename T>
Tensor<T> Conv<T>::operator()(const Tensor<T>& x) const {
  return conv2d(x, weight, bias, stride, padding);
}

namespace {

enum class Init { he, zero };

template <typename T>
Conv<T> make_conv(Rng& rng, std::size_t in, std::size_t out, std::size_t stride, Init init) {
  const std::size_t fan_in = in * 9;
  const double std_dev = std::sqrt(2.0 / ((1.0 + kLeakySlope * kLeakySlope) * fan_in));
  std::vector<T> w(out * fan_in);
  for (auto& v : w) v = init == Init::zero ? T(0) : static_cast<T>(rng.normal() * std_dev);
  Conv<T> c;
  c.weight = Tensor<T>::from({out, in, 3, 3}, std::move(w), true);
  c.bias = Tensor<T>::zeros({out}, true);
  c.stride = stride;
  c.padding = 1;
  return c;
}

template <typename T>
EncoderParams<T> make_encoder(Rng& rng, const ModelConfig& cfg) {
  const auto ch = cfg.scaled_encoder();
  EncoderParams<T> e;
  std::size_t in = cfg.channels;
  for (std::size_t i = 0; i < 5; ++i) {
    e.down[i] = make_conv<T>(rng, in, ch[i], 2, Init::he);
    in = ch[i];
  }
  return e;
}

template <typename T>
DecoderParams<T> make_decoder(Rng& rng, const ModelConfig& cfg, std::size_t out_channels,
                              Init head_init) {
  const auto ch = cfg.scaled_encoder();
  DecoderParams<T> d;
  std::size_t prev = ch[4];
  for (std::size_t j = 0; j < 4; ++j) {
    const std::size_t skip = ch[3 - j];
    d.up[j] = make_conv<T>(rng, prev + skip, skip, 1, Init::he);
    prev = skip;
  }
  d.full = make_conv<T>(rng, prev + cfg.channels, ch[0], 1, Init::he);
  d.head = make_conv<T>(rng, ch[0], out_channels, 1, head_init);
  return d;
}

template <typename T>
DiscriminatorParams<T> make_discriminator(Rng& rng, const ModelConfig& cfg) {
  const auto ch = cfg.scaled_discriminator();
  DiscriminatorParams<T> d;
  std::size_t in = 2 * cfg.channels;
  for (std::size_t i = 0; i < 3; ++i) {
    d.down[i] = make_conv<T>(rng, in, ch[i], 2, Init::he);
    in = ch[i];
  }
  d.head = make_conv<T>(rng, in, 1, 1, Init::he);
  return d;
}

template <typename T>
void push_conv(std::vector<NamedParam<T>>& out, const std::string& name, const Conv<T>& c) {
  out.push_back({name + ".weight", c.weight});
  out.push_back({name + ".bias", c.bias});
}

template <typename T>
void push_encoder(std::vector<NamedParam<T>>& out, const std::string& name,
                  const EncoderParams<T>& e) {
  for (std::size_t i = 0; i < 5; ++i) push_conv(out, name + ".down" + std::to_string(i), e.down[i]);
}

template <typename T>
void push_decoder(std::vector<NamedParam<T>>& out, const std::string& name,
                  const DecoderParams<T>& d) {
  for (std::size_t i = 0; i < 4; ++i) push_conv(out, name + ".up" + std::to_string(i), d.up[i]);
  push_conv(out, name + ".full", d.full);
  push_conv(out, name + ".head", d.head);
}

template <typename T>
void push_discriminator(std::vector<NamedParam<T>>& out, const std::string& name,
                        const DiscriminatorParams<T>& d) {
  for (std::size_t i = 0; i < 3; ++i) push_conv(out, name + ".down" + std::to_string(i), d.down[i]);
  push_conv(out, name + ".head", d.head);
}

template <typename U, typename T>
Conv<U> cast_conv(const Conv<T>& c) {
  auto convert = [](const Tensor<T>& t) {
    std::vector<U> v(t.data().begin(), t.data().end());
    return Tensor<U>::from(t.shape(), std::move(v), t.requires_grad());
  };
  return {convert(c.weight), convert(c.bias), c.stride, c.padding};
}

template <typename T>
Tensor<T> decode(const FeaturePyramid<T>& f, const DecoderParams<T>& d) {
  const T slope = static_cast<T>(kLeakySlope);
  Tensor<T> h = f.stages[4];
  for (std::size_t j = 0; j < 4; ++j)
    h = leaky_relu(d.up[j](concat(upsample_nearest2x(h), f.stages[3 - j], 1)), slope);
  h = leaky_relu(d.full(concat(upsample_nearest2x(h), f.input, 1)), slope);
  return d.head(h);
}

template <typename T>
const EncoderParams<T>& velocity_encoder(const GeneratorParams<T>& p) {
  return p.shared_encoder ? p.encoder : p.encoder_f;
}

}  // namespace

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  // Built in double so both precisions see identical draws.
  Rng rng = Rng::derive(seed, "model-init");
  ModelParams<double> m;
  m.config = cfg;
  m.generator.shared_encoder = cfg.shared_encoder;
  m.generator.encoder = make_encoder<double>(rng, cfg);
  if (!cfg.shared_encoder) m.generator.encoder_f = make_encoder<double>(rng, cfg);
  m.generator.decoder_g = make_decoder<double>(rng, cfg, cfg.channels, Init::he);
  m.generator.decoder_f = make_decoder<double>(rng, cfg, 2, Init::zero);
  m.d_trans = make_discriminator<double>(rng, cfg);
  m.d_warp = make_discriminator<double>(rng, cfg);
  if constexpr (std::is_same_v<T, double>)
    return m;
  else
    return m.template cast<T>();
}

template <typename T>
std::vector<NamedParam<T>> ModelParams<T>::generator_parameters() const {
  std::vector<NamedParam<T>> out;
  push_encoder(out, "gen.encoder", generator.encoder);
  if (!generator.shared_encoder) push_encoder(out, "gen.encoder_f", generator.encoder_f);
  push_decoder(out, "gen.decoder_g", generator.decoder_g);
  push_decoder(out, "gen.decoder_f", generator.decoder_f);
  return out;
}

template <typename T>
std::vector<NamedParam<T>> ModelParams<T>::discriminator_parameters() const {
  std::vector<NamedParam<T>> out;
  push_discriminator(out, "d_trans", d_trans);
  push_discriminator(out, "d_warp", d_warp);
  return out;
}

template <typename T>
std::vector<NamedParam<T>> ModelParams<T>::all_parameters() const {
  auto out = generator_parameters();
  auto d = discriminator_parameters();
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : all_parameters()) n += p.tensor.numel();
  return n;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> m;
  m.config = config;
  m.generator.shared_encoder = generator.shared_encoder;
  auto enc = [](const EncoderParams<T>& e) {
    EncoderParams<U> r;
    if (!e.down[0].weight.defined()) return r;
    for (std::size_t i = 0; i < 5; ++i) r.down[i] = cast_conv<U>(e.down[i]);
    return r;
  };
  auto dec = [](const DecoderParams<T>& d) {
    DecoderParams<U> r;
    for (std::size_t i = 0; i < 4; ++i) r.up[i] = cast_conv<U>(d.up[i]);
    r.full = cast_conv<U>(d.full);
    r.head = cast_conv<U>(d.head);
    return r;
  };
  auto disc = [](const DiscriminatorParams<T>& d) {
    DiscriminatorParams<U> r;
    for (std::size_t i = 0; i < 3; ++i) r.down[i] = cast_conv<U>(d.down[i]);
    r.head = cast_conv<U>(d.head);
    return r;
  };
  m.generator.encoder = enc(generator.encoder);
  m.generator.encoder_f = enc(generator.encoder_f);
  m.generator.decoder_g = dec(generator.decoder_g);
  m.generator.decoder_f = dec(generator.decoder_f);
  m.d_trans = disc(d_trans);
  m.d_warp = disc(d_warp);
  return m;
}

template <typename T>
FeaturePyramid<T> encode(const Tensor<T>& x, const EncoderParams<T>& p) {
  if (x.rank() != 4) throw ShapeError("encode: expected [N,C,H,W], got " + shape_str(x.shape()));
  if (x.dim(2) % 32 != 0 || x.dim(3) % 32 != 0)
    throw ShapeError("encode: spatial size must be divisible by 32, got " + shape_str(x.shape()));
  FeaturePyramid<T> f;
  f.input = x;
  Tensor<T> h = x;
  for (std::size_t i = 0; i < 5; ++i) {
    h = leaky_relu(p.down[i](h), static_cast<T>(kLeakySlope));
    f.stages[i] = h;
  }
  return f;
}

template <typename T>
Tensor<T> decode_translate(const FeaturePyramid<T>& feats, const GeneratorParams<T>& p) {
  return tanh(decode(feats, p.decoder_g));
}

template <typename T>
VelocityField<T> decode_velocity(const FeaturePyramid<T>& feats, const GeneratorParams<T>& p) {
  return {decode(feats, p.decoder_f)};
}

template <typename T>
GeneratorOutput<T> forward(const Tensor<T>& x, const GeneratorParams<T>& p, int steps) {
  GeneratorOutput<T> out;
  const auto feats = encode(x, p.encoder);
  out.y_trans = decode_translate(feats, p);
  out.v = p.shared_encoder ? decode_velocity(feats, p)
                           : decode_velocity(encode(x, velocity_encoder(p)), p);
  out.u = integrate_velocity(out.v, steps);
  out.phi = to_deformation(out.u);
  out.y_warp = warp(x, out.phi);
  return out;
}

template <typename T>
Tensor<T> discriminate(const Tensor<T>& x_cond, const Tensor<T>& candidate,
                       const DiscriminatorParams<T>& d) {
  if (x_cond.rank() != 4 || candidate.rank() != 4 || x_cond.dim(0) != candidate.dim(0) ||
      x_cond.dim(2) != candidate.dim(2) || x_cond.dim(3) != candidate.dim(3))
    throw ShapeError("discriminate: condition " + shape_str(x_cond.shape()) + " and candidate " +
                     shape_str(candidate.shape()) + " disagree");
  Tensor<T> h = concat(x_cond, candidate, 1);
  for (const auto& c : d.down) h = leaky_relu(c(h), static_cast<T>(kLeakySlope));
  return d.head(h);
}

template <typename T>
void set_requires_grad(const std::vector<NamedParam<T>>& params, bool on) {
  for (const auto& p : params) {
    auto t = p.tensor;
    t.set_requires_grad(on);
  }
}

template <typename T>
void zero_grad(const std::vector<NamedParam<T>>& params) {
  for (const auto& p : params) {
    auto t = p.tensor;
    t.zero_grad();
  }
}

template struct Conv<float>;
template struct Conv<double>;
template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;

#define TRACEWARP_INSTANTIATE_MODEL(T)                                                          \
  template FeaturePyramid<T> encode(const Tensor<T>&, const EncoderParams<T>&);                 \
  template Tensor<T> decode_translate(const FeaturePyramid<T>&, const GeneratorParams<T>&);     \
  template VelocityField<T> decode_velocity(const FeaturePyramid<T>&, const GeneratorParams<T>&); \
  template GeneratorOutput<T> forward(const Tensor<T>&, const GeneratorParams<T>&, int);        \
  template Tensor<T> discriminate(const Tensor<T>&, const Tensor<T>&,                           \
                                  const DiscriminatorParams<T>&);                               \
  template void set_requires_grad(const std::vector<NamedParam<T>>&, bool);                     \
  template void zero_grad(const std::vector<NamedParam<T>>&);

TRACEWARP_INSTANTIATE_MODEL(float)
TRACEWARP_INSTANTIATE_MODEL(double)

}  // namespace tracewarp
