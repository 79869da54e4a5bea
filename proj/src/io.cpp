#include "tracewarp/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace tracewarp {

namespace fs = std::filesystem;

Tensor<float> load_png(const fs::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw IoError("cannot read PNG " + path.string() + ": " + image.message);
  if (image.format & PNG_FORMAT_FLAG_COLOR) {
    png_image_free(&image);
    throw IoError("expected a grayscale PNG: " + path.string());
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr))
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  std::vector<float> values(buffer.begin(), buffer.end());
  return Tensor<float>::from({1, 1, image.height, image.width}, std::move(values));
}

namespace {

void write_png(const fs::path& path, const std::vector<std::uint8_t>& bytes, std::size_t h,
               std::size_t w, png_uint_32 format) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = format;
  // Encode in memory first so the file appears atomically.
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, bytes.data(), 0, nullptr))
    throw IoError("cannot encode PNG " + path.string() + ": " + image.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, bytes.data(), 0, nullptr))
    throw IoError("cannot encode PNG " + path.string() + ": " + image.message);
  out.resize(size);
  write_bytes_atomic(path, out);
}

}  // namespace

void save_png(const Tensor<float>& pixels, const fs::path& path) {
  std::size_t h, w;
  if (pixels.rank() == 4) {
    h = pixels.dim(2);
    w = pixels.dim(3);
  } else if (pixels.rank() == 2) {
    h = pixels.dim(0);
    w = pixels.dim(1);
  } else {
    throw ShapeError("save_png: expected [N,C,H,W] or [H,W], got " + shape_str(pixels.shape()));
  }
  std::vector<std::uint8_t> bytes(h * w);
  for (std::size_t i = 0; i < h * w; ++i)
    bytes[i] = static_cast<std::uint8_t>(std::clamp(std::lround(pixels.data()[i]), 0L, 255L));
  write_png(path, bytes, h, w, PNG_FORMAT_GRAY);
}

void save_rgb_png(const std::vector<std::uint8_t>& rgb, std::size_t height, std::size_t width,
                  const fs::path& path) {
  if (rgb.size() != height * width * 3) throw IoError("save_rgb_png: buffer size mismatch");
  write_png(path, rgb, height, width, PNG_FORMAT_RGB);
}

template <typename T>
Tensor<T> normalize(const Tensor<T>& pixels) {
  std::vector<T> v(pixels.data().begin(), pixels.data().end());
  for (auto& x : v) x = x / T(127.5) - T(1);
  return Tensor<T>::from(pixels.shape(), std::move(v));
}

template <typename T>
Tensor<T> denormalize(const Tensor<T>& values) {
  std::vector<T> v(values.data().begin(), values.data().end());
  for (auto& x : v) x = (x + T(1)) * T(127.5);
  return Tensor<T>::from(values.shape(), std::move(v));
}

template Tensor<float> normalize(const Tensor<float>&);
template Tensor<double> normalize(const Tensor<double>&);
template Tensor<float> denormalize(const Tensor<float>&);
template Tensor<double> denormalize(const Tensor<double>&);

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(in[at + i]) << (8 * i);
  return v;
}

}  // namespace

void write_field(const Tensor<float>& field, const fs::path& path) {
  if (field.rank() != 4 || field.dim(1) != 2)
    throw ShapeError("write_field: expected [N,2,H,W], got " + shape_str(field.shape()));
  std::vector<std::uint8_t> out{'T', 'W', 'F', '1'};
  for (std::size_t d = 0; d < 4; ++d) put_u32(out, static_cast<std::uint32_t>(field.dim(d)));
  for (float x : field.data()) {
    std::uint32_t bits;
    std::memcpy(&bits, &x, 4);
    put_u32(out, bits);
  }
  write_bytes_atomic(path, out);
}

Tensor<float> read_field(const fs::path& path) {
  const auto in = read_bytes(path);
  if (in.size() < 20 || std::memcmp(in.data(), "TWF1", 4) != 0)
    throw IoError("not a TWF1 field file: " + path.string());
  Shape shape;
  for (std::size_t d = 0; d < 4; ++d) shape.push_back(get_u32(in, 4 + 4 * d));
  if (shape[1] != 2) throw IoError("TWF1 field must have 2 components: " + path.string());
  const std::size_t n = shape_numel(shape);
  if (n == 0 || in.size() != 20 + 4 * n) throw IoError("truncated TWF1 field: " + path.string());
  std::vector<float> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = get_u32(in, 20 + 4 * i);
    std::memcpy(&values[i], &bits, 4);
  }
  return Tensor<float>::from(std::move(shape), std::move(values));
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_bytes_atomic(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  write_bytes_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string checksum(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string file_checksum(const fs::path& path) { return checksum(read_bytes(path)); }

std::vector<std::uint8_t> flow_to_rgb(const Tensor<float>& field, float max_magnitude) {
  if (field.rank() != 4 || field.dim(1) != 2)
    throw ShapeError("flow_to_rgb: expected [N,2,H,W], got " + shape_str(field.shape()));
  const std::size_t hw = field.dim(2) * field.dim(3);
  const float* dy = field.data().data();
  const float* dx = dy + hw;
  if (max_magnitude <= 0.0f)
    for (std::size_t p = 0; p < hw; ++p) max_magnitude = std::max(max_magnitude, std::hypot(dy[p], dx[p]));
  std::vector<std::uint8_t> rgb(hw * 3);
  for (std::size_t p = 0; p < hw; ++p) {
    const double hue = (std::atan2(dy[p], dx[p]) / std::numbers::pi + 1.0) * 3.0;  // [0,6]
    const double sat = max_magnitude > 0 ? std::min(1.0, double(std::hypot(dy[p], dx[p])) / max_magnitude) : 0.0;
    const double c = sat, x = c * (1.0 - std::abs(std::fmod(hue, 2.0) - 1.0)), m = 1.0 - c;
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hue) % 6) {
      case 0: r = c; g = x; break;
      case 1: r = x; g = c; break;
      case 2: g = c; b = x; break;
      case 3: g = x; b = c; break;
      case 4: r = x; b = c; break;
      default: r = c; b = x; break;
    }
    rgb[3 * p + 0] = static_cast<std::uint8_t>(std::lround(255.0 * (r + m)));
    rgb[3 * p + 1] = static_cast<std::uint8_t>(std::lround(255.0 * (g + m)));
    rgb[3 * p + 2] = static_cast<std::uint8_t>(std::lround(255.0 * (b + m)));
  }
  return rgb;
}

}  // namespace tracewarp
