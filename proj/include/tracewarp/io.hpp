#pragma once

// File formats: 8-bit PNG images, TWF1 binary fields, and small helpers for
// byte-stable output (checksums, atomic writes).
//
// TWF1 layout: "TWF1", u32 N, u32 C (=2), u32 H, u32 W, then N*C*H*W
// float32 values in row-major order, all little-endian.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "tracewarp/tensor.hpp"

namespace tracewarp {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Grayscale PNG as a [1,1,H,W] tensor of raw 0..255 values. Colour input is
// rejected.
Tensor<float> load_png(const std::filesystem::path& path);
// Writes channel 0 of item 0 of a [N,C,H,W] (or [H,W]) tensor of 0..255
// values, rounded and clamped.
void save_png(const Tensor<float>& pixels, const std::filesystem::path& path);
void save_rgb_png(const std::vector<std::uint8_t>& rgb, std::size_t height, std::size_t width,
                  const std::filesystem::path& path);

// [0,255] <-> [-1,1]
template <typename T>
Tensor<T> normalize(const Tensor<T>& pixels);
template <typename T>
Tensor<T> denormalize(const Tensor<T>& values);

void write_field(const Tensor<float>& field, const std::filesystem::path& path);
Tensor<float> read_field(const std::filesystem::path& path);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
// Writes to a sibling temporary file, then renames over the target.
void write_bytes_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

// FNV-1a 64-bit, hex encoded.
std::string checksum(const std::vector<std::uint8_t>& bytes);
std::string file_checksum(const std::filesystem::path& path);

// Flow colouring: hue from direction, saturation from magnitude relative to
// `max_magnitude` (the field's own maximum when <= 0). Returns RGB bytes.
std::vector<std::uint8_t> flow_to_rgb(const Tensor<float>& field, float max_magnitude = 0.0f);

}  // namespace tracewarp
