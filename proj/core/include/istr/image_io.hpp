#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "istr/tensor.hpp"

namespace istr {

// Interleaved 8-bit image (HWC). channels: 1 = gray, 3 = RGB.
struct ImageU8 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<uint8_t> pixels;

  size_t expected_size() const {
    return static_cast<size_t>(channels) * height * width;
  }
};

// Binary PGM (P5, maxval 255).
ImageU8 read_pgm(const std::string& path);
void write_pgm(const std::string& path, const ImageU8& img);

// 8-bit PNG, non-interlaced. Reader accepts gray / gray+alpha / RGB / RGBA
// (alpha dropped) with any row filter; writer emits gray or RGB.
ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& img);

// Dispatch on file signature (PNG magic) falling back to PGM.
ImageU8 read_image(const std::string& path);

// [C,H,W] float in [0,1] <-> interleaved bytes.
Tensor image_to_chw(const ImageU8& img);
ImageU8 chw_to_image(const Tensor& t);  // clamps to [0,1], rounds to nearest

// For signed data (inverted triggers): v -> (v+1)/2 before quantizing, so
// zero maps to mid-gray.
ImageU8 chw_to_image_signed(const Tensor& t);

// Raw tensor dump: "ITSR" magic, u32 rank, u32 dims..., f32 payload, all
// little-endian. Exact round trip, used for report regeneration inputs.
void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(const std::string& path);

}  // namespace istr
