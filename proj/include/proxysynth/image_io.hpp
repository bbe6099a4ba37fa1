#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace proxysynth {

using Rgb = std::array<std::uint8_t, 3>;

struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;          // 1 gray, 2 gray+alpha, 3 rgb, 4 rgba; 1 with `indexed` for palette images
  bool indexed = false;      // pixels hold palette indices
  std::vector<Rgb> palette;  // only for indexed images
  std::vector<std::uint8_t> pixels;
};

std::vector<std::uint8_t> encode_png(const PngImage& image);
PngImage decode_png(std::span<const std::uint8_t> bytes);

PngImage read_png(const std::string& path);
void write_png(const PngImage& image, const std::string& path);

// [3,H,W] in [-1,1] -> 8-bit RGB, rounding to nearest.
PngImage image_to_png(const torch::Tensor& image);
// 8-bit gray/RGB(A) -> [3,H,W] in [-1,1].
torch::Tensor png_to_image(const PngImage& png);

// [H,W] integer labels -> indexed PNG with `palette`.
PngImage labels_to_png(const torch::Tensor& labels, std::span<const Rgb> palette);
// Indexed, gray (value = label) or RGB (exact palette match) -> [H,W] int64.
// Throws LabelError for indices or colors outside the palette.
torch::Tensor png_to_labels(const PngImage& png, std::span<const Rgb> palette);

// Fixed palette for proxy masks (cluster ids); 32 entries.
std::span<const Rgb> proxy_palette();

std::string base64_encode(std::span<const std::uint8_t> bytes);
// Throws IoError on malformed input.
std::vector<std::uint8_t> base64_decode(const std::string& text);

}  // namespace proxysynth
