#include "proxysynth/image_io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

#include <openssl/evp.h>
#include <png.h>

#include "proxysynth/errors.hpp"

namespace proxysynth {

namespace {

struct ReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

void read_fn(png_structp png, png_bytep out, png_size_t n) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + n > cur->bytes.size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, cur->bytes.data() + cur->offset, n);
  cur->offset += n;
}

void write_fn(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void flush_fn(png_structp) {}

[[noreturn]] void error_fn(png_structp, png_const_charp msg) { throw IoError(std::string("PNG: ") + msg); }
void warning_fn(png_structp, png_const_charp) {}

}  // namespace

std::vector<std::uint8_t> encode_png(const PngImage& image) {
  if (image.width <= 0 || image.height <= 0) throw IoError("encode_png: empty image");
  int color_type = 0;
  switch (image.indexed ? 0 : image.channels) {
    case 0: color_type = PNG_COLOR_TYPE_PALETTE; break;
    case 1: color_type = PNG_COLOR_TYPE_GRAY; break;
    case 2: color_type = PNG_COLOR_TYPE_GRAY_ALPHA; break;
    case 3: color_type = PNG_COLOR_TYPE_RGB; break;
    case 4: color_type = PNG_COLOR_TYPE_RGB_ALPHA; break;
    default: throw IoError("encode_png: unsupported channel count");
  }
  const int stride = image.indexed ? 1 : image.channels;
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * stride)
    throw IoError("encode_png: pixel buffer size does not match dimensions");

  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, error_fn, warning_fn);
  png_infop info = png_create_info_struct(png);
  try {
    png_set_write_fn(png, &out, write_fn, flush_fn);
    png_set_IHDR(png, info, image.width, image.height, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    std::vector<png_color> colors;
    if (image.indexed) {
      if (image.palette.empty() || image.palette.size() > 256) throw IoError("encode_png: palette must have 1..256 entries");
      for (auto& c : image.palette) colors.push_back({c[0], c[1], c[2]});
      png_set_PLTE(png, info, colors.data(), static_cast<int>(colors.size()));
    }
    // Fixed timestamps/text are never written, so identical pixels give identical bytes.
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y) {
      auto* row = const_cast<png_bytep>(image.pixels.data() + static_cast<std::size_t>(y) * image.width * stride);
      png_write_row(png, row);
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

PngImage decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw IoError("decode_png: not a PNG stream");
  ReadCursor cursor{bytes, 0};
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, error_fn, warning_fn);
  png_infop info = png_create_info_struct(png);
  PngImage img;
  try {
    png_set_read_fn(png, &cursor, read_fn);
    png_read_info(png, info);
    png_uint_32 w = 0, h = 0;
    int depth = 0, color_type = 0;
    png_get_IHDR(png, info, &w, &h, &depth, &color_type, nullptr, nullptr, nullptr);
    if (depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) {
      img.indexed = true;
      if (depth < 8) png_set_packing(png);
      png_colorp colors = nullptr;
      int n = 0;
      png_get_PLTE(png, info, &colors, &n);
      for (int i = 0; i < n; ++i) img.palette.push_back({colors[i].red, colors[i].green, colors[i].blue});
    } else if (color_type == PNG_COLOR_TYPE_GRAY && depth < 8) {
      png_set_expand_gray_1_2_4_to_8(png);
    }
    png_read_update_info(png, info);
    img.width = static_cast<int>(w);
    img.height = static_cast<int>(h);
    img.channels = png_get_channels(png, info);
    std::size_t rowbytes = png_get_rowbytes(png, info);
    img.pixels.resize(rowbytes * h);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = img.pixels.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

PngImage read_png(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const IoError& e) {
    throw IoError("'" + path + "': " + e.what());
  }
}

void write_png(const PngImage& image, const std::string& path) {
  auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

PngImage image_to_png(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) throw DimensionError("image_to_png: expected [3,H,W]");
  auto u8 = ((image.detach().to(torch::kFloat32).clamp(-1, 1) + 1) * 127.5).round().to(torch::kUInt8);
  auto hwc = u8.permute({1, 2, 0}).contiguous();
  PngImage png;
  png.width = static_cast<int>(image.size(2));
  png.height = static_cast<int>(image.size(1));
  png.channels = 3;
  png.pixels.assign(hwc.data_ptr<std::uint8_t>(), hwc.data_ptr<std::uint8_t>() + hwc.numel());
  return png;
}

torch::Tensor png_to_image(const PngImage& png) {
  if (png.indexed) {
    auto rgb = torch::empty({png.height, png.width, 3}, torch::kUInt8);
    auto* dst = rgb.data_ptr<std::uint8_t>();
    for (std::size_t i = 0; i < png.pixels.size(); ++i) {
      if (png.pixels[i] >= png.palette.size()) throw IoError("png_to_image: palette index out of range");
      std::memcpy(dst + 3 * i, png.palette[png.pixels[i]].data(), 3);
    }
    return rgb.permute({2, 0, 1}).to(torch::kFloat32) / 127.5 - 1.0;
  }
  auto raw = torch::from_blob(const_cast<std::uint8_t*>(png.pixels.data()), {png.height, png.width, png.channels},
                              torch::kUInt8)
                 .to(torch::kFloat32);
  torch::Tensor rgb;
  if (png.channels <= 2) {
    rgb = raw.narrow(2, 0, 1).expand({-1, -1, 3});
  } else {
    rgb = raw.narrow(2, 0, 3);
  }
  return rgb.permute({2, 0, 1}).contiguous() / 127.5 - 1.0;
}

PngImage labels_to_png(const torch::Tensor& labels, std::span<const Rgb> palette) {
  if (labels.dim() != 2) throw DimensionError("labels_to_png: expected [H,W]");
  auto l = labels.to(torch::kInt64).contiguous();
  if (l.numel() && (l.min().item<int64_t>() < 0 || l.max().item<int64_t>() >= static_cast<int64_t>(palette.size())))
    throw LabelError("labels_to_png: label outside palette");
  PngImage png;
  png.width = static_cast<int>(labels.size(1));
  png.height = static_cast<int>(labels.size(0));
  png.channels = 1;
  png.indexed = true;
  png.palette.assign(palette.begin(), palette.end());
  auto* p = l.data_ptr<int64_t>();
  png.pixels.resize(static_cast<std::size_t>(l.numel()));
  for (std::size_t i = 0; i < png.pixels.size(); ++i) png.pixels[i] = static_cast<std::uint8_t>(p[i]);
  return png;
}

torch::Tensor png_to_labels(const PngImage& png, std::span<const Rgb> palette) {
  auto labels = torch::empty({png.height, png.width}, torch::kInt64);
  auto* out = labels.data_ptr<int64_t>();
  const std::size_t n = static_cast<std::size_t>(png.width) * png.height;
  const auto limit = static_cast<std::size_t>(palette.size());
  if (png.indexed || png.channels <= 2) {
    const int stride = png.indexed ? 1 : png.channels;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t v = png.pixels[i * stride];
      if (v >= limit) throw LabelError("mask label " + std::to_string(v) + " outside [0," + std::to_string(limit) + ")");
      out[i] = static_cast<int64_t>(v);
    }
    return labels;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* px = png.pixels.data() + i * png.channels;
    auto it = std::find_if(palette.begin(), palette.end(),
                           [&](const Rgb& c) { return c[0] == px[0] && c[1] == px[1] && c[2] == px[2]; });
    if (it == palette.end()) throw LabelError("mask color does not belong to the class palette");
    out[i] = it - palette.begin();
  }
  return labels;
}

std::span<const Rgb> proxy_palette() {
  static const std::array<Rgb, 32> palette = {{
      {230, 25, 75},   {60, 180, 75},   {255, 225, 25},  {0, 130, 200},   {245, 130, 48},  {145, 30, 180},
      {70, 240, 240},  {240, 50, 230},  {210, 245, 60},  {250, 190, 212}, {0, 128, 128},   {220, 190, 255},
      {170, 110, 40},  {255, 250, 200}, {128, 0, 0},     {170, 255, 195}, {128, 128, 0},   {255, 215, 180},
      {0, 0, 128},     {128, 128, 128}, {255, 255, 255}, {0, 0, 0},       {100, 149, 237}, {255, 99, 71},
      {46, 139, 87},   {218, 165, 32},  {199, 21, 133},  {72, 61, 139},   {0, 191, 255},   {154, 205, 50},
      {139, 69, 19},   {112, 128, 144},
  }};
  return palette;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw IoError("base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw IoError("base64: invalid characters");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

}  // namespace proxysynth
