#include "proxysynth/toydata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "proxysynth/errors.hpp"

namespace proxysynth {

namespace fs = std::filesystem;

const std::array<std::string, kSceneClasses>& scene_class_names() {
  static const std::array<std::string, kSceneClasses> names = {"background", "circle", "rectangle", "triangle"};
  return names;
}

std::span<const Rgb> scene_class_palette() {
  static const std::array<Rgb, kSceneClasses> palette = {{{0, 0, 0}, {220, 40, 40}, {40, 180, 60}, {40, 80, 220}}};
  return palette;
}

const std::array<std::array<double, 3>, kSceneClasses>& scene_base_colors() {
  static const std::array<std::array<double, 3>, kSceneClasses> colors = {{
      {0.85, 0.83, 0.75},
      {0.86, 0.18, 0.16},
      {0.16, 0.70, 0.26},
      {0.18, 0.30, 0.86},
  }};
  return colors;
}

namespace {

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

}  // namespace

bool covers(const Shape& s, double x, double y) {
  switch (s.cls) {
    case ShapeClass::circle: {
      double dx = x - s.cx, dy = y - s.cy;
      return dx * dx + dy * dy <= s.size * s.size;
    }
    case ShapeClass::rectangle:
      return std::abs(x - s.cx) <= s.size && std::abs(y - s.cy) <= s.size * s.aspect;
    case ShapeClass::triangle: {
      // Upright triangle inscribed in a circle of radius `size`.
      const double h = s.size * std::sqrt(3.0) / 2.0;
      const double ax = s.cx, ay = s.cy - s.size;
      const double bx = s.cx - h, by = s.cy + s.size / 2.0;
      const double cx = s.cx + h, cy = s.cy + s.size / 2.0;
      double e0 = edge(ax, ay, bx, by, x, y), e1 = edge(bx, by, cx, cy, x, y), e2 = edge(cx, cy, ax, ay, x, y);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
    case ShapeClass::background:
      return false;
  }
  return false;
}

ToyScene render_scene(std::span<const Shape> shapes, const std::array<double, 3>& background, int res) {
  constexpr int kSub = 4;
  ToyScene scene;
  scene.background = background;
  scene.shapes.assign(shapes.begin(), shapes.end());
  scene.image = torch::empty({3, res, res}, torch::kFloat32);
  scene.mask = torch::zeros({res, res}, torch::kInt64);
  auto img = scene.image.accessor<float, 3>();
  auto mask = scene.mask.accessor<int64_t, 2>();

  auto topmost = [&](double x, double y) -> const Shape* {
    for (auto it = shapes.rbegin(); it != shapes.rend(); ++it)
      if (covers(*it, x, y)) return &*it;
    return nullptr;
  };

  for (int y = 0; y < res; ++y) {
    for (int x = 0; x < res; ++x) {
      std::array<double, 3> acc{};
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const Shape* s = topmost(x + (sx + 0.5) / kSub, y + (sy + 0.5) / kSub);
          const auto& c = s ? s->color : background;
          for (int ch = 0; ch < 3; ++ch) acc[ch] += c[ch];
        }
      }
      for (int ch = 0; ch < 3; ++ch) img[ch][y][x] = static_cast<float>(acc[ch] / (kSub * kSub) * 2.0 - 1.0);
      const Shape* center = topmost(x + 0.5, y + 0.5);
      mask[y][x] = center ? static_cast<int64_t>(center->cls) : 0;
    }
  }
  return scene;
}

ToyScene gen_scene(std::uint64_t seed, int res) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto jitter = [&](const std::array<double, 3>& base, double amount) {
    std::array<double, 3> c{};
    for (int i = 0; i < 3; ++i) c[i] = std::clamp(base[i] + (unit(rng) * 2 - 1) * amount, 0.0, 1.0);
    return c;
  };
  const auto& base = scene_base_colors();
  auto background = jitter(base[0], 0.05);
  const int n = 1 + static_cast<int>(rng() % 3);
  std::vector<Shape> shapes;
  for (int i = 0; i < n; ++i) {
    Shape s;
    s.cls = static_cast<ShapeClass>(1 + rng() % 3);
    s.size = res * (0.12 + 0.13 * unit(rng));
    s.aspect = 0.6 + 0.8 * unit(rng);
    s.cx = res * (0.2 + 0.6 * unit(rng));
    s.cy = res * (0.2 + 0.6 * unit(rng));
    s.color = jitter(base[static_cast<int>(s.cls)], 0.08);
    shapes.push_back(s);
  }
  auto scene = render_scene(shapes, background, res);
  scene.seed = seed;
  return scene;
}

torch::Tensor ImageDataset::batch(std::span<const std::size_t> indices) const {
  std::vector<torch::Tensor> images;
  images.reserve(indices.size());
  for (auto i : indices) images.push_back(image(i));
  return torch::stack(images);
}

SceneDataset::SceneDataset(std::size_t count, std::uint64_t seed, int res) : count_(count), seed_(seed), res_(res) {
  if (count == 0) throw ConfigError("scene dataset must contain at least one scene");
  std::vector<torch::Tensor> images;
  images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) images.push_back(gen_scene(seed + i, res).image);
  images_ = torch::stack(images);
}

torch::Tensor SceneDataset::image(std::size_t index) const { return images_[static_cast<int64_t>(index)]; }

ToyScene SceneDataset::scene(std::size_t index) const { return gen_scene(seed_ + index, res_); }

FolderDataset::FolderDataset(std::vector<torch::Tensor> images, std::vector<std::string> warnings)
    : images_(std::move(images)), warnings_(std::move(warnings)) {}

FolderDataset ingest_folder(const std::string& path, int res) {
  if (!fs::is_directory(path)) throw IoError("ingest_folder: '" + path + "' is not a directory");
  std::vector<fs::path> files;
  for (auto& entry : fs::directory_iterator(path))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  std::vector<torch::Tensor> images;
  std::vector<std::string> warnings;
  for (auto& file : files) {
    cv::Mat bgr = cv::imread(file.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) {
      warnings.push_back("skipping unreadable image '" + file.string() + "'");
      std::cerr << "warning: " << warnings.back() << "\n";
      continue;
    }
    int side = std::min(bgr.cols, bgr.rows);
    cv::Mat crop = bgr(cv::Rect((bgr.cols - side) / 2, (bgr.rows - side) / 2, side, side));
    cv::Mat resized;
    if (side == res) {
      resized = crop.clone();
    } else {
      cv::resize(crop, resized, cv::Size(res, res), 0, 0, side > res ? cv::INTER_AREA : cv::INTER_LINEAR);
    }
    cv::Mat rgb;
    cv::cvtColor(resized, rgb, cv::COLOR_BGR2RGB);
    auto t = torch::from_blob(rgb.data, {res, res, 3}, torch::kUInt8).clone();
    images.push_back(t.permute({2, 0, 1}).to(torch::kFloat32) / 127.5 - 1.0);
  }
  if (images.empty()) throw IoError("ingest_folder: no readable images in '" + path + "'");
  return FolderDataset(std::move(images), std::move(warnings));
}

void export_scenes(std::size_t n, std::uint64_t seed, int res, const std::string& out_dir) {
  fs::create_directories(fs::path(out_dir) / "masks");
  for (std::size_t i = 0; i < n; ++i) {
    auto scene = gen_scene(seed + i, res);
    char name[64];
    std::snprintf(name, sizeof(name), "scene_%05zu", i);
    write_png(image_to_png(scene.image), (fs::path(out_dir) / (std::string(name) + ".png")).string());
    write_png(labels_to_png(scene.mask, scene_class_palette()),
              (fs::path(out_dir) / "masks" / (std::string(name) + ".png")).string());
  }
}

std::unique_ptr<ImageDataset> make_dataset(const std::string& folder, std::size_t scenes, std::uint64_t seed, int res) {
  if (!folder.empty()) return std::make_unique<FolderDataset>(ingest_folder(folder, res));
  return std::make_unique<SceneDataset>(scenes, seed, res);
}

}  // namespace proxysynth
