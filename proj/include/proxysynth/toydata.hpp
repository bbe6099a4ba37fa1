#pragma once

// Procedural layered-shape scenes with exact segmentation, and ingestion of
// folders of real (unlabeled) images.

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "proxysynth/image_io.hpp"

namespace proxysynth {

enum class ShapeClass : int { background = 0, circle = 1, rectangle = 2, triangle = 3 };
inline constexpr int kSceneClasses = 4;

const std::array<std::string, kSceneClasses>& scene_class_names();
// Indexed-PNG palette used for scene class masks.
std::span<const Rgb> scene_class_palette();
// Nominal render colors in [0,1]; shapes jitter around these.
const std::array<std::array<double, 3>, kSceneClasses>& scene_base_colors();

struct Shape {
  ShapeClass cls = ShapeClass::circle;
  double cx = 0, cy = 0;  // pixel units, origin at the top-left corner
  double size = 0;        // radius, half-extent or circumradius
  double aspect = 1.0;    // rectangle height/width ratio
  std::array<double, 3> color{};
};

// Exact coverage of point (x, y) in pixel coordinates.
bool covers(const Shape& shape, double x, double y);

struct ToyScene {
  torch::Tensor image;  // [3, R, R] in [-1, 1]
  torch::Tensor mask;   // [R, R] int64 class labels
  std::array<double, 3> background{};
  std::vector<Shape> shapes;  // back to front
  std::uint64_t seed = 0;
};

// Anti-aliased image (4x4 supersampling) and hard labels from the pixel center.
ToyScene render_scene(std::span<const Shape> shapes, const std::array<double, 3>& background, int res);
// 1-3 random shapes, deterministic in `seed`.
ToyScene gen_scene(std::uint64_t seed, int res = 64);

class ImageDataset {
 public:
  virtual ~ImageDataset() = default;
  virtual std::size_t size() const = 0;
  virtual torch::Tensor image(std::size_t index) const = 0;  // [3,R,R] in [-1,1]

  torch::Tensor batch(std::span<const std::size_t> indices) const;
};

class SceneDataset final : public ImageDataset {
 public:
  SceneDataset(std::size_t count, std::uint64_t seed, int res);
  std::size_t size() const override { return count_; }
  torch::Tensor image(std::size_t index) const override;
  ToyScene scene(std::size_t index) const;

 private:
  std::size_t count_;
  std::uint64_t seed_;
  int res_;
  torch::Tensor images_;  // cached [N,3,R,R]
};

class FolderDataset final : public ImageDataset {
 public:
  FolderDataset(std::vector<torch::Tensor> images, std::vector<std::string> warnings);
  std::size_t size() const override { return images_.size(); }
  torch::Tensor image(std::size_t index) const override { return images_.at(index); }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  std::vector<torch::Tensor> images_;
  std::vector<std::string> warnings_;
};

// Center-crops, resizes to `res` and normalizes every readable image in `path`
// (sorted by file name). Unreadable files are skipped with a warning; throws
// IoError when nothing usable remains.
FolderDataset ingest_folder(const std::string& path, int res);

// Writes out_dir/scene_XXXXX.png and out_dir/masks/scene_XXXXX.png (indexed).
void export_scenes(std::size_t n, std::uint64_t seed, int res, const std::string& out_dir);

std::unique_ptr<ImageDataset> make_dataset(const std::string& folder, std::size_t scenes, std::uint64_t seed, int res);

}  // namespace proxysynth
