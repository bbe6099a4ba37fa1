#pragma once

// Inference on a trained model and the evaluation protocol built on it.

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "proxysynth/image_io.hpp"
#include "proxysynth/model.hpp"
#include "proxysynth/toydata.hpp"

namespace proxysynth {

// Decodes a condition image: segmentation masks as indexed, gray (value =
// class) or scene-palette RGB PNGs; scribble and edge rasters as any 8-bit PNG
// scaled to [0,1]. Throws DimensionError unless the image is res x res and
// LabelError for classes outside [0, classes).
ConditionRaster condition_from_png(const PngImage& png, ConditionKind kind, int res, int classes);

struct Synthesis {
  torch::Tensor image;     // [3, R_img, R_img] in [-1, 1]
  torch::Tensor proxy;     // [R_p, R_p] int64, the layout that was rendered
  torch::Tensor features;  // [C, R_p, R_p] rearranged features
};

// Mapper argmax of a single condition (data [R,R]), style features from
// style_seed, rearranged and rendered. Thread-safe on a model that is not
// being trained.
Synthesis synthesize(Model& model, const ConditionRaster& condition, std::uint64_t style_seed);

// Layout from the proxy mask of target_seed's own features, style from style_seed.
Synthesis exemplar(Model& model, std::uint64_t target_seed, std::uint64_t style_seed);

// Deterministic latent seeds for evaluation sets.
std::vector<std::uint64_t> eval_seeds(int n, std::uint64_t seed);

// mIoU(assign_hard(rearrange(m_i, f_i)), m_i), pooled over n latents.
double self_reconstruction_miou(Model& model, int n, std::uint64_t seed);
// mIoU(assign_hard(rearrange(m_i, f_j)), m_i), pooled over n latent pairs.
double cross_pair_miou(Model& model, int n, std::uint64_t seed);
// Per-pixel accuracy of the mapper argmax against proxies of n held-out minted pairs.
double mapper_accuracy(Model& model, int n, std::uint64_t seed);
// feature_stats_distance between n cross-pair renders and n real images.
double cross_pair_fsd(Model& model, const ImageDataset& reals, int n, std::uint64_t seed);
// feature_stats_distance between n unconditional samples and n real images.
double sample_fsd(Model& model, const ImageDataset& reals, int n, std::uint64_t seed);

// Report of the `evaluate` command: scene masks drive synthesize() and the
// renders are segmented by color, giving miou and accuracy against the input
// masks; fsd compares renders with real scenes; diversity compares groups of
// renders that share the masks but not the style seed.
nlohmann::json evaluate_model(Model& model, const ImageDataset& reals, int n, int groups, std::uint64_t seed);

}  // namespace proxysynth
