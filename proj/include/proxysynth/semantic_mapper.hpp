#pragma once

// Bridges human conditions (segmentation, scribble, edge rasters) to proxy
// masks: a one-shot SegNet labels generated samples from generator features,
// and the mapper learns condition -> proxy logits from those minted pairs.

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "proxysynth/cluster.hpp"
#include "proxysynth/config.hpp"
#include "proxysynth/gan.hpp"

namespace proxysynth {

enum class ConditionKind { segmentation, scribble, edge };

ConditionKind parse_condition_kind(const std::string& name);
std::string to_string(ConditionKind kind);

// A human-facing condition. `data` is [B,R,R]: int64 labels < classes for
// segmentation, float in [0,1] for scribble and edge rasters.
struct ConditionRaster {
  ConditionKind kind = ConditionKind::segmentation;
  torch::Tensor data;
};

// Validates a condition and encodes it as mapper input channels:
// one-hot [B,L,R,R] for segmentation, [B,1,R,R] otherwise.
torch::Tensor encode_condition(const ConditionRaster& c, int classes, int res);

// Concatenation of every generator block output from 8x8 through the proxy
// resolution, nearest-upsampled to `stack_res`: [B, C_total, R_s, R_s].
torch::Tensor build_feature_stack(Generator& g, const torch::Tensor& w, int stack_res);
int feature_stack_channels(const GanConfig& cfg);

// Per-pixel classifier: 1x1 conv C_total -> hidden, leaky ReLU, 1x1 conv -> L.
class SegNetImpl : public torch::nn::Module {
 public:
  SegNetImpl(int in_channels, int hidden, int classes);
  torch::Tensor forward(const torch::Tensor& stack);  // logits [B, L, R_s, R_s]
  int classes() const { return classes_; }
  // Rescales the first layer so it sees (x - mean) / std.
  void fold_input_normalization(const torch::Tensor& mean, const torch::Tensor& std);

 private:
  int in_channels_, classes_;
  torch::nn::Conv2d hidden_{nullptr}, out_{nullptr};
};
TORCH_MODULE(SegNet);

struct AnnotatedSample {
  torch::Tensor stack;   // [1, C_total, R_s, R_s]
  torch::Tensor labels;  // [R_img, R_img] int64
};

// Counts human-labeled rasters consumed by training.
class AnnotationAudit {
 public:
  void record(int n = 1) { count_ += n; }
  int count() const { return count_.load(); }
  void reset() { count_ = 0; }

 private:
  std::atomic<int> count_{0};
};
AnnotationAudit& annotation_audit();

// Fits a SegNet by full-batch cross-entropy on the annotated samples (one in
// the one-shot setting). Logits are bilinearly upsampled to the label
// resolution before the loss. Every sample is recorded in annotation_audit().
SegNet segnet_fit(const std::vector<AnnotatedSample>& samples, int hidden, int classes, int epochs, std::uint64_t seed,
                  double lr = 0.01);

// argmax over bilinearly upsampled logits: [B, out_res, out_res] int64.
torch::Tensor segnet_predict(SegNet& net, const torch::Tensor& stack, int out_res);

// Stand-in for a human annotator on toy scenes: labels each pixel of an image
// [B,3,R,R] with the nearest scene base color. Also used as the evaluation
// segmenter for synthesized images.
torch::Tensor classify_by_palette(const torch::Tensor& images);

// Morphological skeleton of every foreground class region of a label field
// [B,R,R], as a binary float raster.
torch::Tensor scribble_from_labels(const torch::Tensor& labels);
// Thresholded Sobel gradient magnitude of images [B,3,R,R]: binary float raster.
torch::Tensor edges_from_images(const torch::Tensor& images, double threshold = 0.2);

// U-Net: encoder from R_img down to R_p/2, decoder back to R_p with skip
// connections; K logits per proxy pixel. No noise input.
class MapperImpl : public torch::nn::Module {
 public:
  MapperImpl(int in_channels, int k, int base_width, int image_res, int proxy_res);
  torch::Tensor forward(const torch::Tensor& x);  // [B,in,R,R] -> [B,K,Rp,Rp]
  int in_channels() const { return in_channels_; }

 private:
  int in_channels_, k_, image_res_, proxy_res_;
  std::vector<torch::nn::Conv2d> enc_;
  std::vector<int> enc_res_;
  torch::nn::Conv2d dec0_{nullptr}, dec1_{nullptr}, head_{nullptr};
};
TORCH_MODULE(Mapper);

torch::Tensor mapper_forward(Mapper& mapper, const ConditionRaster& c, int classes, int res);

struct MintedPairs {
  ConditionRaster conditions;  // [n, R_img, R_img]
  torch::Tensor proxies;       // [n, R_p, R_p] int64
  torch::Tensor images;        // [n, 3, R_img, R_img] generated samples
  torch::Tensor latents;       // [n, Z]
};

// Generates n (condition, proxy) pairs from latents drawn with `seed`.
// Segmentation conditions come from the SegNet; scribbles are skeletons of the
// SegNet labels; edges come from the generated image.
MintedPairs mint_pairs(Generator& g, const ClusterModel& clusters, SegNet& segnet, ConditionKind kind, int stack_res,
                       int n, std::uint64_t seed);

// Latent seeds used by mint_pairs for (n, seed).
std::vector<std::uint64_t> mint_latent_seeds(int n, std::uint64_t seed);

}  // namespace proxysynth
