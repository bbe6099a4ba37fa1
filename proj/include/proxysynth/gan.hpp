#pragma once

// Style-based toy generator split at the proxy resolution, plus a residual
// discriminator. Tensors are batch-first:
//   latent  [B, Z]           style [B, W]
//   feature [B, C, Rp, Rp]   image [B, 3, Rimg, Rimg] in [-1, 1]

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "proxysynth/config.hpp"

namespace proxysynth {

struct LatentCode {
  torch::Tensor values;  // [Z]
  std::uint64_t seed = 0;
};

torch::Generator make_rng(std::uint64_t seed);

LatentCode sample_latent(std::uint64_t seed, int z_dim);
// Stacks sample_latent over `seeds` into [B, Z].
torch::Tensor sample_latents(const std::vector<std::uint64_t>& seeds, int z_dim);

torch::Tensor lrelu(const torch::Tensor& x);

// Linear layer with runtime fan-in scaling (weights stored as N(0,1)/lr_mul).
class EqualLinearImpl : public torch::nn::Module {
 public:
  EqualLinearImpl(int in, int out, bool bias = true, double lr_mul = 1.0, double bias_init = 0.0);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight, bias;

 private:
  double scale_, lr_mul_;
};
TORCH_MODULE(EqualLinear);

class EqualConv2dImpl : public torch::nn::Module {
 public:
  EqualConv2dImpl(int in, int out, int kernel, bool bias = true);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight, bias;

 private:
  double scale_;
  int padding_;
};
TORCH_MODULE(EqualConv2d);

// Style-modulated convolution with weight demodulation.
class ModulatedConv2dImpl : public torch::nn::Module {
 public:
  ModulatedConv2dImpl(int in, int out, int kernel, int w_dim, bool demodulate = true);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& w);

  EqualLinear affine{nullptr};
  torch::Tensor weight, bias;

 private:
  double scale_;
  int padding_;
  bool demodulate_;
};
TORCH_MODULE(ModulatedConv2d);

class MappingNetworkImpl : public torch::nn::Module {
 public:
  MappingNetworkImpl(int z_dim, int w_dim, int layers, double lr_mul);
  torch::Tensor forward(const torch::Tensor& z);

 private:
  int z_dim_;
  std::vector<EqualLinear> layers_;
};
TORCH_MODULE(MappingNetwork);

class StyledBlockImpl : public torch::nn::Module {
 public:
  StyledBlockImpl(int in, int out, int w_dim, bool upsample);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& w);

 private:
  bool upsample_;
  ModulatedConv2d conv0_{nullptr}, conv1_{nullptr};
};
TORCH_MODULE(StyledBlock);

class PlainBlockImpl : public torch::nn::Module {
 public:
  PlainBlockImpl(int in, int out);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  EqualConv2d conv0_{nullptr}, conv1_{nullptr};
};
TORCH_MODULE(PlainBlock);

struct BlockOutput {
  int resolution;
  torch::Tensor features;
};

// G1: latent -> style -> feature maps at the proxy resolution.
class FrontImpl : public torch::nn::Module {
 public:
  explicit FrontImpl(const GanConfig& cfg);
  torch::Tensor map_latent(const torch::Tensor& z);
  torch::Tensor forward(const torch::Tensor& w);
  // Output of every synthesis block, lowest resolution first.
  std::vector<BlockOutput> forward_blocks(const torch::Tensor& w);

  MappingNetwork mapping{nullptr};

 private:
  GanConfig cfg_;
  torch::Tensor const_input_;
  StyledBlock first_{nullptr};
  std::vector<std::pair<int, StyledBlock>> blocks_;
};
TORCH_MODULE(Front);

// G2: feature maps at the proxy resolution -> image. Style-free.
class BackImpl : public torch::nn::Module {
 public:
  explicit BackImpl(const GanConfig& cfg);
  torch::Tensor forward(const torch::Tensor& f);

 private:
  GanConfig cfg_;
  std::vector<PlainBlock> blocks_;
  EqualConv2d to_rgb_{nullptr};
};
TORCH_MODULE(Back);

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const GanConfig& cfg);

  torch::Tensor map_latent(const torch::Tensor& z);
  torch::Tensor generate_front(const torch::Tensor& w);
  torch::Tensor generate_back(const torch::Tensor& f);
  // Unsplit pass: z -> image.
  torch::Tensor forward(const torch::Tensor& z);

  const GanConfig& config() const { return cfg_; }

  Front g1{nullptr};
  Back g2{nullptr};

 private:
  GanConfig cfg_;
};
TORCH_MODULE(Generator);

class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const GanConfig& cfg);
  // [B, 3, R, R] -> [B] logits
  torch::Tensor forward(const torch::Tensor& x);

 private:
  struct Block {
    EqualConv2d conv0{nullptr}, conv1{nullptr}, skip{nullptr};
  };
  GanConfig cfg_;
  EqualConv2d from_rgb_{nullptr};
  std::vector<Block> blocks_;
  EqualConv2d final_conv_{nullptr};
  EqualLinear fc_{nullptr}, out_{nullptr};
};
TORCH_MODULE(Discriminator);

// Scalar score for a single [3, R, R] image.
double discriminate(Discriminator& d, const torch::Tensor& image);

void check_image_shape(const torch::Tensor& x, int res, const char* what);
void check_feature_shape(const torch::Tensor& f, int channels, int res, const char* what);

}  // namespace proxysynth
