#include "proxysynth/gan.hpp"

#include <cmath>
#include <string>

#include <ATen/CPUGeneratorImpl.h>

#include "proxysynth/errors.hpp"

namespace proxysynth {

namespace {
constexpr double kLreluGain = 1.4142135623730951;

std::string shape_str(const torch::Tensor& t) {
  std::string s = "[";
  for (int64_t i = 0; i < t.dim(); ++i) s += (i ? "," : "") + std::to_string(t.size(i));
  return s + "]";
}
}  // namespace

torch::Generator make_rng(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

LatentCode sample_latent(std::uint64_t seed, int z_dim) {
  auto gen = make_rng(seed);
  return {torch::randn({z_dim}, gen, torch::kFloat32), seed};
}

torch::Tensor sample_latents(const std::vector<std::uint64_t>& seeds, int z_dim) {
  std::vector<torch::Tensor> rows;
  rows.reserve(seeds.size());
  for (auto s : seeds) rows.push_back(sample_latent(s, z_dim).values);
  return torch::stack(rows);
}

torch::Tensor lrelu(const torch::Tensor& x) { return torch::leaky_relu(x, 0.2) * kLreluGain; }

void check_image_shape(const torch::Tensor& x, int res, const char* what) {
  if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != res || x.size(3) != res)
    throw DimensionError(std::string(what) + ": expected image [B,3," + std::to_string(res) + "," + std::to_string(res) +
                         "], got " + shape_str(x));
}

void check_feature_shape(const torch::Tensor& f, int channels, int res, const char* what) {
  if (f.dim() != 4 || f.size(1) != channels || f.size(2) != res || f.size(3) != res)
    throw DimensionError(std::string(what) + ": expected features [B," + std::to_string(channels) + "," +
                         std::to_string(res) + "," + std::to_string(res) + "], got " + shape_str(f));
}

// ---------------------------------------------------------------------------

EqualLinearImpl::EqualLinearImpl(int in, int out, bool use_bias, double lr_mul, double bias_init)
    : scale_(lr_mul / std::sqrt(static_cast<double>(in))), lr_mul_(lr_mul) {
  weight = register_parameter("weight", torch::randn({out, in}) / lr_mul);
  if (use_bias) bias = register_parameter("bias", torch::full({out}, bias_init / lr_mul));
}

torch::Tensor EqualLinearImpl::forward(const torch::Tensor& x) {
  return torch::nn::functional::linear(x, weight * scale_, bias.defined() ? bias * lr_mul_ : torch::Tensor());
}

EqualConv2dImpl::EqualConv2dImpl(int in, int out, int kernel, bool use_bias)
    : scale_(1.0 / std::sqrt(static_cast<double>(in * kernel * kernel))), padding_(kernel / 2) {
  weight = register_parameter("weight", torch::randn({out, in, kernel, kernel}));
  if (use_bias) bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor EqualConv2dImpl::forward(const torch::Tensor& x) {
  return torch::conv2d(x, weight * scale_, bias.defined() ? bias : torch::Tensor(), 1, padding_);
}

ModulatedConv2dImpl::ModulatedConv2dImpl(int in, int out, int kernel, int w_dim, bool demodulate)
    : scale_(1.0 / std::sqrt(static_cast<double>(in * kernel * kernel))), padding_(kernel / 2), demodulate_(demodulate) {
  affine = register_module("affine", EqualLinear(w_dim, in, true, 1.0, 1.0));
  weight = register_parameter("weight", torch::randn({out, in, kernel, kernel}));
  bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor ModulatedConv2dImpl::forward(const torch::Tensor& x, const torch::Tensor& w) {
  auto styles = affine->forward(w);  // [B, in]
  auto wt = weight * scale_;
  auto y = torch::conv2d(x * styles.unsqueeze(-1).unsqueeze(-1), wt, {}, 1, padding_);
  if (demodulate_) {
    // d[b,o] = 1/sqrt(sum_i s[b,i]^2 * sum_k wt[o,i,k]^2)
    auto wsq = wt.pow(2).sum({2, 3});  // [out, in]
    auto dcoef = torch::rsqrt(torch::matmul(styles.pow(2), wsq.t()) + 1e-8);
    y = y * dcoef.unsqueeze(-1).unsqueeze(-1);
  }
  return y + bias.view({1, -1, 1, 1});
}

MappingNetworkImpl::MappingNetworkImpl(int z_dim, int w_dim, int layers, double lr_mul) : z_dim_(z_dim) {
  for (int i = 0; i < layers; ++i) {
    int in = i == 0 ? z_dim : w_dim;
    layers_.push_back(register_module("fc" + std::to_string(i), EqualLinear(in, w_dim, true, lr_mul)));
  }
}

torch::Tensor MappingNetworkImpl::forward(const torch::Tensor& z) {
  if (z.dim() != 2 || z.size(1) != z_dim_)
    throw DimensionError("map_latent: expected latent [B," + std::to_string(z_dim_) + "], got " + shape_str(z));
  auto x = z * torch::rsqrt(z.pow(2).mean(1, true) + 1e-8);
  for (auto& fc : layers_) x = lrelu(fc->forward(x));
  return x;
}

StyledBlockImpl::StyledBlockImpl(int in, int out, int w_dim, bool upsample) : upsample_(upsample) {
  conv0_ = register_module("conv0", ModulatedConv2d(in, out, 3, w_dim));
  conv1_ = register_module("conv1", ModulatedConv2d(out, out, 3, w_dim));
}

namespace {
torch::Tensor upsample2x(const torch::Tensor& x) {
  namespace F = torch::nn::functional;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .scale_factor(std::vector<double>{2.0, 2.0})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}
}  // namespace

torch::Tensor StyledBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& w) {
  auto h = upsample_ ? upsample2x(x) : x;
  h = lrelu(conv0_->forward(h, w));
  return lrelu(conv1_->forward(h, w));
}

PlainBlockImpl::PlainBlockImpl(int in, int out) {
  conv0_ = register_module("conv0", EqualConv2d(in, out, 3));
  conv1_ = register_module("conv1", EqualConv2d(out, out, 3));
}

torch::Tensor PlainBlockImpl::forward(const torch::Tensor& x) {
  auto h = lrelu(conv0_->forward(upsample2x(x)));
  return lrelu(conv1_->forward(h));
}

// ---------------------------------------------------------------------------

FrontImpl::FrontImpl(const GanConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  mapping = register_module("mapping", MappingNetwork(cfg.z_dim, cfg.w_dim, cfg.mapping_layers, cfg.mapping_lr_mul));
  const_input_ = register_parameter("const", torch::randn({1, cfg.width_at(4), 4, 4}));
  first_ = register_module("block0", StyledBlock(cfg.width_at(4), cfg.width_at(4), cfg.w_dim, false));
  int idx = 1;
  for (int res = 8; res <= cfg.proxy_res; res *= 2, ++idx) {
    auto block = StyledBlock(cfg.width_at(res / 2), cfg.width_at(res), cfg.w_dim, true);
    blocks_.emplace_back(res, register_module("block" + std::to_string(idx), block));
  }
}

torch::Tensor FrontImpl::map_latent(const torch::Tensor& z) { return mapping->forward(z); }

std::vector<BlockOutput> FrontImpl::forward_blocks(const torch::Tensor& w) {
  if (w.dim() != 2 || w.size(1) != cfg_.w_dim)
    throw DimensionError("generate_front: expected style [B," + std::to_string(cfg_.w_dim) + "], got " + shape_str(w));
  std::vector<BlockOutput> out;
  auto x = first_->forward(const_input_.expand({w.size(0), -1, -1, -1}).to(w.dtype()), w);
  out.push_back({4, x});
  for (auto& [res, block] : blocks_) {
    x = block->forward(x, w);
    out.push_back({res, x});
  }
  return out;
}

torch::Tensor FrontImpl::forward(const torch::Tensor& w) { return forward_blocks(w).back().features; }

BackImpl::BackImpl(const GanConfig& cfg) : cfg_(cfg) {
  int idx = 0;
  for (int res = cfg.proxy_res * 2; res <= cfg.image_res; res *= 2, ++idx) {
    blocks_.push_back(
        register_module("block" + std::to_string(idx), PlainBlock(cfg.width_at(res / 2), cfg.width_at(res))));
  }
  to_rgb_ = register_module("to_rgb", EqualConv2d(cfg.width_at(cfg.image_res), 3, 1));
}

torch::Tensor BackImpl::forward(const torch::Tensor& f) {
  check_feature_shape(f, cfg_.channels, cfg_.proxy_res, "generate_back");
  auto x = f;
  for (auto& block : blocks_) x = block->forward(x);
  return torch::tanh(to_rgb_->forward(x));
}

GeneratorImpl::GeneratorImpl(const GanConfig& cfg) : cfg_(cfg) {
  g1 = register_module("g1", Front(cfg));
  g2 = register_module("g2", Back(cfg));
}

torch::Tensor GeneratorImpl::map_latent(const torch::Tensor& z) { return g1->map_latent(z); }
torch::Tensor GeneratorImpl::generate_front(const torch::Tensor& w) { return g1->forward(w); }
torch::Tensor GeneratorImpl::generate_back(const torch::Tensor& f) { return g2->forward(f); }

torch::Tensor GeneratorImpl::forward(const torch::Tensor& z) {
  return g2->forward(g1->forward(g1->map_latent(z)));
}

// ---------------------------------------------------------------------------

DiscriminatorImpl::DiscriminatorImpl(const GanConfig& cfg) : cfg_(cfg) {
  from_rgb_ = register_module("from_rgb", EqualConv2d(3, cfg.d_width_at(cfg.image_res), 1));
  int idx = 0;
  for (int res = cfg.image_res; res > 4; res /= 2, ++idx) {
    int in = cfg.d_width_at(res), out = cfg.d_width_at(res / 2);
    auto name = "block" + std::to_string(idx);
    Block b;
    b.conv0 = register_module(name + "_conv0", EqualConv2d(in, in, 3));
    b.conv1 = register_module(name + "_conv1", EqualConv2d(in, out, 3));
    b.skip = register_module(name + "_skip", EqualConv2d(in, out, 1, false));
    blocks_.push_back(b);
  }
  int w4 = cfg.d_width_at(4);
  final_conv_ = register_module("final_conv", EqualConv2d(w4, w4, 3));
  fc_ = register_module("fc", EqualLinear(w4 * 16, w4));
  out_ = register_module("out", EqualLinear(w4, 1));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x) {
  check_image_shape(x, cfg_.image_res, "discriminate");
  auto h = lrelu(from_rgb_->forward(x));
  for (auto& b : blocks_) {
    auto skip = b.skip->forward(torch::avg_pool2d(h, 2));
    auto y = lrelu(b.conv0->forward(h));
    y = lrelu(b.conv1->forward(torch::avg_pool2d(y, 2)));
    h = (y + skip) * (1.0 / std::sqrt(2.0));
  }
  h = lrelu(final_conv_->forward(h));
  h = lrelu(fc_->forward(h.flatten(1)));
  return out_->forward(h).squeeze(1);
}

double discriminate(Discriminator& d, const torch::Tensor& image) {
  if (image.dim() != 3) throw DimensionError("discriminate: expected a single [3,R,R] image, got " + shape_str(image));
  torch::NoGradGuard guard;
  return d->forward(image.unsqueeze(0)).item<double>();
}

}  // namespace proxysynth
