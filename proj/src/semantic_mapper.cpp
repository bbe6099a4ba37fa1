#include "proxysynth/semantic_mapper.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <opencv2/imgproc.hpp>

#include "proxysynth/errors.hpp"
#include "proxysynth/toydata.hpp"

namespace proxysynth {

namespace F = torch::nn::functional;

ConditionKind parse_condition_kind(const std::string& name) {
  if (name == "segmentation") return ConditionKind::segmentation;
  if (name == "scribble") return ConditionKind::scribble;
  if (name == "edge") return ConditionKind::edge;
  throw ConfigError("unknown condition kind '" + name + "'");
}

std::string to_string(ConditionKind kind) {
  switch (kind) {
    case ConditionKind::segmentation: return "segmentation";
    case ConditionKind::scribble: return "scribble";
    case ConditionKind::edge: return "edge";
  }
  return "unknown";
}

torch::Tensor encode_condition(const ConditionRaster& c, int classes, int res) {
  const auto& d = c.data;
  if (d.dim() != 3 || d.size(1) != res || d.size(2) != res)
    throw DimensionError("condition raster must be [B," + std::to_string(res) + "," + std::to_string(res) + "]");
  if (c.kind == ConditionKind::segmentation) {
    auto labels = d.to(torch::kInt64);
    if (labels.numel() && (labels.min().item<int64_t>() < 0 || labels.max().item<int64_t>() >= classes))
      throw LabelError("segmentation condition label outside [0," + std::to_string(classes) + ")");
    return F::one_hot(labels, classes).permute({0, 3, 1, 2}).to(torch::kFloat32);
  }
  auto v = d.to(torch::kFloat32);
  if (v.numel() && (v.min().item<float>() < 0.f || v.max().item<float>() > 1.f))
    throw LabelError(to_string(c.kind) + " condition values must lie in [0,1]");
  return v.unsqueeze(1);
}

int feature_stack_channels(const GanConfig& cfg) {
  int total = 0;
  for (int res = 8; res <= cfg.proxy_res; res *= 2) total += cfg.width_at(res);
  return total;
}

namespace {

torch::Tensor stack_blocks(const std::vector<BlockOutput>& blocks, int stack_res) {
  std::vector<torch::Tensor> parts;
  for (auto& block : blocks) {
    if (block.resolution < 8) continue;
    parts.push_back(F::interpolate(block.features, F::InterpolateFuncOptions()
                                                       .size(std::vector<int64_t>{stack_res, stack_res})
                                                       .mode(torch::kNearest)));
  }
  return torch::cat(parts, 1);
}

}  // namespace

torch::Tensor build_feature_stack(Generator& g, const torch::Tensor& w, int stack_res) {
  return stack_blocks(g->g1->forward_blocks(w), stack_res);
}

SegNetImpl::SegNetImpl(int in_channels, int hidden, int classes) : in_channels_(in_channels), classes_(classes) {
  hidden_ = register_module("hidden", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, hidden, 1)));
  out_ = register_module("out", torch::nn::Conv2d(torch::nn::Conv2dOptions(hidden, classes, 1)));
}

void SegNetImpl::fold_input_normalization(const torch::Tensor& mean, const torch::Tensor& std) {
  torch::NoGradGuard guard;
  auto w = hidden_->weight.view({hidden_->weight.size(0), hidden_->weight.size(1)});
  w.div_(std.unsqueeze(0));
  hidden_->bias.sub_(torch::matmul(w, mean));
}

torch::Tensor SegNetImpl::forward(const torch::Tensor& stack) {
  if (stack.dim() != 4 || stack.size(1) != in_channels_)
    throw DimensionError("segnet: expected feature stack with " + std::to_string(in_channels_) + " channels");
  return out_->forward(torch::leaky_relu(hidden_->forward(stack), 0.2));
}

AnnotationAudit& annotation_audit() {
  static AnnotationAudit audit;
  return audit;
}

namespace {

torch::Tensor upsample_logits(const torch::Tensor& logits, int out_res) {
  return F::interpolate(logits, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{out_res, out_res})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
}

}  // namespace

SegNet segnet_fit(const std::vector<AnnotatedSample>& samples, int hidden, int classes, int epochs, std::uint64_t seed,
                  double lr) {
  if (samples.empty()) throw ConfigError("segnet_fit: no annotated samples");
  std::vector<torch::Tensor> stacks, labels;
  for (auto& s : samples) {
    if (s.labels.dim() != 2) throw DimensionError("segnet_fit: labels must be [R,R]");
    if (s.labels.max().item<int64_t>() >= classes || s.labels.min().item<int64_t>() < 0)
      throw LabelError("segnet_fit: annotation label outside [0," + std::to_string(classes) + ")");
    stacks.push_back(s.stack.detach());
    labels.push_back(s.labels.to(torch::kInt64));
  }
  annotation_audit().record(static_cast<int>(samples.size()));
  auto x = torch::cat(stacks, 0);
  auto y = torch::stack(labels);
  const int out_res = static_cast<int>(y.size(1));

  torch::manual_seed(seed);
  SegNet net(static_cast<int>(x.size(1)), hidden, classes);
  // Standardize inputs through the first layer's affine map.
  auto mean = x.mean({0, 2, 3});
  auto std = x.std({0, 2, 3}) + 1e-5;
  net->fold_input_normalization(mean, std);
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(lr));
  for (int e = 0; e < epochs; ++e) {
    opt.zero_grad();
    auto logits = upsample_logits(net->forward(x), out_res);
    auto loss = F::cross_entropy(logits, y);
    loss.backward();
    opt.step();
  }
  net->eval();
  return net;
}

torch::Tensor segnet_predict(SegNet& net, const torch::Tensor& stack, int out_res) {
  torch::NoGradGuard guard;
  return upsample_logits(net->forward(stack), out_res).argmax(1);
}

torch::Tensor classify_by_palette(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) throw DimensionError("classify_by_palette: expected [B,3,R,R]");
  torch::NoGradGuard guard;
  const auto& base = scene_base_colors();
  std::vector<double> flat;
  for (auto& c : base) flat.insert(flat.end(), c.begin(), c.end());
  auto colors = torch::tensor(flat, torch::kFloat64).view({kSceneClasses, 3, 1, 1}).unsqueeze(0);  // [1,L,3,1,1]
  auto rgb = ((images.to(torch::kFloat64) + 1.0) / 2.0).unsqueeze(1);                            // [B,1,3,R,R]
  return (rgb - colors).pow(2).sum(2).argmin(1);
}

torch::Tensor scribble_from_labels(const torch::Tensor& labels) {
  if (labels.dim() != 3) throw DimensionError("scribble_from_labels: expected [B,R,R]");
  auto l = labels.to(torch::kInt64).contiguous();
  const int b = static_cast<int>(l.size(0)), h = static_cast<int>(l.size(1)), w = static_cast<int>(l.size(2));
  auto out = torch::zeros({b, h, w}, torch::kFloat32);
  const cv::Mat element = cv::getStructuringElement(cv::MORPH_CROSS, cv::Size(3, 3));
  const int64_t max_label = l.numel() ? l.max().item<int64_t>() : 0;
  for (int i = 0; i < b; ++i) {
    auto li = l[i].contiguous();
    cv::Mat label_mat(h, w, CV_64F);
    {
      auto acc = li.accessor<int64_t, 2>();
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) label_mat.at<double>(y, x) = static_cast<double>(acc[y][x]);
    }
    cv::Mat skeleton = cv::Mat::zeros(h, w, CV_8U);
    for (int64_t cls = 1; cls <= max_label; ++cls) {
      cv::Mat region = (label_mat == static_cast<double>(cls));
      cv::Mat eroded, opened;
      while (cv::countNonZero(region) > 0) {
        cv::erode(region, eroded, element, cv::Point(-1, -1), 1, cv::BORDER_CONSTANT, 0);
        cv::dilate(eroded, opened, element, cv::Point(-1, -1), 1, cv::BORDER_CONSTANT, 0);
        skeleton |= region & ~opened;
        region = eroded.clone();
      }
    }
    auto acc = out.accessor<float, 3>();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) acc[i][y][x] = skeleton.at<std::uint8_t>(y, x) ? 1.f : 0.f;
  }
  return out;
}

torch::Tensor edges_from_images(const torch::Tensor& images, double threshold) {
  if (images.dim() != 4 || images.size(1) != 3) throw DimensionError("edges_from_images: expected [B,3,R,R]");
  torch::NoGradGuard guard;
  auto gray = ((images.to(torch::kFloat32) + 1.0) / 2.0).mean(1, true);
  auto kx = torch::tensor({-1.f, 0.f, 1.f, -2.f, 0.f, 2.f, -1.f, 0.f, 1.f}).view({1, 1, 3, 3}) / 4.0;
  auto ky = kx.transpose(2, 3).contiguous();
  auto padded = F::pad(gray, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
  auto gx = torch::conv2d(padded, kx);
  auto gy = torch::conv2d(padded, ky);
  auto mag = (gx.pow(2) + gy.pow(2)).sqrt().squeeze(1);
  return (mag > threshold).to(torch::kFloat32);
}

MapperImpl::MapperImpl(int in_channels, int k, int base_width, int image_res, int proxy_res)
    : in_channels_(in_channels), k_(k), image_res_(image_res), proxy_res_(proxy_res) {
  if (proxy_res < 8 || image_res < proxy_res) throw ConfigError("mapper: invalid resolutions");
  int in = in_channels, level = 0, skip_width = 0;
  for (int res = image_res; res >= proxy_res / 2; res /= 2, ++level) {
    int width = base_width * std::min(1 << level, 4);
    enc_.push_back(register_module("enc" + std::to_string(level),
                                   torch::nn::Conv2d(torch::nn::Conv2dOptions(in, width, 3).padding(1))));
    enc_res_.push_back(res);
    if (res == proxy_res) skip_width = width;
    in = width;
  }
  dec0_ = register_module("dec0", torch::nn::Conv2d(torch::nn::Conv2dOptions(in + skip_width, in, 3).padding(1)));
  dec1_ = register_module("dec1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, in, 3).padding(1)));
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, k, 1)));
}

torch::Tensor MapperImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != in_channels_ || x.size(2) != image_res_ || x.size(3) != image_res_)
    throw DimensionError("mapper: expected input [B," + std::to_string(in_channels_) + "," + std::to_string(image_res_) +
                         "," + std::to_string(image_res_) + "]");
  auto h = x;
  torch::Tensor skip;
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    if (i > 0) h = torch::avg_pool2d(h, 2);
    h = torch::leaky_relu(enc_[i]->forward(h), 0.2);
    if (enc_res_[i] == proxy_res_) skip = h;
  }
  h = F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
  h = torch::leaky_relu(dec0_->forward(torch::cat({h, skip}, 1)), 0.2);
  h = torch::leaky_relu(dec1_->forward(h), 0.2);
  return head_->forward(h);
}

torch::Tensor mapper_forward(Mapper& mapper, const ConditionRaster& c, int classes, int res) {
  auto input = encode_condition(c, classes, res);
  if (input.size(1) != mapper->in_channels())
    throw ConfigError("condition kind '" + to_string(c.kind) + "' does not match the mapper's input channels");
  return mapper->forward(input);
}

std::vector<std::uint64_t> mint_latent_seeds(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(n));
  for (auto& s : seeds) s = rng();
  return seeds;
}

MintedPairs mint_pairs(Generator& g, const ClusterModel& clusters, SegNet& segnet, ConditionKind kind, int stack_res,
                       int n, std::uint64_t seed) {
  torch::NoGradGuard guard;
  const auto& cfg = g->config();
  MintedPairs out;
  out.latents = sample_latents(mint_latent_seeds(n, seed), cfg.z_dim);
  auto w = g->map_latent(out.latents);
  auto blocks = g->g1->forward_blocks(w);
  auto f = blocks.back().features;
  out.proxies = assign_hard(f, clusters);
  out.images = g->generate_back(f);

  auto stack = stack_blocks(blocks, stack_res);
  out.conditions.kind = kind;
  switch (kind) {
    case ConditionKind::segmentation:
      out.conditions.data = segnet_predict(segnet, stack, cfg.image_res);
      break;
    case ConditionKind::scribble:
      out.conditions.data = scribble_from_labels(segnet_predict(segnet, stack, cfg.image_res));
      break;
    case ConditionKind::edge:
      out.conditions.data = edges_from_images(out.images);
      break;
  }
  return out;
}

}  // namespace proxysynth
