#include "proxysynth/rearranger.hpp"

#include <cmath>
#include <string>

#include "proxysynth/errors.hpp"
#include "proxysynth/gan.hpp"

namespace proxysynth {

namespace {

void init_linear(torch::nn::Linear& layer) {
  torch::NoGradGuard guard;
  auto fan_in = static_cast<double>(layer->weight.size(1));
  layer->weight.normal_(0.0, 1.0 / std::sqrt(fan_in));
  if (layer->bias.defined()) layer->bias.zero_();
}

torch::nn::Linear make_linear(int in, int out, bool bias) {
  torch::nn::Linear layer(torch::nn::LinearOptions(in, out).bias(bias));
  init_linear(layer);
  return layer;
}

// [B, C, R, R] -> [B, R*R, C]
torch::Tensor to_tokens(const torch::Tensor& x) { return x.flatten(2).transpose(1, 2); }

}  // namespace

torch::Tensor positional_encoding(int d_f, int res) {
  if (d_f <= 0 || d_f % 4 != 0) throw ConfigError("positional_encoding: d_f must be a positive multiple of 4");
  const int quarter = d_f / 4;
  auto table = torch::zeros({d_f, res, res}, torch::kFloat64);
  auto acc = table.accessor<double, 3>();
  for (int i = 0; i < quarter; ++i) {
    double freq = std::pow(10000.0, -static_cast<double>(i) / quarter);
    for (int y = 0; y < res; ++y) {
      for (int x = 0; x < res; ++x) {
        acc[2 * i][y][x] = std::sin(y * freq);
        acc[2 * i + 1][y][x] = std::cos(y * freq);
        acc[d_f / 2 + 2 * i][y][x] = std::sin(x * freq);
        acc[d_f / 2 + 2 * i + 1][y][x] = std::cos(x * freq);
      }
    }
  }
  return table.to(torch::kFloat32);
}

torch::Tensor attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v, torch::Tensor* weights) {
  if (q.dim() != 3 || k.dim() != 3 || v.dim() != 3) throw DimensionError("attention: expected rank-3 Q, K, V");
  if (q.size(2) != k.size(2)) throw DimensionError("attention: Q and K inner dimensions differ");
  if (k.size(1) != v.size(1)) throw DimensionError("attention: K and V row counts differ");
  if (q.size(0) != k.size(0) || k.size(0) != v.size(0)) throw DimensionError("attention: batch sizes differ");
  auto logits = torch::bmm(q, k.transpose(1, 2)) / std::sqrt(static_cast<double>(q.size(2)));
  auto w = torch::softmax(logits, -1);
  if (weights) *weights = w;
  return torch::bmm(w, v);
}

ResidualStackImpl::ResidualStackImpl(int width, int layers) {
  for (int i = 0; i < layers; ++i) layers_.push_back(register_module("fc" + std::to_string(i), make_linear(width, width, true)));
}

torch::Tensor ResidualStackImpl::forward(torch::Tensor x) {
  for (auto& fc : layers_) x = x + torch::leaky_relu(fc->forward(x), 0.2);
  return x;
}

RearrangerImpl::RearrangerImpl(const RearrangerConfig& cfg, int k, int channels, int res)
    : cfg_(cfg), k_(k), channels_(channels), res_(res) {
  cfg_.validate();
  const int d_f = cfg.embed_dim, d = cfg.attn_dim;
  class_embedding = register_parameter("class_embedding", torch::randn({k, d_f}));
  pe_ = register_buffer("pe", to_tokens(positional_encoding(d_f, res).unsqueeze(0)).squeeze(0).contiguous());
  mask_block = register_module("mask_block", ResidualStack(d_f, cfg.block_layers));
  feature_in = register_module("feature_in", make_linear(channels, d_f, true));
  feature_block = register_module("feature_block", ResidualStack(d_f, cfg.block_layers));
  w_q = register_module("w_q", make_linear(d_f, d, false));
  w_k = register_module("w_k", make_linear(d_f, d, false));
  w_v = register_module("w_v", make_linear(d_f, d, false));
  post_block = register_module("post_block", ResidualStack(d, cfg.block_layers));
  output = register_module("output", make_linear(d, channels, true));
}

torch::Tensor RearrangerImpl::queries_from_embedding(const torch::Tensor& tokens) {
  return w_q->forward(mask_block->forward(tokens + pe_.to(tokens.dtype())));
}

torch::Tensor RearrangerImpl::embed_mask(const torch::Tensor& mask) {
  if (mask.dim() != 3 || mask.size(1) != res_ || mask.size(2) != res_)
    throw DimensionError("embed_mask: expected mask [B," + std::to_string(res_) + "," + std::to_string(res_) + "]");
  if (mask.numel() > 0 && (mask.min().item<int64_t>() < 0 || mask.max().item<int64_t>() >= k_))
    throw LabelError("embed_mask: proxy label outside [0," + std::to_string(k_) + ")");
  auto tokens = torch::embedding(class_embedding, mask.flatten(1).to(torch::kInt64));  // [B, N, d_f]
  return queries_from_embedding(tokens);
}

torch::Tensor RearrangerImpl::embed_probs(const torch::Tensor& probs) {
  if (probs.dim() != 4 || probs.size(1) != k_ || probs.size(2) != res_ || probs.size(3) != res_)
    throw DimensionError("embed_probs: expected class distributions [B," + std::to_string(k_) + "," +
                         std::to_string(res_) + "," + std::to_string(res_) + "]");
  auto tokens = torch::matmul(to_tokens(probs), class_embedding.to(probs.dtype()));
  return queries_from_embedding(tokens);
}

RearrangeTrace RearrangerImpl::run(const torch::Tensor& queries, const torch::Tensor& features) {
  check_feature_shape(features, channels_, res_, "rearrange");
  if (queries.size(0) != features.size(0))
    throw DimensionError("rearrange: mask batch " + std::to_string(queries.size(0)) + " differs from feature batch " +
                         std::to_string(features.size(0)));
  auto tokens = feature_in->forward(to_tokens(features));
  if (cfg_.pe_on_keys) tokens = tokens + pe_.to(tokens.dtype());
  tokens = feature_block->forward(tokens);
  RearrangeTrace t;
  t.queries = queries;
  t.keys = w_k->forward(tokens);
  t.values = w_v->forward(tokens);
  t.attended = attention(t.queries, t.keys, t.values, &t.weights);
  auto out = output->forward(post_block->forward(t.attended));  // [B, N, C]
  t.output = out.transpose(1, 2).reshape({features.size(0), channels_, res_, res_});
  return t;
}

torch::Tensor RearrangerImpl::forward(const torch::Tensor& mask, const torch::Tensor& features) {
  return run(embed_mask(mask), features).output;
}

torch::Tensor RearrangerImpl::forward_probs(const torch::Tensor& probs, const torch::Tensor& features) {
  return run(embed_probs(probs), features).output;
}

RearrangeTrace RearrangerImpl::trace(const torch::Tensor& mask, const torch::Tensor& features) {
  return run(embed_mask(mask), features);
}

}  // namespace proxysynth
