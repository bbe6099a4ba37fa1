#pragma once

// Cross-attention feature rearranger. A proxy mask supplies the queries and
// a feature map supplies keys and values; the attended values are mapped back
// to the generator's feature space.

#include <torch/torch.h>

#include "proxysynth/config.hpp"

namespace proxysynth {

// 2D sinusoidal table [d_f, res, res]. The first half of the channels encodes
// the row index and the second half the column index; within each half,
// channel 2i is sin(pos * f_i) and 2i+1 is cos(pos * f_i) with
// f_i = 10000^(-i / (d_f/4)).
torch::Tensor positional_encoding(int d_f, int res);

// softmax(Q K^T / sqrt(d)) V over the last two dims. Q [B,N,d], K [B,M,d],
// V [B,M,dv] -> [B,N,dv]. `weights` receives the [B,N,M] softmax rows.
torch::Tensor attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v,
                        torch::Tensor* weights = nullptr);

// Per-token residual stack: x <- x + lrelu(W x + b), `layers` times. On a
// [B, N, D] token layout this equals a stack of 1x1 convolutions.
class ResidualStackImpl : public torch::nn::Module {
 public:
  ResidualStackImpl(int width, int layers);
  torch::Tensor forward(torch::Tensor x);

 private:
  std::vector<torch::nn::Linear> layers_;
};
TORCH_MODULE(ResidualStack);

struct RearrangeTrace {
  torch::Tensor queries;    // [B, N, d]
  torch::Tensor keys;       // [B, N, d]
  torch::Tensor values;     // [B, N, d]
  torch::Tensor weights;    // [B, N, N]
  torch::Tensor attended;   // [B, N, d], before the post block
  torch::Tensor output;     // [B, C, R, R]
};

class RearrangerImpl : public torch::nn::Module {
 public:
  RearrangerImpl(const RearrangerConfig& cfg, int k, int channels, int res);

  // Queries from integer proxy masks [B, R, R].
  torch::Tensor embed_mask(const torch::Tensor& mask);
  // Queries from per-pixel class distributions [B, K, R, R] (one-hot or soft).
  torch::Tensor embed_probs(const torch::Tensor& probs);

  torch::Tensor forward(const torch::Tensor& mask, const torch::Tensor& features);
  torch::Tensor forward_probs(const torch::Tensor& probs, const torch::Tensor& features);
  RearrangeTrace trace(const torch::Tensor& mask, const torch::Tensor& features);

  int k() const { return k_; }

  torch::Tensor class_embedding;  // [K, d_f]
  torch::nn::Linear w_q{nullptr}, w_k{nullptr}, w_v{nullptr};
  torch::nn::Linear feature_in{nullptr}, output{nullptr};
  ResidualStack mask_block{nullptr}, feature_block{nullptr}, post_block{nullptr};

 private:
  torch::Tensor queries_from_embedding(const torch::Tensor& tokens);
  RearrangeTrace run(const torch::Tensor& queries, const torch::Tensor& features);

  RearrangerConfig cfg_;
  int k_, channels_, res_;
  torch::Tensor pe_;  // [N, d_f] buffer
};
TORCH_MODULE(Rearranger);

}  // namespace proxysynth
