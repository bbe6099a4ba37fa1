#pragma once

// K-means proxy masks over generator feature maps.

#include <cstdint>
#include <span>
#include <vector>

#include <torch/torch.h>

namespace proxysynth {

struct ClusterModel {
  torch::Tensor centroids;  // [K, C] float32
  double tau = 1.0;
  std::int64_t fitted_on = 0;  // number of pixel vectors used for the fit
  // Optional per-channel standardization applied before distances ([C] each).
  torch::Tensor channel_mean, channel_std;

  int k() const { return static_cast<int>(centroids.size(0)); }
  int channels() const { return static_cast<int>(centroids.size(1)); }
  bool normalizes() const { return channel_mean.defined(); }
};

struct KMeansOptions {
  int max_iter = 300;
  int n_init = 20;
  // After Lloyd converges, move single points between clusters while a move
  // lowers the objective (Hartigan transfers). The result is still a Lloyd
  // fixpoint; plain Lloyd can stall in minima no data-point seeding escapes.
  bool refine = true;
};

// K-means result on row-major points.
struct KMeansResult {
  std::vector<double> centroids;  // k * dim
  std::vector<int> labels;
  double objective = 0.0;                  // within-cluster sum of squares
  std::vector<double> objective_history;   // per Lloyd iteration, then per transfer sweep, of the winning restart
  int iterations = 0;
  int reseeded_clusters = 0;
};

// Lloyd's algorithm with k-means++ seeding and `n_init` restarts, keeping the
// lowest objective, optionally refined by single-point transfers. An empty
// cluster is re-seeded at the point farthest from its assigned centroid.
// Throws DegenerateInputError when fewer than k distinct points exist.
KMeansResult kmeans(std::span<const double> points, int dim, int k, std::uint64_t seed, const KMeansOptions& opts = {});

// Fits centroids over every pixel of `features` [N, C, H, W].
ClusterModel fit_clusters(const torch::Tensor& features, int k, std::uint64_t seed, double tau = 1.0,
                          const KMeansOptions& opts = {}, bool normalize = false);

// Negative squared distances over tau: [B, K, H, W]. Differentiable w.r.t. f.
torch::Tensor cluster_logits(const torch::Tensor& f, const ClusterModel& model);

// Per-pixel nearest centroid, lowest index on ties. [B,C,H,W] -> [B,H,W] int64.
torch::Tensor assign_hard(const torch::Tensor& f, const ClusterModel& model);

// Per-pixel softmax of -d^2/tau. [B,C,H,W] -> [B,K,H,W].
torch::Tensor assign_soft(const torch::Tensor& f, const ClusterModel& model);

// Mirror along the width (last) axis. Works for features, masks and images.
torch::Tensor hflip(const torch::Tensor& x);

}  // namespace proxysynth
