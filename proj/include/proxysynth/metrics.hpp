#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

namespace proxysynth {

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes);

  // Accumulates integer label fields of equal shape (any rank).
  void add(const torch::Tensor& pred, const torch::Tensor& gt);

  int classes() const { return classes_; }
  std::int64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * classes_ + pred]; }
  std::int64_t total() const;

  // Mean IoU over classes present in gt or pred; classes absent from both are skipped.
  double miou() const;
  double accuracy() const;
  std::vector<double> per_class_iou() const;  // NaN for absent classes

 private:
  int classes_;
  std::vector<std::int64_t> counts_;  // row = gt, column = pred
};

double miou(const torch::Tensor& pred, const torch::Tensor& gt, int classes);
double pixel_accuracy(const torch::Tensor& pred, const torch::Tensor& gt);

// Fixed-seed untrained conv embedder: three stride-2 3x3 convs (32, 64, 128
// channels, leaky ReLU) followed by a spatial mean, giving 128-d vectors.
torch::Tensor embed_images(const torch::Tensor& images);

// Frechet distance between Gaussians; covariances get eps on the diagonal.
double frechet_distance(const torch::Tensor& mu_a, const torch::Tensor& cov_a, const torch::Tensor& mu_b,
                        const torch::Tensor& cov_b, double eps = 1e-6);

// Frechet distance between Gaussian fits of embed_images outputs. Each set is
// [N,3,R,R] with N >= 2. Only comparable within this project.
double feature_stats_distance(const torch::Tensor& set_a, const torch::Tensor& set_b);

// Mean over all unordered group pairs of the mean RMS difference between
// corresponding images. Groups are [n,3,R,R] of equal size.
double group_diversity(const std::vector<torch::Tensor>& groups);

}  // namespace proxysynth
