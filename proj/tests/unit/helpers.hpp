#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <vector>
#include <string>

#include <torch/torch.h>

#include "proxysynth/config.hpp"

namespace testing {

// Small architecture that keeps every stage to a few seconds.
inline proxysynth::Config tiny_config(std::uint64_t seed = 3) {
  proxysynth::Config c;
  c.seed = seed;
  c.gan.z_dim = 16;
  c.gan.w_dim = 16;
  c.gan.mapping_layers = 2;
  c.gan.channels = 16;
  c.gan.proxy_res = 8;
  c.gan.image_res = 32;
  c.gan.widths = {{4, 16}, {16, 8}, {32, 8}};
  c.gan.d_widths = {{4, 16}, {8, 16}, {16, 8}, {32, 8}};
  c.gan.batch = 4;
  c.gan.steps = 12;
  c.cluster.k = 4;
  c.cluster.samples = 16;
  c.cluster.n_init = 2;
  c.rearranger.attn_dim = 16;
  c.rearranger.embed_dim = 16;
  c.rearranger.block_layers = 1;
  c.rearranger.batch = 2;
  c.rearranger.phase1_steps = 12;
  c.rearranger.phase2_steps = 4;
  c.mapper.segnet_hidden = 8;
  c.mapper.segnet_epochs = 20;
  c.mapper.stack_res = 16;
  c.mapper.base_width = 8;
  c.mapper.batch = 2;
  c.mapper.phase1_steps = 6;
  c.mapper.phase2_steps = 3;
  c.data.scenes = 16;
  return c;
}

// Largest relative error between an analytic gradient and central
// differences of a scalar function, over `probes` random coordinates.
// Relative error is |a-n| / max(|a|, |n|, 1e-3) so values near zero are
// compared on an absolute scale.
inline double fd_gradient_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, torch::Tensor x,
                                int probes, std::uint64_t seed, double h = 1e-5) {
  x = x.detach().to(torch::kFloat64).requires_grad_(true);
  auto y = f(x);
  auto grad = torch::autograd::grad({y}, {x})[0].detach();
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto flat = x.detach().flatten();
  double worst = 0.0;
  for (int p = 0; p < probes; ++p) {
    int64_t i = torch::randint(0, flat.numel(), {1}, gen).item<int64_t>();
    auto plus = flat.clone(), minus = flat.clone();
    plus[i] += h;
    minus[i] -= h;
    double fp = f(plus.view(x.sizes())).item<double>();
    double fm = f(minus.view(x.sizes())).item<double>();
    double numeric = (fp - fm) / (2 * h);
    double analytic = grad.flatten()[i].item<double>();
    double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

// Minimum within-cluster sum of squares over every assignment of n points to
// k labels (labels may stay empty; with >= k distinct points the optimum
// uses all k).
inline double exhaustive_optimum(const std::vector<double>& pts, int dim, int k) {
  const int n = static_cast<int>(pts.size()) / dim;
  std::vector<int> label(n, 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    std::vector<double> sum(k * dim, 0.0), sq(k, 0.0);
    std::vector<int> cnt(k, 0);
    for (int i = 0; i < n; ++i) {
      ++cnt[label[i]];
      for (int d = 0; d < dim; ++d) {
        double v = pts[i * dim + d];
        sum[label[i] * dim + d] += v;
        sq[label[i]] += v * v;
      }
    }
    double sse = 0.0;
    for (int c = 0; c < k; ++c) {
      if (!cnt[c]) continue;
      double s2 = 0.0;
      for (int d = 0; d < dim; ++d) s2 += sum[c * dim + d] * sum[c * dim + d];
      sse += sq[c] - s2 / cnt[c];
    }
    best = std::min(best, sse);
    int i = 0;
    while (i < n && ++label[i] == k) label[i++] = 0;
    if (i == n) break;
  }
  return best;
}

inline double partition_sse(const std::vector<double>& pts, int dim, const torch::Tensor& labels, int k) {
  const int n = static_cast<int>(pts.size()) / dim;
  std::vector<double> mean(k * dim, 0.0);
  std::vector<int> cnt(k, 0);
  for (int i = 0; i < n; ++i) {
    int l = static_cast<int>(labels[i].item<int64_t>());
    ++cnt[l];
    for (int d = 0; d < dim; ++d) mean[l * dim + d] += pts[i * dim + d];
  }
  for (int c = 0; c < k; ++c)
    for (int d = 0; d < dim && cnt[c]; ++d) mean[c * dim + d] /= cnt[c];
  double sse = 0.0;
  for (int i = 0; i < n; ++i) {
    int l = static_cast<int>(labels[i].item<int64_t>());
    for (int d = 0; d < dim; ++d) sse += std::pow(pts[i * dim + d] - mean[l * dim + d], 2);
  }
  return sse;
}

inline std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("proxysynth_test_" + name)).string();
}

}  // namespace testing
