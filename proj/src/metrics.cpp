#include "proxysynth/metrics.hpp"

#include <cmath>
#include <limits>

#include "proxysynth/errors.hpp"
#include "proxysynth/gan.hpp"

namespace proxysynth {

ConfusionMatrix::ConfusionMatrix(int classes) : classes_(classes), counts_(static_cast<std::size_t>(classes) * classes, 0) {
  if (classes < 1) throw ConfigError("ConfusionMatrix: class count must be positive");
}

void ConfusionMatrix::add(const torch::Tensor& pred, const torch::Tensor& gt) {
  if (!pred.sizes().equals(gt.sizes())) throw DimensionError("confusion matrix: prediction and ground truth shapes differ");
  auto p = pred.to(torch::kInt64).contiguous().flatten();
  auto g = gt.to(torch::kInt64).contiguous().flatten();
  const auto* pp = p.data_ptr<int64_t>();
  const auto* gp = g.data_ptr<int64_t>();
  for (int64_t i = 0; i < p.numel(); ++i) {
    if (pp[i] < 0 || pp[i] >= classes_ || gp[i] < 0 || gp[i] >= classes_)
      throw LabelError("confusion matrix: label outside [0," + std::to_string(classes_) + ")");
    ++counts_[static_cast<std::size_t>(gp[i]) * classes_ + pp[i]];
  }
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::vector<double> ConfusionMatrix::per_class_iou() const {
  std::vector<double> iou(classes_, std::numeric_limits<double>::quiet_NaN());
  for (int c = 0; c < classes_; ++c) {
    std::int64_t tp = at(c, c), row = 0, col = 0;
    for (int o = 0; o < classes_; ++o) {
      row += at(c, o);
      col += at(o, c);
    }
    std::int64_t uni = row + col - tp;
    if (uni > 0) iou[c] = static_cast<double>(tp) / static_cast<double>(uni);
  }
  return iou;
}

double ConfusionMatrix::miou() const {
  double sum = 0.0;
  int present = 0;
  for (double v : per_class_iou()) {
    if (std::isnan(v)) continue;
    sum += v;
    ++present;
  }
  return present ? sum / present : 0.0;
}

double ConfusionMatrix::accuracy() const {
  std::int64_t t = total(), diag = 0;
  for (int c = 0; c < classes_; ++c) diag += at(c, c);
  return t ? static_cast<double>(diag) / static_cast<double>(t) : 0.0;
}

double miou(const torch::Tensor& pred, const torch::Tensor& gt, int classes) {
  ConfusionMatrix cm(classes);
  cm.add(pred, gt);
  return cm.miou();
}

double pixel_accuracy(const torch::Tensor& pred, const torch::Tensor& gt) {
  if (!pred.sizes().equals(gt.sizes())) throw DimensionError("pixel_accuracy: shapes differ");
  if (pred.numel() == 0) return 0.0;
  return pred.to(torch::kInt64).eq(gt.to(torch::kInt64)).to(torch::kFloat64).mean().item<double>();
}

namespace {

struct Embedder {
  std::vector<torch::Tensor> weights;

  Embedder() {
    auto gen = make_rng(0x5eed'f1d0ULL);
    const int widths[] = {3, 32, 64, 128};
    for (int i = 0; i < 3; ++i) {
      double fan_in = widths[i] * 9.0;
      weights.push_back(torch::randn({widths[i + 1], widths[i], 3, 3}, gen, torch::kFloat64) * std::sqrt(2.0 / fan_in));
    }
  }

  torch::Tensor operator()(const torch::Tensor& images) const {
    torch::NoGradGuard guard;
    auto x = images.to(torch::kFloat64);
    for (auto& w : weights) x = torch::leaky_relu(torch::conv2d(x, w, {}, 2, 1), 0.2);
    return x.mean({2, 3});
  }
};

const Embedder& embedder() {
  static const Embedder instance;
  return instance;
}

torch::Tensor sym_sqrt(const torch::Tensor& m) {
  auto [evals, evecs] = torch::linalg_eigh(m);
  return torch::matmul(evecs * evals.clamp_min(0).sqrt().unsqueeze(0), evecs.t());
}

std::pair<torch::Tensor, torch::Tensor> gaussian_fit(const torch::Tensor& e) {
  auto mu = e.mean(0);
  auto centered = e - mu;
  auto cov = torch::matmul(centered.t(), centered) / static_cast<double>(e.size(0) - 1);
  return {mu, cov};
}

}  // namespace

torch::Tensor embed_images(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) throw DimensionError("embed_images: expected [N,3,H,W]");
  return embedder()(images);
}

double frechet_distance(const torch::Tensor& mu_a, const torch::Tensor& cov_a, const torch::Tensor& mu_b,
                        const torch::Tensor& cov_b, double eps) {
  auto eye = torch::eye(cov_a.size(0), torch::kFloat64);
  auto a = cov_a.to(torch::kFloat64) + eps * eye;
  auto b = cov_b.to(torch::kFloat64) + eps * eye;
  auto sa = sym_sqrt(a);
  auto cross = sym_sqrt(torch::matmul(torch::matmul(sa, b), sa));
  double mean_term = (mu_a.to(torch::kFloat64) - mu_b.to(torch::kFloat64)).pow(2).sum().item<double>();
  double trace_term = (a.trace() + b.trace() - 2.0 * cross.trace()).item<double>();
  return std::max(0.0, mean_term + trace_term);
}

double feature_stats_distance(const torch::Tensor& set_a, const torch::Tensor& set_b) {
  if (set_a.dim() != 4 || set_b.dim() != 4 || set_a.size(0) < 2 || set_b.size(0) < 2)
    throw DimensionError("feature_stats_distance: each set needs at least two [3,R,R] images");
  auto [mu_a, cov_a] = gaussian_fit(embed_images(set_a));
  auto [mu_b, cov_b] = gaussian_fit(embed_images(set_b));
  // Average both argument orders so the result is exactly symmetric.
  return 0.5 * (frechet_distance(mu_a, cov_a, mu_b, cov_b) + frechet_distance(mu_b, cov_b, mu_a, cov_a));
}

double group_diversity(const std::vector<torch::Tensor>& groups) {
  if (groups.size() < 2) throw DimensionError("group_diversity: need at least two groups");
  for (auto& g : groups)
    if (!g.sizes().equals(groups.front().sizes())) throw DimensionError("group_diversity: group sizes differ");
  double sum = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    for (std::size_t j = i + 1; j < groups.size(); ++j) {
      auto diff = (groups[i].to(torch::kFloat64) - groups[j].to(torch::kFloat64)).flatten(1);
      sum += diff.pow(2).mean(1).sqrt().mean().item<double>();
      ++pairs;
    }
  }
  return sum / pairs;
}

}  // namespace proxysynth
