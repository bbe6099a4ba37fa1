#include "proxysynth/losses.hpp"

#include "proxysynth/errors.hpp"

namespace proxysynth {

namespace {

void check_labels(const torch::Tensor& target, int64_t k, const char* what) {
  if (target.numel() == 0) return;
  if (target.min().item<int64_t>() < 0 || target.max().item<int64_t>() >= k)
    throw LabelError(std::string(what) + ": target label outside [0," + std::to_string(k) + ")");
}

torch::Tensor pixel_cross_entropy(const torch::Tensor& logits, const torch::Tensor& target, const char* what) {
  if (logits.dim() != 4 || target.dim() != 3 || logits.size(0) != target.size(0) || logits.size(2) != target.size(1) ||
      logits.size(3) != target.size(2))
    throw DimensionError(std::string(what) + ": logits [B,K,H,W] and targets [B,H,W] disagree");
  check_labels(target, logits.size(1), what);
  auto logp = torch::log_softmax(logits, 1);
  return -logp.gather(1, target.to(torch::kInt64).unsqueeze(1)).mean();
}

}  // namespace

torch::Tensor loss_self(const torch::Tensor& rearranged, const torch::Tensor& original, const std::string& reduction) {
  if (!rearranged.sizes().equals(original.sizes())) throw DimensionError("loss_self: shape mismatch");
  auto diff = (rearranged - original).flatten(1);
  if (reduction == "mean_sq") return diff.pow(2).mean();
  if (reduction != "sum_l2") throw ConfigError("loss_self: unknown reduction '" + reduction + "'");
  // Guarded norm: the gradient of sqrt at 0 is taken as 0.
  auto sq = diff.pow(2).sum(1);
  auto safe = torch::where(sq > 0, sq, torch::ones_like(sq));
  return torch::where(sq > 0, safe.sqrt(), torch::zeros_like(sq)).sum();
}

torch::Tensor loss_mask(const torch::Tensor& rearranged, const torch::Tensor& target, const ClusterModel& model) {
  return pixel_cross_entropy(cluster_logits(rearranged, model), target, "loss_mask");
}

torch::Tensor adv_g_nonsat(const torch::Tensor& fake_scores) { return torch::softplus(-fake_scores).mean(); }

torch::Tensor adv_d(const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
  return torch::softplus(-real_scores).mean() + torch::softplus(fake_scores).mean();
}

torch::Tensor r1_penalty(const std::function<torch::Tensor(const torch::Tensor&)>& discriminator,
                         const torch::Tensor& reals) {
  auto x = reals.detach().requires_grad_(true);
  auto scores = discriminator(x);
  // A discriminator that ignores its input has zero input gradient.
  if (!scores.requires_grad()) return torch::zeros({}, reals.options());
  auto grad = torch::autograd::grad({scores.sum()}, {x}, {}, /*retain_graph=*/true, /*create_graph=*/true,
                                    /*allow_unused=*/true)[0];
  if (!grad.defined()) return torch::zeros({}, reals.options());
  return 0.5 * grad.pow(2).flatten(1).sum(1).mean();
}

torch::Tensor r1_penalty(Discriminator& d, const torch::Tensor& reals) {
  return r1_penalty([&](const torch::Tensor& x) { return d->forward(x); }, reals);
}

torch::Tensor loss_rec_mapper(const torch::Tensor& logits, const torch::Tensor& target) {
  return pixel_cross_entropy(logits, target, "loss_rec_mapper");
}

}  // namespace proxysynth
