#pragma once

#include <functional>
#include <optional>
#include <string>
#include <type_traits>

#include <torch/torch.h>

#include "proxysynth/cluster.hpp"
#include "proxysynth/config.hpp"
#include "proxysynth/gan.hpp"

namespace proxysynth {

// Self-reconstruction: sum over the batch of ||f' - f||_2 per sample
// ("sum_l2"), or the mean squared element difference ("mean_sq").
torch::Tensor loss_self(const torch::Tensor& rearranged, const torch::Tensor& original,
                        const std::string& reduction = "sum_l2");

// Mean per-pixel cross-entropy between the soft cluster assignment of the
// rearranged features and hard proxy targets. Centroids receive no gradient.
torch::Tensor loss_mask(const torch::Tensor& rearranged, const torch::Tensor& target, const ClusterModel& model);

// mean softplus(-score)
torch::Tensor adv_g_nonsat(const torch::Tensor& fake_scores);
// mean softplus(-real) + mean softplus(fake)
torch::Tensor adv_d(const torch::Tensor& real_scores, const torch::Tensor& fake_scores);

// 0.5 * mean_b ||grad_x D(x_b)||^2. The graph is kept so the penalty can be
// differentiated w.r.t. the discriminator weights.
torch::Tensor r1_penalty(const std::function<torch::Tensor(const torch::Tensor&)>& discriminator,
                         const torch::Tensor& reals);
torch::Tensor r1_penalty(Discriminator& d, const torch::Tensor& reals);

// Mean per-pixel cross-entropy of mapper logits [B,K,R,R] against proxy labels [B,R,R].
torch::Tensor loss_rec_mapper(const torch::Tensor& logits, const torch::Tensor& target);

template <typename T>
T zero_loss() {
  if constexpr (std::is_arithmetic_v<T>) {
    return T(0);
  } else {
    return torch::zeros({});
  }
}

// Loss components of one step; absent terms do not contribute.
template <typename T>
struct RearrangerLosses {
  std::optional<T> adv, self, mask, r1;
};

template <typename T>
struct MapperLosses {
  std::optional<T> adv, rec, r1;
};

// L_adv + l_self L_self + l_mask L_mask + l_R1 L_R1
template <typename T>
T total_rearranger(const RearrangerLosses<T>& c, const LossWeights& w) {
  T total = zero_loss<T>();
  if (c.adv) total = total + *c.adv;
  if (c.self) total = total + *c.self * w.self;
  if (c.mask) total = total + *c.mask * w.mask;
  if (c.r1) total = total + *c.r1 * w.r1;
  return total;
}

inline double rec_weight(const LossWeights& w, int phase) { return phase == 1 ? w.rec_phase1 : w.rec_phase2; }
inline double mapper_adv_weight(const LossWeights& w, int phase) { return phase == 1 ? 0.0 : w.adv; }

// l_adv L_adv + l_rec L_rec + l_R1 L_R1, with l_rec and l_adv chosen by phase.
template <typename T>
T total_mapper(const MapperLosses<T>& c, const LossWeights& w, int phase) {
  T total = zero_loss<T>();
  if (c.adv) total = total + *c.adv * mapper_adv_weight(w, phase);
  if (c.rec) total = total + *c.rec * rec_weight(w, phase);
  if (c.r1) total = total + *c.r1 * w.r1;
  return total;
}

}  // namespace proxysynth
