#pragma once

// The four training stages: GAN pretraining, cluster fitting, rearranger
// training, and (one-shot SegNet then) mapper training. Every step draws its
// randomness from derive_seed(config.seed, stage, step), so an interrupted
// stage resumed from its checkpoint replays the same sequence.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "proxysynth/model.hpp"
#include "proxysynth/toydata.hpp"

namespace proxysynth {

struct LossRecord {
  int step;
  std::string name;
  double value;
};

class LossLog {
 public:
  void add(int step, const std::string& name, double value) { records_.push_back({step, name, value}); }
  const std::vector<LossRecord>& records() const { return records_; }
  // Values of `name` in step order.
  std::vector<double> series(const std::string& name) const;
  // Value of `name` at `step`; NaN when absent.
  double at(int step, const std::string& name) const;
  bool has(int step, const std::string& name) const;
  // Appends "step,name,value" rows, writing the header when the file is new.
  void append_csv(const std::string& path) const;

 private:
  std::vector<LossRecord> records_;
};

struct StageOptions {
  std::string checkpoint;    // written when the stage ends (and every `checkpoint_every` steps)
  int checkpoint_every = 0;  // 0: only at the end
  std::string log_csv;       // loss rows are appended here when set
  int stop_at = -1;          // stop before this global step, leaving the stage resumable
  int report_every = 0;      // progress lines on stderr; 0 disables
  // Called after every completed step with the global step index.
  std::function<void(int, Model&)> on_step;
};

// Thrown-through check: every value finite, else DivergenceError naming the step.
void check_finite(double value, const char* stage, const char* what, int step);

// Non-saturating GAN with R1 on every discriminator step.
// Logs d_adv, r1, d_total, g_adv.
LossLog pretrain_gan(Model& model, const ImageDataset& reals, const StageOptions& opts = {});

// K-means over G1 features of `cluster.samples` latents.
void fit_stage_clusters(Model& model);

// Rearranger training with frozen G1/G2. Even steps pair (m_i, f_i) with a
// joint hflip of the mask/target pair, odd steps pair (m_i, f_j).
// Logs adv, self, mask, r1, total, d_adv, pairing (0 self, 1 cross), adv_active.
LossLog train_rearranger(Model& model, const ImageDataset& reals, const StageOptions& opts = {});

// One-shot SegNet: a single generated sample labeled by `annotate`
// ([1,3,R,R] image -> [1,R,R] labels). The sample is the candidate latent
// whose proxy mask covers the most clusters, so clusters must be fitted.
using Annotator = std::function<torch::Tensor(const torch::Tensor&)>;
void fit_stage_segnet(Model& model, const Annotator& annotate);

// Mapper training on online minted pairs; phase 2 adds the adversarial path
// through a straight-through argmax. Logs rec, adv, r1, total, d_adv, lambda_rec.
LossLog train_mapper(Model& model, const ImageDataset& reals, const StageOptions& opts = {});

}  // namespace proxysynth
