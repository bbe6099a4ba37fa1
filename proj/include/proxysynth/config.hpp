#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

namespace proxysynth {

struct GanConfig {
  int z_dim = 64;
  int w_dim = 64;
  int mapping_layers = 4;
  double mapping_lr_mul = 0.01;
  int channels = 64;    // C, width of the feature map at the proxy resolution
  int proxy_res = 16;   // R_p
  int image_res = 64;   // R_img
  // Synthesis widths per resolution. The proxy resolution always uses `channels`.
  std::map<int, int> widths = {{4, 64}, {8, 64}, {32, 32}, {64, 16}};
  std::map<int, int> d_widths = {{4, 64}, {8, 64}, {16, 64}, {32, 32}, {64, 16}};
  double lr = 0.002;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double r1_weight = 10.0;
  int batch = 16;
  int steps = 3000;

  int width_at(int res) const;
  int d_width_at(int res) const;
  void validate() const;
};

struct ClusterConfig {
  int k = 8;
  double tau = 1.0;
  int samples = 256;
  int max_iter = 300;
  int n_init = 20;
  bool normalize = false;  // per-channel standardization before distances

  void validate() const;
};

struct RearrangerConfig {
  int attn_dim = 64;    // d
  int embed_dim = 128;  // d_f
  int block_layers = 4;
  bool pe_on_keys = false;
  bool finetune_g2 = false;
  int batch = 8;
  int phase1_steps = 10000;
  int phase2_steps = 4000;
  int adv_every = 5;
  double flip_prob = 0.5;
  double lr = 0.002;

  void validate() const;
};

struct LossWeights {
  double self = 10.0;
  double mask = 1.0;
  double r1 = 10.0;
  double adv = 1.0;
  double rec_phase1 = 10.0;
  double rec_phase2 = 100.0;
  // "sum_l2": sum over the batch of the L2 norm of each difference tensor.
  // "mean_sq": mean squared element difference.
  std::string self_reduction = "sum_l2";

  void validate() const;
};

struct MapperConfig {
  std::string kind = "segmentation";  // segmentation | scribble | edge
  int classes = 4;                    // L
  int segnet_hidden = 64;
  int segnet_epochs = 400;
  int stack_res = 32;  // R_s
  int base_width = 32;
  int batch = 8;
  int phase1_steps = 5000;
  int phase2_steps = 1000;
  double lr = 0.002;

  int input_channels() const;
  void validate() const;
};

struct DataConfig {
  int scenes = 2000;
  std::uint64_t seed = 1000;
  std::string folder;  // optional folder of real images; procedural scenes when empty
};

struct Config {
  std::uint64_t seed = 0;
  GanConfig gan;
  ClusterConfig cluster;
  RearrangerConfig rearranger;
  LossWeights losses;
  MapperConfig mapper;
  DataConfig data;

  void validate() const;
};

void to_json(nlohmann::json& j, const Config& c);
void from_json(const nlohmann::json& j, Config& c);

Config load_config(const std::string& path);
void save_config(const Config& config, const std::string& path);

// Fields that fix tensor shapes in a checkpoint. Two configs with equal
// architecture fingerprints can exchange weights.
nlohmann::json architecture_of(const Config& config);

}  // namespace proxysynth
