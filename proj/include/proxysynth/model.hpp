#pragma once

// Every trainable piece of the pipeline plus stage bookkeeping, and its
// checkpoint archive mapping.
//
// Tensor names in the archive:
//   g1.*, g2.*           generator halves (e.g. g1.block0.conv0.weight)
//   d.*                  image discriminator
//   rearranger.*         rearranger parameters and buffers
//   segnet.*, mapper.*   one-shot SegNet and semantic mapper
//   mapper_d.*           mapper-stage discriminator
//   cluster.centroids    [K, C]; cluster.channel_mean / cluster.channel_std when normalizing
//   opt.<stage>.*        optimizer moments of an interrupted stage

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "proxysynth/cluster.hpp"
#include "proxysynth/config.hpp"
#include "proxysynth/gan.hpp"
#include "proxysynth/rearranger.hpp"
#include "proxysynth/semantic_mapper.hpp"

namespace proxysynth {

inline constexpr const char* kStageGan = "pretrain-gan";
inline constexpr const char* kStageClusters = "fit-clusters";
inline constexpr const char* kStageRearranger = "train-rearranger";
inline constexpr const char* kStageSegnet = "fit-segnet";
inline constexpr const char* kStageMapper = "train-mapper";

// Deterministic 64-bit mix of a seed with a tag and an index.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag, std::uint64_t index = 0);

struct Model {
  explicit Model(const Config& config);

  Config config;
  Generator generator{nullptr};
  Discriminator discriminator{nullptr};
  std::optional<ClusterModel> clusters;
  Rearranger rearranger{nullptr};
  SegNet segnet{nullptr};
  Mapper mapper{nullptr};
  Discriminator mapper_discriminator{nullptr};

  std::vector<std::string> stages;  // completed, in order
  // Interrupted stage: {"stage": name, "step": next step}; null when none.
  nlohmann::json progress;
  // Optimizer moments of the interrupted stage, keyed without the "opt." prefix.
  std::map<std::string, torch::Tensor> optimizer_state;
  // archive_digest of the file this model was loaded from; empty for fresh models.
  std::string checkpoint_id;

  bool has_stage(const std::string& name) const;
  void mark_stage(const std::string& name);
  // Throws ConfigError naming `stage` when a prerequisite stage is missing.
  void require_stage(const std::string& name, const std::string& stage) const;
  const ClusterModel& cluster_model() const;

  void train(bool on);
};

void save_checkpoint(const Model& model, const std::string& path);

// Loads a checkpoint. With `expected`, the architecture fields of the stored
// config must match (ConfigMismatchError otherwise) and the schedule fields of
// `expected` replace the stored ones.
Model load_checkpoint(const std::string& path, const Config* expected = nullptr);

// Hex digest over the named parameters of a module (bitwise).
std::string module_digest(const torch::nn::Module& module);

}  // namespace proxysynth
