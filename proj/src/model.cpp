#include "proxysynth/model.hpp"

#include <algorithm>
#include <cstdio>

#include <zlib.h>

#include "proxysynth/checkpoint.hpp"
#include "proxysynth/errors.hpp"

namespace proxysynth {

using nlohmann::json;

std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag, std::uint64_t index) {
  // FNV-1a over the tag, then splitmix64 finalization of the combination.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) h = (h ^ c) * 0x100000001b3ULL;
  std::uint64_t x = seed ^ h ^ (index * 0x9e3779b97f4a7c15ULL);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Model::Model(const Config& cfg) : config(cfg) {
  config.validate();
  auto seeded = [&](const char* tag) { torch::manual_seed(derive_seed(config.seed, tag)); };
  seeded("generator");
  generator = Generator(config.gan);
  seeded("discriminator");
  discriminator = Discriminator(config.gan);
  seeded("rearranger");
  rearranger = Rearranger(config.rearranger, config.cluster.k, config.gan.channels, config.gan.proxy_res);
  seeded("segnet");
  segnet = SegNet(feature_stack_channels(config.gan), config.mapper.segnet_hidden, config.mapper.classes);
  seeded("mapper");
  mapper = Mapper(config.mapper.input_channels(), config.cluster.k, config.mapper.base_width, config.gan.image_res,
                  config.gan.proxy_res);
  seeded("mapper_discriminator");
  mapper_discriminator = Discriminator(config.gan);
  train(false);
}

bool Model::has_stage(const std::string& name) const {
  return std::find(stages.begin(), stages.end(), name) != stages.end();
}

void Model::mark_stage(const std::string& name) {
  if (!has_stage(name)) stages.push_back(name);
}

void Model::require_stage(const std::string& name, const std::string& stage) const {
  if (!has_stage(name)) throw ConfigError(stage + " requires a checkpoint that has completed " + name);
}

const ClusterModel& Model::cluster_model() const {
  if (!clusters) throw ConfigError("model has no fitted clusters");
  return *clusters;
}

void Model::train(bool on) {
  generator->train(on);
  discriminator->train(on);
  rearranger->train(on);
  segnet->train(on);
  mapper->train(on);
  mapper_discriminator->train(on);
}

namespace {

struct Part {
  const char* prefix;
  const torch::nn::Module* module;
};

std::vector<Part> parts_of(const Model& m) {
  // Generator parameters are already named g1.* / g2.*.
  return {{"", m.generator.get()},
          {"d.", m.discriminator.get()},
          {"rearranger.", m.rearranger.get()},
          {"segnet.", m.segnet.get()},
          {"mapper.", m.mapper.get()},
          {"mapper_d.", m.mapper_discriminator.get()}};
}

std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (auto& p : module.named_parameters(true)) out.emplace_back(p.key(), p.value());
  for (auto& b : module.named_buffers(true)) out.emplace_back(b.key(), b.value());
  return out;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  Archive archive;
  for (auto& part : parts_of(model))
    for (auto& [name, t] : named_state(*part.module)) archive.tensors[part.prefix + name] = t;
  json clusters = nullptr;
  if (model.clusters) {
    const auto& c = *model.clusters;
    archive.tensors["cluster.centroids"] = c.centroids;
    if (c.normalizes()) {
      archive.tensors["cluster.channel_mean"] = c.channel_mean;
      archive.tensors["cluster.channel_std"] = c.channel_std;
    }
    clusters = {{"k", c.k()}, {"tau", c.tau}, {"fitted_on", c.fitted_on}};
  }
  for (auto& [name, t] : model.optimizer_state) archive.tensors["opt." + name] = t;
  archive.meta = {{"config", model.config},
                  {"architecture", architecture_of(model.config)},
                  {"stages", model.stages},
                  {"progress", model.progress},
                  {"clusters", clusters}};
  save_archive(archive, path);
}

Model load_checkpoint(const std::string& path, const Config* expected) {
  Archive archive = load_archive(path);
  Config stored;
  try {
    stored = archive.meta.at("config").get<Config>();
  } catch (const json::exception& e) {
    throw CorruptArchiveError("checkpoint '" + path + "' has an unreadable config block: " + e.what());
  }
  Config config = stored;
  if (expected) {
    auto have = architecture_of(stored), want = architecture_of(*expected);
    if (have != want) {
      std::string diff;
      for (auto& [key, value] : want.items())
        if (have.value(key, json()) != value)
          diff += (diff.empty() ? "" : ", ") + key + " (checkpoint " + have.value(key, json()).dump() + ", config " +
                  value.dump() + ")";
      throw ConfigMismatchError("checkpoint '" + path + "' does not match the config: " + diff);
    }
    config = *expected;
  }

  Model model(config);
  torch::NoGradGuard guard;
  for (auto& part : parts_of(model)) {
    for (auto& [name, t] : named_state(*part.module)) {
      auto key = part.prefix + name;
      auto it = archive.tensors.find(key);
      if (it == archive.tensors.end()) throw ConfigMismatchError("checkpoint '" + path + "' lacks tensor " + key);
      if (!it->second.sizes().equals(t.sizes()))
        throw ConfigMismatchError("checkpoint '" + path + "': tensor " + key + " has an unexpected shape");
      t.copy_(it->second);
    }
  }

  auto& meta_clusters = archive.meta["clusters"];
  if (!meta_clusters.is_null()) {
    ClusterModel c;
    c.centroids = archive.tensors.at("cluster.centroids");
    c.tau = meta_clusters.at("tau").get<double>();
    c.fitted_on = meta_clusters.at("fitted_on").get<std::int64_t>();
    if (archive.tensors.count("cluster.channel_mean")) {
      c.channel_mean = archive.tensors.at("cluster.channel_mean");
      c.channel_std = archive.tensors.at("cluster.channel_std");
    }
    if (c.k() != config.cluster.k || c.channels() != config.gan.channels)
      throw ConfigMismatchError("checkpoint '" + path + "' holds " + std::to_string(c.k()) +
                                " clusters but the config asks for " + std::to_string(config.cluster.k));
    model.clusters = c;
  }
  for (auto& [name, t] : archive.tensors)
    if (name.rfind("opt.", 0) == 0) model.optimizer_state[name.substr(4)] = t;
  model.stages = archive.meta.value("stages", std::vector<std::string>{});
  model.progress = archive.meta.value("progress", json());
  model.checkpoint_id = archive_digest(path);
  return model;
}

std::string module_digest(const torch::nn::Module& module) {
  uLong crc = crc32(0L, Z_NULL, 0);
  for (auto& [name, t] : named_state(module)) {
    crc = crc32(crc, reinterpret_cast<const Bytef*>(name.data()), static_cast<uInt>(name.size()));
    auto c = t.detach().contiguous();
    crc = crc32(crc, static_cast<const Bytef*>(c.data_ptr()), static_cast<uInt>(c.numel() * c.element_size()));
  }
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08lx", crc);
  return buf;
}

}  // namespace proxysynth
