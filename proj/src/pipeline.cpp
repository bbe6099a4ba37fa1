#include "proxysynth/pipeline.hpp"

#include "proxysynth/errors.hpp"
#include "proxysynth/metrics.hpp"

namespace proxysynth {

namespace {

torch::Tensor front_of(Model& model, const std::vector<std::uint64_t>& seeds) {
  auto& g = model.generator;
  return g->generate_front(g->map_latent(sample_latents(seeds, model.config.gan.z_dim)));
}

// Mapper argmax for a batch of conditions ([B,R,R] data).
torch::Tensor proxies_for(Model& model, const ConditionRaster& c) {
  const auto& cfg = model.config;
  if (to_string(c.kind) != cfg.mapper.kind)
    throw ConfigError("condition kind '" + to_string(c.kind) + "' is not supported; the mapper was trained on '" +
                      cfg.mapper.kind + "'");
  return mapper_forward(model.mapper, c, cfg.mapper.classes, cfg.gan.image_res).argmax(1);
}

}  // namespace

ConditionRaster condition_from_png(const PngImage& png, ConditionKind kind, int res, int classes) {
  if (png.width != res || png.height != res)
    throw DimensionError("expected a " + std::to_string(res) + "x" + std::to_string(res) + " mask, got " +
                         std::to_string(png.width) + "x" + std::to_string(png.height));
  ConditionRaster c;
  c.kind = kind;
  if (kind == ConditionKind::segmentation) {
    c.data = png_to_labels(png, scene_class_palette());
    if (c.data.max().item<int64_t>() >= classes)
      throw LabelError("mask uses a class outside [0," + std::to_string(classes) + ")");
  } else {
    c.data = (png_to_image(png).mean(0) + 1.0) / 2.0;
  }
  return c;
}

Synthesis synthesize(Model& model, const ConditionRaster& condition, std::uint64_t style_seed) {
  model.require_stage(kStageMapper, "synthesize");
  torch::NoGradGuard guard;
  ConditionRaster c = condition;
  if (c.data.dim() == 2) c.data = c.data.unsqueeze(0);
  if (c.data.dim() != 3 || c.data.size(0) != 1) throw DimensionError("synthesize: expected a single [R,R] condition");
  auto proxy = proxies_for(model, c);
  auto features = model.rearranger->forward(proxy, front_of(model, {style_seed}));
  auto image = model.generator->generate_back(features);
  return {image[0], proxy[0], features[0]};
}

Synthesis exemplar(Model& model, std::uint64_t target_seed, std::uint64_t style_seed) {
  model.require_stage(kStageRearranger, "exemplar");
  torch::NoGradGuard guard;
  auto proxy = assign_hard(front_of(model, {target_seed}), model.cluster_model());
  auto features = model.rearranger->forward(proxy, front_of(model, {style_seed}));
  auto image = model.generator->generate_back(features);
  return {image[0], proxy[0], features[0]};
}

std::vector<std::uint64_t> eval_seeds(int n, std::uint64_t seed) {
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < n; ++i) seeds.push_back(derive_seed(seed, "eval", static_cast<std::uint64_t>(i)));
  return seeds;
}

double self_reconstruction_miou(Model& model, int n, std::uint64_t seed) {
  torch::NoGradGuard guard;
  const auto& clusters = model.cluster_model();
  auto f = front_of(model, eval_seeds(n, seed));
  auto m = assign_hard(f, clusters);
  return miou(assign_hard(model.rearranger->forward(m, f), clusters), m, clusters.k());
}

double cross_pair_miou(Model& model, int n, std::uint64_t seed) {
  torch::NoGradGuard guard;
  const auto& clusters = model.cluster_model();
  auto f_i = front_of(model, eval_seeds(n, seed));
  auto f_j = front_of(model, eval_seeds(n, derive_seed(seed, "style")));
  auto m = assign_hard(f_i, clusters);
  return miou(assign_hard(model.rearranger->forward(m, f_j), clusters), m, clusters.k());
}

double mapper_accuracy(Model& model, int n, std::uint64_t seed) {
  torch::NoGradGuard guard;
  const auto& cfg = model.config;
  auto pairs = mint_pairs(model.generator, model.cluster_model(), model.segnet, parse_condition_kind(cfg.mapper.kind),
                          cfg.mapper.stack_res, n, derive_seed(seed, "mapper-heldout"));
  return pixel_accuracy(proxies_for(model, pairs.conditions), pairs.proxies);
}

double cross_pair_fsd(Model& model, const ImageDataset& reals, int n, std::uint64_t seed) {
  torch::NoGradGuard guard;
  auto f_i = front_of(model, eval_seeds(n, seed));
  auto f_j = front_of(model, eval_seeds(n, derive_seed(seed, "style")));
  auto m = assign_hard(f_i, model.cluster_model());
  auto fakes = model.generator->generate_back(model.rearranger->forward(m, f_j));
  std::vector<std::size_t> idx;
  for (int i = 0; i < n; ++i) idx.push_back(static_cast<std::size_t>(i) % reals.size());
  return feature_stats_distance(fakes, reals.batch(idx));
}

double sample_fsd(Model& model, const ImageDataset& reals, int n, std::uint64_t seed) {
  torch::NoGradGuard guard;
  auto fakes = model.generator->forward(sample_latents(eval_seeds(n, seed), model.config.gan.z_dim));
  std::vector<std::size_t> idx;
  for (int i = 0; i < n; ++i) idx.push_back(static_cast<std::size_t>(i) % reals.size());
  return feature_stats_distance(fakes, reals.batch(idx));
}

nlohmann::json evaluate_model(Model& model, const ImageDataset& reals, int n, int groups, std::uint64_t seed) {
  model.require_stage(kStageMapper, "evaluate");
  if (n < 2 || groups < 2) throw ConfigError("evaluate needs at least two scenes and two style groups");
  torch::NoGradGuard guard;
  const auto& cfg = model.config;
  const int res = cfg.gan.image_res;
  const auto kind = parse_condition_kind(cfg.mapper.kind);

  SceneDataset scenes(static_cast<std::size_t>(n), derive_seed(seed, "eval-scenes"), res);
  std::vector<torch::Tensor> masks, images;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    auto s = scenes.scene(i);
    masks.push_back(s.mask);
    images.push_back(s.image);
  }
  auto gt = torch::stack(masks);
  ConditionRaster c{kind, gt};
  if (kind == ConditionKind::scribble) c.data = scribble_from_labels(gt);
  if (kind == ConditionKind::edge) c.data = edges_from_images(torch::stack(images));
  auto proxy = proxies_for(model, c);

  ConfusionMatrix cm(kSceneClasses);
  std::vector<torch::Tensor> renders;
  for (int gidx = 0; gidx < groups; ++gidx) {
    auto f = front_of(model, eval_seeds(n, derive_seed(seed, "eval-style", static_cast<std::uint64_t>(gidx))));
    auto out = model.generator->generate_back(model.rearranger->forward(proxy, f));
    cm.add(classify_by_palette(out), gt);
    renders.push_back(out);
  }
  std::vector<std::size_t> idx;
  for (int i = 0; i < n; ++i) idx.push_back(static_cast<std::size_t>(i) % reals.size());
  return {{"miou", cm.miou()},
          {"accuracy", cm.accuracy()},
          {"fsd", feature_stats_distance(renders.front(), reals.batch(idx))},
          {"diversity", group_diversity(renders)},
          {"scenes", n},
          {"groups", groups},
          {"kind", cfg.mapper.kind}};
}

}  // namespace proxysynth
