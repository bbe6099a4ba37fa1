// Command-line entry point for every stage, inference and the HTTP service.

#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "proxysynth/errors.hpp"
#include "proxysynth/model.hpp"
#include "proxysynth/pipeline.hpp"
#include "proxysynth/service.hpp"
#include "proxysynth/training.hpp"

using namespace proxysynth;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string checkpoint = "proxysynth.ckpt";
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON config file (defaults are built in)");
  app->add_option("--seed", c.seed, "Override the config seed");
  app->add_option("--checkpoint", c.checkpoint, "Checkpoint archive")->capture_default_str();
}

Config resolve_config(const Common& c) {
  Config cfg = c.config.empty() ? Config{} : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

Model open_checkpoint(const Common& c) {
  if (!fs::exists(c.checkpoint)) throw IoError("checkpoint '" + c.checkpoint + "' not found");
  std::optional<Config> cfg;
  if (!c.config.empty()) cfg = resolve_config(c);
  Model model = load_checkpoint(c.checkpoint, cfg ? &*cfg : nullptr);
  if (c.seed) model.config.seed = *c.seed;
  return model;
}

std::unique_ptr<ImageDataset> dataset_for(const Config& cfg) {
  return make_dataset(cfg.data.folder, static_cast<std::size_t>(cfg.data.scenes), cfg.data.seed, cfg.gan.image_res);
}

struct TrainFlags {
  bool resume = false;
  std::string log;
  int checkpoint_every = 0;
  int report_every = 100;
  int stop_at = -1;
};

void add_train_flags(CLI::App* app, TrainFlags& t) {
  app->add_flag("--resume", t.resume, "Continue an interrupted stage stored in the checkpoint");
  app->add_option("--log", t.log, "Append loss rows (step,name,value) to this CSV");
  app->add_option("--checkpoint-every", t.checkpoint_every, "Save a resumable checkpoint every N steps");
  app->add_option("--report-every", t.report_every, "Progress line every N steps (0 disables)")->capture_default_str();
  app->add_option("--stop-at", t.stop_at, "Stop before this step, leaving the stage resumable");
}

StageOptions stage_options(const Common& c, const TrainFlags& t) {
  StageOptions o;
  o.checkpoint = c.checkpoint;
  o.checkpoint_every = t.checkpoint_every;
  o.log_csv = t.log;
  o.stop_at = t.stop_at;
  o.report_every = t.report_every;
  return o;
}

// A stage may only continue where the checkpoint says it stopped.
void check_resume(const Model& model, const char* stage, bool resume) {
  const bool pending = model.progress.is_object() && model.progress.value("stage", "") == stage;
  if (resume && !pending) throw ConfigError(std::string("--resume: the checkpoint has no interrupted ") + stage);
  if (!resume && pending)
    throw ConfigError(std::string("the checkpoint holds an interrupted ") + stage + "; pass --resume to continue it");
}

torch::Tensor annotate_by_palette(const torch::Tensor& image) { return classify_by_palette(image); }

void run_stage(Model& model, const std::string& stage, const ImageDataset& reals, const Common& c,
               const TrainFlags& t) {
  auto opts = stage_options(c, t);
  if (stage == kStageGan) {
    pretrain_gan(model, reals, opts);
  } else if (stage == kStageClusters) {
    fit_stage_clusters(model);
    save_checkpoint(model, c.checkpoint);
  } else if (stage == kStageRearranger) {
    train_rearranger(model, reals, opts);
  } else if (stage == kStageMapper) {
    if (!model.has_stage(kStageSegnet)) fit_stage_segnet(model, annotate_by_palette);
    train_mapper(model, reals, opts);
  } else {
    throw ConfigError("unknown stage '" + stage + "'");
  }
}

void write_image(const torch::Tensor& image, const std::string& path) { write_png(image_to_png(image), path); }

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  CLI::App app{"Semantic image synthesis by rearranging generator feature maps"};
  app.require_subcommand(1);

  // toydata generate
  auto* toydata = app.add_subcommand("toydata", "Procedural shape scenes");
  toydata->require_subcommand(1);
  auto* generate = toydata->add_subcommand("generate", "Write scenes and their class masks as PNGs");
  std::size_t n_scenes = 100;
  std::uint64_t scene_seed = 1000;
  int scene_res = 64;
  std::string scene_out;
  generate->add_option("--n", n_scenes, "Number of scenes")->capture_default_str();
  generate->add_option("--seed", scene_seed, "First scene seed")->capture_default_str();
  generate->add_option("--res", scene_res, "Image resolution")->capture_default_str();
  generate->add_option("--out", scene_out, "Output directory")->required();

  Common common;
  TrainFlags train_flags;
  std::vector<CLI::App*> with_common;
  struct StageCommand {
    const char* name;
    const char* stage;
    const char* help;
  };
  const StageCommand stage_commands[] = {
      {"pretrain-gan", kStageGan, "Train the unconditional generator and discriminator"},
      {"fit-clusters", kStageClusters, "Fit K-means proxy clusters on G1 features"},
      {"train-rearranger", kStageRearranger, "Train the feature rearranger"},
      {"train-mapper", kStageMapper, "Fit the one-shot SegNet and train the semantic mapper"},
  };
  std::vector<std::pair<CLI::App*, const char*>> stage_apps;
  for (auto& sc : stage_commands) {
    auto* sub = app.add_subcommand(sc.name, sc.help);
    add_common(sub, common);
    add_train_flags(sub, train_flags);
    stage_apps.emplace_back(sub, sc.stage);
  }

  auto* train = app.add_subcommand("train", "Run stages in order");
  add_common(train, common);
  add_train_flags(train, train_flags);
  std::string train_stage = "all";
  train->add_option("--stage", train_stage, "all | pretrain-gan | fit-clusters | train-rearranger | train-mapper")
      ->capture_default_str();

  auto* synth = app.add_subcommand("synthesize", "Render an image from a mask and a style seed");
  add_common(synth, common);
  std::string mask_path, out_path, proxy_out, kind_name;
  std::uint64_t style_seed = 0, target_seed = 0;
  synth->add_option("--mask", mask_path, "Condition PNG (segmentation, scribble or edge)")->required();
  synth->add_option("--style-seed", style_seed, "Latent seed supplying the style")->required();
  synth->add_option("--out", out_path, "Output PNG")->required();
  synth->add_option("--proxy-out", proxy_out, "Also write the proxy mask as an indexed PNG");
  synth->add_option("--kind", kind_name, "Condition kind (defaults to the mapper's)");

  auto* exemplar_cmd = app.add_subcommand("exemplar", "Render the layout of one latent in the style of another");
  add_common(exemplar_cmd, common);
  exemplar_cmd->add_option("--target-seed", target_seed, "Latent seed supplying the layout")->required();
  exemplar_cmd->add_option("--style-seed", style_seed, "Latent seed supplying the style")->required();
  exemplar_cmd->add_option("--out", out_path, "Output PNG")->required();
  exemplar_cmd->add_option("--proxy-out", proxy_out, "Also write the target proxy mask");

  auto* evaluate = app.add_subcommand(
      "evaluate", "Print a JSON report (proxy mIoU after the rearranger stage; mask-driven metrics after the mapper stage)");
  add_common(evaluate, common);
  int eval_n = 64, eval_groups = 10;
  std::uint64_t eval_seed = 77;
  evaluate->add_option("--n", eval_n, "Scenes per group")->capture_default_str();
  evaluate->add_option("--groups", eval_groups, "Style groups for diversity")->capture_default_str();
  evaluate->add_option("--eval-seed", eval_seed, "Seed of the evaluation scenes")->capture_default_str();

  auto* serve = app.add_subcommand("serve", "HTTP inference service under /v1");
  add_common(serve, common);
  std::string host = "127.0.0.1";
  int port = 8080, threads = 8;
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--threads", threads)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) {
      export_scenes(n_scenes, scene_seed, scene_res, scene_out);
      std::cout << "wrote " << n_scenes << " scenes to " << scene_out << "\n";
      return 0;
    }
    for (auto& [sub, stage] : stage_apps) {
      if (!sub->parsed()) continue;
      Model model = (std::string(stage) == kStageGan && !train_flags.resume) ? Model(resolve_config(common))
                                                                            : open_checkpoint(common);
      check_resume(model, stage, train_flags.resume);
      auto reals = dataset_for(model.config);
      run_stage(model, stage, *reals, common, train_flags);
      std::cout << stage << " done; checkpoint " << common.checkpoint << "\n";
      return 0;
    }
    if (train->parsed()) {
      const std::vector<std::string> order = {kStageGan, kStageClusters, kStageRearranger, kStageMapper};
      std::vector<std::string> todo = order;
      if (train_stage != "all") {
        if (std::find(order.begin(), order.end(), train_stage) == order.end())
          throw ConfigError("unknown stage '" + train_stage + "'");
        todo = {train_stage};
      }
      const bool fresh = todo.front() == kStageGan && !train_flags.resume;
      Model model = fresh ? Model(resolve_config(common)) : open_checkpoint(common);
      auto reals = dataset_for(model.config);
      for (auto& stage : todo) {
        const bool pending = model.progress.is_object() && model.progress.value("stage", "") == stage;
        if (train_stage == "all" && model.has_stage(stage) && !pending) continue;
        check_resume(model, stage.c_str(), train_flags.resume && pending);
        run_stage(model, stage, *reals, common, train_flags);
        if (model.progress.is_object()) break;  // stopped early via --stop-at
      }
      std::cout << "checkpoint " << common.checkpoint << "\n";
      return 0;
    }
    if (synth->parsed()) {
      Model model = open_checkpoint(common);
      auto kind = parse_condition_kind(kind_name.empty() ? model.config.mapper.kind : kind_name);
      auto condition =
          condition_from_png(read_png(mask_path), kind, model.config.gan.image_res, model.config.mapper.classes);
      auto result = synthesize(model, condition, style_seed);
      write_image(result.image, out_path);
      if (!proxy_out.empty()) write_png(labels_to_png(result.proxy, proxy_palette()), proxy_out);
      return 0;
    }
    if (exemplar_cmd->parsed()) {
      Model model = open_checkpoint(common);
      auto result = exemplar(model, target_seed, style_seed);
      write_image(result.image, out_path);
      if (!proxy_out.empty()) write_png(labels_to_png(result.proxy, proxy_palette()), proxy_out);
      return 0;
    }
    if (evaluate->parsed()) {
      Model model = open_checkpoint(common);
      auto reals = dataset_for(model.config);
      model.require_stage(kStageRearranger, "evaluate");
      nlohmann::json report = nlohmann::json::object();
      if (model.has_stage(kStageMapper)) {
        report = evaluate_model(model, *reals, eval_n, eval_groups, eval_seed);
        report["mapper_accuracy"] = mapper_accuracy(model, eval_n, eval_seed);
      }
      report["self_miou"] = self_reconstruction_miou(model, eval_n, eval_seed);
      report["cross_miou"] = cross_pair_miou(model, eval_n, eval_seed);
      report["checkpoint"] = common.checkpoint;
      report["checkpoint_id"] = model.checkpoint_id;
      std::cout << report.dump(2) << "\n";
      return 0;
    }
    if (serve->parsed()) {
      InferenceService service(threads);
      int bound = service.bind(host, port);
      std::thread server([&] { service.run(); });
      std::cerr << "listening on " << host << ":" << bound << "\n";
      try {
        service.load(std::make_shared<Model>(open_checkpoint(common)));
      } catch (...) {
        service.stop();
        server.join();
        throw;
      }
      std::cerr << "checkpoint " << common.checkpoint << " loaded\n";
      server.join();
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
