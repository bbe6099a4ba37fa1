#include "proxysynth/training.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <utility>

#include "proxysynth/errors.hpp"
#include "proxysynth/losses.hpp"

namespace proxysynth {

std::vector<double> LossLog::series(const std::string& name) const {
  std::vector<double> out;
  for (auto& r : records_)
    if (r.name == name) out.push_back(r.value);
  return out;
}

double LossLog::at(int step, const std::string& name) const {
  for (auto& r : records_)
    if (r.step == step && r.name == name) return r.value;
  return std::numeric_limits<double>::quiet_NaN();
}

bool LossLog::has(int step, const std::string& name) const {
  for (auto& r : records_)
    if (r.step == step && r.name == name) return true;
  return false;
}

void LossLog::append_csv(const std::string& path) const {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot write loss log '" + path + "'");
  if (fresh) out << "step,name,value\n";
  out.precision(17);
  for (auto& r : records_) out << r.step << ',' << r.name << ',' << r.value << '\n';
}

void check_finite(double value, const char* stage, const char* what, int step) {
  if (!std::isfinite(value))
    throw DivergenceError(std::string(stage) + ": " + what + " is not finite at step " + std::to_string(step));
}

namespace {

using Clock = std::chrono::steady_clock;

// Turns gradients off for a module's parameters for the guard's lifetime.
class Freeze {
 public:
  explicit Freeze(torch::nn::Module& m) : params_(m.parameters()) {
    for (auto& p : params_) p.requires_grad_(false);
  }
  ~Freeze() {
    for (auto& p : params_) p.requires_grad_(true);
  }
  Freeze(const Freeze&) = delete;
  Freeze& operator=(const Freeze&) = delete;

 private:
  std::vector<torch::Tensor> params_;
};

// Adam over one module with named, exportable moments.
class StageOptimizer {
 public:
  StageOptimizer(std::string key, torch::nn::Module& module, double lr, const GanConfig& g) : key_(std::move(key)) {
    std::vector<torch::Tensor> ps;
    for (auto& p : module.named_parameters(true)) {
      params_.emplace_back(p.key(), p.value());
      ps.push_back(p.value());
    }
    adam_ = std::make_unique<torch::optim::Adam>(
        ps, torch::optim::AdamOptions(lr).betas(std::make_tuple(g.beta1, g.beta2)).eps(1e-8));
  }

  void zero_grad() { adam_->zero_grad(); }
  void step() { adam_->step(); }

  void export_state(std::map<std::string, torch::Tensor>& out) const {
    for (auto& [name, p] : params_) {
      auto it = adam_->state().find(p.unsafeGetTensorImpl());
      if (it == adam_->state().end()) continue;
      auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
      const auto base = key_ + "." + name;
      out[base + ".exp_avg"] = s.exp_avg().clone();
      out[base + ".exp_avg_sq"] = s.exp_avg_sq().clone();
      out[base + ".step"] = torch::tensor(s.step(), torch::kInt64);
    }
  }

  void import_state(const std::map<std::string, torch::Tensor>& in) {
    for (auto& [name, p] : params_) {
      const auto base = key_ + "." + name;
      auto it = in.find(base + ".exp_avg");
      if (it == in.end()) continue;
      auto s = std::make_unique<torch::optim::AdamParamState>();
      s->exp_avg(it->second.clone());
      s->exp_avg_sq(in.at(base + ".exp_avg_sq").clone());
      s->step(in.at(base + ".step").item<int64_t>());
      adam_->state()[p.unsafeGetTensorImpl()] = std::move(s);
    }
  }

 private:
  std::string key_;
  std::vector<std::pair<std::string, torch::Tensor>> params_;
  std::unique_ptr<torch::optim::Adam> adam_;
};

// Resume, snapshot and completion bookkeeping shared by the step loops.
class StageRun {
 public:
  StageRun(Model& model, const char* stage, const StageOptions& opts, int total)
      : model_(model), stage_(stage), opts_(opts), total_(total), started_(Clock::now()) {}

  void add(StageOptimizer& opt) { optimizers_.push_back(&opt); }

  // First step to run; restores optimizer moments when resuming this stage.
  int start() {
    if (model_.progress.is_object() && model_.progress.value("stage", "") == stage_) {
      for (auto* o : optimizers_) o->import_state(model_.optimizer_state);
      first_ = model_.progress.at("step").get<int>();
    }
    return first_;
  }

  bool first_run() const { return first_ == 0; }

  // Returns false when the loop must stop before `step`.
  bool before(int step) {
    if (opts_.stop_at >= 0 && step >= opts_.stop_at) {
      snapshot(step);
      return false;
    }
    return true;
  }

  void after(int step) {
    if (opts_.report_every > 0 && (step + 1) % opts_.report_every == 0) {
      double secs = std::chrono::duration<double>(Clock::now() - started_).count();
      std::cerr << stage_ << ": step " << step + 1 << "/" << total_ << " (" << static_cast<int>(secs) << " s)";
      for (auto it = log.records().rbegin(); it != log.records().rend() && it->step == step; ++it)
        std::cerr << ' ' << it->name << '=' << it->value;
      std::cerr << '\n';
    }
    if (opts_.on_step) opts_.on_step(step, model_);
    if (opts_.checkpoint_every > 0 && (step + 1) % opts_.checkpoint_every == 0 && step + 1 < total_) snapshot(step + 1);
  }

  void finish() {
    model_.progress = nullptr;
    model_.optimizer_state.clear();
    model_.mark_stage(stage_);
    flush();
    if (!opts_.checkpoint.empty()) save_checkpoint(model_, opts_.checkpoint);
  }

  LossLog log;

 private:
  void snapshot(int next_step) {
    model_.progress = {{"stage", stage_}, {"step", next_step}};
    model_.optimizer_state.clear();
    for (auto* o : optimizers_) o->export_state(model_.optimizer_state);
    flush();
    if (!opts_.checkpoint.empty()) save_checkpoint(model_, opts_.checkpoint);
  }

  void flush() {
    if (opts_.log_csv.empty()) return;
    LossLog pending;
    for (std::size_t i = flushed_; i < log.records().size(); ++i) {
      auto& r = log.records()[i];
      pending.add(r.step, r.name, r.value);
    }
    pending.append_csv(opts_.log_csv);
    flushed_ = log.records().size();
  }

  Model& model_;
  std::string stage_;
  const StageOptions& opts_;
  int total_;
  int first_ = 0;
  std::size_t flushed_ = 0;
  Clock::time_point started_;
  std::vector<StageOptimizer*> optimizers_;
};

torch::Tensor real_batch(const ImageDataset& reals, int batch, torch::Generator& gen) {
  if (reals.size() == 0) throw ConfigError("training needs a non-empty image dataset");
  auto idx = torch::randint(0, static_cast<int64_t>(reals.size()), {batch}, gen, torch::kInt64);
  std::vector<std::size_t> indices;
  for (int i = 0; i < batch; ++i) indices.push_back(static_cast<std::size_t>(idx[i].item<int64_t>()));
  return reals.batch(indices);
}

torch::Tensor front_features(Generator& g, const torch::Tensor& z) {
  torch::NoGradGuard guard;
  return g->generate_front(g->map_latent(z));
}

void expect_unchanged(const std::string& before, const torch::nn::Module& module, const char* what, const char* stage) {
  if (module_digest(module) != before) throw Error(std::string(stage) + ": frozen " + what + " weights changed");
}

double value_of(const torch::Tensor& t) { return t.detach().item<double>(); }

// Latents screened for the one annotated sample.
constexpr int kAnnotationCandidates = 64;

// Picks the candidate whose proxy mask covers the most clusters (ties: higher
// histogram entropy, then lower index), so the single annotation is likely to
// show every part type. Uses proxies only, no labels.
torch::Tensor annotation_latent(Model& model) {
  torch::NoGradGuard guard;
  const auto& cfg = model.config;
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < kAnnotationCandidates; ++i) seeds.push_back(derive_seed(cfg.seed, "annotation", i));
  auto z = sample_latents(seeds, cfg.gan.z_dim);
  auto proxies = assign_hard(front_features(model.generator, z), model.cluster_model());
  const int k = cfg.cluster.k;
  const double min_share = 1.0 / 64.0;
  int best = 0;
  std::pair<int, double> best_score{-1, 0.0};
  for (int i = 0; i < kAnnotationCandidates; ++i) {
    auto share = torch::bincount(proxies[i].flatten(), {}, k).to(torch::kFloat64) / proxies[i].numel();
    const int covered = (share >= min_share).sum().item<int>();
    const double entropy = -(share * torch::log(share.clamp_min(1e-12))).sum().item<double>();
    if (std::make_pair(covered, entropy) > best_score) {
      best_score = {covered, entropy};
      best = i;
    }
  }
  return z.slice(0, best, best + 1);
}

}  // namespace

LossLog pretrain_gan(Model& model, const ImageDataset& reals, const StageOptions& opts) {
  const auto& cfg = model.config;
  const auto& gc = cfg.gan;
  auto& g = model.generator;
  auto& d = model.discriminator;
  model.train(true);

  StageOptimizer opt_g(std::string(kStageGan) + ".g", *g, gc.lr, gc);
  StageOptimizer opt_d(std::string(kStageGan) + ".d", *d, gc.lr, gc);
  StageRun run(model, kStageGan, opts, gc.steps);
  run.add(opt_g);
  run.add(opt_d);

  for (int s = run.start(); s < gc.steps; ++s) {
    if (!run.before(s)) return run.log;
    auto gen = make_rng(derive_seed(cfg.seed, kStageGan, static_cast<std::uint64_t>(s)));
    auto x_real = real_batch(reals, gc.batch, gen);
    auto z_d = torch::randn({gc.batch, gc.z_dim}, gen);
    auto z_g = torch::randn({gc.batch, gc.z_dim}, gen);

    torch::Tensor fake;
    {
      torch::NoGradGuard guard;
      fake = g->forward(z_d);
    }
    auto d_adv = adv_d(d->forward(x_real), d->forward(fake));
    auto r1 = r1_penalty(d, x_real);
    auto d_total = d_adv + gc.r1_weight * r1;
    opt_d.zero_grad();
    d_total.backward();
    opt_d.step();

    torch::Tensor g_adv;
    {
      Freeze frozen(*d);
      g_adv = adv_g_nonsat(d->forward(g->forward(z_g)));
      opt_g.zero_grad();
      g_adv.backward();
      opt_g.step();
    }

    const double vals[] = {value_of(d_adv), value_of(r1), value_of(d_total), value_of(g_adv)};
    const char* names[] = {"d_adv", "r1", "d_total", "g_adv"};
    for (int i = 0; i < 4; ++i) {
      check_finite(vals[i], kStageGan, names[i], s);
      run.log.add(s, names[i], vals[i]);
    }
    run.after(s);
  }
  run.finish();
  model.train(false);
  return run.log;
}

void fit_stage_clusters(Model& model) {
  model.require_stage(kStageGan, kStageClusters);
  const auto& cfg = model.config;
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < cfg.cluster.samples; ++i) seeds.push_back(derive_seed(cfg.seed, kStageClusters, i));
  auto f = front_features(model.generator, sample_latents(seeds, cfg.gan.z_dim));
  KMeansOptions km{cfg.cluster.max_iter, cfg.cluster.n_init};
  model.clusters = fit_clusters(f, cfg.cluster.k, derive_seed(cfg.seed, "kmeans"), cfg.cluster.tau, km,
                                cfg.cluster.normalize);
  model.mark_stage(kStageClusters);
}

LossLog train_rearranger(Model& model, const ImageDataset& reals, const StageOptions& opts) {
  model.require_stage(kStageClusters, kStageRearranger);
  const auto& cfg = model.config;
  const auto& rc = cfg.rearranger;
  const auto& w = cfg.losses;
  const auto& clusters = model.cluster_model();
  const int batch = rc.batch, z_dim = cfg.gan.z_dim;
  const int total = rc.phase1_steps + rc.phase2_steps;
  auto& g = model.generator;
  auto& d = model.discriminator;
  auto& r = model.rearranger;

  model.train(true);
  const auto g1_digest = module_digest(*g->g1);
  const auto g2_digest = module_digest(*g->g2);
  Freeze frozen_g1(*g->g1);
  std::unique_ptr<Freeze> frozen_g2;
  if (!rc.finetune_g2) frozen_g2 = std::make_unique<Freeze>(*g->g2);

  StageOptimizer opt_r(std::string(kStageRearranger) + ".rearranger", *r, rc.lr, cfg.gan);
  StageOptimizer opt_d(std::string(kStageRearranger) + ".d", *d, rc.lr, cfg.gan);
  std::unique_ptr<StageOptimizer> opt_g2;
  StageRun run(model, kStageRearranger, opts, total);
  run.add(opt_r);
  run.add(opt_d);
  if (rc.finetune_g2) {
    opt_g2 = std::make_unique<StageOptimizer>(std::string(kStageRearranger) + ".g2", *g->g2, rc.lr, cfg.gan);
    run.add(*opt_g2);
  }

  for (int s = run.start(); s < total; ++s) {
    if (!run.before(s)) return run.log;
    auto gen = make_rng(derive_seed(cfg.seed, kStageRearranger, static_cast<std::uint64_t>(s)));
    const bool self_pair = s % 2 == 0;
    const int phase = s < rc.phase1_steps ? 1 : 2;
    const bool adv_active = phase == 2 || s % rc.adv_every == 0;

    auto f_i = front_features(g, torch::randn({batch, z_dim}, gen));
    auto m_i = assign_hard(f_i, clusters);
    torch::Tensor mask, source, target;
    if (self_pair) {
      // Mirror the (mask, target) pair while keys and values keep the original
      // layout, so copying the source straight through is not a solution.
      auto flip = torch::rand({batch}, gen) < rc.flip_prob;
      mask = torch::where(flip.view({batch, 1, 1}), hflip(m_i), m_i);
      target = torch::where(flip.view({batch, 1, 1, 1}), hflip(f_i), f_i);
      source = f_i;
    } else {
      mask = m_i;
      source = front_features(g, torch::randn({batch, z_dim}, gen));
    }

    auto f_prime = r->forward(mask, source);
    RearrangerLosses<torch::Tensor> parts;
    parts.mask = loss_mask(f_prime, mask, clusters);
    if (self_pair) parts.self = loss_self(f_prime, target, w.self_reduction);
    torch::Tensor fake;
    if (adv_active) {
      Freeze frozen_d(*d);
      fake = g->generate_back(f_prime);
      parts.adv = adv_g_nonsat(d->forward(fake));
    }
    auto loss = total_rearranger(parts, w);
    opt_r.zero_grad();
    if (opt_g2) opt_g2->zero_grad();
    loss.backward();
    opt_r.step();
    if (opt_g2) opt_g2->step();

    RearrangerLosses<double> logged;
    logged.mask = value_of(*parts.mask);
    if (parts.self) logged.self = value_of(*parts.self);
    if (parts.adv) logged.adv = value_of(*parts.adv);
    if (adv_active) {
      auto x_real = real_batch(reals, batch, gen);
      auto d_adv = adv_d(d->forward(x_real), d->forward(fake.detach()));
      auto r1 = r1_penalty(d, x_real);
      opt_d.zero_grad();
      (d_adv + w.r1 * r1).backward();
      opt_d.step();
      logged.r1 = value_of(r1);
      run.log.add(s, "d_adv", value_of(d_adv));
      check_finite(value_of(d_adv), kStageRearranger, "d_adv", s);
    }

    run.log.add(s, "pairing", self_pair ? 0.0 : 1.0);
    run.log.add(s, "adv_active", adv_active ? 1.0 : 0.0);
    const std::pair<const char*, const std::optional<double>*> named[] = {
        {"adv", &logged.adv}, {"self", &logged.self}, {"mask", &logged.mask}, {"r1", &logged.r1}};
    for (auto& [name, v] : named) {
      if (!*v) continue;
      check_finite(**v, kStageRearranger, name, s);
      run.log.add(s, name, **v);
    }
    run.log.add(s, "total", total_rearranger(logged, w));
    run.after(s);
  }

  expect_unchanged(g1_digest, *g->g1, "G1", kStageRearranger);
  if (!rc.finetune_g2) expect_unchanged(g2_digest, *g->g2, "G2", kStageRearranger);
  model.train(false);
  run.finish();
  return run.log;
}

void fit_stage_segnet(Model& model, const Annotator& annotate) {
  model.require_stage(kStageClusters, kStageSegnet);
  const auto& cfg = model.config;
  AnnotatedSample sample;
  {
    torch::NoGradGuard guard;
    auto z = annotation_latent(model);
    auto w = model.generator->map_latent(z);
    sample.stack = build_feature_stack(model.generator, w, cfg.mapper.stack_res);
    auto labels = annotate(model.generator->generate_back(model.generator->generate_front(w)));
    if (labels.dim() != 3 || labels.size(0) != 1) throw DimensionError("annotator must return [1,R,R] labels");
    sample.labels = labels[0];
  }
  auto net = segnet_fit({sample}, cfg.mapper.segnet_hidden, cfg.mapper.classes, cfg.mapper.segnet_epochs,
                        derive_seed(cfg.seed, kStageSegnet));
  torch::NoGradGuard guard;
  auto fitted = net->named_parameters(true);
  for (auto& p : model.segnet->named_parameters(true)) p.value().copy_(fitted[p.key()]);
  model.segnet->eval();
  model.mark_stage(kStageSegnet);
}

LossLog train_mapper(Model& model, const ImageDataset& reals, const StageOptions& opts) {
  model.require_stage(kStageRearranger, kStageMapper);
  model.require_stage(kStageSegnet, kStageMapper);
  const auto& cfg = model.config;
  const auto& mc = cfg.mapper;
  const auto& w = cfg.losses;
  const auto& clusters = model.cluster_model();
  const int batch = mc.batch, k = cfg.cluster.k;
  const int total = mc.phase1_steps + mc.phase2_steps;
  const auto kind = parse_condition_kind(mc.kind);
  auto& g = model.generator;
  auto& r = model.rearranger;
  auto& md = model.mapper_discriminator;

  model.train(false);
  model.mapper->train(true);
  md->train(true);
  const auto g_digest = module_digest(*g);
  const auto r_digest = module_digest(*r);
  const auto s_digest = module_digest(*model.segnet);
  Freeze frozen_g(*g), frozen_r(*r), frozen_s(*model.segnet), frozen_d(*model.discriminator);

  StageOptimizer opt_m(std::string(kStageMapper) + ".mapper", *model.mapper, mc.lr, cfg.gan);
  StageOptimizer opt_d(std::string(kStageMapper) + ".mapper_d", *md, mc.lr, cfg.gan);
  StageRun run(model, kStageMapper, opts, total);
  run.add(opt_m);
  run.add(opt_d);
  const int first = run.start();
  if (run.first_run()) {
    // The mapper-stage discriminator starts from the pretrained one.
    torch::NoGradGuard guard;
    auto src = model.discriminator->named_parameters(true);
    for (auto& p : md->named_parameters(true)) p.value().copy_(src[p.key()]);
  }

  for (int s = first; s < total; ++s) {
    if (!run.before(s)) return run.log;
    auto gen = make_rng(derive_seed(cfg.seed, kStageMapper, static_cast<std::uint64_t>(s)));
    const int phase = s < mc.phase1_steps ? 1 : 2;
    auto pairs = mint_pairs(g, clusters, model.segnet, kind, mc.stack_res, batch,
                            derive_seed(cfg.seed, "mapper-pairs", static_cast<std::uint64_t>(s)));
    auto logits = mapper_forward(model.mapper, pairs.conditions, mc.classes, cfg.gan.image_res);
    MapperLosses<torch::Tensor> parts;
    parts.rec = loss_rec_mapper(logits, pairs.proxies);
    torch::Tensor fake;
    if (phase == 2) {
      // Straight-through argmax: one-hot forward, softmax gradient backward.
      auto probs = torch::softmax(logits, 1);
      auto hard = torch::one_hot(logits.argmax(1), k).permute({0, 3, 1, 2}).to(probs.dtype());
      auto st = hard + probs - probs.detach();
      auto f_j = front_features(g, torch::randn({batch, cfg.gan.z_dim}, gen));
      Freeze frozen_md(*md);
      fake = g->generate_back(r->forward_probs(st, f_j));
      parts.adv = adv_g_nonsat(md->forward(fake));
    }
    auto loss = total_mapper(parts, w, phase);
    opt_m.zero_grad();
    loss.backward();
    opt_m.step();

    MapperLosses<double> logged;
    logged.rec = value_of(*parts.rec);
    if (parts.adv) logged.adv = value_of(*parts.adv);
    if (phase == 2) {
      auto x_real = real_batch(reals, batch, gen);
      auto d_adv = adv_d(md->forward(x_real), md->forward(fake.detach()));
      auto r1 = r1_penalty(md, x_real);
      opt_d.zero_grad();
      (d_adv + w.r1 * r1).backward();
      opt_d.step();
      logged.r1 = value_of(r1);
      check_finite(value_of(d_adv), kStageMapper, "d_adv", s);
      run.log.add(s, "d_adv", value_of(d_adv));
    }
    const std::pair<const char*, const std::optional<double>*> named[] = {
        {"adv", &logged.adv}, {"rec", &logged.rec}, {"r1", &logged.r1}};
    for (auto& [name, v] : named) {
      if (!*v) continue;
      check_finite(**v, kStageMapper, name, s);
      run.log.add(s, name, **v);
    }
    run.log.add(s, "lambda_rec", rec_weight(w, phase));
    run.log.add(s, "total", total_mapper(logged, w, phase));
    run.after(s);
  }

  expect_unchanged(g_digest, *g, "generator", kStageMapper);
  expect_unchanged(r_digest, *r, "rearranger", kStageMapper);
  expect_unchanged(s_digest, *model.segnet, "segnet", kStageMapper);
  model.train(false);
  run.finish();
  return run.log;
}

}  // namespace proxysynth
