#include "doctest_torch.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "proxysynth/errors.hpp"
#include "proxysynth/losses.hpp"
#include "proxysynth/semantic_mapper.hpp"
#include "proxysynth/training.hpp"

using namespace proxysynth;

namespace {

const SceneDataset& reals() {
  static SceneDataset data(16, 500, 32);
  return data;
}

Annotator palette_annotator() {
  return [](const torch::Tensor& image) { return classify_by_palette(image); };
}

// A model that has finished GAN pretraining and cluster fitting.
Model clustered_model(const Config& cfg) {
  Model m(cfg);
  pretrain_gan(m, reals());
  fit_stage_clusters(m);
  return m;
}

std::vector<std::string> digests(const Model& m) {
  return {module_digest(*m.generator), module_digest(*m.discriminator), module_digest(*m.rearranger),
          module_digest(*m.segnet),    module_digest(*m.mapper),        module_digest(*m.mapper_discriminator)};
}

bool same_logs(const LossLog& a, const LossLog& b) {
  if (a.records().size() != b.records().size()) return false;
  for (std::size_t i = 0; i < a.records().size(); ++i) {
    const auto &x = a.records()[i], &y = b.records()[i];
    if (x.step != y.step || x.name != y.name || x.value != y.value) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("GAN pretraining is bitwise deterministic for a seed") {
  auto cfg = testing::tiny_config();
  cfg.gan.steps = 10;
  Model a(cfg), b(cfg);
  auto la = pretrain_gan(a, reals()), lb = pretrain_gan(b, reals());
  CHECK(same_logs(la, lb));
  CHECK(digests(a) == digests(b));
  CHECK(la.series("g_adv").size() == 10);
  for (int s = 0; s < 10; ++s)
    CHECK(la.at(s, "d_total") == doctest::Approx(la.at(s, "d_adv") + cfg.losses.r1 * la.at(s, "r1")).epsilon(1e-6));
  CHECK(a.has_stage(kStageGan));

  auto other = cfg;
  other.seed = cfg.seed + 1;
  Model c(other);
  CHECK_FALSE(same_logs(la, pretrain_gan(c, reals())));
}

TEST_CASE("rearranger schedule, loss bookkeeping and frozen generator") {
  auto cfg = testing::tiny_config();
  cfg.rearranger.phase1_steps = 12;
  cfg.rearranger.phase2_steps = 4;
  auto m = clustered_model(cfg);
  const auto g1 = module_digest(*m.generator->g1), g2 = module_digest(*m.generator->g2);
  const auto r_before = module_digest(*m.rearranger);
  auto log = train_rearranger(m, reals());
  CHECK(module_digest(*m.generator->g1) == g1);
  CHECK(module_digest(*m.generator->g2) == g2);
  CHECK(module_digest(*m.rearranger) != r_before);
  CHECK(m.has_stage(kStageRearranger));

  const auto& w = cfg.losses;
  for (int s = 0; s < 16; ++s) {
    INFO("step " << s);
    // Self pairs on even steps, cross pairs on odd steps.
    CHECK(log.at(s, "pairing") == (s % 2 == 0 ? 0.0 : 1.0));
    CHECK(log.has(s, "self") == (s % 2 == 0));
    CHECK(log.has(s, "mask"));
    // Phase 1 uses the adversarial term only every adv_every steps; phase 2 always.
    const bool adv = s >= 12 || s % cfg.rearranger.adv_every == 0;
    CHECK(log.at(s, "adv_active") == (adv ? 1.0 : 0.0));
    CHECK(log.has(s, "adv") == adv);
    CHECK(log.has(s, "r1") == adv);
    auto term = [&](const char* name) { return log.has(s, name) ? log.at(s, name) : 0.0; };
    double expected = term("adv") + w.self * term("self") + w.mask * term("mask") + w.r1 * term("r1");
    CHECK(std::abs(log.at(s, "total") - expected) <= 1e-6 * std::max(1.0, std::abs(expected)));
  }
}

TEST_CASE("an interrupted rearranger stage resumes to the same weights") {
  auto cfg = testing::tiny_config();
  cfg.rearranger.phase1_steps = 10;
  cfg.rearranger.phase2_steps = 2;
  auto base = clustered_model(cfg);
  auto path = testing::temp_path("base.ckpt");
  save_checkpoint(base, path);

  auto whole = load_checkpoint(path, &cfg);
  auto full_log = train_rearranger(whole, reals());

  auto part_path = testing::temp_path("partial.ckpt");
  auto first = load_checkpoint(path, &cfg);
  StageOptions stop;
  stop.checkpoint = part_path;
  stop.stop_at = 7;
  auto head = train_rearranger(first, reals(), stop);
  CHECK_FALSE(first.has_stage(kStageRearranger));

  auto resumed = load_checkpoint(part_path, &cfg);
  REQUIRE(resumed.progress.is_object());
  CHECK(resumed.progress.at("step") == 7);
  auto tail = train_rearranger(resumed, reals());
  CHECK(resumed.has_stage(kStageRearranger));
  CHECK(digests(resumed) == digests(whole));
  CHECK(resumed.progress.is_null());
  CHECK(resumed.optimizer_state.empty());
  for (int s = 7; s < 12; ++s) CHECK(tail.at(s, "total") == full_log.at(s, "total"));
  for (int s = 0; s < 7; ++s) CHECK(head.at(s, "total") == full_log.at(s, "total"));
}

TEST_CASE("mapper stage switches reconstruction weight, keeps other networks frozen and uses one annotation") {
  auto cfg = testing::tiny_config();
  cfg.rearranger.phase1_steps = 4;
  cfg.rearranger.phase2_steps = 0;
  cfg.mapper.phase1_steps = 4;
  cfg.mapper.phase2_steps = 2;
  auto m = clustered_model(cfg);
  train_rearranger(m, reals());
  CHECK_THROWS_AS(train_mapper(m, reals()), ConfigError);

  annotation_audit().reset();
  fit_stage_segnet(m, palette_annotator());
  CHECK(annotation_audit().count() == 1);

  const auto g = module_digest(*m.generator), r = module_digest(*m.rearranger), s = module_digest(*m.segnet);
  const auto d = module_digest(*m.discriminator);
  auto log = train_mapper(m, reals());
  CHECK(annotation_audit().count() == 1);
  CHECK(module_digest(*m.generator) == g);
  CHECK(module_digest(*m.rearranger) == r);
  CHECK(module_digest(*m.segnet) == s);
  CHECK(module_digest(*m.discriminator) == d);

  for (int step = 0; step < 6; ++step) {
    INFO("step " << step);
    const bool p2 = step >= 4;
    CHECK(log.at(step, "lambda_rec") == (p2 ? 100.0 : 10.0));
    CHECK(log.has(step, "adv") == p2);
    auto term = [&](const char* name) { return log.has(step, name) ? log.at(step, name) : 0.0; };
    double expected = (p2 ? cfg.losses.adv * term("adv") : 0.0) + log.at(step, "lambda_rec") * term("rec") +
                      cfg.losses.r1 * term("r1");
    CHECK(std::abs(log.at(step, "total") - expected) <= 1e-6 * std::max(1.0, std::abs(expected)));
  }
  CHECK(m.has_stage(kStageMapper));
  annotation_audit().reset();
}

TEST_CASE("stages refuse to run out of order") {
  auto cfg = testing::tiny_config();
  Model m(cfg);
  CHECK_THROWS_AS(train_rearranger(m, reals()), ConfigError);
  CHECK_THROWS_AS(fit_stage_segnet(m, palette_annotator()), ConfigError);
  CHECK_THROWS_AS(train_mapper(m, reals()), ConfigError);
}

TEST_CASE("non-finite losses raise DivergenceError") {
  CHECK_THROWS_AS(check_finite(std::nan(""), "stage", "loss", 3), DivergenceError);
  CHECK_THROWS_AS(check_finite(INFINITY, "stage", "loss", 3), DivergenceError);
  CHECK_NOTHROW(check_finite(1.0, "stage", "loss", 3));

  auto cfg = testing::tiny_config();
  cfg.rearranger.phase1_steps = 2;
  cfg.rearranger.phase2_steps = 0;
  auto m = clustered_model(cfg);
  {
    torch::NoGradGuard guard;
    m.rearranger->output->weight.fill_(std::nan(""));
  }
  CHECK_THROWS_AS(train_rearranger(m, reals()), DivergenceError);
}

TEST_CASE("loss logs append csv rows") {
  LossLog log;
  log.add(0, "a", 1.5);
  log.add(1, "a", 0.25);
  CHECK(log.series("a") == std::vector<double>{1.5, 0.25});
  CHECK(std::isnan(log.at(2, "a")));
  auto path = testing::temp_path("log.csv");
  std::filesystem::remove(path);
  log.append_csv(path);
  log.append_csv(path);
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  CHECK(header == "step,name,value");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 4);
}
