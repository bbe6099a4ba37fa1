#include "doctest_torch.hpp"

#include "helpers.hpp"
#include "proxysynth/errors.hpp"
#include "proxysynth/metrics.hpp"

using namespace proxysynth;

TEST_CASE("miou hand counts") {
  auto gt = torch::tensor({{0, 0}, {1, 1}}), pred = torch::tensor({{0, 1}, {1, 1}});
  CHECK(miou(pred, gt, 2) == doctest::Approx(7.0 / 12.0).epsilon(1e-12));
  CHECK(miou(gt, gt, 2) == 1.0);
  CHECK(miou(torch::zeros({3, 3}, torch::kInt64), torch::ones({3, 3}, torch::kInt64), 2) == 0.0);
  CHECK_THROWS_AS(miou(pred, torch::zeros({3, 2}, torch::kInt64), 2), DimensionError);
  CHECK_THROWS_AS(miou(pred + 2, gt, 2), LabelError);
}

TEST_CASE("miou skips absent classes and is invariant under relabeling") {
  torch::manual_seed(1);
  auto gt = torch::randint(0, 3, {16, 16}), pred = torch::randint(0, 3, {16, 16});
  // Classes 3..5 never occur, so widening the universe changes nothing.
  CHECK(miou(pred, gt, 3) == miou(pred, gt, 6));
  auto perm = torch::tensor({2, 0, 1});
  CHECK(miou(perm.index({pred}), perm.index({gt}), 3) == doctest::Approx(miou(pred, gt, 3)).epsilon(1e-12));
  double v = miou(pred, gt, 3);
  CHECK(v >= 0.0);
  CHECK(v <= 1.0);
}

TEST_CASE("pixel accuracy counts matches") {
  auto a = torch::tensor({0, 1, 1, 0});
  CHECK(pixel_accuracy(a, a) == 1.0);
  CHECK(pixel_accuracy(1 - a, a) == 0.0);
  CHECK(pixel_accuracy(torch::tensor({0, 1, 1, 1}), a) == 0.75);
  CHECK_THROWS_AS(pixel_accuracy(a, torch::zeros({5}, torch::kInt64)), DimensionError);
}

TEST_CASE("confusion matrix accumulates across calls") {
  ConfusionMatrix cm(2);
  cm.add(torch::tensor({0, 1}), torch::tensor({0, 0}));
  cm.add(torch::tensor({1, 1}), torch::tensor({1, 1}));
  CHECK(cm.total() == 4);
  CHECK(cm.at(0, 1) == 1);
  CHECK(cm.at(1, 1) == 2);
  CHECK(cm.accuracy() == 0.75);
  CHECK(cm.miou() == doctest::Approx(7.0 / 12.0).epsilon(1e-12));
}

TEST_CASE("frechet distance closed form") {
  auto mu = torch::zeros({2}, torch::kFloat64), eye = torch::eye(2, torch::kFloat64);
  CHECK(frechet_distance(mu, eye, mu, eye) == doctest::Approx(0.0).epsilon(1e-9));
  // ||mu||^2 plus trace(1 + 4 - 2*2) per axis.
  auto mu_b = torch::tensor({3.0, 4.0}, torch::kFloat64);
  CHECK(frechet_distance(mu, eye, mu_b, 4 * eye, 0.0) == doctest::Approx(25.0 + 2.0).epsilon(1e-9));
}

TEST_CASE("feature stats distance identity, symmetry and noise monotonicity") {
  torch::manual_seed(2);
  auto a = torch::rand({24, 3, 32, 32}) * 2 - 1;
  auto b = torch::rand({24, 3, 32, 32}) * 2 - 1;
  CHECK(std::abs(feature_stats_distance(a, a)) < 1e-6);
  CHECK(feature_stats_distance(a, b) == doctest::Approx(feature_stats_distance(b, a)).epsilon(1e-6));
  CHECK(feature_stats_distance(a, b) >= 0.0);

  auto noise = torch::randn({24, 3, 32, 32});
  double prev = 0.0;
  for (double sigma : {0.1, 0.2, 0.4}) {
    double d = feature_stats_distance(a, a + sigma * noise);
    CHECK(d > prev);
    prev = d;
  }
  CHECK_THROWS_AS(feature_stats_distance(a.slice(0, 0, 1), b), DimensionError);
}

TEST_CASE("embedder is a fixed function") {
  auto x = torch::rand({2, 3, 32, 32});
  auto e = embed_images(x);
  CHECK(e.sizes() == torch::IntArrayRef{2, 128});
  CHECK(torch::equal(e, embed_images(x)));
}

TEST_CASE("group diversity closed forms") {
  auto zeros = torch::zeros({3, 3, 8, 8});
  CHECK(group_diversity({zeros, zeros, zeros}) == 0.0);
  CHECK(group_diversity({zeros, zeros + 1}) == doctest::Approx(1.0).epsilon(1e-12));

  torch::manual_seed(3);
  std::vector<torch::Tensor> groups;
  for (int i = 0; i < 4; ++i) groups.push_back(torch::randn({3, 3, 8, 8}));
  double d = group_diversity(groups);
  CHECK(d > 0.0);
  std::vector<torch::Tensor> reversed(groups.rbegin(), groups.rend());
  CHECK(group_diversity(reversed) == doctest::Approx(d).epsilon(1e-9));
  CHECK_THROWS_AS(group_diversity({zeros, torch::zeros({2, 3, 8, 8})}), DimensionError);
}
