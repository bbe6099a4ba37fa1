#include "doctest_torch.hpp"

#include "helpers.hpp"
#include "proxysynth/errors.hpp"
#include "proxysynth/losses.hpp"

using namespace proxysynth;

TEST_CASE("loss_self is zero on identical maps and the batch-summed L2 otherwise") {
  auto f = torch::randn({1, 3, 4, 4}, torch::kFloat64);
  CHECK(loss_self(f, f).item<double>() == 0.0);
  CHECK(loss_self(f + 1, f).item<double>() == doctest::Approx(std::sqrt(48.0)).epsilon(1e-12));
  auto two = torch::randn({2, 3, 4, 4}, torch::kFloat64);
  CHECK(loss_self(two + 1, two).item<double>() == doctest::Approx(2 * std::sqrt(48.0)).epsilon(1e-12));
  CHECK(loss_self(f + 0.5, f, "mean_sq").item<double>() == doctest::Approx(0.25).epsilon(1e-12));
  CHECK_THROWS_AS(loss_self(f, torch::randn({1, 3, 4, 5})), DimensionError);
  CHECK_THROWS_AS(loss_self(f, f, "l1"), ConfigError);

  // The gradient at f' == f is defined and zero.
  auto x = f.clone().requires_grad_(true);
  loss_self(x, f).backward();
  CHECK(x.grad().abs().max().item<double>() == 0.0);
}

TEST_CASE("loss_self gradient matches central differences") {
  torch::manual_seed(1);
  for (int trial = 0; trial < 10; ++trial) {
    auto base = torch::randn({2, 3, 4, 4}, torch::kFloat64);
    auto x = torch::randn({2, 3, 4, 4}, torch::kFloat64);
    CHECK(testing::fd_gradient_error([&](const torch::Tensor& v) { return loss_self(v, base); }, x, 10, trial) < 1e-4);
  }
}

TEST_CASE("loss_mask hand-evaluated cross-entropies") {
  ClusterModel m;
  m.tau = 1.0;
  const double d = std::sqrt(std::log(9.0));
  m.centroids = torch::tensor({{0.f, 0.f}, {static_cast<float>(d), 0.f}});
  // Features sit exactly at the target centroid; the other is at D^2/tau = ln 9.
  auto f = torch::zeros({1, 2, 2, 2}, torch::kFloat64);
  f.select(1, 0).index_put_({torch::indexing::Slice(), 1}, d);
  auto target = torch::tensor({{{0, 0}, {1, 1}}}, torch::kInt64);
  CHECK(loss_mask(f, target, m).item<double>() == doctest::Approx(std::log(10.0 / 9.0)).epsilon(1e-6));

  auto mid = torch::full({1, 2, 1, 1}, 0.0, torch::kFloat64);
  mid[0][0] = d / 2;
  CHECK(loss_mask(mid, torch::zeros({1, 1, 1}, torch::kInt64), m).item<double>() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-6));
  CHECK_THROWS_AS(loss_mask(mid, torch::full({1, 1, 1}, 2, torch::kInt64), m), LabelError);
}

TEST_CASE("loss_mask is nonnegative and leaves centroids without gradient") {
  torch::manual_seed(2);
  ClusterModel m;
  m.centroids = torch::randn({4, 3}).requires_grad_(true);
  for (int trial = 0; trial < 1000; ++trial) {
    auto f = torch::randn({1, 3, 2, 2});
    auto t = torch::randint(0, 4, {1, 2, 2});
    REQUIRE(loss_mask(f, t, m).item<double>() >= 0.0);
  }
  auto f = torch::randn({1, 3, 2, 2}, torch::kFloat64).requires_grad_(true);
  loss_mask(f, torch::randint(0, 4, {1, 2, 2}), m).backward();
  CHECK(f.grad().defined());
  CHECK_FALSE(m.centroids.grad().defined());
}

TEST_CASE("loss_mask gradient matches central differences") {
  torch::manual_seed(3);
  ClusterModel m;
  m.centroids = torch::randn({3, 4});
  m.tau = 2.0;
  for (int trial = 0; trial < 10; ++trial) {
    auto t = torch::randint(0, 3, {2, 3, 3});
    auto x = torch::randn({2, 4, 3, 3}, torch::kFloat64);
    CHECK(testing::fd_gradient_error([&](const torch::Tensor& v) { return loss_mask(v, t, m); }, x, 10, trial) < 1e-4);
  }
}

TEST_CASE("non-saturating generator loss closed forms and monotone decay") {
  auto at = [](double s) { return adv_g_nonsat(torch::tensor({s}, torch::kFloat64)).item<double>(); };
  CHECK(at(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(at(std::log(3.0)) == doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-12));
  double prev = at(-10.0);
  for (double s = -9.5; s <= 40.0; s += 0.5) {
    double cur = at(s);
    CHECK(cur < prev);
    CHECK(cur >= 0.0);
    prev = cur;
  }
  CHECK(at(40.0) < 1e-15);
  torch::manual_seed(4);
  for (int trial = 0; trial < 5; ++trial)
    CHECK(testing::fd_gradient_error([](const torch::Tensor& v) { return adv_g_nonsat(v); },
                                     torch::randn({8}, torch::kFloat64), 8, trial) < 1e-4);
}

TEST_CASE("discriminator loss closed forms and monotone separation") {
  auto at = [](double r, double f) {
    return adv_d(torch::tensor({r}, torch::kFloat64), torch::tensor({f}, torch::kFloat64)).item<double>();
  };
  CHECK(at(0, 0) == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
  CHECK(at(std::log(3.0), std::log(3.0)) == doctest::Approx(std::log(4.0 / 3.0) + std::log(4.0)).epsilon(1e-12));
  CHECK(at(std::log(3.0), std::log(3.0)) == doctest::Approx(1.674).epsilon(1e-3));
  double prev = at(0, 0);
  for (double s = 0.5; s <= 40.0; s += 0.5) {
    double cur = at(s, -s);
    CHECK(cur < prev);
    prev = cur;
  }
  CHECK(at(40, -40) < 1e-15);
}

TEST_CASE("R1 penalty on linear and constant discriminators") {
  torch::manual_seed(5);
  for (int trial = 0; trial < 5; ++trial) {
    auto w = torch::randn({3, 4, 4}, torch::kFloat64);
    auto linear = [&](const torch::Tensor& x) { return (x * w).flatten(1).sum(1); };
    auto reals = torch::randn({6, 3, 4, 4}, torch::kFloat64);
    double expected = 0.5 * w.pow(2).sum().item<double>();
    CHECK(std::abs(r1_penalty(linear, reals).item<double>() - expected) < 1e-10);
  }
  auto constant = [](const torch::Tensor& x) { return torch::ones({x.size(0)}, x.options()) * 3.0; };
  CHECK(r1_penalty(constant, torch::randn({2, 3, 4, 4})).item<double>() == 0.0);

  // The penalty is differentiable with respect to discriminator weights.
  auto w = torch::randn({3, 4, 4}, torch::kFloat64).requires_grad_(true);
  auto pen = r1_penalty([&](const torch::Tensor& x) { return (x * w).flatten(1).sum(1); },
                        torch::randn({2, 3, 4, 4}, torch::kFloat64));
  pen.backward();
  CHECK(torch::allclose(w.grad(), w.detach(), 1e-12, 1e-12));
}

TEST_CASE("R1 penalty of a real discriminator is nonnegative") {
  auto cfg = testing::tiny_config().gan;
  torch::manual_seed(6);
  Discriminator d(cfg);
  for (int trial = 0; trial < 5; ++trial)
    CHECK(r1_penalty(d, torch::randn({2, 3, cfg.image_res, cfg.image_res})).item<double>() >= 0.0);
}

TEST_CASE("mapper reconstruction cross-entropy") {
  auto target = torch::tensor({{{0, 1}, {2, 1}}}, torch::kInt64);
  auto aligned = torch::one_hot(target, 3).permute({0, 3, 1, 2}).to(torch::kFloat64) * 20.0;
  CHECK(loss_rec_mapper(aligned, target).item<double>() < 1e-3);
  for (int k : {2, 4, 7}) {
    auto t = torch::zeros({2, 3, 3}, torch::kInt64);
    CHECK(loss_rec_mapper(torch::zeros({2, k, 3, 3}, torch::kFloat64), t).item<double>() ==
          doctest::Approx(std::log(static_cast<double>(k))).epsilon(1e-12));
  }
  CHECK_THROWS_AS(loss_rec_mapper(aligned, target + 3), LabelError);
  CHECK_THROWS_AS(loss_rec_mapper(aligned, torch::zeros({1, 3, 2}, torch::kInt64)), DimensionError);

  torch::manual_seed(7);
  for (int trial = 0; trial < 10; ++trial) {
    auto t = torch::randint(0, 4, {2, 3, 3});
    CHECK(testing::fd_gradient_error([&](const torch::Tensor& v) { return loss_rec_mapper(v, t); },
                                     torch::randn({2, 4, 3, 3}, torch::kFloat64), 10, trial) < 1e-4);
  }
}

TEST_CASE("rearranger total follows the weighted sum") {
  LossWeights w;
  RearrangerLosses<double> zero{0.0, 0.0, 0.0, 0.0};
  CHECK(total_rearranger(zero, w) == 0.0);
  RearrangerLosses<double> ones{1.0, 1.0, 1.0, 1.0};
  CHECK(total_rearranger(ones, w) == 22.0);
  RearrangerLosses<double> c{0.3, 0.7, 1.9, 0.05};
  double base = total_rearranger(c, w);
  LossWeights doubled = w;
  doubled.self *= 2;
  CHECK(total_rearranger(c, doubled) - base == doctest::Approx(w.self * 0.7).epsilon(1e-12));
  RearrangerLosses<double> no_adv{std::nullopt, 1.0, 1.0, std::nullopt};
  CHECK(total_rearranger(no_adv, w) == 11.0);
  // Linearity in each component.
  for (int i = 0; i < 4; ++i) {
    auto bumped = c;
    std::optional<double>* fields[] = {&bumped.adv, &bumped.self, &bumped.mask, &bumped.r1};
    const double weights[] = {1.0, w.self, w.mask, w.r1};
    **fields[i] += 0.25;
    CHECK(total_rearranger(bumped, w) - base == doctest::Approx(0.25 * weights[i]).epsilon(1e-9));
  }
  auto t = total_rearranger(RearrangerLosses<torch::Tensor>{torch::tensor(1.0), torch::tensor(1.0), torch::tensor(1.0),
                                                            torch::tensor(1.0)},
                            w);
  CHECK(t.item<double>() == 22.0);
}

TEST_CASE("mapper total switches weights by phase") {
  LossWeights w;
  CHECK(total_mapper(MapperLosses<double>{std::nullopt, 1.0, std::nullopt}, w, 1) == 10.0);
  CHECK(total_mapper(MapperLosses<double>{1.0, 1.0, std::nullopt}, w, 1) == 10.0);
  CHECK(total_mapper(MapperLosses<double>{1.0, 1.0, 0.0}, w, 2) == 101.0);
  CHECK(total_mapper(MapperLosses<double>{0.0, 0.0, 0.0}, w, 2) == 0.0);
  CHECK(rec_weight(w, 1) == 10.0);
  CHECK(rec_weight(w, 2) == 100.0);
  MapperLosses<double> c{0.4, 0.2, 0.1};
  double base = total_mapper(c, w, 2);
  auto bumped = c;
  *bumped.r1 += 1.0;
  CHECK(total_mapper(bumped, w, 2) - base == doctest::Approx(w.r1).epsilon(1e-12));
}
