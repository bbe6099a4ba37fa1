#include "doctest_torch.hpp"

#include <limits>
#include <random>

#include "helpers.hpp"
#include "proxysynth/cluster.hpp"
#include "proxysynth/errors.hpp"

using namespace proxysynth;

using testing::exhaustive_optimum;
using testing::partition_sse;

TEST_CASE("fit_clusters reaches the exhaustive optimum on small instances") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 24; ++trial) {
    const int dim = trial % 2 ? 3 : 1;
    const int k = 2 + trial % 2;
    const int n = 6 + trial % 5;
    std::vector<double> pts(n * dim);
    std::normal_distribution<double> normal;
    for (auto& v : pts) v = normal(rng);
    auto f = torch::tensor(pts, torch::kFloat64).view({1, n, dim}).permute({0, 2, 1}).unsqueeze(2);  // [1,dim,1,n]
    auto model = fit_clusters(f, k, 100 + trial);
    auto labels = assign_hard(f.to(torch::kFloat32), model).flatten();
    CHECK(partition_sse(pts, dim, labels, k) == doctest::Approx(exhaustive_optimum(pts, dim, k)).epsilon(1e-9));
  }
}

TEST_CASE("kmeans objective history never increases") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  std::vector<double> pts(400 * 2);
  for (auto& v : pts) v = normal(rng);
  auto r = kmeans(pts, 2, 6, 9, {100, 3});
  REQUIRE(r.objective_history.size() >= 2);
  for (std::size_t i = 1; i < r.objective_history.size(); ++i)
    CHECK(r.objective_history[i] <= r.objective_history[i - 1] + 1e-12);
  CHECK(r.objective == doctest::Approx(r.objective_history.back()));
}

TEST_CASE("kmeans rejects inputs with fewer distinct points than clusters") {
  std::vector<double> pts = {1, 1, 1, 2, 2};
  CHECK_THROWS_AS(kmeans(pts, 1, 3, 0), DegenerateInputError);
  CHECK_NOTHROW(kmeans(pts, 1, 2, 0));
  CHECK_THROWS_AS(kmeans(pts, 2, 2, 0), DimensionError);
}

TEST_CASE("kmeans is deterministic in its seed") {
  std::vector<double> pts;
  for (int i = 0; i < 50; ++i) pts.push_back(std::sin(i * 1.7) * 3);
  auto a = kmeans(pts, 1, 4, 21), b = kmeans(pts, 1, 4, 21);
  CHECK(a.centroids == b.centroids);
  CHECK(a.labels == b.labels);
}

TEST_CASE("assign_hard equals argmax of assign_soft") {
  torch::manual_seed(8);
  ClusterModel m;
  m.centroids = torch::randn({5, 6});
  for (double tau : {0.1, 1.0, 10.0}) {
    m.tau = tau;
    auto f = torch::randn({3, 6, 8, 8});
    CHECK(torch::equal(assign_hard(f, m), assign_soft(f, m).argmax(1)));
    auto p = assign_soft(f, m);
    CHECK(torch::allclose(p.sum(1), torch::ones({3, 8, 8}), 1e-5, 1e-5));
  }
}

TEST_CASE("assign_hard breaks exact ties toward the lowest index") {
  ClusterModel m;
  m.centroids = torch::tensor({{1.f, 0.f}, {-1.f, 0.f}});
  auto f = torch::zeros({1, 2, 1, 1});
  CHECK(assign_hard(f, m).item<int64_t>() == 0);
  auto p = assign_soft(f, m);
  CHECK(p[0][0].item<float>() == doctest::Approx(0.5));
}

TEST_CASE("soft assignment matches a hand-evaluated softmax") {
  ClusterModel m;
  m.tau = 2.0;
  m.centroids = torch::tensor({{0.f}, {2.f}});
  auto f = torch::full({1, 1, 1, 1}, 0.5f);
  // d^2 = 0.25 and 2.25; logits -0.125 and -1.125; p0 = 1 / (1 + e^-1)
  double expected = 1.0 / (1.0 + std::exp(-1.0));
  CHECK(assign_soft(f, m)[0][0][0][0].item<double>() == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("normalized clusters standardize channels before distances") {
  auto f = torch::cat({torch::randn({4, 1, 4, 4}) * 100, torch::randn({4, 1, 4, 4})}, 1);
  auto m = fit_clusters(f, 2, 1, 1.0, {}, true);
  REQUIRE(m.normalizes());
  CHECK(m.channel_std[0].item<float>() > 10 * m.channel_std[1].item<float>());
  CHECK(assign_hard(f, m).sizes() == torch::IntArrayRef{4, 4, 4});
}

TEST_CASE("hflip mirrors the last axis and is an involution") {
  auto x = torch::arange(6).view({1, 2, 3});
  CHECK(torch::equal(hflip(x)[0][0], torch::tensor({2, 1, 0})));
  CHECK(torch::equal(hflip(hflip(x)), x));
}

TEST_CASE("assignments reject features of the wrong width") {
  ClusterModel m;
  m.centroids = torch::randn({3, 4});
  CHECK_THROWS_AS(assign_hard(torch::randn({1, 5, 2, 2}), m), DimensionError);
  CHECK_THROWS_AS(assign_soft(torch::randn({1, 5, 2, 2}), m), DimensionError);
}

TEST_CASE("fit_clusters hand examples") {
  auto centroids = [](std::vector<double> v) {
    auto f = torch::tensor(v, torch::kFloat64).view({1, 1, 1, -1});
    auto c = fit_clusters(f, 2, 4).centroids.flatten();
    return std::get<0>(c.sort());
  };
  CHECK(torch::allclose(centroids({0, 10}), torch::tensor({0.f, 10.f})));
  CHECK(torch::allclose(centroids({0, 1, 9, 10}), torch::tensor({0.5f, 9.5f})));
  CHECK_THROWS_AS(fit_clusters(torch::ones({2, 1, 3, 3}), 2, 0), DegenerateInputError);
}
