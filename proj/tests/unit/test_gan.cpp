#include "doctest_torch.hpp"

#include "helpers.hpp"
#include "proxysynth/errors.hpp"
#include "proxysynth/gan.hpp"

using namespace proxysynth;

TEST_CASE("sample_latent is a seeded standard normal stream") {
  auto a = sample_latent(0, 64), b = sample_latent(0, 64), c = sample_latent(1, 64);
  CHECK(torch::equal(a.values, b.values));
  CHECK_FALSE(torch::equal(a.values, c.values));
  CHECK(a.seed == 0);

  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < 10000; ++s) seeds.push_back(s);
  auto z = sample_latents(seeds, 64).to(torch::kFloat64);
  CHECK(z.mean(0).abs().max().item<double>() < 0.05);
  CHECK((z.var(0) - 1.0).abs().max().item<double>() < 0.1);
}

TEST_CASE("map_latent is deterministic, validates length and is zero for zero weights") {
  auto cfg = testing::tiny_config().gan;
  torch::manual_seed(1);
  Generator g(cfg);
  auto z = sample_latents({5, 6}, cfg.z_dim);
  CHECK(torch::equal(g->map_latent(z), g->map_latent(z)));
  CHECK_THROWS_AS(g->map_latent(torch::randn({2, cfg.z_dim + 1})), DimensionError);

  MappingNetwork zero(cfg.z_dim, cfg.w_dim, 3, 0.01);
  {
    torch::NoGradGuard guard;
    for (auto& p : zero->parameters()) p.zero_();
  }
  CHECK(zero->forward(z).abs().max().item<double>() == 0.0);
}

TEST_CASE("map_latent Jacobian matches central differences") {
  auto cfg = testing::tiny_config().gan;
  torch::manual_seed(2);
  MappingNetwork net(cfg.z_dim, cfg.w_dim, cfg.mapping_layers, 1.0);
  net->to(torch::kFloat64);
  auto z = torch::randn({1, cfg.z_dim}, torch::kFloat64);
  // Each output coordinate is a scalar function of z.
  for (int o = 0; o < 4; ++o) {
    auto f = [&](const torch::Tensor& x) { return net->forward(x)[0][o]; };
    CHECK(testing::fd_gradient_error(f, z, 10, 100 + o) < 1e-4);
  }
}

TEST_CASE("generate_front shape, determinism and gradient") {
  auto cfg = testing::tiny_config().gan;
  torch::manual_seed(3);
  Generator g(cfg);
  auto w = g->map_latent(sample_latents({1, 2}, cfg.z_dim));
  auto f = g->generate_front(w);
  CHECK(f.sizes() == torch::IntArrayRef{2, cfg.channels, cfg.proxy_res, cfg.proxy_res});
  CHECK(torch::equal(f, g->generate_front(w)));
  CHECK_FALSE(torch::equal(f[0], f[1]));

  g->to(torch::kFloat64);
  auto w64 = w.detach().to(torch::kFloat64);
  auto mean_out = [&](const torch::Tensor& x) { return g->generate_front(x).mean(); };
  CHECK(testing::fd_gradient_error(mean_out, w64, 10, 7) < 1e-4);
}

TEST_CASE("generate_back composes with generate_front into the unsplit generator") {
  auto cfg = testing::tiny_config().gan;
  torch::manual_seed(4);
  Generator g(cfg);
  auto z = sample_latents({10, 11, 12}, cfg.z_dim);
  auto split = g->generate_back(g->generate_front(g->map_latent(z)));
  auto whole = g->forward(z);
  CHECK(split.sizes() == torch::IntArrayRef{3, 3, cfg.image_res, cfg.image_res});
  CHECK(torch::equal(split, whole));
  CHECK(whole.abs().max().item<double>() <= 1.0);
  CHECK_THROWS_AS(g->generate_back(torch::randn({1, cfg.channels + 1, cfg.proxy_res, cfg.proxy_res})), DimensionError);

  auto f = g->generate_front(g->map_latent(z)).detach().requires_grad_(true);
  auto probe = torch::randn({3, 3, cfg.image_res, cfg.image_res});
  (g->generate_back(f) * probe).sum().backward();
  CHECK(f.grad().abs().sum().item<double>() > 0.0);
}

TEST_CASE("discriminate returns one finite logit and zero for a zero network") {
  auto cfg = testing::tiny_config().gan;
  torch::manual_seed(5);
  Discriminator d(cfg);
  auto x = torch::rand({3, cfg.image_res, cfg.image_res}) * 2 - 1;
  CHECK(std::isfinite(discriminate(d, x)));
  CHECK(d->forward(x.unsqueeze(0).repeat({4, 1, 1, 1})).sizes() == torch::IntArrayRef{4});
  CHECK_THROWS_AS(discriminate(d, torch::zeros({3, 8, 8})), DimensionError);
  {
    torch::NoGradGuard guard;
    for (auto& p : d->parameters()) p.zero_();
  }
  CHECK(discriminate(d, x) == 0.0);
}
