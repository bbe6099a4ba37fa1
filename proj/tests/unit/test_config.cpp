#include "doctest_torch.hpp"

#include <fstream>

#include "helpers.hpp"
#include "proxysynth/config.hpp"
#include "proxysynth/errors.hpp"

using namespace proxysynth;
using nlohmann::json;

TEST_CASE("default weights and schedules") {
  Config c;
  CHECK(c.losses.self == 10.0);
  CHECK(c.losses.mask == 1.0);
  CHECK(c.losses.r1 == 10.0);
  CHECK(c.losses.rec_phase1 == 10.0);
  CHECK(c.losses.rec_phase2 == 100.0);
  CHECK(c.cluster.k == 8);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config survives a json round trip") {
  auto c = testing::tiny_config(17);
  auto path = testing::temp_path("config.json");
  save_config(c, path);
  auto back = load_config(path);
  CHECK(json(back) == json(c));
  CHECK(architecture_of(back) == architecture_of(c));
}

TEST_CASE("partial configs fill defaults and unknown keys are rejected") {
  auto path = testing::temp_path("partial.json");
  std::ofstream(path) << R"({"seed": 5, "cluster": {"k": 3}})";
  auto c = load_config(path);
  CHECK(c.seed == 5);
  CHECK(c.cluster.k == 3);
  CHECK(c.gan.z_dim == Config().gan.z_dim);

  std::ofstream(path) << R"({"cluster": {"kk": 3}})";
  CHECK_THROWS_AS(load_config(path), ConfigError);
  std::ofstream(path) << R"({"clusters": {}})";
  CHECK_THROWS_AS(load_config(path), ConfigError);
  std::ofstream(path) << R"({"cluster": {"k": "eight"}})";
  CHECK_THROWS_AS(load_config(path), ConfigError);
  std::ofstream(path) << "{ not json";
  CHECK_THROWS_AS(load_config(path), ConfigError);
  CHECK_THROWS_AS(load_config(testing::temp_path("missing.json")), ConfigError);
}

TEST_CASE("validation rejects out-of-range settings") {
  auto bad = [](auto mutate) {
    Config c;
    mutate(c);
    return c;
  };
  CHECK_THROWS_AS(bad([](Config& c) { c.cluster.k = 1; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](Config& c) { c.cluster.tau = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](Config& c) { c.gan.proxy_res = 12; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](Config& c) { c.rearranger.embed_dim = 10; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](Config& c) { c.losses.self = -1; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](Config& c) { c.losses.self_reduction = "l1"; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](Config& c) { c.mapper.kind = "sketch"; }).validate(), ConfigError);
}

TEST_CASE("architecture fingerprint ignores schedules but not shapes") {
  Config a, b;
  b.rearranger.phase1_steps = 3;
  b.losses.self = 1.0;
  CHECK(architecture_of(a) == architecture_of(b));
  b.cluster.k = 4;
  CHECK(architecture_of(a) != architecture_of(b));
}
