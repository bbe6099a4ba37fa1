#include "proxysynth/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "proxysynth/errors.hpp"

namespace proxysynth {

using nlohmann::json;

namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

// Reads `obj[key]` into `out` when present; rejects keys the schema does not know.
class Reader {
 public:
  Reader(const json& obj, std::string section) : obj_(obj), section_(std::move(section)) {
    if (!obj_.is_object()) throw ConfigError("config section '" + section_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + section_ + "." + key + "': " + e.what());
    }
  }

  void get_res_map(const char* key, std::map<int, int>& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    if (!it->is_object()) throw ConfigError("config key '" + section_ + "." + key + "' must map resolution to width");
    out.clear();
    for (auto& [res, width] : it->items()) {
      try {
        out[std::stoi(res)] = width.get<int>();
      } catch (const std::exception&) {
        throw ConfigError("config key '" + section_ + "." + key + "." + res + "' is not an integer pair");
      }
    }
  }

  void finish() const {
    for (auto& [key, _] : obj_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + section_ + "." + key + "'");
    }
  }

 private:
  const json& obj_;
  std::string section_;
  std::set<std::string> seen_;
};

json res_map_json(const std::map<int, int>& m) {
  json j = json::object();
  for (auto [res, width] : m) j[std::to_string(res)] = width;
  return j;
}

}  // namespace

int GanConfig::width_at(int res) const {
  if (res == proxy_res) return channels;
  auto it = widths.find(res);
  if (it == widths.end()) throw ConfigError("no generator width configured for resolution " + std::to_string(res));
  return it->second;
}

int GanConfig::d_width_at(int res) const {
  auto it = d_widths.find(res);
  if (it == d_widths.end()) throw ConfigError("no discriminator width configured for resolution " + std::to_string(res));
  return it->second;
}

void GanConfig::validate() const {
  if (z_dim <= 0 || w_dim <= 0 || channels <= 0 || mapping_layers <= 0) throw ConfigError("gan dimensions must be positive");
  if (!is_power_of_two(proxy_res) || proxy_res < 8) throw ConfigError("gan.proxy_res must be a power of two >= 8");
  if (!is_power_of_two(image_res) || image_res < proxy_res)
    throw ConfigError("gan.image_res must be a power-of-two multiple of gan.proxy_res");
  for (int r = 4; r <= image_res; r *= 2) {
    if (width_at(r) <= 0) throw ConfigError("gan widths must be positive");
    if (d_width_at(r) <= 0) throw ConfigError("gan d_widths must be positive");
  }
  if (lr <= 0 || batch <= 0 || steps < 0 || r1_weight < 0) throw ConfigError("gan optimizer settings out of range");
}

void ClusterConfig::validate() const {
  if (k < 2) throw ConfigError("cluster.k must be >= 2");
  if (!(tau > 0)) throw ConfigError("cluster.tau must be > 0");
  if (samples <= 0 || max_iter <= 0 || n_init <= 0) throw ConfigError("cluster sample/iteration counts must be positive");
}

void RearrangerConfig::validate() const {
  if (embed_dim % 4 != 0) throw ConfigError("rearranger.embed_dim must be divisible by 4");
  if (attn_dim <= 0 || block_layers < 0 || batch <= 0) throw ConfigError("rearranger dimensions must be positive");
  if (adv_every < 1) throw ConfigError("rearranger.adv_every must be >= 1");
  if (phase1_steps < 0 || phase2_steps < 0) throw ConfigError("rearranger phase lengths must be >= 0");
  if (flip_prob < 0 || flip_prob > 1) throw ConfigError("rearranger.flip_prob must be in [0,1]");
}

void LossWeights::validate() const {
  for (double v : {self, mask, r1, adv, rec_phase1, rec_phase2})
    if (!(v >= 0)) throw ConfigError("loss weights must be >= 0");
  if (self_reduction != "sum_l2" && self_reduction != "mean_sq")
    throw ConfigError("losses.self_reduction must be 'sum_l2' or 'mean_sq'");
}

int MapperConfig::input_channels() const { return kind == "segmentation" ? classes : 1; }

void MapperConfig::validate() const {
  if (kind != "segmentation" && kind != "scribble" && kind != "edge")
    throw ConfigError("mapper.kind must be segmentation, scribble or edge");
  if (classes < 2) throw ConfigError("mapper.classes must be >= 2");
  if (segnet_hidden <= 0 || segnet_epochs < 0 || base_width <= 0 || batch <= 0) throw ConfigError("mapper sizes must be positive");
  if (phase1_steps < 0 || phase2_steps < 0) throw ConfigError("mapper phase lengths must be >= 0");
}

void Config::validate() const {
  gan.validate();
  cluster.validate();
  rearranger.validate();
  losses.validate();
  mapper.validate();
  if (mapper.stack_res < gan.proxy_res || mapper.stack_res > gan.image_res)
    throw ConfigError("mapper.stack_res must lie between gan.proxy_res and gan.image_res");
}

void to_json(json& j, const Config& c) {
  j = json{
      {"seed", c.seed},
      {"gan",
       {{"z_dim", c.gan.z_dim},
        {"w_dim", c.gan.w_dim},
        {"mapping_layers", c.gan.mapping_layers},
        {"mapping_lr_mul", c.gan.mapping_lr_mul},
        {"channels", c.gan.channels},
        {"proxy_res", c.gan.proxy_res},
        {"image_res", c.gan.image_res},
        {"widths", res_map_json(c.gan.widths)},
        {"d_widths", res_map_json(c.gan.d_widths)},
        {"lr", c.gan.lr},
        {"beta1", c.gan.beta1},
        {"beta2", c.gan.beta2},
        {"r1_weight", c.gan.r1_weight},
        {"batch", c.gan.batch},
        {"steps", c.gan.steps}}},
      {"cluster",
       {{"k", c.cluster.k},
        {"tau", c.cluster.tau},
        {"samples", c.cluster.samples},
        {"max_iter", c.cluster.max_iter},
        {"n_init", c.cluster.n_init},
        {"normalize", c.cluster.normalize}}},
      {"rearranger",
       {{"attn_dim", c.rearranger.attn_dim},
        {"embed_dim", c.rearranger.embed_dim},
        {"block_layers", c.rearranger.block_layers},
        {"pe_on_keys", c.rearranger.pe_on_keys},
        {"finetune_g2", c.rearranger.finetune_g2},
        {"batch", c.rearranger.batch},
        {"phase1_steps", c.rearranger.phase1_steps},
        {"phase2_steps", c.rearranger.phase2_steps},
        {"adv_every", c.rearranger.adv_every},
        {"flip_prob", c.rearranger.flip_prob},
        {"lr", c.rearranger.lr}}},
      {"losses",
       {{"self", c.losses.self},
        {"mask", c.losses.mask},
        {"r1", c.losses.r1},
        {"adv", c.losses.adv},
        {"rec_phase1", c.losses.rec_phase1},
        {"rec_phase2", c.losses.rec_phase2},
        {"self_reduction", c.losses.self_reduction}}},
      {"mapper",
       {{"kind", c.mapper.kind},
        {"classes", c.mapper.classes},
        {"segnet_hidden", c.mapper.segnet_hidden},
        {"segnet_epochs", c.mapper.segnet_epochs},
        {"stack_res", c.mapper.stack_res},
        {"base_width", c.mapper.base_width},
        {"batch", c.mapper.batch},
        {"phase1_steps", c.mapper.phase1_steps},
        {"phase2_steps", c.mapper.phase2_steps},
        {"lr", c.mapper.lr}}},
      {"data", {{"scenes", c.data.scenes}, {"seed", c.data.seed}, {"folder", c.data.folder}}},
  };
}

void from_json(const json& j, Config& c) {
  Reader top(j, "config");
  top.get("seed", c.seed);

  std::set<std::string> sections = {"gan", "cluster", "rearranger", "losses", "mapper", "data"};
  for (auto& [key, value] : j.items()) {
    if (key != "seed" && !sections.count(key)) throw ConfigError("unknown config key 'config." + key + "'");
  }
  auto sub = [&](const char* name) -> const json& {
    static const json empty = json::object();
    auto it = j.find(name);
    return it == j.end() ? empty : *it;
  };

  {
    Reader r(sub("gan"), "gan");
    r.get("z_dim", c.gan.z_dim);
    r.get("w_dim", c.gan.w_dim);
    r.get("mapping_layers", c.gan.mapping_layers);
    r.get("mapping_lr_mul", c.gan.mapping_lr_mul);
    r.get("channels", c.gan.channels);
    r.get("proxy_res", c.gan.proxy_res);
    r.get("image_res", c.gan.image_res);
    r.get_res_map("widths", c.gan.widths);
    r.get_res_map("d_widths", c.gan.d_widths);
    r.get("lr", c.gan.lr);
    r.get("beta1", c.gan.beta1);
    r.get("beta2", c.gan.beta2);
    r.get("r1_weight", c.gan.r1_weight);
    r.get("batch", c.gan.batch);
    r.get("steps", c.gan.steps);
    r.finish();
  }
  {
    Reader r(sub("cluster"), "cluster");
    r.get("k", c.cluster.k);
    r.get("tau", c.cluster.tau);
    r.get("samples", c.cluster.samples);
    r.get("max_iter", c.cluster.max_iter);
    r.get("n_init", c.cluster.n_init);
    r.get("normalize", c.cluster.normalize);
    r.finish();
  }
  {
    Reader r(sub("rearranger"), "rearranger");
    r.get("attn_dim", c.rearranger.attn_dim);
    r.get("embed_dim", c.rearranger.embed_dim);
    r.get("block_layers", c.rearranger.block_layers);
    r.get("pe_on_keys", c.rearranger.pe_on_keys);
    r.get("finetune_g2", c.rearranger.finetune_g2);
    r.get("batch", c.rearranger.batch);
    r.get("phase1_steps", c.rearranger.phase1_steps);
    r.get("phase2_steps", c.rearranger.phase2_steps);
    r.get("adv_every", c.rearranger.adv_every);
    r.get("flip_prob", c.rearranger.flip_prob);
    r.get("lr", c.rearranger.lr);
    r.finish();
  }
  {
    Reader r(sub("losses"), "losses");
    r.get("self", c.losses.self);
    r.get("mask", c.losses.mask);
    r.get("r1", c.losses.r1);
    r.get("adv", c.losses.adv);
    r.get("rec_phase1", c.losses.rec_phase1);
    r.get("rec_phase2", c.losses.rec_phase2);
    r.get("self_reduction", c.losses.self_reduction);
    r.finish();
  }
  {
    Reader r(sub("mapper"), "mapper");
    r.get("kind", c.mapper.kind);
    r.get("classes", c.mapper.classes);
    r.get("segnet_hidden", c.mapper.segnet_hidden);
    r.get("segnet_epochs", c.mapper.segnet_epochs);
    r.get("stack_res", c.mapper.stack_res);
    r.get("base_width", c.mapper.base_width);
    r.get("batch", c.mapper.batch);
    r.get("phase1_steps", c.mapper.phase1_steps);
    r.get("phase2_steps", c.mapper.phase2_steps);
    r.get("lr", c.mapper.lr);
    r.finish();
  }
  {
    Reader r(sub("data"), "data");
    r.get("scenes", c.data.scenes);
    r.get("seed", c.data.seed);
    r.get("folder", c.data.folder);
    r.finish();
  }
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  Config c = j.get<Config>();
  c.validate();
  return c;
}

void save_config(const Config& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config file '" + path + "'");
  out << json(config).dump(2) << "\n";
}

json architecture_of(const Config& c) {
  return json{
      {"z_dim", c.gan.z_dim},
      {"w_dim", c.gan.w_dim},
      {"mapping_layers", c.gan.mapping_layers},
      {"channels", c.gan.channels},
      {"proxy_res", c.gan.proxy_res},
      {"image_res", c.gan.image_res},
      {"widths", res_map_json(c.gan.widths)},
      {"d_widths", res_map_json(c.gan.d_widths)},
      {"k", c.cluster.k},
      {"attn_dim", c.rearranger.attn_dim},
      {"embed_dim", c.rearranger.embed_dim},
      {"block_layers", c.rearranger.block_layers},
      {"mapper_kind", c.mapper.kind},
      {"classes", c.mapper.classes},
      {"segnet_hidden", c.mapper.segnet_hidden},
      {"stack_res", c.mapper.stack_res},
      {"base_width", c.mapper.base_width},
  };
}

}  // namespace proxysynth
