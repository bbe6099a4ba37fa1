#include "proxysynth/service.hpp"

#include <atomic>
#include <chrono>

#include <httplib.h>

#include "proxysynth/errors.hpp"
#include "proxysynth/image_io.hpp"
#include "proxysynth/pipeline.hpp"
#include "proxysynth/toydata.hpp"

namespace proxysynth {

using nlohmann::json;

namespace {

ServiceReply error_reply(int status, const std::string& message) { return {status, {{"error", message}}}; }

ServiceReply starting() { return error_reply(503, "model is loading"); }

}  // namespace

ServiceReply handle_health(const Model* model) {
  if (!model) return {503, {{"status", "starting"}}};
  return {200, {{"status", "ok"}, {"checkpoint_id", model->checkpoint_id}}};
}

ServiceReply handle_classes(const Model* model) {
  if (!model) return starting();
  json palette = json::array();
  for (auto& c : scene_class_palette()) palette.push_back({c[0], c[1], c[2]});
  std::vector<std::string> labels(scene_class_names().begin(), scene_class_names().end());
  labels.resize(static_cast<std::size_t>(model->config.mapper.classes));
  palette.erase(palette.begin() + model->config.mapper.classes, palette.end());
  return {200, {{"kind", model->config.mapper.kind}, {"labels", labels}, {"palette", palette}}};
}

ServiceReply handle_synthesize(Model* model, const std::string& request_body) {
  if (!model) return starting();
  const auto started = std::chrono::steady_clock::now();
  json req;
  try {
    req = json::parse(request_body);
  } catch (const json::exception&) {
    return error_reply(400, "request body is not valid JSON");
  }
  if (!req.is_object() || !req.contains("mask") || !req["mask"].is_string())
    return error_reply(400, "field 'mask' (base64 PNG) is required");
  if (!req.contains("style_seed") || !req["style_seed"].is_number_integer() || req["style_seed"].get<long long>() < 0)
    return error_reply(400, "field 'style_seed' must be a non-negative integer");
  const std::string kind_name = req.value("kind", model->config.mapper.kind);

  const auto& cfg = model->config;
  ConditionKind kind;
  try {
    kind = parse_condition_kind(kind_name);
  } catch (const Error& e) {
    return error_reply(422, e.what());
  }
  if (kind_name != cfg.mapper.kind)
    return error_reply(422, "kind '" + kind_name + "' is not served; this model takes '" + cfg.mapper.kind + "'");

  PngImage png;
  try {
    png = decode_png(base64_decode(req["mask"].get<std::string>()));
  } catch (const Error& e) {
    return error_reply(400, std::string("mask is not a base64 PNG: ") + e.what());
  }
  try {
    auto condition = condition_from_png(png, kind, cfg.gan.image_res, cfg.mapper.classes);
    auto result = synthesize(*model, condition, req["style_seed"].get<std::uint64_t>());
    auto image = encode_png(image_to_png(result.image));
    auto proxy = encode_png(labels_to_png(result.proxy, proxy_palette()));
    double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    return {200, {{"image", base64_encode(image)}, {"proxy_mask", base64_encode(proxy)}, {"latency_ms", ms}}};
  } catch (const DimensionError& e) {
    return error_reply(422, e.what());
  } catch (const LabelError& e) {
    return error_reply(422, e.what());
  } catch (const Error& e) {
    return error_reply(500, e.what());
  }
}

InferenceService::InferenceService(int threads) : server_(std::make_unique<httplib::Server>()) {
  server_->new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
  auto send = [](httplib::Response& res, const ServiceReply& reply) {
    res.status = reply.status;
    res.set_content(reply.body.dump(), "application/json");
  };
  server_->Get("/v1/health", [this, send](const httplib::Request&, httplib::Response& res) {
    auto m = snapshot();
    send(res, handle_health(m.get()));
  });
  server_->Get("/v1/classes", [this, send](const httplib::Request&, httplib::Response& res) {
    auto m = snapshot();
    send(res, handle_classes(m.get()));
  });
  server_->Post("/v1/synthesize", [this, send](const httplib::Request& req, httplib::Response& res) {
    auto m = std::atomic_load(&model_);
    send(res, handle_synthesize(m.get(), req.body));
  });
}

InferenceService::~InferenceService() { stop(); }

void InferenceService::load(std::shared_ptr<Model> model) {
  model->train(false);
  std::atomic_store(&model_, std::move(model));
}

std::shared_ptr<const Model> InferenceService::snapshot() const { return std::atomic_load(&model_); }

int InferenceService::bind(const std::string& host, int port) {
  int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void InferenceService::run() { server_->listen_after_bind(); }

void InferenceService::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

void InferenceService::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace proxysynth
