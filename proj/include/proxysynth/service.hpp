#pragma once

// HTTP/JSON inference service over an immutable model snapshot.
//
//   GET  /v1/health      200 {status, checkpoint_id}; 503 until a model is loaded
//   GET  /v1/classes     {kind, labels, palette}
//   POST /v1/synthesize  {mask: base64 PNG, kind, style_seed}
//                        -> {image: base64 PNG, proxy_mask: base64 indexed PNG, latency_ms}
//
// Malformed payloads give 400, masks of the wrong size or kind give 422.

#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "proxysynth/model.hpp"

namespace httplib {
class Server;
}

namespace proxysynth {

class InferenceService {
 public:
  explicit InferenceService(int threads = 8);
  ~InferenceService();
  InferenceService(const InferenceService&) = delete;
  InferenceService& operator=(const InferenceService&) = delete;

  // Publishes the model; requests issued before this see 503.
  void load(std::shared_ptr<Model> model);

  // Binds to host:port (port 0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  // Serves until stop(); call after bind().
  void run();
  void stop();
  void wait_until_ready() const;

 private:
  std::shared_ptr<const Model> snapshot() const;

  std::unique_ptr<httplib::Server> server_;
  std::shared_ptr<Model> model_;
};

// Request handling without the transport, for tests and the CLI.
struct ServiceReply {
  int status = 200;
  nlohmann::json body;
};
ServiceReply handle_health(const Model* model);
ServiceReply handle_classes(const Model* model);
ServiceReply handle_synthesize(Model* model, const std::string& request_body);

}  // namespace proxysynth
