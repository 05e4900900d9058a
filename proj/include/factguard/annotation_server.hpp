#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "factguard/runner.hpp"

namespace factguard::runner {

struct AnnotationServerOptions {
  std::string host = "127.0.0.1";
  int port = 8765;                     // 0 picks a free port
  std::string bearer_token;            // empty disables the check
  std::filesystem::path static_dir;    // optional UI bundle served at /
};

// HTTP API over a run directory for the human annotation channel:
//   GET  /api/cases?status=pending|all
//   GET  /api/cases/{id}
//   POST /api/cases/{id}/rounds/{r}/points/{i}/annotation
//   GET  /api/progress
// Writes are serialized and appended to annotations.jsonl.
class AnnotationServer {
 public:
  AnnotationServer(RunStore store, AnnotationServerOptions options);
  ~AnnotationServer();
  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  // Binds and starts serving on a background thread; returns the bound port.
  // Throws Error when the port cannot be bound.
  int start();
  void stop();
  // Blocks until stop() is called from another thread or a signal handler.
  void wait();
  int port() const;

  // Request handling without the network, used by the HTTP routes.
  nlohmann::ordered_json list_cases(const std::string& status) const;
  nlohmann::ordered_json case_view(const std::string& case_id) const;  // NotFoundError
  nlohmann::ordered_json progress() const;
  nlohmann::ordered_json annotate(const std::string& case_id, int round, int point_index,
                                  const nlohmann::json& body);  // NotFoundError / SchemaError

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace factguard::runner
