#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace factguard::lm {

struct BackendConfig {
  std::string kind = "http";  // "http" | "mock"
  std::string base_url;       // e.g. http://127.0.0.1:8000
  std::string path = "/v1/chat/completions";
  std::string model_name;
  double temperature = 0.0;
  int max_tokens = 512;
  int max_parallel = 1;
  int retry_limit = 2;
  std::chrono::milliseconds timeout{60000};
  std::chrono::milliseconds backoff_base{200};
  std::string bearer_token;
  std::filesystem::path mock_script;  // kind == "mock"

  // FACTGUARD_LM_BASE_URL and FACTGUARD_LM_TOKEN override the file values
  // for http backends.
  static BackendConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;  // token omitted
  void validate() const;
};

struct CompletionExchange {
  std::string tag;  // caller-chosen grouping key, usually the case id
  std::uint64_t seq = 0;
  std::string prompt;
  std::string completion;
  std::chrono::milliseconds latency{0};
  int attempt_count = 0;
  std::string backend;
  std::string error;  // non-empty iff the call failed

  nlohmann::ordered_json to_json() const;
};

// Shared audit log of every model call. Within one tag, calls are numbered in
// the order they were recorded; callers keep per-tag calls sequential, which
// makes the sorted log independent of thread scheduling.
class RunLog {
 public:
  void record(CompletionExchange ex);
  std::vector<CompletionExchange> drain_sorted();
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::uint64_t> next_seq_;
  std::vector<CompletionExchange> entries_;
};

// A chat-completion endpoint. complete() bounds concurrency to max_parallel,
// retries transport failures and 429/5xx statuses with exponential backoff,
// and records every exchange to the attached RunLog.
class Backend {
 public:
  Backend(std::string id, int max_parallel, int retry_limit, std::chrono::milliseconds backoff_base);
  virtual ~Backend() = default;
  Backend(const Backend&) = delete;
  Backend& operator=(const Backend&) = delete;

  CompletionExchange complete_exchange(const std::string& prompt, const std::string& tag = {});
  std::string complete(const std::string& prompt, const std::string& tag = {});

  void attach_log(std::shared_ptr<RunLog> log) { log_ = std::move(log); }
  const std::string& id() const { return id_; }
  int max_parallel() const { return max_parallel_; }

  std::uint64_t call_count() const;
  int peak_in_flight() const;

 protected:
  // One attempt. Throws TransportError or BackendError.
  virtual std::string attempt(const std::string& prompt) = 0;

 private:
  class Slot;

  std::string id_;
  int max_parallel_;
  int retry_limit_;
  std::chrono::milliseconds backoff_base_;
  std::shared_ptr<RunLog> log_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  int in_flight_ = 0;
  int peak_in_flight_ = 0;
  std::uint64_t calls_ = 0;
};

class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(BackendConfig config);

  const BackendConfig& config() const { return config_; }
  static nlohmann::json request_body(const BackendConfig& config, const std::string& prompt);

 protected:
  std::string attempt(const std::string& prompt) override;

 private:
  BackendConfig config_;
  std::string host_;    // scheme://host:port
  std::string prefix_;  // path prefix from base_url
};

enum class MatchKind { kExact, kPrefix, kContains };

struct MockRule {
  MatchKind kind = MatchKind::kExact;
  std::string pattern;
  std::string completion;
  bool fail = false;  // simulate an unreachable backend
};

using MockScript = std::vector<MockRule>;

MockScript load_mock_script(const std::filesystem::path& path);
MockScript mock_script_from_json(const nlohmann::json& j);

// Offline scripted backend. The first rule that matches wins.
class MockBackend final : public Backend {
 public:
  MockBackend(std::string id, MockScript script, int max_parallel = 1);

  std::vector<std::string> prompts() const;  // every prompt received, in order

 protected:
  std::string attempt(const std::string& prompt) override;

 private:
  MockScript script_;
  mutable std::mutex prompts_mu_;
  std::vector<std::string> prompts_;
};

std::shared_ptr<MockBackend> register_mock(MockScript script, std::string id = "mock", int max_parallel = 1);

std::shared_ptr<Backend> make_backend(const std::string& id, const BackendConfig& config);

}  // namespace factguard::lm
