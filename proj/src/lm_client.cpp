#include "factguard/lm_client.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "factguard/errors.hpp"
#include "factguard/http_util.hpp"

namespace factguard::lm {

BackendConfig BackendConfig::from_json(const nlohmann::json& j) {
  BackendConfig c;
  try {
    c.kind = j.value("kind", c.kind);
    c.base_url = j.value("base_url", c.base_url);
    c.path = j.value("path", c.path);
    c.model_name = j.value("model", j.value("model_name", c.model_name));
    c.temperature = j.value("temperature", c.temperature);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.max_parallel = j.value("max_parallel", c.max_parallel);
    c.retry_limit = j.value("retry_limit", c.retry_limit);
    c.timeout = std::chrono::milliseconds(j.value("timeout_ms", static_cast<long>(c.timeout.count())));
    c.backoff_base =
        std::chrono::milliseconds(j.value("backoff_base_ms", static_cast<long>(c.backoff_base.count())));
    c.bearer_token = j.value("bearer_token", c.bearer_token);
    c.mock_script = j.value("mock_script", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("backend config: ") + e.what());
  }
  if (c.kind == "http") {
    if (const char* url = std::getenv("FACTGUARD_LM_BASE_URL"); url && *url) c.base_url = url;
    if (const char* token = std::getenv("FACTGUARD_LM_TOKEN"); token && *token) c.bearer_token = token;
  }
  c.validate();
  return c;
}

nlohmann::json BackendConfig::to_json() const {
  nlohmann::json j;
  j["kind"] = kind;
  j["base_url"] = base_url;
  j["path"] = path;
  j["model"] = model_name;
  j["temperature"] = temperature;
  j["max_tokens"] = max_tokens;
  j["max_parallel"] = max_parallel;
  j["retry_limit"] = retry_limit;
  j["timeout_ms"] = timeout.count();
  j["backoff_base_ms"] = backoff_base.count();
  if (kind == "mock") j["mock_script"] = mock_script.string();
  return j;
}

void BackendConfig::validate() const {
  if (kind != "http" && kind != "mock") throw ConfigError("backend kind must be http or mock, got " + kind);
  if (max_parallel < 1) throw ConfigError("max_parallel must be >= 1");
  if (retry_limit < 0) throw ConfigError("retry_limit must be >= 0");
  if (max_tokens < 1) throw ConfigError("max_tokens must be positive");
  if (temperature < 0.0) throw ConfigError("temperature must be >= 0");
  if (kind == "http" && base_url.empty()) throw ConfigError("http backend needs base_url");
  if (kind == "mock" && mock_script.empty()) throw ConfigError("mock backend needs mock_script");
}

nlohmann::ordered_json CompletionExchange::to_json() const {
  nlohmann::ordered_json j;
  j["tag"] = tag;
  j["seq"] = seq;
  j["backend"] = backend;
  j["prompt"] = prompt;
  j["completion"] = completion;
  j["attempt_count"] = attempt_count;
  j["error"] = error;
  j["latency_ms"] = latency.count();
  return j;
}

void RunLog::record(CompletionExchange ex) {
  std::lock_guard lock(mu_);
  ex.seq = next_seq_[ex.tag]++;
  entries_.push_back(std::move(ex));
}

std::vector<CompletionExchange> RunLog::drain_sorted() {
  std::lock_guard lock(mu_);
  std::vector<CompletionExchange> out = std::move(entries_);
  entries_.clear();
  std::stable_sort(out.begin(), out.end(), [](const CompletionExchange& a, const CompletionExchange& b) {
    if (a.tag != b.tag) return a.tag < b.tag;
    return a.seq < b.seq;
  });
  return out;
}

std::size_t RunLog::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

// Holds one of the backend's max_parallel slots for its lifetime.
class Backend::Slot {
 public:
  explicit Slot(Backend& b) : b_(b) {
    std::unique_lock lock(b_.mu_);
    b_.cv_.wait(lock, [this] { return b_.in_flight_ < b_.max_parallel_; });
    ++b_.in_flight_;
    ++b_.calls_;
    b_.peak_in_flight_ = std::max(b_.peak_in_flight_, b_.in_flight_);
  }
  ~Slot() {
    {
      std::lock_guard lock(b_.mu_);
      --b_.in_flight_;
    }
    b_.cv_.notify_one();
  }
  Slot(const Slot&) = delete;
  Slot& operator=(const Slot&) = delete;

 private:
  Backend& b_;
};

Backend::Backend(std::string id, int max_parallel, int retry_limit, std::chrono::milliseconds backoff_base)
    : id_(std::move(id)), max_parallel_(max_parallel), retry_limit_(retry_limit), backoff_base_(backoff_base) {
  if (max_parallel_ < 1) throw ConfigError("max_parallel must be >= 1");
  if (retry_limit_ < 0) throw ConfigError("retry_limit must be >= 0");
}

CompletionExchange Backend::complete_exchange(const std::string& prompt, const std::string& tag) {
  CompletionExchange ex;
  ex.tag = tag;
  ex.prompt = prompt;
  ex.backend = id_;
  const auto start = std::chrono::steady_clock::now();
  auto finish = [&] {
    ex.latency = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
    if (log_) log_->record(ex);
  };
  try {
    Slot slot(*this);
    for (int attempt_no = 0;; ++attempt_no) {
      ex.attempt_count = attempt_no + 1;
      try {
        ex.completion = attempt(prompt);
        break;
      } catch (const TransportError&) {
        if (attempt_no >= retry_limit_) throw;
      } catch (const BackendError& e) {
        const bool retryable = e.status() == 429 || e.status() >= 500;
        if (!retryable || attempt_no >= retry_limit_) throw;
      }
      std::this_thread::sleep_for(backoff_base_ * (1LL << std::min(attempt_no, 16)));
    }
  } catch (const Error& e) {
    ex.error = e.what();
    finish();
    throw;
  }
  finish();
  return ex;
}

std::string Backend::complete(const std::string& prompt, const std::string& tag) {
  return complete_exchange(prompt, tag).completion;
}

std::uint64_t Backend::call_count() const {
  std::lock_guard lock(mu_);
  return calls_;
}

int Backend::peak_in_flight() const {
  std::lock_guard lock(mu_);
  return peak_in_flight_;
}

HttpBackend::HttpBackend(BackendConfig config)
    : Backend(config.model_name.empty() ? config.base_url : config.model_name, config.max_parallel,
              config.retry_limit, config.backoff_base),
      config_(std::move(config)) {
  config_.validate();
  std::tie(host_, prefix_) = http::split_url(config_.base_url);
}

nlohmann::json HttpBackend::request_body(const BackendConfig& config, const std::string& prompt) {
  nlohmann::json body;
  body["model"] = config.model_name;
  body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", prompt}}});
  body["temperature"] = config.temperature;
  body["max_tokens"] = config.max_tokens;
  return body;
}

std::string HttpBackend::attempt(const std::string& prompt) {
  httplib::Client client(host_);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(config_.timeout);
  if (!config_.bearer_token.empty()) client.set_bearer_token_auth(config_.bearer_token);
  const auto res = client.Post(prefix_ + config_.path, request_body(config_, prompt).dump(), "application/json");
  if (!res) {
    throw TransportError("request to " + config_.base_url + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw BackendError("backend " + config_.base_url + " returned HTTP " + std::to_string(res->status) + ": " +
                           http::excerpt(res->body),
                       res->status);
  }
  try {
    const auto j = nlohmann::json::parse(res->body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw BackendError("malformed completion response: " + std::string(e.what()) + ": " + http::excerpt(res->body),
                       res->status);
  }
}

MockScript mock_script_from_json(const nlohmann::json& j) {
  MockScript script;
  const auto& rules = j.is_object() ? j.at("rules") : j;
  for (const auto& r : rules) {
    MockRule rule;
    const std::string match = r.value("match", std::string("exact"));
    if (match == "exact") rule.kind = MatchKind::kExact;
    else if (match == "prefix") rule.kind = MatchKind::kPrefix;
    else if (match == "contains") rule.kind = MatchKind::kContains;
    else throw ConfigError("mock rule match must be exact, prefix or contains");
    rule.pattern = r.at("pattern").get<std::string>();
    rule.completion = r.value("completion", std::string());
    rule.fail = r.value("fail", false);
    script.push_back(std::move(rule));
  }
  return script;
}

MockScript load_mock_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open mock script " + path.string());
  try {
    return mock_script_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("mock script " + path.string() + ": " + e.what());
  }
}

MockBackend::MockBackend(std::string id, MockScript script, int max_parallel)
    : Backend(std::move(id), max_parallel, 0, std::chrono::milliseconds(0)), script_(std::move(script)) {}

std::vector<std::string> MockBackend::prompts() const {
  std::lock_guard lock(prompts_mu_);
  return prompts_;
}

std::string MockBackend::attempt(const std::string& prompt) {
  {
    std::lock_guard lock(prompts_mu_);
    prompts_.push_back(prompt);
  }
  for (const auto& rule : script_) {
    bool hit = false;
    switch (rule.kind) {
      case MatchKind::kExact: hit = prompt == rule.pattern; break;
      case MatchKind::kPrefix: hit = prompt.starts_with(rule.pattern); break;
      case MatchKind::kContains: hit = prompt.find(rule.pattern) != std::string::npos; break;
    }
    if (!hit) continue;
    if (rule.fail) throw TransportError("mock backend " + id() + " simulated an unreachable host");
    return rule.completion;
  }
  throw MockError("mock backend " + id() + ": no rule matches prompt starting with \"" + prompt.substr(0, 80) +
                  "\"");
}

std::shared_ptr<MockBackend> register_mock(MockScript script, std::string id, int max_parallel) {
  return std::make_shared<MockBackend>(std::move(id), std::move(script), max_parallel);
}

std::shared_ptr<Backend> make_backend(const std::string& id, const BackendConfig& config) {
  config.validate();
  if (config.kind == "mock") {
    return register_mock(load_mock_script(config.mock_script), id, config.max_parallel);
  }
  return std::make_shared<HttpBackend>(config);
}

}  // namespace factguard::lm
