#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "factguard/errors.hpp"
#include "factguard/lm_client.hpp"
#include "factguard/parallel.hpp"

using namespace factguard;
using namespace factguard::lm;

namespace {

// Chat-completion stub on an ephemeral port.
class StubServer {
 public:
  explicit StubServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post("/v1/chat/completions", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

std::string completion_body(const std::string& content) {
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

BackendConfig http_config(const std::string& url, int retry_limit) {
  BackendConfig c;
  c.kind = "http";
  c.base_url = url;
  c.model_name = "stub";
  c.retry_limit = retry_limit;
  c.backoff_base = std::chrono::milliseconds(1);
  c.timeout = std::chrono::milliseconds(2000);
  return c;
}

class SlowBackend final : public Backend {
 public:
  SlowBackend(int max_parallel) : Backend("slow", max_parallel, 0, std::chrono::milliseconds(0)) {}
  std::atomic<int> current{0};
  std::atomic<int> observed_max{0};

 protected:
  std::string attempt(const std::string& prompt) override {
    const int now = ++current;
    int prev = observed_max.load();
    while (now > prev && !observed_max.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
    --current;
    return prompt;
  }
};

}  // namespace

TEST_CASE("mock backend") {
  auto mock = register_mock({{MatchKind::kExact, "p1", "good credit\nStable income.", false},
                             {MatchKind::kPrefix, "Assess the creditworthiness", "bad credit\nLow.", false},
                             {MatchKind::kContains, "needle", "found", false}});
  CHECK(mock->complete("p1") == "good credit\nStable income.");
  CHECK(mock->complete("Assess the creditworthiness of X") == "bad credit\nLow.");
  CHECK(mock->complete("hay needle hay") == "found");
  CHECK_THROWS_AS(mock->complete("unmatched prompt"), MockError);
  CHECK(mock->prompts().size() == 4);
  CHECK(mock->call_count() == 4);
}

TEST_CASE("mock rules resolve first match in declared order") {
  auto mock = register_mock({{MatchKind::kContains, "a", "first", false}, {MatchKind::kExact, "a", "second", false}});
  CHECK(mock->complete("a") == "first");
}

TEST_CASE("mock script from json") {
  const auto script = mock_script_from_json(nlohmann::json::parse(
      R"({"rules":[{"match":"prefix","pattern":"Q","completion":"A"},{"match":"contains","pattern":"down","fail":true}]})"));
  REQUIRE(script.size() == 2);
  auto mock = register_mock(script);
  CHECK(mock->complete("Q?") == "A");
  CHECK_THROWS_AS(mock->complete("is it down"), TransportError);
  CHECK_THROWS_AS(mock_script_from_json(nlohmann::json::parse(R"([{"match":"regex","pattern":"x"}])")),
                  ConfigError);
}

TEST_CASE("http backend retries 5xx and succeeds") {
  std::atomic<int> hits{0};
  StubServer server([&](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    CHECK(body.at("messages").at(0).at("role") == "user");
    CHECK(body.at("temperature") == 0.0);
    CHECK(body.at("max_tokens") == 512);
    if (++hits <= 2) {
      res.status = 500;
      res.set_content("overloaded", "text/plain");
      return;
    }
    res.set_content(completion_body("good credit\n" + body.at("messages").at(0).at("content").get<std::string>()),
                    "application/json");
  });
  auto log = std::make_shared<RunLog>();
  HttpBackend backend(http_config(server.url(), 3));
  backend.attach_log(log);
  const auto ex = backend.complete_exchange("hello", "c1");
  CHECK(ex.completion == "good credit\nhello");
  CHECK(ex.attempt_count == 3);
  CHECK(ex.error.empty());
  CHECK(log->size() == 1);
}

TEST_CASE("http backend errors") {
  StubServer server([](const httplib::Request&, httplib::Response& res) {
    res.status = 404;
    res.set_content("no such model", "text/plain");
  });
  auto log = std::make_shared<RunLog>();
  HttpBackend backend(http_config(server.url(), 3));
  backend.attach_log(log);
  try {
    backend.complete("x", "t");
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK(e.status() == 404);
    CHECK(std::string(e.what()).find("no such model") != std::string::npos);
  }
  const auto entries = log->drain_sorted();
  REQUIRE(entries.size() == 1);
  CHECK(entries[0].attempt_count == 1);
  CHECK_FALSE(entries[0].error.empty());
  CHECK(entries[0].completion.empty());

  HttpBackend unreachable(http_config("http://127.0.0.1:1", 0));
  CHECK_THROWS_AS(unreachable.complete("x"), TransportError);
}

TEST_CASE("malformed completion body is a backend error") {
  StubServer server([](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"choices":[]})", "application/json");
  });
  HttpBackend backend(http_config(server.url(), 0));
  CHECK_THROWS_AS(backend.complete("x"), BackendError);
}

TEST_CASE("at most max_parallel requests in flight") {
  SlowBackend backend(3);
  parallel_for(64, 16, [&](std::size_t i) { backend.complete("p" + std::to_string(i)); });
  CHECK(backend.observed_max.load() <= 3);
  CHECK(backend.peak_in_flight() <= 3);
  CHECK(backend.peak_in_flight() >= 2);
  CHECK(backend.call_count() == 64);
}

TEST_CASE("run log orders by tag then call order") {
  auto mock = register_mock({{MatchKind::kContains, "", "ok", false}}, "m", 8);
  auto log = std::make_shared<RunLog>();
  mock->attach_log(log);
  parallel_for(8, 8, [&](std::size_t i) {
    for (int r = 0; r < 3; ++r) mock->complete("case" + std::to_string(i) + " round" + std::to_string(r),
                                                "case" + std::to_string(i));
  });
  const auto entries = log->drain_sorted();
  REQUIRE(entries.size() == 24);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    CHECK(entries[i].tag == "case" + std::to_string(i / 3));
    CHECK(entries[i].seq == i % 3);
    CHECK(entries[i].prompt == entries[i].tag + " round" + std::to_string(i % 3));
  }
  CHECK(log->size() == 0);
}

TEST_CASE("backend config") {
  const auto j = nlohmann::json::parse(R"({"kind":"http","base_url":"http://a:1","model":"m","max_parallel":2})");
  ::unsetenv("FACTGUARD_LM_BASE_URL");
  ::unsetenv("FACTGUARD_LM_TOKEN");
  auto c = BackendConfig::from_json(j);
  CHECK(c.base_url == "http://a:1");
  CHECK(c.temperature == 0.0);
  CHECK(c.max_tokens == 512);
  CHECK(c.path == "/v1/chat/completions");

  ::setenv("FACTGUARD_LM_BASE_URL", "http://override:2", 1);
  ::setenv("FACTGUARD_LM_TOKEN", "secret", 1);
  c = BackendConfig::from_json(j);
  CHECK(c.base_url == "http://override:2");
  CHECK(c.bearer_token == "secret");
  CHECK_FALSE(c.to_json().contains("bearer_token"));
  ::unsetenv("FACTGUARD_LM_BASE_URL");
  ::unsetenv("FACTGUARD_LM_TOKEN");

  CHECK_THROWS_AS(BackendConfig::from_json(nlohmann::json::parse(R"({"kind":"http","base_url":"x","max_parallel":0})")),
                  ConfigError);
  CHECK_THROWS_AS(BackendConfig::from_json(nlohmann::json::parse(R"({"kind":"http","base_url":"x","retry_limit":-1})")),
                  ConfigError);
  CHECK_THROWS_AS(BackendConfig::from_json(nlohmann::json::parse(R"({"kind":"grpc"})")), ConfigError);
  CHECK_THROWS_AS(BackendConfig::from_json(nlohmann::json::parse(R"({"kind":"mock"})")), ConfigError);
}

TEST_CASE("bearer token is sent") {
  std::string seen;
  StubServer server([&](const httplib::Request& req, httplib::Response& res) {
    seen = req.get_header_value("Authorization");
    res.set_content(completion_body("ok"), "application/json");
  });
  auto cfg = http_config(server.url(), 0);
  cfg.bearer_token = "tok";
  HttpBackend backend(cfg);
  CHECK(backend.complete("x") == "ok");
  CHECK(seen == "Bearer tok");
}
