#include "factguard/annotation_server.hpp"

#include <chrono>
#include <ctime>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "factguard/errors.hpp"

namespace factguard::runner {

namespace fs = std::filesystem;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::file_time_type mtime(const fs::path& p) {
  std::error_code ec;
  const auto t = fs::last_write_time(p, ec);
  return ec ? fs::file_time_type::min() : t;
}

void send_json(httplib::Response& res, int status, const nlohmann::ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

}  // namespace

struct AnnotationServer::Impl {
  RunStore store;
  AnnotationServerOptions options;
  mutable std::mutex mu;
  mutable RunRecord record;
  mutable fs::file_time_type generations_mtime = fs::file_time_type::min();
  httplib::Server server;
  std::thread thread;
  int bound_port = -1;

  Impl(RunStore s, AnnotationServerOptions o) : store(std::move(s)), options(std::move(o)) {}

  // Picks up generations written by a pipeline step while the server runs.
  void refresh() const {
    const auto t = mtime(store.file("generations.jsonl"));
    if (t != generations_mtime) {
      record = store.load();
      generations_mtime = t;
    }
  }

  // round -> generation shown to annotators: the initial output, then the
  // oracle arm's refinements.
  std::map<int, const parser::Generation*> rounds_of(const std::string& case_id) const {
    std::map<int, const parser::Generation*> out;
    if (const auto* g = record.find(kArmInitial, case_id, 0)) out[0] = g;
    if (const auto a = record.generations.find(kArmOracle); a != record.generations.end()) {
      if (const auto c = a->second.find(case_id); c != a->second.end()) {
        for (const auto& [r, g] : c->second) {
          if (r > 0) out[r] = &g;
        }
      }
    }
    return out;
  }

  std::pair<std::size_t, std::size_t> round0_progress(const std::string& case_id) const {
    const auto* g = record.find(kArmInitial, case_id, 0);
    if (!g) return {0, 0};
    const auto resolved = feedback::resolve_annotations(record.annotations, case_id, 0);
    std::size_t done = 0;
    for (const auto& p : g->points) done += resolved.count(p.index);
    return {done, g->points.size()};
  }
};

AnnotationServer::AnnotationServer(RunStore store, AnnotationServerOptions options)
    : impl_(std::make_unique<Impl>(std::move(store), std::move(options))) {
  std::lock_guard lock(impl_->mu);
  impl_->refresh();
}

AnnotationServer::~AnnotationServer() { stop(); }

nlohmann::ordered_json AnnotationServer::list_cases(const std::string& status) const {
  if (status != "pending" && status != "all") throw SchemaError("status must be pending or all");
  std::lock_guard lock(impl_->mu);
  impl_->refresh();
  nlohmann::ordered_json pending = nlohmann::ordered_json::array();
  nlohmann::ordered_json complete = nlohmann::ordered_json::array();
  for (const auto& c : impl_->record.cases) {
    if (!impl_->record.find(kArmInitial, c.id, 0)) continue;
    const auto [done, total] = impl_->round0_progress(c.id);
    const bool finished = done == total;
    nlohmann::ordered_json j;
    j["id"] = c.id;
    j["status"] = finished ? "complete" : "pending";
    j["annotated"] = done;
    j["total"] = total;
    (finished ? complete : pending).push_back(std::move(j));
  }
  if (status == "all") {
    for (auto& j : complete) pending.push_back(std::move(j));
  }
  return pending;
}

nlohmann::ordered_json AnnotationServer::case_view(const std::string& case_id) const {
  std::lock_guard lock(impl_->mu);
  impl_->refresh();
  const auto& c = impl_->record.case_by_id(case_id);
  nlohmann::ordered_json j;
  j["id"] = c.id;
  nlohmann::ordered_json attributes = nlohmann::ordered_json::object();
  for (const auto& [name, value] : c.attributes) attributes[name] = value;
  j["attributes"] = attributes;
  nlohmann::ordered_json rounds = nlohmann::ordered_json::array();
  for (const auto& [r, g] : impl_->rounds_of(case_id)) {
    const auto resolved = feedback::resolve_annotations(impl_->record.annotations, case_id, r);
    nlohmann::ordered_json rj;
    rj["round"] = r;
    rj["decision"] = parser::decision_name(g->decision);
    nlohmann::ordered_json points = nlohmann::ordered_json::array();
    for (const auto& p : g->points) {
      nlohmann::ordered_json pj;
      pj["index"] = p.index;
      pj["text"] = p.text;
      if (const auto it = resolved.find(p.index); it != resolved.end()) pj["annotation"] = it->second;
      points.push_back(std::move(pj));
    }
    rj["points"] = std::move(points);
    rounds.push_back(std::move(rj));
  }
  j["rounds"] = std::move(rounds);
  return j;
}

nlohmann::ordered_json AnnotationServer::progress() const {
  std::lock_guard lock(impl_->mu);
  impl_->refresh();
  std::size_t annotated = 0, total = 0;
  for (const auto& c : impl_->record.cases) {
    const auto [done, n] = impl_->round0_progress(c.id);
    annotated += done;
    total += n;
  }
  return {{"annotated", annotated}, {"total", total}};
}

nlohmann::ordered_json AnnotationServer::annotate(const std::string& case_id, int round, int point_index,
                                                  const nlohmann::json& body) {
  if (!body.is_object()) throw SchemaError("body must be a JSON object");
  const auto h = body.find("hallucinated");
  if (h == body.end() || !h->is_number_integer() || (h->get<int>() != 0 && h->get<int>() != 1)) {
    throw SchemaError("hallucinated must be 0 or 1");
  }
  const auto a = body.find("annotator");
  if (a == body.end() || !a->is_string() || a->get<std::string>().empty()) {
    throw SchemaError("annotator must be a non-empty string");
  }
  std::lock_guard lock(impl_->mu);
  impl_->refresh();
  impl_->record.case_by_id(case_id);
  const auto rounds = impl_->rounds_of(case_id);
  const auto r = rounds.find(round);
  if (r == rounds.end()) throw NotFoundError("case " + case_id + " has no round " + std::to_string(round));
  const auto& points = r->second->points;
  const bool exists = std::any_of(points.begin(), points.end(),
                                  [&](const parser::ReasoningPoint& p) { return p.index == point_index; });
  if (!exists) {
    throw NotFoundError("case " + case_id + " round " + std::to_string(round) + " has no point " +
                        std::to_string(point_index));
  }
  feedback::AnnotationRecord rec{case_id, round, point_index, h->get<int>(), a->get<std::string>(), utc_now()};
  impl_->store.append_annotation(rec);
  impl_->record.annotations.push_back(rec);
  return rec.to_json();
}

int AnnotationServer::start() {
  auto& srv = impl_->server;
  // No SO_REUSEPORT: a second server on a busy port must fail to bind.
  srv.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof yes);
  });
  const auto token = impl_->options.bearer_token;
  srv.set_pre_routing_handler([token](const httplib::Request& req, httplib::Response& res) {
    if (token.empty() || req.path.rfind("/api/", 0) != 0) return httplib::Server::HandlerResponse::Unhandled;
    if (req.get_header_value("Authorization") != "Bearer " + token) {
      send_error(res, 401, "missing or invalid bearer token");
      return httplib::Server::HandlerResponse::Handled;
    }
    return httplib::Server::HandlerResponse::Unhandled;
  });

  auto guarded = [](auto&& fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const NotFoundError& e) {
        send_error(res, 404, e.what());
      } catch (const SchemaError& e) {
        send_error(res, 400, e.what());
      } catch (const nlohmann::json::exception& e) {
        send_error(res, 400, std::string("invalid JSON: ") + e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      }
    };
  };

  srv.Get("/api/cases", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const auto status = req.has_param("status") ? req.get_param_value("status") : "pending";
            send_json(res, 200, list_cases(status));
          }));
  srv.Get(R"(/api/cases/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
            send_json(res, 200, case_view(req.matches[1]));
          }));
  srv.Post(R"(/api/cases/([^/]+)/rounds/(\d+)/points/(\d+)/annotation)",
           guarded([this](const httplib::Request& req, httplib::Response& res) {
             const auto body = nlohmann::json::parse(req.body);
             send_json(res, 200,
                       annotate(req.matches[1], std::stoi(req.matches[2]), std::stoi(req.matches[3]), body));
           }));
  srv.Get("/api/progress", guarded([this](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, progress());
          }));
  if (!impl_->options.static_dir.empty()) {
    if (!srv.set_mount_point("/", impl_->options.static_dir.string())) {
      throw ConfigError("static directory " + impl_->options.static_dir.string() + " does not exist");
    }
  }

  const auto& host = impl_->options.host;
  if (impl_->options.port == 0) {
    impl_->bound_port = srv.bind_to_any_port(host);
  } else {
    impl_->bound_port = srv.bind_to_port(host, impl_->options.port) ? impl_->options.port : -1;
  }
  if (impl_->bound_port < 0) {
    throw Error("cannot bind " + host + ":" + std::to_string(impl_->options.port) + " (port busy?)");
  }
  impl_->thread = std::thread([&srv] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  return impl_->bound_port;
}

void AnnotationServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

void AnnotationServer::wait() {
  if (impl_->thread.joinable()) impl_->thread.join();
}

int AnnotationServer::port() const { return impl_->bound_port; }

}  // namespace factguard::runner
