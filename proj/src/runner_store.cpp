#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <set>
#include <tuple>

#include "factguard/errors.hpp"
#include "factguard/jsonl.hpp"
#include "factguard/runner.hpp"

namespace factguard::runner {

namespace fs = std::filesystem;

std::string verifier_arm(const std::string& scorer_id) { return "verifier:" + scorer_id; }

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

lm::BackendConfig backend_from_json(const nlohmann::json& j, const fs::path& base) {
  auto cfg = lm::BackendConfig::from_json(j);
  if (!cfg.mock_script.empty()) cfg.mock_script = resolve(base, cfg.mock_script.string());
  return cfg;
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  RunConfig c;
  try {
    c.model_label = j.value("model_label", c.model_label);
    const auto& ds = j.at("dataset");
    c.dataset_path = resolve(base_dir, ds.value("path", std::string()));
    c.dataset = dataset::PreprocessConfig::from_json(ds);
    c.prompts_dir = resolve(base_dir, j.value("prompts_dir", std::string()));
    const auto& backends = j.at("backends");
    c.generation = backend_from_json(backends.at("generation"), base_dir);
    if (backends.contains("self_reflection")) {
      c.self_reflection = backend_from_json(backends.at("self_reflection"), base_dir);
    }
    if (backends.contains("finetuned_slm")) {
      c.finetuned_slm = backend_from_json(backends.at("finetuned_slm"), base_dir);
    }
    for (const auto& s : j.value("scorers", nlohmann::json::array())) {
      ScorerConfig sc;
      sc.id = s.at("id").get<std::string>();
      sc.kind = s.value("kind", sc.kind);
      sc.endpoints = s.value("endpoints", std::vector<std::string>{});
      sc.path = resolve(base_dir, s.value("path", std::string()));
      sc.parallelism = s.value("parallelism", sc.parallelism);
      c.scorers.push_back(std::move(sc));
    }
    if (j.contains("folds")) {
      c.folds = j.at("folds").value("k", c.folds);
      c.fold_seed = j.at("folds").value("seed", c.fold_seed);
    }
    if (j.contains("feedback_sources")) {
      c.feedback_sources.clear();
      for (const auto& s : j.at("feedback_sources")) {
        c.feedback_sources.push_back(feedback::source_from_name(s.get<std::string>()));
      }
    }
    c.granularity = feedback::granularity_from_name(j.value("granularity", std::string("single_point")));
    c.rounds = j.value("rounds", c.rounds);
    c.rounds_granularity =
        feedback::granularity_from_name(j.value("rounds_granularity", std::string("entire_content")));
    c.density_bins = j.value("density_bins", c.density_bins);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return from_json(j, fs::absolute(path).parent_path());
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["model_label"] = model_label;
  auto ds = nlohmann::ordered_json::parse(dataset.to_json().dump());
  ds["path"] = dataset_path.string();
  j["dataset"] = ds;
  j["prompts_dir"] = prompts_dir.string();
  nlohmann::ordered_json backends;
  backends["generation"] = nlohmann::ordered_json::parse(generation.to_json().dump());
  if (self_reflection) backends["self_reflection"] = nlohmann::ordered_json::parse(self_reflection->to_json().dump());
  if (finetuned_slm) backends["finetuned_slm"] = nlohmann::ordered_json::parse(finetuned_slm->to_json().dump());
  j["backends"] = backends;
  nlohmann::ordered_json scorers_json = nlohmann::ordered_json::array();
  for (const auto& s : scorers) {
    nlohmann::ordered_json sj;
    sj["id"] = s.id;
    sj["kind"] = s.kind;
    if (s.kind == "http") sj["endpoints"] = s.endpoints;
    else sj["path"] = s.path.string();
    sj["parallelism"] = s.parallelism;
    scorers_json.push_back(sj);
  }
  j["scorers"] = scorers_json;
  j["folds"] = {{"k", folds}, {"seed", fold_seed}};
  nlohmann::ordered_json sources = nlohmann::ordered_json::array();
  for (auto s : feedback_sources) sources.push_back(feedback::source_name(s));
  j["feedback_sources"] = sources;
  j["granularity"] = feedback::granularity_name(granularity);
  j["rounds"] = rounds;
  j["rounds_granularity"] = feedback::granularity_name(rounds_granularity);
  j["density_bins"] = density_bins;
  return j;
}

void RunConfig::validate() const {
  generation.validate();
  if (self_reflection) self_reflection->validate();
  if (finetuned_slm) finetuned_slm->validate();
  if (folds < 1) throw ConfigError("folds.k must be >= 1");
  if (rounds < 0) throw ConfigError("rounds must be >= 0");
  if (density_bins < 2) throw ConfigError("density_bins must be >= 2");
  std::set<std::string> ids;
  for (const auto& s : scorers) {
    if (!ids.insert(s.id).second) throw ConfigError("duplicate scorer id " + s.id);
    if (s.kind == "http" && s.endpoints.empty()) throw ConfigError("scorer " + s.id + " needs endpoints");
    if (s.kind == "file" && s.path.empty()) throw ConfigError("scorer " + s.id + " needs path");
    if (s.kind != "http" && s.kind != "file") throw ConfigError("scorer " + s.id + ": kind must be http or file");
    if (s.parallelism < 1) throw ConfigError("scorer " + s.id + ": parallelism must be >= 1");
  }
  for (auto src : feedback_sources) {
    if (src == feedback::Source::kFinetunedSlm && !finetuned_slm) {
      throw ConfigError("feedback source finetuned_slm needs backends.finetuned_slm");
    }
  }
}

Backends Backends::from_config(const RunConfig& config) {
  Backends b;
  b.generation = lm::make_backend("generation", config.generation);
  b.self_reflection =
      config.self_reflection ? lm::make_backend("self_reflection", *config.self_reflection) : b.generation;
  if (config.finetuned_slm) b.finetuned_slm = lm::make_backend("finetuned_slm", *config.finetuned_slm);
  b.attach_log();
  return b;
}

void Backends::attach_log() {
  for (auto* backend : {&generation, &self_reflection, &finetuned_slm}) {
    if (*backend) (*backend)->attach_log(log);
  }
}

const dataset::CaseRecord& RunRecord::case_by_id(const std::string& id) const {
  for (const auto& c : cases) {
    if (c.id == id) return c;
  }
  throw NotFoundError("unknown case " + id);
}

const parser::Generation* RunRecord::find(const std::string& arm, const std::string& case_id, int round) const {
  const auto a = generations.find(arm);
  if (a == generations.end()) return nullptr;
  const auto c = a->second.find(case_id);
  if (c == a->second.end()) return nullptr;
  const auto r = c->second.find(round);
  return r == c->second.end() ? nullptr : &r->second;
}

const parser::Generation* RunRecord::latest(const std::string& arm, const std::string& case_id) const {
  const auto a = generations.find(arm);
  if (a == generations.end()) return nullptr;
  const auto c = a->second.find(case_id);
  if (c == a->second.end() || c->second.empty()) return nullptr;
  return &c->second.rbegin()->second;
}

std::vector<std::string> RunRecord::arms() const {
  std::vector<std::string> out;
  for (const auto& [arm, _] : generations) out.push_back(arm);
  return out;
}

std::vector<std::string> RunRecord::scorer_ids() const {
  std::set<std::string> ids;
  for (const auto& s : scores) ids.insert(s.scorer_id);
  return {ids.begin(), ids.end()};
}

RunStore::RunStore(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

RunRecord RunStore::load() const {
  RunRecord r;
  if (fs::exists(file("cases.jsonl"))) r.cases = dataset::read_cases(file("cases.jsonl"));
  for (const auto& row : jsonl::read_all(file("generations.jsonl"))) {
    auto g = parser::generation_from_json(row);
    const auto arm = row.at("arm").get<std::string>();
    r.generations[arm][g.case_id][g.round] = std::move(g);
  }
  for (const auto& row : jsonl::read_all(file("annotations.jsonl"))) {
    r.annotations.push_back(feedback::AnnotationRecord::from_json(row));
  }
  if (fs::exists(file("folds.json"))) {
    std::ifstream in(file("folds.json"));
    r.plan = verifier::FoldPlan::from_json(nlohmann::json::parse(in));
  }
  // Later scores for the same (scorer, case, round, point) replace earlier ones.
  std::map<std::tuple<std::string, std::string, int, int>, std::size_t> score_slot;
  for (const auto& row : jsonl::read_all(file("scores.jsonl"))) {
    auto s = verifier::score_from_json(row);
    const auto key = std::make_tuple(s.scorer_id, s.case_id, s.round, s.point_index);
    if (const auto it = score_slot.find(key); it != score_slot.end()) {
      r.scores[it->second] = std::move(s);
    } else {
      score_slot[key] = r.scores.size();
      r.scores.push_back(std::move(s));
    }
  }
  for (const auto& row : jsonl::read_all(file("arm_status.jsonl"))) {
    const auto arm = row.at("arm").get<std::string>();
    const auto error = row.value("error", std::string());
    if (error.empty()) r.arm_errors.erase(arm);
    else r.arm_errors[arm] = error;
  }
  return r;
}

void RunStore::write_config(const RunConfig& config) const {
  std::ofstream out(file("config.json"), std::ios::trunc);
  out << config.to_json().dump(2) << '\n';
}

void RunStore::write_cases(const std::vector<dataset::CaseRecord>& cases) const {
  dataset::write_cases(file("cases.jsonl"), cases);
}

void RunStore::append_generations(const std::vector<ArmGeneration>& rows) const {
  jsonl::Appender out(file("generations.jsonl"));
  for (const auto& row : rows) {
    nlohmann::ordered_json j;
    j["arm"] = row.arm;
    const auto body = parser::generation_to_json(row.generation);
    for (const auto& [k, v] : body.items()) j[k] = v;
    out.append(j);
  }
}

void RunStore::append_bundles(const std::string& arm, const std::vector<feedback::FeedbackBundle>& bundles) const {
  jsonl::Appender out(file("bundles.jsonl"));
  for (const auto& b : bundles) {
    nlohmann::ordered_json j;
    j["arm"] = arm;
    const auto body = b.to_json();
    for (const auto& [k, v] : body.items()) j[k] = v;
    out.append(j);
  }
}

void RunStore::append_annotation(const feedback::AnnotationRecord& record) const {
  jsonl::Appender(file("annotations.jsonl")).append(record.to_json());
}

void RunStore::append_exchanges(const std::vector<lm::CompletionExchange>& exchanges) const {
  jsonl::Appender out(file("exchanges.jsonl"));
  for (const auto& ex : exchanges) out.append(ex.to_json());
}

void RunStore::append_arm_status(const std::string& arm, const std::string& error) const {
  nlohmann::ordered_json j;
  j["arm"] = arm;
  j["error"] = error;
  jsonl::Appender(file("arm_status.jsonl")).append(j);
}

void RunStore::write_plan(const verifier::FoldPlan& plan) const {
  std::ofstream out(file("folds.json"), std::ios::trunc);
  out << plan.to_json().dump(2) << '\n';
}

void RunStore::append_scores(const std::vector<verifier::VerifierScore>& scores) const {
  jsonl::Appender out(file("scores.jsonl"));
  for (const auto& s : scores) out.append(s.to_json());
}

void RunStore::append_audit(const std::vector<verifier::AuditRow>& rows) const {
  jsonl::Appender out(file("score_audit.jsonl"));
  for (const auto& r : rows) out.append(r.to_json());
}

RunLock::RunLock(const fs::path& dir) {
  fs::create_directories(dir);
  const auto path = dir / ".lock";
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
  if (fd_ < 0) throw ConfigError("cannot open lock file " + path.string() + ": " + std::strerror(errno));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw ConfigError("run directory " + dir.string() + " is locked by another writer");
  }
}

RunLock::~RunLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

}  // namespace factguard::runner
