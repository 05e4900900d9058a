#include "factguard/verifier_gateway.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include <httplib.h>

#include "factguard/errors.hpp"
#include "factguard/http_util.hpp"
#include "factguard/jsonl.hpp"
#include "factguard/parallel.hpp"
#include "factguard/rng.hpp"

namespace factguard::verifier {

int FoldPlan::fold_of(const std::string& case_id) const {
  const auto it = assignment.find(case_id);
  if (it == assignment.end()) throw ContractViolation("case " + case_id + " is not in the fold plan");
  return it->second;
}

nlohmann::ordered_json FoldPlan::to_json() const {
  nlohmann::ordered_json j;
  j["k"] = k;
  j["seed"] = seed;
  nlohmann::ordered_json a = nlohmann::ordered_json::object();
  for (const auto& [id, fold] : assignment) a[id] = fold;
  j["assignment"] = std::move(a);
  return j;
}

FoldPlan FoldPlan::from_json(const nlohmann::json& j) {
  FoldPlan p;
  try {
    p.k = j.at("k").get<int>();
    p.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [id, fold] : j.at("assignment").items()) {
      const int f = fold.get<int>();
      if (f < 0 || f >= p.k) throw ParseError("fold index out of range for case " + id);
      p.assignment[id] = f;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("fold plan: ") + e.what());
  }
  return p;
}

FoldPlan plan_folds(const std::vector<dataset::CaseRecord>& cases, int k, std::uint64_t seed) {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (static_cast<std::size_t>(k) > cases.size()) {
    throw ConfigError("k=" + std::to_string(k) + " exceeds the number of cases (" + std::to_string(cases.size()) + ")");
  }
  std::vector<std::string> by_label[2];
  for (const auto& c : cases) by_label[c.label == 1 ? 1 : 0].push_back(c.id);
  if (by_label[0].empty() || by_label[1].empty()) throw ConfigError("plan_folds needs both labels present");

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  Rng rng(seed);
  // Round-robin continues across labels so fold sizes also differ by <= 1.
  int next_fold = 0;
  for (int label : {1, 0}) {
    auto& ids = by_label[label];
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ConfigError("duplicate case id in plan_folds");
    rng.shuffle(std::span<std::string>(ids));
    for (const auto& id : ids) {
      plan.assignment[id] = next_fold;
      next_fold = (next_fold + 1) % k;
    }
  }
  return plan;
}

namespace {

void check_prob(double prob, const std::string& where) {
  if (!std::isfinite(prob) || prob < 0.0 || prob > 1.0) {
    throw ProtocolError(where + ": probability " + std::to_string(prob) + " outside [0,1]");
  }
}

}  // namespace

nlohmann::ordered_json VerifierScore::to_json() const {
  nlohmann::ordered_json j;
  j["case_id"] = case_id;
  j["round"] = round;
  j["point_index"] = point_index;
  j["prob"] = prob;
  j["scorer_id"] = scorer_id;
  j["trained_on_folds"] = std::vector<int>(trained_on_folds.begin(), trained_on_folds.end());
  return j;
}

nlohmann::ordered_json AuditRow::to_json() const {
  nlohmann::ordered_json j;
  j["case_id"] = case_id;
  j["round"] = round;
  j["point_index"] = point_index;
  j["fold"] = fold;
  j["scorer_id"] = scorer_id;
  j["deployment"] = deployment;
  j["trained_on_folds"] = std::vector<int>(trained_on_folds.begin(), trained_on_folds.end());
  j["prob"] = prob;
  j["leakage"] = trained_on_folds.count(fold) > 0;
  return j;
}

void AuditLog::append(AuditRow row) {
  std::lock_guard lock(mu_);
  rows_.push_back(std::move(row));
}

std::vector<AuditRow> AuditLog::rows() const {
  std::lock_guard lock(mu_);
  auto out = rows_;
  std::stable_sort(out.begin(), out.end(), [](const AuditRow& a, const AuditRow& b) {
    return std::tie(a.scorer_id, a.case_id, a.round, a.point_index) <
           std::tie(b.scorer_id, b.case_id, b.round, b.point_index);
  });
  return out;
}

HttpDeployment::HttpDeployment(std::string url, std::chrono::milliseconds timeout)
    : url_(std::move(url)), timeout_(timeout) {
  std::tie(host_, prefix_) = http::split_url(url_);
}

std::set<int> HttpDeployment::trained_on_folds() {
  std::lock_guard lock(mu_);
  if (info_) return *info_;
  httplib::Client client(host_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  const auto res = client.Get(prefix_ + "/info");
  if (!res) throw TransportError("scorer " + url_ + " unavailable: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw ProtocolError("scorer " + url_ + " /info returned HTTP " + std::to_string(res->status));
  }
  try {
    const auto j = nlohmann::json::parse(res->body);
    std::set<int> folds;
    for (const auto& f : j.at("trained_on_folds")) folds.insert(f.get<int>());
    info_ = folds;
    return folds;
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError("scorer " + url_ + " /info: " + e.what());
  }
}

double HttpDeployment::score(const std::string& context, const std::string& claim, int fold) {
  httplib::Client client(host_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  const nlohmann::json body = {{"context", context}, {"claim", claim}, {"fold", fold}};
  const auto res = client.Post(prefix_ + "/score", body.dump(), "application/json");
  if (!res) throw TransportError("scorer " + url_ + " unavailable: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw ProtocolError("scorer " + url_ + " /score returned HTTP " + std::to_string(res->status) + ": " +
                        http::excerpt(res->body));
  }
  try {
    return nlohmann::json::parse(res->body).at("prob").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError("scorer " + url_ + " /score: " + e.what());
  }
}

FunctionDeployment::FunctionDeployment(std::string id, std::set<int> trained_on, ScoreFn fn)
    : id_(std::move(id)), trained_on_(std::move(trained_on)), fn_(std::move(fn)) {}

double FunctionDeployment::score(const std::string& context, const std::string& claim, int fold) {
  return fn_(context, claim, fold);
}

Scorer make_kfold_scorer(const std::string& id, int k, const FunctionDeployment::ScoreFn& fn) {
  Scorer s{id, {}};
  for (int held_out = 0; held_out < k; ++held_out) {
    std::set<int> trained;
    for (int f = 0; f < k; ++f) {
      if (f != held_out) trained.insert(f);
    }
    s.deployments.push_back(
        std::make_shared<FunctionDeployment>(id + "/fold" + std::to_string(held_out), std::move(trained), fn));
  }
  return s;
}

std::vector<VerifierScore> collect_scores(const FoldPlan& plan, const std::vector<PointRef>& points, Scorer& scorer,
                                          AuditLog* audit, int parallelism) {
  if (scorer.deployments.empty()) throw ConfigError("scorer " + scorer.id + " has no deployments");
  // /info once per deployment.
  std::vector<std::set<int>> trained;
  trained.reserve(scorer.deployments.size());
  for (auto& d : scorer.deployments) trained.push_back(d->trained_on_folds());

  std::vector<VerifierScore> out(points.size());
  parallel_for(points.size(), parallelism, [&](std::size_t i) {
    const auto& p = points[i];
    const int fold = plan.fold_of(p.case_id);
    std::size_t chosen = trained.size();
    for (std::size_t d = 0; d < trained.size(); ++d) {
      if (!trained[d].count(fold)) {
        chosen = d;
        break;
      }
    }
    if (chosen == trained.size()) {
      throw LeakageError("scorer " + scorer.id + " has no deployment held out from fold " + std::to_string(fold) +
                         " (case " + p.case_id + ")");
    }
    auto& deployment = *scorer.deployments[chosen];
    const double prob = deployment.score(p.context, p.claim, fold);
    check_prob(prob, "scorer " + deployment.id() + " for case " + p.case_id);
    out[i] = VerifierScore{p.case_id, p.round, p.point_index, prob, scorer.id, trained[chosen]};
    if (audit) {
      audit->append({p.case_id, p.round, p.point_index, fold, scorer.id, deployment.id(), trained[chosen], prob});
    }
  });
  return out;
}

std::vector<std::string> audit_violations(const FoldPlan& plan, const std::vector<VerifierScore>& scores) {
  std::vector<std::string> out;
  for (const auto& s : scores) {
    const auto it = plan.assignment.find(s.case_id);
    if (it == plan.assignment.end()) {
      out.push_back("case " + s.case_id + " is not in the fold plan");
    } else if (s.trained_on_folds.count(it->second)) {
      out.push_back("case " + s.case_id + " (fold " + std::to_string(it->second) + ") scored by " + s.scorer_id +
                    " trained on its own fold");
    }
  }
  return out;
}

int threshold_predict(double prob) {
  if (!std::isfinite(prob) || prob < 0.0 || prob > 1.0) {
    throw ContractViolation("threshold_predict: probability outside [0,1]");
  }
  return prob >= 0.5 ? 1 : 0;
}

VerifierScore score_from_json(const nlohmann::json& j) {
  static const char* kRequired[] = {"case_id", "round", "point_index", "prob", "scorer_id", "trained_on_folds"};
  for (const char* field : kRequired) {
    if (!j.contains(field)) throw ParseError(std::string("missing field '") + field + "'");
  }
  VerifierScore s;
  try {
    s.case_id = j.at("case_id").get<std::string>();
    s.round = j.at("round").get<int>();
    s.point_index = j.at("point_index").get<int>();
    s.prob = j.at("prob").get<double>();
    s.scorer_id = j.at("scorer_id").get<std::string>();
    for (const auto& f : j.at("trained_on_folds")) s.trained_on_folds.insert(f.get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad score field: ") + e.what());
  }
  return s;
}

std::vector<VerifierScore> import_scores(const std::filesystem::path& path, const FoldPlan& plan) {
  std::vector<VerifierScore> scores;
  std::set<std::tuple<std::string, std::string, int, int>> seen;
  jsonl::for_each(path, [&](const nlohmann::json& row, long line) {
    VerifierScore s;
    try {
      s = score_from_json(row);
    } catch (const ParseError& e) {
      throw ParseError(path.filename().string() + " line " + std::to_string(line) + ": " + e.what(), line);
    }
    check_prob(s.prob, path.filename().string() + " line " + std::to_string(line));
    const auto it = plan.assignment.find(s.case_id);
    if (it == plan.assignment.end()) {
      throw ParseError(path.filename().string() + " line " + std::to_string(line) + ": case " + s.case_id +
                           " is not in the fold plan",
                       line);
    }
    if (s.trained_on_folds.count(it->second)) {
      throw LeakageError("leakage: case " + s.case_id + " (fold " + std::to_string(it->second) +
                         ") was scored by a model trained on that fold (line " + std::to_string(line) + ")");
    }
    if (!seen.insert({s.scorer_id, s.case_id, s.round, s.point_index}).second) {
      throw ParseError(path.filename().string() + " line " + std::to_string(line) + ": duplicate score for case " +
                           s.case_id + " point " + std::to_string(s.point_index),
                       line);
    }
    scores.push_back(std::move(s));
  });
  return scores;
}

}  // namespace factguard::verifier
