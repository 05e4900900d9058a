#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "factguard/dataset.hpp"

namespace factguard::verifier {

// Stratified k-fold assignment of cases. Built from the sorted case ids of
// each label, so it depends only on (seed, case id set).
struct FoldPlan {
  int k = 3;
  std::uint64_t seed = 0;
  std::map<std::string, int> assignment;  // case id -> fold in [0, k)

  int fold_of(const std::string& case_id) const;  // throws ContractViolation

  nlohmann::ordered_json to_json() const;
  static FoldPlan from_json(const nlohmann::json& j);
};

FoldPlan plan_folds(const std::vector<dataset::CaseRecord>& cases, int k, std::uint64_t seed);

struct VerifierScore {
  std::string case_id;
  int round = 0;
  int point_index = 0;
  double prob = 0.0;
  std::string scorer_id;
  std::set<int> trained_on_folds;

  nlohmann::ordered_json to_json() const;
};

// One reasoning point awaiting a score.
struct PointRef {
  std::string case_id;
  int round = 0;
  int point_index = 0;
  std::string context;  // rendered attributes
  std::string claim;    // point text
};

// A scorer model trained on some folds. Scoring requests carry the held-out
// fold of the case so a multi-fold service can route internally.
class FoldDeployment {
 public:
  virtual ~FoldDeployment() = default;
  virtual std::string id() const = 0;
  virtual std::set<int> trained_on_folds() = 0;
  virtual double score(const std::string& context, const std::string& claim, int fold) = 0;
};

// Speaks the HTTP scoring protocol: GET /info and POST /score.
class HttpDeployment final : public FoldDeployment {
 public:
  explicit HttpDeployment(std::string url, std::chrono::milliseconds timeout = std::chrono::milliseconds(30000));

  std::string id() const override { return url_; }
  std::set<int> trained_on_folds() override;
  double score(const std::string& context, const std::string& claim, int fold) override;

 private:
  std::string url_;
  std::string host_;
  std::string prefix_;
  std::chrono::milliseconds timeout_;
  std::mutex mu_;
  std::optional<std::set<int>> info_;
};

// In-process deployment backed by a function; used for tests and fixtures.
class FunctionDeployment final : public FoldDeployment {
 public:
  using ScoreFn = std::function<double(const std::string& context, const std::string& claim, int fold)>;
  FunctionDeployment(std::string id, std::set<int> trained_on, ScoreFn fn);

  std::string id() const override { return id_; }
  std::set<int> trained_on_folds() override { return trained_on_; }
  double score(const std::string& context, const std::string& claim, int fold) override;

 private:
  std::string id_;
  std::set<int> trained_on_;
  ScoreFn fn_;
};

struct Scorer {
  std::string id;
  std::vector<std::shared_ptr<FoldDeployment>> deployments;
};

// Standard k-fold layout: deployment f trained on every fold except f.
Scorer make_kfold_scorer(const std::string& id, int k, const FunctionDeployment::ScoreFn& fn);

struct AuditRow {
  std::string case_id;
  int round = 0;
  int point_index = 0;
  int fold = 0;
  std::string scorer_id;
  std::string deployment;
  std::set<int> trained_on_folds;
  double prob = 0.0;

  nlohmann::ordered_json to_json() const;
};

class AuditLog {
 public:
  void append(AuditRow row);
  std::vector<AuditRow> rows() const;

 private:
  mutable std::mutex mu_;
  std::vector<AuditRow> rows_;
};

// One score per point, in input order, each from a deployment that never saw
// the case's fold. Up to `parallelism` requests are issued at once.
std::vector<VerifierScore> collect_scores(const FoldPlan& plan, const std::vector<PointRef>& points,
                                          Scorer& scorer, AuditLog* audit = nullptr, int parallelism = 1);

// Scores whose case fold is among their training folds, as messages.
std::vector<std::string> audit_violations(const FoldPlan& plan, const std::vector<VerifierScore>& scores);

int threshold_predict(double prob);

std::vector<VerifierScore> import_scores(const std::filesystem::path& path, const FoldPlan& plan);
VerifierScore score_from_json(const nlohmann::json& j);  // throws ParseError on missing fields

}  // namespace factguard::verifier
