#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "factguard/dataset.hpp"
#include "factguard/feedback.hpp"
#include "factguard/lm_client.hpp"
#include "factguard/parser.hpp"
#include "factguard/prompts.hpp"
#include "factguard/stats.hpp"
#include "factguard/verifier_gateway.hpp"

namespace factguard::runner {

// Generation arms. Verifier arms are "verifier:<scorer id>".
inline constexpr const char* kArmInitial = "initial";
inline constexpr const char* kArmOracle = "oracle";
inline constexpr const char* kArmSelfReflection = "self_reflection";
inline constexpr const char* kArmFinetuned = "finetuned_slm";
inline constexpr const char* kArmSinglePoint = "granularity:single_point";
inline constexpr const char* kArmEntireContent = "granularity:entire_content";
inline constexpr const char* kArmRounds = "rounds";
std::string verifier_arm(const std::string& scorer_id);

struct ScorerConfig {
  std::string id;
  std::string kind = "http";            // "http" | "file"
  std::vector<std::string> endpoints;   // http: one URL per fold deployment
  std::filesystem::path path;           // file: JSON-lines scores
  int parallelism = 1;
};

struct RunConfig {
  std::string model_label = "model";  // row label in every table
  std::filesystem::path dataset_path;
  dataset::PreprocessConfig dataset;
  std::filesystem::path prompts_dir;  // empty = built-in wording
  lm::BackendConfig generation;
  std::optional<lm::BackendConfig> self_reflection;  // defaults to generation
  std::optional<lm::BackendConfig> finetuned_slm;
  std::vector<ScorerConfig> scorers;
  int folds = 3;
  std::uint64_t fold_seed = 0;
  std::vector<feedback::Source> feedback_sources = {feedback::Source::kOracle, feedback::Source::kVerifier,
                                                    feedback::Source::kSelfReflection};
  feedback::Granularity granularity = feedback::Granularity::kSinglePoint;
  int rounds = 3;
  feedback::Granularity rounds_granularity = feedback::Granularity::kEntireContent;
  int density_bins = 10;

  // Relative paths resolve against `base_dir`.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static RunConfig from_file(const std::filesystem::path& path);
  nlohmann::ordered_json to_json() const;
  void validate() const;
};

// Model endpoints for one run, sharing a single exchange log.
struct Backends {
  std::shared_ptr<lm::Backend> generation;
  std::shared_ptr<lm::Backend> self_reflection;
  std::shared_ptr<lm::Backend> finetuned_slm;  // may be null
  std::shared_ptr<lm::RunLog> log = std::make_shared<lm::RunLog>();

  static Backends from_config(const RunConfig& config);
  void attach_log();
};

struct ArmGeneration {
  std::string arm;
  parser::Generation generation;
};

// Everything persisted under a run directory, loaded into memory. For a
// repeated (arm, case, round) the most recent record wins.
struct RunRecord {
  std::vector<dataset::CaseRecord> cases;
  std::map<std::string, std::map<std::string, std::map<int, parser::Generation>>> generations;  // arm/case/round
  std::vector<feedback::AnnotationRecord> annotations;
  std::vector<verifier::VerifierScore> scores;
  std::optional<verifier::FoldPlan> plan;
  std::map<std::string, std::string> arm_errors;  // arm -> failure message

  const dataset::CaseRecord& case_by_id(const std::string& id) const;
  const parser::Generation* find(const std::string& arm, const std::string& case_id, int round) const;
  const parser::Generation* latest(const std::string& arm, const std::string& case_id) const;
  std::vector<std::string> arms() const;
  std::vector<std::string> scorer_ids() const;
};

// Append-only JSON-lines persistence for one run directory.
class RunStore {
 public:
  explicit RunStore(std::filesystem::path dir);

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path file(const std::string& name) const { return dir_ / name; }
  std::filesystem::path reports_dir() const { return dir_ / "reports"; }

  RunRecord load() const;

  void write_config(const RunConfig& config) const;
  void write_cases(const std::vector<dataset::CaseRecord>& cases) const;
  void append_generations(const std::vector<ArmGeneration>& rows) const;
  void append_bundles(const std::string& arm, const std::vector<feedback::FeedbackBundle>& bundles) const;
  void append_annotation(const feedback::AnnotationRecord& record) const;
  void append_exchanges(const std::vector<lm::CompletionExchange>& exchanges) const;
  void append_arm_status(const std::string& arm, const std::string& error) const;
  void write_plan(const verifier::FoldPlan& plan) const;
  void append_scores(const std::vector<verifier::VerifierScore>& scores) const;
  void append_audit(const std::vector<verifier::AuditRow>& rows) const;

 private:
  std::filesystem::path dir_;
};

// Exclusive writer lock on a run directory, held for the object's lifetime.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  int fd_ = -1;
};

struct ArmMetrics {
  std::string arm;
  std::string label;  // table row label
  std::string status = "ok";  // ok | pending | failed: ...
  std::optional<double> f1;
  std::int64_t weighted_cost = 0;
  stats::Confusion confusion;
  std::size_t n = 0;

  nlohmann::ordered_json to_json() const;
};

struct AssociationRow {
  std::string model;
  std::string status = "ok";
  std::optional<double> pearson;
  std::optional<double> risk_difference;
  std::size_t n_cases = 0;
  std::size_t n_hallucinated = 0;
  std::size_t n_misclassified = 0;
};

struct DetectionRow {
  std::string model;
  std::string scorer;
  std::string status = "ok";
  std::optional<double> auprc;
  std::optional<double> balanced_accuracy;
  std::optional<double> wilcoxon_p;
  std::size_t n_points = 0;
  std::size_t n_positive = 0;
  stats::DensityHistogram density;
};

struct RoundMetrics {
  int round = 0;
  ArmMetrics metrics;
};

// Outcomes of one arm, taking each case's latest round (or `round` if set).
std::vector<stats::LabeledOutcome> arm_outcomes(const RunRecord& record, const std::string& arm,
                                                std::optional<int> round = std::nullopt);
ArmMetrics arm_metrics(const RunRecord& record, const std::string& arm, const std::string& label,
                       std::optional<int> round = std::nullopt);

// Resolved per-point judgments of each case's round-0 generation. Throws
// IncompleteAnnotationError listing every case with a gap.
std::map<std::string, std::map<int, int>> round0_annotations(const RunRecord& record);

// --- pipeline steps ---------------------------------------------------------

std::vector<dataset::CaseRecord> prepare(const RunConfig& config, const RunStore& store);

// Round-0 generation of every case. Backend failures degrade the case to an
// invalid decision and the run continues.
ArmMetrics run_initial(const RunConfig& config, const RunStore& store, Backends& backends);

AssociationRow run_association(const RunConfig& config, const RunRecord& record);

// Scores every round-0 point with every configured scorer.
void run_scoring(const RunConfig& config, const RunStore& store, const RunRecord& record,
                 std::map<std::string, verifier::Scorer> live_scorers = {});

std::vector<DetectionRow> run_detection_eval(const RunConfig& config, const RunRecord& record);

// One refinement round per configured source. A failing source marks only its
// own arm as failed.
std::vector<ArmMetrics> run_adaptive(const RunConfig& config, const RunStore& store, Backends& backends,
                                     const prompts::PromptSet& prompt_set);

std::vector<ArmMetrics> run_granularity_compare(const RunConfig& config, const RunStore& store,
                                                Backends& backends, const prompts::PromptSet& prompt_set);

std::vector<RoundMetrics> run_multi_round_experiment(const RunConfig& config, const RunStore& store,
                                                     Backends& backends, const prompts::PromptSet& prompt_set,
                                                     int rounds);

// --- reports ------------------------------------------------------------------

std::vector<ArmMetrics> adaptive_table(const RunConfig& config, const RunRecord& record);
std::vector<ArmMetrics> granularity_table(const RunConfig& config, const RunRecord& record);
std::vector<RoundMetrics> rounds_series(const RunConfig& config, const RunRecord& record);
AssociationRow association_table(const RunConfig& config, const RunRecord& record);  // pending on gaps
std::vector<DetectionRow> detection_table(const RunConfig& config, const RunRecord& record);

// Recomputes every table from the raw records under the run directory and
// writes CSV and JSON files plus a replay manifest into reports/.
std::vector<std::filesystem::path> emit_report(const RunConfig& config, const RunStore& store);

prompts::PromptSet load_prompts(const RunConfig& config);

}  // namespace factguard::runner
