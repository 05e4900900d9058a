#pragma once

#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "factguard/dataset.hpp"
#include "factguard/lm_client.hpp"
#include "factguard/parser.hpp"
#include "factguard/prompts.hpp"
#include "factguard/verifier_gateway.hpp"

namespace factguard::feedback {

enum class Source { kOracle, kVerifier, kSelfReflection, kFinetunedSlm };
enum class Granularity { kSinglePoint, kEntireContent };

std::string_view source_name(Source s);  // oracle | verifier | self_reflection | finetuned_slm
Source source_from_name(std::string_view name);
std::string_view granularity_name(Granularity g);  // single_point | entire_content
Granularity granularity_from_name(std::string_view name);

struct FlaggedPoint {
  int index = 0;
  std::string text;

  bool operator==(const FlaggedPoint&) const = default;
};

struct FeedbackBundle {
  std::string case_id;
  int round = 0;
  Source source = Source::kOracle;
  Granularity granularity = Granularity::kSinglePoint;
  std::string scorer_id;  // verifier bundles only
  std::vector<FlaggedPoint> flagged_points;
  int unparseable_answers = 0;

  bool empty() const { return flagged_points.empty(); }
  nlohmann::ordered_json to_json() const;
};

struct AnnotationRecord {
  std::string case_id;
  int round = 0;
  int point_index = 0;
  int hallucinated = 0;
  std::string annotator;
  std::string timestamp;  // ISO-8601 UTC

  nlohmann::ordered_json to_json() const;
  static AnnotationRecord from_json(const nlohmann::json& j);
};

// point index -> resolved judgment for one (case, round). A later record from
// the same annotator replaces an earlier one; several annotators are combined
// by majority vote with ties resolved to 1.
std::map<int, int> resolve_annotations(const std::vector<AnnotationRecord>& records, const std::string& case_id,
                                       int round);

FeedbackBundle oracle_flags(const parser::Generation& generation, const std::vector<AnnotationRecord>& annotations);

FeedbackBundle verifier_flags(const parser::Generation& generation,
                              const std::vector<verifier::VerifierScore>& scores);

// Per-point yes/no probing through `backend`. Self-reflection and the
// fine-tuned feedback model share this path and differ only in backend.
FeedbackBundle probe_flags(const parser::Generation& generation, const dataset::CaseRecord& case_record,
                           lm::Backend& backend, const prompts::PromptSet& prompt_set, Source source);

FeedbackBundle self_reflection_flags(const parser::Generation& generation, const dataset::CaseRecord& case_record,
                                     lm::Backend& backend, const prompts::PromptSet& prompt_set);

FeedbackBundle finetuned_slm_flags(const parser::Generation& generation, const dataset::CaseRecord& case_record,
                                   lm::Backend& backend, const prompts::PromptSet& prompt_set);

// One judgment over the whole reasoning. When judged erroneous every point is
// flagged and the refinement receives the full reasoning text.
FeedbackBundle entire_content_flags(const parser::Generation& generation, const dataset::CaseRecord& case_record,
                                    lm::Backend& backend, const prompts::PromptSet& prompt_set,
                                    Source source = Source::kSelfReflection);
FeedbackBundle entire_content_flags(const parser::Generation& generation,
                                    const std::vector<AnnotationRecord>& annotations);

// Text substituted for {F}.
std::vector<std::string> feedback_lines(const parser::Generation& generation, const FeedbackBundle& bundle);

inline constexpr std::string_view kNoFeedbackSkip = "no_feedback_skip";

parser::Generation run_refinement(const dataset::CaseRecord& case_record, const parser::Generation& generation,
                                  const FeedbackBundle& bundle, lm::Backend& backend,
                                  const prompts::PromptSet& prompt_set);

using FeedbackFn = std::function<FeedbackBundle(const parser::Generation&)>;

struct RoundTrace {
  std::vector<parser::Generation> generations;  // index r = round r
  std::vector<FeedbackBundle> bundles;          // bundles[r] computed on round r
};

// rounds refinement rounds after `initial`. Each round's feedback is computed
// on the latest generation and its prompt carries only the original
// attributes and that latest response.
RoundTrace run_multi_round(const dataset::CaseRecord& case_record, const parser::Generation& initial, int rounds,
                           const FeedbackFn& feedback, lm::Backend& backend, const prompts::PromptSet& prompt_set);

}  // namespace factguard::feedback
