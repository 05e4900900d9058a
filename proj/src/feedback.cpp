#include "factguard/feedback.hpp"

#include <algorithm>
#include <iostream>
#include <set>
#include <tuple>

#include "factguard/errors.hpp"

namespace factguard::feedback {

std::string_view source_name(Source s) {
  switch (s) {
    case Source::kOracle: return "oracle";
    case Source::kVerifier: return "verifier";
    case Source::kSelfReflection: return "self_reflection";
    case Source::kFinetunedSlm: return "finetuned_slm";
  }
  return "unknown";
}

Source source_from_name(std::string_view name) {
  if (name == "oracle") return Source::kOracle;
  if (name == "verifier") return Source::kVerifier;
  if (name == "self_reflection") return Source::kSelfReflection;
  if (name == "finetuned_slm") return Source::kFinetunedSlm;
  throw ConfigError("unknown feedback source: " + std::string(name));
}

std::string_view granularity_name(Granularity g) {
  return g == Granularity::kSinglePoint ? "single_point" : "entire_content";
}

Granularity granularity_from_name(std::string_view name) {
  if (name == "single_point") return Granularity::kSinglePoint;
  if (name == "entire_content") return Granularity::kEntireContent;
  throw ConfigError("unknown granularity: " + std::string(name));
}

nlohmann::ordered_json FeedbackBundle::to_json() const {
  nlohmann::ordered_json j;
  j["case_id"] = case_id;
  j["round"] = round;
  j["source"] = source_name(source);
  j["granularity"] = granularity_name(granularity);
  j["scorer_id"] = scorer_id;
  nlohmann::ordered_json pts = nlohmann::ordered_json::array();
  for (const auto& p : flagged_points) pts.push_back({{"index", p.index}, {"text", p.text}});
  j["flagged_points"] = std::move(pts);
  j["unparseable_answers"] = unparseable_answers;
  return j;
}

nlohmann::ordered_json AnnotationRecord::to_json() const {
  nlohmann::ordered_json j;
  j["case_id"] = case_id;
  j["round"] = round;
  j["point_index"] = point_index;
  j["hallucinated"] = hallucinated;
  j["annotator"] = annotator;
  j["timestamp"] = timestamp;
  return j;
}

AnnotationRecord AnnotationRecord::from_json(const nlohmann::json& j) {
  AnnotationRecord a;
  try {
    a.case_id = j.at("case_id").get<std::string>();
    a.round = j.at("round").get<int>();
    a.point_index = j.at("point_index").get<int>();
    a.hallucinated = j.at("hallucinated").get<int>();
    a.annotator = j.value("annotator", std::string());
    a.timestamp = j.value("timestamp", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("annotation record: ") + e.what());
  }
  if (a.hallucinated != 0 && a.hallucinated != 1) throw ParseError("annotation hallucinated must be 0 or 1");
  return a;
}

std::map<int, int> resolve_annotations(const std::vector<AnnotationRecord>& records, const std::string& case_id,
                                       int round) {
  // (point, annotator) -> latest judgment
  std::map<std::pair<int, std::string>, int> latest;
  for (const auto& r : records) {
    if (r.case_id != case_id || r.round != round) continue;
    latest[{r.point_index, r.annotator}] = r.hallucinated;
  }
  std::map<int, std::pair<int, int>> votes;  // point -> (yes, total)
  for (const auto& [key, value] : latest) {
    auto& v = votes[key.first];
    v.first += value;
    v.second += 1;
  }
  std::map<int, int> resolved;
  for (const auto& [point, v] : votes) resolved[point] = 2 * v.first >= v.second ? 1 : 0;
  return resolved;
}

namespace {

FeedbackBundle empty_bundle(const parser::Generation& g, Source source, Granularity granularity) {
  FeedbackBundle b;
  b.case_id = g.case_id;
  b.round = g.round;
  b.source = source;
  b.granularity = granularity;
  return b;
}

void flag_all(const parser::Generation& g, FeedbackBundle& b) {
  for (const auto& p : g.points) b.flagged_points.push_back({p.index, p.text});
}

std::string join_indices(const std::vector<int>& indices) {
  std::string out;
  for (int i : indices) {
    if (!out.empty()) out += ", ";
    out += std::to_string(i);
  }
  return out;
}

std::map<int, int> require_complete(const parser::Generation& g, const std::vector<AnnotationRecord>& annotations) {
  auto resolved = resolve_annotations(annotations, g.case_id, g.round);
  std::vector<int> missing;
  for (const auto& p : g.points) {
    if (!resolved.count(p.index)) missing.push_back(p.index);
  }
  if (!missing.empty()) {
    throw IncompleteAnnotationError("case " + g.case_id + " round " + std::to_string(g.round) +
                                    ": unannotated point(s) " + join_indices(missing));
  }
  return resolved;
}

}  // namespace

FeedbackBundle oracle_flags(const parser::Generation& generation, const std::vector<AnnotationRecord>& annotations) {
  const auto resolved = require_complete(generation, annotations);
  auto bundle = empty_bundle(generation, Source::kOracle, Granularity::kSinglePoint);
  for (const auto& p : generation.points) {
    if (resolved.at(p.index) == 1) bundle.flagged_points.push_back({p.index, p.text});
  }
  return bundle;
}

FeedbackBundle verifier_flags(const parser::Generation& generation,
                              const std::vector<verifier::VerifierScore>& scores) {
  std::map<int, const verifier::VerifierScore*> by_point;
  std::set<std::string> scorers;
  for (const auto& s : scores) {
    if (s.case_id != generation.case_id || s.round != generation.round) continue;
    if (!by_point.emplace(s.point_index, &s).second) {
      throw ContractViolation("case " + generation.case_id + ": more than one score for point " +
                              std::to_string(s.point_index));
    }
    scorers.insert(s.scorer_id);
  }
  auto bundle = empty_bundle(generation, Source::kVerifier, Granularity::kSinglePoint);
  if (scorers.size() == 1) bundle.scorer_id = *scorers.begin();
  std::vector<int> missing;
  for (const auto& p : generation.points) {
    const auto it = by_point.find(p.index);
    if (it == by_point.end()) {
      missing.push_back(p.index);
      continue;
    }
    if (verifier::threshold_predict(it->second->prob) == 1) bundle.flagged_points.push_back({p.index, p.text});
  }
  if (!missing.empty()) {
    throw ContractViolation("case " + generation.case_id + ": missing verifier score for point(s) " +
                            join_indices(missing));
  }
  return bundle;
}

FeedbackBundle probe_flags(const parser::Generation& generation, const dataset::CaseRecord& case_record,
                           lm::Backend& backend, const prompts::PromptSet& prompt_set, Source source) {
  auto bundle = empty_bundle(generation, source, Granularity::kSinglePoint);
  const std::string x = dataset::render_attributes(case_record);
  for (const auto& p : generation.points) {
    const auto answer = parser::parse_yes_no(backend.complete(prompt_set.render_feedback_probe(x, p.text),
                                                              generation.case_id));
    if (answer == parser::YesNo::kNo) {
      bundle.flagged_points.push_back({p.index, p.text});
    } else if (answer == parser::YesNo::kUnparseable) {
      ++bundle.unparseable_answers;
    }
  }
  if (bundle.unparseable_answers > 0) {
    std::clog << "warning: case " << generation.case_id << ": " << bundle.unparseable_answers
              << " unparseable probe answer(s) treated as no flag\n";
  }
  return bundle;
}

FeedbackBundle self_reflection_flags(const parser::Generation& generation, const dataset::CaseRecord& case_record,
                                     lm::Backend& backend, const prompts::PromptSet& prompt_set) {
  return probe_flags(generation, case_record, backend, prompt_set, Source::kSelfReflection);
}

FeedbackBundle finetuned_slm_flags(const parser::Generation& generation, const dataset::CaseRecord& case_record,
                                   lm::Backend& backend, const prompts::PromptSet& prompt_set) {
  return probe_flags(generation, case_record, backend, prompt_set, Source::kFinetunedSlm);
}

FeedbackBundle entire_content_flags(const parser::Generation& generation, const dataset::CaseRecord& case_record,
                                    lm::Backend& backend, const prompts::PromptSet& prompt_set, Source source) {
  if (source == Source::kOracle || source == Source::kVerifier) {
    throw ContractViolation("entire_content_flags with a backend needs a model feedback source");
  }
  auto bundle = empty_bundle(generation, source, Granularity::kEntireContent);
  if (generation.points.empty()) return bundle;
  const std::string x = dataset::render_attributes(case_record);
  const auto answer = parser::parse_yes_no(
      backend.complete(prompt_set.render_feedback_probe(x, generation.reasoning_text()), generation.case_id));
  if (answer == parser::YesNo::kNo) {
    flag_all(generation, bundle);
  } else if (answer == parser::YesNo::kUnparseable) {
    bundle.unparseable_answers = 1;
    std::clog << "warning: case " << generation.case_id << ": unparseable probe answer treated as no flag\n";
  }
  return bundle;
}

FeedbackBundle entire_content_flags(const parser::Generation& generation,
                                    const std::vector<AnnotationRecord>& annotations) {
  auto bundle = empty_bundle(generation, Source::kOracle, Granularity::kEntireContent);
  if (generation.points.empty()) return bundle;
  const auto resolved = require_complete(generation, annotations);
  const bool any = std::any_of(generation.points.begin(), generation.points.end(),
                               [&](const parser::ReasoningPoint& p) { return resolved.at(p.index) == 1; });
  if (any) flag_all(generation, bundle);
  return bundle;
}

std::vector<std::string> feedback_lines(const parser::Generation& generation, const FeedbackBundle& bundle) {
  if (bundle.empty()) return {};
  if (bundle.granularity == Granularity::kEntireContent) return {generation.reasoning_text()};
  std::vector<std::string> lines;
  lines.reserve(bundle.flagged_points.size());
  for (const auto& p : bundle.flagged_points) lines.push_back(p.text);
  return lines;
}

parser::Generation run_refinement(const dataset::CaseRecord& case_record, const parser::Generation& generation,
                                  const FeedbackBundle& bundle, lm::Backend& backend,
                                  const prompts::PromptSet& prompt_set) {
  if (bundle.case_id != generation.case_id || generation.case_id != case_record.id) {
    throw ContractViolation("feedback bundle for case " + bundle.case_id + " applied to case " + generation.case_id);
  }
  if (bundle.round != generation.round) {
    throw ContractViolation("feedback bundle for round " + std::to_string(bundle.round) + " applied to round " +
                            std::to_string(generation.round));
  }
  for (const auto& f : bundle.flagged_points) {
    const bool valid = std::any_of(generation.points.begin(), generation.points.end(),
                                   [&](const parser::ReasoningPoint& p) { return p.index == f.index; });
    if (!valid) throw ContractViolation("feedback bundle flags unknown point " + std::to_string(f.index));
  }
  if (bundle.empty()) {
    parser::Generation carried = generation;
    carried.round = generation.round + 1;
    carried.note = std::string(kNoFeedbackSkip);
    return carried;
  }
  const std::string prompt = prompt_set.render_refinement(dataset::render_attributes(case_record), generation.raw,
                                                          feedback_lines(generation, bundle));
  return parser::parse_generation(backend.complete(prompt, generation.case_id), generation.case_id,
                                  generation.round + 1);
}

RoundTrace run_multi_round(const dataset::CaseRecord& case_record, const parser::Generation& initial, int rounds,
                           const FeedbackFn& feedback, lm::Backend& backend, const prompts::PromptSet& prompt_set) {
  if (rounds < 0) throw ContractViolation("rounds must be >= 0");
  RoundTrace trace;
  trace.generations.push_back(initial);
  for (int r = 0; r < rounds; ++r) {
    const auto& latest = trace.generations.back();
    auto bundle = feedback(latest);
    auto next = run_refinement(case_record, latest, bundle, backend, prompt_set);
    trace.bundles.push_back(std::move(bundle));
    trace.generations.push_back(std::move(next));
  }
  return trace;
}

}  // namespace factguard::feedback
