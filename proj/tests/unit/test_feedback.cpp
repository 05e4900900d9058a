#include <doctest.h>

#include "factguard/errors.hpp"
#include "factguard/feedback.hpp"

using namespace factguard;
using namespace factguard::feedback;
using factguard::lm::MatchKind;

namespace {

const dataset::CaseRecord kCase{"c1", {{"savings", "5th percentile"}, {"duration", "80th percentile"}}, 0};

parser::Generation three_points() {
  return parser::parse_generation("good credit\nSavings are high. Duration is short. Age is fine.", "c1", 0);
}

std::vector<AnnotationRecord> annotate(const std::vector<int>& flags, int round = 0) {
  std::vector<AnnotationRecord> out;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    out.push_back({"c1", round, int(i) + 1, flags[i], "a", "2026-01-01T00:00:00Z"});
  }
  return out;
}

std::vector<verifier::VerifierScore> scores_for(const std::vector<double>& probs) {
  std::vector<verifier::VerifierScore> out;
  for (std::size_t i = 0; i < probs.size(); ++i) out.push_back({"c1", 0, int(i) + 1, probs[i], "v", {1, 2}});
  return out;
}

std::vector<int> indices(const FeedbackBundle& b) {
  std::vector<int> out;
  for (const auto& f : b.flagged_points) out.push_back(f.index);
  return out;
}

// Probe answers keyed on the point text.
std::shared_ptr<lm::MockBackend> prober(const std::string& no_point, const std::string& other = "Yes.") {
  return lm::register_mock({{MatchKind::kContains, "does this imply " + no_point + "?", "No.", false},
                            {MatchKind::kContains, "does this imply", other, false}});
}

}  // namespace

TEST_CASE("oracle_flags") {
  const auto g = three_points();
  CHECK(indices(oracle_flags(g, annotate({1, 0, 0}))) == std::vector<int>{1});
  const auto none = oracle_flags(g, annotate({0, 0, 0}));
  CHECK(none.empty());
  CHECK(none.source == Source::kOracle);
  auto partial = annotate({1, 0, 0});
  partial.erase(partial.begin() + 1);
  try {
    oracle_flags(g, partial);
    FAIL("expected IncompleteAnnotationError");
  } catch (const IncompleteAnnotationError& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
  // Annotations of another round do not count.
  CHECK_THROWS_AS(oracle_flags(g, annotate({1, 0, 0}, 1)), IncompleteAnnotationError);
}

TEST_CASE("resolve_annotations") {
  std::vector<AnnotationRecord> recs = {
      {"c1", 0, 1, 1, "a", "t1"}, {"c1", 0, 1, 0, "a", "t2"},  // later record of the same annotator wins
      {"c1", 0, 2, 1, "a", "t"},  {"c1", 0, 2, 0, "b", "t"},   // tie resolves to 1
      {"c1", 0, 3, 0, "a", "t"},  {"c1", 0, 3, 0, "b", "t"}, {"c1", 0, 3, 1, "c", "t"},
      {"c2", 0, 1, 1, "a", "t"},
  };
  const auto r = resolve_annotations(recs, "c1", 0);
  CHECK(r == std::map<int, int>{{1, 0}, {2, 1}, {3, 0}});
  CHECK(AnnotationRecord::from_json(recs[0].to_json()).annotator == "a");
  CHECK_THROWS_AS(AnnotationRecord::from_json(nlohmann::json::parse(
                      R"({"case_id":"c","round":0,"point_index":1,"hallucinated":2,"annotator":"a","timestamp":"t"})")),
                  ParseError);
}

TEST_CASE("verifier_flags") {
  const auto g = parser::parse_generation("good credit\nA is a. B is b.", "c1", 0);
  CHECK(indices(verifier_flags(g, scores_for({0.9, 0.1}))) == std::vector<int>{1});
  CHECK(indices(verifier_flags(g, scores_for({0.5, 0.5}))) == std::vector<int>{1, 2});
  CHECK(verifier_flags(g, scores_for({0.0, 0.0})).empty());
  try {
    verifier_flags(g, scores_for({0.9}));
    FAIL("expected ContractViolation");
  } catch (const ContractViolation& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
}

TEST_CASE("oracle and verifier channels never call the backend") {
  auto backend = prober("nothing");
  const auto g = three_points();
  oracle_flags(g, annotate({1, 0, 1}));
  entire_content_flags(g, annotate({1, 0, 1}));
  verifier_flags(g, scores_for({0.9, 0.1, 0.2}));
  CHECK(backend->call_count() == 0);
}

TEST_CASE("self reflection probes each point") {
  const prompts::PromptSet ps;
  const auto g = three_points();
  auto backend = prober("Duration is short.");
  const auto b = self_reflection_flags(g, kCase, *backend, ps);
  CHECK(indices(b) == std::vector<int>{2});
  CHECK(b.source == Source::kSelfReflection);
  CHECK(backend->call_count() == 3);
  CHECK(backend->prompts()[0] == ps.render_feedback_probe(dataset::render_attributes(kCase), "Savings are high."));

  auto yes = prober("nothing");
  CHECK(self_reflection_flags(g, kCase, *yes, ps).empty());

  auto maybe = lm::register_mock({{MatchKind::kContains, "Savings are high", "Maybe.", false},
                                  {MatchKind::kContains, "does this imply", "Yes.", false}});
  const auto m = self_reflection_flags(g, kCase, *maybe, ps);
  CHECK(m.empty());
  CHECK(m.unparseable_answers == 1);
}

TEST_CASE("fine-tuned feedback uses the same probe path") {
  const prompts::PromptSet ps;
  const auto g = three_points();
  auto a = prober("Age is fine.");
  auto b = prober("Age is fine.");
  const auto self = self_reflection_flags(g, kCase, *a, ps);
  const auto tuned = finetuned_slm_flags(g, kCase, *b, ps);
  CHECK(tuned.source == Source::kFinetunedSlm);
  CHECK(self.flagged_points == tuned.flagged_points);
  CHECK(a->prompts() == b->prompts());
}

TEST_CASE("entire content flags") {
  const prompts::PromptSet ps;
  const auto g = three_points();
  auto no = lm::register_mock({{MatchKind::kContains, "does this imply", "No.", false}});
  const auto all = entire_content_flags(g, kCase, *no, ps);
  CHECK(indices(all) == std::vector<int>{1, 2, 3});
  CHECK(all.granularity == Granularity::kEntireContent);
  CHECK(no->call_count() == 1);
  CHECK(no->prompts()[0].find("does this imply " + g.reasoning_text() + "?") != std::string::npos);
  CHECK(feedback_lines(g, all) == std::vector<std::string>{g.reasoning_text()});

  auto yes = lm::register_mock({{MatchKind::kContains, "does this imply", "Yes.", false}});
  CHECK(entire_content_flags(g, kCase, *yes, ps).empty());

  const auto single = parser::parse_generation("good credit\nSavings are high.", "c1", 0);
  auto a = prober("Savings are high.");
  auto b = prober("Savings are high.");
  const auto whole = entire_content_flags(single, kCase, *a, ps);
  const auto point = self_reflection_flags(single, kCase, *b, ps);
  CHECK(whole.flagged_points == point.flagged_points);
  CHECK(feedback_lines(single, whole) == feedback_lines(single, point));
  CHECK(indices(entire_content_flags(g, annotate({0, 1, 0}))) == std::vector<int>{1, 2, 3});
}

TEST_CASE("run_refinement") {
  const prompts::PromptSet ps;
  const auto g = three_points();
  auto backend = lm::register_mock(
      {{MatchKind::kContains, "factual errors", "bad credit\nSavings are at the 5th percentile.", false}});

  const auto carried = run_refinement(kCase, g, oracle_flags(g, annotate({0, 0, 0})), *backend, ps);
  CHECK(carried.decision == g.decision);
  CHECK(carried.points == g.points);
  CHECK(carried.round == 1);
  CHECK(carried.note == kNoFeedbackSkip);
  CHECK(backend->call_count() == 0);

  const auto bundle = oracle_flags(g, annotate({1, 0, 0}));
  const auto refined = run_refinement(kCase, g, bundle, *backend, ps);
  CHECK(refined.decision == parser::Decision::kBad);
  CHECK(refined.round == 1);
  CHECK(backend->prompts().back() ==
        ps.render_refinement(dataset::render_attributes(kCase), g.raw, {"Savings are high."}));

  auto other = bundle;
  other.case_id = "c2";
  CHECK_THROWS_AS(run_refinement(kCase, g, other, *backend, ps), ContractViolation);
}

TEST_CASE("run_multi_round") {
  const prompts::PromptSet ps;
  const auto initial = parser::parse_generation("good credit\nIncome is high.", "c1", 0);
  auto backend = lm::register_mock({
      {MatchKind::kContains, "Your previous response: good credit", "bad credit\nIncome is low.", false},
      {MatchKind::kContains, "Your previous response: bad credit", "good credit\nIncome is high.", false},
  });
  std::vector<int> seen_rounds;
  const FeedbackFn flag_first = [&](const parser::Generation& latest) {
    seen_rounds.push_back(latest.round);
    FeedbackBundle b{latest.case_id, latest.round, Source::kOracle, Granularity::kSinglePoint, "", {}, 0};
    b.flagged_points.push_back({1, latest.points.at(0).text});
    return b;
  };
  const auto trace = run_multi_round(kCase, initial, 3, flag_first, *backend, ps);
  std::vector<int> decisions;
  for (const auto& g : trace.generations) decisions.push_back(int(g.decision));
  CHECK(decisions == std::vector<int>{1, 0, 1, 0});
  CHECK(seen_rounds == std::vector<int>{0, 1, 2});
  CHECK(trace.bundles.size() == 3);

  auto single_backend = lm::register_mock({{MatchKind::kContains, "Your previous response: good credit",
                                            "bad credit\nIncome is low.", false}});
  const auto one = run_multi_round(kCase, initial, 1, flag_first, *single_backend, ps);
  auto direct_backend = lm::register_mock({{MatchKind::kContains, "Your previous response: good credit",
                                            "bad credit\nIncome is low.", false}});
  const auto direct = run_refinement(kCase, initial, flag_first(initial), *direct_backend, ps);
  CHECK(one.generations.back().raw == direct.raw);
  CHECK(single_backend->prompts() == direct_backend->prompts());

  const auto zero = run_multi_round(kCase, initial, 0, flag_first, *backend, ps);
  CHECK(zero.generations.size() == 1);
  CHECK(zero.bundles.empty());
}

TEST_CASE("source and granularity names") {
  for (auto s : {Source::kOracle, Source::kVerifier, Source::kSelfReflection, Source::kFinetunedSlm}) {
    CHECK(source_from_name(source_name(s)) == s);
  }
  CHECK(granularity_from_name("entire_content") == Granularity::kEntireContent);
  CHECK_THROWS_AS(source_from_name("crowd"), ConfigError);
}
