#include "scenario.hpp"

#include <cstdio>

#include "factguard/prompts.hpp"

namespace scenario {

using namespace factguard;

namespace {

std::string two_digit(int i) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%02d", i);
  return buf;
}

std::string answer(int decision, int savings, int duration) {
  return std::string(decision == 1 ? "good credit" : "bad credit") + "\nSavings sit at the " +
         dataset::ordinal_percentile(savings) + ". Duration sits at the " + dataset::ordinal_percentile(duration) + ".";
}

}  // namespace

Scenario make(Mode mode) {
  // index -> (label, hallucinated, misclassified)
  struct Row {
    int label;
    bool hallucinated;
    bool wrong;
  };
  const Row rows[20] = {
      {1, true, true},  {1, true, true},   {1, true, true},   {1, true, true},   {1, true, false},
      {0, true, true},  {0, true, true},   {0, true, false},  {1, false, false}, {1, false, false},
      {1, false, false}, {1, false, false}, {1, false, false}, {0, false, true},  {0, false, false},
      {0, false, false}, {0, false, false}, {0, false, false}, {0, false, false}, {0, false, false},
  };
  Scenario s;
  const prompts::PromptSet ps;
  for (int i = 0; i < 20; ++i) {
    const auto& row = rows[i];
    CaseScript c;
    c.record.id = "c" + two_digit(i + 1);
    const int savings = 5 * (i + 1);
    const int duration = 10 + 3 * i;
    c.record.attributes = {{"ref", "R" + two_digit(i + 1)},
                           {"savings", dataset::ordinal_percentile(savings)},
                           {"duration", dataset::ordinal_percentile(duration)}};
    c.record.label = row.label;
    c.hallucinated = row.hallucinated;
    c.initial_decision = row.wrong ? 1 - row.label : row.label;
    c.initial_raw = answer(c.initial_decision, savings, row.hallucinated ? 99 : duration);
    c.refined_raw = answer(row.label, savings, duration);
    s.cases.push_back(c);

    for (int point = 1; point <= 2; ++point) {
      const int flag = row.hallucinated && point == 2 ? 1 : 0;
      s.annotations.push_back({c.record.id, 0, point, flag, "annotator-1", "2026-01-01T00:00:00Z"});
    }
  }

  using lm::MatchKind;
  s.script.push_back({MatchKind::kContains, "does this imply",
                      mode == Mode::kFollowsFeedback ? "Yes." : "No.", false});
  for (const auto& c : s.cases) {
    const auto x = dataset::render_attributes(c.record);
    s.script.push_back({MatchKind::kExact, ps.render_generation(x), c.initial_raw, false});
    if (mode == Mode::kFollowsFeedback && c.hallucinated) {
      s.script.push_back(
          {MatchKind::kExact, ps.render_refinement(x, c.initial_raw, {kInventedPoint}), c.refined_raw, false});
    }
  }
  // Any other refinement repeats the initial answer of the case it names.
  for (const auto& c : s.cases) {
    s.script.push_back({MatchKind::kContains, "ref: " + c.record.attributes[0].second + ";", c.initial_raw, false});
  }
  return s;
}

std::vector<dataset::CaseRecord> records(const Scenario& s) {
  std::vector<dataset::CaseRecord> out;
  for (const auto& c : s.cases) out.push_back(c.record);
  return out;
}

runner::RunConfig config() {
  runner::RunConfig cfg;
  cfg.model_label = "scripted";
  cfg.generation.kind = "mock";
  cfg.generation.mock_script = "inline";
  cfg.generation.max_parallel = 4;
  cfg.folds = 3;
  cfg.fold_seed = 5;
  cfg.rounds = 2;
  return cfg;
}

verifier::Scorer scorer(int k) {
  return verifier::make_kfold_scorer("scripted-verifier", k, [](const std::string&, const std::string& claim, int) {
    return claim == kInventedPoint ? 0.9 : 0.2;
  });
}

RunHandles run_all(const Scenario& s, const std::filesystem::path& run_dir) {
  const auto cfg = config();
  runner::RunStore store(run_dir);
  store.write_config(cfg);
  store.write_cases(records(s));

  runner::Backends backends;
  auto mock = lm::register_mock(s.script, "generation", cfg.generation.max_parallel);
  backends.generation = mock;
  backends.self_reflection = mock;
  backends.attach_log();
  const auto ps = runner::load_prompts(cfg);

  runner::run_initial(cfg, store, backends);
  for (const auto& a : s.annotations) store.append_annotation(a);
  runner::run_scoring(cfg, store, store.load(), {{"scripted-verifier", scorer(cfg.folds)}});
  runner::run_adaptive(cfg, store, backends, ps);
  runner::run_granularity_compare(cfg, store, backends, ps);
  runner::run_multi_round_experiment(cfg, store, backends, ps, cfg.rounds);
  runner::emit_report(cfg, store);
  return {mock};
}

}  // namespace scenario
