#include <algorithm>
#include <functional>
#include <iostream>
#include <set>

#include "factguard/errors.hpp"
#include "factguard/parallel.hpp"
#include "factguard/runner.hpp"

namespace factguard::runner {

namespace {

using feedback::FeedbackBundle;
using feedback::Granularity;
using feedback::Source;
using parser::Generation;

bool is_model_failure(const std::exception& e) {
  return dynamic_cast<const TransportError*>(&e) || dynamic_cast<const BackendError*>(&e) ||
         dynamic_cast<const MockError*>(&e);
}

Generation failed_generation(const std::string& case_id, int round, const std::exception& e) {
  Generation g;
  g.case_id = case_id;
  g.round = round;
  g.decision = stats::Decision::kInvalid;
  g.note = std::string("backend_error: ") + e.what();
  return g;
}

void flush_exchanges(const RunStore& store, Backends& backends) {
  store.append_exchanges(backends.log->drain_sorted());
}

std::string join(const std::vector<std::string>& items, std::size_t limit = 20) {
  std::string out;
  for (std::size_t i = 0; i < items.size() && i < limit; ++i) {
    if (i) out += ", ";
    out += items[i];
  }
  if (items.size() > limit) out += ", ... (" + std::to_string(items.size()) + " total)";
  return out;
}

const Generation& initial_of(const RunRecord& record, const std::string& case_id) {
  const auto* g = record.find(kArmInitial, case_id, 0);
  if (!g) throw ContractViolation("case " + case_id + " has no initial generation; run generate first");
  return *g;
}

void require_initial(const RunRecord& record) {
  if (record.cases.empty()) throw ContractViolation("no cases; run prepare first");
  for (const auto& c : record.cases) initial_of(record, c.id);
}

// Per-case feedback for one refinement round of an arm.
using BundleFn = std::function<FeedbackBundle(const dataset::CaseRecord&, const Generation&)>;

struct ArmResult {
  std::vector<ArmGeneration> generations;
  std::vector<FeedbackBundle> bundles;
};

ArmResult refine_once(const RunRecord& record, const std::string& arm, const BundleFn& bundle_fn,
                      lm::Backend& refiner, const prompts::PromptSet& prompt_set, int workers) {
  const auto& cases = record.cases;
  std::vector<Generation> refined(cases.size());
  std::vector<std::optional<FeedbackBundle>> bundles(cases.size());
  parallel_for(cases.size(), workers, [&](std::size_t i) {
    const auto& c = cases[i];
    const auto& g0 = initial_of(record, c.id);
    try {
      auto bundle = bundle_fn(c, g0);
      refined[i] = feedback::run_refinement(c, g0, bundle, refiner, prompt_set);
      bundles[i] = std::move(bundle);
    } catch (const Error& e) {
      if (!is_model_failure(e)) throw;
      refined[i] = failed_generation(c.id, 1, e);
    }
  });
  ArmResult out;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    out.generations.push_back({arm, std::move(refined[i])});
    if (bundles[i]) out.bundles.push_back(std::move(*bundles[i]));
  }
  return out;
}

FeedbackBundle widen(const Generation& g, FeedbackBundle bundle) {
  bundle.granularity = Granularity::kEntireContent;
  if (bundle.flagged_points.empty()) return bundle;
  bundle.flagged_points.clear();
  for (const auto& p : g.points) bundle.flagged_points.push_back({p.index, p.text});
  return bundle;
}

// Bundle functions are built inside the arm's error boundary so a source whose
// inputs are missing fails as its own arm rather than aborting the batch.
struct ArmPlan {
  std::string arm;
  std::function<BundleFn()> make;
};

void run_arms(const std::vector<ArmPlan>& plans, const RunStore& store, Backends& backends,
              const prompts::PromptSet& prompt_set) {
  const RunRecord record = store.load();
  require_initial(record);
  const int workers = backends.generation->max_parallel();
  for (const auto& plan : plans) {
    try {
      const auto bundle_fn = plan.make();
      auto result = refine_once(record, plan.arm, bundle_fn, *backends.generation, prompt_set, workers);
      store.append_bundles(plan.arm, result.bundles);
      store.append_generations(result.generations);
      store.append_arm_status(plan.arm, "");
    } catch (const std::exception& e) {
      std::clog << "arm " << plan.arm << " failed: " << e.what() << '\n';
      store.append_arm_status(plan.arm, e.what());
    }
    flush_exchanges(store, backends);
  }
}

std::vector<verifier::VerifierScore> scores_for(const RunRecord& record, const std::string& scorer_id) {
  std::vector<verifier::VerifierScore> out;
  for (const auto& s : record.scores) {
    if (s.scorer_id == scorer_id) out.push_back(s);
  }
  return out;
}

std::vector<std::string> verifier_ids(const RunConfig& config, const RunRecord& record) {
  std::vector<std::string> ids;
  for (const auto& s : config.scorers) ids.push_back(s.id);
  for (const auto& id : record.scorer_ids()) {
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
  }
  return ids;
}

BundleFn oracle_bundle(const RunRecord& record, Granularity granularity) {
  const auto* annotations = &record.annotations;
  if (granularity == Granularity::kEntireContent) {
    return [annotations](const dataset::CaseRecord&, const Generation& g) {
      return feedback::entire_content_flags(g, *annotations);
    };
  }
  return [annotations](const dataset::CaseRecord&, const Generation& g) {
    return feedback::oracle_flags(g, *annotations);
  };
}

BundleFn verifier_bundle(std::vector<verifier::VerifierScore> scores, const std::string& scorer_id,
                         Granularity granularity) {
  if (scores.empty()) throw ContractViolation("no scores for scorer " + scorer_id + "; run score first");
  auto shared = std::make_shared<const std::vector<verifier::VerifierScore>>(std::move(scores));
  return [shared, scorer_id, granularity](const dataset::CaseRecord&, const Generation& g) {
    auto bundle = feedback::verifier_flags(g, *shared);
    bundle.scorer_id = scorer_id;
    return granularity == Granularity::kEntireContent ? widen(g, std::move(bundle)) : bundle;
  };
}

BundleFn probe_bundle(std::shared_ptr<lm::Backend> backend, const prompts::PromptSet& prompt_set, Source source,
                      Granularity granularity) {
  if (!backend) {
    throw ConfigError(std::string("no backend configured for feedback source ") +
                      std::string(feedback::source_name(source)));
  }
  const auto* ps = &prompt_set;
  if (granularity == Granularity::kEntireContent) {
    return [backend, ps, source](const dataset::CaseRecord& c, const Generation& g) {
      return feedback::entire_content_flags(g, c, *backend, *ps, source);
    };
  }
  return [backend, ps, source](const dataset::CaseRecord& c, const Generation& g) {
    return feedback::probe_flags(g, c, *backend, *ps, source);
  };
}

}  // namespace

std::vector<dataset::CaseRecord> prepare(const RunConfig& config, const RunStore& store) {
  auto cases = dataset::prepare_cases(config.dataset_path, config.dataset);
  store.write_config(config);
  store.write_cases(cases);
  return cases;
}

ArmMetrics run_initial(const RunConfig& config, const RunStore& store, Backends& backends) {
  const RunRecord record = store.load();
  if (record.cases.empty()) throw ContractViolation("no cases; run prepare first");
  const auto prompt_set = load_prompts(config);
  std::vector<Generation> out(record.cases.size());
  parallel_for(record.cases.size(), backends.generation->max_parallel(), [&](std::size_t i) {
    const auto& c = record.cases[i];
    try {
      const auto raw = backends.generation->complete(prompt_set.render_generation(dataset::render_attributes(c)), c.id);
      out[i] = parser::parse_generation(raw, c.id, 0);
    } catch (const Error& e) {
      if (!is_model_failure(e)) throw;
      std::clog << "case " << c.id << ": " << e.what() << '\n';
      out[i] = failed_generation(c.id, 0, e);
    }
  });
  std::vector<ArmGeneration> rows;
  rows.reserve(out.size());
  for (auto& g : out) rows.push_back({kArmInitial, std::move(g)});
  store.append_generations(rows);
  flush_exchanges(store, backends);
  return arm_metrics(store.load(), kArmInitial, "No feedback", 0);
}

std::map<std::string, std::map<int, int>> round0_annotations(const RunRecord& record) {
  std::map<std::string, std::map<int, int>> out;
  std::vector<std::string> gaps;
  for (const auto& c : record.cases) {
    const auto& g = initial_of(record, c.id);
    auto resolved = feedback::resolve_annotations(record.annotations, c.id, 0);
    std::vector<std::string> missing;
    for (const auto& p : g.points) {
      if (!resolved.count(p.index)) missing.push_back(std::to_string(p.index));
    }
    if (!missing.empty()) gaps.push_back(c.id + " [" + join(missing) + "]");
    out[c.id] = std::move(resolved);
  }
  if (!gaps.empty()) {
    throw IncompleteAnnotationError("unannotated round-0 points in " + std::to_string(gaps.size()) +
                                    " case(s): " + join(gaps));
  }
  return out;
}

AssociationRow run_association(const RunConfig& config, const RunRecord& record) {
  require_initial(record);
  const auto annotations = round0_annotations(record);
  AssociationRow row;
  row.model = config.model_label;
  std::vector<stats::LabeledOutcome> outcomes;
  std::vector<int> h, e;
  for (const auto& c : record.cases) {
    const auto& g = initial_of(record, c.id);
    std::vector<int> flags;
    for (const auto& p : g.points) flags.push_back(annotations.at(c.id).at(p.index));
    const int h_rsn = flags.empty() ? 0 : stats::aggregate_h(flags);
    const int wrong = stats::effective_prediction(g.decision, c.label) != c.label ? 1 : 0;
    outcomes.push_back({c.id, g.decision, c.label, h_rsn});
    h.push_back(h_rsn);
    e.push_back(wrong);
  }
  row.n_cases = outcomes.size();
  row.n_hallucinated = static_cast<std::size_t>(std::count(h.begin(), h.end(), 1));
  row.n_misclassified = static_cast<std::size_t>(std::count(e.begin(), e.end(), 1));
  row.pearson = stats::pearson(h, e);
  row.risk_difference = stats::risk_difference(outcomes);
  return row;
}

void run_scoring(const RunConfig& config, const RunStore& store, const RunRecord& record,
                 std::map<std::string, verifier::Scorer> live_scorers) {
  require_initial(record);
  auto plan = verifier::plan_folds(record.cases, config.folds, config.fold_seed);
  if (record.plan && record.plan->assignment != plan.assignment && !record.scores.empty()) {
    throw ConfigError("fold plan differs from the one used for existing scores; use a fresh run directory");
  }
  store.write_plan(plan);

  std::vector<verifier::PointRef> points;
  for (const auto& c : record.cases) {
    const auto x = dataset::render_attributes(c);
    for (const auto& p : initial_of(record, c.id).points) points.push_back({c.id, 0, p.index, x, p.text});
  }

  auto score_live = [&](verifier::Scorer& scorer, int parallelism) {
    verifier::AuditLog audit;
    auto scores = verifier::collect_scores(plan, points, scorer, &audit, parallelism);
    store.append_scores(scores);
    store.append_audit(audit.rows());
  };

  for (const auto& sc : config.scorers) {
    if (auto it = live_scorers.find(sc.id); it != live_scorers.end()) {
      score_live(it->second, sc.parallelism);
      live_scorers.erase(it);
      continue;
    }
    if (sc.kind == "http") {
      verifier::Scorer scorer{sc.id, {}};
      for (const auto& url : sc.endpoints) scorer.deployments.push_back(std::make_shared<verifier::HttpDeployment>(url));
      score_live(scorer, sc.parallelism);
    } else {
      auto scores = verifier::import_scores(sc.path, plan);
      std::vector<verifier::AuditRow> audit;
      for (auto& s : scores) {
        if (s.scorer_id != sc.id) {
          throw ConfigError("score file " + sc.path.string() + " contains scorer_id '" + s.scorer_id +
                            "', expected '" + sc.id + "'");
        }
        audit.push_back({s.case_id, s.round, s.point_index, plan.fold_of(s.case_id), s.scorer_id,
                         "file:" + sc.path.filename().string(), s.trained_on_folds, s.prob});
      }
      store.append_scores(scores);
      store.append_audit(audit);
    }
  }
  for (auto& [id, scorer] : live_scorers) score_live(scorer, 1);
}

namespace {

DetectionRow detect_one(const RunConfig& config, const RunRecord& record,
                        const std::map<std::string, std::map<int, int>>& annotations, const std::string& scorer_id) {
  DetectionRow row;
  row.model = config.model_label;
  row.scorer = scorer_id;
  const auto scores = scores_for(record, scorer_id);
  if (scores.empty()) throw ContractViolation("no scores for scorer " + scorer_id);
  if (!record.plan) throw ContractViolation("no fold plan; run score first");
  if (const auto v = verifier::audit_violations(*record.plan, scores); !v.empty()) {
    throw LeakageError("scorer " + scorer_id + ": " + join(v, 5));
  }
  std::map<std::pair<std::string, int>, double> by_point;
  for (const auto& s : scores) {
    if (s.round == 0) by_point[{s.case_id, s.point_index}] = s.prob;
  }
  std::vector<stats::ScoredPoint> points;
  std::vector<std::string> gaps;
  for (const auto& c : record.cases) {
    for (const auto& [index, truth] : annotations.at(c.id)) {
      const auto it = by_point.find({c.id, index});
      if (it == by_point.end()) {
        gaps.push_back(c.id + "#" + std::to_string(index));
        continue;
      }
      points.push_back({it->second, truth});
    }
  }
  if (!gaps.empty()) throw ContractViolation("scorer " + scorer_id + " has no score for " + join(gaps));
  std::vector<double> pos, neg;
  for (const auto& p : points) (p.truth == 1 ? pos : neg).push_back(p.prob);
  row.n_points = points.size();
  row.n_positive = pos.size();
  row.auprc = stats::auprc(points);
  row.balanced_accuracy = stats::balanced_accuracy(points);
  if (!pos.empty() && !neg.empty()) row.wilcoxon_p = stats::wilcoxon_rank_sum(pos, neg);
  row.density = stats::density_bins(points, config.density_bins);
  return row;
}

}  // namespace

std::vector<DetectionRow> run_detection_eval(const RunConfig& config, const RunRecord& record) {
  require_initial(record);
  const auto annotations = round0_annotations(record);
  const auto ids = record.scorer_ids();
  if (ids.empty()) throw ContractViolation("no verifier scores; run score first");
  std::vector<DetectionRow> rows;
  for (const auto& id : ids) rows.push_back(detect_one(config, record, annotations, id));
  return rows;
}

std::vector<ArmMetrics> run_adaptive(const RunConfig& config, const RunStore& store, Backends& backends,
                                     const prompts::PromptSet& prompt_set) {
  const RunRecord record = store.load();
  std::vector<ArmPlan> plans;
  for (auto source : config.feedback_sources) {
    switch (source) {
      case Source::kOracle:
        plans.push_back(ArmPlan{kArmOracle, [&] { return oracle_bundle(record, config.granularity); }});
        break;
      case Source::kVerifier:
        for (const auto& id : verifier_ids(config, record)) {
          plans.push_back(ArmPlan{verifier_arm(id),
                                   [&, id] { return verifier_bundle(scores_for(record, id), id, config.granularity); }});
        }
        break;
      case Source::kSelfReflection:
        plans.push_back(ArmPlan{kArmSelfReflection, [&] {
          return probe_bundle(backends.self_reflection, prompt_set, Source::kSelfReflection, config.granularity);
        }});
        break;
      case Source::kFinetunedSlm:
        plans.push_back(ArmPlan{kArmFinetuned, [&] {
          return probe_bundle(backends.finetuned_slm, prompt_set, Source::kFinetunedSlm, config.granularity);
        }});
        break;
    }
  }
  run_arms(plans, store, backends, prompt_set);
  return adaptive_table(config, store.load());
}

std::vector<ArmMetrics> run_granularity_compare(const RunConfig& config, const RunStore& store, Backends& backends,
                                                const prompts::PromptSet& prompt_set) {
  std::vector<ArmPlan> plans;
  plans.push_back(ArmPlan{kArmSinglePoint, [&] {
    return probe_bundle(backends.self_reflection, prompt_set, Source::kSelfReflection, Granularity::kSinglePoint);
  }});
  plans.push_back(ArmPlan{kArmEntireContent, [&] {
    return probe_bundle(backends.self_reflection, prompt_set, Source::kSelfReflection, Granularity::kEntireContent);
  }});
  run_arms(plans, store, backends, prompt_set);
  return granularity_table(config, store.load());
}

std::vector<RoundMetrics> run_multi_round_experiment(const RunConfig& config, const RunStore& store,
                                                     Backends& backends, const prompts::PromptSet& prompt_set,
                                                     int rounds) {
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  const RunRecord record = store.load();
  require_initial(record);
  const auto bundle_fn =
      probe_bundle(backends.self_reflection, prompt_set, Source::kSelfReflection, config.rounds_granularity);
  const auto& cases = record.cases;
  std::vector<std::vector<Generation>> traces(cases.size());
  std::vector<std::vector<FeedbackBundle>> bundles(cases.size());
  try {
    parallel_for(cases.size(), backends.generation->max_parallel(), [&](std::size_t i) {
      const auto& c = cases[i];
      Generation latest = initial_of(record, c.id);
      for (int r = 1; r <= rounds; ++r) {
        try {
          auto bundle = bundle_fn(c, latest);
          latest = feedback::run_refinement(c, latest, bundle, *backends.generation, prompt_set);
          bundles[i].push_back(std::move(bundle));
        } catch (const Error& e) {
          if (!is_model_failure(e)) throw;
          // The case cannot continue; remaining rounds stay invalid.
          for (; r <= rounds; ++r) traces[i].push_back(failed_generation(c.id, r, e));
          return;
        }
        traces[i].push_back(latest);
      }
    });
  } catch (const std::exception& e) {
    flush_exchanges(store, backends);
    store.append_arm_status(kArmRounds, e.what());
    throw;
  }
  std::vector<ArmGeneration> rows;
  std::vector<FeedbackBundle> all_bundles;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    for (auto& g : traces[i]) rows.push_back({kArmRounds, std::move(g)});
    for (auto& b : bundles[i]) all_bundles.push_back(std::move(b));
  }
  store.append_bundles(kArmRounds, all_bundles);
  store.append_generations(rows);
  store.append_arm_status(kArmRounds, "");
  flush_exchanges(store, backends);
  RunConfig effective = config;
  effective.rounds = rounds;
  return rounds_series(effective, store.load());
}

}  // namespace factguard::runner
