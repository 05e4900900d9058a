// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "factguard/prompts.hpp"
#include "factguard/rng.hpp"
#include "factguard/runner.hpp"
#include "factguard/stats.hpp"
#include "oracles.hpp"
#include "scenario.hpp"
#include "support.hpp"

using namespace factguard;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kRealTol = 1e-9;
constexpr double kWilcoxonExactTol = 1e-12;
constexpr double kWilcoxonApproxTol = 0.02;
constexpr double kMetricBudgetS = 30;
constexpr double kWilcoxonBudgetS = 60;
constexpr double kEndToEndBudgetS = 120;
constexpr int kMetricInstances = 200;
constexpr int kMaxInstanceSize = 50;

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& body) {
  Outcome out;
  const auto start = std::chrono::steady_clock::now();
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!out.pass) ++failures;
  std::printf("%s %s (%.2fs)%s%s\n", out.pass ? "PASS" : "FAIL", name.c_str(), secs,
              out.detail.empty() ? "" : ": ", out.detail.c_str());
  std::fflush(stdout);
}

double elapsed_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

template <typename T>
bool same_optional(const std::optional<T>& a, const std::optional<T>& b, double tol) {
  if (a.has_value() != b.has_value()) return false;
  return !a || std::abs(*a - *b) <= tol;
}

Outcome metric_oracles() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(20240611);
  int mismatches = 0;
  std::string first;
  auto miss = [&](const std::string& what, int trial) {
    if (mismatches++ == 0) first = what + " at instance " + std::to_string(trial);
  };
  for (int trial = 0; trial < kMetricInstances; ++trial) {
    const std::size_t n = 2 + rng.uniform_below(kMaxInstanceSize - 1);
    std::vector<int> pred(n), label(n), h(n), truth(n);
    std::vector<double> prob(n);
    std::vector<stats::LabeledOutcome> outcomes(n);
    std::vector<stats::ScoredPoint> points(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = int(rng.uniform_below(3));
      label[i] = int(rng.uniform_below(2));
      h[i] = int(rng.uniform_below(2));
      truth[i] = int(rng.uniform_below(2));
      prob[i] = double(rng.uniform_below(21)) / 20.0;
      outcomes[i] = {"c" + std::to_string(i), static_cast<stats::Decision>(pred[i]), label[i], h[i]};
      points[i] = {prob[i], truth[i]};
    }
    std::vector<int> e(n);
    for (std::size_t i = 0; i < n; ++i) e[i] = stats::effective_prediction(outcomes[i].predicted, label[i]) != label[i];
    const auto oc = oracle::count(pred, label);
    if (stats::weighted_cost(outcomes) != oracle::cost(oc)) miss("weighted_cost", trial);
    if (!same_optional(stats::f1(outcomes), oracle::f1(oc), kRealTol)) miss("f1", trial);
    if (!same_optional(stats::pearson(h, e), oracle::pearson(h, e), kRealTol)) miss("pearson", trial);
    if (!same_optional(stats::risk_difference(outcomes), oracle::risk_difference(h, e), kRealTol)) {
      miss("risk_difference", trial);
    }
    if (!same_optional(stats::balanced_accuracy(points), oracle::balanced_accuracy(prob, truth), kRealTol)) {
      miss("balanced_accuracy", trial);
    }
    if (!same_optional(stats::auprc(points), oracle::auprc(prob, truth), kRealTol)) miss("auprc", trial);
  }
  const double secs = elapsed_since(start);
  Outcome out;
  out.pass = mismatches == 0 && secs < kMetricBudgetS;
  out.detail = std::to_string(kMetricInstances) + " instances, " + std::to_string(mismatches) + " mismatches" +
               (first.empty() ? "" : " (first: " + first + ")");
  return out;
}

Outcome wilcoxon_exactness() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(99);
  double worst_exact = 0;
  int pairs = 0;
  for (int n = 1; n <= 11; ++n) {
    for (int m = 1; n + m <= 12; ++m) {
      ++pairs;
      for (int sample = 0; sample < 3; ++sample) {
        std::vector<double> a(n), b(m);
        // Sample 0 draws from a small range so ties occur.
        const std::uint64_t range = sample == 0 ? 4 : 1000;
        for (auto& v : a) v = double(rng.uniform_below(range));
        for (auto& v : b) v = double(rng.uniform_below(range));
        worst_exact = std::max(worst_exact, std::abs(stats::wilcoxon_rank_sum(a, b) - oracle::wilcoxon_exact(a, b)));
      }
    }
  }
  double worst_approx = 0;
  for (int sample = 0; sample < 25; ++sample) {
    std::vector<double> pool(20);
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = double(i);
    rng.shuffle(std::span<double>(pool));
    const std::vector<double> a(pool.begin(), pool.begin() + 10), b(pool.begin() + 10, pool.end());
    worst_approx = std::max(worst_approx, std::abs(stats::wilcoxon_rank_sum_normal(a, b) - oracle::wilcoxon_exact(a, b)));
  }
  const double secs = elapsed_since(start);
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d (n,m) pairs, max exact diff %.3g; n=m=10 max approx diff %.4f", pairs,
                worst_exact, worst_approx);
  return {worst_exact <= kWilcoxonExactTol && worst_approx <= kWilcoxonApproxTol && secs < kWilcoxonBudgetS, buf};
}

Outcome auprc_ba_divergence() {
  std::vector<stats::ScoredPoint> points;
  for (int i = 0; i < 10; ++i) points.push_back({0.6 + 0.03 * i, 1});
  for (int i = 0; i < 10; ++i) points.push_back({0.51 + 0.008 * i, 0});
  const double ap = *stats::auprc(points);
  const double ba = *stats::balanced_accuracy(points);
  char buf[96];
  std::snprintf(buf, sizeof buf, "AUPRC %.2f, BA %.2f", stats::round2(ap), stats::round2(ba));
  return {stats::round2(ap) == 100.00 && ba < 100.0, buf};
}

Outcome leakage_audit() {
  testing::TempDir dir;
  runner::RunStore store(dir.path());
  std::vector<dataset::CaseRecord> cases;
  std::vector<runner::ArmGeneration> gens;
  for (int i = 0; i < 100; ++i) {
    const std::string id = "L" + std::to_string(100 + i);
    cases.push_back({id, {{"idx", std::to_string(i)}}, i % 2});
    gens.push_back({runner::kArmInitial, parser::parse_generation("good credit\nFirst point. Second point.", id, 0)});
  }
  store.write_cases(cases);
  store.append_generations(gens);
  runner::RunConfig cfg;
  cfg.folds = 3;
  cfg.fold_seed = 4;
  auto scorer = verifier::make_kfold_scorer("mock", 3, [](const std::string&, const std::string&, int fold) {
    return 0.25 + 0.25 * fold;
  });
  runner::run_scoring(cfg, store, store.load(), {{"mock", scorer}});

  const auto record = store.load();
  int rows = 0, leaks = 0;
  std::istringstream audit(testing::read_file(store.file("score_audit.jsonl")));
  for (std::string line; std::getline(audit, line);) {
    const auto j = nlohmann::json::parse(line);
    ++rows;
    const int fold = record.plan->fold_of(j.at("case_id").get<std::string>());
    for (const auto& f : j.at("trained_on_folds")) leaks += f.get<int>() == fold;
  }
  const auto violations = verifier::audit_violations(*record.plan, record.scores);
  return {rows == 200 && leaks == 0 && violations.empty() && record.scores.size() == 200,
          std::to_string(rows) + " audit rows, " + std::to_string(leaks + int(violations.size())) + " violations"};
}

Outcome golden_prompts() {
  const fs::path golden = FACTGUARD_GOLDEN_DIR;
  const std::string x = "checking_status: A11; age: 65th percentile";
  const std::string y = "good credit\nIncome is high. Savings are ample.";
  const prompts::PromptSet ps;
  std::vector<std::string> bad;
  auto check = [&](const std::string& file, const std::string& rendered) {
    if (rendered != testing::read_file(golden / file)) bad.push_back(file);
  };
  check("generation.txt", ps.render_generation(x));
  check("feedback_probe.txt", ps.render_feedback_probe(x, "income is high"));
  check("round_context.txt", ps.build_round_context(x, y));
  check("refinement_single.txt", ps.render_refinement(x, y, {"Income is high."}));
  check("refinement_multi.txt", ps.render_refinement(x, y, {"Income is high.", "Savings are ample."}));
  const bool literal =
      ps.render_refinement(x, y, {"p"}).find("These errors does not match the given attributes.") != std::string::npos;
  std::string detail = "5 golden files";
  for (const auto& b : bad) detail += ", mismatch " + b;
  if (!literal) detail += ", literal sentence missing";
  return {bad.empty() && literal, detail};
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

Outcome end_to_end() {
  const auto start = std::chrono::steady_clock::now();
  const auto cfg = scenario::config();

  testing::TempDir follow_dir;
  const auto follow = scenario::make(scenario::Mode::kFollowsFeedback);
  int injected = 0, injected_wrong = 0;
  for (const auto& c : follow.cases) {
    injected += c.hallucinated;
    injected_wrong += c.hallucinated && c.initial_decision != c.record.label;
  }
  scenario::run_all(follow, follow_dir.path());
  const auto record = runner::RunStore(follow_dir.path()).load();
  const auto assoc = runner::association_table(cfg, record);
  const auto table = runner::adaptive_table(cfg, record);
  const auto& base = table.at(0);
  const auto& oracle_row = table.at(1);

  testing::TempDir ignore_dir;
  scenario::run_all(scenario::make(scenario::Mode::kIgnoresFeedback), ignore_dir.path());
  const auto ignore_record = runner::RunStore(ignore_dir.path()).load();
  bool all_equal = true;
  std::vector<runner::ArmMetrics> ignore_rows = runner::adaptive_table(cfg, ignore_record);
  for (const auto& r : runner::granularity_table(cfg, ignore_record)) ignore_rows.push_back(r);
  for (const auto& r : runner::rounds_series(cfg, ignore_record)) ignore_rows.push_back(r.metrics);
  for (const auto& r : ignore_rows) {
    all_equal = all_equal && r.status == "ok" && r.f1 == ignore_rows[0].f1 &&
                r.weighted_cost == ignore_rows[0].weighted_cost;
  }
  const double secs = elapsed_since(start);

  const bool pass = injected == 8 && injected_wrong == 6 && assoc.status == "ok" && assoc.pearson &&
                    *assoc.pearson > 0 && assoc.risk_difference && *assoc.risk_difference > 0 && base.f1 &&
                    oracle_row.f1 && *oracle_row.f1 > *base.f1 && oracle_row.weighted_cost < base.weighted_cost &&
                    all_equal && secs < kEndToEndBudgetS;
  std::ostringstream detail;
  detail << "pearson " << fmt(assoc.pearson) << ", RD " << fmt(assoc.risk_difference) << ", F1 "
         << fmt(base.f1) << " -> " << fmt(oracle_row.f1) << ", cost " << base.weighted_cost << " -> "
         << oracle_row.weighted_cost << ", ignoring mock " << ignore_rows.size() << " arms "
         << (all_equal ? "all equal to baseline" : "DIVERGE");
  return {pass, detail.str()};
}

std::map<std::string, std::string> read_dir(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = testing::read_file(e.path());
  return out;
}

std::string exchanges_without_latency(const fs::path& path) {
  std::istringstream in(testing::read_file(path));
  std::string out;
  for (std::string line; std::getline(in, line);) {
    auto j = nlohmann::ordered_json::parse(line);
    j.erase("latency_ms");
    out += j.dump() + "\n";
  }
  return out;
}

Outcome determinism_and_replay() {
  const auto s = scenario::make(scenario::Mode::kFollowsFeedback);
  testing::TempDir a, b;
  scenario::run_all(s, a.path());
  scenario::run_all(s, b.path());
  runner::RunStore store_a(a.path());
  const auto first = read_dir(store_a.reports_dir());
  const bool identical = first == read_dir(runner::RunStore(b.path()).reports_dir());
  const bool logs = exchanges_without_latency(a / "exchanges.jsonl") == exchanges_without_latency(b / "exchanges.jsonl");

  fs::remove_all(store_a.reports_dir());
  runner::emit_report(scenario::config(), store_a);
  const bool replayed = read_dir(store_a.reports_dir()) == first;
  std::ostringstream detail;
  detail << first.size() << " report files; runs " << (identical ? "identical" : "DIFFER") << ", run logs "
         << (logs ? "identical" : "DIFFER") << ", replay " << (replayed ? "exact" : "DIFFERS");
  return {identical && logs && replayed && first.size() >= 9, detail.str()};
}

Outcome multi_round_context() {
  using lm::MatchKind;
  testing::TempDir dir;
  runner::RunStore store(dir.path());
  const dataset::CaseRecord c{"m1", {{"savings", "5th percentile"}, {"duration", "90th percentile"}}, 0};
  store.write_cases({c});
  const prompts::PromptSet ps;
  const auto x = dataset::render_attributes(c);
  auto response = [](int round) {
    return std::string(round % 2 ? "bad credit" : "good credit") + "\nMarker" + std::to_string(round) +
           " savings reading. Marker" + std::to_string(round) + " duration reading.";
  };
  lm::MockScript script;
  script.push_back({MatchKind::kContains, "does this imply", "No.", false});
  script.push_back({MatchKind::kExact, ps.render_generation(x), response(0), false});
  for (int r = 3; r >= 0; --r) {
    script.push_back({MatchKind::kContains, "Marker" + std::to_string(r) + " ", response(r + 1), false});
  }
  auto mock = lm::register_mock(script, "generation", 1);
  runner::Backends backends;
  backends.generation = mock;
  backends.self_reflection = mock;
  backends.attach_log();
  runner::RunConfig cfg;
  cfg.rounds = 4;
  runner::run_initial(cfg, store, backends);
  runner::run_multi_round_experiment(cfg, store, backends, ps, 4);

  const auto record = store.load();
  const auto* r4 = record.find(runner::kArmRounds, "m1", 4);
  std::string round4_prompt;
  for (const auto& p : mock->prompts()) {
    if (p.find("factual errors") != std::string::npos && p.find("Marker3 ") != std::string::npos) round4_prompt = p;
  }
  const bool has_latest = round4_prompt.find(response(3)) != std::string::npos;
  const bool has_x = round4_prompt.find(x) != std::string::npos;
  const bool no_early = round4_prompt.find("Marker1") == std::string::npos &&
                        round4_prompt.find("Marker2") == std::string::npos &&
                        round4_prompt.find("Marker0") == std::string::npos;
  const bool reached = r4 && r4->raw == response(4);
  std::ostringstream detail;
  detail << "round-4 prompt: latest response " << (has_latest ? "present" : "MISSING") << ", attributes "
         << (has_x ? "present" : "MISSING") << ", rounds 0-2 text " << (no_early ? "absent" : "PRESENT");
  return {reached && has_latest && has_x && no_early, detail.str()};
}

}  // namespace

int main() {
  report("metric-oracle equivalence", metric_oracles);
  report("wilcoxon exactness", wilcoxon_exactness);
  report("auprc/ba divergence fixture", auprc_ba_divergence);
  report("leakage audit (100 cases, 3 folds)", leakage_audit);
  report("prompt golden files", golden_prompts);
  report("end-to-end scripted scenario", end_to_end);
  report("determinism and replay", determinism_and_replay);
  report("multi-round context audit", multi_round_context);
  std::printf("%d criteria failed\n", failures);
  return failures;
}
