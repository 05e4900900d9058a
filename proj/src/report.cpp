#include <cstdio>
#include <fstream>
#include <sstream>

#include "factguard/errors.hpp"
#include "factguard/runner.hpp"

namespace factguard::runner {

namespace fs = std::filesystem;

namespace {

std::string fixed(const std::optional<double>& v, int digits) {
  if (!v) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, *v);
  return buf;
}

nlohmann::ordered_json maybe(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

// Rounded to the reported precision so JSON and CSV agree.
nlohmann::ordered_json maybe2(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(stats::round2(*v)) : nlohmann::ordered_json(nullptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string status_of(const std::exception& e) {
  if (dynamic_cast<const IncompleteAnnotationError*>(&e)) return std::string("pending: ") + e.what();
  return std::string("failed: ") + e.what();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::uint64_t fnv1a(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::uint64_t h = 1469598103934665603ULL;
  char buf[8192];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  return h;
}

std::size_t line_count(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ++n;
  }
  return n;
}

std::string metrics_csv(const std::string& key, const std::vector<ArmMetrics>& rows, const std::string& model) {
  std::ostringstream out;
  out << "model," << key << ",arm,status,f1,weighted_cost,tp,fp,fn,tn,n\n";
  for (const auto& r : rows) {
    const bool ok = r.status == "ok";
    out << csv_field(model) << ',' << csv_field(r.label) << ',' << csv_field(r.arm) << ',' << csv_field(r.status)
        << ',' << (ok ? fixed(r.f1, 2) : "NA") << ',' << (ok ? std::to_string(r.weighted_cost) : "NA");
    for (auto v : {r.confusion.tp, r.confusion.fp, r.confusion.fn, r.confusion.tn}) {
      out << ',' << (ok ? std::to_string(v) : "NA");
    }
    out << ',' << r.n << '\n';
  }
  return out.str();
}

nlohmann::ordered_json metrics_json(const std::vector<ArmMetrics>& rows) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& r : rows) out.push_back(r.to_json());
  return out;
}

nlohmann::ordered_json association_json(const AssociationRow& row) {
  nlohmann::ordered_json j;
  j["model"] = row.model;
  j["status"] = row.status;
  j["pearson"] = maybe(row.pearson);
  j["risk_difference"] = maybe(row.risk_difference);
  j["n_cases"] = row.n_cases;
  j["n_hallucinated"] = row.n_hallucinated;
  j["n_misclassified"] = row.n_misclassified;
  return j;
}

nlohmann::ordered_json detection_json(const DetectionRow& row) {
  nlohmann::ordered_json j;
  j["model"] = row.model;
  j["scorer"] = row.scorer;
  j["status"] = row.status;
  j["auprc"] = maybe2(row.auprc);
  j["balanced_accuracy"] = maybe2(row.balanced_accuracy);
  j["wilcoxon_p"] = maybe(row.wilcoxon_p);
  j["n_points"] = row.n_points;
  j["n_positive"] = row.n_positive;
  return j;
}

std::string safe_name(const std::string& id) {
  std::string out;
  for (char c : id) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out;
}

}  // namespace

nlohmann::ordered_json ArmMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["arm"] = arm;
  j["label"] = label;
  j["status"] = status;
  const bool ok = status == "ok";
  j["f1"] = ok ? maybe2(f1) : nlohmann::ordered_json(nullptr);
  j["weighted_cost"] = ok ? nlohmann::ordered_json(weighted_cost) : nlohmann::ordered_json(nullptr);
  j["confusion"] = {{"tp", confusion.tp}, {"fp", confusion.fp}, {"fn", confusion.fn}, {"tn", confusion.tn}};
  j["n"] = n;
  return j;
}

std::vector<stats::LabeledOutcome> arm_outcomes(const RunRecord& record, const std::string& arm,
                                                std::optional<int> round) {
  std::vector<stats::LabeledOutcome> out;
  std::vector<std::string> missing;
  for (const auto& c : record.cases) {
    const auto* g = round ? record.find(arm, c.id, *round) : record.latest(arm, c.id);
    if (!g) {
      missing.push_back(c.id);
      continue;
    }
    out.push_back({c.id, g->decision, c.label, std::nullopt});
  }
  if (!missing.empty()) {
    throw NotFoundError("arm " + arm + " has no generation for " + std::to_string(missing.size()) + " case(s), first " +
                        missing.front());
  }
  return out;
}

ArmMetrics arm_metrics(const RunRecord& record, const std::string& arm, const std::string& label,
                       std::optional<int> round) {
  ArmMetrics m;
  m.arm = arm;
  m.label = label;
  if (const auto it = record.arm_errors.find(arm); it != record.arm_errors.end()) {
    m.status = "failed: " + it->second;
    return m;
  }
  if (record.cases.empty()) {
    m.status = "pending";
    return m;
  }
  std::vector<stats::LabeledOutcome> outcomes;
  try {
    outcomes = arm_outcomes(record, arm, round);
  } catch (const NotFoundError&) {
    m.status = "pending";
    return m;
  }
  m.n = outcomes.size();
  m.confusion = stats::confusion(outcomes);
  m.f1 = stats::f1(m.confusion);
  m.weighted_cost = stats::weighted_cost(m.confusion);
  return m;
}

std::vector<ArmMetrics> adaptive_table(const RunConfig& config, const RunRecord& record) {
  std::vector<ArmMetrics> rows;
  rows.push_back(arm_metrics(record, kArmInitial, "No feedback", 0));
  for (auto source : config.feedback_sources) {
    switch (source) {
      case feedback::Source::kOracle:
        rows.push_back(arm_metrics(record, kArmOracle, "Oracle", 1));
        break;
      case feedback::Source::kVerifier: {
        std::vector<std::string> ids;
        for (const auto& s : config.scorers) ids.push_back(s.id);
        for (const auto& id : record.scorer_ids()) {
          if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
        }
        for (const auto& id : ids) rows.push_back(arm_metrics(record, verifier_arm(id), "Verifier (" + id + ")", 1));
        break;
      }
      case feedback::Source::kSelfReflection:
        rows.push_back(arm_metrics(record, kArmSelfReflection, "Self-reflection", 1));
        break;
      case feedback::Source::kFinetunedSlm:
        rows.push_back(arm_metrics(record, kArmFinetuned, "Fine-tuned SLM", 1));
        break;
    }
  }
  return rows;
}

std::vector<ArmMetrics> granularity_table(const RunConfig&, const RunRecord& record) {
  return {arm_metrics(record, kArmSinglePoint, "single_point", 1),
          arm_metrics(record, kArmEntireContent, "entire_content", 1)};
}

std::vector<RoundMetrics> rounds_series(const RunConfig& config, const RunRecord& record) {
  std::vector<RoundMetrics> out;
  out.push_back({0, arm_metrics(record, kArmInitial, "round 0", 0)});
  int last = config.rounds;
  if (const auto a = record.generations.find(kArmRounds); a != record.generations.end()) {
    for (const auto& [id, by_round] : a->second) {
      if (!by_round.empty()) last = std::max(last, by_round.rbegin()->first);
    }
  }
  for (int r = 1; r <= last; ++r) {
    out.push_back({r, arm_metrics(record, kArmRounds, "round " + std::to_string(r), r)});
  }
  return out;
}

AssociationRow association_table(const RunConfig& config, const RunRecord& record) {
  try {
    return run_association(config, record);
  } catch (const std::exception& e) {
    AssociationRow row;
    row.model = config.model_label;
    row.status = status_of(e);
    return row;
  }
}

std::vector<DetectionRow> detection_table(const RunConfig& config, const RunRecord& record) {
  std::vector<std::string> ids;
  for (const auto& s : config.scorers) ids.push_back(s.id);
  for (const auto& id : record.scorer_ids()) {
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
  }
  std::vector<DetectionRow> rows;
  for (const auto& id : ids) {
    DetectionRow row;
    row.model = config.model_label;
    row.scorer = id;
    try {
      bool has_scores = false;
      for (const auto& s : record.scores) has_scores = has_scores || s.scorer_id == id;
      if (!has_scores) {
        row.status = "pending";
      } else {
        RunRecord only = record;
        std::erase_if(only.scores, [&](const verifier::VerifierScore& s) { return s.scorer_id != id; });
        row = run_detection_eval(config, only).front();
      }
    } catch (const std::exception& e) {
      row.status = status_of(e);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

prompts::PromptSet load_prompts(const RunConfig& config) {
  return config.prompts_dir.empty() ? prompts::PromptSet() : prompts::PromptSet::from_directory(config.prompts_dir);
}

std::vector<fs::path> emit_report(const RunConfig& config, const RunStore& store) {
  const RunRecord record = store.load();
  const auto dir = store.reports_dir();
  fs::create_directories(dir);
  std::vector<fs::path> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(dir / name, text);
    written.push_back(dir / name);
  };
  const std::string& model = config.model_label;

  const auto assoc = association_table(config, record);
  {
    std::ostringstream csv;
    csv << "model,status,pearson,risk_difference,n_cases,n_hallucinated,n_misclassified\n";
    const bool ok = assoc.status == "ok";
    csv << csv_field(model) << ',' << csv_field(assoc.status) << ',' << (ok ? fixed(assoc.pearson, 4) : "NA") << ','
        << (ok ? fixed(assoc.risk_difference, 4) : "NA") << ',' << assoc.n_cases << ',' << assoc.n_hallucinated << ','
        << assoc.n_misclassified << '\n';
    emit("table1_association.csv", csv.str());
    emit("table1_association.json", association_json(assoc).dump(2) + "\n");
  }

  const auto detection = detection_table(config, record);
  {
    std::ostringstream csv;
    csv << "model,scorer,status,auprc,balanced_accuracy,wilcoxon_p,n_points,n_positive\n";
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : detection) {
      const bool ok = r.status == "ok";
      char p[32] = "NA";
      if (ok && r.wilcoxon_p) std::snprintf(p, sizeof p, "%.4g", *r.wilcoxon_p);
      csv << csv_field(model) << ',' << csv_field(r.scorer) << ',' << csv_field(r.status) << ','
          << (ok ? fixed(r.auprc, 2) : "NA") << ',' << (ok ? fixed(r.balanced_accuracy, 2) : "NA") << ',' << p << ','
          << r.n_points << ',' << r.n_positive << '\n';
      rows.push_back(detection_json(r));
      if (ok) emit("density_" + safe_name(r.scorer) + ".csv", r.density.to_csv());
    }
    emit("table2_detection.csv", csv.str());
    emit("table2_detection.json", rows.dump(2) + "\n");
  }

  const auto adaptive = adaptive_table(config, record);
  emit("table3_adaptive.csv", metrics_csv("feedback", adaptive, model));
  emit("table3_adaptive.json", metrics_json(adaptive).dump(2) + "\n");

  const auto granularity = granularity_table(config, record);
  emit("table4_granularity.csv", metrics_csv("granularity", granularity, model));
  emit("table4_granularity.json", metrics_json(granularity).dump(2) + "\n");

  const auto series = rounds_series(config, record);
  {
    std::ostringstream csv;
    csv << "model,round,status,f1,weighted_cost\n";
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : series) {
      const bool ok = r.metrics.status == "ok";
      csv << csv_field(model) << ',' << r.round << ',' << csv_field(r.metrics.status) << ','
          << (ok ? fixed(r.metrics.f1, 2) : "NA") << ',' << (ok ? std::to_string(r.metrics.weighted_cost) : "NA")
          << '\n';
      auto j = r.metrics.to_json();
      j["round"] = r.round;
      rows.push_back(j);
    }
    emit("rounds.csv", csv.str());
    emit("rounds.json", rows.dump(2) + "\n");
  }

  nlohmann::ordered_json report;
  report["model"] = model;
  report["association"] = association_json(assoc);
  nlohmann::ordered_json det = nlohmann::ordered_json::array();
  for (const auto& r : detection) det.push_back(detection_json(r));
  report["detection"] = det;
  report["adaptive"] = metrics_json(adaptive);
  report["granularity"] = metrics_json(granularity);
  nlohmann::ordered_json rounds_json = nlohmann::ordered_json::array();
  for (const auto& r : series) {
    auto j = r.metrics.to_json();
    j["round"] = r.round;
    rounds_json.push_back(j);
  }
  report["rounds"] = rounds_json;
  emit("report.json", report.dump(2) + "\n");

  // Raw records every number above is computed from. The exchange log is an
  // audit trail with wall-clock latencies and is not an input.
  nlohmann::ordered_json manifest;
  nlohmann::ordered_json raw = nlohmann::ordered_json::array();
  for (const char* name : {"config.json", "cases.jsonl", "generations.jsonl", "annotations.jsonl", "folds.json",
                           "scores.jsonl", "arm_status.jsonl"}) {
    const auto path = store.file(name);
    if (!fs::exists(path)) continue;
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(path)));
    raw.push_back({{"file", name}, {"lines", line_count(path)}, {"fnv1a64", hash}});
  }
  manifest["raw_records"] = raw;
  nlohmann::ordered_json outputs = nlohmann::ordered_json::array();
  for (const auto& p : written) outputs.push_back(p.filename().string());
  manifest["reports"] = outputs;
  manifest["replay"] = {"factguard", "report", "--run-dir", "<run-dir>"};
  emit("manifest.json", manifest.dump(2) + "\n");
  return written;
}

}  // namespace factguard::runner
