#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "factguard/dataset.hpp"
#include "factguard/errors.hpp"
#include "factguard/parser.hpp"
#include "factguard/prompts.hpp"
#include "factguard/runner.hpp"
#include "factguard/stats.hpp"
#include "factguard/verifier_gateway.hpp"

namespace py = pybind11;
using namespace factguard;

namespace {

// Predictions use 0 = bad, 1 = good, None = invalid.
std::vector<stats::LabeledOutcome> outcomes(const std::vector<std::optional<int>>& predicted,
                                            const std::vector<int>& labels,
                                            const std::optional<std::vector<int>>& h = std::nullopt) {
  if (predicted.size() != labels.size() || (h && h->size() != labels.size())) {
    throw ContractViolation("predicted, labels and h must have equal lengths");
  }
  std::vector<stats::LabeledOutcome> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out[i].case_id = std::to_string(i);
    out[i].label = labels[i];
    out[i].predicted = predicted[i] ? static_cast<stats::Decision>(*predicted[i] != 0) : stats::Decision::kInvalid;
    if (h) out[i].h_rsn = (*h)[i];
  }
  return out;
}

std::vector<stats::ScoredPoint> points(const std::vector<double>& probs, const std::vector<int>& truths) {
  if (probs.size() != truths.size()) throw ContractViolation("probs and truths must have equal lengths");
  std::vector<stats::ScoredPoint> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = {probs[i], truths[i]};
  return out;
}

py::dict generation_dict(const parser::Generation& g) {
  py::dict d;
  d["case_id"] = g.case_id;
  d["round"] = g.round;
  d["decision"] = std::string(parser::decision_name(g.decision));
  d["points"] = g.point_texts();
  d["raw"] = g.raw;
  return d;
}

}  // namespace

PYBIND11_MODULE(_factguard, m) {
  m.doc() = "Metrics, prompts and parsing for factuality-aware credit reasoning";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ContractViolation>(m, "ContractViolation", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<IncompleteAnnotationError>(m, "IncompleteAnnotationError", base.ptr());

  m.def("confusion", [](const std::vector<std::optional<int>>& predicted, const std::vector<int>& labels) {
    const auto c = stats::confusion(outcomes(predicted, labels));
    py::dict d;
    d["tp"] = c.tp;
    d["fp"] = c.fp;
    d["fn"] = c.fn;
    d["tn"] = c.tn;
    return d;
  }, py::arg("predicted"), py::arg("labels"));
  m.def("f1", [](const std::vector<std::optional<int>>& predicted, const std::vector<int>& labels) {
    return stats::f1(outcomes(predicted, labels));
  }, py::arg("predicted"), py::arg("labels"), "Positive-class F1 in percent; None when undefined.");
  m.def("weighted_cost", [](const std::vector<std::optional<int>>& predicted, const std::vector<int>& labels) {
    return stats::weighted_cost(outcomes(predicted, labels));
  }, py::arg("predicted"), py::arg("labels"));
  m.def("pearson", [](const std::vector<int>& h, const std::vector<int>& e) { return stats::pearson(h, e); },
        py::arg("h"), py::arg("e"));
  m.def("risk_difference",
        [](const std::vector<std::optional<int>>& predicted, const std::vector<int>& labels, const std::vector<int>& h) {
          return stats::risk_difference(outcomes(predicted, labels, h));
        },
        py::arg("predicted"), py::arg("labels"), py::arg("h"));
  m.def("balanced_accuracy", [](const std::vector<double>& probs, const std::vector<int>& truths, double threshold) {
    return stats::balanced_accuracy(points(probs, truths), threshold);
  }, py::arg("probs"), py::arg("truths"), py::arg("threshold") = stats::kDefaultThreshold);
  m.def("auprc", [](const std::vector<double>& probs, const std::vector<int>& truths) {
    return stats::auprc(points(probs, truths));
  }, py::arg("probs"), py::arg("truths"));
  m.def("wilcoxon_rank_sum", [](const std::vector<double>& a, const std::vector<double>& b) {
    return stats::wilcoxon_rank_sum(a, b);
  }, py::arg("a"), py::arg("b"));
  m.def("density_bins", [](const std::vector<double>& probs, const std::vector<int>& truths, int bins) {
    const auto h = stats::density_bins(points(probs, truths), bins);
    py::dict d;
    d["edges"] = h.edges;
    d["freq_h0"] = h.freq_h0;
    d["freq_h1"] = h.freq_h1;
    d["h0_empty"] = h.h0_empty;
    d["h1_empty"] = h.h1_empty;
    return d;
  }, py::arg("probs"), py::arg("truths"), py::arg("bins") = 10);

  m.def("percentile_ranks", &dataset::percentile_ranks, py::arg("values"));
  m.def("ordinal_percentile", &dataset::ordinal_percentile, py::arg("p"));
  m.def("render_attributes", [](const std::vector<std::pair<std::string, std::string>>& attributes) {
    return dataset::render_attributes({"", attributes, 0});
  }, py::arg("attributes"));

  py::class_<prompts::PromptSet>(m, "PromptSet")
      .def(py::init<>())
      .def_static("from_directory", &prompts::PromptSet::from_directory, py::arg("path"))
      .def("render_generation", &prompts::PromptSet::render_generation, py::arg("x"))
      .def("render_feedback_probe", &prompts::PromptSet::render_feedback_probe, py::arg("x"), py::arg("point"))
      .def("build_round_context", &prompts::PromptSet::build_round_context, py::arg("x"), py::arg("latest_response"))
      .def("render_refinement", &prompts::PromptSet::render_refinement, py::arg("x"), py::arg("y_raw"),
           py::arg("flagged"));

  m.def("parse_generation", [](const std::string& raw, const std::string& case_id, int round) {
    return generation_dict(parser::parse_generation(raw, case_id, round));
  }, py::arg("raw"), py::arg("case_id") = "", py::arg("round") = 0);
  m.def("segment_points", [](const std::string& reasoning) {
    std::vector<std::string> out;
    for (const auto& p : parser::segment_points(reasoning)) out.push_back(p.text);
    return out;
  }, py::arg("reasoning"));
  m.def("parse_yes_no", [](const std::string& raw) { return std::string(parser::yes_no_name(parser::parse_yes_no(raw))); },
        py::arg("raw"));

  m.def("threshold_predict", &verifier::threshold_predict, py::arg("prob"));
  m.def("plan_folds", [](const std::vector<std::pair<std::string, int>>& cases, int k, std::uint64_t seed) {
    std::vector<dataset::CaseRecord> records;
    for (const auto& [id, label] : cases) records.push_back({id, {{"_", "_"}}, label});
    return verifier::plan_folds(records, k, seed).assignment;
  }, py::arg("cases"), py::arg("k"), py::arg("seed"));

  m.def("report", [](const std::filesystem::path& run_dir) {
    const auto config = runner::RunConfig::from_file(run_dir / "config.json");
    std::vector<std::string> out;
    for (const auto& p : runner::emit_report(config, runner::RunStore(run_dir))) out.push_back(p.string());
    return out;
  }, py::arg("run_dir"), "Recomputes every report table from the raw records of a run directory.");
}
