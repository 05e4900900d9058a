#pragma once

// Scripted 20-case run. Eight initial answers carry one invented reasoning
// point ("Duration sits at the 99th percentile."), six of those eight are
// misclassified, and one clean answer is misclassified too. Annotations mark
// exactly the invented points.

#include <filesystem>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "factguard/dataset.hpp"
#include "factguard/feedback.hpp"
#include "factguard/lm_client.hpp"
#include "factguard/runner.hpp"

namespace scenario {

enum class Mode {
  kFollowsFeedback,  // refinement after a flagged point yields the correct decision
  kIgnoresFeedback,  // every refinement repeats the initial answer
};

struct CaseScript {
  factguard::dataset::CaseRecord record;
  bool hallucinated = false;
  int initial_decision = 0;
  std::string initial_raw;
  std::string refined_raw;  // reply to the refinement flagging the invented point
};

struct Scenario {
  std::vector<CaseScript> cases;
  std::vector<factguard::feedback::AnnotationRecord> annotations;
  factguard::lm::MockScript script;
};

inline constexpr const char* kInventedPoint = "Duration sits at the 99th percentile.";

Scenario make(Mode mode);
std::vector<factguard::dataset::CaseRecord> records(const Scenario& s);

factguard::runner::RunConfig config();

// Deployment f trained on every fold except f; probability 0.9 for the
// invented point and 0.2 otherwise.
factguard::verifier::Scorer scorer(int k);

struct RunHandles {
  std::shared_ptr<factguard::lm::MockBackend> backend;
};

// Every pipeline step in CLI order, ending with emit_report.
RunHandles run_all(const Scenario& s, const std::filesystem::path& run_dir);

}  // namespace scenario
