#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace factguard::prompts {

enum class TemplateKind { kGeneration, kFeedbackProbe, kRoundContext, kRefinement };

// Placeholders: {X} rendered attributes, {Y_i} one reasoning point, {Y} a
// previous raw response, {F} the flagged errors.
struct PromptTemplate {
  TemplateKind kind;
  std::string text;
};

class PromptSet {
 public:
  // Built-in wording.
  PromptSet();

  // Reads generation.txt, feedback_probe.txt, round_context.txt and
  // refinement.txt from `dir`. Missing files keep the built-in wording.
  static PromptSet from_directory(const std::filesystem::path& dir);

  const PromptTemplate& get(TemplateKind kind) const;
  void set(TemplateKind kind, std::string text);  // validates placeholders

  std::string render_generation(std::string_view x) const;
  std::string render_feedback_probe(std::string_view x, std::string_view point) const;
  // Context for a refinement round: the original attributes and the latest
  // response only. Earlier rounds never appear.
  std::string build_round_context(std::string_view x, std::string_view latest_response) const;
  // Round context followed by the refinement instruction with {F} filled.
  std::string render_refinement(std::string_view x, std::string_view y_raw,
                                const std::vector<std::string>& flagged) const;

 private:
  PromptTemplate& slot(TemplateKind kind);

  PromptTemplate generation_;
  PromptTemplate feedback_probe_;
  PromptTemplate round_context_;
  PromptTemplate refinement_;
};

// One point renders as itself; several render as "- " bullets, one per line,
// starting on a new line.
std::string join_flagged(const std::vector<std::string>& flagged);

std::string_view default_template(TemplateKind kind);
std::string_view template_filename(TemplateKind kind);

}  // namespace factguard::prompts
