#include "factguard/prompts.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>
#include <utility>

#include "factguard/errors.hpp"

namespace factguard::prompts {

namespace {

constexpr std::string_view kGeneration =
    "Assess the creditworthiness of a customer using the following attributes for financial status. "
    "Respond with the final decision of either 'good credit' or 'bad credit' in the first line. "
    "Respond with the reasoning on the final decision in the second line. "
    "And the attributes are as follows: {X}. Response: ";

constexpr std::string_view kFeedbackProbe = "{X}. Question: does this imply {Y_i}? Yes or No? Response: ";

constexpr std::string_view kRoundContext =
    "The attributes are as follows: {X}.\n"
    "Your previous response: {Y}\n";

constexpr std::string_view kRefinement =
    "Your previous response contains the following factual errors: {F}. "
    "These errors does not match the given attributes. "
    "Based on the feedback, improve your decision and reasoning. Response: ";

constexpr std::array<std::string_view, 4> kPlaceholders = {"{X}", "{Y_i}", "{Y}", "{F}"};

struct Binding {
  std::string_view placeholder;
  std::string_view value;
};

// Single left-to-right pass, so substituted text is never re-expanded.
std::string substitute(std::string_view text, std::initializer_list<Binding> bindings) {
  std::string out;
  out.reserve(text.size() + 256);
  std::size_t i = 0;
  while (i < text.size()) {
    bool matched = false;
    if (text[i] == '{') {
      for (const auto& b : bindings) {
        if (text.substr(i, b.placeholder.size()) == b.placeholder) {
          out.append(b.value);
          i += b.placeholder.size();
          matched = true;
          break;
        }
      }
    }
    if (!matched) out.push_back(text[i++]);
  }
  return out;
}

std::vector<std::string_view> required_placeholders(TemplateKind kind) {
  switch (kind) {
    case TemplateKind::kGeneration: return {"{X}"};
    case TemplateKind::kFeedbackProbe: return {"{X}", "{Y_i}"};
    case TemplateKind::kRoundContext: return {"{X}", "{Y}"};
    case TemplateKind::kRefinement: return {"{F}"};
  }
  return {};
}

void validate(const PromptTemplate& t) {
  const auto required = required_placeholders(t.kind);
  for (auto p : required) {
    if (t.text.find(p) == std::string::npos) {
      throw ConfigError(std::string(template_filename(t.kind)) + " lacks placeholder " + std::string(p));
    }
  }
  for (auto p : kPlaceholders) {
    const bool allowed = std::find(required.begin(), required.end(), p) != required.end();
    if (!allowed && t.text.find(p) != std::string::npos) {
      throw ConfigError(std::string(template_filename(t.kind)) + " uses unsupported placeholder " + std::string(p));
    }
  }
}

void require_non_empty(std::string_view value, const char* what) {
  if (value.empty()) throw ContractViolation(std::string(what) + " must be non-empty");
}

}  // namespace

std::string_view default_template(TemplateKind kind) {
  switch (kind) {
    case TemplateKind::kGeneration: return kGeneration;
    case TemplateKind::kFeedbackProbe: return kFeedbackProbe;
    case TemplateKind::kRoundContext: return kRoundContext;
    case TemplateKind::kRefinement: return kRefinement;
  }
  return {};
}

std::string_view template_filename(TemplateKind kind) {
  switch (kind) {
    case TemplateKind::kGeneration: return "generation.txt";
    case TemplateKind::kFeedbackProbe: return "feedback_probe.txt";
    case TemplateKind::kRoundContext: return "round_context.txt";
    case TemplateKind::kRefinement: return "refinement.txt";
  }
  return {};
}

PromptSet::PromptSet()
    : generation_{TemplateKind::kGeneration, std::string(kGeneration)},
      feedback_probe_{TemplateKind::kFeedbackProbe, std::string(kFeedbackProbe)},
      round_context_{TemplateKind::kRoundContext, std::string(kRoundContext)},
      refinement_{TemplateKind::kRefinement, std::string(kRefinement)} {}

PromptSet PromptSet::from_directory(const std::filesystem::path& dir) {
  PromptSet set;
  for (auto kind : {TemplateKind::kGeneration, TemplateKind::kFeedbackProbe, TemplateKind::kRoundContext,
                    TemplateKind::kRefinement}) {
    const auto path = dir / template_filename(kind);
    if (!std::filesystem::exists(path)) continue;
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    set.set(kind, buf.str());
  }
  return set;
}

PromptTemplate& PromptSet::slot(TemplateKind kind) {
  switch (kind) {
    case TemplateKind::kGeneration: return generation_;
    case TemplateKind::kFeedbackProbe: return feedback_probe_;
    case TemplateKind::kRoundContext: return round_context_;
    case TemplateKind::kRefinement: break;
  }
  return refinement_;
}

const PromptTemplate& PromptSet::get(TemplateKind kind) const {
  return const_cast<PromptSet*>(this)->slot(kind);
}

void PromptSet::set(TemplateKind kind, std::string text) {
  PromptTemplate t{kind, std::move(text)};
  validate(t);
  slot(kind) = std::move(t);
}

std::string PromptSet::render_generation(std::string_view x) const {
  require_non_empty(x, "attributes");
  return substitute(generation_.text, {{"{X}", x}});
}

std::string PromptSet::render_feedback_probe(std::string_view x, std::string_view point) const {
  require_non_empty(x, "attributes");
  require_non_empty(point, "reasoning point");
  return substitute(feedback_probe_.text, {{"{X}", x}, {"{Y_i}", point}});
}

std::string PromptSet::build_round_context(std::string_view x, std::string_view latest_response) const {
  require_non_empty(x, "attributes");
  return substitute(round_context_.text, {{"{X}", x}, {"{Y}", latest_response}});
}

std::string PromptSet::render_refinement(std::string_view x, std::string_view y_raw,
                                         const std::vector<std::string>& flagged) const {
  if (flagged.empty()) {
    throw ContractViolation("render_refinement: flagged list is empty; refinement must be skipped");
  }
  const std::string errors = join_flagged(flagged);
  return build_round_context(x, y_raw) + substitute(refinement_.text, {{"{F}", errors}});
}

std::string join_flagged(const std::vector<std::string>& flagged) {
  if (flagged.size() == 1) return flagged.front();
  std::string out;
  for (const auto& p : flagged) {
    out += "\n- ";
    out += p;
  }
  return out;
}

}  // namespace factguard::prompts
