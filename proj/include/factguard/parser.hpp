#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "factguard/stats.hpp"

namespace factguard::parser {

using stats::Decision;

struct ReasoningPoint {
  int index = 0;  // 1-based
  std::string text;

  bool operator==(const ReasoningPoint&) const = default;
};

struct Generation {
  std::string case_id;
  int round = 0;  // 0 = initial generation
  Decision decision = Decision::kInvalid;
  std::vector<ReasoningPoint> points;
  std::string raw;
  std::string note;  // e.g. "no_feedback_skip", "backend_error: ..."

  std::vector<std::string> point_texts() const;
  // Points joined by a single space; the whole-content unit of reasoning.
  std::string reasoning_text() const;
};

enum class YesNo { kYes, kNo, kUnparseable };

Decision parse_decision_line(std::string_view line);

// Splits free reasoning text into points: sentence boundaries (". ", "! ",
// "? ") and semicolons, with enumeration markers ("1.", "2)", "-", "*", "•")
// removed.
std::vector<ReasoningPoint> segment_points(std::string_view reasoning);

Generation parse_generation(std::string_view raw, std::string case_id, int round);

YesNo parse_yes_no(std::string_view raw);

std::string_view decision_name(Decision d);  // "good" | "bad" | "invalid"
Decision decision_from_name(std::string_view name);
std::string_view yes_no_name(YesNo v);

nlohmann::ordered_json generation_to_json(const Generation& g);
Generation generation_from_json(const nlohmann::json& j);

}  // namespace factguard::parser
