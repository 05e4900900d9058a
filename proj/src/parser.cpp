#include "factguard/parser.hpp"

#include <algorithm>
#include <cctype>

#include "factguard/errors.hpp"

namespace factguard::parser {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

// Removes any run of leading enumeration markers: "1.", "12)", "(3)", "-",
// "*", "•".
std::string_view strip_markers(std::string_view s) {
  while (true) {
    s = trim(s);
    if (s.empty()) return s;
    if (s.starts_with("\xE2\x80\xA2")) {  // •
      s.remove_prefix(3);
      continue;
    }
    if (s.front() == '-' || s.front() == '*') {
      s.remove_prefix(1);
      continue;
    }
    std::size_t i = 0;
    const bool paren = s.front() == '(';
    if (paren) ++i;
    const std::size_t digits_begin = i;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    if (i > digits_begin && i < s.size() && (s[i] == '.' || s[i] == ')')) {
      // A decimal number such as "3.5" is content, not a marker.
      if (s[i] == '.' && i + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[i + 1]))) return s;
      if (paren && s[i] != ')') return s;
      s.remove_prefix(i + 1);
      continue;
    }
    return s;
  }
}

bool is_sentence_end(std::string_view text, std::size_t i) {
  const char c = text[i];
  if (c != '.' && c != '!' && c != '?') return false;
  return i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1]));
}

}  // namespace

std::vector<std::string> Generation::point_texts() const {
  std::vector<std::string> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(p.text);
  return out;
}

std::string Generation::reasoning_text() const {
  std::string out;
  for (const auto& p : points) {
    if (!out.empty()) out += ' ';
    out += p.text;
  }
  return out;
}

Decision parse_decision_line(std::string_view line) {
  const std::string l = lower(line);
  const bool good = l.find("good credit") != std::string::npos;
  const bool bad = l.find("bad credit") != std::string::npos;
  if (good == bad) return Decision::kInvalid;
  return good ? Decision::kGood : Decision::kBad;
}

std::vector<ReasoningPoint> segment_points(std::string_view reasoning) {
  std::vector<std::string> pieces;
  std::size_t line_start = 0;
  while (line_start <= reasoning.size()) {
    auto line_end = reasoning.find('\n', line_start);
    if (line_end == std::string_view::npos) line_end = reasoning.size();
    const std::string_view line = reasoning.substr(line_start, line_end - line_start);
    std::size_t start = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == ';') {
        pieces.emplace_back(line.substr(start, i - start));
        start = i + 1;
      } else if (is_sentence_end(line, i)) {
        pieces.emplace_back(line.substr(start, i + 1 - start));
        start = i + 1;
      }
    }
    if (start < line.size()) pieces.emplace_back(line.substr(start));
    line_start = line_end + 1;
  }

  std::vector<ReasoningPoint> points;
  for (const auto& piece : pieces) {
    const auto text = strip_markers(piece);
    if (text.empty()) continue;
    // Pieces made only of punctuation carry no claim.
    if (std::none_of(text.begin(), text.end(), [](unsigned char c) { return std::isalnum(c); })) continue;
    points.push_back({static_cast<int>(points.size()) + 1, std::string(text)});
  }
  return points;
}

Generation parse_generation(std::string_view raw, std::string case_id, int round) {
  Generation g;
  g.case_id = std::move(case_id);
  g.round = round;
  g.raw = std::string(raw);
  std::size_t pos = 0;
  while (pos < raw.size()) {
    auto end = raw.find('\n', pos);
    if (end == std::string_view::npos) end = raw.size();
    const auto line = raw.substr(pos, end - pos);
    if (!trim(line).empty()) {
      g.decision = parse_decision_line(line);
      g.points = segment_points(end < raw.size() ? raw.substr(end + 1) : std::string_view{});
      return g;
    }
    pos = end + 1;
  }
  return g;
}

YesNo parse_yes_no(std::string_view raw) {
  std::size_t i = 0;
  while (i < raw.size() && !std::isalnum(static_cast<unsigned char>(raw[i]))) ++i;
  std::size_t j = i;
  while (j < raw.size() && std::isalpha(static_cast<unsigned char>(raw[j]))) ++j;
  const std::string token = lower(raw.substr(i, j - i));
  if (token == "yes") return YesNo::kYes;
  if (token == "no") return YesNo::kNo;
  return YesNo::kUnparseable;
}

std::string_view decision_name(Decision d) {
  switch (d) {
    case Decision::kGood: return "good";
    case Decision::kBad: return "bad";
    case Decision::kInvalid: break;
  }
  return "invalid";
}

Decision decision_from_name(std::string_view name) {
  if (name == "good") return Decision::kGood;
  if (name == "bad") return Decision::kBad;
  if (name == "invalid") return Decision::kInvalid;
  throw ParseError("unknown decision name: " + std::string(name));
}

std::string_view yes_no_name(YesNo v) {
  switch (v) {
    case YesNo::kYes: return "yes";
    case YesNo::kNo: return "no";
    case YesNo::kUnparseable: break;
  }
  return "unparseable";
}

nlohmann::ordered_json generation_to_json(const Generation& g) {
  nlohmann::ordered_json points = nlohmann::ordered_json::array();
  for (const auto& p : g.points) points.push_back({{"index", p.index}, {"text", p.text}});
  nlohmann::ordered_json j;
  j["case_id"] = g.case_id;
  j["round"] = g.round;
  j["decision"] = decision_name(g.decision);
  j["points"] = std::move(points);
  j["raw"] = g.raw;
  j["note"] = g.note;
  return j;
}

Generation generation_from_json(const nlohmann::json& j) {
  Generation g;
  g.case_id = j.at("case_id").get<std::string>();
  g.round = j.at("round").get<int>();
  g.decision = decision_from_name(j.at("decision").get<std::string>());
  for (const auto& p : j.at("points")) {
    g.points.push_back({p.at("index").get<int>(), p.at("text").get<std::string>()});
  }
  g.raw = j.at("raw").get<std::string>();
  g.note = j.value("note", std::string());
  return g;
}

}  // namespace factguard::parser
