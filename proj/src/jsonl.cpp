#include "factguard/jsonl.hpp"

#include <fstream>

#include "factguard/errors.hpp"

namespace factguard::jsonl {

void for_each(const std::filesystem::path& path,
              const std::function<void(const nlohmann::json&, long)>& fn) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(path.filename().string() + " line " + std::to_string(line_no) + ": " + e.what(),
                       line_no);
    }
    fn(row, line_no);
  }
}

std::vector<nlohmann::json> read_all(const std::filesystem::path& path) {
  std::vector<nlohmann::json> rows;
  if (!std::filesystem::exists(path)) return rows;
  for_each(path, [&](const nlohmann::json& row, long) { rows.push_back(row); });
  return rows;
}

void write_all(const std::filesystem::path& path, const std::vector<nlohmann::ordered_json>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (const auto& row : rows) out << row.dump() << '\n';
}

Appender::Appender(std::filesystem::path path) : path_(std::move(path)) {}

void Appender::append(const nlohmann::ordered_json& row) {
  const std::string line = row.dump() + "\n";
  std::lock_guard lock(mu_);
  std::ofstream out(path_, std::ios::app);
  if (!out) throw ConfigError("cannot append to " + path_.string());
  out << line;
  out.flush();
}

}  // namespace factguard::jsonl
