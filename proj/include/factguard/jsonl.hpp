#pragma once

#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace factguard::jsonl {

// Calls `fn(object, line_number)` for every non-blank line. Malformed JSON
// raises ParseError carrying the 1-based line number.
void for_each(const std::filesystem::path& path,
              const std::function<void(const nlohmann::json&, long)>& fn);

std::vector<nlohmann::json> read_all(const std::filesystem::path& path);

// Truncates and writes one compact object per line.
void write_all(const std::filesystem::path& path, const std::vector<nlohmann::ordered_json>& rows);

// Append-only writer. Each append is flushed before returning; appends from
// several threads are serialized.
class Appender {
 public:
  explicit Appender(std::filesystem::path path);

  void append(const nlohmann::ordered_json& row);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mu_;
};

}  // namespace factguard::jsonl
