#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace factguard::dataset {

enum class ColumnKind { kNumeric, kCategorical };

struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::kCategorical;
};

// Feature columns only. Preprocessing steps that must stay label-free take
// this type, so they cannot observe the label by construction.
struct FeatureTable {
  std::vector<Column> columns;
  std::vector<std::vector<std::string>> rows;  // rows[r][c] aligned with columns

  std::size_t column_index(const std::string& name) const;  // throws ConfigError
  bool has_column(const std::string& name) const;
};

struct RawTable {
  FeatureTable features;
  std::string label_column;
  std::vector<int> labels;             // one per row, each 0 or 1
  std::vector<std::string> row_ids;    // stable per-row identifiers
};

struct PreprocessConfig {
  std::string label_column = "label";
  // Raw label text -> {0,1}. Empty means the column already holds "0"/"1".
  std::map<std::string, int> label_mapping;
  std::optional<std::string> id_column;
  std::vector<std::string> excluded_features;
  std::vector<std::string> numeric_columns;
  char delimiter = ',';
  std::uint64_t seed = 0;
  std::optional<int> cases_per_class;  // nullopt = "all"

  static PreprocessConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct CaseRecord {
  std::string id;
  std::vector<std::pair<std::string, std::string>> attributes;  // ordered X
  int label = 0;                                               // 1 = good profile

  bool operator==(const CaseRecord&) const = default;
};

RawTable load_table(const std::filesystem::path& path, const PreprocessConfig& config);
RawTable parse_table(const std::string& text, const PreprocessConfig& config);

FeatureTable exclude_features(const FeatureTable& table, const std::vector<std::string>& names);
RawTable exclude_features(const RawTable& table, const std::vector<std::string>& names);

FeatureTable percentile_encode(const FeatureTable& table);
RawTable percentile_encode(const RawTable& table);

// round(100 * |{u : u <= v}| / N) for every v in `values`.
std::vector<int> percentile_ranks(const std::vector<double>& values);
std::string ordinal_percentile(int p);  // 65 -> "65th percentile"

std::vector<CaseRecord> to_cases(const RawTable& table);

std::vector<CaseRecord> balance_sample(const std::vector<CaseRecord>& cases, std::uint64_t seed,
                                       std::optional<int> per_class);

std::string render_attributes(const CaseRecord& c);

// Full preprocessing: load, exclude, encode, build cases, balance.
std::vector<CaseRecord> prepare_cases(const std::filesystem::path& path,
                                      const PreprocessConfig& config);

nlohmann::ordered_json case_to_json(const CaseRecord& c);
CaseRecord case_from_json(const nlohmann::ordered_json& j);
void write_cases(const std::filesystem::path& path, const std::vector<CaseRecord>& cases);
std::vector<CaseRecord> read_cases(const std::filesystem::path& path);

}  // namespace factguard::dataset
