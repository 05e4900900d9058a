#include "factguard/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "factguard/errors.hpp"
#include "factguard/jsonl.hpp"
#include "factguard/rng.hpp"

namespace factguard::dataset {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

// Splits one delimited line. Double-quoted fields may contain the delimiter
// and "" escapes. A space delimiter collapses runs of spaces.
std::vector<std::string> split_fields(const std::string& line, char delim) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == delim) {
      if (delim == ' ' && cur.empty()) continue;
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!(delim == ' ' && cur.empty())) fields.push_back(trim(cur));
  return fields;
}

std::optional<double> parse_number(const std::string& text) {
  double value = 0.0;
  const char* begin = text.data();
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) return std::nullopt;
  return value;
}

}  // namespace

std::size_t FeatureTable::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].name == name) return i;
  }
  throw ConfigError("unknown column: " + name);
}

bool FeatureTable::has_column(const std::string& name) const {
  return std::any_of(columns.begin(), columns.end(),
                     [&](const Column& c) { return c.name == name; });
}

PreprocessConfig PreprocessConfig::from_json(const nlohmann::json& j) {
  PreprocessConfig cfg;
  try {
    cfg.label_column = j.value("label_column", cfg.label_column);
    if (j.contains("label_mapping")) {
      for (const auto& [raw, mapped] : j.at("label_mapping").items()) {
        const int v = mapped.get<int>();
        if (v != 0 && v != 1) throw ConfigError("label_mapping values must be 0 or 1");
        cfg.label_mapping[raw] = v;
      }
    }
    if (j.contains("id_column") && !j.at("id_column").is_null()) {
      cfg.id_column = j.at("id_column").get<std::string>();
    }
    cfg.excluded_features = j.value("excluded_features", std::vector<std::string>{});
    cfg.numeric_columns = j.value("numeric_columns", std::vector<std::string>{});
    const std::string delim = j.value("delimiter", std::string(","));
    if (delim.size() != 1) throw ConfigError("delimiter must be a single character");
    cfg.delimiter = delim[0];
    cfg.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("cases_per_class")) {
      const auto& v = j.at("cases_per_class");
      if (v.is_string()) {
        if (v.get<std::string>() != "all") throw ConfigError("cases_per_class must be \"all\" or a positive integer");
      } else {
        const int k = v.get<int>();
        if (k <= 0) throw ConfigError("cases_per_class must be positive");
        cfg.cases_per_class = k;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dataset config: ") + e.what());
  }
  return cfg;
}

nlohmann::json PreprocessConfig::to_json() const {
  nlohmann::json j;
  j["label_column"] = label_column;
  j["label_mapping"] = label_mapping;
  j["id_column"] = id_column ? nlohmann::json(*id_column) : nlohmann::json(nullptr);
  j["excluded_features"] = excluded_features;
  j["numeric_columns"] = numeric_columns;
  j["delimiter"] = std::string(1, delimiter);
  j["seed"] = seed;
  j["cases_per_class"] = cases_per_class ? nlohmann::json(*cases_per_class) : nlohmann::json("all");
  return j;
}

RawTable parse_table(const std::string& text, const PreprocessConfig& config) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) {
      header = split_fields(line, config.delimiter);
      break;
    }
  }
  if (header.empty()) throw SchemaError("table has no header row");

  auto find = [&](const std::string& name) -> std::optional<std::size_t> {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto label_idx = find(config.label_column);
  if (!label_idx) throw SchemaError("missing label column: " + config.label_column);
  std::optional<std::size_t> id_idx;
  if (config.id_column) {
    id_idx = find(*config.id_column);
    if (!id_idx) throw SchemaError("missing id column: " + *config.id_column);
  }
  const std::set<std::string> numeric(config.numeric_columns.begin(), config.numeric_columns.end());
  for (const auto& name : numeric) {
    if (!find(name)) throw SchemaError("missing numeric column: " + name);
    if (name == config.label_column) throw SchemaError("label column cannot be numeric-encoded");
  }

  RawTable table;
  table.label_column = config.label_column;
  std::vector<std::size_t> feature_idx;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i == *label_idx || (id_idx && i == *id_idx)) continue;
    feature_idx.push_back(i);
    table.features.columns.push_back(
        {header[i], numeric.count(header[i]) ? ColumnKind::kNumeric : ColumnKind::kCategorical});
  }

  long row_no = 0;
  std::set<std::string> seen_ids;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row_no;
    const auto fields = split_fields(line, config.delimiter);
    if (fields.size() != header.size()) {
      throw ParseError("row " + std::to_string(row_no) + ": expected " + std::to_string(header.size()) +
                           " fields, got " + std::to_string(fields.size()),
                       row_no);
    }
    std::vector<std::string> values;
    values.reserve(feature_idx.size());
    for (std::size_t k = 0; k < feature_idx.size(); ++k) {
      const auto& v = fields[feature_idx[k]];
      if (table.features.columns[k].kind == ColumnKind::kNumeric && !parse_number(v)) {
        throw ParseError("row " + std::to_string(row_no) + ": non-numeric value '" + v + "' in column " +
                             table.features.columns[k].name,
                         row_no);
      }
      values.push_back(v);
    }
    const std::string& raw_label = fields[*label_idx];
    int label = 0;
    if (config.label_mapping.empty()) {
      if (raw_label != "0" && raw_label != "1") {
        throw ParseError("row " + std::to_string(row_no) + ": label '" + raw_label + "' is not 0 or 1", row_no);
      }
      label = raw_label == "1" ? 1 : 0;
    } else {
      const auto it = config.label_mapping.find(raw_label);
      if (it == config.label_mapping.end()) {
        throw ParseError("row " + std::to_string(row_no) + ": unmapped label '" + raw_label + "'", row_no);
      }
      label = it->second;
    }
    std::string id = id_idx ? fields[*id_idx] : "case-" + std::to_string(row_no);
    if (!seen_ids.insert(id).second) {
      throw ParseError("row " + std::to_string(row_no) + ": duplicate id '" + id + "'", row_no);
    }
    table.features.rows.push_back(std::move(values));
    table.labels.push_back(label);
    table.row_ids.push_back(std::move(id));
  }
  return table;
}

RawTable load_table(const std::filesystem::path& path, const PreprocessConfig& config) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open table " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_table(buf.str(), config);
}

FeatureTable exclude_features(const FeatureTable& table, const std::vector<std::string>& names) {
  std::set<std::size_t> drop;
  for (const auto& name : names) drop.insert(table.column_index(name));
  FeatureTable out;
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    if (!drop.count(c)) out.columns.push_back(table.columns[c]);
  }
  out.rows.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    std::vector<std::string> kept;
    kept.reserve(out.columns.size());
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (!drop.count(c)) kept.push_back(row[c]);
    }
    out.rows.push_back(std::move(kept));
  }
  return out;
}

RawTable exclude_features(const RawTable& table, const std::vector<std::string>& names) {
  for (const auto& name : names) {
    if (name == table.label_column) throw ConfigError("cannot exclude the label column " + name);
  }
  RawTable out = table;
  out.features = exclude_features(table.features, names);
  return out;
}

std::vector<int> percentile_ranks(const std::vector<double>& values) {
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(values.size());
  std::vector<int> ranks;
  ranks.reserve(values.size());
  for (double v : values) {
    const auto at_most = std::upper_bound(sorted.begin(), sorted.end(), v) - sorted.begin();
    ranks.push_back(static_cast<int>(std::lround(100.0 * static_cast<double>(at_most) / n)));
  }
  return ranks;
}

std::string ordinal_percentile(int p) {
  const int mod100 = p % 100;
  const char* suffix = "th";
  if (mod100 < 11 || mod100 > 13) {
    switch (p % 10) {
      case 1: suffix = "st"; break;
      case 2: suffix = "nd"; break;
      case 3: suffix = "rd"; break;
      default: break;
    }
  }
  return std::to_string(p) + suffix + " percentile";
}

FeatureTable percentile_encode(const FeatureTable& table) {
  FeatureTable out = table;
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    if (table.columns[c].kind != ColumnKind::kNumeric) continue;
    if (table.rows.empty()) throw ConfigError("numeric column " + table.columns[c].name + " is empty");
    std::vector<double> values;
    values.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      const auto v = parse_number(table.rows[r][c]);
      if (!v) {
        throw ParseError("row " + std::to_string(r + 1) + ": non-numeric value in column " + table.columns[c].name,
                         static_cast<long>(r + 1));
      }
      values.push_back(*v);
    }
    const auto ranks = percentile_ranks(values);
    for (std::size_t r = 0; r < out.rows.size(); ++r) out.rows[r][c] = ordinal_percentile(ranks[r]);
    out.columns[c].kind = ColumnKind::kCategorical;
  }
  return out;
}

RawTable percentile_encode(const RawTable& table) {
  RawTable out = table;
  out.features = percentile_encode(table.features);
  return out;
}

std::vector<CaseRecord> to_cases(const RawTable& table) {
  std::vector<CaseRecord> cases;
  cases.reserve(table.features.rows.size());
  for (std::size_t r = 0; r < table.features.rows.size(); ++r) {
    CaseRecord c;
    c.id = table.row_ids[r];
    c.label = table.labels[r];
    for (std::size_t k = 0; k < table.features.columns.size(); ++k) {
      c.attributes.emplace_back(table.features.columns[k].name, table.features.rows[r][k]);
    }
    if (c.attributes.empty()) throw ConfigError("case " + c.id + " has no attributes left");
    cases.push_back(std::move(c));
  }
  return cases;
}

std::vector<CaseRecord> balance_sample(const std::vector<CaseRecord>& cases, std::uint64_t seed,
                                       std::optional<int> per_class) {
  std::vector<CaseRecord> by_label[2];
  for (const auto& c : cases) {
    if (c.label != 0 && c.label != 1) throw ContractViolation("case " + c.id + " has non-binary label");
    by_label[c.label].push_back(c);
  }
  if (by_label[0].empty() || by_label[1].empty()) {
    throw SamplingError("balance_sample requires both classes to be present");
  }
  const std::size_t minority = std::min(by_label[0].size(), by_label[1].size());
  std::size_t k = minority;
  if (per_class) {
    if (*per_class <= 0) throw SamplingError("per_class must be positive");
    k = static_cast<std::size_t>(*per_class);
    if (k > minority) {
      throw SamplingError("per_class " + std::to_string(k) + " exceeds minority count " + std::to_string(minority));
    }
  }
  Rng rng(seed);
  std::vector<CaseRecord> out;
  out.reserve(2 * k);
  for (int label : {1, 0}) {
    auto& group = by_label[label];
    rng.shuffle(std::span<CaseRecord>(group));
    out.insert(out.end(), group.begin(), group.begin() + static_cast<std::ptrdiff_t>(k));
  }
  rng.shuffle(std::span<CaseRecord>(out));
  return out;
}

std::string render_attributes(const CaseRecord& c) {
  std::string out;
  for (std::size_t i = 0; i < c.attributes.size(); ++i) {
    if (i) out += "; ";
    out += c.attributes[i].first;
    out += ": ";
    out += c.attributes[i].second;
  }
  return out;
}

std::vector<CaseRecord> prepare_cases(const std::filesystem::path& path, const PreprocessConfig& config) {
  RawTable table = load_table(path, config);
  table = exclude_features(table, config.excluded_features);
  table = percentile_encode(table);
  return balance_sample(to_cases(table), config.seed, config.cases_per_class);
}

nlohmann::ordered_json case_to_json(const CaseRecord& c) {
  nlohmann::ordered_json attrs = nlohmann::ordered_json::object();
  for (const auto& [name, value] : c.attributes) attrs[name] = value;
  nlohmann::ordered_json j;
  j["id"] = c.id;
  j["attributes"] = std::move(attrs);
  j["label"] = c.label;
  return j;
}

CaseRecord case_from_json(const nlohmann::ordered_json& j) {
  CaseRecord c;
  c.id = j.at("id").get<std::string>();
  c.label = j.at("label").get<int>();
  if (c.label != 0 && c.label != 1) throw ParseError("case " + c.id + ": label must be 0 or 1");
  for (const auto& [name, value] : j.at("attributes").items()) {
    c.attributes.emplace_back(name, value.get<std::string>());
  }
  if (c.attributes.empty()) throw ParseError("case " + c.id + ": empty attributes");
  return c;
}

void write_cases(const std::filesystem::path& path, const std::vector<CaseRecord>& cases) {
  std::vector<nlohmann::ordered_json> rows;
  rows.reserve(cases.size());
  for (const auto& c : cases) rows.push_back(case_to_json(c));
  jsonl::write_all(path, rows);
}

std::vector<CaseRecord> read_cases(const std::filesystem::path& path) {
  // Lines are parsed as ordered JSON so attribute order survives.
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open cases file " + path.string());
  std::vector<CaseRecord> cases;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      cases.push_back(case_from_json(nlohmann::ordered_json::parse(line)));
    } catch (const ParseError& e) {
      throw ParseError(path.filename().string() + " line " + std::to_string(line_no) + ": " + e.what(), line_no);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.filename().string() + " line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
  }
  return cases;
}

}  // namespace factguard::dataset
