// Tabular data handling: CSV parsing, normalization / one-hot encoding,
// the synthetic 2-D demonstration dataset, split plans and bootstrap samples.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mia/common.hpp"
#include "json.hpp"

namespace mia {

// Plays both the target-record and query-record roles.
struct Record {
  std::string id;
  Eigen::VectorXd features;
  int label = 0;
};

struct Dataset {
  std::string id;
  std::vector<Record> records;
  int class_count = 0;

  std::size_t size() const { return records.size(); }
  int feature_dim() const {
    return records.empty() ? 0 : static_cast<int>(records.front().features.size());
  }
};

inline std::unordered_map<std::string, std::size_t> index_by_id(const Dataset& d) {
  std::unordered_map<std::string, std::size_t> idx;
  idx.reserve(d.records.size());
  for (std::size_t i = 0; i < d.records.size(); ++i) idx.emplace(d.records[i].id, i);
  return idx;
}

inline Dataset subset_by_ids(const Dataset& d, const std::vector<std::string>& ids,
                             const std::string& subset_id) {
  const auto idx = index_by_id(d);
  Dataset out;
  out.id = subset_id;
  out.class_count = d.class_count;
  out.records.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = idx.find(id);
    if (it == idx.end()) throw ConfigError("subset_by_ids: unknown record id '" + id + "'");
    out.records.push_back(d.records[it->second]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV schema and encoding

enum class ColumnKind { kNumeric, kCategorical, kLabel, kId };

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::kNumeric;
};

struct TableSchema {
  std::vector<ColumnSpec> columns;

  int label_column() const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i].kind == ColumnKind::kLabel) return static_cast<int>(i);
    return -1;
  }

  static TableSchema from_json(const nlohmann::json& j);
  static TableSchema from_json_file(const std::string& path);
  nlohmann::json to_json() const;
};

// Fitted encoding metadata. Reapplying it to the same rows reproduces the
// same matrix bit-exactly.
struct Encoding {
  struct NumericStats {
    double mean = 0.0;
    double stddev = 1.0;  // already floored
  };
  // Parallel to schema columns; unused entries stay default.
  std::vector<NumericStats> numeric;
  std::vector<std::vector<std::string>> levels;  // categorical level order
  std::vector<std::string> class_labels;          // label value -> class index

  static constexpr double kVarianceFloor = 1e-8;

  int feature_dim(const TableSchema& schema) const {
    int dim = 0;
    for (std::size_t c = 0; c < schema.columns.size(); ++c) {
      if (schema.columns[c].kind == ColumnKind::kNumeric) dim += 1;
      else if (schema.columns[c].kind == ColumnKind::kCategorical)
        dim += static_cast<int>(levels[c].size());
    }
    return dim;
  }

  nlohmann::json to_json(const TableSchema& schema) const;
  static Encoding from_json(const nlohmann::json& j, const TableSchema& schema);
};

struct RawTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line, int line_no) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell += ch;
    }
  }
  if (quoted)
    throw IoError("CSV parse error at line " + std::to_string(line_no) + ": unterminated quote");
  cells.push_back(cell);
  return cells;
}

inline double parse_number(const std::string& s, int line_no, const std::string& col) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw IoError("CSV parse error at line " + std::to_string(line_no) + ", column '" + col +
                  "': not a number: '" + s + "'");
  }
}

}  // namespace detail

inline RawTable parse_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open CSV file: " + path);
  RawTable table;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() && in.eof()) break;
    auto cells = detail::split_csv_line(line, line_no);
    if (line_no == 1) {
      table.header = std::move(cells);
    } else {
      if (cells.size() != table.header.size())
        throw IoError("CSV parse error at line " + std::to_string(line_no) + ": expected " +
                      std::to_string(table.header.size()) + " cells, got " +
                      std::to_string(cells.size()));
      table.rows.push_back(std::move(cells));
    }
  }
  if (table.header.empty()) throw IoError("CSV file has no header row: " + path);
  return table;
}

inline void check_schema(const RawTable& raw, const TableSchema& schema) {
  if (raw.header.size() != schema.columns.size())
    throw ConfigError("schema declares " + std::to_string(schema.columns.size()) +
                      " columns but CSV has " + std::to_string(raw.header.size()));
  if (schema.label_column() < 0) throw ConfigError("schema declares no label column");
}

// Fits normalization statistics, categorical levels (first-seen order) and the
// label mapping. `row_filter` restricts the rows used for fitting (empty =
// all rows); levels and labels outside the filter are still registered so the
// encoding can embed every row of the file.
inline Encoding fit_encoding(const RawTable& raw, const TableSchema& schema,
                             const std::vector<std::size_t>& row_filter = {}) {
  check_schema(raw, schema);
  const std::size_t ncols = schema.columns.size();
  Encoding enc;
  enc.numeric.resize(ncols);
  enc.levels.resize(ncols);

  std::vector<bool> use(raw.rows.size(), row_filter.empty());
  for (std::size_t r : row_filter) {
    if (r >= raw.rows.size()) throw ConfigError("fit_encoding: row filter out of range");
    use[r] = true;
  }

  for (std::size_t c = 0; c < ncols; ++c) {
    const auto kind = schema.columns[c].kind;
    if (kind == ColumnKind::kNumeric) {
      double sum = 0.0, sumsq = 0.0;
      std::size_t n = 0;
      for (std::size_t r = 0; r < raw.rows.size(); ++r) {
        if (!use[r]) continue;
        const double v =
            detail::parse_number(raw.rows[r][c], static_cast<int>(r) + 2, schema.columns[c].name);
        sum += v;
        sumsq += v * v;
        ++n;
      }
      if (n == 0) throw ConfigError("fit_encoding: no rows to fit column '" +
                                    schema.columns[c].name + "'");
      const double mean = sum / static_cast<double>(n);
      const double var = std::max(sumsq / static_cast<double>(n) - mean * mean,
                                  Encoding::kVarianceFloor);
      enc.numeric[c] = {mean, std::sqrt(var)};
    } else if (kind == ColumnKind::kCategorical || kind == ColumnKind::kLabel) {
      std::unordered_set<std::string> seen;
      auto& target = (kind == ColumnKind::kLabel) ? enc.class_labels : enc.levels[c];
      for (std::size_t r = 0; r < raw.rows.size(); ++r) {
        const auto& v = raw.rows[r][c];
        if (seen.insert(v).second) target.push_back(v);
      }
    }
  }
  if (enc.class_labels.size() < 2)
    throw ConfigError("label column has fewer than 2 distinct classes");
  return enc;
}

// Applies a fitted encoding; unknown categorical levels embed as all-zero
// one-hot blocks, unknown labels are an error.
inline Dataset encode(const RawTable& raw, const TableSchema& schema, const Encoding& enc,
                      const std::string& dataset_id) {
  check_schema(raw, schema);
  const std::size_t ncols = schema.columns.size();
  const int dim = enc.feature_dim(schema);
  int id_col = -1;
  for (std::size_t c = 0; c < ncols; ++c)
    if (schema.columns[c].kind == ColumnKind::kId) id_col = static_cast<int>(c);

  std::unordered_map<std::string, int> label_index;
  for (std::size_t i = 0; i < enc.class_labels.size(); ++i)
    label_index.emplace(enc.class_labels[i], static_cast<int>(i));

  std::vector<std::unordered_map<std::string, int>> level_index(ncols);
  for (std::size_t c = 0; c < ncols; ++c)
    for (std::size_t i = 0; i < enc.levels[c].size(); ++i)
      level_index[c].emplace(enc.levels[c][i], static_cast<int>(i));

  Dataset out;
  out.id = dataset_id;
  out.class_count = static_cast<int>(enc.class_labels.size());
  out.records.reserve(raw.rows.size());
  for (std::size_t r = 0; r < raw.rows.size(); ++r) {
    const int line_no = static_cast<int>(r) + 2;
    Record rec;
    rec.id = (id_col >= 0) ? raw.rows[r][id_col] : "row" + std::to_string(r);
    rec.features = Eigen::VectorXd::Zero(dim);
    int at = 0;
    for (std::size_t c = 0; c < ncols; ++c) {
      const auto kind = schema.columns[c].kind;
      const auto& cell = raw.rows[r][c];
      if (kind == ColumnKind::kNumeric) {
        const double v = detail::parse_number(cell, line_no, schema.columns[c].name);
        rec.features[at++] = (v - enc.numeric[c].mean) / enc.numeric[c].stddev;
      } else if (kind == ColumnKind::kCategorical) {
        auto it = level_index[c].find(cell);
        if (it != level_index[c].end()) rec.features[at + it->second] = 1.0;
        at += static_cast<int>(enc.levels[c].size());
      } else if (kind == ColumnKind::kLabel) {
        auto it = label_index.find(cell);
        if (it == label_index.end())
          throw IoError("CSV parse error at line " + std::to_string(line_no) +
                        ": unknown class label '" + cell + "'");
        rec.label = it->second;
      }
    }
    out.records.push_back(std::move(rec));
  }
  return out;
}

struct LoadedDataset {
  Dataset dataset;
  Encoding encoding;
};

inline LoadedDataset load_csv(const std::string& path, const TableSchema& schema) {
  const RawTable raw = parse_csv(path);
  Encoding enc = fit_encoding(raw, schema);
  Dataset ds = encode(raw, schema, enc, path);
  return {std::move(ds), std::move(enc)};
}

// ---------------------------------------------------------------------------
// Synthetic demonstration dataset: two overlapping 2-D Gaussian class
// clusters (dense core) plus ~2% uniformly scattered points (sparse fringe),
// 1,181 records total.

inline Dataset generate_toy(std::uint64_t seed) {
  constexpr int kTotal = 1181;
  constexpr int kScatter = 24;
  Rng rng(hash64(seed, 0x70));
  Dataset out;
  out.id = "toy-" + std::to_string(seed);
  out.class_count = 2;
  out.records.reserve(kTotal);
  const double cx[2] = {-1.2, 1.2};
  for (int i = 0; i < kTotal - kScatter; ++i) {
    Record rec;
    rec.id = "t" + std::to_string(i);
    rec.label = i % 2;
    rec.features = Eigen::VectorXd(2);
    rec.features << rng.normal(cx[rec.label], 0.8), rng.normal(0.0, 0.8);
    out.records.push_back(std::move(rec));
  }
  for (int i = kTotal - kScatter; i < kTotal; ++i) {
    Record rec;
    rec.id = "t" + std::to_string(i);
    rec.features = Eigen::VectorXd(2);
    rec.features << rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0);
    rec.label = static_cast<int>(rng.below(2));
    out.records.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Split plans: n_repeats random halvings -> 2*n_repeats training sets; every
// record is a member of exactly n_repeats of them.

struct SplitPlan {
  int n_models = 0;
  std::vector<std::vector<std::string>> memberships;  // per model, in draw order

  bool contains(int model, const std::string& id) const {
    const auto& m = memberships.at(model);
    return std::find(m.begin(), m.end(), id) != m.end();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["n_models"] = n_models;
    j["memberships"] = memberships;
    return j;
  }
  static SplitPlan from_json(const nlohmann::json& j) {
    SplitPlan p;
    p.n_models = j.at("n_models").get<int>();
    p.memberships = j.at("memberships").get<std::vector<std::vector<std::string>>>();
    return p;
  }
};

inline SplitPlan make_split_plan(const Dataset& dataset, int n_repeats, std::uint64_t seed) {
  if (dataset.size() % 2 != 0)
    throw ConfigError("make_split_plan requires an even record count, got " +
                      std::to_string(dataset.size()));
  if (n_repeats < 1) throw ConfigError("make_split_plan: n_repeats must be positive");
  SplitPlan plan;
  plan.n_models = 2 * n_repeats;
  plan.memberships.reserve(plan.n_models);
  std::vector<std::string> ids;
  ids.reserve(dataset.size());
  for (const auto& r : dataset.records) ids.push_back(r.id);
  const std::size_t half = dataset.size() / 2;
  for (int rep = 0; rep < n_repeats; ++rep) {
    Rng rng(hash64(seed, static_cast<std::uint64_t>(rep)));
    rng.shuffle(ids);
    plan.memberships.emplace_back(ids.begin(), ids.begin() + half);
    plan.memberships.emplace_back(ids.begin() + half, ids.end());
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Bootstrap samples (with replacement), replayable from (source id, ids).

struct BootstrapSample {
  std::string source_dataset_id;
  std::vector<std::string> ids;  // with multiplicity, in draw order
  std::uint64_t seed = 0;

  nlohmann::json to_json() const {
    return {{"source", source_dataset_id}, {"seed", seed}, {"ids", ids}};
  }
  static BootstrapSample from_json(const nlohmann::json& j) {
    BootstrapSample s;
    s.source_dataset_id = j.at("source").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.ids = j.at("ids").get<std::vector<std::string>>();
    return s;
  }
};

inline BootstrapSample bootstrap_sample(const Dataset& dataset, std::size_t size,
                                        std::uint64_t seed) {
  if (dataset.records.empty()) throw ConfigError("bootstrap_sample: empty dataset");
  if (size == 0) throw ConfigError("bootstrap_sample: size must be positive");
  BootstrapSample sample;
  sample.source_dataset_id = dataset.id;
  sample.seed = seed;
  sample.ids.reserve(size);
  Rng rng(seed);
  for (std::size_t i = 0; i < size; ++i)
    sample.ids.push_back(dataset.records[rng.below(dataset.size())].id);
  return sample;
}

inline Dataset materialize(const BootstrapSample& sample, const Dataset& source) {
  Dataset out = subset_by_ids(source, sample.ids,
                              source.id + "#bootstrap-" + std::to_string(sample.seed));
  return out;
}

// ---------------------------------------------------------------------------
// Schema / encoding JSON

inline TableSchema TableSchema::from_json(const nlohmann::json& j) {
  TableSchema schema;
  for (const auto& col : j.at("columns")) {
    ColumnSpec spec;
    spec.name = col.at("name").get<std::string>();
    const std::string kind = col.at("kind").get<std::string>();
    if (kind == "numeric") spec.kind = ColumnKind::kNumeric;
    else if (kind == "categorical") spec.kind = ColumnKind::kCategorical;
    else if (kind == "label") spec.kind = ColumnKind::kLabel;
    else if (kind == "id") spec.kind = ColumnKind::kId;
    else throw ConfigError("unknown column kind '" + kind + "'");
    schema.columns.push_back(std::move(spec));
  }
  if (schema.label_column() < 0) throw ConfigError("schema declares no label column");
  return schema;
}

inline TableSchema TableSchema::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema file: " + path);
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

inline nlohmann::json TableSchema::to_json() const {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : columns) {
    const char* kind = c.kind == ColumnKind::kNumeric       ? "numeric"
                       : c.kind == ColumnKind::kCategorical ? "categorical"
                       : c.kind == ColumnKind::kLabel       ? "label"
                                                            : "id";
    cols.push_back({{"name", c.name}, {"kind", kind}});
  }
  return {{"columns", cols}};
}

inline nlohmann::json Encoding::to_json(const TableSchema& schema) const {
  nlohmann::json j;
  nlohmann::json cols = nlohmann::json::array();
  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    nlohmann::json col;
    col["name"] = schema.columns[c].name;
    if (schema.columns[c].kind == ColumnKind::kNumeric) {
      col["mean"] = numeric[c].mean;
      col["stddev"] = numeric[c].stddev;
    } else if (schema.columns[c].kind == ColumnKind::kCategorical) {
      col["levels"] = levels[c];
    }
    cols.push_back(std::move(col));
  }
  j["columns"] = cols;
  j["class_labels"] = class_labels;
  return j;
}

inline Encoding Encoding::from_json(const nlohmann::json& j, const TableSchema& schema) {
  Encoding enc;
  enc.numeric.resize(schema.columns.size());
  enc.levels.resize(schema.columns.size());
  const auto& cols = j.at("columns");
  if (cols.size() != schema.columns.size())
    throw ConfigError("encoding does not match schema column count");
  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    if (schema.columns[c].kind == ColumnKind::kNumeric) {
      enc.numeric[c].mean = cols[c].at("mean").get<double>();
      enc.numeric[c].stddev = cols[c].at("stddev").get<double>();
    } else if (schema.columns[c].kind == ColumnKind::kCategorical) {
      enc.levels[c] = cols[c].at("levels").get<std::vector<std::string>>();
    }
  }
  enc.class_labels = j.at("class_labels").get<std::vector<std::string>>();
  return enc;
}

}  // namespace mia
