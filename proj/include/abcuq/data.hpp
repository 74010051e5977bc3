#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "abcuq/core.hpp"
#include "abcuq/error.hpp"

namespace abcuq {

enum class DatasetKind { InDistribution, OOD };
enum class DatasetFormat { JsonLines, CSV };

inline std::string_view to_string(DatasetKind k) {
  return k == DatasetKind::OOD ? "ood" : "in_distribution";
}

struct Dataset {
  std::string name;
  LabelSpace space;
  std::vector<CaseRecord> cases;
  DatasetKind kind = DatasetKind::InDistribution;

  void validate() const {
    for (const auto& c : cases) {
      c.validate(space);
      if (kind == DatasetKind::InDistribution)
        require(c.gold_label.has_value(), ErrorKind::Ingestion,
                "in-distribution case '" + c.id + "' has no gold label");
      else
        require(!c.gold_label.has_value(), ErrorKind::Ingestion,
                "out-of-distribution case '" + c.id + "' carries a gold label");
    }
  }
};

/// RFC 4180 style CSV: quoted fields may contain commas, quotes ("") and newlines.
inline std::vector<std::vector<std::string>> parse_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  char ch;
  while (in.get(ch)) {
    any = true;
    if (quoted) {
      if (ch == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          quoted = false;
        }
      } else {
        field.push_back(ch);
      }
      continue;
    }
    switch (ch) {
      case '"': quoted = true; break;
      case ',': row.push_back(std::move(field)); field.clear(); break;
      case '\r': break;
      case '\n':
        row.push_back(std::move(field));
        field.clear();
        rows.push_back(std::move(row));
        row.clear();
        any = false;
        break;
      default: field.push_back(ch);
    }
  }
  require(!quoted, ErrorKind::Ingestion, "unterminated quoted CSV field");
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace detail {

inline std::string ingest_where(std::size_t row) { return "row " + std::to_string(row); }

inline void add_case(Dataset& ds, std::set<std::string>& ids, CaseRecord c, std::size_t row) {
  require(!c.description.empty(), ErrorKind::Ingestion,
          ingest_where(row) + ": empty description");
  require(ids.insert(c.id).second, ErrorKind::Ingestion,
          ingest_where(row) + ": duplicate id '" + c.id + "'");
  ds.cases.push_back(std::move(c));
}

inline std::optional<LabelIndex> map_label(const LabelSpace& space, const std::string& label,
                                           std::size_t row) {
  if (label.empty()) return std::nullopt;
  auto idx = space.index_of(label);
  require(idx.has_value(), ErrorKind::Ingestion,
          ingest_where(row) + ": unknown label '" + label + "'");
  return idx;
}

}  // namespace detail

/// JSON Lines: header {"name", "labels": [...], "kind": "in_distribution"|"ood"}
/// then one {"id", "text", "label"?, "embedding"?} per line. Rows are numbered
/// from 1 for the first record after the header.
inline Dataset load_dataset_jsonl(std::istream& in, const std::string& fallback_name) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::Ingestion, "dataset file is empty");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::Ingestion, "header: not valid JSON");
  }
  require(header.is_object() && header.contains("labels") && header["labels"].is_array(),
          ErrorKind::Ingestion, "header: missing 'labels' list");
  Dataset ds;
  ds.name = header.value("name", fallback_name);
  try {
    ds.space = LabelSpace(header["labels"].get<std::vector<std::string>>());
  } catch (const std::exception& e) {
    throw Error(ErrorKind::Ingestion, std::string("header: invalid labels: ") + e.what());
  }
  const auto kind = header.value("kind", std::string("in_distribution"));
  require(kind == "in_distribution" || kind == "ood", ErrorKind::Ingestion,
          "header: kind must be 'in_distribution' or 'ood'");
  ds.kind = kind == "ood" ? DatasetKind::OOD : DatasetKind::InDistribution;

  std::set<std::string> ids;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++row;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorKind::Ingestion, detail::ingest_where(row) + ": not valid JSON");
    }
    require(j.is_object() && j.contains("text") && j["text"].is_string(), ErrorKind::Ingestion,
            detail::ingest_where(row) + ": missing 'text'");
    CaseRecord c;
    if (j.contains("id"))
      c.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    else
      c.id = std::to_string(row);
    c.description = j["text"].get<std::string>();
    if (j.contains("label") && !j["label"].is_null()) {
      require(j["label"].is_string(), ErrorKind::Ingestion,
              detail::ingest_where(row) + ": 'label' must be a string");
      c.gold_label = detail::map_label(ds.space, j["label"].get<std::string>(), row);
    }
    if (j.contains("embedding")) {
      try {
        c.embedding = EmbeddingVector(j["embedding"].get<std::vector<double>>());
      } catch (const std::exception& e) {
        throw Error(ErrorKind::Ingestion,
                    detail::ingest_where(row) + ": invalid 'embedding': " + e.what());
      }
    }
    detail::add_case(ds, ids, std::move(c), row);
  }
  ds.validate();
  return ds;
}

/// CSV with a header row naming columns `text` (required), `id` and `label`.
/// `labels` fixes the label space; when empty, labels are taken in order of
/// first appearance.
inline Dataset load_dataset_csv(std::istream& in, const std::string& name,
                                std::vector<std::string> labels = {}) {
  const auto rows = parse_csv(in);
  require(!rows.empty(), ErrorKind::Ingestion, "CSV file is empty");
  const auto& head = rows.front();
  auto col = [&](std::string_view n) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < head.size(); ++i)
      if (head[i] == n) return i;
    return std::nullopt;
  };
  const auto text_col = col("text");
  const auto id_col = col("id");
  const auto label_col = col("label");
  require(text_col.has_value(), ErrorKind::Ingestion, "CSV header lacks a 'text' column");
  auto cell = [](const std::vector<std::string>& r, std::optional<std::size_t> i) {
    return (i && *i < r.size()) ? r[*i] : std::string();
  };
  if (labels.empty() && label_col) {
    for (std::size_t r = 1; r < rows.size(); ++r) {
      auto l = cell(rows[r], label_col);
      if (!l.empty() && std::find(labels.begin(), labels.end(), l) == labels.end())
        labels.push_back(std::move(l));
    }
  }
  Dataset ds;
  ds.name = name;
  try {
    ds.space = LabelSpace(std::move(labels));
  } catch (const Error& e) {
    throw Error(ErrorKind::Ingestion, std::string("invalid label list: ") + e.what());
  }
  std::set<std::string> ids;
  bool any_gold = false, any_missing = false;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& fields = rows[r];
    if (fields.size() == 1 && fields[0].empty()) continue;
    CaseRecord c;
    c.id = cell(fields, id_col);
    if (c.id.empty()) c.id = std::to_string(r);
    c.description = cell(fields, text_col);
    c.gold_label = detail::map_label(ds.space, cell(fields, label_col), r);
    (c.gold_label ? any_gold : any_missing) = true;
    detail::add_case(ds, ids, std::move(c), r);
  }
  ds.kind = (!any_gold && any_missing) ? DatasetKind::OOD : DatasetKind::InDistribution;
  ds.validate();
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                            std::vector<std::string> csv_labels = {}) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cannot open dataset " + path.string());
  const auto stem = path.stem().string();
  if (format == DatasetFormat::CSV) return load_dataset_csv(in, stem, std::move(csv_labels));
  return load_dataset_jsonl(in, stem);
}

inline DatasetFormat format_from_path(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? DatasetFormat::CSV : DatasetFormat::JsonLines;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << nlohmann::json{{"name", ds.name}, {"labels", ds.space.names()}, {"kind", to_string(ds.kind)}}
             .dump()
      << '\n';
  for (const auto& c : ds.cases) {
    nlohmann::json j = {{"id", c.id}, {"text", c.description}};
    if (c.gold_label) j["label"] = ds.space.name(*c.gold_label);
    if (c.embedding)
      j["embedding"] = std::vector<double>(c.embedding->values().begin(), c.embedding->values().end());
    out << j.dump() << '\n';
  }
  require(out.good(), ErrorKind::Io, "write to " + path.string() + " failed");
}

/// Keeps the named classes, in `keep` order, and drops cases of other classes.
inline Dataset filter_classes(const Dataset& ds, const std::vector<std::string>& keep) {
  require(keep.size() >= 2, ErrorKind::Contract, "filter_classes needs at least 2 classes");
  std::vector<LabelIndex> old_of_new;
  for (const auto& name : keep) {
    auto idx = ds.space.index_of(name);
    require(idx.has_value(), ErrorKind::Contract, "unknown class '" + name + "'");
    old_of_new.push_back(*idx);
  }
  Dataset out;
  out.name = ds.name;
  out.kind = ds.kind;
  out.space = LabelSpace(keep);
  for (const auto& c : ds.cases) {
    if (!c.gold_label) {
      // Unlabeled (out-of-distribution) cases carry no class to filter on.
      out.cases.push_back(c);
      continue;
    }
    const auto it = std::find(old_of_new.begin(), old_of_new.end(), *c.gold_label);
    if (it == old_of_new.end()) continue;
    CaseRecord nc = c;
    nc.gold_label = static_cast<LabelIndex>(it - old_of_new.begin());
    out.cases.push_back(std::move(nc));
  }
  return out;
}

/// Out-of-distribution copy: gold labels stripped, entropy-only evaluation.
inline Dataset mark_ood(const Dataset& ds) {
  Dataset out = ds;
  out.kind = DatasetKind::OOD;
  for (auto& c : out.cases) c.gold_label.reset();
  return out;
}

}  // namespace abcuq
