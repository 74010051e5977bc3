#pragma once

// Result summaries (metrics.json) and the text/CSV result tables.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "abcuq/core.hpp"
#include "abcuq/data.hpp"
#include "abcuq/error.hpp"
#include "abcuq/metrics.hpp"

namespace abcuq {

inline constexpr int kResultSchemaVersion = 1;
// A method/dataset cell is shown as "--" below this compliance rate.
inline constexpr double kMinUsableCompliance = 0.5;

struct ResultSummary {
  std::string dataset;
  DatasetKind kind = DatasetKind::InDistribution;
  Method method = Method::Rejection;
  std::string model;
  double temperature = 0.0;
  std::size_t n_cases = 0;
  std::size_t n_usable = 0;
  std::size_t n_noncompliant = 0;
  std::size_t n_errors = 0;
  std::optional<double> compliance_rate;
  std::optional<MetricsReport> metrics;
  int ece_bins = kDefaultEceBins;
  std::uint64_t seed = 0;
  long simulations_total = 0;
  double wall_clock_seconds = 0.0;
  std::vector<std::pair<std::string, std::string>> failures;  // (case id, message)

  bool usable() const {
    return n_usable > 0 && metrics.has_value() &&
           (!compliance_rate || *compliance_rate >= kMinUsableCompliance);
  }
};

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

namespace detail {

inline nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json();
}

inline std::optional<double> json_opt(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace detail

inline nlohmann::json summary_to_json(const ResultSummary& s) {
  nlohmann::json metrics;
  if (s.metrics) {
    const auto& m = *s.metrics;
    metrics = {{"accuracy", detail::opt_json(m.accuracy)},
               {"macro_f1", detail::opt_json(m.macro_f1)},
               {"auroc", detail::opt_json(m.auroc)},
               {"brier", detail::opt_json(m.brier)},
               {"ece", detail::opt_json(m.ece)},
               {"mean_entropy_bits", m.mean_entropy_bits},
               {"n", m.n},
               {"per_class_f1", m.per_class_f1}};
  }
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& [id, msg] : s.failures) failures.push_back({{"case_id", id}, {"error", msg}});
  return {{"schema_version", kResultSchemaVersion},
          {"dataset", s.dataset},
          {"kind", to_string(s.kind)},
          {"method", method_code(s.method)},
          {"model", s.model},
          {"temperature", s.temperature},
          {"counts",
           {{"cases", s.n_cases},
            {"usable", s.n_usable},
            {"noncompliant", s.n_noncompliant},
            {"errors", s.n_errors}}},
          {"compliance_rate", detail::opt_json(s.compliance_rate)},
          {"metrics", metrics},
          {"ece_bins", s.ece_bins},
          {"seeds", {{"run", s.seed}, {"per_case", "derive_seed(run, fnv1a64(case_id))"}}},
          {"simulations_total", s.simulations_total},
          {"failures", failures},
          {"wall_clock_seconds", s.wall_clock_seconds}};
}

inline ResultSummary summary_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorKind::Load, "result file is not a JSON object");
  const int version = j.value("schema_version", -1);
  require(version == kResultSchemaVersion, ErrorKind::Load,
          "result schema_version " + std::to_string(version) + " is not supported (expected " +
              std::to_string(kResultSchemaVersion) + ")");
  try {
    ResultSummary s;
    s.dataset = j.at("dataset").get<std::string>();
    s.kind = j.at("kind").get<std::string>() == "ood" ? DatasetKind::OOD : DatasetKind::InDistribution;
    const auto code = j.at("method").get<std::string>();
    const auto method = parse_method_code(code);
    require(method.has_value(), ErrorKind::Load, "unknown method '" + code + "'");
    s.method = *method;
    s.model = j.at("model").get<std::string>();
    s.temperature = j.value("temperature", 0.0);
    const auto& counts = j.at("counts");
    s.n_cases = counts.at("cases").get<std::size_t>();
    s.n_usable = counts.at("usable").get<std::size_t>();
    s.n_noncompliant = counts.value("noncompliant", std::size_t{0});
    s.n_errors = counts.value("errors", std::size_t{0});
    s.compliance_rate = detail::json_opt(j, "compliance_rate");
    if (j.contains("metrics") && !j["metrics"].is_null()) {
      const auto& mj = j["metrics"];
      MetricsReport m;
      m.accuracy = detail::json_opt(mj, "accuracy");
      m.macro_f1 = detail::json_opt(mj, "macro_f1");
      m.auroc = detail::json_opt(mj, "auroc");
      m.brier = detail::json_opt(mj, "brier");
      m.ece = detail::json_opt(mj, "ece");
      m.mean_entropy_bits = mj.at("mean_entropy_bits").get<double>();
      m.n = mj.value("n", std::size_t{0});
      if (mj.contains("per_class_f1")) m.per_class_f1 = mj["per_class_f1"].get<std::vector<double>>();
      s.metrics = std::move(m);
    }
    s.ece_bins = j.value("ece_bins", kDefaultEceBins);
    if (j.contains("seeds")) s.seed = j["seeds"].value("run", std::uint64_t{0});
    s.simulations_total = j.value("simulations_total", 0L);
    s.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
    if (j.contains("failures"))
      for (const auto& f : j["failures"])
        s.failures.emplace_back(f.at("case_id").get<std::string>(), f.at("error").get<std::string>());
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Load, std::string("malformed result file: ") + e.what());
  }
}

inline ResultSummary load_summary(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot open result file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::Load, path.string() + ": not valid JSON");
  }
  try {
    return summary_from_json(j);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Grid construction
// ---------------------------------------------------------------------------

enum class MetricRow { Accuracy, F1, Auroc, Brier, Ece, Entropy };

inline std::string_view row_name(MetricRow r) {
  switch (r) {
    case MetricRow::Accuracy: return "Accuracy";
    case MetricRow::F1: return "F1-score";
    case MetricRow::Auroc: return "AUCROC";
    case MetricRow::Brier: return "Brier Score";
    case MetricRow::Ece: return "ECE (pp)";
    case MetricRow::Entropy: return "Entropy (bits)";
  }
  return "";
}

/// One printed cell: ×100 with one decimal for the rate metrics, bits with two
/// decimals for entropy, "N/A" when undefined, "--" when the run was unusable.
inline std::string format_cell(const ResultSummary& s, MetricRow row) {
  if (!s.usable()) return "--";
  const auto& m = *s.metrics;
  auto pct = [](const std::optional<double>& v) { return v ? format_fixed(100.0 * *v, 1) : "N/A"; };
  switch (row) {
    case MetricRow::Accuracy: return pct(m.accuracy);
    case MetricRow::F1: return pct(m.macro_f1);
    case MetricRow::Auroc: return pct(m.auroc);
    case MetricRow::Brier: return pct(m.brier);
    case MetricRow::Ece: return pct(m.ece);
    case MetricRow::Entropy: return format_fixed(m.mean_entropy_bits, 2);
  }
  return "N/A";
}

namespace detail {

inline constexpr Method kMethodOrder[] = {Method::Logits, Method::Elicited, Method::Rejection, Method::SMC};

inline std::vector<Method> methods_present(const std::vector<const ResultSummary*>& rs) {
  std::vector<Method> out;
  for (Method m : kMethodOrder)
    if (std::any_of(rs.begin(), rs.end(), [m](const ResultSummary* r) { return r->method == m; }))
      out.push_back(m);
  return out;
}

template <class Key>
std::vector<Key> first_seen(const std::vector<const ResultSummary*>& rs, Key (*key)(const ResultSummary&)) {
  std::vector<Key> out;
  for (const auto* r : rs) {
    auto k = key(*r);
    if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(std::move(k));
  }
  return out;
}

inline std::string dataset_key(const ResultSummary& r) { return r.dataset; }
inline std::string model_key(const ResultSummary& r) { return r.model; }
inline double temperature_key(const ResultSummary& r) { return r.temperature; }

// Last matching summary wins, so re-running a cell overrides older results.
inline const ResultSummary* find_cell(const std::vector<const ResultSummary*>& rs, const std::string& model,
                                      Method method) {
  const ResultSummary* hit = nullptr;
  for (const auto* r : rs)
    if (r->model == model && r->method == method) hit = r;
  return hit;
}

using Table = std::vector<std::vector<std::string>>;

inline std::string render_aligned(const Table& t) {
  std::vector<std::size_t> width;
  for (const auto& row : t)
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (width.size() <= c) width.push_back(0);
      width[c] = std::max(width[c], row[c].size());
    }
  std::string out;
  for (const auto& row : t) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c > 0) line += "  ";
      // Text columns left-aligned, value columns right-aligned.
      const auto pad = std::string(width[c] - row[c].size(), ' ');
      line += c < 2 ? row[c] + pad : pad + row[c];
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  return out;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return q + "\"";
}

inline std::string csv_line(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) line += (i ? "," : "") + csv_field(fields[i]);
  return line + "\n";
}

inline std::vector<MetricRow> rows_for(DatasetKind kind) {
  if (kind == DatasetKind::OOD) return {MetricRow::Entropy};
  return {MetricRow::Accuracy, MetricRow::F1, MetricRow::Auroc,
          MetricRow::Brier, MetricRow::Ece, MetricRow::Entropy};
}

struct Section {
  std::string dataset;
  DatasetKind kind;
  std::vector<const ResultSummary*> results;
};

inline std::vector<Section> sections_of(const std::vector<ResultSummary>& results) {
  std::vector<const ResultSummary*> all;
  for (const auto& r : results) all.push_back(&r);
  std::vector<Section> out;
  for (const auto& name : first_seen<std::string>(all, dataset_key)) {
    Section s{name, DatasetKind::InDistribution, {}};
    for (const auto* r : all)
      if (r->dataset == name) s.results.push_back(r);
    s.kind = s.results.front()->kind;
    for (const auto* r : s.results)
      require(r->kind == s.kind, ErrorKind::Load,
              "dataset '" + name + "' appears as both in-distribution and OOD");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

/// Methods × metrics grid per dataset section, models as row groups. OOD
/// sections carry only the entropy row.
inline std::string render_report_text(const std::vector<ResultSummary>& results) {
  require(!results.empty(), ErrorKind::Contract, "report needs at least one result");
  std::string out;
  bool first = true;
  for (const auto& sec : detail::sections_of(results)) {
    if (!first) out += "\n";
    first = false;
    out += "Dataset: " + sec.dataset + (sec.kind == DatasetKind::OOD ? " (OOD)" : "") + "\n";
    const auto methods = detail::methods_present(sec.results);
    detail::Table t;
    std::vector<std::string> head{"Model", "Metric"};
    for (Method m : methods) head.emplace_back(method_code(m));
    t.push_back(head);
    for (const auto& model : detail::first_seen<std::string>(sec.results, detail::model_key)) {
      bool lead = true;
      for (MetricRow row : detail::rows_for(sec.kind)) {
        std::vector<std::string> line{lead ? model : "", std::string(row_name(row))};
        lead = false;
        for (Method m : methods) {
          const auto* cell = detail::find_cell(sec.results, model, m);
          line.push_back(cell ? format_cell(*cell, row) : "");
        }
        t.push_back(std::move(line));
      }
    }
    out += detail::render_aligned(t);
  }
  return out;
}

/// Same grid as CSV: one header over all methods present, one row per
/// (dataset, model, metric).
inline std::string render_report_csv(const std::vector<ResultSummary>& results) {
  require(!results.empty(), ErrorKind::Contract, "report needs at least one result");
  std::vector<const ResultSummary*> all;
  for (const auto& r : results) all.push_back(&r);
  const auto methods = detail::methods_present(all);
  std::vector<std::string> head{"dataset", "kind", "model", "metric"};
  for (Method m : methods) head.emplace_back(method_code(m));
  std::string out = detail::csv_line(head);
  for (const auto& sec : detail::sections_of(results)) {
    for (const auto& model : detail::first_seen<std::string>(sec.results, detail::model_key)) {
      for (MetricRow row : detail::rows_for(sec.kind)) {
        std::vector<std::string> line{sec.dataset, std::string(to_string(sec.kind)), model,
                                      std::string(row_name(row))};
        for (Method m : methods) {
          const auto* cell = detail::find_cell(sec.results, model, m);
          line.push_back(cell ? format_cell(*cell, row) : "");
        }
        out += detail::csv_line(line);
      }
    }
  }
  return out;
}

namespace detail {

inline Table sweep_table(const std::vector<ResultSummary>& results, bool with_dataset) {
  std::vector<const ResultSummary*> all;
  for (const auto& r : results) all.push_back(&r);
  const auto methods = methods_present(all);
  Table t;
  std::vector<std::string> head{"T", "Metric"};
  if (with_dataset) head.insert(head.begin(), {"dataset", "model"});
  for (Method m : methods) head.emplace_back(method_code(m));
  t.push_back(head);
  for (const auto& sec : sections_of(results)) {
    for (const auto& model : first_seen<std::string>(sec.results, model_key)) {
      std::vector<const ResultSummary*> of_model;
      for (const auto* r : sec.results)
        if (r->model == model) of_model.push_back(r);
      for (double temp : first_seen<double>(of_model, temperature_key)) {
        bool lead = true;
        for (MetricRow row : {MetricRow::Brier, MetricRow::Ece, MetricRow::Entropy}) {
          if (sec.kind == DatasetKind::OOD && row != MetricRow::Entropy) continue;
          std::vector<std::string> line{(lead || with_dataset) ? "T=" + format_fixed(temp, 1) : "",
                                        std::string(row_name(row))};
          if (with_dataset) line.insert(line.begin(), {sec.dataset, model});
          lead = false;
          for (Method m : methods) {
            const ResultSummary* cell = nullptr;
            for (const auto* r : of_model)
              if (r->method == m && r->temperature == temp) cell = r;
            line.push_back(cell ? format_cell(*cell, row) : "");
          }
          t.push_back(std::move(line));
        }
      }
    }
  }
  return t;
}

}  // namespace detail

/// Temperature comparison: Brier, ECE and entropy per method for each T.
inline std::string render_sweep_text(const std::vector<ResultSummary>& results) {
  require(!results.empty(), ErrorKind::Contract, "sweep table needs at least one result");
  return detail::render_aligned(detail::sweep_table(results, false));
}

inline std::string render_sweep_csv(const std::vector<ResultSummary>& results) {
  require(!results.empty(), ErrorKind::Contract, "sweep table needs at least one result");
  std::string out;
  for (const auto& row : detail::sweep_table(results, true)) out += detail::csv_line(row);
  return out;
}

struct ReportTables {
  std::string text;
  std::string csv;
};

/// Merges metrics.json result files into the dataset × method grid.
inline ReportTables cmd_report(const std::vector<std::filesystem::path>& paths) {
  require(!paths.empty(), ErrorKind::Contract, "report needs at least one result file");
  std::vector<ResultSummary> results;
  for (const auto& p : paths) results.push_back(load_summary(p));
  return {render_report_text(results), render_report_csv(results)};
}

}  // namespace abcuq
