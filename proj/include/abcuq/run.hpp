#pragma once

// Experiment orchestration behind the command-line tool: configuration,
// provider construction, per-case method dispatch and result files.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "abcuq/baselines.hpp"
#include "abcuq/core.hpp"
#include "abcuq/data.hpp"
#include "abcuq/embed.hpp"
#include "abcuq/engine.hpp"
#include "abcuq/metrics.hpp"
#include "abcuq/remote.hpp"
#include "abcuq/report.hpp"
#include "abcuq/sim.hpp"
#include "abcuq/store.hpp"

namespace abcuq {

namespace fs = std::filesystem;

struct RunConfig {
  fs::path dataset_path;
  DatasetFormat dataset_format = DatasetFormat::JsonLines;
  std::vector<std::string> csv_labels;
  std::vector<std::string> keep_classes;
  bool force_ood = false;

  Method method = Method::Rejection;
  std::string model_label;  // row group in reports; derived when empty

  EngineConfig engine;
  std::optional<double> rejection_epsilon;  // calibrated per case when absent
  SimulatorConfig simulator;
  EmbedderConfig embedder;
  std::optional<fs::path> store_path;

  std::optional<ChatEndpointConfig> baseline_endpoint;
  std::optional<fs::path> transcript_path;
  BaselineConfig baseline;

  fs::path output_dir = "out";
  std::uint64_t seed = 0;
  std::vector<double> temperatures;
  int ece_bins = kDefaultEceBins;
  int parallel_cases = 1;
  std::vector<std::string> labels;  // label space for build-store without a dataset

  bool uses_abc() const { return method == Method::Rejection || method == Method::SMC; }

  void validate() const {
    require(ece_bins >= 1, ErrorKind::Config, "ece_bins must be >= 1");
    require(parallel_cases >= 1, ErrorKind::Config, "parallel must be >= 1");
    if (uses_abc()) {
      simulator.validate();
      embedder.validate();
      if (simulator.kind == SimulatorKind::StoreReplay)
        require(store_path.has_value() && !store_path->empty(), ErrorKind::Config,
                "store-replay simulator needs a store path");
      if (rejection_epsilon)
        require(*rejection_epsilon > 0.0, ErrorKind::Config, "epsilon must be > 0");
    } else {
      require(baseline_endpoint.has_value() || transcript_path.has_value(), ErrorKind::Config,
              std::string(method_code(method)) + " needs a baseline endpoint or a transcript");
      if (baseline_endpoint) {
        require(!baseline_endpoint->endpoint.empty(), ErrorKind::Config,
                "baseline endpoint URL is empty");
        require(!baseline_endpoint->model_name.empty(), ErrorKind::Config,
                "baseline model name is empty");
      }
      require(baseline.temperature >= 0.0, ErrorKind::Config, "temperature must be >= 0");
      require(baseline.top_k >= 1, ErrorKind::Config, "top_k must be >= 1");
    }
  }

  std::string resolved_model_label() const {
    if (!model_label.empty()) return model_label;
    if (uses_abc()) {
      if (simulator.model_name) return *simulator.model_name;
      return simulator.kind == SimulatorKind::StoreReplay ? "store-replay" : "synthetic";
    }
    if (baseline_endpoint) return baseline_endpoint->model_name;
    return "transcript";
  }
};

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
T cfg_get(const nlohmann::json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::Config, where + "." + key + " is missing or has the wrong type");
  }
}

template <class T>
void cfg_opt(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (j.contains(key) && !j.at(key).is_null()) out = cfg_get<T>(j, key, where);
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

inline std::chrono::milliseconds cfg_ms(const nlohmann::json& j, const char* key,
                                        std::chrono::milliseconds fallback) {
  if (!j.contains(key)) return fallback;
  return std::chrono::milliseconds(j.at(key).get<long>());
}

inline std::vector<double> cfg_vector(const nlohmann::json& j, const std::string& where) {
  require(j.is_array(), ErrorKind::Config, where + " must be an array of numbers");
  std::vector<double> v;
  for (const auto& x : j) {
    require(x.is_number(), ErrorKind::Config, where + " must be an array of numbers");
    v.push_back(x.get<double>());
  }
  return v;
}

inline EmbedderConfig parse_embedder(const nlohmann::json& j) {
  EmbedderConfig e;
  const std::string kind = j.value("kind", std::string("hashed_bow"));
  if (kind == "remote_http")
    e.kind = EmbedderKind::RemoteHttp;
  else if (kind == "hashed_bow")
    e.kind = EmbedderKind::HashedBagOfWords;
  else
    throw Error(ErrorKind::Config, "embedder.kind must be remote_http or hashed_bow, got '" + kind + "'");
  if (j.contains("endpoint")) e.endpoint = cfg_get<std::string>(j, "endpoint", "embedder");
  if (j.contains("model")) e.model_name = cfg_get<std::string>(j, "model", "embedder");
  cfg_opt(j, "dim", e.dim, "embedder");
  cfg_opt(j, "max_retries", e.max_retries, "embedder");
  cfg_opt(j, "cache", e.cache_enabled, "embedder");
  cfg_opt(j, "api_key_env", e.api_key_env, "embedder");
  e.timeout = cfg_ms(j, "timeout_ms", e.timeout);
  e.retry_backoff = cfg_ms(j, "retry_backoff_ms", e.retry_backoff);
  return e;
}

inline SyntheticOracleSpec parse_oracle(const nlohmann::json& j) {
  SyntheticOracleSpec spec;
  cfg_opt(j, "rng_seed", spec.rng_seed, "simulator.oracle");
  require(j.contains("classes") && j["classes"].is_array(), ErrorKind::Config,
          "simulator.oracle.classes must be an array");
  for (const auto& c : j["classes"]) {
    OracleClass oc;
    try {
      oc.centroid = EmbeddingVector(cfg_vector(c.at("centroid"), "simulator.oracle.classes[].centroid"));
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorKind::Config, "simulator.oracle.classes[] needs a centroid");
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Config) throw;
      throw Error(ErrorKind::Config, std::string("simulator.oracle centroid: ") + e.what());
    }
    cfg_opt(c, "noise_scale", oc.noise_scale, "simulator.oracle.classes[]");
    cfg_opt(c, "phrase_bank", oc.phrase_bank, "simulator.oracle.classes[]");
    spec.classes.push_back(std::move(oc));
  }
  return spec;
}

inline SimulatorConfig parse_simulator(const nlohmann::json& j) {
  SimulatorConfig s;
  const std::string kind = j.value("kind", std::string("synthetic_oracle"));
  if (kind == "remote_chat")
    s.kind = SimulatorKind::RemoteChat;
  else if (kind == "store_replay")
    s.kind = SimulatorKind::StoreReplay;
  else if (kind == "synthetic_oracle")
    s.kind = SimulatorKind::SyntheticOracle;
  else
    throw Error(ErrorKind::Config, "simulator.kind must be remote_chat, store_replay or "
                                   "synthetic_oracle, got '" + kind + "'");
  if (j.contains("endpoint")) s.endpoint = cfg_get<std::string>(j, "endpoint", "simulator");
  if (j.contains("model")) s.model_name = cfg_get<std::string>(j, "model", "simulator");
  cfg_opt(j, "temperature", s.temperature, "simulator");
  const std::string mode = j.value("prompt_mode", std::string("patient_description"));
  if (mode == "sign_symptom_list")
    s.prompt_mode = PromptMode::SignSymptomList;
  else if (mode == "patient_description")
    s.prompt_mode = PromptMode::PatientDescription;
  else
    throw Error(ErrorKind::Config, "simulator.prompt_mode must be patient_description or sign_symptom_list");
  s.prompt_template = std::string(default_template(s.prompt_mode));
  cfg_opt(j, "prompt_template", s.prompt_template, "simulator");
  cfg_opt(j, "max_tokens", s.max_tokens, "simulator");
  cfg_opt(j, "max_retries", s.max_retries, "simulator");
  cfg_opt(j, "api_key_env", s.api_key_env, "simulator");
  s.timeout = cfg_ms(j, "timeout_ms", s.timeout);
  s.retry_backoff = cfg_ms(j, "retry_backoff_ms", s.retry_backoff);
  if (j.contains("oracle")) s.oracle = parse_oracle(j["oracle"]);
  return s;
}

inline void parse_engine(const nlohmann::json& j, RunConfig& cfg) {
  auto& e = cfg.engine;
  cfg_opt(j, "particles", e.particles, "engine");
  cfg_opt(j, "populations", e.max_populations, "engine");
  cfg_opt(j, "p_stay", e.p_stay, "engine");
  cfg_opt(j, "max_simulations_per_population", e.max_simulations_per_population, "engine");
  cfg_opt(j, "parallel_simulations", e.parallel_simulations, "engine");
  cfg_opt(j, "keep_texts", e.keep_texts, "engine");
  if (j.contains("prior")) e.prior = Prior{cfg_vector(j["prior"], "engine.prior")};
  if (j.contains("epsilon") && !j["epsilon"].is_null())
    cfg.rejection_epsilon = cfg_get<double>(j, "epsilon", "engine");
  if (j.contains("epsilon_schedule")) {
    const auto& s = j["epsilon_schedule"];
    const std::string strategy = s.value("strategy", std::string("adaptive"));
    if (strategy == "fixed")
      e.schedule.strategy = EpsilonStrategy::FixedList;
    else if (strategy == "adaptive")
      e.schedule.strategy = EpsilonStrategy::AdaptiveQuantile;
    else
      throw Error(ErrorKind::Config, "engine.epsilon_schedule.strategy must be adaptive or fixed");
    cfg_opt(s, "quantile", e.schedule.quantile, "engine.epsilon_schedule");
    cfg_opt(s, "calibration_size", e.schedule.initial_calibration_size, "engine.epsilon_schedule");
    if (s.contains("fixed")) e.schedule.fixed = cfg_vector(s["fixed"], "engine.epsilon_schedule.fixed");
  }
}

inline void parse_baseline(const nlohmann::json& j, const fs::path& base, RunConfig& cfg) {
  if (j.contains("endpoint")) {
    ChatEndpointConfig ep;
    ep.endpoint = cfg_get<std::string>(j, "endpoint", "baseline");
    ep.model_name = j.value("model", std::string());
    cfg_opt(j, "max_retries", ep.max_retries, "baseline");
    cfg_opt(j, "api_key_env", ep.api_key_env, "baseline");
    ep.timeout = cfg_ms(j, "timeout_ms", ep.timeout);
    ep.retry_backoff = cfg_ms(j, "retry_backoff_ms", ep.retry_backoff);
    cfg.baseline_endpoint = ep;
  }
  if (j.contains("transcript"))
    cfg.transcript_path = resolve(base, cfg_get<std::string>(j, "transcript", "baseline"));
  auto& b = cfg.baseline;
  cfg_opt(j, "temperature", b.temperature, "baseline");
  cfg_opt(j, "top_k", b.top_k, "baseline");
  cfg_opt(j, "top_logprobs", b.top_logprobs, "baseline");
  cfg_opt(j, "max_tokens", b.elicit_max_tokens, "baseline");
  cfg_opt(j, "logits_template", b.logits_template, "baseline");
  cfg_opt(j, "elicit_template", b.elicit_template, "baseline");
  cfg_opt(j, "question", b.question, "baseline");
}

}  // namespace detail

/// Builds a RunConfig from a JSON config tree. Relative paths resolve
/// against `base_dir` (the config file's directory).
inline RunConfig parse_run_config(const nlohmann::json& j, const fs::path& base_dir = {}) {
  require(j.is_object(), ErrorKind::Config, "config root must be an object");
  RunConfig cfg;
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    if (d.is_string()) {
      cfg.dataset_path = detail::resolve(base_dir, d.get<std::string>());
      cfg.dataset_format = format_from_path(cfg.dataset_path);
    } else {
      cfg.dataset_path = detail::resolve(base_dir, detail::cfg_get<std::string>(d, "path", "dataset"));
      const std::string fmt = d.value("format", std::string(
          format_from_path(cfg.dataset_path) == DatasetFormat::CSV ? "csv" : "jsonl"));
      require(fmt == "csv" || fmt == "jsonl", ErrorKind::Config, "dataset.format must be jsonl or csv");
      cfg.dataset_format = fmt == "csv" ? DatasetFormat::CSV : DatasetFormat::JsonLines;
      detail::cfg_opt(d, "labels", cfg.csv_labels, "dataset");
      detail::cfg_opt(d, "keep_classes", cfg.keep_classes, "dataset");
      detail::cfg_opt(d, "ood", cfg.force_ood, "dataset");
    }
  }
  if (j.contains("method")) {
    const auto code = detail::cfg_get<std::string>(j, "method", "config");
    auto m = parse_method_code(code);
    require(m.has_value(), ErrorKind::Config, "method must be one of RS, SMC, ML, EP; got '" + code + "'");
    cfg.method = *m;
  }
  detail::cfg_opt(j, "model", cfg.model_label, "config");
  detail::cfg_opt(j, "seed", cfg.seed, "config");
  detail::cfg_opt(j, "ece_bins", cfg.ece_bins, "config");
  detail::cfg_opt(j, "parallel", cfg.parallel_cases, "config");
  detail::cfg_opt(j, "labels", cfg.labels, "config");
  if (j.contains("temperatures")) cfg.temperatures = detail::cfg_vector(j["temperatures"], "temperatures");
  if (j.contains("output_dir"))
    cfg.output_dir = detail::resolve(base_dir, detail::cfg_get<std::string>(j, "output_dir", "config"));
  if (j.contains("store"))
    cfg.store_path = detail::resolve(base_dir, detail::cfg_get<std::string>(j, "store", "config"));
  if (j.contains("engine")) detail::parse_engine(j["engine"], cfg);
  if (j.contains("simulator")) cfg.simulator = detail::parse_simulator(j["simulator"]);
  if (j.contains("embedder")) cfg.embedder = detail::parse_embedder(j["embedder"]);
  if (j.contains("baseline")) detail::parse_baseline(j["baseline"], base_dir, cfg);
  return cfg;
}

inline RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Config, "cannot open config " + path.string());
  require(path.extension() == ".json", ErrorKind::Config,
          "config must be a .json file: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Providers
// ---------------------------------------------------------------------------

struct Providers {
  std::shared_ptr<const Embedder> embedder;
  std::shared_ptr<const Simulator> simulator;
  std::shared_ptr<const ChatBackend> chat;
};

inline Providers make_providers(const RunConfig& cfg, const LabelSpace& space) {
  Providers p;
  if (cfg.uses_abc()) {
    p.embedder = make_embedder(cfg.embedder);
    switch (cfg.simulator.kind) {
      case SimulatorKind::SyntheticOracle:
        cfg.simulator.oracle->validate(space.k());
        p.simulator = std::make_shared<SyntheticOracleSimulator>(*cfg.simulator.oracle);
        break;
      case SimulatorKind::StoreReplay: {
        auto store = std::make_shared<const VectorStore>(load_store(*cfg.store_path));
        require(store->meta.labels == space.names(), ErrorKind::Config,
                "store label space does not match the dataset label space");
        require(store->meta.model_name == p.embedder->model_name(), ErrorKind::Config,
                "store was embedded with '" + store->meta.model_name + "' but the embedder is '" +
                    p.embedder->model_name() + "'");
        p.simulator = std::make_shared<StoreReplaySimulator>(std::move(store), cfg.seed);
        break;
      }
      case SimulatorKind::RemoteChat: {
        auto sim_cfg = cfg.simulator;
        if (!sim_cfg.seed) sim_cfg.seed = cfg.seed;
        p.simulator = std::make_shared<ChatSimulator>(
            std::make_shared<RemoteChatBackend>(sim_cfg.chat_endpoint()), sim_cfg, space);
        break;
      }
    }
  } else if (cfg.transcript_path) {
    p.chat = std::make_shared<TranscriptChatBackend>(TranscriptChatBackend::load(*cfg.transcript_path));
  } else {
    p.chat = std::make_shared<RemoteChatBackend>(*cfg.baseline_endpoint);
  }
  return p;
}

// ---------------------------------------------------------------------------
// cmd_infer
// ---------------------------------------------------------------------------

struct CaseOutcome {
  std::string case_id;
  std::optional<LabelIndex> gold;
  std::uint64_t seed = 0;
  std::optional<Posterior> posterior;
  std::optional<NonCompliant> noncompliant;
  std::optional<std::string> error;
};

struct RunResult {
  std::string dataset_name;
  DatasetKind dataset_kind = DatasetKind::InDistribution;
  LabelSpace space;
  Method method = Method::Rejection;
  std::string model_label;
  double temperature = 0.0;
  std::vector<CaseOutcome> outcomes;  // case order
  std::vector<PredictionRecord> records;
  std::optional<MetricsReport> metrics;
  std::optional<double> compliance_rate;
  long simulations_total = 0;
  double wall_clock_seconds = 0.0;

  std::size_t usable() const { return records.size(); }

  std::size_t count_noncompliant() const {
    std::size_t n = 0;
    for (const auto& o : outcomes) n += o.noncompliant ? 1 : 0;
    return n;
  }
  std::size_t count_errors() const {
    std::size_t n = 0;
    for (const auto& o : outcomes) n += o.error ? 1 : 0;
    return n;
  }

  ResultSummary summary(int ece_bins, std::uint64_t seed) const {
    ResultSummary s;
    s.dataset = dataset_name;
    s.kind = dataset_kind;
    s.method = method;
    s.model = model_label;
    s.temperature = temperature;
    s.n_cases = outcomes.size();
    s.n_usable = usable();
    s.n_noncompliant = count_noncompliant();
    s.n_errors = count_errors();
    s.compliance_rate = compliance_rate;
    s.metrics = metrics;
    s.ece_bins = ece_bins;
    s.seed = seed;
    s.simulations_total = simulations_total;
    s.wall_clock_seconds = wall_clock_seconds;
    for (const auto& o : outcomes)
      if (o.error) s.failures.emplace_back(o.case_id, *o.error);
    return s;
  }
};

/// Per-case seed: a function of the run seed and the case id only, so case
/// order never changes any posterior.
inline std::uint64_t case_seed(std::uint64_t run_seed, const std::string& case_id) {
  return derive_seed(run_seed, {fnv1a64(case_id)});
}

inline Dataset load_run_dataset(const RunConfig& cfg) {
  require(!cfg.dataset_path.empty(), ErrorKind::Config, "no dataset configured");
  auto ds = load_dataset(cfg.dataset_path, cfg.dataset_format, cfg.csv_labels);
  if (!cfg.keep_classes.empty()) ds = filter_classes(ds, cfg.keep_classes);
  if (cfg.force_ood) ds = mark_ood(ds);
  return ds;
}

inline CaseOutcome run_case(const RunConfig& cfg, const Providers& providers,
                            const LabelSpace& space, const CaseRecord& c) {
  CaseOutcome out;
  out.case_id = c.id;
  out.gold = c.gold_label;
  out.seed = case_seed(cfg.seed, c.id);
  try {
    switch (cfg.method) {
      case Method::Rejection: {
        auto ecfg = cfg.engine;
        ecfg.seed = out.seed;
        const double eps = cfg.rejection_epsilon
                               ? *cfg.rejection_epsilon
                               : calibrate_epsilon(c, ecfg, *providers.simulator, *providers.embedder);
        out.posterior = abc_rejection(c, ecfg, *providers.simulator, *providers.embedder, eps);
        break;
      }
      case Method::SMC: {
        auto ecfg = cfg.engine;
        ecfg.seed = out.seed;
        out.posterior = smc_abc(c, ecfg, *providers.simulator, *providers.embedder).posterior;
        break;
      }
      case Method::Logits:
        out.posterior = logits_probs(c, space, *providers.chat, cfg.baseline);
        break;
      case Method::Elicited: {
        auto r = elicit_probs(c, space, *providers.chat, cfg.baseline);
        if (auto* p = std::get_if<Posterior>(&r))
          out.posterior = std::move(*p);
        else
          out.noncompliant = std::get<NonCompliant>(r);
        break;
      }
    }
    if (out.posterior) check_probability_vector(out.posterior->probs);
  } catch (const std::exception& e) {
    out.posterior.reset();
    out.error = e.what();
  }
  return out;
}

inline nlohmann::json outcome_json(const CaseOutcome& o, const LabelSpace& space, Method method) {
  nlohmann::json j = {{"case_id", o.case_id}, {"method", method_code(method)}, {"seed", o.seed}};
  if (o.posterior) {
    const auto rec = make_prediction_record(o.case_id, o.posterior->probs, o.gold);
    j["status"] = "ok";
    j["probs"] = o.posterior->probs;
    j["predicted"] = rec.predicted;
    j["predicted_label"] = space.name(rec.predicted);
    j["confidence"] = rec.confidence;
    j["gold"] = o.gold ? nlohmann::json(*o.gold) : nlohmann::json();
    j["correct"] = o.gold ? nlohmann::json(rec.correct) : nlohmann::json();
    j["simulations_used"] = o.posterior->simulations_used;
    j["accepted"] = o.posterior->accepted;
    j["partial"] = o.posterior->partial;
    j["stalled"] = o.posterior->stalled;
  } else if (o.noncompliant) {
    j["status"] = "noncompliant";
    j["reason"] = o.noncompliant->reason;
    j["raw"] = o.noncompliant->raw;
  } else {
    j["status"] = "error";
    j["error"] = o.error.value_or("unknown error");
  }
  return j;
}

inline void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorKind::Io,
          "cannot create output directory " + dir.string() + (ec ? ": " + ec.message() : ""));
}

inline void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << content;
  out.flush();
  require(out.good(), ErrorKind::Io, "write to " + path.string() + " failed");
}

inline void write_run_outputs(const RunConfig& cfg, const RunResult& result) {
  ensure_directory(cfg.output_dir);
  std::string posteriors;
  for (const auto& o : result.outcomes)
    posteriors += outcome_json(o, result.space, result.method).dump() + "\n";
  write_text_file(cfg.output_dir / "posteriors.jsonl", posteriors);
  const auto summary = result.summary(cfg.ece_bins, cfg.seed);
  write_text_file(cfg.output_dir / "metrics.json", summary_to_json(summary).dump(2) + "\n");
  const std::vector<ResultSummary> one{summary};
  write_text_file(cfg.output_dir / "table.txt", render_report_text(one));
  write_text_file(cfg.output_dir / "table.csv", render_report_csv(one));
}

/// Runs the configured method on every case and writes posteriors.jsonl,
/// metrics.json, table.txt and table.csv into the output directory. Per-case
/// failures are recorded and the run continues.
inline RunResult cmd_infer(const RunConfig& cfg) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  const auto ds = load_run_dataset(cfg);
  const auto providers = make_providers(cfg, ds.space);

  RunResult result;
  result.dataset_name = ds.name;
  result.dataset_kind = ds.kind;
  result.space = ds.space;
  result.method = cfg.method;
  result.model_label = cfg.resolved_model_label();
  result.temperature = cfg.uses_abc() ? cfg.simulator.temperature : cfg.baseline.temperature;
  result.outcomes.resize(ds.cases.size());

  const auto batch = static_cast<std::size_t>(cfg.parallel_cases);
  for (std::size_t start = 0; start < ds.cases.size(); start += batch) {
    const auto end = std::min(ds.cases.size(), start + batch);
    if (batch == 1) {
      result.outcomes[start] = run_case(cfg, providers, ds.space, ds.cases[start]);
      continue;
    }
    std::vector<std::future<CaseOutcome>> inflight;
    for (std::size_t i = start; i < end; ++i)
      inflight.push_back(std::async(std::launch::async, [&, i] {
        return run_case(cfg, providers, ds.space, ds.cases[i]);
      }));
    for (std::size_t i = start; i < end; ++i) result.outcomes[i] = inflight[i - start].get();
  }

  std::size_t elicit_total = 0, elicit_ok = 0;
  for (const auto& o : result.outcomes) {
    if (o.posterior) {
      result.records.push_back(make_prediction_record(o.case_id, o.posterior->probs, o.gold));
      result.simulations_total += o.posterior->simulations_used;
    }
    if (cfg.method == Method::Elicited && !o.error) {
      ++elicit_total;
      elicit_ok += o.posterior ? 1 : 0;
    }
  }
  if (cfg.method == Method::Elicited && elicit_total > 0)
    result.compliance_rate = static_cast<double>(elicit_ok) / static_cast<double>(elicit_total);
  if (!result.records.empty())
    result.metrics = compute_metrics(result.records, ds.space.k(), cfg.ece_bins);
  result.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  write_run_outputs(cfg, result);
  return result;
}

/// One run per temperature (applied to the simulator for RS/SMC and to the
/// baseline prompt for ML/EP), each in out/T=<t>/, plus sweep_table.{txt,csv}.
inline std::vector<RunResult> cmd_sweep_temperature(const RunConfig& cfg, const std::vector<double>& temps) {
  require(!temps.empty(), ErrorKind::Contract, "temperature sweep needs at least one temperature");
  for (double t : temps) require(t >= 0.0, ErrorKind::Contract, "temperatures must be >= 0");
  cfg.validate();
  std::vector<RunResult> results;
  std::vector<ResultSummary> summaries;
  for (double t : temps) {
    RunConfig run = cfg;
    run.simulator.temperature = t;
    run.baseline.temperature = t;
    run.output_dir = cfg.output_dir / ("T=" + format_fixed(t, 2));
    results.push_back(cmd_infer(run));
    summaries.push_back(results.back().summary(cfg.ece_bins, cfg.seed));
  }
  ensure_directory(cfg.output_dir);
  write_text_file(cfg.output_dir / "sweep_table.txt", render_sweep_text(summaries));
  write_text_file(cfg.output_dir / "sweep_table.csv", render_sweep_csv(summaries));
  return results;
}

/// Builds and saves a vector store; returns its path.
inline fs::path cmd_build_store(const RunConfig& cfg, int per_class) {
  require(per_class >= 1, ErrorKind::Contract, "per_class must be >= 1");
  require(cfg.simulator.kind != SimulatorKind::StoreReplay, ErrorKind::Config,
          "build-store cannot use a store-replay simulator");
  cfg.simulator.validate();
  cfg.embedder.validate();
  LabelSpace space;
  if (!cfg.dataset_path.empty())
    space = load_run_dataset(cfg).space;
  else
    space = LabelSpace(cfg.labels);
  RunConfig abc = cfg;
  abc.method = Method::Rejection;
  const auto providers = make_providers(abc, space);
  const auto store = build_store(space, *providers.simulator, *providers.embedder, per_class,
                                 cfg.seed, utc_timestamp_now(), cfg.engine.parallel_simulations);
  const fs::path path = cfg.store_path.value_or(cfg.output_dir / "store.jsonl");
  if (path.has_parent_path()) ensure_directory(path.parent_path());
  save_store(store, path);
  return path;
}

}  // namespace abcuq
