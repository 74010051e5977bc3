#include <gtest/gtest.h>

#include <functional>

#include "abcuq/run.hpp"
#include "test_support.hpp"

using namespace abcuq;
using namespace abcuq::testing;
using nlohmann::json;

namespace {

json oracle_config(const TempDir& dir, double noise = 0.0) {
  json classes = json::array();
  for (int j = 0; j < 3; ++j) {
    std::vector<double> c(4, 0.0);
    c[j] = 1.0;
    classes.push_back({{"centroid", c}, {"noise_scale", noise}});
  }
  return {{"dataset", fixture("oracle_30.jsonl").string()},
          {"method", "RS"},
          {"seed", 7},
          {"output_dir", (dir / "out").string()},
          {"engine", {{"particles", 40}, {"epsilon", 0.3}}},
          {"simulator", {{"kind", "synthetic_oracle"}, {"oracle", {{"rng_seed", 3}, {"classes", classes}}}}},
          {"embedder", {{"kind", "hashed_bow"}, {"dim", 4}}}};
}

json ep_config(const TempDir& dir) {
  return {{"dataset", fixture("ep_cases.jsonl").string()},
          {"method", "EP"},
          {"model", "replayed"},
          {"output_dir", (dir / "ep").string()},
          {"baseline", {{"transcript", fixture("ep_transcripts.jsonl").string()}}}};
}

ErrorKind error_kind(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::Contract;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(RunConfig, ParsesEveryBlock) {
  const auto j = json::parse(R"({
    "dataset": {"path": "data/cases.csv", "labels": ["A", "B"], "keep_classes": ["B", "A"], "ood": true},
    "method": "SMC", "model": "m1", "seed": 11, "ece_bins": 15, "parallel": 3,
    "temperatures": [0.2, 1.0], "output_dir": "results", "store": "s.jsonl",
    "engine": {"particles": 60, "populations": 4, "p_stay": 0.7, "parallel_simulations": 2,
               "prior": [0.25, 0.75],
               "epsilon_schedule": {"strategy": "fixed", "fixed": [0.5, 0.2]}},
    "simulator": {"kind": "remote_chat", "endpoint": "http://h/v1/chat", "model": "gen",
                  "temperature": 0.9, "prompt_mode": "sign_symptom_list", "timeout_ms": 1000},
    "embedder": {"kind": "remote_http", "endpoint": "http://h/v1/emb", "model": "e", "dim": 8,
                 "cache": false}
  })");
  const auto cfg = parse_run_config(j, "/base");
  EXPECT_EQ(cfg.dataset_path, fs::path("/base/data/cases.csv"));
  EXPECT_EQ(cfg.dataset_format, DatasetFormat::CSV);
  EXPECT_EQ(cfg.csv_labels, (std::vector<std::string>{"A", "B"}));
  EXPECT_EQ(cfg.keep_classes, (std::vector<std::string>{"B", "A"}));
  EXPECT_TRUE(cfg.force_ood);
  EXPECT_EQ(cfg.method, Method::SMC);
  EXPECT_EQ(cfg.resolved_model_label(), "m1");
  EXPECT_EQ(cfg.seed, 11u);
  EXPECT_EQ(cfg.ece_bins, 15);
  EXPECT_EQ(cfg.parallel_cases, 3);
  EXPECT_EQ(cfg.temperatures, (std::vector<double>{0.2, 1.0}));
  EXPECT_EQ(cfg.output_dir, fs::path("/base/results"));
  EXPECT_EQ(cfg.store_path, fs::path("/base/s.jsonl"));
  EXPECT_EQ(cfg.engine.particles, 60);
  EXPECT_EQ(cfg.engine.max_populations, 4);
  EXPECT_EQ(cfg.engine.p_stay, 0.7);
  EXPECT_EQ(cfg.engine.prior->probs, (std::vector<double>{0.25, 0.75}));
  EXPECT_EQ(cfg.engine.schedule.strategy, EpsilonStrategy::FixedList);
  EXPECT_EQ(cfg.engine.schedule.fixed, (std::vector<double>{0.5, 0.2}));
  EXPECT_EQ(cfg.simulator.kind, SimulatorKind::RemoteChat);
  EXPECT_EQ(cfg.simulator.prompt_mode, PromptMode::SignSymptomList);
  EXPECT_EQ(cfg.simulator.temperature, 0.9);
  EXPECT_EQ(cfg.simulator.timeout, std::chrono::milliseconds(1000));
  EXPECT_EQ(cfg.embedder.kind, EmbedderKind::RemoteHttp);
  EXPECT_EQ(cfg.embedder.dim, 8u);
  EXPECT_FALSE(cfg.embedder.cache_enabled);
  EXPECT_NO_THROW(cfg.validate());
}

TEST(RunConfig, RejectsBadValues) {
  EXPECT_EQ(error_kind([] { parse_run_config(json::parse(R"({"method": "XYZ"})")); }), ErrorKind::Config);
  EXPECT_EQ(error_kind([] { parse_run_config(json::parse(R"({"seed": "seven"})")); }), ErrorKind::Config);
  EXPECT_EQ(error_kind([] { parse_run_config(json::parse(R"({"simulator": {"kind": "magic"}})")); }),
            ErrorKind::Config);
  EXPECT_EQ(error_kind([] { parse_run_config(json::parse("[1]")); }), ErrorKind::Config);
}

TEST(RunConfig, LoadRequiresJsonFile) {
  TempDir dir;
  write_file(dir / "c.toml", "method = 'RS'\n");
  EXPECT_EQ(error_kind([&] { load_run_config(dir / "c.toml"); }), ErrorKind::Config);
  write_file(dir / "c.json", "{ // comment\n \"method\": \"EP\", \"dataset\": \"d.jsonl\" }");
  const auto cfg = load_run_config(dir / "c.json");
  EXPECT_EQ(cfg.method, Method::Elicited);
  EXPECT_EQ(cfg.dataset_path, dir / "d.jsonl");
  write_file(dir / "bad.json", "{");
  EXPECT_EQ(error_kind([&] { load_run_config(dir / "bad.json"); }), ErrorKind::Config);
}

TEST(RunConfig, StoreReplayWithoutStoreIsConfigError) {
  TempDir dir;
  auto j = oracle_config(dir);
  j["simulator"] = {{"kind", "store_replay"}};
  const auto cfg = parse_run_config(j);
  EXPECT_EQ(error_kind([&] { cfg.validate(); }), ErrorKind::Config);
  EXPECT_EQ(error_kind([&] { cmd_infer(cfg); }), ErrorKind::Config);
  EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(RunConfig, BaselinesNeedEndpointOrTranscript) {
  RunConfig cfg;
  cfg.method = Method::Logits;
  EXPECT_EQ(error_kind([&] { cfg.validate(); }), ErrorKind::Config);
  cfg.baseline_endpoint = ChatEndpointConfig{};
  EXPECT_EQ(error_kind([&] { cfg.validate(); }), ErrorKind::Config);
  cfg.baseline_endpoint->endpoint = "http://h/c";
  cfg.baseline_endpoint->model_name = "m";
  EXPECT_NO_THROW(cfg.validate());
  cfg.rejection_epsilon = -1.0;
  cfg.method = Method::Rejection;
  cfg.simulator.oracle = axis_oracle(2, 2, 0.0);
  EXPECT_EQ(error_kind([&] { cfg.validate(); }), ErrorKind::Config);
}

TEST(CmdInfer, SeparableOracleIsPerfect) {
  TempDir dir;
  const auto cfg = parse_run_config(oracle_config(dir));
  const auto r = cmd_infer(cfg);
  EXPECT_EQ(r.outcomes.size(), 30u);
  EXPECT_EQ(r.usable(), 30u);
  ASSERT_TRUE(r.metrics);
  EXPECT_EQ(*r.metrics->accuracy, 1.0);
  EXPECT_EQ(*r.metrics->macro_f1, 1.0);
  EXPECT_EQ(*r.metrics->brier, 0.0);
  EXPECT_GE(r.simulations_total, 30 * 40);
  const auto posteriors = read_file(dir / "out" / "posteriors.jsonl");
  EXPECT_EQ(count_lines(posteriors), 30u);
  const auto first = json::parse(posteriors.substr(0, posteriors.find('\n')));
  EXPECT_EQ(first["case_id"], "o-00");
  EXPECT_EQ(first["status"], "ok");
  EXPECT_EQ(first["probs"], (std::vector<double>{1.0, 0.0, 0.0}));
  EXPECT_EQ(first["seed"], case_seed(7, "o-00"));
  const auto summary = load_summary(dir / "out" / "metrics.json");
  EXPECT_EQ(summary.n_usable, 30u);
  EXPECT_EQ(summary.seed, 7u);
  EXPECT_NE(read_file(dir / "out" / "table.txt").find("Accuracy"), std::string::npos);
  EXPECT_NE(read_file(dir / "out" / "table.txt").find("100.0"), std::string::npos);
}

TEST(CmdInfer, ReplayIsBitIdenticalAcrossParallelism) {
  TempDir a, b;
  auto ja = oracle_config(a, 0.2);
  ja["method"] = "SMC";
  ja["engine"] = {{"particles", 30}, {"populations", 3}};
  auto jb = ja;
  jb["output_dir"] = (b / "out").string();
  jb["parallel"] = 4;
  jb["engine"]["parallel_simulations"] = 3;
  cmd_infer(parse_run_config(ja));
  cmd_infer(parse_run_config(jb));
  EXPECT_EQ(read_file(a / "out" / "posteriors.jsonl"), read_file(b / "out" / "posteriors.jsonl"));
}

TEST(CmdInfer, CaseOrderDoesNotChangePosteriors) {
  TempDir dir;
  auto ds = load_dataset(fixture("oracle_30.jsonl"), DatasetFormat::JsonLines);
  std::reverse(ds.cases.begin(), ds.cases.end());
  save_dataset(ds, dir / "rev.jsonl");
  auto j1 = oracle_config(dir, 0.3);
  j1["output_dir"] = (dir / "fwd").string();
  auto j2 = j1;
  j2["dataset"] = (dir / "rev.jsonl").string();
  j2["output_dir"] = (dir / "rev").string();
  const auto fwd = cmd_infer(parse_run_config(j1));
  const auto rev = cmd_infer(parse_run_config(j2));
  for (std::size_t i = 0; i < 30; ++i) {
    const auto& f = fwd.outcomes[i];
    const auto& r = rev.outcomes[29 - i];
    ASSERT_EQ(f.case_id, r.case_id);
    EXPECT_EQ(f.posterior->probs, r.posterior->probs);
  }
  EXPECT_EQ(fwd.metrics->ece, rev.metrics->ece);
}

TEST(CmdInfer, ElicitedTranscriptComplianceMatchesFixture) {
  std::ifstream in(fixture("ep_transcripts.jsonl"));
  std::string line;
  int total = 0, compliant = 0;
  while (std::getline(in, line)) {
    ++total;
    compliant += json::parse(line).at("compliant").get<bool>() ? 1 : 0;
  }
  ASSERT_EQ(total, 50);
  TempDir dir;
  const auto r = cmd_infer(parse_run_config(ep_config(dir)));
  ASSERT_TRUE(r.compliance_rate);
  EXPECT_DOUBLE_EQ(*r.compliance_rate, compliant / 50.0);
  EXPECT_EQ(r.count_noncompliant(), static_cast<std::size_t>(50 - compliant));
  EXPECT_EQ(r.usable(), static_cast<std::size_t>(compliant));
  EXPECT_EQ(r.count_errors(), 0u);
  const auto posteriors = read_file(dir / "ep" / "posteriors.jsonl");
  EXPECT_NE(posteriors.find("\"status\":\"noncompliant\""), std::string::npos);
}

TEST(CmdInfer, LogitsFromTranscript) {
  TempDir dir;
  auto j = ep_config(dir);
  j["method"] = "ML";
  const auto r = cmd_infer(parse_run_config(j));
  EXPECT_EQ(r.usable(), 50u);
  EXPECT_FALSE(r.compliance_rate);
  EXPECT_EQ(*r.metrics->accuracy, 1.0);
  EXPECT_NEAR(r.records[0].probs[0], 0.8 / 1.0, 1e-12);
}

TEST(CmdInfer, PerCaseErrorsAreRecordedAndRunContinues) {
  TempDir dir;
  write_file(dir / "partial.jsonl", R"({"id":"ep-00","text":"G1: 1, P1: 100%"})" "\n");
  auto j = ep_config(dir);
  j["baseline"]["transcript"] = (dir / "partial.jsonl").string();
  const auto r = cmd_infer(parse_run_config(j));
  EXPECT_EQ(r.usable(), 1u);
  EXPECT_EQ(r.count_errors(), 49u);
  EXPECT_EQ(*r.compliance_rate, 1.0);
  const auto s = r.summary(10, 0);
  EXPECT_EQ(s.failures.size(), 49u);
  EXPECT_NE(s.failures[0].second.find("no reply for case"), std::string::npos);
}

TEST(CmdSweepTemperature, OracleRowsIdentical) {
  TempDir dir;
  const auto cfg = parse_run_config(oracle_config(dir, 0.3));
  const std::vector<double> temps{0.2, 0.4, 0.6, 0.8, 1.0};
  const auto results = cmd_sweep_temperature(cfg, temps);
  ASSERT_EQ(results.size(), 5u);
  for (const auto& r : results) {
    EXPECT_EQ(r.metrics->brier, results[0].metrics->brier);
    EXPECT_EQ(r.metrics->ece, results[0].metrics->ece);
    EXPECT_EQ(r.metrics->mean_entropy_bits, results[0].metrics->mean_entropy_bits);
  }
  EXPECT_EQ(results[3].temperature, 0.8);
  EXPECT_TRUE(fs::exists(dir / "out" / "T=0.60" / "posteriors.jsonl"));
  const auto table = read_file(dir / "out" / "sweep_table.txt");
  EXPECT_EQ(count_lines(table), 1u + 5u * 3u);
  for (const char* t : {"T=0.2", "T=0.4", "T=0.6", "T=0.8", "T=1.0"})
    EXPECT_NE(table.find(t), std::string::npos);
  EXPECT_EQ(count_lines(read_file(dir / "out" / "sweep_table.csv")), 1u + 5u * 3u);
}

TEST(CmdSweepTemperature, Preconditions) {
  TempDir dir;
  const auto cfg = parse_run_config(oracle_config(dir));
  EXPECT_EQ(error_kind([&] { cmd_sweep_temperature(cfg, {}); }), ErrorKind::Contract);
  EXPECT_EQ(error_kind([&] { cmd_sweep_temperature(cfg, {0.2, -0.1}); }), ErrorKind::Contract);
}

TEST(CmdBuildStore, WritesPerClassRecords) {
  TempDir dir;
  auto j = json::parse(R"({
    "labels": ["A", "B", "C"], "seed": 4,
    "simulator": {"oracle": {"classes": [
      {"centroid": [1], "phrase_bank": ["soft lip bump"]},
      {"centroid": [1], "phrase_bank": ["white tongue patch"]},
      {"centroid": [1], "phrase_bank": ["smooth red tongue"]}]}},
    "embedder": {"kind": "hashed_bow", "dim": 32}
  })");
  j["output_dir"] = (dir / "o").string();
  const auto path = cmd_build_store(parse_run_config(j), 3);
  EXPECT_EQ(path, dir / "o" / "store.jsonl");
  EXPECT_EQ(count_lines(read_file(path)), 1u + 9u);
  const auto store = load_store(path);
  EXPECT_EQ(store.total_entries(), 9u);
  EXPECT_EQ(store.meta.model_name, "hashed-bow-32");

  write_file(dir / "blocker", "not a directory");
  j["store"] = (dir / "blocker" / "s.jsonl").string();
  EXPECT_EQ(error_kind([&] { cmd_build_store(parse_run_config(j), 3); }), ErrorKind::Io);
}

TEST(CmdBuildStore, StoreFeedsReplayRuns) {
  TempDir dir;
  auto j = oracle_config(dir, 0.1);
  j["store"] = (dir / "store.jsonl").string();
  cmd_build_store(parse_run_config(j), 20);
  j["simulator"] = {{"kind", "store_replay"}};
  const auto r = cmd_infer(parse_run_config(j));
  EXPECT_EQ(r.usable(), 30u);
  EXPECT_EQ(*r.metrics->accuracy, 1.0);

  j["embedder"]["dim"] = 8;
  EXPECT_EQ(error_kind([&] { cmd_infer(parse_run_config(j)); }), ErrorKind::Config);
}

namespace {

ResultSummary summary(const std::string& dataset, DatasetKind kind, Method m, const std::string& model) {
  ResultSummary s;
  s.dataset = dataset;
  s.kind = kind;
  s.method = m;
  s.model = model;
  s.n_cases = 4;
  s.n_usable = 4;
  MetricsReport r;
  r.n = 4;
  r.mean_entropy_bits = 0.98765;
  if (kind == DatasetKind::InDistribution) {
    r.accuracy = 0.75;
    r.macro_f1 = 0.73333;
    r.brier = 0.125;
    r.ece = 0.35;
  }
  s.metrics = r;
  return s;
}

}  // namespace

TEST(Report, TwoMethodsOneGrid) {
  const std::vector results{summary("OL", DatasetKind::InDistribution, Method::SMC, "gpt"),
                            summary("OL", DatasetKind::InDistribution, Method::Logits, "gpt")};
  const auto text = render_report_text(results);
  EXPECT_EQ(text,
            "Dataset: OL\n"
            "Model  Metric            ML   SMC\n"
            "gpt    Accuracy        75.0  75.0\n"
            "       F1-score        73.3  73.3\n"
            "       AUCROC           N/A   N/A\n"
            "       Brier Score     12.5  12.5\n"
            "       ECE (pp)        35.0  35.0\n"
            "       Entropy (bits)  0.99  0.99\n");
  const auto csv = render_report_csv(results);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "dataset,kind,model,metric,ML,SMC");
  EXPECT_EQ(count_lines(csv), 7u);
}

TEST(Report, OodSectionsAreEntropyOnlyAndGrouped) {
  auto unusable = summary("SD", DatasetKind::InDistribution, Method::Elicited, "llama");
  unusable.compliance_rate = 0.2;
  const std::vector results{summary("OL", DatasetKind::InDistribution, Method::Rejection, "gpt"),
                            summary("OL-OOD", DatasetKind::OOD, Method::Rejection, "gpt"), unusable,
                            summary("OL", DatasetKind::InDistribution, Method::Rejection, "llama")};
  const auto text = render_report_text(results);
  EXPECT_NE(text.find("Dataset: OL\n"), std::string::npos);
  EXPECT_NE(text.find("Dataset: OL-OOD (OOD)\nModel  Metric            RS\ngpt    Entropy (bits)  0.99\n"),
            std::string::npos)
      << text;
  EXPECT_NE(text.find("Dataset: SD\n"), std::string::npos);
  EXPECT_LT(text.find("Dataset: OL\n"), text.find("Dataset: OL-OOD"));
  EXPECT_NE(text.find("llama  Accuracy        --"), std::string::npos) << text;
}

TEST(Report, SchemaMismatchAndMissingFiles) {
  TempDir dir;
  auto j = summary_to_json(summary("OL", DatasetKind::InDistribution, Method::SMC, "m"));
  j["schema_version"] = 99;
  write_file(dir / "m.json", j.dump());
  try {
    cmd_report({dir / "m.json"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Load);
    EXPECT_NE(std::string(e.what()).find("schema_version 99"), std::string::npos);
  }
  EXPECT_EQ(error_kind([&] { cmd_report({dir / "nope.json"}); }), ErrorKind::Io);
  EXPECT_EQ(error_kind([&] { cmd_report({}); }), ErrorKind::Contract);
}

TEST(Report, SummaryJsonRoundTripIsLossless) {
  auto s = summary("OL", DatasetKind::InDistribution, Method::Elicited, "m");
  s.metrics->auroc = 1.0 / 3.0;
  s.metrics->per_class_f1 = {0.1, 0.2, 0.30000000000000004};
  s.compliance_rate = 0.74;
  s.failures = {{"c1", "boom"}};
  s.seed = 0xFFFFFFFFFFFFFFFFull;
  const auto back = summary_from_json(json::parse(summary_to_json(s).dump()));
  EXPECT_EQ(back.metrics->auroc, s.metrics->auroc);
  EXPECT_EQ(back.metrics->per_class_f1, s.metrics->per_class_f1);
  EXPECT_EQ(back.compliance_rate, s.compliance_rate);
  EXPECT_EQ(back.failures, s.failures);
  EXPECT_EQ(back.seed, s.seed);
  EXPECT_EQ(summary_to_json(back), summary_to_json(s));
}

TEST(FormatCell, UnitsAndPlaceholders) {
  auto s = summary("OL", DatasetKind::InDistribution, Method::SMC, "m");
  EXPECT_EQ(format_cell(s, MetricRow::Brier), "12.5");
  EXPECT_EQ(format_cell(s, MetricRow::Entropy), "0.99");
  EXPECT_EQ(format_cell(s, MetricRow::Auroc), "N/A");
  s.n_usable = 0;
  EXPECT_EQ(format_cell(s, MetricRow::Brier), "--");
}
