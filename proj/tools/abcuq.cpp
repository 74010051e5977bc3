// abcuq: command-line runner for the ABC uncertainty harness.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "abcuq/run.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::string method;
  std::string dataset;
  std::string store;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> parallel;
  std::optional<double> temperature;
  std::optional<int> ece_bins;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "JSON config file");
  app->add_option("--method", f.method, "RS, SMC, ML or EP");
  app->add_option("--dataset", f.dataset, "dataset file (.jsonl or .csv)");
  app->add_option("--store", f.store, "vector store file");
  app->add_option("--seed", f.seed, "root seed");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--parallel", f.parallel, "cases processed concurrently");
  app->add_option("--temperature", f.temperature, "sampling temperature");
  app->add_option("--ece-bins", f.ece_bins, "number of ECE bins");
}

abcuq::RunConfig resolve_config(const CommonFlags& f) {
  using abcuq::Error;
  using abcuq::ErrorKind;
  abcuq::RunConfig cfg = f.config.empty() ? abcuq::RunConfig{} : abcuq::load_run_config(f.config);
  if (!f.method.empty()) {
    auto m = abcuq::parse_method_code(f.method);
    if (!m) throw Error(ErrorKind::Config, "--method must be one of RS, SMC, ML, EP; got '" + f.method + "'");
    cfg.method = *m;
  }
  if (!f.dataset.empty()) {
    cfg.dataset_path = f.dataset;
    cfg.dataset_format = abcuq::format_from_path(cfg.dataset_path);
  }
  if (!f.store.empty()) cfg.store_path = f.store;
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.output_dir = f.out;
  if (f.parallel) cfg.parallel_cases = *f.parallel;
  if (f.temperature) {
    cfg.simulator.temperature = *f.temperature;
    cfg.baseline.temperature = *f.temperature;
  }
  if (f.ece_bins) cfg.ece_bins = *f.ece_bins;
  return cfg;
}

void print_failures(const abcuq::RunResult& r) {
  if (r.count_errors() == 0) return;
  std::cerr << r.count_errors() << " case(s) failed:\n";
  for (const auto& o : r.outcomes)
    if (o.error) std::cerr << "  " << o.case_id << ": " << *o.error << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ABC-based uncertainty quantification for LLM classifiers"};
  app.require_subcommand(1);

  CommonFlags infer_flags, sweep_flags, store_flags;
  auto* infer = app.add_subcommand("infer", "run one method over a dataset");
  add_common(infer, infer_flags);
  bool per_class = false;
  infer->add_flag("--per-class", per_class, "print per-class F1");

  auto* sweep = app.add_subcommand("sweep-temp", "run one method at several temperatures");
  add_common(sweep, sweep_flags);
  std::vector<double> temps;
  sweep->add_option("--temps", temps, "temperatures (default: config 'temperatures')")->delimiter(',');

  auto* build = app.add_subcommand("build-store", "pre-generate and embed descriptions per class");
  add_common(build, store_flags);
  int store_per_class = 0;
  build->add_option("--per-class", store_per_class, "entries per class")->required();

  auto* report = app.add_subcommand("report", "merge metrics.json files into result tables");
  std::vector<std::string> inputs;
  std::string report_out;
  report->add_option("results", inputs, "metrics.json files")->required();
  report->add_option("--out", report_out, "directory for report.txt and report.csv");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*infer) {
      const auto cfg = resolve_config(infer_flags);
      const auto result = abcuq::cmd_infer(cfg);
      std::cout << abcuq::render_report_text({result.summary(cfg.ece_bins, cfg.seed)});
      if (per_class && result.metrics)
        for (std::size_t i = 0; i < result.metrics->per_class_f1.size(); ++i)
          std::cout << "F1[" << result.space.name(i) << "] = "
                    << abcuq::format_fixed(100.0 * result.metrics->per_class_f1[i], 1) << "\n";
      print_failures(result);
      std::cout << "wrote " << (cfg.output_dir / "posteriors.jsonl").string() << "\n";
      return result.usable() > 0 ? 0 : 1;
    }
    if (*sweep) {
      const auto cfg = resolve_config(sweep_flags);
      const auto results = abcuq::cmd_sweep_temperature(cfg, temps.empty() ? cfg.temperatures : temps);
      std::vector<abcuq::ResultSummary> summaries;
      bool any_usable = false;
      for (const auto& r : results) {
        summaries.push_back(r.summary(cfg.ece_bins, cfg.seed));
        any_usable = any_usable || r.usable() > 0;
        print_failures(r);
      }
      std::cout << abcuq::render_sweep_text(summaries);
      return any_usable ? 0 : 1;
    }
    if (*build) {
      const auto cfg = resolve_config(store_flags);
      const auto path = abcuq::cmd_build_store(cfg, store_per_class);
      std::cout << "wrote " << path.string() << "\n";
      return 0;
    }
    if (*report) {
      std::vector<std::filesystem::path> paths(inputs.begin(), inputs.end());
      const auto tables = abcuq::cmd_report(paths);
      std::cout << tables.text;
      if (!report_out.empty()) {
        const std::filesystem::path dir(report_out);
        abcuq::ensure_directory(dir);
        abcuq::write_text_file(dir / "report.txt", tables.text);
        abcuq::write_text_file(dir / "report.csv", tables.csv);
      }
      return 0;
    }
  } catch (const abcuq::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == abcuq::ErrorKind::Config ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
