#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hybridflow/runner.hpp"

namespace fs = std::filesystem;
using namespace hybridflow;

namespace {

fs::path default_manifest() {
  if (const char* env = std::getenv("HYBRIDFLOW_MANIFEST")) return env;
  return fs::path(HYBRIDFLOW_DATA_DIR) / "uci" / "manifest.txt";
}

runner::RunOptions options(const std::string& config_path, std::size_t workers, const std::string& manifest) {
  runner::RunOptions o;
  o.workers = workers;
  o.default_manifest = manifest.empty() ? default_manifest() : fs::path(manifest);
  o.base_dir = fs::path(config_path).parent_path();
  return o;
}

int finish(const runner::RunResult& result, const runner::ExperimentConfig& cfg, const fs::path& out) {
  runner::emit_report(result, cfg, out);
  std::cout << runner::aggregate_tsv(runner::aggregate(result.records));
  const std::size_t failed = result.failed();
  std::cout << result.records.size() << " records, " << failed << " failed; written to " << out.string() << "\n";
  if (failed) {
    for (const auto& r : result.records) {
      if (!r.ok) std::cerr << r.dataset << " / " << r.method << " / seed " << r.seed << ": " << r.error << "\n";
    }
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HybridFlow uncertainty benchmark"};
  app.require_subcommand(1);

  std::string config, out = "results", manifest, records_dir, layers_arg;
  std::size_t workers = 1;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory");
    sub->add_option("--workers", workers, "concurrent cells")->check(CLI::PositiveNumber);
    sub->add_option("--manifest", manifest, "dataset manifest (default: built-in data directory)");
  };
  auto* run = app.add_subcommand("run", "run the benchmark sweep");
  add_common(run);
  auto* inputs = app.add_subcommand("ablate-inputs", "predictor inputs x+z / x / z");
  add_common(inputs);
  auto* depth = app.add_subcommand("ablate-depth", "number of flow layers");
  add_common(depth);
  depth->add_option("--layers", layers_arg, "comma-separated layer counts, e.g. 2,4,6");
  auto* report = app.add_subcommand("report", "re-aggregate emitted records");
  report->add_option("--records", records_dir, "directory holding records.jsonl")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*report) {
      auto records = runner::load_records(records_dir);
      const fs::path dir = fs::is_directory(records_dir) ? fs::path(records_dir) : fs::path(records_dir).parent_path();
      auto samples = runner::load_samples(dir, records);
      runner::write_tables(records, samples, dir);
      const auto rows = runner::aggregate(records);
      std::cout << runner::aggregate_tsv(rows) << "\n" << runner::metrics_tsv(rows) << "\n"
                << runner::correlation_tsv(runner::disentanglement_report(records, samples));
      return 0;
    }
    const runner::ExperimentConfig cfg = runner::load_config(config);
    const runner::RunOptions opts = options(config, workers, manifest);
    if (*run) return finish(runner::run_experiment(cfg, opts), cfg, out);
    if (*inputs) return finish(runner::run_input_ablation(cfg, opts), cfg, out);
    std::vector<std::size_t> layers = cfg.flow_depths;
    if (!layers_arg.empty()) {
      layers.clear();
      std::stringstream ss(layers_arg);
      for (std::string tok; std::getline(ss, tok, ',');) {
        std::size_t pos = 0;
        const unsigned long v = std::stoul(tok, &pos);
        if (pos != tok.size() || v == 0) throw runner::SetupError("--layers: bad entry '" + tok + "'");
        layers.push_back(v);
      }
    }
    auto result = runner::run_depth_ablation(cfg, layers, opts);
    const int code = finish(result, cfg, out);
    std::cout << runner::depth_tsv(runner::depth_table(result));
    return code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
