#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hybridflow/data.hpp"
#include "hybridflow/hybrid.hpp"
#include "hybridflow/record.hpp"

namespace hybridflow::runner {

inline constexpr const char* kVersion = "1.0.0";

// JSON config; keys match the field names below exactly. Unknown keys are
// rejected.
struct ExperimentConfig {
  std::vector<std::string> datasets;
  std::vector<std::string> methods;  // mlp_no_uq, nll, bnll, deep_ensemble, hybridflow
  std::size_t repeats = 20;
  std::vector<std::uint64_t> seeds;  // defaults to 0..repeats-1
  std::size_t flow_layers = 5;
  std::size_t mc_passes = 30;
  std::size_t flow_samples = 100;
  double dropout = 0.2;
  std::vector<double> lr_grid{1e-3, 1e-4, 1e-5};
  double alpha = 0.05;
  int ece_levels = 10;
  std::vector<std::string> inputs{"x_and_z", "x_only", "z_only"};  // input ablation modes
  std::vector<std::size_t> flow_depths{2, 4, 6, 8, 10, 12};        // depth ablation

  double test_fraction = 0.2;
  std::size_t hidden_units = 50;
  std::size_t epochs = 1000;
  std::size_t batch_size = 64;
  std::size_t patience = 20;
  std::size_t flow_epochs = 1000;
  double flow_lr = 1e-3;
  std::size_t flow_hidden = 32;
  double beta = 0.5;
  std::size_t ensemble_members = 5;
  std::string estimator = "mc_dropout";
  bool finetune_flow = false;
  std::string manifest;  // empty: supplied by the caller
};

ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

hybrid::HybridConfig hybrid_config(const ExperimentConfig& cfg, std::uint64_t seed);

struct RunOptions {
  std::size_t workers = 1;
  // Used when cfg.manifest is empty; relative cfg.manifest paths resolve
  // against base_dir.
  std::filesystem::path default_manifest;
  std::filesystem::path base_dir;
};

struct CellTiming {
  std::string dataset;
  std::string method;
  std::uint64_t seed = 0;
  double train_seconds = 0.0;
  double total_seconds = 0.0;
};

struct RunResult {
  std::vector<ResultRecord> records;
  std::vector<std::optional<SampleUncertainty>> samples;  // parallel to records
  std::vector<CellTiming> timings;                        // parallel to records
  std::size_t failed() const;
};

class SetupError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Resolves every dataset up front (SetupError on a miss), then runs each
// (dataset, method, seed) cell. A failed cell becomes a record with ok=false.
RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});
// One cell on an already loaded dataset.
ResultRecord run_cell(const ExperimentConfig& cfg, const data::Dataset& ds, const std::string& method,
                      std::uint64_t seed, SampleUncertainty* samples = nullptr, CellTiming* timing = nullptr);

// Per (dataset, method) over cfg.seeds: one shared flow per split, predictor
// retrained for each mode in cfg.inputs. Methods are named hybridflow_<mode>.
RunResult run_input_ablation(const ExperimentConfig& cfg, const RunOptions& opts = {});
// hybridflow cells for each K; methods are named hybridflow_k<K>.
RunResult run_depth_ablation(const ExperimentConfig& cfg, const std::vector<std::size_t>& layers,
                             const RunOptions& opts = {});

struct Stat {
  double mean = 0.0;
  std::optional<double> std;  // sample std; absent with fewer than 2 values
  std::size_t n = 0;
};
Stat summarize(std::vector<double> values);

struct AggregateRow {
  std::string dataset;
  std::string method;
  std::size_t ok = 0;
  std::size_t failed = 0;
  std::map<std::string, Stat> metrics;  // "rmse", "<component>.<metric>"
};

// Rows sorted by (dataset, method); independent of record order.
std::vector<AggregateRow> aggregate(const std::vector<ResultRecord>& records);

struct DepthRow {
  std::size_t layers = 0;
  Stat rmse;
  Stat train_seconds;
};
std::vector<DepthRow> depth_table(const RunResult& result);

struct CorrelationRow {
  std::string dataset;
  std::string method;
  std::size_t cells = 0;
  double spearman = 0.0;  // mean of per-cell coefficients over defined cells
  double pearson = 0.0;
  bool flagged = false;   // some cell had a degenerate array
  std::string diagnostic;
};
std::vector<CorrelationRow> disentanglement_report(const std::vector<ResultRecord>& records,
                                                   const std::vector<std::optional<SampleUncertainty>>& samples);

// Writes records.jsonl, timings.jsonl, aggregate.tsv, metrics.tsv,
// correlation.tsv, manifest.json and samples/*.tsv. Everything except
// timings.jsonl is a pure function of the inputs.
void emit_report(const RunResult& result, const ExperimentConfig& cfg, const std::filesystem::path& out_dir);
// Tables only, from records (and samples/ when present) in `dir`.
void write_tables(const std::vector<ResultRecord>& records,
                  const std::vector<std::optional<SampleUncertainty>>& samples, const std::filesystem::path& out_dir);

std::vector<ResultRecord> load_records(const std::filesystem::path& dir);
// Reads samples/ files matching the records; absent files give nullopt.
std::vector<std::optional<SampleUncertainty>> load_samples(const std::filesystem::path& dir,
                                                           const std::vector<ResultRecord>& records);

std::string aggregate_tsv(const std::vector<AggregateRow>& rows);
std::string metrics_tsv(const std::vector<AggregateRow>& rows);
std::string correlation_tsv(const std::vector<CorrelationRow>& rows);
std::string depth_tsv(const std::vector<DepthRow>& rows);

}  // namespace hybridflow::runner
