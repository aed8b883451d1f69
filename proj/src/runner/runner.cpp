#include "hybridflow/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include <boost/version.hpp>

#include "hybridflow/metrics.hpp"
#include "hybridflow/predictor.hpp"
#include "hybridflow/random.hpp"
#include "hybridflow/serialize.hpp"

namespace hybridflow::runner {

namespace fs = std::filesystem;
using grad::Tensor;
using nlohmann::json;

namespace {

const std::set<std::string> kMethods{"mlp_no_uq", "nll", "bnll", "deep_ensemble", "hybridflow"};

template <class T>
void read(const json& j, const char* key, T& out) {
  try {
    out = j.get<T>();
  } catch (const json::exception& e) {
    throw SetupError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string mean_pm_std(const Stat& s) { return fmt(s.mean) + " ± " + (s.std ? fmt(*s.std) : std::string("NA")); }

fs::path resolve_manifest(const ExperimentConfig& cfg, const RunOptions& opts) {
  if (cfg.manifest.empty()) {
    if (opts.default_manifest.empty()) throw SetupError("no manifest configured");
    return opts.default_manifest;
  }
  fs::path p(cfg.manifest);
  return p.is_relative() ? opts.base_dir / p : p;
}

std::vector<data::Dataset> load_all(const ExperimentConfig& cfg, const RunOptions& opts) {
  if (cfg.datasets.empty()) throw SetupError("config: no datasets");
  std::map<std::string, data::ManifestEntry> manifest;
  try {
    manifest = data::load_manifest(resolve_manifest(cfg, opts));
  } catch (const data::LoadError& e) {
    throw SetupError(e.what());
  }
  std::vector<data::Dataset> out;
  for (const std::string& name : cfg.datasets) {
    auto it = manifest.find(name);
    if (it == manifest.end()) throw SetupError("dataset '" + name + "' is not in the manifest");
    try {
      out.push_back(data::load_dataset(it->second));
    } catch (const data::LoadError& e) {
      throw SetupError("dataset '" + name + "': " + e.what());
    }
    out.back().name = name;
  }
  return out;
}

// Runs jobs [0, n) on up to `workers` threads; each job writes only its own
// output slot, so results do not depend on scheduling.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& job) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) job(i);
    });
  }
  for (auto& t : pool) t.join();
}

struct Prepared {
  data::Dataset train_raw, test_raw, train, test;
  data::Normalizer norm;
};

Prepared prepare(const data::Dataset& ds, double test_fraction, std::uint64_t seed) {
  Prepared p;
  std::tie(p.train_raw, p.test_raw) = data::split(ds, test_fraction, seed);
  p.norm = data::normalize_fit(p.train_raw);
  p.train = data::normalize_apply(p.norm, p.train_raw);
  p.test = data::normalize_apply(p.norm, p.test_raw);
  return p;
}

predictor::TrainConfig train_config(const ExperimentConfig& cfg, predictor::LossKind loss, std::uint64_t seed) {
  predictor::TrainConfig tc;
  tc.loss = loss;
  tc.beta = cfg.beta;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.patience = cfg.patience;
  tc.lr_grid = cfg.lr_grid;
  tc.seed = seed;
  return tc;
}

ResultRecord failed_record(const std::string& dataset, const std::string& method, std::uint64_t seed,
                           const std::string& hash, const std::string& what) {
  ResultRecord r;
  r.dataset = dataset;
  r.method = method;
  r.seed = seed;
  r.ok = false;
  r.error = what;
  r.config_hash = hash;
  return r;
}

std::string sample_file_name(const ResultRecord& r) {
  return r.dataset + "__" + r.method + "__" + std::to_string(r.seed) + ".tsv";
}

void write_file(const fs::path& path, const std::string& content, std::vector<std::string>& errors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (out) out << content;
  if (!out) errors.push_back(path.string() + ": " + std::strerror(errno));
}

std::string records_jsonl(const std::vector<ResultRecord>& records) {
  std::string s;
  for (const auto& r : records) s += to_json(r).dump() + "\n";
  return s;
}

std::string samples_tsv(const SampleUncertainty& s) {
  std::string out = "row\toutput\ty\tmean\taleatoric\tepistemic\n";
  const std::size_t k = s.y.cols();
  for (std::size_t i = 0; i < s.y.size(); ++i) {
    out += std::to_string(i / k) + "\t" + std::to_string(i % k) + "\t" + exact(s.y[i]) + "\t" + exact(s.mean[i]) +
           "\t" + exact(s.aleatoric[i]) + "\t" + exact(s.epistemic[i]) + "\n";
  }
  return out;
}

constexpr const char* kComponents[] = {"aleatoric", "epistemic", "total"};
constexpr const char* kScoreNames[] = {"nll", "crps", "ece", "picp", "mpiw", "winkler"};

double score_of(const metrics::ComponentScores& s, std::size_t i) {
  const double v[] = {s.nll, s.crps, s.ece, s.picp, s.mpiw, s.winkler};
  return v[i];
}

const std::optional<metrics::ComponentScores>& component(const ResultRecord& r, std::size_t c) {
  return c == 0 ? r.aleatoric : c == 1 ? r.epistemic : r.total;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw SetupError("config: expected a JSON object");
  ExperimentConfig c;
  bool has_seeds = false, has_repeats = false;
  for (const auto& [key, v] : j.items()) {
    const char* k = key.c_str();
    if (key == "datasets") read(v, k, c.datasets);
    else if (key == "methods") read(v, k, c.methods);
    else if (key == "repeats") { read(v, k, c.repeats); has_repeats = true; }
    else if (key == "seeds") { read(v, k, c.seeds); has_seeds = true; }
    else if (key == "flow_layers") read(v, k, c.flow_layers);
    else if (key == "mc_passes") read(v, k, c.mc_passes);
    else if (key == "flow_samples") read(v, k, c.flow_samples);
    else if (key == "dropout") read(v, k, c.dropout);
    else if (key == "lr_grid") read(v, k, c.lr_grid);
    else if (key == "alpha") read(v, k, c.alpha);
    else if (key == "ece_levels") read(v, k, c.ece_levels);
    else if (key == "inputs") read(v, k, c.inputs);
    else if (key == "flow_depths") read(v, k, c.flow_depths);
    else if (key == "test_fraction") read(v, k, c.test_fraction);
    else if (key == "hidden_units") read(v, k, c.hidden_units);
    else if (key == "epochs") read(v, k, c.epochs);
    else if (key == "batch_size") read(v, k, c.batch_size);
    else if (key == "patience") read(v, k, c.patience);
    else if (key == "flow_epochs") read(v, k, c.flow_epochs);
    else if (key == "flow_lr") read(v, k, c.flow_lr);
    else if (key == "flow_hidden") read(v, k, c.flow_hidden);
    else if (key == "beta") read(v, k, c.beta);
    else if (key == "ensemble_members") read(v, k, c.ensemble_members);
    else if (key == "estimator") read(v, k, c.estimator);
    else if (key == "finetune_flow") read(v, k, c.finetune_flow);
    else if (key == "manifest") read(v, k, c.manifest);
    else throw SetupError("config: unknown key '" + key + "'");
  }
  if (!has_seeds) {
    c.seeds.resize(c.repeats);
    for (std::size_t i = 0; i < c.repeats; ++i) c.seeds[i] = i;
  } else if (!has_repeats) {
    c.repeats = c.seeds.size();
  }
  if (c.repeats != c.seeds.size()) throw SetupError("config: repeats must equal the number of seeds");
  if (c.methods.empty()) throw SetupError("config: methods must be non-empty");
  for (const auto& m : c.methods) {
    if (!kMethods.count(m)) throw SetupError("config: unknown method '" + m + "'");
  }
  for (const auto& m : c.inputs) {
    try {
      hybrid::input_mode_from_string(m);
    } catch (const std::invalid_argument& e) {
      throw SetupError(std::string("config: ") + e.what());
    }
  }
  if (c.lr_grid.empty()) throw SetupError("config: lr_grid must be non-empty");
  if (c.dropout < 0.0 || c.dropout >= 1.0) throw SetupError("config: dropout must be in [0, 1)");
  if (c.beta < 0.0 || c.beta > 1.0) throw SetupError("config: beta must be in [0, 1]");
  if (c.alpha <= 0.0 || c.alpha >= 1.0) throw SetupError("config: alpha must be in (0, 1)");
  if (c.ece_levels < 2) throw SetupError("config: ece_levels must be at least 2");
  if (c.mc_passes < 2) throw SetupError("config: mc_passes must be at least 2");
  if (c.flow_samples < 2) throw SetupError("config: flow_samples must be at least 2");
  if (c.estimator != "mc_dropout" && c.estimator != "ensemble") {
    throw SetupError("config: estimator must be mc_dropout or ensemble");
  }
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw SetupError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw SetupError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

json to_json(const ExperimentConfig& c) {
  return {{"datasets", c.datasets},         {"methods", c.methods},
          {"repeats", c.repeats},           {"seeds", c.seeds},
          {"flow_layers", c.flow_layers},   {"mc_passes", c.mc_passes},
          {"flow_samples", c.flow_samples}, {"dropout", c.dropout},
          {"lr_grid", c.lr_grid},           {"alpha", c.alpha},
          {"ece_levels", c.ece_levels},     {"inputs", c.inputs},
          {"flow_depths", c.flow_depths},   {"test_fraction", c.test_fraction},
          {"hidden_units", c.hidden_units}, {"epochs", c.epochs},
          {"batch_size", c.batch_size},     {"patience", c.patience},
          {"flow_epochs", c.flow_epochs},   {"flow_lr", c.flow_lr},
          {"flow_hidden", c.flow_hidden},   {"beta", c.beta},
          {"ensemble_members", c.ensemble_members}, {"estimator", c.estimator},
          {"finetune_flow", c.finetune_flow}, {"manifest", c.manifest}};
}

std::string config_hash(const ExperimentConfig& cfg) { return sha256_hex(to_json(cfg).dump()); }

hybrid::HybridConfig hybrid_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  hybrid::HybridConfig h;
  h.flow_arch.layers = cfg.flow_layers;
  h.flow_arch.made_hidden = {cfg.flow_hidden};
  h.flow_arch.base_hidden = {cfg.flow_hidden};
  h.flow_train.epochs = cfg.flow_epochs;
  h.flow_train.batch_size = cfg.batch_size;
  h.flow_train.lr = cfg.flow_lr;
  h.flow_train.patience = cfg.patience;
  h.predictor_arch.hidden = {cfg.hidden_units};
  h.predictor_arch.dropout = cfg.dropout;
  h.predictor_train = train_config(cfg, predictor::LossKind::mse, 0);
  h.estimator = cfg.estimator == "ensemble" ? hybrid::EpistemicEstimator::ensemble : hybrid::EpistemicEstimator::mc_dropout;
  h.ensemble_members = cfg.ensemble_members;
  h.mc_passes = cfg.mc_passes;
  h.flow_samples = cfg.flow_samples;
  h.finetune_flow = cfg.finetune_flow;
  h.flow_seed = derive_seed(seed, "flow");
  h.predictor_seed = derive_seed(seed, "predictor");
  return h;
}

// ---------------------------------------------------------------------------
// Cells

std::size_t RunResult::failed() const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) { return !r.ok; }));
}

ResultRecord run_cell(const ExperimentConfig& cfg, const data::Dataset& ds, const std::string& method,
                      std::uint64_t seed, SampleUncertainty* samples, CellTiming* timing) {
  const std::string hash = config_hash(cfg);
  const auto t0 = Clock::now();
  double train_seconds = 0.0;
  ResultRecord rec;
  try {
    Prepared p = prepare(ds, cfg.test_fraction, seed);
    const Tensor& y_test = p.test_raw.y;
    Tensor mean_raw, al_raw, ep_raw;
    bool has_uq = true;
    json extra = json::object();

    predictor::PredictorArchitecture arch;
    arch.input_dim = p.train.x.cols();
    arch.output_dim = p.train.y.cols();
    arch.hidden = {cfg.hidden_units};
    arch.dropout = cfg.dropout;
    const std::uint64_t init_seed = derive_seed(seed, "init"), train_seed = derive_seed(seed, "train");
    const auto t_train = Clock::now();

    if (method == "mlp_no_uq") {
      auto r = predictor::train_predictor(predictor::build_predictor(arch, init_seed), p.train.x, p.train.y,
                                          train_config(cfg, predictor::LossKind::mse, train_seed));
      train_seconds = seconds_since(t_train);
      mean_raw = data::denormalize_targets(p.norm, predictor::predict(r.model, p.test.x).mean);
      extra["best_lr"] = r.best_lr;
      has_uq = false;
    } else if (method == "nll" || method == "bnll") {
      arch.head = predictor::HeadKind::heteroscedastic;
      const auto loss = method == "nll" ? predictor::LossKind::gaussian_nll : predictor::LossKind::beta_nll;
      auto r = predictor::train_predictor(predictor::build_predictor(arch, init_seed), p.train.x, p.train.y,
                                          train_config(cfg, loss, train_seed));
      train_seconds = seconds_since(t_train);
      auto pred = predictor::mc_dropout_predict(r.model, p.test.x, cfg.mc_passes, derive_seed(seed, "mc-dropout"));
      mean_raw = data::denormalize_targets(p.norm, pred.mean);
      al_raw = data::denormalize_variances(p.norm, pred.aleatoric_var);
      ep_raw = data::denormalize_variances(p.norm, pred.epistemic_var);
      extra["best_lr"] = r.best_lr;
      extra["total_decomposition"] = "mean_sigma2_plus_var_mu";
      if (method == "bnll") extra["beta"] = cfg.beta;
    } else if (method == "deep_ensemble") {
      arch.head = predictor::HeadKind::heteroscedastic;
      arch.dropout = 0.0;
      auto ens = predictor::train_ensemble(arch, p.train.x, p.train.y,
                                           train_config(cfg, predictor::LossKind::gaussian_nll, train_seed),
                                           cfg.ensemble_members);
      train_seconds = seconds_since(t_train);
      auto pred = predictor::ensemble_predict(ens, p.test.x);
      mean_raw = data::denormalize_targets(p.norm, pred.mean);
      al_raw = data::denormalize_variances(p.norm, pred.aleatoric_var);
      ep_raw = data::denormalize_variances(p.norm, pred.epistemic_var);
      extra["members"] = cfg.ensemble_members;
    } else if (method == "hybridflow") {
      auto model = hybrid::fit_hybrid(p.train, p.norm, hybrid_config(cfg, seed));
      train_seconds = seconds_since(t_train);
      auto rep = hybrid::predict_with_uncertainty(model, p.test, derive_seed(seed, "predict"));
      extra["flow_layers"] = cfg.flow_layers;
      extra["best_lr"] = model.predictor_lr;
      extra["flow_best_epoch"] = model.flow_history.best_epoch;
      extra["flow_hash"] = hybrid::flow_hash(model);
      mean_raw = rep.mean;
      al_raw = rep.aleatoric;
      ep_raw = rep.epistemic;
    } else {
      throw std::invalid_argument("unknown method '" + method + "'");
    }

    if (has_uq) {
      rec = evaluate_uncertainty(y_test, mean_raw, al_raw, ep_raw, cfg.alpha, cfg.ece_levels);
      if (samples) *samples = SampleUncertainty{y_test, mean_raw, al_raw, ep_raw};
    } else {
      rec = evaluate_point(y_test, mean_raw);
    }
    rec.extra = std::move(extra);
    rec.extra["train_rows"] = p.train.rows();
    rec.extra["test_rows"] = p.test.rows();
    rec.dataset = ds.name;
    rec.method = method;
    rec.seed = seed;
    rec.config_hash = hash;
  } catch (const std::exception& e) {
    rec = failed_record(ds.name, method, seed, hash, e.what());
  }
  if (timing) *timing = CellTiming{ds.name, method, seed, train_seconds, seconds_since(t0)};
  return rec;
}

RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  const std::vector<data::Dataset> sets = load_all(cfg, opts);
  struct Cell {
    std::size_t ds;
    std::string method;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (std::size_t d = 0; d < sets.size(); ++d) {
    for (const auto& m : cfg.methods) {
      for (auto s : cfg.seeds) cells.push_back({d, m, s});
    }
  }
  RunResult out;
  out.records.resize(cells.size());
  out.samples.resize(cells.size());
  out.timings.resize(cells.size());
  parallel_for(cells.size(), opts.workers, [&](std::size_t i) {
    const Cell& c = cells[i];
    SampleUncertainty s;
    out.records[i] = run_cell(cfg, sets[c.ds], c.method, c.seed, &s, &out.timings[i]);
    if (out.records[i].ok && out.records[i].total) out.samples[i] = std::move(s);
  });
  return out;
}

RunResult run_input_ablation(const ExperimentConfig& cfg, const RunOptions& opts) {
  const std::vector<data::Dataset> sets = load_all(cfg, opts);
  const std::string hash = config_hash(cfg);
  std::vector<hybrid::InputMode> modes;
  for (const auto& m : cfg.inputs) modes.push_back(hybrid::input_mode_from_string(m));
  if (modes.empty()) throw SetupError("config: inputs must be non-empty for the input ablation");
  std::vector<std::pair<std::size_t, std::uint64_t>> cells;
  for (std::size_t d = 0; d < sets.size(); ++d) {
    for (auto s : cfg.seeds) cells.emplace_back(d, s);
  }
  const std::size_t k = modes.size();
  RunResult out;
  out.records.resize(cells.size() * k);
  out.samples.resize(cells.size() * k);
  out.timings.resize(cells.size() * k);
  parallel_for(cells.size(), opts.workers, [&](std::size_t i) {
    const auto& [d, seed] = cells[i];
    const data::Dataset& ds = sets[d];
    const auto t0 = Clock::now();
    std::optional<Prepared> p;
    std::optional<flow::FlowTrainResult> fr;
    std::string setup_error;
    const hybrid::HybridConfig hc = hybrid_config(cfg, seed);
    try {
      p = prepare(ds, cfg.test_fraction, seed);
      fr = hybrid::fit_flow_stage(p->train, hc);
    } catch (const std::exception& e) {
      setup_error = e.what();
    }
    const double flow_seconds = seconds_since(t0);
    for (std::size_t m = 0; m < k; ++m) {
      const std::string method = "hybridflow_" + hybrid::to_string(modes[m]);
      const auto tm = Clock::now();
      ResultRecord r;
      if (!setup_error.empty()) {
        r = failed_record(ds.name, method, seed, hash, setup_error);
      } else {
        try {
          r = hybrid::input_ablation(p->train, p->test, p->norm, fr->model, modes[m], hc, cfg.alpha, cfg.ece_levels);
          r.dataset = ds.name;
          r.seed = seed;
          r.config_hash = hash;
          r.extra["flow_layers"] = cfg.flow_layers;
        } catch (const std::exception& e) {
          r = failed_record(ds.name, method, seed, hash, e.what());
        }
      }
      const double secs = seconds_since(tm);
      out.records[i * k + m] = std::move(r);
      out.timings[i * k + m] = CellTiming{ds.name, method, seed, flow_seconds + secs, flow_seconds + secs};
    }
  });
  return out;
}

RunResult run_depth_ablation(const ExperimentConfig& cfg, const std::vector<std::size_t>& layers,
                             const RunOptions& opts) {
  if (layers.empty()) throw SetupError("depth ablation: layer list is empty");
  const std::vector<data::Dataset> sets = load_all(cfg, opts);
  struct Cell {
    std::size_t ds;
    std::size_t layers;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (std::size_t d = 0; d < sets.size(); ++d) {
    for (auto K : layers) {
      for (auto s : cfg.seeds) cells.push_back({d, K, s});
    }
  }
  RunResult out;
  out.records.resize(cells.size());
  out.samples.resize(cells.size());
  out.timings.resize(cells.size());
  parallel_for(cells.size(), opts.workers, [&](std::size_t i) {
    const Cell& c = cells[i];
    ExperimentConfig k = cfg;
    k.flow_layers = c.layers;
    ResultRecord r = run_cell(k, sets[c.ds], "hybridflow", c.seed, nullptr, &out.timings[i]);
    r.method = "hybridflow_k" + std::to_string(c.layers);
    r.config_hash = config_hash(cfg);
    r.extra["flow_layers"] = c.layers;
    out.timings[i].method = r.method;
    out.records[i] = std::move(r);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

Stat summarize(std::vector<double> values) {
  Stat s;
  s.n = values.size();
  if (values.empty()) {
    s.mean = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  // Sorted so the result does not depend on input order.
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

std::vector<AggregateRow> aggregate(const std::vector<ResultRecord>& records) {
  std::map<std::pair<std::string, std::string>, std::vector<const ResultRecord*>> groups;
  for (const auto& r : records) groups[{r.dataset, r.method}].push_back(&r);
  std::vector<AggregateRow> rows;
  for (const auto& [key, recs] : groups) {
    AggregateRow row;
    row.dataset = key.first;
    row.method = key.second;
    std::map<std::string, std::vector<double>> values;
    for (const ResultRecord* r : recs) {
      if (!r->ok) {
        ++row.failed;
        continue;
      }
      ++row.ok;
      values["rmse"].push_back(r->rmse);
      for (std::size_t c = 0; c < 3; ++c) {
        const auto& comp = component(*r, c);
        if (!comp) continue;
        for (std::size_t m = 0; m < 6; ++m) {
          values[std::string(kComponents[c]) + "." + kScoreNames[m]].push_back(score_of(*comp, m));
        }
      }
    }
    for (auto& [name, v] : values) row.metrics[name] = summarize(std::move(v));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<DepthRow> depth_table(const RunResult& result) {
  std::map<std::size_t, std::pair<std::vector<double>, std::vector<double>>> by_k;
  for (std::size_t i = 0; i < result.records.size(); ++i) {
    const auto& r = result.records[i];
    if (!r.ok || !r.extra.contains("flow_layers")) continue;
    auto& [rmse, secs] = by_k[r.extra.at("flow_layers").get<std::size_t>()];
    rmse.push_back(r.rmse);
    if (i < result.timings.size()) secs.push_back(result.timings[i].train_seconds);
  }
  std::vector<DepthRow> rows;
  for (auto& [k, v] : by_k) rows.push_back({k, summarize(v.first), summarize(v.second)});
  return rows;
}

std::vector<CorrelationRow> disentanglement_report(const std::vector<ResultRecord>& records,
                                                   const std::vector<std::optional<SampleUncertainty>>& samples) {
  struct Acc {
    std::vector<double> rho, r;
    std::size_t cells = 0;
    std::string diagnostic;
  };
  std::map<std::pair<std::string, std::string>, Acc> groups;
  for (std::size_t i = 0; i < records.size() && i < samples.size(); ++i) {
    if (!records[i].ok || !samples[i]) continue;
    Acc& a = groups[{records[i].dataset, records[i].method}];
    ++a.cells;
    const auto& s = *samples[i];
    auto rho = metrics::correlation(s.aleatoric.values(), s.epistemic.values(), metrics::CorrelationKind::spearman);
    auto r = metrics::correlation(s.aleatoric.values(), s.epistemic.values(), metrics::CorrelationKind::pearson);
    if (rho.defined && r.defined) {
      a.rho.push_back(rho.value);
      a.r.push_back(r.value);
    } else if (a.diagnostic.empty()) {
      a.diagnostic = "seed " + std::to_string(records[i].seed) + ": " + (rho.defined ? r.diagnostic : rho.diagnostic);
    }
  }
  std::vector<CorrelationRow> rows;
  for (auto& [key, a] : groups) {
    CorrelationRow row;
    row.dataset = key.first;
    row.method = key.second;
    row.cells = a.cells;
    row.flagged = a.rho.size() != a.cells;
    row.diagnostic = a.diagnostic;
    row.spearman = summarize(a.rho).mean;
    row.pearson = summarize(a.r).mean;
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Tables

std::string aggregate_tsv(const std::vector<AggregateRow>& rows) {
  // Datasets down, methods across, RMSE mean ± std per cell.
  std::vector<std::string> methods;
  std::map<std::string, std::map<std::string, const AggregateRow*>> grid;
  for (const auto& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    grid[r.dataset][r.method] = &r;
  }
  std::sort(methods.begin(), methods.end());
  std::string out = "dataset";
  for (const auto& m : methods) out += "\t" + m;
  out += "\n";
  for (const auto& [ds, cells] : grid) {
    out += ds;
    for (const auto& m : methods) {
      auto it = cells.find(m);
      out += "\t";
      if (it == cells.end()) {
        out += "-";
        continue;
      }
      auto st = it->second->metrics.find("rmse");
      out += st == it->second->metrics.end() ? "NA" : mean_pm_std(st->second);
      if (it->second->failed) out += " (" + std::to_string(it->second->failed) + " failed)";
    }
    out += "\n";
  }
  return out;
}

std::string metrics_tsv(const std::vector<AggregateRow>& rows) {
  std::string out = "dataset\tmethod\tcomponent\tok\tfailed";
  for (auto* m : kScoreNames) out += std::string("\t") + m;
  out += "\n";
  for (const auto& r : rows) {
    for (auto* c : kComponents) {
      std::string line = r.dataset + "\t" + r.method + "\t" + c + "\t" + std::to_string(r.ok) + "\t" +
                         std::to_string(r.failed);
      bool any = false;
      for (auto* m : kScoreNames) {
        auto it = r.metrics.find(std::string(c) + "." + m);
        line += "\t";
        if (it == r.metrics.end()) {
          line += "-";
        } else {
          line += mean_pm_std(it->second);
          any = true;
        }
      }
      if (any) out += line + "\n";
    }
  }
  return out;
}

std::string correlation_tsv(const std::vector<CorrelationRow>& rows) {
  std::string out = "dataset\tmethod\tcells\tspearman\tpearson\tflagged\tdiagnostic\n";
  for (const auto& r : rows) {
    out += r.dataset + "\t" + r.method + "\t" + std::to_string(r.cells) + "\t" + fmt(r.spearman) + "\t" +
           fmt(r.pearson) + "\t" + (r.flagged ? "yes" : "no") + "\t" + r.diagnostic + "\n";
  }
  return out;
}

std::string depth_tsv(const std::vector<DepthRow>& rows) {
  std::string out = "layers\trmse\ttrain_seconds\n";
  for (const auto& r : rows) {
    out += std::to_string(r.layers) + "\t" + mean_pm_std(r.rmse) + "\t" + mean_pm_std(r.train_seconds) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files

void write_tables(const std::vector<ResultRecord>& records,
                  const std::vector<std::optional<SampleUncertainty>>& samples, const fs::path& out_dir) {
  std::vector<std::string> errors;
  const auto rows = aggregate(records);
  write_file(out_dir / "aggregate.tsv", aggregate_tsv(rows), errors);
  write_file(out_dir / "metrics.tsv", metrics_tsv(rows), errors);
  write_file(out_dir / "correlation.tsv", correlation_tsv(disentanglement_report(records, samples)), errors);
  if (!errors.empty()) {
    std::string msg = "failed to write:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw std::runtime_error(msg);
  }
}

void emit_report(const RunResult& result, const ExperimentConfig& cfg, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir / "samples", ec);
  if (ec) throw std::runtime_error(out_dir.string() + ": " + ec.message());
  std::vector<std::string> errors;
  write_file(out_dir / "records.jsonl", records_jsonl(result.records), errors);

  std::string timings;
  for (const auto& t : result.timings) {
    timings += json{{"dataset", t.dataset}, {"method", t.method}, {"seed", t.seed},
                    {"train_seconds", t.train_seconds}, {"total_seconds", t.total_seconds}}
                   .dump() +
               "\n";
  }
  write_file(out_dir / "timings.jsonl", timings, errors);

  json files = json::array({"records.jsonl", "timings.jsonl", "aggregate.tsv", "metrics.tsv", "correlation.tsv"});
  for (std::size_t i = 0; i < result.records.size() && i < result.samples.size(); ++i) {
    if (!result.samples[i]) continue;
    const std::string name = sample_file_name(result.records[i]);
    write_file(out_dir / "samples" / name, samples_tsv(*result.samples[i]), errors);
    files.push_back("samples/" + name);
  }
  const auto depth = depth_table(result);
  bool depth_run = std::any_of(result.records.begin(), result.records.end(),
                               [](const auto& r) { return r.method.rfind("hybridflow_k", 0) == 0; });
  if (depth_run) {
    write_file(out_dir / "depth.tsv", depth_tsv(depth), errors);
    files.push_back("depth.tsv");
  }

  json manifest{{"config_hash", config_hash(cfg)},
                {"config", to_json(cfg)},
                {"seeds", cfg.seeds},
                {"records", result.records.size()},
                {"failed", result.failed()},
                {"files", files},
                {"versions",
                 {{"hybridflow", kVersion},
                  {"compiler", __VERSION__},
                  {"boost", BOOST_LIB_VERSION},
                  {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                        std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                        std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}}};
  write_file(out_dir / "manifest.json", manifest.dump(2) + "\n", errors);
  try {
    write_tables(result.records, result.samples, out_dir);
  } catch (const std::runtime_error& e) {
    errors.push_back(e.what());
  }
  if (!errors.empty()) {
    std::string msg = "failed to write:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw std::runtime_error(msg);
  }
}

std::vector<ResultRecord> load_records(const fs::path& dir) {
  const fs::path path = fs::is_directory(dir) ? dir / "records.jsonl" : dir;
  std::ifstream in(path);
  if (!in) throw SetupError("cannot read " + path.string());
  std::vector<ResultRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw SetupError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::optional<SampleUncertainty>> load_samples(const fs::path& dir,
                                                           const std::vector<ResultRecord>& records) {
  std::vector<std::optional<SampleUncertainty>> out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::ifstream in(dir / "samples" / sample_file_name(records[i]));
    if (!in) continue;
    std::string line;
    std::getline(in, line);
    std::vector<double> y, mu, al, ep;
    std::size_t k = 1;
    while (std::getline(in, line)) {
      std::istringstream row(line);
      std::size_t r, o;
      double a, b, c, d;
      if (!(row >> r >> o >> a >> b >> c >> d)) break;
      k = std::max(k, o + 1);
      y.push_back(a);
      mu.push_back(b);
      al.push_back(c);
      ep.push_back(d);
    }
    const std::size_t n = y.size() / k;
    out[i] = SampleUncertainty{Tensor({n, k}, y), Tensor({n, k}, mu), Tensor({n, k}, al), Tensor({n, k}, ep)};
  }
  return out;
}

}  // namespace hybridflow::runner
