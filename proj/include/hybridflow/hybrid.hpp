#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "hybridflow/data.hpp"
#include "hybridflow/flow.hpp"
#include "hybridflow/predictor.hpp"
#include "hybridflow/record.hpp"

namespace hybridflow::hybrid {

using grad::Tensor;

enum class EpistemicEstimator { mc_dropout, ensemble };
enum class InputMode { x_and_z, x_only, z_only };

std::string to_string(InputMode m);
InputMode input_mode_from_string(const std::string& s);

struct HybridConfig {
  // d and c are taken from the data at fit time.
  flow::FlowArchitecture flow_arch;
  flow::FlowTrainConfig flow_train;
  // input_dim and output_dim are taken from the data at fit time.
  predictor::PredictorArchitecture predictor_arch;
  predictor::TrainConfig predictor_train;
  EpistemicEstimator estimator = EpistemicEstimator::mc_dropout;
  std::size_t ensemble_members = 5;
  std::size_t mc_passes = 30;
  std::size_t flow_samples = 100;
  InputMode inputs = InputMode::x_and_z;
  bool finetune_flow = false;
  double finetune_lr = 1e-6;
  std::uint64_t flow_seed = 0;
  std::uint64_t predictor_seed = 0;
};

nlohmann::json to_json(const HybridConfig& cfg);

struct HybridModel {
  flow::FlowModel flow;
  std::vector<predictor::PredictorModel> predictors;  // one, or the ensemble members
  data::Normalizer normalizer;
  HybridConfig config;
  grad::TrainHistory flow_history;
  double predictor_lr = 0.0;
};

// Last-axis concatenation, x columns first then z.
Tensor feature_concat(const Tensor& x, const Tensor& z);
Tensor select_features(const Tensor& x, const Tensor& z, InputMode mode);

// Stage 1 only: conditional flow on normalized (x, y).
flow::FlowTrainResult fit_flow_stage(const data::Dataset& train, const HybridConfig& cfg);

// `train` must have been produced by normalize_apply with `norm`.
HybridModel fit_hybrid(const data::Dataset& train, const data::Normalizer& norm, const HybridConfig& cfg);
// Stage 2 only, reusing an already trained flow.
HybridModel fit_hybrid(const data::Dataset& train, const data::Normalizer& norm, const HybridConfig& cfg,
                       flow::FlowModel trained_flow, grad::TrainHistory flow_history = {});

// Per test row, in de-normalized target units; total = aleatoric + epistemic.
struct UncertaintyReport {
  Tensor mean;
  Tensor aleatoric;
  Tensor epistemic;
  Tensor total;
};

// `x` must carry the model's normalizer fingerprint. Only x is read.
UncertaintyReport predict_with_uncertainty(const HybridModel& model, const data::Dataset& x, std::uint64_t seed);

// Trains the predictor on the selected feature subset over a shared flow
// and scores it on `test` (normalized with the same normalizer).
ResultRecord input_ablation(const data::Dataset& train, const data::Dataset& test, const data::Normalizer& norm,
                            const flow::FlowModel& shared_flow, InputMode mode, const HybridConfig& cfg,
                            double alpha = 0.05, int ece_levels = 10);

std::string to_checkpoint(const HybridModel& model);
std::string flow_hash(const HybridModel& model);

}  // namespace hybridflow::hybrid
