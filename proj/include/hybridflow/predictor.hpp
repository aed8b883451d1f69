#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hybridflow/layers.hpp"
#include "hybridflow/trainer.hpp"

namespace hybridflow::predictor {

using grad::Tape;
using grad::Tensor;
using grad::Var;

enum class HeadKind { point, heteroscedastic };
enum class LossKind { mse, gaussian_nll, beta_nll };

struct PredictorArchitecture {
  std::size_t input_dim = 1;
  std::size_t output_dim = 1;
  std::vector<std::size_t> hidden{50};
  HeadKind head = HeadKind::point;
  double dropout = 0.2;
};

// ReLU MLP. A heteroscedastic head emits [mean | log-variance].
struct PredictorModel {
  PredictorArchitecture arch;
  std::vector<grad::Linear> hidden;
  grad::Linear out;

  std::vector<Tensor*> parameters();
};

PredictorModel build_predictor(const PredictorArchitecture& arch, std::uint64_t seed);

// Uniform [0, 1) draws deciding dropout masks, one per hidden unit per row.
using UniformSource = std::function<double()>;

struct ForwardOutput {
  Var mean;
  Var logvar;  // only meaningful for heteroscedastic heads
};

// Inverted dropout after every hidden activation when `dropout` is non-null
// and the rate is positive.
ForwardOutput predictor_forward(const PredictorModel& model, Tape& tape, Var x, const UniformSource* dropout);

Var mse_loss(Var pred, Var y);
// mean of 0.5 exp(-logvar) (y - mu)^2 + 0.5 logvar.
Var gaussian_nll_loss(Var mu, Var logvar, Var y);
// Per-element Gaussian NLL weighted by the gradient-detached variance^beta.
Var beta_nll_loss(Var mu, Var logvar, Var y, double beta);

struct TrainConfig {
  LossKind loss = LossKind::mse;
  double beta = 0.5;
  std::size_t epochs = 1000;
  std::size_t batch_size = 64;
  std::size_t patience = 20;
  std::vector<double> lr_grid{1e-3, 1e-4, 1e-5};
  double validation_fraction = 0.1;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

struct TrainResult {
  PredictorModel model;
  double best_lr = 0.0;
  double best_val = 0.0;
  grad::TrainHistory history;            // of the selected learning rate
  std::vector<double> val_by_lr;         // best validation loss per grid entry
};

// Grid search over cfg.lr_grid with early stopping; the initial weights are
// shared by every grid entry. A grid entry that diverges is skipped; if all
// diverge, TrainingDiverged is rethrown.
TrainResult train_predictor(const PredictorModel& init, const Tensor& x, const Tensor& y, const TrainConfig& cfg);
TrainResult train_predictor(const PredictorModel& init, const Tensor& x, const Tensor& y, const Tensor& x_val,
                            const Tensor& y_val, const TrainConfig& cfg);

// Loss used for training/validation given the head and loss kinds, without dropout.
double evaluate_loss(const PredictorModel& model, const Tensor& x, const Tensor& y, const TrainConfig& cfg);

struct Prediction {
  Tensor mean;           // [n, k]
  Tensor epistemic_var;  // [n, k]
  Tensor aleatoric_var;  // [n, k]; zeros for point heads
};

// Deterministic forward pass with dropout off.
Prediction predict(const PredictorModel& model, const Tensor& x);
// Dropout active; mean and unbiased variance of the mean head over passes,
// aleatoric part is the average predicted variance.
Prediction mc_dropout_predict(const PredictorModel& model, const Tensor& x, std::size_t passes, std::uint64_t seed);
Prediction mc_dropout_predict(const PredictorModel& model, const Tensor& x, std::size_t passes,
                              const UniformSource& uniform);

struct EnsembleModel {
  std::vector<PredictorModel> members;
};

EnsembleModel train_ensemble(const PredictorArchitecture& arch, const Tensor& x, const Tensor& y,
                             const TrainConfig& cfg, std::size_t members = 5);
// Population variance of member means is the epistemic part.
Prediction ensemble_predict(const EnsembleModel& ens, const Tensor& x);

nlohmann::json to_json(const PredictorModel& model);
PredictorModel predictor_from_json(const nlohmann::json& j);

}  // namespace hybridflow::predictor
