#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hybridflow/layers.hpp"
#include "hybridflow/made.hpp"
#include "hybridflow/trainer.hpp"

namespace hybridflow::flow {

using grad::Tape;
using grad::Tensor;
using grad::Var;
using made::MadeNetwork;

struct FlowArchitecture {
  std::size_t d = 1;
  std::size_t c = 0;
  std::size_t layers = 5;
  std::vector<std::size_t> made_hidden{32};
  std::vector<std::size_t> base_hidden{32};
};

// Maps the context to the mean and log-std of the diagonal Gaussian base.
// With an empty hidden list it is a single affine map.
struct BaseConditioner {
  std::vector<grad::Linear> hidden;  // tanh
  grad::Linear out;                  // [2d, last width], zero at init
};

struct FlowModel {
  FlowArchitecture arch;
  std::vector<MadeNetwork> layers;
  // permutations[k] reorders columns after layer k in the density direction:
  // u'[:, j] = u[:, permutations[k][j]]. Size layers - 1.
  std::vector<std::vector<std::size_t>> permutations;
  BaseConditioner base;

  std::vector<Tensor*> parameters();
};

FlowModel build_flow(const FlowArchitecture& arch, std::uint64_t seed);

struct LayerInverse {
  Tensor z;
  Tensor logdet;  // [batch, 1]
};

LayerInverse layer_inverse(const MadeNetwork& layer, const Tensor& y, const Tensor& ctx);
Tensor layer_forward(const MadeNetwork& layer, const Tensor& z, const Tensor& ctx);

struct BaseParams {
  Var mean;     // [batch, d]
  Var log_std;  // [batch, d], clamped to [-7, 7]
};
BaseParams base_forward(const FlowModel& flow, Tape& tape, Var ctx);

// Per-row log p(y|x) as a [batch, 1] node.
Var log_prob(const FlowModel& flow, Tape& tape, Var y, Var ctx);
std::vector<double> log_prob(const FlowModel& flow, const Tensor& y, const Tensor& ctx);

// Standard-normal noise provider; tests substitute degenerate sources.
using NoiseSource = std::function<double()>;

// `n` samples for every context row: result is [rows * n, d], row-major by
// context row then sample index.
Tensor sample(const FlowModel& flow, const Tensor& ctx, std::size_t n, std::uint64_t seed);
Tensor sample(const FlowModel& flow, const Tensor& ctx, std::size_t n, const NoiseSource& noise);

Tensor latent_from_target(const FlowModel& flow, const Tensor& y, const Tensor& ctx);
Var latent_from_target(const FlowModel& flow, Tape& tape, Var y, Var ctx);
// Full generative pass y = f(z|x); inverse of latent_from_target.
Tensor target_from_latent(const FlowModel& flow, const Tensor& z, const Tensor& ctx);
// Mean of the conditional base distribution.
Tensor latent_expected(const FlowModel& flow, const Tensor& ctx);

// Unbiased sample variance per output dimension, [rows, d].
Tensor aleatoric_variance(const FlowModel& flow, const Tensor& ctx, std::size_t n_samples, std::uint64_t seed);
Tensor aleatoric_variance(const FlowModel& flow, const Tensor& ctx, std::size_t n_samples, const NoiseSource& noise);

struct FlowTrainConfig {
  std::size_t epochs = 1000;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::size_t patience = 20;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct FlowTrainResult {
  FlowModel model;
  grad::TrainHistory history;
};

// Minimizes the mean negative log-likelihood; a seeded validation_fraction
// of the rows is held out for early stopping.
FlowTrainResult train_flow(FlowModel flow, const Tensor& x, const Tensor& y, const FlowTrainConfig& cfg);
// Explicit validation set variant.
FlowTrainResult train_flow(FlowModel flow, const Tensor& x, const Tensor& y, const Tensor& x_val,
                           const Tensor& y_val, const FlowTrainConfig& cfg);

double mean_nll(const FlowModel& flow, const Tensor& y, const Tensor& ctx);

// Text container with parameters stored as exact bit patterns.
std::string to_checkpoint(const FlowModel& flow);
FlowModel from_checkpoint(const std::string& text);
void save_checkpoint(const FlowModel& flow, const std::filesystem::path& path);
FlowModel load_checkpoint(const std::filesystem::path& path);

}  // namespace hybridflow::flow
