#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "hybridflow/adam.hpp"
#include "hybridflow/tape.hpp"

namespace hybridflow::grad {

// Parameters optimized together under one set of Adam options.
struct ParamGroup {
  std::vector<Tensor*> params;
  AdamOptions adam;
};

struct TrainerOptions {
  std::size_t max_epochs = 1000;
  std::size_t batch_size = 64;
  std::size_t patience = 20;
  std::uint64_t seed = 0;
};

struct TrainHistory {
  std::vector<double> train_loss;  // mean batch loss per epoch
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
};

// Scalar loss on the given training rows, recorded on `tape`.
using BatchLoss = std::function<Var(Tape& tape, std::span<const std::size_t> rows)>;
using ValidationLoss = std::function<double()>;

// Shuffled minibatch Adam with early stopping on the validation loss. The
// parameters of the best validation epoch are restored before returning.
// Throws TrainingDiverged on a non-finite training or validation loss.
TrainHistory train_minibatch(std::vector<ParamGroup>& groups, std::size_t n_rows, const BatchLoss& batch_loss,
                             const ValidationLoss& validation_loss, const TrainerOptions& options);

}  // namespace hybridflow::grad
