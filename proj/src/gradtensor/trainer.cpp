#include "hybridflow/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "hybridflow/errors.hpp"
#include "hybridflow/random.hpp"

namespace hybridflow::grad {

namespace {

std::vector<Tensor> snapshot(const std::vector<ParamGroup>& groups) {
  std::vector<Tensor> out;
  for (const ParamGroup& g : groups)
    for (const Tensor* p : g.params) out.push_back(*p);
  return out;
}

void restore(std::vector<ParamGroup>& groups, const std::vector<Tensor>& saved) {
  std::size_t k = 0;
  for (ParamGroup& g : groups)
    for (Tensor* p : g.params) *p = saved[k++];
}

}  // namespace

TrainHistory train_minibatch(std::vector<ParamGroup>& groups, std::size_t n_rows, const BatchLoss& batch_loss,
                             const ValidationLoss& validation_loss, const TrainerOptions& options) {
  if (n_rows == 0) throw std::invalid_argument("train_minibatch: no training rows");
  if (options.batch_size == 0 || options.max_epochs == 0) {
    throw std::invalid_argument("train_minibatch: batch size and epochs must be positive");
  }
  std::vector<AdamState> states;
  for (const ParamGroup& g : groups) states.emplace_back(g.adam);

  Rng rng(options.seed);
  std::vector<std::size_t> order(n_rows);
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainHistory history;
  std::vector<Tensor> best = snapshot(groups);
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < options.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n_rows; start += options.batch_size, ++batch_index) {
      const std::size_t end = std::min(n_rows, start + options.batch_size);
      std::span<const std::size_t> rows(order.data() + start, end - start);
      Tape tape;
      Var loss = batch_loss(tape, rows);
      const double lv = loss.value().item();
      if (!std::isfinite(lv)) {
        throw TrainingDiverged("training loss became non-finite at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_index),
                               static_cast<int>(epoch), static_cast<int>(batch_index));
      }
      total += lv * static_cast<double>(rows.size());
      GradientMap grads = tape.backward(loss);
      for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        std::vector<Tensor> g;
        g.reserve(groups[gi].params.size());
        for (const Tensor* p : groups[gi].params) g.push_back(grads.of(*p));
        try {
          adam_step(groups[gi].params, g, states[gi]);
        } catch (const NumericError& e) {
          throw TrainingDiverged(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batch_index) + ")",
                                 static_cast<int>(epoch), static_cast<int>(batch_index));
        }
      }
    }
    history.train_loss.push_back(total / static_cast<double>(n_rows));

    const double val = validation_loss();
    if (!std::isfinite(val)) {
      throw TrainingDiverged("validation loss became non-finite at epoch " + std::to_string(epoch),
                             static_cast<int>(epoch), -1);
    }
    history.val_loss.push_back(val);
    if (val < history.best_val) {
      history.best_val = val;
      history.best_epoch = epoch;
      best = snapshot(groups);
      since_best = 0;
    } else if (++since_best >= options.patience) {
      break;
    }
  }
  restore(groups, best);
  return history;
}

}  // namespace hybridflow::grad
